use serde::Serialize;

use super::palette::Palette;
use super::BuiltinError;
use crate::canonical;
use crate::raster::{rgb_distance_sq, Image};

pub const DEFAULT_MIN_FRACTION: f64 = 0.002;
pub const DEFAULT_TOLERANCE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPresence {
    pub name: String,
    /// Fraction of pixels within tolerance of the class base color.
    pub fraction: f64,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresenceReport {
    pub pass: bool,
    pub classes: Vec<ClassPresence>,
}

impl PresenceReport {
    pub fn to_text(&self) -> String {
        canonical::compact_of(self)
    }

    pub fn fraction(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.fraction)
    }
}

/// Passes iff every expected class has at least `min_fraction` of the pixels
/// within `tolerance` of its base color.
pub fn presence_verify(
    image: &Image,
    expected: &[&str],
    min_fraction: f64,
    tolerance: f64,
    palette: &Palette,
) -> Result<PresenceReport, BuiltinError> {
    if expected.is_empty() {
        return Err(BuiltinError::InvalidSpec("no classes to verify".into()));
    }
    let styles = expected
        .iter()
        .map(|name| palette.by_name(name))
        .collect::<Result<Vec<_>, _>>()?;
    let limit = (tolerance * tolerance).floor() as u32;
    let mut hits = vec![0usize; styles.len()];
    for i in 0..image.len() {
        let c = image.at(i);
        for (k, style) in styles.iter().enumerate() {
            if rgb_distance_sq(c, style.color) <= limit {
                hits[k] += 1;
            }
        }
    }
    let total = image.len() as f64;
    let classes: Vec<ClassPresence> = styles
        .iter()
        .zip(hits)
        .map(|(style, n)| {
            let fraction = n as f64 / total;
            ClassPresence {
                name: style.name.clone(),
                fraction,
                present: fraction >= min_fraction,
            }
        })
        .collect();
    Ok(PresenceReport {
        pass: classes.iter().all(|c| c.present),
        classes,
    })
}
