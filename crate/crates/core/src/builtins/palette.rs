use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::BuiltinError;
use crate::raster::{rgb_distance, Rgb};

/// Minimum pairwise distance between class base colors.
pub const MIN_CLASS_SEPARATION: f64 = 120.0;

/// Minimum distance between the background center and any base color. Leaves
/// room for texture noise while keeping every background pixel at least 60
/// away from every base color.
pub const MIN_BACKGROUND_CLEARANCE: f64 = 95.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Circle,
    Rectangle,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStyle {
    pub id: u8,
    pub name: String,
    pub color: Rgb,
    pub shape: ShapeFamily,
}

/// Registered object classes with their colors and shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    classes: Vec<ClassStyle>,
    background: Rgb,
}

impl Palette {
    /// Validates separation and picks the gray background with the largest
    /// clearance from every base color.
    pub fn new(classes: Vec<ClassStyle>) -> Result<Self, BuiltinError> {
        if classes.is_empty() {
            return Err(BuiltinError::InvalidPalette("no classes".into()));
        }
        for (i, a) in classes.iter().enumerate() {
            if a.id == 0 {
                return Err(BuiltinError::InvalidPalette(format!("`{}` uses reserved id 0", a.name)));
            }
            for b in &classes[i + 1..] {
                if a.id == b.id || a.name == b.name {
                    return Err(BuiltinError::InvalidPalette(format!("`{}` and `{}` collide", a.name, b.name)));
                }
                let d = rgb_distance(a.color, b.color);
                if d < MIN_CLASS_SEPARATION {
                    return Err(BuiltinError::InvalidPalette(format!(
                        "`{}` and `{}` are only {d:.1} apart",
                        a.name, b.name
                    )));
                }
            }
        }
        let clearance = |g: u8| {
            classes
                .iter()
                .map(|c| rgb_distance([g, g, g], c.color))
                .fold(f64::INFINITY, f64::min)
        };
        let gray = (20..=235u8)
            .max_by(|a, b| clearance(*a).total_cmp(&clearance(*b)).then(b.cmp(a)))
            .expect("range is non-empty");
        if clearance(gray) < MIN_BACKGROUND_CLEARANCE {
            return Err(BuiltinError::InvalidPalette(format!(
                "no gray background keeps {MIN_BACKGROUND_CLEARANCE} away from all classes"
            )));
        }
        Ok(Self {
            classes,
            background: [gray; 3],
        })
    }

    /// The six shipped classes.
    pub fn standard() -> &'static Palette {
        static STANDARD: OnceLock<Palette> = OnceLock::new();
        STANDARD.get_or_init(|| {
            let class = |id, name: &str, color, shape| ClassStyle {
                id,
                name: name.to_string(),
                color,
                shape,
            };
            Palette::new(vec![
                class(1, "car", [220, 30, 30], ShapeFamily::Rectangle),
                class(2, "bicycle", [30, 200, 40], ShapeFamily::Circle),
                class(3, "motorbike", [40, 60, 230], ShapeFamily::Triangle),
                class(4, "truck", [230, 210, 30], ShapeFamily::Rectangle),
                class(5, "person", [230, 130, 220], ShapeFamily::Triangle),
                class(6, "bus", [30, 210, 220], ShapeFamily::Circle),
            ])
            .expect("standard palette is well separated")
        })
    }

    pub fn classes(&self) -> &[ClassStyle] {
        &self.classes
    }

    pub fn background(&self) -> Rgb {
        self.background
    }

    pub fn by_name(&self, name: &str) -> Result<&ClassStyle, BuiltinError> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| BuiltinError::UnknownClass(name.to_string()))
    }

    pub fn by_id(&self, id: u8) -> Option<&ClassStyle> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Class whose base color is nearest to `color` within `tolerance`.
    pub fn nearest(&self, color: Rgb, tolerance: f64) -> Option<&ClassStyle> {
        let limit = (tolerance * tolerance).floor() as u32;
        self.classes
            .iter()
            .map(|c| (crate::raster::rgb_distance_sq(color, c.color), c))
            .filter(|(d, _)| *d <= limit)
            .min_by_key(|(d, c)| (*d, c.id))
            .map(|(_, c)| c)
    }

    /// id → name for every class.
    pub fn class_table(&self) -> BTreeMap<u8, String> {
        self.classes.iter().map(|c| (c.id, c.name.clone())).collect()
    }
}
