//! Coarse color segmentation and point-prompted region-growing refinement.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use super::palette::Palette;
use super::BuiltinError;
use crate::raster::{rgb_distance_sq, Image, Mask};
use crate::seed;

/// Pixels farther than this from every base color are background.
pub const COARSE_TOLERANCE: f64 = 60.0;
pub const DEFAULT_FLIP_RATE: f64 = 0.15;

/// Labels each pixel with the nearest palette class within
/// [`COARSE_TOLERANCE`], then drops each labeled pixel to background with
/// probability `flip_rate`.
pub fn coarse_segment(image: &Image, flip_rate: f64, degrade_seed: u64, palette: &Palette) -> Mask {
    let mut rng = seed::rng(degrade_seed);
    let classes: Vec<u8> = (0..image.len())
        .map(|i| {
            let label = palette.nearest(image.at(i), COARSE_TOLERANCE).map_or(0, |c| c.id);
            // One draw per pixel keeps the flip pattern independent of labels.
            let flip = rng.random::<f64>() < flip_rate;
            if flip {
                0
            } else {
                label
            }
        })
        .collect();
    Mask::from_raw(image.width(), image.height(), classes, palette.class_table())
        .expect("palette table covers every label")
        .pruned()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinerParams {
    /// Seed points sampled per class.
    pub n_points: usize,
    /// Maximum RGB distance from the seed point's color.
    pub color_threshold: f64,
}

impl Default for RefinerParams {
    fn default() -> Self {
        Self {
            n_points: 10,
            color_threshold: 40.0,
        }
    }
}

/// 4-connected flood from `start`, admitting pixels within `threshold` of the
/// start pixel's color. Marks visited pixels in `region`.
pub fn grow_region(image: &Image, start: usize, threshold: f64, region: &mut [bool]) {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let origin = image.at(start);
    let limit = (threshold * threshold).floor() as u32;
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(p) = queue.pop_front() {
        region[p] = true;
        let (x, y) = (p % w, p / w);
        let neighbors = [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ];
        for q in neighbors.into_iter().flatten() {
            if !seen[q] && rgb_distance_sq(image.at(q), origin) <= limit {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
}

/// For each class in `coarse`, samples `min(n_points, available)` distinct
/// foreground pixels and unions the regions grown from them in `image`.
/// Where classes overlap the smaller class id wins.
pub fn refine_mask(image: &Image, coarse: &Mask, params: RefinerParams, seed: u64) -> Result<Mask, BuiltinError> {
    if !coarse.same_dims(image.width(), image.height()) {
        return Err(BuiltinError::DimensionMismatch {
            expected: (image.width(), image.height()),
            actual: (coarse.width(), coarse.height()),
        });
    }
    let mut rng = seed::rng(seed);
    let mut out = vec![0u8; coarse.len()];
    for class in coarse.present_ids() {
        let pixels: Vec<usize> = (0..coarse.len()).filter(|&i| coarse.raw()[i] == class).collect();
        let k = params.n_points.min(pixels.len());
        let mut region = vec![false; coarse.len()];
        for pick in index::sample(&mut rng, pixels.len(), k) {
            grow_region(image, pixels[pick], params.color_threshold, &mut region);
        }
        for (o, r) in out.iter_mut().zip(&region) {
            if *r && *o == 0 {
                *o = class;
            }
        }
    }
    Ok(Mask::from_raw(coarse.width(), coarse.height(), out, coarse.class_table().clone())?.pruned())
}
