//! Structured scene prompts and the procedural scene generator.
//!
//! A scene is a textured gray background with non-overlapping solid shapes,
//! one shape family and base color per class. The ground-truth mask labels
//! exactly the pixels covered by each class's shapes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::palette::{Palette, ShapeFamily};
use super::BuiltinError;
use crate::canonical;
use crate::raster::{Image, Mask, Rgb, MAX_DIMENSION};
use crate::seed;

/// Placement attempts at one size before shrinking.
pub const PLACEMENT_RETRIES: usize = 64;
/// Every class covers at least this fraction of the canvas.
pub const MIN_CLASS_FRACTION: f64 = 0.005;
/// Per-channel color jitter of one shape instance.
pub const INSTANCE_JITTER: i32 = 16;
/// Per-channel pixel noise inside shapes.
pub const SHAPE_NOISE: i32 = 4;
/// Per-channel amplitude of the background's block tint and pixel noise.
pub const BACKGROUND_NOISE: i32 = 6;
/// Empty pixels kept between shape bounding boxes.
pub const SHAPE_GAP: i64 = 2;
const BACKGROUND_BLOCK: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRequest {
    pub name: String,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

/// What a scene should contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub classes: Vec<ClassRequest>,
    pub style: String,
    pub canvas: Canvas,
}

impl SceneSpec {
    /// Compact canonical text; the prompt form passed between modules.
    pub fn to_text(&self) -> String {
        canonical::compact_of(self)
    }

    pub fn parse(text: &str, palette: &Palette) -> Result<Self, BuiltinError> {
        let spec: SceneSpec =
            serde_json::from_str(text).map_err(|e| BuiltinError::InvalidSpec(format!("scene prompt: {e}")))?;
        spec.check(palette)?;
        Ok(spec)
    }

    pub fn check(&self, palette: &Palette) -> Result<(), BuiltinError> {
        if self.classes.is_empty() {
            return Err(BuiltinError::InvalidSpec("a scene needs at least one class".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            palette.by_name(&c.name)?;
            if c.count == 0 {
                return Err(BuiltinError::InvalidSpec(format!("`{}` has count 0", c.name)));
            }
            if self.classes[..i].iter().any(|p| p.name == c.name) {
                return Err(BuiltinError::InvalidSpec(format!("`{}` listed twice", c.name)));
            }
        }
        let dims = 1..=MAX_DIMENSION;
        if !dims.contains(&self.canvas.width) || !dims.contains(&self.canvas.height) {
            return Err(BuiltinError::InvalidSpec(format!(
                "canvas {}x{} outside 1..={MAX_DIMENSION}",
                self.canvas.width, self.canvas.height
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Builds a scene prompt, keeping the classes in the given order.
pub fn prompt_build(
    classes: &[(&str, u32)],
    style: &str,
    canvas: (u32, u32),
    palette: &Palette,
) -> Result<SceneSpec, BuiltinError> {
    let spec = SceneSpec {
        classes: classes
            .iter()
            .map(|(name, count)| ClassRequest {
                name: name.to_string(),
                count: *count,
            })
            .collect(),
        style: style.to_string(),
        canvas: Canvas {
            width: canvas.0,
            height: canvas.1,
        },
    };
    spec.check(palette)?;
    Ok(spec)
}

/// Parses `car:2,bicycle:1` (a bare name means count 1).
pub fn parse_class_list(text: &str) -> Result<Vec<(String, u32)>, BuiltinError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match item.split_once(':') {
            None => Ok((item.to_string(), 1)),
            Some((name, count)) => count
                .trim()
                .parse::<u32>()
                .map(|n| (name.trim().to_string(), n))
                .map_err(|_| BuiltinError::InvalidSpec(format!("bad count in `{item}`"))),
        })
        .collect()
}

/// A geometric shape in pixel coordinates. Containment is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Circle { cx: i64, cy: i64, r: i64 },
    Rectangle { cx: i64, cy: i64, half_w: i64, half_h: i64 },
    /// Isosceles, apex up: apex `(cx, cy - r)`, base corners `(cx ± r, cy + r)`.
    Triangle { cx: i64, cy: i64, r: i64 },
}

impl Shape {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => (x - cx).pow(2) + (y - cy).pow(2) <= r * r,
            Shape::Rectangle { cx, cy, half_w, half_h } => (x - cx).abs() <= half_w && (y - cy).abs() <= half_h,
            Shape::Triangle { cx, cy, r } => y <= cy + r && 2 * (x - cx).abs() <= y - (cy - r),
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (i64, i64, i64, i64) {
        match *self {
            Shape::Circle { cx, cy, r } | Shape::Triangle { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rectangle { cx, cy, half_w, half_h } => (cx - half_w, cy - half_h, cx + half_w, cy + half_h),
        }
    }

    pub fn pixel_count(&self) -> usize {
        let (x0, y0, x1, y1) = self.bbox();
        (y0..=y1)
            .map(|y| (x0..=x1).filter(|&x| self.contains(x, y)).count())
            .sum()
    }

    fn build(family: ShapeFamily, cx: i64, cy: i64, r: i64, aspect_pct: i64) -> Shape {
        match family {
            ShapeFamily::Circle => Shape::Circle { cx, cy, r },
            ShapeFamily::Triangle => Shape::Triangle { cx, cy, r },
            ShapeFamily::Rectangle => Shape::Rectangle {
                cx,
                cy,
                half_w: r,
                half_h: (r * aspect_pct / 100).max(1),
            },
        }
    }
}

/// One placed instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub class_id: u8,
    pub class_name: String,
    pub shape: Shape,
    pub color: Rgb,
}

const MIN_ASPECT_PCT: i64 = 60;

/// Smallest size parameter whose shape covers at least `min_pixels`.
fn min_size(family: ShapeFamily, min_pixels: usize) -> i64 {
    (1..)
        .find(|&r| Shape::build(family, 0, 0, r, MIN_ASPECT_PCT).pixel_count() >= min_pixels)
        .expect("shapes grow without bound")
}

fn disjoint(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    a.2 + SHAPE_GAP < b.0 || b.2 + SHAPE_GAP < a.0 || a.3 + SHAPE_GAP < b.1 || b.3 + SHAPE_GAP < a.1
}

fn jitter(rng: &mut impl Rng, c: Rgb, amount: i32) -> Rgb {
    c.map(|v| (v as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Places every requested instance, shrinking after repeated collisions.
/// Classes listed in `omit` are left out (used for failure injection).
pub fn scene_layout(
    spec: &SceneSpec,
    seed: u64,
    palette: &Palette,
    omit: Option<&str>,
) -> Result<Vec<PlacedShape>, BuiltinError> {
    spec.check(palette)?;
    let (w, h) = (spec.canvas.width as i64, spec.canvas.height as i64);
    let min_pixels = ((MIN_CLASS_FRACTION * (w * h) as f64).ceil() as usize).max(1);
    let mut rng = seed::rng(seed::substream(seed, 1));
    let base = w.min(h);
    let mut placed: Vec<PlacedShape> = Vec::new();
    for request in spec.classes.iter().filter(|c| Some(c.name.as_str()) != omit) {
        let style = palette.by_name(&request.name)?;
        let r_min = min_size(style.shape, min_pixels);
        let r_hi = (base / 7).max(r_min);
        let r_lo = (base / 12).clamp(r_min, r_hi);
        for _ in 0..request.count {
            let mut r = rng.random_range(r_lo..=r_hi);
            let aspect = rng.random_range(MIN_ASPECT_PCT..=100);
            let color = jitter(&mut rng, style.color, INSTANCE_JITTER);
            let shape = loop {
                let mut found = None;
                for _ in 0..PLACEMENT_RETRIES {
                    let probe = Shape::build(style.shape, 0, 0, r, aspect);
                    let (x0, y0, x1, y1) = probe.bbox();
                    if x1 - x0 >= w || y1 - y0 >= h {
                        break;
                    }
                    let cx = rng.random_range(-x0..=w - 1 - x1);
                    let cy = rng.random_range(-y0..=h - 1 - y1);
                    let shape = Shape::build(style.shape, cx, cy, r, aspect);
                    if placed.iter().all(|p| disjoint(p.shape.bbox(), shape.bbox())) {
                        found = Some(shape);
                        break;
                    }
                }
                match found {
                    Some(shape) => break shape,
                    None if r > r_min => r = (r * 4 / 5).max(r_min),
                    None => {
                        return Err(BuiltinError::PlacementOverflow {
                            class: request.name.clone(),
                            width: spec.canvas.width,
                            height: spec.canvas.height,
                        })
                    }
                }
            };
            placed.push(PlacedShape {
                class_id: style.id,
                class_name: style.name.clone(),
                shape,
                color,
            });
        }
    }
    Ok(placed)
}

/// Renders a layout onto the textured background.
pub fn render_scene(
    spec: &SceneSpec,
    layout: &[PlacedShape],
    seed: u64,
    palette: &Palette,
) -> Result<(Image, Mask), BuiltinError> {
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    let mut rng = seed::rng(seed::substream(seed, 2));
    let tint = (seed::fnv1a64(spec.style.as_bytes()) % (2 * BACKGROUND_NOISE as u64 + 1)) as i32 - BACKGROUND_NOISE;
    let bg = palette.background().map(|v| (v as i32 + tint).clamp(0, 255) as u8);
    let blocks_x = w.div_ceil(BACKGROUND_BLOCK);
    let blocks: Vec<Rgb> = (0..blocks_x * h.div_ceil(BACKGROUND_BLOCK))
        .map(|_| jitter(&mut rng, bg, BACKGROUND_NOISE))
        .collect();
    let mut image = Image::new(w, h, bg)?;
    for y in 0..h {
        for x in 0..w {
            let block = blocks[((y / BACKGROUND_BLOCK) * blocks_x + x / BACKGROUND_BLOCK) as usize];
            image.set(x, y, jitter(&mut rng, block, BACKGROUND_NOISE));
        }
    }
    let mut table = BTreeMap::new();
    for c in &spec.classes {
        let style = palette.by_name(&c.name)?;
        table.insert(style.id, style.name.clone());
    }
    let mut classes = vec![0u8; (w * h) as usize];
    for inst in layout {
        let (x0, y0, x1, y1) = inst.shape.bbox();
        for y in y0.max(0)..=y1.min(h as i64 - 1) {
            for x in x0.max(0)..=x1.min(w as i64 - 1) {
                if inst.shape.contains(x, y) {
                    image.set(x as u32, y as u32, jitter(&mut rng, inst.color, SHAPE_NOISE));
                    classes[(y * w as i64 + x) as usize] = inst.class_id;
                }
            }
        }
    }
    let mask = Mask::from_raw(w, h, classes, table)?;
    Ok((image, mask))
}

/// Deterministic image and ground-truth mask for `(spec, seed)`.
pub fn scene_synthesize(spec: &SceneSpec, seed: u64, palette: &Palette) -> Result<(Image, Mask), BuiltinError> {
    let layout = scene_layout(spec, seed, palette, None)?;
    render_scene(spec, &layout, seed, palette)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rgb_distance;

    fn palette() -> &'static Palette {
        Palette::standard()
    }

    #[test]
    fn prompt_keeps_input_order() {
        let spec = prompt_build(&[("car", 2), ("bicycle", 1)], "plain", (128, 128), palette()).unwrap();
        let text = spec.to_text();
        let car = text.find(r#"{"count":2,"name":"car"}"#).unwrap();
        let bike = text.find(r#"{"count":1,"name":"bicycle"}"#).unwrap();
        assert!(car < bike);
        assert_eq!(SceneSpec::parse(&text, palette()).unwrap(), spec);
    }

    #[test]
    fn minimal_prompt_round_trips() {
        let spec = prompt_build(&[("truck", 1)], "", (16, 16), palette()).unwrap();
        assert_eq!(SceneSpec::parse(&spec.to_text(), palette()).unwrap(), spec);
    }

    #[test]
    fn unknown_class_rejected() {
        let err = prompt_build(&[("boat", 1)], "plain", (64, 64), palette()).unwrap_err();
        assert_eq!(err, BuiltinError::UnknownClass("boat".into()));
    }

    #[test]
    fn class_list_parsing() {
        assert_eq!(
            parse_class_list("car:2, bicycle").unwrap(),
            vec![("car".to_string(), 2), ("bicycle".to_string(), 1)]
        );
        assert!(parse_class_list("car:x").is_err());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = prompt_build(&[("car", 2), ("motorbike", 1)], "plain", (96, 96), palette()).unwrap();
        let a = scene_synthesize(&spec, 5, palette()).unwrap();
        let b = scene_synthesize(&spec, 5, palette()).unwrap();
        let c = scene_synthesize(&spec, 6, palette()).unwrap();
        assert_eq!(a.0.to_png(), b.0.to_png());
        assert_eq!(a.1.to_png(), b.1.to_png());
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn single_circle_class_has_two_ids() {
        let spec = prompt_build(&[("bicycle", 1)], "plain", (64, 64), palette()).unwrap();
        let (_, mask) = scene_synthesize(&spec, 1, palette()).unwrap();
        let mut ids: Vec<u8> = mask.raw().to_vec();
        ids.sort();
        ids.dedup();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn background_keeps_distance_from_base_colors() {
        let spec = prompt_build(&[("car", 1), ("bus", 1)], "noisy dusk", (128, 96), palette()).unwrap();
        for seed in 0..5 {
            let (image, mask) = scene_synthesize(&spec, seed, palette()).unwrap();
            for i in 0..image.len() {
                if mask.raw()[i] == 0 {
                    for c in palette().classes() {
                        assert!(rgb_distance(image.at(i), c.color) >= 60.0);
                    }
                }
            }
        }
    }

    #[test]
    fn canvas_too_small_overflows() {
        let spec = prompt_build(&[("car", 40)], "plain", (16, 16), palette()).unwrap();
        assert!(matches!(
            scene_synthesize(&spec, 0, palette()),
            Err(BuiltinError::PlacementOverflow { .. })
        ));
    }

    #[test]
    fn shapes_never_touch() {
        let spec = prompt_build(&[("car", 3), ("truck", 3), ("person", 2)], "plain", (128, 128), palette()).unwrap();
        let layout = scene_layout(&spec, 9, palette(), None).unwrap();
        for (i, a) in layout.iter().enumerate() {
            for b in &layout[i + 1..] {
                assert!(disjoint(a.shape.bbox(), b.shape.bbox()));
            }
        }
    }
}
