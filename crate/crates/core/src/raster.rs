//! RGB images, class-index masks and their PNG encodings.
//!
//! PNG bytes are the interchange form for both types: artifacts served by the
//! server, files in a dataset and the digests recorded by the engine are all
//! computed over the same encoder output. Masks are 8-bit grayscale where the
//! pixel value is the class id; their class table travels in an `iTXt` chunk
//! keyed `class_table` (compact canonical text, class id → name).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use serde_json::json;

use crate::canonical;

/// Largest accepted width or height.
pub const MAX_DIMENSION: u32 = 4096;

const CLASS_TABLE_KEY: &str = "class_table";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RasterError {
    #[error("dimensions {0}x{1} outside 1..={MAX_DIMENSION}")]
    BadDimensions(u32, u32),
    #[error("buffer holds {actual} bytes, expected {expected}")]
    BadBuffer { expected: usize, actual: usize },
    #[error("class id {0} has no class table entry")]
    MissingClass(u8),
    #[error("png: {0}")]
    Png(String),
}

fn check_dims(width: u32, height: u32) -> Result<(), RasterError> {
    if (1..=MAX_DIMENSION).contains(&width) && (1..=MAX_DIMENSION).contains(&height) {
        Ok(())
    } else {
        Err(RasterError::BadDimensions(width, height))
    }
}

pub type Rgb = [u8; 3];

/// Euclidean distance between two colors.
pub fn rgb_distance(a: Rgb, b: Rgb) -> f64 {
    (rgb_distance_sq(a, b) as f64).sqrt()
}

/// Squared Euclidean distance, exact in integers.
pub fn rgb_distance_sq(a: Rgb, b: Rgb) -> u32 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            (d * d) as u32
        })
        .sum()
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let pixels = fill.repeat((width * height) as usize);
        Ok(Self { width, height, pixels })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let expected = (width * height * 3) as usize;
        if pixels.len() != expected {
            return Err(RasterError::BadBuffer { expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.at(self.index(x, y))
    }

    /// Color at linear pixel index `i`.
    pub fn at(&self, i: usize) -> Rgb {
        [self.pixels[3 * i], self.pixels[3 * i + 1], self.pixels[3 * i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let i = self.index(x, y);
        self.pixels[3 * i..3 * i + 3].copy_from_slice(&c);
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.pixels, None)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let decoded = decode_png(bytes)?;
        if decoded.color != png::ColorType::Rgb {
            return Err(RasterError::Png(format!("expected RGB, got {:?}", decoded.color)));
        }
        Self::from_raw(decoded.width, decoded.height, decoded.data)
    }
}

/// Per-pixel class ids (0 = background) plus the id → name table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    classes: Vec<u8>,
    class_table: BTreeMap<u8, String>,
}

impl Mask {
    /// An all-background mask.
    pub fn empty(width: u32, height: u32, class_table: BTreeMap<u8, String>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            classes: vec![0; (width * height) as usize],
            class_table,
        })
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        classes: Vec<u8>,
        class_table: BTreeMap<u8, String>,
    ) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let expected = (width * height) as usize;
        if classes.len() != expected {
            return Err(RasterError::BadBuffer { expected, actual: classes.len() });
        }
        let mask = Self { width, height, classes, class_table };
        mask.check_table()?;
        Ok(mask)
    }

    fn check_table(&self) -> Result<(), RasterError> {
        match self.present_ids().into_iter().find(|id| !self.class_table.contains_key(id)) {
            Some(id) => Err(RasterError::MissingClass(id)),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn raw(&self) -> &[u8] {
        &self.classes
    }

    pub fn class_table(&self) -> &BTreeMap<u8, String> {
        &self.class_table
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.classes[(y * self.width + x) as usize]
    }

    pub fn same_dims(&self, width: u32, height: u32) -> bool {
        self.width == width && self.height == height
    }

    /// Nonzero class ids that occur in the pixels.
    pub fn present_ids(&self) -> BTreeSet<u8> {
        let mut seen = [false; 256];
        for &c in &self.classes {
            seen[c as usize] = true;
        }
        (1..=255u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Drops class table entries whose id does not occur in the pixels.
    pub fn pruned(mut self) -> Self {
        let present = self.present_ids();
        self.class_table.retain(|id, _| present.contains(id));
        self
    }

    pub fn count(&self, class: u8) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn to_png(&self) -> Vec<u8> {
        let table: serde_json::Map<String, serde_json::Value> = self
            .class_table
            .iter()
            .map(|(id, name)| (id.to_string(), json!(name)))
            .collect();
        let text = canonical::to_compact(&serde_json::Value::Object(table));
        encode_png(self.width, self.height, png::ColorType::Grayscale, &self.classes, Some(text))
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let decoded = decode_png(bytes)?;
        if decoded.color != png::ColorType::Grayscale {
            return Err(RasterError::Png(format!("expected grayscale, got {:?}", decoded.color)));
        }
        let class_table = match decoded.class_table {
            Some(text) => parse_class_table(&text)?,
            None => BTreeMap::new(),
        };
        Self::from_raw(decoded.width, decoded.height, decoded.data, class_table)
    }
}

fn parse_class_table(text: &str) -> Result<BTreeMap<u8, String>, RasterError> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(text).map_err(|e| RasterError::Png(format!("class table: {e}")))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u8>()
                .map(|id| (id, v))
                .map_err(|_| RasterError::Png(format!("class table key `{k}`")))
        })
        .collect()
}

fn encode_png(width: u32, height: u32, color: png::ColorType, data: &[u8], class_table: Option<String>) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        if let Some(text) = class_table {
            encoder
                .add_itxt_chunk(CLASS_TABLE_KEY.to_string(), text)
                .expect("keyword is valid latin-1");
        }
        let mut writer = encoder.write_header().expect("writing to a Vec cannot fail");
        writer.write_image_data(data).expect("buffer length checked at construction");
    }
    out
}

struct Decoded {
    width: u32,
    height: u32,
    color: png::ColorType,
    data: Vec<u8>,
    class_table: Option<String>,
}

fn decode_png(bytes: &[u8]) -> Result<Decoded, RasterError> {
    let err = |e: png::DecodingError| RasterError::Png(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Png("image too large".into()))?;
    let mut data = vec![0; size];
    let frame = reader.next_frame(&mut data).map_err(err)?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Png(format!("unsupported bit depth {:?}", frame.bit_depth)));
    }
    data.truncate(frame.buffer_size());
    // Text chunks after IDAT are only visible once the stream is finished.
    reader.finish().map_err(err)?;
    let info = reader.info();
    let class_table = info
        .utf8_text
        .iter()
        .find(|c| c.keyword == CLASS_TABLE_KEY)
        .and_then(|c| c.get_text().ok());
    Ok(Decoded {
        width: frame.width,
        height: frame.height,
        color: frame.color_type,
        data,
        class_table,
    })
}
