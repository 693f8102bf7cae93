//! Runtime values carried on pipeline edges.

use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::json;

use crate::canonical;
use crate::graph::DataType;
use crate::raster::{Image, Mask, RasterError};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Image(Arc<Image>),
    Mask(Arc<Mask>),
    Number(f64),
    Boolean(bool),
    /// Homogeneous list; the element type is kept so empty lists stay typed.
    List(DataType, Vec<Value>),
}

#[derive(Debug, thiserror::Error)]
pub enum ValueError {
    #[error("expected {expected}, got {actual}")]
    TypeMismatch { expected: DataType, actual: DataType },
    #[error("cannot decode {dtype}: {reason}")]
    Decode { dtype: DataType, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

impl Value {
    pub fn image(image: Image) -> Self {
        Value::Image(Arc::new(image))
    }

    pub fn mask(mask: Mask) -> Self {
        Value::Mask(Arc::new(mask))
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn dtype(&self) -> DataType {
        match self {
            Value::Text(_) => DataType::Text,
            Value::Image(_) => DataType::Image,
            Value::Mask(_) => DataType::Mask,
            Value::Number(_) => DataType::Number,
            Value::Boolean(_) => DataType::Boolean,
            Value::List(elem, _) => DataType::list_of(elem.clone()),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&Arc<Image>> {
        match self {
            Value::Image(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_mask(&self) -> Option<&Arc<Mask>> {
        match self {
            Value::Mask(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    /// Media type of [`Value::to_bytes`].
    pub fn content_type(&self) -> &'static str {
        match self {
            Value::Image(_) | Value::Mask(_) => "image/png",
            Value::List(..) => "application/json",
            _ => "text/plain; charset=utf-8",
        }
    }

    /// The artifact encoding: PNG for images and masks, UTF-8 for text,
    /// canonical text for numbers and booleans, and a canonical document with
    /// base64 items for lists.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Value::Text(s) => s.as_bytes().to_vec(),
            Value::Image(img) => img.to_png(),
            Value::Mask(mask) => mask.to_png(),
            Value::Number(x) => number_text(*x).into_bytes(),
            Value::Boolean(b) => b.to_string().into_bytes(),
            Value::List(elem, items) => {
                let items: Vec<String> = items.iter().map(|v| BASE64.encode(v.to_bytes())).collect();
                canonical::to_compact(&json!({"dtype": DataType::list_of(elem.clone()).to_string(), "items": items}))
                    .into_bytes()
            }
        }
    }

    /// SHA-256 of the artifact encoding.
    pub fn digest(&self) -> String {
        canonical::sha256_hex(&self.to_bytes())
    }

    /// Inverse of [`Value::to_bytes`].
    pub fn from_bytes(dtype: &DataType, bytes: &[u8]) -> Result<Self, ValueError> {
        let decode_err = |reason: String| ValueError::Decode { dtype: dtype.clone(), reason };
        let utf8 = || std::str::from_utf8(bytes).map_err(|e| decode_err(e.to_string()));
        match dtype {
            DataType::Text => Ok(Value::Text(utf8()?.to_string())),
            DataType::Image => Ok(Value::image(Image::from_png(bytes)?)),
            DataType::Mask => Ok(Value::mask(Mask::from_png(bytes)?)),
            DataType::Number => Value::parse_literal(dtype, utf8()?),
            DataType::Boolean => Value::parse_literal(dtype, utf8()?),
            DataType::List(elem) => {
                let doc: serde_json::Value =
                    serde_json::from_slice(bytes).map_err(|e| decode_err(e.to_string()))?;
                if doc["dtype"].as_str() != Some(dtype.to_string().as_str()) {
                    return Err(decode_err(format!("list header says {}", doc["dtype"])));
                }
                let items = doc["items"]
                    .as_array()
                    .ok_or_else(|| decode_err("missing items".into()))?
                    .iter()
                    .map(|item| {
                        let b64 = item.as_str().ok_or_else(|| decode_err("item is not a string".into()))?;
                        let raw = BASE64.decode(b64).map_err(|e| decode_err(e.to_string()))?;
                        Value::from_bytes(elem, &raw)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Value::List((**elem).clone(), items))
            }
        }
    }

    /// Parses a command-line literal for the scalar types.
    pub fn parse_literal(dtype: &DataType, text: &str) -> Result<Self, ValueError> {
        let decode_err = |reason: &str| ValueError::Decode { dtype: dtype.clone(), reason: reason.to_string() };
        match dtype {
            DataType::Text => Ok(Value::Text(text.to_string())),
            DataType::Number => text
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Number)
                .ok_or_else(|| decode_err("not a finite number")),
            DataType::Boolean => match text.trim() {
                "true" => Ok(Value::Boolean(true)),
                "false" => Ok(Value::Boolean(false)),
                _ => Err(decode_err("expected true or false")),
            },
            _ => Err(decode_err("no literal form; bind a file instead")),
        }
    }

    pub fn expect_type(&self, expected: &DataType) -> Result<(), ValueError> {
        let actual = self.dtype();
        if &actual == expected {
            Ok(())
        } else {
            Err(ValueError::TypeMismatch { expected: expected.clone(), actual })
        }
    }

    /// Approximate in-memory size, used for cache accounting.
    pub fn approx_bytes(&self) -> usize {
        match self {
            Value::Text(s) => s.len(),
            Value::Image(i) => i.raw().len(),
            Value::Mask(m) => m.raw().len(),
            Value::Number(_) | Value::Boolean(_) => 8,
            Value::List(_, items) => items.iter().map(Value::approx_bytes).sum(),
        }
    }
}

fn number_text(x: f64) -> String {
    serde_json::Number::from_f64(x).map_or_else(|| "null".to_string(), |n| n.to_string())
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Image(i) => write!(f, "image {}x{}", i.width(), i.height()),
            Value::Mask(m) => write!(f, "mask {}x{}", m.width(), m.height()),
            Value::Number(x) => f.write_str(&number_text(*x)),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::List(elem, items) => write!(f, "list<{elem}> of {}", items.len()),
        }
    }
}
