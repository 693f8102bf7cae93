//! Dataset output: `images/%06d.png`, `masks/%06d.png` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BuiltinError;
use crate::canonical;
use crate::raster::{Image, Mask};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: u64,
    pub image: String,
    pub image_sha256: String,
    pub mask: String,
    pub mask_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: u64,
    /// Class id (as text) → class name.
    pub classes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline_sha256: Option<String>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, BuiltinError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| BuiltinError::InvalidSpec(format!("manifest: {e}")))
    }
}

/// Streams samples into a dataset directory. The directory is owned by the
/// writer until [`DatasetWriter::finish`].
pub struct DatasetWriter {
    root: PathBuf,
    samples: Vec<SampleEntry>,
}

impl DatasetWriter {
    /// Fails with `DuplicateOutputDir` when `root` exists and is not empty,
    /// unless `overwrite` is set, in which case its contents are replaced.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self, BuiltinError> {
        if root.exists() && fs::read_dir(root)?.next().is_some() {
            if !overwrite {
                return Err(BuiltinError::DuplicateOutputDir(root.to_path_buf()));
            }
            fs::remove_dir_all(root)?;
        }
        fs::create_dir_all(root.join("images"))?;
        fs::create_dir_all(root.join("masks"))?;
        Ok(Self {
            root: root.to_path_buf(),
            samples: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_sample(&mut self, image: &Image, mask: &Mask, seed: Option<u64>) -> Result<u64, BuiltinError> {
        if !mask.same_dims(image.width(), image.height()) {
            return Err(BuiltinError::DimensionMismatch {
                expected: (image.width(), image.height()),
                actual: (mask.width(), mask.height()),
            });
        }
        let index = self.samples.len() as u64;
        let image_rel = format!("images/{index:06}.png");
        let mask_rel = format!("masks/{index:06}.png");
        let image_png = image.to_png();
        let mask_png = mask.to_png();
        fs::write(self.root.join(&image_rel), &image_png)?;
        fs::write(self.root.join(&mask_rel), &mask_png)?;
        self.samples.push(SampleEntry {
            index,
            image: image_rel,
            image_sha256: canonical::sha256_hex(&image_png),
            mask: mask_rel,
            mask_sha256: canonical::sha256_hex(&mask_png),
            seed,
        });
        Ok(index)
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(
        self,
        class_table: &BTreeMap<u8, String>,
        pipeline_sha256: Option<String>,
    ) -> Result<DatasetManifest, BuiltinError> {
        let manifest = DatasetManifest {
            format_version: MANIFEST_VERSION,
            count: self.samples.len() as u64,
            classes: class_table.iter().map(|(id, name)| (id.to_string(), name.clone())).collect(),
            pipeline_sha256,
            samples: self.samples,
        };
        fs::write(self.root.join(MANIFEST_FILE), canonical::pretty_of(&manifest))?;
        Ok(manifest)
    }
}

/// Writes all `samples` at once.
pub fn dataset_write(
    samples: &[(Image, Mask)],
    out_dir: &Path,
    class_table: &BTreeMap<u8, String>,
    overwrite: bool,
) -> Result<DatasetManifest, BuiltinError> {
    if let Some((i, (img, mask))) = samples
        .iter()
        .enumerate()
        .find(|(_, (img, mask))| !mask.same_dims(img.width(), img.height()))
    {
        return Err(BuiltinError::InvalidSpec(format!(
            "sample {i}: image {}x{} vs mask {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    let mut writer = DatasetWriter::create(out_dir, overwrite)?;
    for (image, mask) in samples {
        writer.write_sample(image, mask, None)?;
    }
    writer.finish(class_table, None)
}
