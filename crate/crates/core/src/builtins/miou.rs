use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::BuiltinError;
use crate::canonical;
use crate::raster::Mask;

/// Per-class IoU plus their mean. Background (0) is never scored; classes
/// with an empty union are `None` and left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    pub per_class: BTreeMap<u8, Option<f64>>,
    /// `None` when no class has a defined IoU.
    pub mean: Option<f64>,
}

impl MiouReport {
    pub fn to_text(&self) -> String {
        canonical::compact_of(self)
    }
}

/// The class universe is every nonzero id found in either mask's pixels or
/// class table.
pub fn compute_miou(pred: &Mask, truth: &Mask) -> Result<MiouReport, BuiltinError> {
    if !pred.same_dims(truth.width(), truth.height()) {
        return Err(BuiltinError::DimensionMismatch {
            expected: (truth.width(), truth.height()),
            actual: (pred.width(), pred.height()),
        });
    }
    let mut inter = [0u64; 256];
    let mut pred_n = [0u64; 256];
    let mut truth_n = [0u64; 256];
    for (&p, &t) in pred.raw().iter().zip(truth.raw()) {
        pred_n[p as usize] += 1;
        truth_n[t as usize] += 1;
        if p == t {
            inter[p as usize] += 1;
        }
    }
    let universe: BTreeSet<u8> = pred
        .present_ids()
        .into_iter()
        .chain(truth.present_ids())
        .chain(pred.class_table().keys().copied())
        .chain(truth.class_table().keys().copied())
        .filter(|&c| c != 0)
        .collect();
    let per_class: BTreeMap<u8, Option<f64>> = universe
        .into_iter()
        .map(|c| {
            let i = inter[c as usize];
            let union = pred_n[c as usize] + truth_n[c as usize] - i;
            (c, (union > 0).then(|| i as f64 / union as f64))
        })
        .collect();
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MiouReport { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> BTreeMap<u8, String> {
        BTreeMap::from([(1, "car".to_string())])
    }

    #[test]
    fn identical_masks_score_one() {
        let m = Mask::from_raw(3, 1, vec![1, 0, 1], table()).unwrap();
        assert_eq!(compute_miou(&m, &m).unwrap().mean, Some(1.0));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = Mask::from_raw(2, 1, vec![1, 0], table()).unwrap();
        let b = Mask::from_raw(2, 1, vec![0, 1], table()).unwrap();
        assert_eq!(compute_miou(&a, &b).unwrap().mean, Some(0.0));
    }

    #[test]
    fn left_columns_versus_top_rows() {
        // Hand count: overlap = 2x2 = 4 pixels, union = 8 + 8 - 4 = 12.
        let left: Vec<u8> = (0..16).map(|i| u8::from(i % 4 < 2)).collect();
        let top: Vec<u8> = (0..16).map(|i| u8::from(i / 4 < 2)).collect();
        let pred = Mask::from_raw(4, 4, left, table()).unwrap();
        let truth = Mask::from_raw(4, 4, top, table()).unwrap();
        let report = compute_miou(&pred, &truth).unwrap();
        assert_eq!(report.per_class[&1], Some(4.0 / 12.0));
        assert_eq!(report.mean, Some(4.0 / 12.0));
    }

    #[test]
    fn all_background_has_undefined_mean() {
        let a = Mask::empty(4, 4, BTreeMap::new()).unwrap();
        let report = compute_miou(&a, &a).unwrap();
        assert_eq!(report.mean, None);
        assert!(report.per_class.is_empty());
        let b = Mask::empty(4, 4, table()).unwrap();
        assert_eq!(compute_miou(&b, &b).unwrap().per_class[&1], None);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Mask::empty(4, 4, BTreeMap::new()).unwrap();
        let b = Mask::empty(4, 5, BTreeMap::new()).unwrap();
        assert!(compute_miou(&a, &b).is_err());
    }
}
