//! Outlier detection scores and adjustment error.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::model::{residual, Dataset, Model};

/// Detection result for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub tp: usize,
    pub fp: usize,
    /// Every true outlier was declared.
    pub all_found: bool,
    /// Declared set equals the true set.
    pub exact: bool,
    pub declared: usize,
}

pub fn score_detection(declared: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> InstanceScore {
    let tp = declared.intersection(truth).count();
    InstanceScore {
        tp,
        fp: declared.len() - tp,
        all_found: tp == truth.len(),
        exact: declared == truth,
        declared: declared.len(),
    }
}

/// Averages over instances: `fr` and `er` are ratios of instances with all
/// and exactly the outliers found; `tp`, `fp` and `avg_declared` are means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub fr: f64,
    pub er: f64,
    pub tp: f64,
    pub fp: f64,
    pub avg_declared: f64,
    pub count: usize,
}

pub fn aggregate(scores: &[InstanceScore]) -> DetectionStats {
    let n = scores.len();
    if n == 0 {
        return DetectionStats {
            fr: 0.0,
            er: 0.0,
            tp: 0.0,
            fp: 0.0,
            avg_declared: 0.0,
            count: 0,
        };
    }
    let mean = |f: &dyn Fn(&InstanceScore) -> usize| {
        scores.iter().map(f).sum::<usize>() as f64 / n as f64
    };
    DetectionStats {
        fr: mean(&|s| usize::from(s.all_found)),
        er: mean(&|s| usize::from(s.exact)),
        tp: mean(&|s| s.tp),
        fp: mean(&|s| s.fp),
        avg_declared: mean(&|s| s.declared),
        count: n,
    }
}

/// Root of the sum of squared residuals over the true inliers.
pub fn adjustment_error(
    model: &dyn Model,
    x: &[f64],
    dataset: &Dataset,
    truth_outliers: &BTreeSet<usize>,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for (i, o) in dataset.iter().enumerate() {
        if truth_outliers.contains(&i) {
            continue;
        }
        let f = residual(model, o, x).map_err(|e| e.at(i))?;
        sum += f * f;
    }
    Ok(sum.sqrt())
}

/// Each error divided by the smallest one.
pub fn relative_errors<K: Ord + Clone>(errors: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let min = errors.values().copied().fold(f64::INFINITY, f64::min);
    errors
        .iter()
        .map(|(k, &e)| {
            let rel = if e == min { 1.0 } else { e / min };
            (k.clone(), rel)
        })
        .collect()
}
