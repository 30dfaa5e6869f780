//! Labeled training data and the per-feature summaries derived from it.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class tag of a sample. Only two classes are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassLabel {
    One = 1,
    Two = 2,
}

impl ClassLabel {
    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            1 => Some(ClassLabel::One),
            2 => Some(ClassLabel::Two),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn other(self) -> Self {
        match self {
            ClassLabel::One => ClassLabel::Two,
            ClassLabel::Two => ClassLabel::One,
        }
    }
}

/// Samples in rows, features in columns, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<ClassLabel>,
}

impl LabeledDataset {
    /// Validates finiteness, label count and the two-per-class minimum.
    pub fn new(features: Array2<f64>, labels: Vec<ClassLabel>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidInput("dataset has no feature columns".into()));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "features",
                index: pos,
            });
        }
        let n1 = labels.iter().filter(|&&l| l == ClassLabel::One).count();
        let n2 = labels.len() - n1;
        for (class, count) in [(1u8, n1), (2u8, n2)] {
            if count < 2 {
                return Err(Error::TooFewSamples { class, count });
            }
        }
        Ok(Self { features, labels })
    }

    /// A dataset without the per-class minimum, used for test sets.
    pub fn new_unchecked_counts(features: Array2<f64>, labels: Vec<ClassLabel>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "features",
                index: pos,
            });
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self
            .labels
            .iter()
            .filter(|&&l| l == ClassLabel::One)
            .count();
        (n1, self.labels.len() - n1)
    }
}

/// Per-feature class means, pooled variances and the normalized difference `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub mu1_hat: Vec<f64>,
    pub mu2_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub var_hat: Vec<f64>,
    pub y: Vec<f64>,
}

/// `sqrt(n1 n2 / (n1 + n2))`; equals `sqrt(n/2)` for balanced classes.
pub fn normalization_scale(n1: usize, n2: usize) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    (a * b / (a + b)).sqrt()
}

/// Class means, pooled variance with `n1 + n2 - 2` degrees of freedom, and
/// `y_j = scale * d_j / sqrt(var_j)`.
pub fn summarize(data: &LabeledDataset) -> Result<SummaryStats> {
    let p = data.n_features();
    let (n1, n2) = data.class_counts();
    for (class, count) in [(1u8, n1), (2u8, n2)] {
        if count < 2 {
            return Err(Error::TooFewSamples { class, count });
        }
    }

    let mut sum1 = vec![0.0; p];
    let mut sum2 = vec![0.0; p];
    for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
        let acc = match label {
            ClassLabel::One => &mut sum1,
            ClassLabel::Two => &mut sum2,
        };
        for (a, &x) in acc.iter_mut().zip(row.iter()) {
            *a += x;
        }
    }
    let mu1_hat: Vec<f64> = sum1.iter().map(|s| s / n1 as f64).collect();
    let mu2_hat: Vec<f64> = sum2.iter().map(|s| s / n2 as f64).collect();

    // Two-pass sum of squares around the class means.
    let mut ss = vec![0.0; p];
    for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
        let mean = match label {
            ClassLabel::One => &mu1_hat,
            ClassLabel::Two => &mu2_hat,
        };
        for ((s, &x), &m) in ss.iter_mut().zip(row.iter()).zip(mean) {
            let r = x - m;
            *s += r * r;
        }
    }
    let dof = (n1 + n2 - 2) as f64;
    let var_hat: Vec<f64> = ss.iter().map(|s| s / dof).collect();
    if let Some(column) = var_hat.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateFeature { column });
    }

    let mu_hat = mu1_hat
        .iter()
        .zip(&mu2_hat)
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    let d_hat: Vec<f64> = mu1_hat.iter().zip(&mu2_hat).map(|(a, b)| a - b).collect();
    let scale = normalization_scale(n1, n2);
    let y = d_hat
        .iter()
        .zip(&var_hat)
        .map(|(d, v)| scale * d / v.sqrt())
        .collect();

    Ok(SummaryStats {
        p,
        n1,
        n2,
        mu1_hat,
        mu2_hat,
        mu_hat,
        d_hat,
        var_hat,
        y,
    })
}
