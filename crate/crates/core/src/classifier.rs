//! Independence-rule linear classifier induced by an estimate of the
//! normalized mean difference, and its misclassification rates.

use serde::{Deserialize, Serialize};

use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::prior::EtaEstimate;
use crate::special::normal_cdf;
use crate::summary::{ClassLabel, LabeledDataset, SummaryStats};

/// Ground-truth class means and covariance of a two-class Gaussian population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePopulation {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub cov: Covariance,
}

impl TruePopulation {
    pub fn new(mu1: Vec<f64>, mu2: Vec<f64>, cov: Covariance) -> Result<Self> {
        let p = cov.dim();
        for (what, v) in [("mu1", &mu1), ("mu2", &mu2)] {
            if v.len() != p {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: p,
                    found: v.len(),
                });
            }
        }
        if cov.diagonal().iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(
                "covariance diagonal must be positive".into(),
            ));
        }
        Ok(Self { mu1, mu2, cov })
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn mean_difference(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu2).map(|(a, b)| a - b).collect()
    }

    /// Indices where the two class means differ.
    pub fn support(&self) -> Vec<usize> {
        self.mu1
            .iter()
            .zip(&self.mu2)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Signal strength `dᵗ D⁻¹ d` with `D = diag(Σ)`.
    pub fn signal_strength(&self) -> f64 {
        self.mean_difference()
            .iter()
            .zip(self.cov.diagonal())
            .map(|(d, s)| d * d / s)
            .sum()
    }

    /// Largest eigenvalue of the correlation matrix.
    pub fn lambda1(&self) -> Result<f64> {
        self.cov.max_correlation_eigenvalue()
    }
}

/// `x ↦ (x - μ̂)ᵗ D̂^{-1/2} η̂`, class 1 iff the score is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub mu_hat: Vec<f64>,
    pub inv_sqrt_var: Vec<f64>,
    pub eta: EtaEstimate,
}

impl LinearClassifier {
    pub fn new(mu_hat: Vec<f64>, var_hat: &[f64], eta: EtaEstimate) -> Result<Self> {
        let p = mu_hat.len();
        for (what, len) in [("variances", var_hat.len()), ("eta", eta.len())] {
            if len != p {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: p,
                    found: len,
                });
            }
        }
        let inv_sqrt_var: Vec<f64> = var_hat.iter().map(|v| 1.0 / v.sqrt()).collect();
        if let Some(index) = inv_sqrt_var
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::DegenerateFeature { column: index });
        }
        Ok(Self {
            mu_hat,
            inv_sqrt_var,
            eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// Direction `D̂^{-1/2} η̂`.
    pub fn direction(&self) -> Vec<f64> {
        self.inv_sqrt_var
            .iter()
            .zip(&self.eta.values)
            .map(|(s, e)| s * e)
            .collect()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "sample",
                expected: self.dim(),
                found: x.len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "sample",
                index,
            });
        }
        Ok(self.score_unchecked(x.iter().copied()))
    }

    fn score_unchecked(&self, x: impl Iterator<Item = f64>) -> f64 {
        x.zip(&self.mu_hat)
            .zip(self.inv_sqrt_var.iter().zip(&self.eta.values))
            .filter(|(_, (_, &e))| e != 0.0)
            .map(|((xk, m), (s, e))| (xk - m) * s * e)
            .sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassLabel> {
        Ok(label_for(self.score(x)?))
    }
}

/// Zero scores go to class 2.
pub fn label_for(score: f64) -> ClassLabel {
    if score > 0.0 {
        ClassLabel::One
    } else {
        ClassLabel::Two
    }
}

pub fn build_classifier(stats: &SummaryStats, eta: EtaEstimate) -> Result<LinearClassifier> {
    LinearClassifier::new(stats.mu_hat.clone(), &stats.var_hat, eta)
}

/// Exact misclassification rate of `c` under `pop`, averaged over both
/// classes with equal priors. A zero direction gives 0.5.
pub fn theoretical_error(c: &LinearClassifier, pop: &TruePopulation) -> Result<f64> {
    if pop.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            what: "population",
            expected: c.dim(),
            found: pop.dim(),
        });
    }
    let v = c.direction();
    let spread = pop.cov.quadratic_form(&v, &v)?;
    if !(spread > 0.0) {
        return Ok(0.5);
    }
    let denom = spread.sqrt();
    let proj = |mu: &[f64]| -> f64 {
        mu.iter()
            .zip(&c.mu_hat)
            .zip(&v)
            .map(|((m, h), w)| (m - h) * w)
            .sum()
    };
    let psi1 = proj(&pop.mu1) / denom;
    let psi2 = -proj(&pop.mu2) / denom;
    Ok(0.5 * normal_cdf(-psi1) + 0.5 * normal_cdf(-psi2))
}

/// Fraction of misclassified rows of `test`.
pub fn empirical_error(c: &LinearClassifier, test: &LabeledDataset) -> Result<f64> {
    if test.n_samples() == 0 {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if test.n_features() != c.dim() {
        return Err(Error::DimensionMismatch {
            what: "test features",
            expected: c.dim(),
            found: test.n_features(),
        });
    }
    let wrong = test
        .features()
        .rows()
        .into_iter()
        .zip(test.labels())
        .filter(|(row, &label)| label_for(c.score_unchecked(row.iter().copied())) != label)
        .count();
    Ok(wrong as f64 / test.n_samples() as f64)
}

/// Bayes-rule error `Φ(-sqrt(dᵗ Σ⁻¹ d) / 2)`.
pub fn optimal_error(pop: &TruePopulation) -> Result<f64> {
    let q = pop.cov.inverse_quadratic_form(&pop.mean_difference())?;
    if !(q >= 0.0) {
        return Err(Error::SingularCovariance);
    }
    Ok(normal_cdf(-q.sqrt() / 2.0))
}

/// Worst-case Bayes error over populations sharing this signal strength and
/// correlation eigenvalue bound: `Φ(-sqrt(C_p) / (2 sqrt(λ1)))`.
pub fn worst_case_optimal_error(pop: &TruePopulation) -> Result<f64> {
    let lambda1 = pop.lambda1()?;
    Ok(normal_cdf(
        -pop.signal_strength().sqrt() / (2.0 * lambda1.sqrt()),
    ))
}
