//! Discrete prior extraction from a fitted variational posterior and the
//! estimators of the normalized mean difference built on top of it.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, Stream};
use crate::vb::{vb_fit, VbConfig, VbState};

/// Atoms closer than this are treated as the same location.
pub const ATOM_MERGE_TOL: f64 = 1e-9;

/// Discrete distribution on the real line with an atom at zero in slot 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscretePrior {
    /// Point mass at zero.
    pub fn zero() -> Self {
        Self {
            atoms: vec![0.0],
            weights: vec![1.0],
        }
    }

    /// Builds a prior from a zero-atom weight and nonzero `(location, weight)`
    /// pairs. Locations are sorted and merged within [`ATOM_MERGE_TOL`];
    /// locations within the tolerance of zero are folded into the zero atom.
    pub fn from_parts(zero_weight: f64, nonzero: Vec<(f64, f64)>) -> Result<Self> {
        let mut zero_parts = vec![zero_weight];
        let mut rest = Vec::with_capacity(nonzero.len());
        for (a, w) in nonzero {
            if !a.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!("invalid atom ({a}, {w})")));
            }
            if a.abs() <= ATOM_MERGE_TOL {
                zero_parts.push(w);
            } else {
                rest.push((a, w));
            }
        }
        Ok(Self::canonical(zero_parts, rest))
    }

    fn canonical(mut zero_parts: Vec<f64>, mut rest: Vec<(f64, f64)>) -> Self {
        // Sorting before summation makes the result independent of input order.
        zero_parts.sort_by(f64::total_cmp);
        rest.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut atoms = vec![0.0];
        let mut weights = vec![zero_parts.iter().sum()];
        let mut anchor = f64::NAN;
        for (a, w) in rest {
            if atoms.len() > 1 && (a - anchor).abs() <= ATOM_MERGE_TOL {
                *weights.last_mut().expect("nonempty") += w;
            } else {
                anchor = a;
                atoms.push(a);
                weights.push(w);
            }
        }
        Self { atoms, weights }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn zero_weight(&self) -> f64 {
        self.weights[0]
    }

    /// Nonzero atoms with their weights.
    pub fn nonzero(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms[1..]
            .iter()
            .copied()
            .zip(self.weights[1..].iter().copied())
    }

    pub fn is_point_mass_at_zero(&self) -> bool {
        self.nonzero().all(|(_, w)| w == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() || self.atoms[0] != 0.0 || self.atoms.len() != self.weights.len() {
            return Err(Error::InvalidInput(
                "prior must start with the zero atom and have one weight per atom".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "prior weights must be nonnegative".into(),
            ));
        }
        if self.atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("prior atoms must be finite".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "prior weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Most probable point of each coordinate's approximate posterior; counts
/// become the atom weights. Ties go to the zero atom, then to the lower
/// cluster index.
pub fn map_prior(state: &VbState) -> DiscretePrior {
    let p = state.phi.nrows();
    let t = state.phi.ncols();
    let mut zero_count = 0usize;
    let mut counts = vec![0usize; t];
    for row in state.phi.rows() {
        let spike: f64 = row.iter().zip(&state.pspike).map(|(f, q)| f * q).sum();
        let mut best: Option<(usize, f64)> = None;
        for (i, (&f, &q)) in row.iter().zip(&state.pspike).enumerate() {
            let mass = f * (1.0 - q);
            if best.is_none_or(|(_, b)| mass > b) {
                best = Some((i, mass));
            }
        }
        match best {
            Some((i, mass)) if mass > spike => counts[i] += 1,
            _ => zero_count += 1,
        }
    }
    let total = p as f64;
    let nonzero = counts
        .iter()
        .zip(&state.m)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &m)| (m, c as f64 / total))
        .collect();
    DiscretePrior::from_parts(zero_count as f64 / total, nonzero)
        .expect("cluster means and counts are finite")
}

/// Equal-weight mixture of the given priors.
pub fn average_priors(priors: &[DiscretePrior]) -> Result<DiscretePrior> {
    if priors.is_empty() {
        return Err(Error::InvalidInput(
            "cannot average an empty list of priors".into(),
        ));
    }
    let scale = priors.len() as f64;
    let zero_parts = priors.iter().map(|g| g.zero_weight() / scale).collect();
    let rest = priors
        .iter()
        .flat_map(|g| g.nonzero().map(move |(a, w)| (a, w / scale)))
        .collect();
    Ok(DiscretePrior::canonical(zero_parts, rest))
}

/// Seeded balanced partition of `0..p` into `folds` index sets, each sorted.
/// Fold sizes are `ceil(p / folds)` for the first `p % folds` folds and
/// `floor(p / folds)` for the rest.
pub fn partition_folds(p: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > p {
        return Err(Error::InvalidInput(format!(
            "fold count must be in 1..={p}, got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..p).collect();
    if folds > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Partition, 0));
        order.shuffle(&mut rng);
    }
    let base = p / folds;
    let extra = p % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for i in 0..folds {
        let len = base + usize::from(i < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    Ok(out)
}

/// Config for fold `index` of a batched fit. A single fold uses the master
/// seed directly.
pub fn fold_config(cfg: &VbConfig, folds: usize, index: usize) -> VbConfig {
    if folds == 1 {
        *cfg
    } else {
        VbConfig {
            seed: derive_seed(cfg.seed, Stream::Fold, index as u64),
            ..*cfg
        }
    }
}

/// Fit each fold separately and average the resulting MAP priors.
///
/// Folds may run in parallel on the current rayon pool; the result does not
/// depend on scheduling.
pub fn batch_fit(y: &[f64], folds: usize, cfg: &VbConfig) -> Result<DiscretePrior> {
    cfg.validate()?;
    let parts = partition_folds(y.len(), folds, cfg.seed)?;
    let priors = parts
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let sub: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
            vb_fit(&sub, &fold_config(cfg, folds, i)).map(|s| map_prior(&s))
        })
        .collect::<Result<Vec<_>>>()?;
    average_priors(&priors)
}

/// Posterior probability that `η_k = 0` under `prior`, given `Y_k ~ N(η_k, 1)`.
pub fn posterior_zero_weights(prior: &DiscretePrior, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&yk| posterior_row(prior, yk).0).collect()
}

/// `(zero weight, posterior mean)` for one observation via log-sum-exp.
fn posterior_row(prior: &DiscretePrior, yk: f64) -> (f64, f64) {
    let logs: Vec<f64> = prior
        .atoms
        .iter()
        .zip(&prior.weights)
        .map(|(&a, &w)| {
            if w > 0.0 {
                w.ln() - 0.5 * (yk - a) * (yk - a)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (1.0, 0.0);
    }
    let mut total = 0.0;
    let mut mean = 0.0;
    for (&l, &a) in logs.iter().zip(&prior.atoms) {
        let e = (l - max).exp();
        total += e;
        mean += e * a;
    }
    ((logs[0] - max).exp() / total, mean / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "SparseDP")]
    SparseDp,
    HardThresh,
    SampleMean,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::HardThresh,
        Method::SparseDp,
        Method::Dp,
        Method::SampleMean,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dp => "DP",
            Method::SparseDp => "SparseDP",
            Method::HardThresh => "HardThresh",
            Method::SampleMean => "IR",
            Method::Oracle => "Oracle",
        }
    }

    /// Whether the method needs a fitted prior.
    pub fn needs_prior(self) -> bool {
        matches!(self, Method::Dp | Method::SparseDp | Method::HardThresh)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Method::Dp),
            "sdp" | "sparsedp" | "sparse-dp" => Ok(Method::SparseDp),
            "hard" | "hardthresh" | "hard-thresh" => Ok(Method::HardThresh),
            "ir" | "samplemean" | "sample-mean" => Ok(Method::SampleMean),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

/// Estimated normalized mean difference with per-coordinate posterior zero weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub values: Vec<f64>,
    pub zero_weight: Vec<f64>,
    pub method: Method,
    pub kappa: Option<f64>,
}

impl EtaEstimate {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Posterior mean of each `η_k` under `prior`.
pub fn posterior_mean_estimate(prior: &DiscretePrior, y: &[f64]) -> EtaEstimate {
    let (zero_weight, values) = y.iter().map(|&yk| posterior_row(prior, yk)).unzip();
    EtaEstimate {
        values,
        zero_weight,
        method: Method::Dp,
        kappa: None,
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "kappa must lie in (0, 1), got {kappa}"
        )))
    }
}

/// Zero every coordinate whose posterior zero weight strictly exceeds `kappa`.
pub fn sparse_threshold(dp: &EtaEstimate, kappa: f64) -> Result<EtaEstimate> {
    check_kappa(kappa)?;
    if dp.method != Method::Dp {
        return Err(Error::InvalidInput(format!(
            "sparse thresholding expects a DP estimate, got {}",
            dp.method
        )));
    }
    let values = dp
        .values
        .iter()
        .zip(&dp.zero_weight)
        .map(|(&v, &z)| if z > kappa { 0.0 } else { v })
        .collect();
    Ok(EtaEstimate {
        values,
        zero_weight: dp.zero_weight.clone(),
        method: Method::SparseDp,
        kappa: Some(kappa),
    })
}

/// Raw `Y_k` on the coordinates the posterior keeps, zero elsewhere.
pub fn hard_threshold_estimate(y: &[f64], zero_weight: &[f64], kappa: f64) -> Result<EtaEstimate> {
    check_kappa(kappa)?;
    if y.len() != zero_weight.len() {
        return Err(Error::DimensionMismatch {
            what: "zero weights",
            expected: y.len(),
            found: zero_weight.len(),
        });
    }
    let values = y
        .iter()
        .zip(zero_weight)
        .map(|(&v, &z)| if z <= kappa { v } else { 0.0 })
        .collect();
    Ok(EtaEstimate {
        values,
        zero_weight: zero_weight.to_vec(),
        method: Method::HardThresh,
        kappa: Some(kappa),
    })
}

/// Unshrunk normalized difference; induces the plain independence rule.
pub fn sample_mean_estimate(y: &[f64]) -> EtaEstimate {
    EtaEstimate {
        values: y.to_vec(),
        zero_weight: vec![0.0; y.len()],
        method: Method::SampleMean,
        kappa: None,
    }
}

/// `Y_k` on a known support (0-based indices), zero elsewhere.
pub fn oracle_estimate(y: &[f64], support: &[usize]) -> Result<EtaEstimate> {
    let mut values = vec![0.0; y.len()];
    let mut zero_weight = vec![1.0; y.len()];
    for &k in support {
        if k >= y.len() {
            return Err(Error::InvalidInput(format!(
                "support index {k} out of range for p = {}",
                y.len()
            )));
        }
        values[k] = y[k];
        zero_weight[k] = 0.0;
    }
    Ok(EtaEstimate {
        values,
        zero_weight,
        method: Method::Oracle,
        kappa: None,
    })
}

/// All estimates requested in `methods`, fitting the prior only if needed.
pub fn estimate_all(
    y: &[f64],
    methods: &[Method],
    prior: Option<&DiscretePrior>,
    kappa: f64,
    support: Option<&[usize]>,
) -> Result<Vec<EtaEstimate>> {
    let mut dp: Option<EtaEstimate> = None;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let est = match method {
            Method::Dp | Method::SparseDp | Method::HardThresh => {
                let prior = prior.ok_or_else(|| {
                    Error::InvalidInput(format!("method {method} requires a fitted prior"))
                })?;
                let dp = dp.get_or_insert_with(|| posterior_mean_estimate(prior, y));
                match method {
                    Method::Dp => dp.clone(),
                    Method::SparseDp => sparse_threshold(dp, kappa)?,
                    _ => hard_threshold_estimate(y, &dp.zero_weight, kappa)?,
                }
            }
            Method::SampleMean => sample_mean_estimate(y),
            Method::Oracle => {
                let support = support.ok_or_else(|| {
                    Error::InvalidInput("oracle estimate requires the true support".into())
                })?;
                oracle_estimate(y, support)?
            }
        };
        out.push(est);
    }
    Ok(out)
}
