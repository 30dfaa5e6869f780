//! Seeded generators for the three simulation designs and the repetition
//! runner that aggregates misclassification rates.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    build_classifier, empirical_error, label_for, theoretical_error, LinearClassifier,
    TruePopulation,
};
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::prior::{batch_fit, estimate_all, Method};
use crate::seeds::{derive_seed, Stream};
use crate::summary::{summarize, ClassLabel, LabeledDataset};
use crate::vb::VbConfig;

/// How the coordinates of `μ1` outside the signal blocks are filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroMode {
    /// Exactly zero.
    Exact,
    /// Small noise `N(0, 0.1²)`, redrawn every repetition.
    Normal,
}

/// Standard deviation of the approximately-sparse tail.
pub const TAIL_SD: f64 = 0.1;

impl ZeroMode {
    fn fill(self, tail: &mut [f64], rng: &mut ChaCha8Rng) {
        if self == ZeroMode::Normal {
            for v in tail {
                let z: f64 = rng.sample(StandardNormal);
                *v = TAIL_SD * z;
            }
        }
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `μ1` made of consecutive `(count, value)` blocks followed by the tail.
fn block_mean(
    p: usize,
    blocks: &[(usize, f64)],
    zero_mode: ZeroMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let signal: usize = blocks.iter().map(|b| b.0).sum();
    if signal > p {
        return Err(Error::InvalidInput(format!(
            "signal blocks cover {signal} coordinates but p = {p}"
        )));
    }
    let mut mu = Vec::with_capacity(p);
    for &(count, value) in blocks {
        mu.extend(std::iter::repeat_n(value, count));
    }
    let mut tail = vec![0.0; p - signal];
    zero_mode.fill(&mut tail, rng);
    mu.extend(tail);
    Ok(mu)
}

/// Draws `n1` class-1 rows followed by `n2` class-2 rows from `pop`.
///
/// Gaussian noise is used for diagonal, AR(1) and dense covariances. Factor
/// covariances use standardized `(χ²₆ - 6)/√12` factors, which matches the
/// second moments of the descriptor with non-Gaussian noise.
pub fn sample_population(
    pop: &TruePopulation,
    n1: usize,
    n2: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let p = pop.dim();
    let mut features = Array2::zeros((n1 + n2, p));
    let mut labels = Vec::with_capacity(n1 + n2);
    let sampler = NoiseSampler::new(&pop.cov)?;
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let (label, mu) = if i < n1 {
            (ClassLabel::One, &pop.mu1)
        } else {
            (ClassLabel::Two, &pop.mu2)
        };
        let row = row.as_slice_mut().expect("standard layout");
        sampler.fill(row, rng);
        for (x, m) in row.iter_mut().zip(mu) {
            *x += m;
        }
        labels.push(label);
    }
    LabeledDataset::new_unchecked_counts(features, labels)
}

enum NoiseSampler<'a> {
    Diagonal(Vec<f64>),
    Ar1 {
        rho: f64,
        sd: f64,
    },
    Factor {
        loadings: &'a [Vec<f64>],
        scales: Vec<f64>,
        chi: ChiSquared<f64>,
    },
    Dense(nalgebra::DMatrix<f64>),
}

impl<'a> NoiseSampler<'a> {
    fn new(cov: &'a Covariance) -> Result<Self> {
        Ok(match cov {
            Covariance::Diagonal(v) => NoiseSampler::Diagonal(v.iter().map(|s| s.sqrt()).collect()),
            Covariance::Ar1 { rho, s2, .. } => NoiseSampler::Ar1 {
                rho: *rho,
                sd: s2.sqrt(),
            },
            Covariance::Factor { loadings } => {
                let p = loadings[0].len();
                let scales = (0..p)
                    .map(|j| 1.0 / (1.0 + loadings.iter().map(|c| c[j] * c[j]).sum::<f64>()).sqrt())
                    .collect();
                NoiseSampler::Factor {
                    loadings,
                    scales,
                    chi: ChiSquared::new(6.0).expect("valid degrees of freedom"),
                }
            }
            Covariance::Dense(m) => {
                let chol = m.clone().cholesky().ok_or(Error::SingularCovariance)?;
                NoiseSampler::Dense(chol.l())
            }
        })
    }

    fn fill(&self, row: &mut [f64], rng: &mut ChaCha8Rng) {
        match self {
            NoiseSampler::Diagonal(sd) => {
                for (x, s) in row.iter_mut().zip(sd) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = s * z;
                }
            }
            NoiseSampler::Ar1 { rho, sd } => {
                let innov = (1.0 - rho * rho).sqrt();
                let mut prev = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = if j == 0 { z } else { rho * prev + innov * z };
                    *x = sd * prev;
                }
            }
            NoiseSampler::Factor {
                loadings,
                scales,
                chi,
            } => {
                let factors: Vec<f64> = loadings
                    .iter()
                    .map(|_| (chi.sample(rng) - 6.0) / 12f64.sqrt())
                    .collect();
                for (j, x) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    let shared: f64 = loadings.iter().zip(&factors).map(|(c, f)| c[j] * f).sum();
                    *x = (z + shared) * scales[j];
                }
            }
            NoiseSampler::Dense(l) => {
                let z: Vec<f64> = (0..row.len()).map(|_| rng.sample(StandardNormal)).collect();
                for (i, x) in row.iter_mut().enumerate() {
                    *x = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
                }
            }
        }
    }
}

fn check_sizes(p: usize, n: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidInput("p must be positive".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "n must be >= 2 per class, got {n}"
        )));
    }
    Ok(())
}

/// Diagonal design: `Σ = s² I`, `μ2 = 0`, the first `l` entries of `μ1` equal `delta`.
pub fn gen_study1(
    p: usize,
    n: usize,
    delta: f64,
    l: usize,
    zero_mode: ZeroMode,
    s2: f64,
    seed: u64,
) -> Result<(LabeledDataset, TruePopulation)> {
    check_sizes(p, n)?;
    if !(s2 > 0.0) {
        return Err(Error::InvalidInput(format!("s2 must be > 0, got {s2}")));
    }
    let mut rng = rng_for(seed);
    let mu1 = block_mean(p, &[(l, delta)], zero_mode, &mut rng)?;
    let pop = TruePopulation::new(mu1, vec![0.0; p], Covariance::Diagonal(vec![s2; p]))?;
    let data = sample_population(&pop, n, n, &mut rng)?;
    Ok((data, pop))
}

/// AR(1) design: `Σ = s² R`, `R_ij = ρ^|i-j|`, `μ1` given by signal blocks.
pub fn gen_study2(
    p: usize,
    n: usize,
    rho: f64,
    blocks: &[(usize, f64)],
    zero_mode: ZeroMode,
    s2: f64,
    seed: u64,
) -> Result<(LabeledDataset, TruePopulation)> {
    check_sizes(p, n)?;
    let cov = Covariance::ar1(p, rho, s2)?;
    let mut rng = rng_for(seed);
    let mu1 = block_mean(p, blocks, zero_mode, &mut rng)?;
    let pop = TruePopulation::new(mu1, vec![0.0; p], cov)?;
    let data = sample_population(&pop, n, n, &mut rng)?;
    Ok((data, pop))
}

/// Number of feature groups in the factor design.
pub const FACTOR_GROUPS: usize = 3;

/// Three-group factor design with non-Gaussian noise. `μ1` is a draw from
/// `(1 - c) δ0 + c · Laplace(rate 2)`; loadings `a_j ~ U(0, 0.4)` for the
/// feature's own group and `b_j ~ U(0, 0.2)` for the global factor.
pub fn gen_study3(
    p: usize,
    n: usize,
    c: f64,
    seed: u64,
) -> Result<(LabeledDataset, TruePopulation)> {
    check_sizes(p, n)?;
    if !p.is_multiple_of(FACTOR_GROUPS) {
        return Err(Error::InvalidInput(format!(
            "p must be divisible by 3, got {p}"
        )));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidInput(format!(
            "c must lie in [0, 1], got {c}"
        )));
    }
    let mut rng = rng_for(seed);
    let group = p / FACTOR_GROUPS;
    let mut loadings = vec![vec![0.0; p]; FACTOR_GROUPS + 1];
    for j in 0..p {
        loadings[j / group][j] = rng.random_range(0.0..0.4);
        loadings[FACTOR_GROUPS][j] = rng.random_range(0.0..0.2);
    }
    let laplace = Exp::new(2.0).expect("positive rate");
    let mu1: Vec<f64> = (0..p)
        .map(|_| {
            if rng.random_bool(c) {
                let mag = laplace.sample(&mut rng);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                0.0
            }
        })
        .collect();
    let pop = TruePopulation::new(mu1, vec![0.0; p], Covariance::factor(loadings)?)?;
    let data = sample_population(&pop, n, n, &mut rng)?;
    Ok((data, pop))
}

/// Monte Carlo misclassification rate on `draws` fresh samples split evenly
/// between classes, generated in seeded chunks. Diagonal populations only
/// sample coordinates the classifier uses.
pub fn monte_carlo_error(
    c: &LinearClassifier,
    pop: &TruePopulation,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidInput("draws must be positive".into()));
    }
    let (c, pop) = match &pop.cov {
        Covariance::Diagonal(var) => {
            let keep: Vec<usize> = (0..c.dim()).filter(|&k| c.eta.values[k] != 0.0).collect();
            if keep.is_empty() {
                // Every score is zero, so every sample is assigned to class 2.
                let n1 = draws.div_ceil(2);
                return Ok(n1 as f64 / draws as f64);
            }
            let pick = |v: &[f64]| keep.iter().map(|&k| v[k]).collect::<Vec<f64>>();
            let mut eta = c.eta.clone();
            eta.values = pick(&c.eta.values);
            eta.zero_weight = pick(&c.eta.zero_weight);
            let sub = LinearClassifier {
                mu_hat: pick(&c.mu_hat),
                inv_sqrt_var: pick(&c.inv_sqrt_var),
                eta,
            };
            let pop = TruePopulation::new(
                pick(&pop.mu1),
                pick(&pop.mu2),
                Covariance::Diagonal(pick(var)),
            )?;
            (sub, pop)
        }
        _ => (c.clone(), pop.clone()),
    };
    const CHUNK: usize = 1000;
    let n1 = draws.div_ceil(2);
    let chunks = draws.div_ceil(CHUNK);
    let wrong: usize = (0..chunks)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let start = i * CHUNK;
            let end = (start + CHUNK).min(draws);
            let c1 = end.min(n1).saturating_sub(start);
            let c2 = (end - start) - c1;
            let mut rng = rng_for(derive_seed(seed, Stream::TestData, i as u64));
            let batch = sample_population(&pop, c1, c2, &mut rng)?;
            let mut miss = 0;
            for (row, &label) in batch.features().rows().into_iter().zip(batch.labels()) {
                if label_for(c.score(row.as_slice().expect("standard layout"))?) != label {
                    miss += 1;
                }
            }
            Ok(miss)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(wrong as f64 / draws as f64)
}

/// Simulation design of one table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "lowercase")]
pub enum Design {
    Study1 {
        delta: f64,
        l: usize,
        zero_mode: ZeroMode,
    },
    Study2 {
        rho: f64,
        blocks: Vec<(usize, f64)>,
        zero_mode: ZeroMode,
    },
    Study3 {
        c: f64,
    },
}

impl Design {
    pub fn study(&self) -> u8 {
        match self {
            Design::Study1 { .. } => 1,
            Design::Study2 { .. } => 2,
            Design::Study3 { .. } => 3,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::Study1 { delta, l, .. } => write!(f, "({delta},{l})"),
            Design::Study2 { rho, blocks, .. } => {
                write!(f, "rho={rho}")?;
                for (count, value) in blocks {
                    write!(f, " {count}x{value}")?;
                }
                Ok(())
            }
            Design::Study3 { c } => write!(f, "c={c}"),
        }
    }
}

/// Full description of a repeated simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    pub p: usize,
    /// Training samples per class.
    pub n: usize,
    /// Noise variance `s²` (studies 1 and 2).
    pub s2: f64,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub vb: VbConfig,
    pub folds: usize,
    pub kappa: f64,
    pub seed: u64,
    /// Test samples per repetition for study 3 (split evenly by class).
    pub test_size: usize,
}

impl ExperimentConfig {
    /// Defaults of the first design: `p = 10⁴`, `n = 25`, `s² = 12.5`.
    pub fn study1(delta: f64, l: usize, zero_mode: ZeroMode) -> Self {
        Self {
            design: Design::Study1 {
                delta,
                l,
                zero_mode,
            },
            p: 10_000,
            n: 25,
            s2: 12.5,
            reps: 100,
            methods: Method::ALL
                .iter()
                .copied()
                .filter(|m| *m != Method::Oracle)
                .collect(),
            vb: VbConfig::default(),
            folds: 1,
            kappa: 0.5,
            seed: 0,
            test_size: 400,
        }
    }

    /// Defaults of the AR(1) design.
    pub fn study2(rho: f64, blocks: Vec<(usize, f64)>) -> Self {
        Self {
            design: Design::Study2 {
                rho,
                blocks,
                zero_mode: ZeroMode::Normal,
            },
            ..Self::study1(0.0, 0, ZeroMode::Normal)
        }
    }

    /// Defaults of the factor design: `p = 4500`, `n = 30`.
    pub fn study3(c: f64) -> Self {
        Self {
            design: Design::Study3 { c },
            p: 4500,
            n: 30,
            s2: 1.0,
            methods: vec![Method::Oracle, Method::HardThresh, Method::SparseDp],
            ..Self::study1(0.0, 0, ZeroMode::Exact)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput(
                "at least one method is required".into(),
            ));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidInput(format!(
                "kappa must lie in (0, 1), got {}",
                self.kappa
            )));
        }
        if self.folds == 0 || self.folds > self.p {
            return Err(Error::InvalidInput(format!(
                "folds must be in 1..={}",
                self.p
            )));
        }
        check_sizes(self.p, self.n)?;
        match &self.design {
            Design::Study1 { l, .. } if *l > self.p => Err(Error::InvalidInput(format!(
                "l = {l} exceeds p = {}",
                self.p
            ))),
            Design::Study2 { rho, .. } if !(*rho > -1.0 && *rho < 1.0) => Err(Error::InvalidInput(
                format!("rho must lie in (-1, 1), got {rho}"),
            )),
            Design::Study2 { blocks, .. } if blocks.iter().map(|b| b.0).sum::<usize>() > self.p => {
                Err(Error::InvalidInput("signal blocks exceed p".into()))
            }
            Design::Study3 { c } if !(0.0..=1.0).contains(c) => Err(Error::InvalidInput(format!(
                "c must lie in [0, 1], got {c}"
            ))),
            Design::Study3 { .. }
                if self.test_size < 2 || !self.p.is_multiple_of(FACTOR_GROUPS) =>
            {
                Err(Error::InvalidInput(
                    "study 3 needs test_size >= 2 and p divisible by 3".into(),
                ))
            }
            _ => Ok(()),
        }?;
        self.vb.validate()
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, Stream::Repetition, rep as u64)
    }

    /// Training data and population of repetition `rep`.
    pub fn generate(&self, rep: usize) -> Result<(LabeledDataset, TruePopulation)> {
        let seed = derive_seed(self.rep_seed(rep), Stream::Data, 0);
        match &self.design {
            Design::Study1 {
                delta,
                l,
                zero_mode,
            } => gen_study1(self.p, self.n, *delta, *l, *zero_mode, self.s2, seed),
            Design::Study2 {
                rho,
                blocks,
                zero_mode,
            } => gen_study2(self.p, self.n, *rho, blocks, *zero_mode, self.s2, seed),
            Design::Study3 { c } => gen_study3(self.p, self.n, *c, seed),
        }
    }
}

/// Errors of one repetition, one per requested method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub errors: Vec<f64>,
    /// Number of nonzero coordinates of each estimate.
    pub support: Vec<usize>,
}

/// Runs repetition `rep` of `cfg`.
pub fn run_repetition(cfg: &ExperimentConfig, rep: usize) -> Result<RepOutcome> {
    let (data, pop) = cfg.generate(rep)?;
    let stats = summarize(&data)?;
    let rep_seed = cfg.rep_seed(rep);
    let prior = if cfg.methods.iter().any(|m| m.needs_prior()) {
        let vb = VbConfig {
            seed: derive_seed(rep_seed, Stream::Fit, 0),
            ..cfg.vb
        };
        Some(batch_fit(&stats.y, cfg.folds, &vb)?)
    } else {
        None
    };
    let support = pop.support();
    let estimates = estimate_all(
        &stats.y,
        &cfg.methods,
        prior.as_ref(),
        cfg.kappa,
        Some(&support),
    )?;

    let test = if cfg.design.study() == 3 {
        let mut rng = rng_for(derive_seed(rep_seed, Stream::TestData, 0));
        let n1 = cfg.test_size.div_ceil(2);
        Some(sample_population(&pop, n1, cfg.test_size - n1, &mut rng)?)
    } else {
        None
    };

    let mut errors = Vec::with_capacity(estimates.len());
    let mut sizes = Vec::with_capacity(estimates.len());
    for eta in estimates {
        sizes.push(eta.support_size());
        let classifier = build_classifier(&stats, eta)?;
        let err = match &test {
            Some(test) => empirical_error(&classifier, test)?,
            None => theoretical_error(&classifier, &pop)?,
        };
        errors.push(err);
    }
    Ok(RepOutcome {
        rep,
        errors,
        support: sizes,
    })
}

/// One aggregated `(cell, method)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    pub method: Method,
    pub mean_error: f64,
    pub errors: Vec<f64>,
    pub mean_support: f64,
}

impl ResultRow {
    pub fn reps(&self) -> usize {
        self.errors.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, cell: &str, method: Method) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.method == method)
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }
}

/// All repetitions of `cfg`, in parallel on the current rayon pool.
/// The result is independent of the number of worker threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let outcomes = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let cell = cfg.design.to_string();
    let reps = cfg.reps as f64;
    let rows = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let errors: Vec<f64> = outcomes.iter().map(|o| o.errors[i]).collect();
            let mean_error = errors.iter().sum::<f64>() / reps;
            let mean_support = outcomes.iter().map(|o| o.support[i] as f64).sum::<f64>() / reps;
            ResultRow {
                cell: cell.clone(),
                method,
                mean_error,
                errors,
                mean_support,
            }
        })
        .collect();
    Ok(ResultTable {
        seed: cfg.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn study1_signal_count_and_variance() {
        let (data, pop) = gen_study1(5000, 3, 1.0, 2000, ZeroMode::Exact, 12.5, 5).unwrap();
        assert_eq!(pop.mu1.iter().filter(|&&v| v != 0.0).count(), 2000);
        assert!(pop.mu1[..2000].iter().all(|&v| v == 1.0));
        assert_eq!(pop.cov.diagonal(), vec![12.5; 5000]);
        assert_eq!(data.class_counts(), (3, 3));
    }

    #[test]
    fn study1_is_deterministic() {
        let a = gen_study1(200, 4, 2.0, 10, ZeroMode::Normal, 12.5, 17).unwrap();
        let b = gen_study1(200, 4, 2.0, 10, ZeroMode::Normal, 12.5, 17).unwrap();
        assert_eq!(a, b);
        let c = gen_study1(200, 4, 2.0, 10, ZeroMode::Normal, 12.5, 18).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn study2_composite_mean() {
        let (_, pop) = gen_study2(
            3000,
            3,
            0.3,
            &[(1000, 1.0), (100, 2.5)],
            ZeroMode::Normal,
            12.5,
            1,
        )
        .unwrap();
        assert!(pop.mu1[..1000].iter().all(|&v| v == 1.0));
        assert!(pop.mu1[1000..1100].iter().all(|&v| v == 2.5));
        let tail = &pop.mu1[1100..];
        let sd = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "{sd}");
        assert!(gen_study2(10, 3, 1.0, &[], ZeroMode::Exact, 1.0, 0).is_err());
    }

    #[test]
    fn study2_lag_one_correlation() {
        let (data, _) = gen_study2(20_000, 2, 0.6, &[], ZeroMode::Exact, 2.0, 9).unwrap();
        let x = data.features();
        let mut num = 0.0;
        let mut den = 0.0;
        for row in x.rows() {
            for j in 1..row.len() {
                num += row[j] * row[j - 1];
                den += row[j] * row[j];
            }
        }
        assert!((num / den - 0.6).abs() < 0.02, "{}", num / den);
    }

    #[test]
    fn study3_moments_and_groups() {
        let (data, pop) = gen_study3(300, 20, 0.02, 3).unwrap();
        assert_eq!(data.n_samples(), 40);
        assert_eq!(pop.cov.diagonal(), vec![1.0; 300]);
        assert!(gen_study3(301, 20, 0.02, 3).is_err());

        // Noise moments from many draws of a zero-mean copy of the population.
        let zero = TruePopulation::new(vec![0.0; 300], vec![0.0; 300], pop.cov.clone()).unwrap();
        let mut rng = rng_for(11);
        let big = sample_population(&zero, 5000, 5000, &mut rng).unwrap();
        let x = big.features();
        let n = x.nrows() as f64;
        for j in [0, 150, 299] {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
            assert!(mean.abs() < 0.04, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
        let corr = |a: usize, b: usize| {
            x.column(a)
                .iter()
                .zip(x.column(b).iter())
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / n
        };
        let within: f64 = (0..50).map(|j| corr(j, j + 50)).sum::<f64>() / 50.0;
        let between: f64 = (0..50).map(|j| corr(j, j + 150)).sum::<f64>() / 50.0;
        assert!(within > between, "within {within} between {between}");
    }

    #[test]
    fn study3_expected_sparsity() {
        let mut total = 0usize;
        for seed in 0..20 {
            let (_, pop) = gen_study3(4500, 2, 0.02, seed).unwrap();
            total += pop.support().len();
        }
        let mean = total as f64 / 20.0;
        assert!((mean - 90.0).abs() < 8.0, "{mean}");
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form_small() {
        let pop = TruePopulation::new(
            vec![1.0, 0.5, 0.0],
            vec![0.0; 3],
            Covariance::Diagonal(vec![1.0, 2.0, 1.0]),
        )
        .unwrap();
        let eta = crate::prior::sample_mean_estimate(&[1.0, 0.3, 0.2]);
        let c = LinearClassifier::new(vec![0.5, 0.2, 0.1], &[1.0, 2.0, 1.0], eta).unwrap();
        let exact = theoretical_error(&c, &pop).unwrap();
        let mc = monte_carlo_error(&c, &pop, 200_000, 1).unwrap();
        assert_abs_diff_eq!(exact, mc, epsilon = 0.005);
    }

    #[test]
    fn single_rep_table_shape() {
        let mut cfg = ExperimentConfig::study1(4.0, 10, ZeroMode::Exact);
        cfg.p = 300;
        cfg.reps = 1;
        cfg.methods = vec![Method::SampleMean, Method::SparseDp];
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert_eq!(row.reps(), 1);
            assert!((0.0..=1.0).contains(&row.mean_error));
        }
    }
}
