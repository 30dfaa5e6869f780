//! Coordinate-ascent variational Bayes for a truncated stick-breaking
//! Dirichlet process mixture whose base measure is a spike at zero plus a
//! centered normal slab, `G0 = w δ0 + (1 - w) N(0, σ²)`.
//!
//! Observations are `Y_k ~ N(η_{Z_k}, 1)`. The variational family is
//! fully factorized: each cluster atom carries a spike probability `p_t`
//! and a normal slab `N(m_t, τ²_t)`; each stick `V_t` (for `t < T`) is
//! Beta(γ1_t, γ2_t); each coordinate has a categorical assignment row
//! `φ_k`. `V_T = 1`, so the last cluster has no stick parameters.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, sigmoid};

/// Largest double strictly below one; spike probabilities are kept in
/// `[f64::MIN_POSITIVE, PSPIKE_MAX]`.
const PSPIKE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbConfig {
    /// DP concentration.
    pub alpha: f64,
    /// Slab variance of the base measure.
    pub sigma2: f64,
    /// Spike weight of the base measure.
    pub w: f64,
    /// Truncation level (number of clusters).
    pub truncation: usize,
    /// Stop when the max absolute change of the assignment matrix is at most this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Starting assignment matrix.
    #[serde(default)]
    pub init: Init,
}

/// How the assignment matrix is initialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Rows drawn from a flat Dirichlet.
    Random,
    /// Unit-variance Gaussian responsibilities around `T` centers, one drawn
    /// uniformly from each of `T` equal slices of `[min y, max y]`, ordered
    /// by distance from the median of `y`.
    #[default]
    Grid,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Init::Random),
            "grid" => Ok(Init::Grid),
            other => Err(Error::InvalidInput(format!(
                "unknown init '{other}', expected random or grid"
            ))),
        }
    }
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            sigma2: 16.0,
            w: 0.9,
            truncation: 20,
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
            init: Init::Grid,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be > 0, got {}", self.sigma2));
        }
        if !(self.w > 0.0 && self.w < 1.0) {
            return bad(format!("w must lie in (0, 1), got {}", self.w));
        }
        if self.truncation < 2 {
            return bad(format!("truncation must be >= 2, got {}", self.truncation));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        Ok(())
    }
}

/// Variational posterior after a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct VbState {
    /// `p × T` row-stochastic assignment probabilities.
    pub phi: Array2<f64>,
    pub m: Vec<f64>,
    pub tau2: Vec<f64>,
    pub pspike: Vec<f64>,
    /// Beta parameters of the first `T - 1` sticks.
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl VbState {
    pub fn truncation(&self) -> usize {
        self.m.len()
    }

    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.nrows() == 0
    }
}

/// Per-cluster atom parameters `(m_t, τ²_t, p_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub m: Vec<f64>,
    pub tau2: Vec<f64>,
    pub pspike: Vec<f64>,
}

/// Stick expectations `E log V_t` and `E log(1 - V_t)` for all `T` clusters.
/// The final slot is `(0, 0)` because `V_T = 1`.
pub fn expected_log_sticks(gamma1: &[f64], gamma2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if gamma1.len() != gamma2.len() {
        return Err(Error::DimensionMismatch {
            what: "stick parameters",
            expected: gamma1.len(),
            found: gamma2.len(),
        });
    }
    let t = gamma1.len() + 1;
    let mut elogv = vec![0.0; t];
    let mut elog1mv = vec![0.0; t];
    for (i, (&a, &b)) in gamma1.iter().zip(gamma2).enumerate() {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!(
                "Beta parameters must be positive, got ({a}, {b}) at stick {i}"
            )));
        }
        let total = digamma(a + b)?;
        elogv[i] = digamma(a)? - total;
        elog1mv[i] = digamma(b)? - total;
    }
    Ok((elogv, elog1mv))
}

/// Column masses `S_t = Σ_k φ_kt` and weighted sums `W_t = Σ_k φ_kt Y_k`.
fn column_moments(phi: &Array2<f64>, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = phi.ncols();
    let mut s = vec![0.0; t];
    let mut w = vec![0.0; t];
    for (row, &yk) in phi.rows().into_iter().zip(y) {
        for ((st, wt), &f) in s.iter_mut().zip(w.iter_mut()).zip(row.iter()) {
            *st += f;
            *wt += f * yk;
        }
    }
    (s, w)
}

/// Closed-form updates of the atom factors given the assignments.
pub fn update_cluster_params(phi: &Array2<f64>, y: &[f64], cfg: &VbConfig) -> ClusterParams {
    let (s, w) = column_moments(phi, y);
    cluster_params_from_moments(&s, &w, cfg)
}

fn cluster_params_from_moments(s: &[f64], w: &[f64], cfg: &VbConfig) -> ClusterParams {
    let prior_logit = (cfg.w / (1.0 - cfg.w)).ln();
    let t = s.len();
    let mut params = ClusterParams {
        m: Vec::with_capacity(t),
        tau2: Vec::with_capacity(t),
        pspike: Vec::with_capacity(t),
    };
    for (&st, &wt) in s.iter().zip(w) {
        let denom = cfg.sigma2 * st + 1.0;
        params.m.push(cfg.sigma2 * wt / denom);
        params.tau2.push(cfg.sigma2 / denom);
        let logit = prior_logit + 0.5 * denom.ln() - cfg.sigma2 * wt * wt / (2.0 * denom);
        params
            .pspike
            .push(sigmoid(logit).clamp(f64::MIN_POSITIVE, PSPIKE_MAX));
    }
    params
}

/// Beta parameters of the sticks: `γ1_t = 1 + S_t`, `γ2_t = α + Σ_{j>t} S_j`.
pub fn update_stick_params(phi: &Array2<f64>, cfg: &VbConfig) -> (Vec<f64>, Vec<f64>) {
    let t = phi.ncols();
    let mut s = vec![0.0; t];
    for row in phi.rows() {
        for (st, &f) in s.iter_mut().zip(row.iter()) {
            *st += f;
        }
    }
    stick_params_from_mass(&s, cfg)
}

fn stick_params_from_mass(s: &[f64], cfg: &VbConfig) -> (Vec<f64>, Vec<f64>) {
    let t = s.len();
    let mut gamma1 = Vec::with_capacity(t - 1);
    let mut gamma2 = vec![0.0; t - 1];
    let mut tail = 0.0;
    for i in (0..t - 1).rev() {
        tail += s[i + 1];
        gamma2[i] = cfg.alpha + tail;
    }
    for &st in &s[..t - 1] {
        gamma1.push(1.0 + st);
    }
    (gamma1, gamma2)
}

/// Categorical assignment update: `φ_kt ∝ exp(S_kt)` with
/// `S_kt = E log V_t + Σ_{i<t} E log(1 - V_i) + (1 - p_t) m_t Y_k - ½ (1 - p_t)(m_t² + τ²_t)`.
pub fn update_assignments(
    params: &ClusterParams,
    elogv: &[f64],
    elog1mv: &[f64],
    y: &[f64],
) -> Array2<f64> {
    let mut phi = Array2::zeros((y.len(), params.m.len()));
    write_assignments(params, elogv, elog1mv, y, &mut phi, None);
    phi
}

/// Writes the assignment update into `out`. With `previous`, returns the
/// max absolute change against it.
fn write_assignments(
    params: &ClusterParams,
    elogv: &[f64],
    elog1mv: &[f64],
    y: &[f64],
    out: &mut Array2<f64>,
    previous: Option<&Array2<f64>>,
) -> f64 {
    let t = params.m.len();
    let mut offset = Vec::with_capacity(t);
    let mut slope = Vec::with_capacity(t);
    let mut cum = 0.0;
    for i in 0..t {
        let slab = 1.0 - params.pspike[i];
        let m = params.m[i];
        offset.push(elogv[i] + cum - 0.5 * slab * (m * m + params.tau2[i]));
        slope.push(slab * m);
        cum += elog1mv[i];
    }

    let mut delta = 0.0f64;
    for (k, (mut row, &yk)) in out.rows_mut().into_iter().zip(y).enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        let mut max = f64::NEG_INFINITY;
        for ((r, &o), &s) in row.iter_mut().zip(&offset).zip(&slope) {
            *r = o + s * yk;
            max = max.max(*r);
        }
        softmax_in_place(row, max);
        if let Some(prev) = previous {
            for (a, b) in row.iter().zip(prev.row(k)) {
                delta = delta.max((a - b).abs());
            }
        }
    }
    delta
}

fn softmax_in_place(row: &mut [f64], max: f64) {
    let mut total = 0.0;
    for r in row.iter_mut() {
        *r = (*r - max).exp();
        total += *r;
    }
    for r in row.iter_mut() {
        *r /= total;
    }
}

/// Starting assignments for `y` under `cfg.init`.
pub fn initial_assignments(y: &[f64], cfg: &VbConfig) -> Array2<f64> {
    match cfg.init {
        Init::Random => init_assignments(y.len(), cfg.truncation, cfg.seed),
        Init::Grid => grid_assignments(y, cfg.truncation, cfg.seed),
    }
}

/// Gaussian responsibilities around seeded stratified centers spanning `y`.
pub fn grid_assignments(y: &[f64], truncation: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let width = (hi - lo) / truncation as f64;
    let mut centers: Vec<f64> = (0..truncation)
        .map(|i| lo + (i as f64 + rng.random::<f64>()) * width)
        .collect();
    centers.sort_by(|a, b| (a - median).abs().total_cmp(&(b - median).abs()));

    let mut phi = Array2::zeros((y.len(), truncation));
    for (mut row, &yk) in phi.rows_mut().into_iter().zip(y) {
        let row = row.as_slice_mut().expect("standard layout");
        let mut max = f64::NEG_INFINITY;
        for (r, &c) in row.iter_mut().zip(&centers) {
            *r = -0.5 * (yk - c) * (yk - c);
            max = max.max(*r);
        }
        softmax_in_place(row, max);
    }
    phi
}

/// Seeded flat-Dirichlet rows (normalized unit exponentials).
pub fn init_assignments(p: usize, truncation: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = Array2::zeros((p, truncation));
    for mut row in phi.rows_mut() {
        let mut total = 0.0;
        for r in row.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *r = e;
            total += e;
        }
        row.mapv_inplace(|v| v / total);
    }
    phi
}

/// Stepwise driver for the coordinate-ascent loop.
#[derive(Debug, Clone)]
pub struct VbEngine<'a> {
    y: &'a [f64],
    cfg: VbConfig,
    phi: Array2<f64>,
    scratch: Array2<f64>,
    iterations: usize,
    converged: bool,
}

impl<'a> VbEngine<'a> {
    /// Engine with the seeded initialization selected by `cfg.init`.
    pub fn new(y: &'a [f64], cfg: &VbConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "y", index });
        }
        if y.is_empty() {
            return Err(Error::InvalidInput("empty observation vector".into()));
        }
        let phi = initial_assignments(y, cfg);
        Self::with_assignments(y, cfg, phi)
    }

    /// Engine starting from a caller-supplied assignment matrix.
    pub fn with_assignments(y: &'a [f64], cfg: &VbConfig, phi: Array2<f64>) -> Result<Self> {
        cfg.validate()?;
        if y.is_empty() {
            return Err(Error::InvalidInput("empty observation vector".into()));
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "y", index });
        }
        if phi.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "assignment rows",
                expected: y.len(),
                found: phi.nrows(),
            });
        }
        if phi.ncols() < 2 {
            return Err(Error::InvalidInput("need at least two clusters".into()));
        }
        let mut cfg = *cfg;
        cfg.truncation = phi.ncols();
        Ok(Self {
            y,
            cfg,
            phi: phi.as_standard_layout().into_owned(),
            scratch: Array2::zeros((0, 0)),
            iterations: 0,
            converged: false,
        })
    }

    /// One full update cycle; returns the max absolute change in `Φ`.
    pub fn step(&mut self) -> f64 {
        let (s, w) = column_moments(&self.phi, self.y);
        let params = cluster_params_from_moments(&s, &w, &self.cfg);
        let (gamma1, gamma2) = stick_params_from_mass(&s, &self.cfg);
        let (elogv, elog1mv) = expected_log_sticks(&gamma1, &gamma2)
            .expect("stick parameters are >= 1 by construction");
        let mut next = std::mem::take(&mut self.scratch);
        if next.dim() != self.phi.dim() {
            next = Array2::zeros(self.phi.dim());
        }
        let delta = write_assignments(
            &params,
            &elogv,
            &elog1mv,
            self.y,
            &mut next,
            Some(&self.phi),
        );
        self.scratch = std::mem::replace(&mut self.phi, next);
        self.iterations += 1;
        if delta <= self.cfg.tol {
            self.converged = true;
        }
        delta
    }

    pub fn run(mut self) -> VbState {
        while !self.converged && self.iterations < self.cfg.max_iter {
            self.step();
        }
        self.state()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn assignments(&self) -> &Array2<f64> {
        &self.phi
    }

    /// Snapshot with atom and stick parameters recomputed from the current `Φ`.
    pub fn state(&self) -> VbState {
        let params = update_cluster_params(&self.phi, self.y, &self.cfg);
        let (gamma1, gamma2) = update_stick_params(&self.phi, &self.cfg);
        VbState {
            phi: self.phi.clone(),
            m: params.m,
            tau2: params.tau2,
            pspike: params.pspike,
            gamma1,
            gamma2,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Fit the variational posterior to `y`. Deterministic in `(y, cfg)`.
pub fn vb_fit(y: &[f64], cfg: &VbConfig) -> Result<VbState> {
    Ok(VbEngine::new(y, cfg)?.run())
}

/// One further update cycle applied to a fitted state; returns the new
/// assignments. Used to check the fixed-point property.
pub fn refine_once(state: &VbState, y: &[f64]) -> Result<Array2<f64>> {
    let (elogv, elog1mv) = expected_log_sticks(&state.gamma1, &state.gamma2)?;
    let params = ClusterParams {
        m: state.m.clone(),
        tau2: state.tau2.clone(),
        pspike: state.pspike.clone(),
    };
    Ok(update_assignments(&params, &elogv, &elog1mv, y))
}
