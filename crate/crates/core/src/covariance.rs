//! Structured covariance descriptors that avoid materializing `p × p`
//! matrices for the large designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    /// Independent features with the given variances.
    Diagonal(Vec<f64>),
    /// `s2 * R` with `R_ij = rho^|i - j|`.
    Ar1 { p: usize, rho: f64, s2: f64 },
    /// Unit-variance factor model: the noise of feature `j` is
    /// `(Z_j + Σ_r L_jr F_r) / sqrt(1 + Σ_r L_jr²)` with independent
    /// unit-variance `Z` and factors `F`. `loadings[r]` is column `r` of `L`.
    Factor { loadings: Vec<Vec<f64>> },
    /// Explicit matrix, for small `p`.
    Dense(DMatrix<f64>),
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Covariance {
    pub fn ar1(p: usize, rho: f64, s2: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rho must lie in (-1, 1), got {rho}"
            )));
        }
        if !(s2 > 0.0) {
            return Err(Error::InvalidInput(format!("s2 must be > 0, got {s2}")));
        }
        Ok(Covariance::Ar1 { p, rho, s2 })
    }

    pub fn factor(loadings: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = loadings.first() {
            for col in &loadings {
                check_len("factor loadings", first.len(), col.len())?;
            }
        } else {
            return Err(Error::InvalidInput(
                "factor model needs at least one factor".into(),
            ));
        }
        Ok(Covariance::Factor { loadings })
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Ar1 { p, .. } => *p,
            Covariance::Factor { loadings } => loadings[0].len(),
            Covariance::Dense(m) => m.nrows(),
        }
    }

    fn factor_scales(loadings: &[Vec<f64>]) -> Vec<f64> {
        let p = loadings[0].len();
        (0..p)
            .map(|j| (1.0 + loadings.iter().map(|c| c[j] * c[j]).sum::<f64>()).sqrt())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Ar1 { p, s2, .. } => vec![*s2; *p],
            Covariance::Factor { loadings } => vec![1.0; loadings[0].len()],
            Covariance::Dense(m) => m.diagonal().iter().copied().collect(),
        }
    }

    /// `Σ v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("covariance operand", self.dim(), v.len())?;
        Ok(match self {
            Covariance::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Covariance::Ar1 { rho, s2, .. } => {
                // (R v)_i = forward_i + backward_i - v_i with geometric prefix scans.
                let n = v.len();
                let mut fwd = vec![0.0; n];
                let mut acc = 0.0;
                for i in 0..n {
                    acc = v[i] + rho * acc;
                    fwd[i] = acc;
                }
                let mut out = vec![0.0; n];
                acc = 0.0;
                for i in (0..n).rev() {
                    acc = v[i] + rho * acc;
                    out[i] = s2 * (fwd[i] + acc - v[i]);
                }
                out
            }
            Covariance::Factor { loadings } => {
                let c = Self::factor_scales(loadings);
                let scaled: Vec<f64> = v.iter().zip(&c).map(|(a, s)| a / s).collect();
                let proj: Vec<f64> = loadings.iter().map(|col| dot(col, &scaled)).collect();
                (0..v.len())
                    .map(|j| {
                        let low_rank: f64 =
                            loadings.iter().zip(&proj).map(|(col, f)| col[j] * f).sum();
                        (scaled[j] + low_rank) / c[j]
                    })
                    .collect()
            }
            Covariance::Dense(m) => (m * DVector::from_column_slice(v))
                .iter()
                .copied()
                .collect(),
        })
    }

    /// `uᵗ Σ v`.
    pub fn quadratic_form(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len("quadratic form", self.dim(), u.len())?;
        Ok(dot(u, &self.matvec(v)?))
    }

    /// `dᵗ Σ⁻¹ d`.
    pub fn inverse_quadratic_form(&self, d: &[f64]) -> Result<f64> {
        check_len("inverse quadratic form", self.dim(), d.len())?;
        match self {
            Covariance::Diagonal(var) => {
                if var.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::SingularCovariance);
                }
                Ok(d.iter().zip(var).map(|(x, s)| x * x / s).sum())
            }
            Covariance::Ar1 { rho, s2, .. } => {
                // R⁻¹ is tridiagonal: diag (1, 1+ρ², ..., 1+ρ², 1) / (1-ρ²), off-diagonal -ρ/(1-ρ²).
                let n = d.len();
                let sq: f64 = d.iter().map(|x| x * x).sum();
                let interior: f64 = if n > 2 {
                    d[1..n - 1].iter().map(|x| x * x).sum()
                } else {
                    0.0
                };
                let cross: f64 = d.windows(2).map(|w| w[0] * w[1]).sum();
                Ok((sq + rho * rho * interior - 2.0 * rho * cross) / ((1.0 - rho * rho) * s2))
            }
            Covariance::Factor { loadings } => {
                // Woodbury on C⁻¹ (I + L Lᵗ) C⁻¹.
                let c = Self::factor_scales(loadings);
                let dt: Vec<f64> = d.iter().zip(&c).map(|(x, s)| x * s).collect();
                let r = loadings.len();
                let cap = DMatrix::from_fn(r, r, |a, b| {
                    dot(&loadings[a], &loadings[b]) + if a == b { 1.0 } else { 0.0 }
                });
                let proj = DVector::from_iterator(r, loadings.iter().map(|col| dot(col, &dt)));
                let chol = cap.cholesky().ok_or(Error::SingularCovariance)?;
                let solved = chol.solve(&proj);
                Ok(dot(&dt, &dt) - proj.dot(&solved))
            }
            Covariance::Dense(m) => {
                let chol = m.clone().cholesky().ok_or(Error::SingularCovariance)?;
                let dv = DVector::from_column_slice(d);
                Ok(dv.dot(&chol.solve(&dv)))
            }
        }
    }

    /// Largest eigenvalue of the correlation matrix `D^{-1/2} Σ D^{-1/2}`.
    pub fn max_correlation_eigenvalue(&self) -> Result<f64> {
        let p = self.dim();
        match self {
            Covariance::Diagonal(_) => return Ok(1.0),
            Covariance::Ar1 { rho, .. } if *rho == 0.0 => return Ok(1.0),
            _ => {}
        }
        let diag = self.diagonal();
        if diag.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::SingularCovariance);
        }
        let inv_sd: Vec<f64> = diag.iter().map(|s| 1.0 / s.sqrt()).collect();
        let corr_mul = |v: &[f64]| -> Result<Vec<f64>> {
            let scaled: Vec<f64> = v.iter().zip(&inv_sd).map(|(a, s)| a * s).collect();
            Ok(self
                .matvec(&scaled)?
                .iter()
                .zip(&inv_sd)
                .map(|(a, s)| a * s)
                .collect())
        };
        // Power iteration with an alternating component so negative
        // correlations are covered too.
        let mut v: Vec<f64> = (0..p)
            .map(|i| 1.0 + 0.5 * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = corr_mul(&v)?;
            let next = dot(&v, &w);
            let norm = dot(&w, &w).sqrt();
            if norm == 0.0 {
                return Err(Error::SingularCovariance);
            }
            v = w.into_iter().map(|x| x / norm).collect();
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                return Ok(next);
            }
            lambda = next;
        }
        Ok(lambda)
    }

    /// Explicit matrix; intended for tests and small `p`.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut m = DMatrix::zeros(p, p);
        let mut e = vec![0.0; p];
        for j in 0..p {
            e[j] = 1.0;
            let col = self.matvec(&e)?;
            e[j] = 0.0;
            m.column_mut(j).copy_from_slice(&col);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_ar1(p: usize, rho: f64, s2: f64) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| s2 * rho.powi((i as i32 - j as i32).abs()))
    }

    fn random_vec(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
        (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn ar1_unit_vectors() {
        let cov = Covariance::ar1(5, 0.37, 1.0).unwrap();
        let e1 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(cov.quadratic_form(&e1, &e1).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.quadratic_form(&e1, &e2).unwrap(), 0.37, epsilon = 1e-15);
    }

    #[test]
    fn ar1_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &rho in &[0.3, -0.6, 0.9] {
            let cov = Covariance::ar1(50, rho, 2.5).unwrap();
            let dense = dense_ar1(50, rho, 2.5);
            let u = random_vec(&mut rng, 50);
            let v = random_vec(&mut rng, 50);
            let expected =
                DVector::from_vec(u.clone()).dot(&(&dense * DVector::from_vec(v.clone())));
            assert_abs_diff_eq!(
                cov.quadratic_form(&u, &v).unwrap(),
                expected,
                epsilon = 1e-10
            );

            let inv = dense.clone().cholesky().unwrap().inverse();
            let dv = DVector::from_vec(u.clone());
            let expected = dv.dot(&(&inv * &dv));
            assert_abs_diff_eq!(
                cov.inverse_quadratic_form(&u).unwrap(),
                expected,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn ar1_zero_rho_is_diagonal() {
        let d: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = Covariance::ar1(20, 0.0, 12.5).unwrap();
        let b = Covariance::Diagonal(vec![12.5; 20]);
        assert_abs_diff_eq!(
            a.inverse_quadratic_form(&d).unwrap(),
            b.inverse_quadratic_form(&d).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn factor_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = 30;
        let loadings: Vec<Vec<f64>> = (0..4)
            .map(|r| {
                (0..p)
                    .map(|j| {
                        if r == 3 || j / 10 == r {
                            rng.random_range(0.0..0.4)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let cov = Covariance::factor(loadings.clone()).unwrap();
        // Explicit construction of the normalized matrix.
        let dense = DMatrix::from_fn(p, p, |i, j| {
            let raw: f64 =
                loadings.iter().map(|c| c[i] * c[j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            let ci = (1.0 + loadings.iter().map(|c| c[i] * c[i]).sum::<f64>()).sqrt();
            let cj = (1.0 + loadings.iter().map(|c| c[j] * c[j]).sum::<f64>()).sqrt();
            raw / (ci * cj)
        });
        for j in 0..p {
            assert_abs_diff_eq!(dense[(j, j)], 1.0, epsilon = 1e-14);
        }
        let u = random_vec(&mut rng, p);
        let v = random_vec(&mut rng, p);
        let expected = DVector::from_vec(u.clone()).dot(&(&dense * DVector::from_vec(v.clone())));
        assert_abs_diff_eq!(
            cov.quadratic_form(&u, &v).unwrap(),
            expected,
            epsilon = 1e-10
        );
        let dv = DVector::from_vec(u.clone());
        let expected = dv.dot(&(dense.clone().cholesky().unwrap().inverse() * &dv));
        assert_abs_diff_eq!(
            cov.inverse_quadratic_form(&u).unwrap(),
            expected,
            epsilon = 1e-9
        );

        let eig = dense.symmetric_eigen().eigenvalues.max();
        assert_abs_diff_eq!(
            cov.max_correlation_eigenvalue().unwrap(),
            eig,
            epsilon = 1e-7
        );
    }

    #[test]
    fn dense_singular_is_error() {
        let cov = Covariance::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(matches!(
            cov.inverse_quadratic_form(&[1.0, 0.0]),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn ar1_eigenvalue_matches_dense() {
        let dense = dense_ar1(40, 0.5, 1.0);
        let eig = dense.symmetric_eigen().eigenvalues.max();
        let cov = Covariance::ar1(40, 0.5, 3.0).unwrap();
        assert_abs_diff_eq!(
            cov.max_correlation_eigenvalue().unwrap(),
            eig,
            epsilon = 1e-6
        );
        assert!(eig <= 3.0);
    }

    #[test]
    fn dimension_mismatch() {
        let cov = Covariance::Diagonal(vec![1.0; 3]);
        assert!(cov.quadratic_form(&[1.0; 3], &[1.0; 2]).is_err());
        assert!(Covariance::ar1(3, 1.0, 1.0).is_err());
    }
}
