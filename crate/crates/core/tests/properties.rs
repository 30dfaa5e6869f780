use ndarray::Array2;
use proptest::prelude::*;

use ebdp::io::ModelFile;
use ebdp::prior::{
    average_priors, posterior_mean_estimate, sparse_threshold, DiscretePrior, Method,
};
use ebdp::summary::{summarize, ClassLabel, LabeledDataset};
use ebdp::vb::{update_cluster_params, vb_fit, Init, VbConfig, VbEngine};

fn dataset(rows: Vec<Vec<f64>>, n1: usize) -> LabeledDataset {
    let p = rows[0].len();
    let labels = (0..rows.len())
        .map(|i| {
            if i < n1 {
                ClassLabel::One
            } else {
                ClassLabel::Two
            }
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n = flat.len() / p;
    LabeledDataset::new(Array2::from_shape_vec((n, p), flat).unwrap(), labels).unwrap()
}

/// `(rows, n1)` with two to six rows per class and one to eight features.
fn labeled_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..8, 2usize..6, 2usize..6).prop_flat_map(|(p, n1, n2)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0..10.0f64, p), n1 + n2),
            Just(n1),
        )
    })
}

fn prior_strategy() -> impl Strategy<Value = DiscretePrior> {
    (
        0.01..1.0f64,
        prop::collection::vec((-5.0..5.0f64, 0.01..1.0f64), 0..5),
    )
        .prop_map(|(w0, rest)| {
            let total = w0 + rest.iter().map(|r| r.1).sum::<f64>();
            let rest = rest.into_iter().map(|(a, w)| (a, w / total)).collect();
            DiscretePrior::from_parts(w0 / total, rest).unwrap()
        })
}

fn vb_input() -> impl Strategy<Value = (Vec<f64>, VbConfig)> {
    (
        prop::collection::vec(-6.0..6.0f64, 5..60),
        0.2..4.0f64,
        0.5..20.0f64,
        0.05..0.95f64,
        2usize..8,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(y, alpha, sigma2, w, truncation, seed, grid)| {
            let cfg = VbConfig {
                alpha,
                sigma2,
                w,
                truncation,
                tol: 1e-8,
                max_iter: 60,
                seed,
                init: if grid { Init::Grid } else { Init::Random },
            };
            (y, cfg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_ignores_row_order_within_class((rows, n1) in labeled_rows(), rot in 0usize..6) {
        let base = summarize(&dataset(rows.clone(), n1)).unwrap();
        let mut shuffled = rows.clone();
        let r1 = rot % n1;
        shuffled[..n1].rotate_left(r1);
        let n2 = rows.len() - n1;
        shuffled[n1..].rotate_right(rot % n2);
        let other = summarize(&dataset(shuffled, n1)).unwrap();
        for (a, b) in base.y.iter().zip(&other.y) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        for (a, b) in base.var_hat.iter().zip(&other.var_hat) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn swapping_labels_negates_the_difference((rows, n1) in labeled_rows()) {
        let base = summarize(&dataset(rows.clone(), n1)).unwrap();
        let mut swapped = rows[n1..].to_vec();
        swapped.extend_from_slice(&rows[..n1]);
        let other = summarize(&dataset(swapped, rows.len() - n1)).unwrap();
        for k in 0..base.p {
            prop_assert!((base.y[k] + other.y[k]).abs() <= 1e-9 * (1.0 + base.y[k].abs()));
            prop_assert!((base.mu_hat[k] - other.mu_hat[k]).abs() <= 1e-9 * (1.0 + base.mu_hat[k].abs()));
            prop_assert!((base.var_hat[k] - other.var_hat[k]).abs() <= 1e-9 * base.var_hat[k]);
        }
    }

    #[test]
    fn vb_invariants_hold_every_iteration((y, cfg) in vb_input()) {
        let mut engine = VbEngine::new(&y, &cfg).unwrap();
        for _ in 0..cfg.max_iter {
            let delta = engine.step();
            let state = engine.state();
            for row in state.phi.rows() {
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
            }
            for (&tau2, &s) in state.tau2.iter().zip(state.phi.sum_axis(ndarray::Axis(0)).iter()) {
                prop_assert!(tau2 > 0.0 && tau2 <= cfg.sigma2);
                if s > 0.0 && cfg.sigma2 * s > 1e-12 {
                    prop_assert!(tau2 < cfg.sigma2);
                }
            }
            prop_assert!(state.pspike.iter().all(|p| *p > 0.0 && *p < 1.0));
            prop_assert!(state.gamma1.iter().all(|g| *g >= 1.0));
            prop_assert!(state.gamma2.iter().all(|g| *g >= cfg.alpha));
            if delta <= cfg.tol {
                break;
            }
        }
    }

    #[test]
    fn vb_fit_is_deterministic((y, cfg) in vb_input()) {
        prop_assert_eq!(vb_fit(&y, &cfg).unwrap(), vb_fit(&y, &cfg).unwrap());
    }

    #[test]
    fn spike_probability_falls_as_signal_grows(n in 1usize..20, w1 in 0.0..15.0f64, bump in 0.01..5.0f64) {
        // All n rows sit in cluster 0, so S = n and W = sum of y.
        let cfg = VbConfig { sigma2: 4.0, w: 0.7, truncation: 2, ..VbConfig::default() };
        let mut phi = Array2::zeros((n, 2));
        phi.column_mut(0).fill(1.0);
        let spike = |w: f64| update_cluster_params(&phi, &vec![w / n as f64; n], &cfg).pspike[0];
        let (a, b) = (spike(w1), spike(w1 + bump));
        prop_assert!(b < a || b == f64::MIN_POSITIVE);
    }

    #[test]
    fn zero_weights_are_probabilities(prior in prior_strategy(), y in prop::collection::vec(-30.0..30.0f64, 1..40)) {
        let dp = posterior_mean_estimate(&prior, &y);
        prop_assert!(dp.zero_weight.iter().all(|z| (0.0..=1.0).contains(z)));
        let lo = prior.atoms().iter().cloned().fold(0.0, f64::min);
        let hi = prior.atoms().iter().cloned().fold(0.0, f64::max);
        prop_assert!(dp.values.iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn sparse_support_rule(prior in prior_strategy(), y in prop::collection::vec(-6.0..6.0f64, 1..40), kappa in 0.01..0.99f64) {
        let dp = posterior_mean_estimate(&prior, &y);
        let sdp = sparse_threshold(&dp, kappa).unwrap();
        for k in 0..y.len() {
            if dp.zero_weight[k] > kappa {
                prop_assert_eq!(sdp.values[k], 0.0);
            } else {
                prop_assert_eq!(sdp.values[k], dp.values[k]);
            }
        }
    }

    #[test]
    fn averaging_is_order_free(list in prop::collection::vec(prior_strategy(), 1..6), rot in 0usize..6) {
        let avg = average_priors(&list).unwrap();
        prop_assert!(avg.validate().is_ok());
        let mut rotated = list.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        prop_assert_eq!(average_priors(&rotated).unwrap(), avg);
    }

    #[test]
    fn model_file_json_round_trip((rows, n1) in labeled_rows(), method in 0usize..4) {
        let data = dataset(rows, n1);
        prop_assume!(summarize(&data).is_ok());
        let method = [Method::Dp, Method::SparseDp, Method::HardThresh, Method::SampleMean][method];
        let cfg = VbConfig { truncation: 4, max_iter: 30, ..VbConfig::default() };
        let model = ModelFile::fit(&data, method, &cfg, 1, 0.5).unwrap();
        let back = ModelFile::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &model);
        let (c1, c2) = (model.classifier().unwrap(), back.classifier().unwrap());
        for row in data.features().rows() {
            let x = row.to_vec();
            prop_assert_eq!(c1.score(&x).unwrap(), c2.score(&x).unwrap());
        }
    }
}

/// Relabeling the clusters of the starting point leaves the fitted atoms
/// close to where they were: the occupied cluster means and their masses agree
/// after sorting.
#[test]
fn cluster_relabeling_gives_matching_atoms() {
    let mut y: Vec<f64> = (0..200)
        .map(|k| ((k * 37) % 101) as f64 / 50.0 - 1.0)
        .collect();
    y.extend((0..40).map(|k| 6.0 + ((k * 13) % 17) as f64 / 16.0 - 0.5));
    let cfg = VbConfig {
        truncation: 6,
        max_iter: 2000,
        tol: 1e-9,
        ..VbConfig::default()
    };
    let phi = ebdp::vb::initial_assignments(&y, &cfg);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut permuted = Array2::zeros(phi.dim());
    for (to, &from) in perm.iter().enumerate() {
        permuted.column_mut(to).assign(&phi.column(from));
    }
    let summary = |phi: Array2<f64>| {
        let state = VbEngine::with_assignments(&y, &cfg, phi).unwrap().run();
        let mass = state.phi.sum_axis(ndarray::Axis(0));
        let mut occupied: Vec<(f64, f64)> = state
            .m
            .iter()
            .zip(mass.iter())
            .filter(|(_, s)| **s > 1.0)
            .map(|(m, s)| (*m, *s))
            .collect();
        occupied.sort_by(|a, b| a.0.total_cmp(&b.0));
        occupied
    };
    let (a, b) = (summary(phi), summary(permuted));
    let signal = |v: &[(f64, f64)]| {
        v.iter()
            .filter(|(m, _)| *m > 3.0)
            .map(|(_, s)| s)
            .sum::<f64>()
    };
    let mean_at = |v: &[(f64, f64)]| {
        let (num, den) = v
            .iter()
            .filter(|(m, _)| *m > 3.0)
            .fold((0.0, 0.0), |acc, (m, s)| (acc.0 + m * s, acc.1 + s));
        num / den
    };
    assert!((signal(&a) - 40.0).abs() < 1.0, "{a:?}");
    assert!((signal(&b) - 40.0).abs() < 1.0, "{b:?}");
    assert!((mean_at(&a) - mean_at(&b)).abs() < 1e-3, "{a:?} vs {b:?}");
}
