//! Empirical Bayes estimation of a sparse normalized mean difference with a
//! Dirichlet process mixture prior, and the independence-rule linear
//! classifier it induces.
//!
//! The pipeline is: [`summary::summarize`] labeled data into the normalized
//! difference `y`, fit the variational posterior ([`vb::vb_fit`], optionally
//! in folds with [`prior::batch_fit`]), read off the MAP discrete prior,
//! shrink `y` by its posterior mean, and classify with
//! [`classifier::LinearClassifier`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod io;
pub mod prior;
pub mod seeds;
pub mod sim;
pub mod special;
pub mod summary;
pub mod vb;

pub use classifier::{
    build_classifier, empirical_error, optimal_error, theoretical_error, LinearClassifier,
    TruePopulation,
};
pub use covariance::Covariance;
pub use error::{Error, Result};
pub use prior::{
    average_priors, batch_fit, map_prior, posterior_mean_estimate, posterior_zero_weights,
    sparse_threshold, DiscretePrior, EtaEstimate, Method,
};
pub use summary::{summarize, ClassLabel, LabeledDataset, SummaryStats};
pub use vb::{vb_fit, VbConfig, VbState};
