//! Variational Bayes Gaussian splatting: continual fitting of Gaussian
//! mixtures over position and color with conjugate coordinate ascent.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expfam;
pub mod io;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod render;
pub mod special;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use expfam::{CanonicalNiw, ColorPosterior, Dirichlet, NiwNatural};
pub use model::{
    accumulate_stats, cavi_fit, cavi_fit_observed, compute_assignments, compute_elbo, init_model,
    per_point_log_evidence, streaming_update, ComponentState, DataBatch, HyperParams, InitMode,
    MixtureState, Responsibilities, SufficientStatsDelta,
};
