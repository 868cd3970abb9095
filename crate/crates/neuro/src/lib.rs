//! Minimal reverse-mode differentiable model core.
//!
//! Dense and variational Bayesian dense layers, Hypoexponential and
//! Gaussian likelihood heads, an LSTM cell, a mean-aggregator graph layer,
//! an autoencoder and the Adam optimizer, all on a small tape-based
//! autodiff [`Graph`] over row-major [`Tensor`]s.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod hypoexp;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{
    check_leaf_gradients, check_param_gradients, layer_gradient_suite, relative_error, SuiteResult,
};
pub use graph::{Gradients, Graph, Var};
pub use hypoexp::{
    hypoexp_cdf, hypoexp_log_pdf, hypoexp_nll, hypoexp_pdf, hypoexp_pdf_distinct, HypoexpLogPdf,
};
pub use layers::{
    elbo_loss, Activation, Autoencoder, AutoencoderSpec, BayesianDense, Dense, GaussianHead,
    HypoexpHead, HypoexpOutput, KlMode, LstmCell, Mlp, Noise, SageLayer,
};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NeuroError {
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
