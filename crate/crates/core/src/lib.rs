//! Control policies that maximize Fisher Information about a scalar parameter
//! of a finite partially observed Markov decision process.

pub mod discretize;
pub mod error;
pub mod experiment;
pub mod fofi;
pub mod inference;
pub mod io;
pub mod model;
pub mod pofi;
pub mod tables;
pub mod via;
pub mod window;

pub use error::{Error, Result};
pub use inference::{
    filter_step, loglikelihood, loglikelihood_model, posterior_update, predict_obs, score_fd, score_fd_vec,
    window_predictive, LogLikelihood, ThetaPosterior,
};
pub use model::{
    apply_randomizer, augment_autoregressive, transition_matrix, validate_model, Augmented, BeliefState,
    ControlSet, EmissionDeps, ModelFamily, ModelParts, ModelStencil, PomdpModel, ThetaDomain, ValidationReport,
    Violation, PROB_FLOOR,
};
pub use window::{HistoryWindow, WindowCodec};
