//! Behavioral (Page-matrix) prediction from noisy data, certified prediction
//! error bounds, observability-index identification and minmax robust
//! regulation with constraint tightening.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lti;
pub mod mimo;
pub mod obs_index;
pub mod page;
pub mod predictor;
pub mod presets;
pub mod qp;
pub mod robust;

pub use error::{Error, Result};
pub use lti::{NoiseModel, StateSpace, Trajectory};
pub use obs_index::{identify_observability_index, ObsIndexReport};
pub use page::{BehavioralData, RecentTrajectory};
pub use predictor::{build_predictor, check_small_noise, predict, Prediction, PredictorState};
