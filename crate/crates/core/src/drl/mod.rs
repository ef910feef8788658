//! Online reflection adaptation under imperfect CSI: deviation states,
//! phase-flip actions, quantile-regression and Q-learning tables.

pub mod action;
pub mod contraction;
pub mod env;
pub mod quantile;
pub mod reduce;
pub mod state;
pub mod table;

pub use action::{action_decode, action_encode, PhaseFlipAction};
pub use quantile::{qr_loss, quantile_projection, wasserstein_d1};
pub use state::{compute_state, DeviationState};
pub use table::{qlearning_step, qrdrl_step, QuantileTable, ScalarQTable};
pub use env::{ActionSet, EpisodeSetup, Learner, LearnerKind};
pub use reduce::{reduce_action_space, ActionReduction};
