//! Near maximum-likelihood detection for uplink massive MIMO receivers with
//! one-bit ADCs and square QAM users.
//!
//! The detector works on the real-valued lifting of the channel. Phase I
//! minimizes the convex negative log-likelihood over the constellation's
//! bounding box with an accelerated projected gradient method; Phase II
//! re-tests the least reliable coordinates against their second-nearest
//! levels. Exhaustive ML and a one-bit zero-forcing baseline are provided for
//! comparison, along with a Monte Carlo symbol-error-rate harness.

pub mod channel;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod oracle;
pub mod refine;
pub mod solver;

pub use channel::{OneBitObservation, RealizedSystem};
pub use constellation::{PamConstellation, QamConstellation};
pub use error::{Error, Result};
pub use harness::{DetectorSpec, ExperimentConfig, SerRecord, Sweep};
pub use likelihood::LikelihoodProblem;
pub use refine::{two_phase_detect, TwoPhaseOutput};
pub use solver::{solve_phase1, SolverConfig};
