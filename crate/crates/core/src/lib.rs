//! Stochastic MIMO precoding from channel moments.
//!
//! The solvers maximize a lower bound on the long-term weighted sum rate of
//! a multi-cell downlink using only the first and second moments of the
//! fading channels. [`fp::run_algorithm1`] is the matrix fractional
//! programming method; [`fast_fp::run_algorithm2`] replaces its large
//! matrix inversions with a nonhomogeneous quadratic bound.

pub mod channel;
pub mod error;
pub mod fast_fp;
pub mod fp;
pub mod harness;
pub mod linalg;
pub mod network;

pub use channel::{
    analytic_moments, empirical_moments, structured_moments, ChannelMoments, ChannelSampler, FadingModel,
    GaussianFadingModel, NakagamiFadingModel, SecondMoments, StructuredMoments,
};
pub use error::{PrecodingError, Result};
pub use fast_fp::{run_algorithm2, FastAuxState};
pub use fp::{run_algorithm1, AuxState, SolveTrace, StopReason, StopRule};
pub use network::monte_carlo::{monte_carlo_weighted_sum_rate, monte_carlo_weighted_sum_rates, McEstimate};
pub use network::{ChannelRealization, Dims, NetworkConfig, PrecoderSet};
