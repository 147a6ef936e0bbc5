//! Error type shared by every module of the library.

use thiserror::Error;

/// Errors produced while building models or evaluating distributions.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A generator row does not sum to zero, or an off-diagonal entry is negative.
    #[error("generator is not conservative: {0}")]
    NonConservativeGenerator(String),

    /// Some fluid rate c_i is exactly zero.
    #[error("rate c[{0}] is zero; every phase must strictly increase or decrease the level")]
    ZeroRate(usize),

    /// The phase generator is not irreducible, or one of the sign classes is empty.
    #[error("phase process is not irreducible: {0}")]
    NotIrreducible(String),

    /// Horizon must be strictly positive.
    #[error("invalid horizon: theta = {0} (must be > 0)")]
    InvalidHorizon(f64),

    /// Stage count must be at least one.
    #[error("invalid stage count: L = {0} (must be >= 1)")]
    InvalidStages(usize),

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The Sylvester system for a stage block is singular.
    #[error("singular Sylvester system: {0}")]
    SingularSylvester(String),

    /// A linear system that should be invertible is singular.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// Matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Matrix exponential displacement must be nonnegative.
    #[error("negative displacement: x = {0}")]
    NegativeDisplacement(f64),

    /// Circulant embedding size must cover the stage count.
    #[error("invalid embedding size K = {k} (need K >= L = {l})")]
    InvalidEmbedding { k: usize, l: usize },

    /// An approximate exponential produced an entry too negative to clamp.
    #[error("entry {value:.3e} below clamping threshold in approximate exponential")]
    ExcessiveNegativeEntry { value: f64 },

    /// Stage index outside 1..=L.
    #[error("stage {k} out of range 1..={l}")]
    StageOutOfRange { k: usize, l: usize },

    /// Level arguments violate the operation's domain.
    #[error("invalid levels: {0}")]
    InvalidLevels(String),

    /// Initial distribution of a phase-type representation is invalid.
    #[error("invalid initial distribution: {0}")]
    InvalidInitialDistribution(String),

    /// The transient-generator block of a phase-type representation is invalid.
    #[error("invalid subgenerator: {0}")]
    InvalidSubgenerator(String),

    /// A simulation plan is unusable.
    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),

    /// Empirical estimation requires at least one path.
    #[error("empty sample")]
    EmptySample,

    /// Analytic and empirical grids do not match.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A phase index is outside the model.
    #[error("phase {phase} out of range for {phases} phases")]
    PhaseOutOfRange { phase: usize, phases: usize },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
