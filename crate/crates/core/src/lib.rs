//! Finite-horizon distributions of Markov-modulated fluid models.
//!
//! The library answers questions of the form "where is the fluid level at
//! time theta, how low and how high did it get on the way, and jointly?"
//! for two processes driven by the same phase chain:
//!
//! - the free *random walk* `X(t)`, which may go negative, and
//! - the *fluid queue* `Z(t)`, reflected at level zero.
//!
//! The deterministic horizon `theta` is replaced by an Erlang random
//! horizon with `L` stages of rate `nu = L / theta` (the horizon sharpens
//! as `L` grows). Watching which Erlang stage is running when events happen
//! turns the integral equations of the deterministic-time problem into
//! linear and quadratic matrix equations:
//!
//! - [`stage_matrices`] solves the stage-split first-return equations
//!   (one Riccati solve, then one Sylvester solve per stage) and builds the
//!   record-process generators,
//! - [`toeplitz_expm`] exponentiates the block-triangular block-Toeplitz
//!   record generators by three interchangeable methods,
//! - [`rw_dist`] evaluates level/extremum/joint distributions of the walk
//!   and the bilateral phase-type density,
//! - [`queue_dist`] does the same for the reflected queue, including the
//!   two-boundary first-passage families,
//! - [`mc_oracle`] is an exact event-driven simulator used to cross-check
//!   every analytic output.

pub mod error;
pub mod linalg;
pub mod mc_oracle;
pub mod model;
pub mod queue_dist;
pub mod rw_dist;
pub mod stage_matrices;
pub mod toeplitz_expm;

pub use error::{Error, Result};
pub use model::{ErlangClock, FluidModel, PhaseSet, StageMatrixFamily, StageVectorFamily};
pub use stage_matrices::{
    record_generators, solve_riccati_infinite, solve_stage_matrices, RecordGenerators,
    ReturnMatrices,
};

use nalgebra::{DMatrix, DVector};

/// The bundled two-regime example: an asset value that drifts in a calm
/// environment (phases 1-2, rates +2/-1) and swings hard in an excited
/// environment (phases 3-4, rates +10/-10).
///
/// `p` is the probability that the jump into the excited environment lands
/// in its up-phase; `0.5` is the symmetric default.
pub fn two_regime_model(p: f64) -> Result<FluidModel> {
    two_regime_model_with(1.0, 0.25, 1.0, 7.0, p)
}

/// Fully parameterized variant of [`two_regime_model`].
///
/// `lambda` flips direction inside the calm regime, `omega` enters the
/// excited regime, `mu` leaves it, `beta` flips direction inside it.
pub fn two_regime_model_with(
    lambda: f64,
    omega: f64,
    mu: f64,
    beta: f64,
    p: f64,
) -> Result<FluidModel> {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            -lambda - omega,
            lambda,
            p * omega,
            (1.0 - p) * omega,
            lambda,
            -lambda - omega,
            p * omega,
            (1.0 - p) * omega,
            mu,
            0.0,
            -mu - beta,
            beta,
            0.0,
            mu,
            beta,
            -mu - beta,
        ],
    );
    let c = DVector::from_vec(vec![2.0, -1.0, 10.0, -10.0]);
    FluidModel::new(a, c)
}
