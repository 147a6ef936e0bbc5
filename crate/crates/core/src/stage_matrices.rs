//! Stage-indexed first-return matrices and record-process generators.
//!
//! With an Erlang clock running, the first-return probabilities of the walk
//! split by the Erlang stage in which the return happens. The stage-0 block
//! solves a rate-shifted Riccati equation; every later block solves a
//! Sylvester equation whose right-hand side collects the already-known
//! blocks. The generators of the record processes (the phase watched at
//! running-minimum or running-maximum epochs) are assembled from the same
//! blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve_nare_minimal, solve_sylvester};
use crate::model::{ErlangClock, FluidModel, PhaseSet, StageMatrixFamily};

/// Residual tolerance for the Riccati/Sylvester solves.
pub const SOLVE_TOL: f64 = 1e-14;
/// Iteration budget for the Riccati Newton iteration.
pub const MAX_ITER: usize = 200;
/// Entries in [-ROUNDOFF_CLAMP, 0) are set to zero after a solve.
const ROUNDOFF_CLAMP: f64 = 1e-12;

/// Stage-split first-return matrices, plus their infinite-horizon limits.
#[derive(Debug, Clone)]
pub struct ReturnMatrices {
    /// Psi^(0)..Psi^(L-1): return from above during stage k (S+ x S-).
    pub psi: StageMatrixFamily,
    /// PsiHat^(0)..PsiHat^(L-1): return from below during stage k (S- x S+).
    pub psi_hat: StageMatrixFamily,
    /// Infinite-horizon return matrix Psi (no clock).
    pub psi_inf: DMatrix<f64>,
    /// Infinite-horizon return matrix PsiHat.
    pub psi_hat_inf: DMatrix<f64>,
}

/// Record-process generators split by stage.
#[derive(Debug, Clone)]
pub struct RecordGenerators {
    /// U^(0)..U^(L-1): downward records (S- x S-).
    pub u: StageMatrixFamily,
    /// UHat^(0)..UHat^(L-1): upward records (S+ x S+).
    pub u_hat: StageMatrixFamily,
}

fn clamp_roundoff(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        if *v < 0.0 && *v > -ROUNDOFF_CLAMP {
            *v = 0.0;
        }
    }
}

/// Coefficient blocks of the walk's return equations at a given kill rate.
struct Coefficients {
    /// C_+^{-1} (A_{++} - nu I)
    ap: DMatrix<f64>,
    /// |C_-|^{-1} (A_{--} - nu I)
    am: DMatrix<f64>,
    /// |C_-|^{-1} A_{-+}
    cm: DMatrix<f64>,
    /// C_+^{-1} A_{+-}
    cp: DMatrix<f64>,
    /// C_+^{-1}
    cp_inv: DMatrix<f64>,
    /// |C_-|^{-1}
    cm_inv: DMatrix<f64>,
}

impl Coefficients {
    fn new(model: &FluidModel, nu: f64) -> Self {
        let ip = DMatrix::identity(model.n_plus(), model.n_plus());
        let im = DMatrix::identity(model.n_minus(), model.n_minus());
        let cp_inv = model.c_plus_inv();
        let cm_inv = model.c_minus_abs_inv();
        Self {
            ap: &cp_inv * (model.a_pp() - &ip * nu),
            am: &cm_inv * (model.a_mm() - &im * nu),
            cm: &cm_inv * model.a_mp(),
            cp: &cp_inv * model.a_pm(),
            cp_inv,
            cm_inv,
        }
    }
}

/// Minimal nonnegative solutions of the two infinite-horizon Riccati
/// equations, `(Psi, PsiHat)`.
pub fn solve_riccati_infinite(model: &FluidModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let co = Coefficients::new(model, 0.0);
    let psi = solve_nare_minimal(&co.ap, &co.am, &co.cm, &co.cp, SOLVE_TOL, MAX_ITER)?;
    let psi_hat = solve_nare_minimal(&co.am, &co.ap, &co.cp, &co.cm, SOLVE_TOL, MAX_ITER)?;
    Ok((psi, psi_hat))
}

/// Solve for all stage blocks Psi^(k), PsiHat^(k), k = 0..L-1.
pub fn solve_stage_matrices(model: &FluidModel, clock: &ErlangClock) -> Result<ReturnMatrices> {
    let nu = clock.rate();
    let l = clock.stages();
    let co = Coefficients::new(model, nu);

    let psi0 = solve_nare_minimal(&co.ap, &co.am, &co.cm, &co.cp, SOLVE_TOL, MAX_ITER)?;
    let psi_hat0 = solve_nare_minimal(&co.am, &co.ap, &co.cp, &co.cm, SOLVE_TOL, MAX_ITER)?;

    let mut psi = vec![psi0];
    let mut psi_hat = vec![psi_hat0];

    // Sylvester coefficients are shared by every stage k >= 1.
    let a1 = &co.ap + &psi[0] * &co.cm;
    let b1 = &co.am + &co.cm * &psi[0];
    let a1_hat = &co.am + &psi_hat[0] * &co.cp;
    let b1_hat = &co.ap + &co.cp * &psi_hat[0];

    for k in 1..l {
        let mut rhs = -(&co.cp_inv * &psi[k - 1] + &psi[k - 1] * &co.cm_inv) * nu;
        for n in 1..k {
            rhs -= &psi[n] * &co.cm * &psi[k - n];
        }
        let mut blk = solve_sylvester(&a1, &b1, &rhs).map_err(stage_err(k))?;
        clamp_roundoff(&mut blk);
        psi.push(blk);

        let mut rhs_hat = -(&co.cm_inv * &psi_hat[k - 1] + &psi_hat[k - 1] * &co.cp_inv) * nu;
        for n in 1..k {
            rhs_hat -= &psi_hat[n] * &co.cp * &psi_hat[k - n];
        }
        let mut blk_hat = solve_sylvester(&a1_hat, &b1_hat, &rhs_hat).map_err(stage_err(k))?;
        clamp_roundoff(&mut blk_hat);
        psi_hat.push(blk_hat);
    }

    let (psi_inf, psi_hat_inf) = solve_riccati_infinite(model)?;
    Ok(ReturnMatrices {
        psi: StageMatrixFamily::new(psi, PhaseSet::Plus, PhaseSet::Minus)?,
        psi_hat: StageMatrixFamily::new(psi_hat, PhaseSet::Minus, PhaseSet::Plus)?,
        psi_inf,
        psi_hat_inf,
    })
}

fn stage_err(k: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::SingularSylvester(msg) => {
            Error::SingularSylvester(format!("stage {}: {}", k, msg))
        }
        other => other,
    }
}

/// Build the stage blocks of the record-process generators from the return
/// matrices. Only stage 1 picks up the clock's superdiagonal rate.
pub fn record_generators(
    model: &FluidModel,
    clock: &ErlangClock,
    rm: &ReturnMatrices,
) -> Result<RecordGenerators> {
    if rm.psi.nrows() != model.n_plus() || rm.psi.ncols() != model.n_minus() {
        return Err(Error::ShapeMismatch(
            "return matrices do not match the model's partition".into(),
        ));
    }
    let nu = clock.rate();
    let l = clock.stages();
    let co = Coefficients::new(model, nu);

    let mut u = Vec::with_capacity(l);
    let mut u_hat = Vec::with_capacity(l);
    for k in 0..l {
        let mut blk = &co.cm * rm.psi.block(k);
        let mut blk_hat = &co.cp * rm.psi_hat.block(k);
        if k == 0 {
            blk += &co.am;
            blk_hat += &co.ap;
        } else if k == 1 {
            blk += &co.cm_inv * nu;
            blk_hat += &co.cp_inv * nu;
        }
        u.push(blk);
        u_hat.push(blk_hat);
    }
    Ok(RecordGenerators {
        u: StageMatrixFamily::new(u, PhaseSet::Minus, PhaseSet::Minus)?,
        u_hat: StageMatrixFamily::new(u_hat, PhaseSet::Plus, PhaseSet::Plus)?,
    })
}

/// Max-norm residual of the stage-0 Riccati equation for `Psi^(0)`.
pub fn riccati_residual(model: &FluidModel, nu: f64, psi0: &DMatrix<f64>) -> f64 {
    let co = Coefficients::new(model, nu);
    (&co.cp + &co.ap * psi0 + psi0 * &co.am + psi0 * &co.cm * psi0).amax()
}

/// Max-norm residual of the stage-0 Riccati equation for `PsiHat^(0)`.
pub fn riccati_hat_residual(model: &FluidModel, nu: f64, psi_hat0: &DMatrix<f64>) -> f64 {
    let co = Coefficients::new(model, nu);
    (&co.cm + &co.am * psi_hat0 + psi_hat0 * &co.ap + psi_hat0 * &co.cp * psi_hat0).amax()
}

/// Max-norm residual of the stage-k linear equation, `1 <= k < L`.
pub fn stage_residual(model: &FluidModel, clock: &ErlangClock, rm: &ReturnMatrices, k: usize) -> f64 {
    let nu = clock.rate();
    let co = Coefficients::new(model, nu);
    let psi = &rm.psi;
    let mut res = &co.ap * psi.block(k) + psi.block(k) * &co.am;
    for n in 0..=k {
        res += psi.block(n) * &co.cm * psi.block(k - n);
    }
    res += (&co.cp_inv * psi.block(k - 1) + psi.block(k - 1) * &co.cm_inv) * nu;
    res.amax()
}

/// Mirror of [`stage_residual`] for the hat family.
pub fn stage_hat_residual(
    model: &FluidModel,
    clock: &ErlangClock,
    rm: &ReturnMatrices,
    k: usize,
) -> f64 {
    let nu = clock.rate();
    let co = Coefficients::new(model, nu);
    let ph = &rm.psi_hat;
    let mut res = &co.am * ph.block(k) + ph.block(k) * &co.ap;
    for n in 0..=k {
        res += ph.block(n) * &co.cp * ph.block(k - n);
    }
    res += (&co.cm_inv * ph.block(k - 1) + ph.block(k - 1) * &co.cp_inv) * nu;
    res.amax()
}

/// Subgenerator sanity of the assembled record generator: nonnegative
/// off-diagonals, nonpositive row sums, at least one strictly negative.
pub fn is_subgenerator(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let mut some_negative = false;
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j && m[(i, j)] < -tol {
                return false;
            }
            row_sum += m[(i, j)];
        }
        if row_sum > tol {
            return false;
        }
        if row_sum < -tol {
            some_negative = true;
        }
    }
    some_negative
}

/// The Erlang clock's generator `N` (L x L, -nu diagonal, nu superdiagonal).
pub fn clock_generator(clock: &ErlangClock) -> DMatrix<f64> {
    let l = clock.stages();
    let nu = clock.rate();
    let mut n = DMatrix::zeros(l, l);
    for i in 0..l {
        n[(i, i)] = -nu;
        if i + 1 < l {
            n[(i, i + 1)] = nu;
        }
    }
    n
}

/// Row sums of `sum_k Psi^(k)` and `sum_k PsiHat^(k)` (both must stay
/// strictly below one while the horizon can fire first).
pub fn substochastic_margins(rm: &ReturnMatrices) -> (DVector<f64>, DVector<f64>) {
    (rm.psi.total_row_sums(), rm.psi_hat.total_row_sums())
}
