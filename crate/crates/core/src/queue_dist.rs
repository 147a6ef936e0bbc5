//! Time-dependent distributions of the fluid queue (reflected at zero).
//!
//! The queue behaves like the walk away from zero; at zero it idles while
//! the phase is a down-phase. Three ingredients extend the walk results:
//!
//! - boundary-exit matrices: probability of leaving level zero during stage
//!   `m` in an up-phase, plus the complementary probability of idling
//!   through whole stages;
//! - taboo laws: walk laws restricted to paths that never touch zero;
//! - two-boundary first-passage families between level zero and a target
//!   level, split by stage.
//!
//! All public evaluation methods return one probability per phase in the
//! caller's phase ordering, with `k` the number of Erlang stages remaining.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rw_dist::{StageParts, WalkDistributions};
use crate::toeplitz_expm::toeplitz_product;

type LuF64 = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// Boundary behaviour at level zero: exit split by stage, and the
/// probability of idling through whole stages.
#[derive(Debug, Clone)]
pub struct BoundaryExitMatrices {
    /// `Upsilon^(m)`: leave level 0 during stage `m` in an up-phase
    /// (S- x S+), for `m = 0..L-1`.
    pub upsilon: Vec<DMatrix<f64>>,
    /// `stay[k]`: the phase remains in the down class for `k` further
    /// whole stages (S- x S-); `stay[0]` is the identity.
    pub stay: Vec<DMatrix<f64>>,
}

impl BoundaryExitMatrices {
    fn new(walk: &WalkDistributions) -> Result<Self> {
        let model = walk.model();
        let clock = walk.clock();
        let nu = clock.rate();
        let l = clock.stages();
        let nm = model.n_minus();
        let im = DMatrix::<f64>::identity(nm, nm);
        let shifted = &im * nu - model.a_mm();
        let lu = shifted.lu();
        // M = nu (nu I - A--)^{-1}: one idle stage completes before the
        // phase leaves the down class.
        let m = lu
            .solve(&(&im * nu))
            .ok_or_else(|| Error::SingularSystem("nu I - A-- must be invertible".into()))?;
        let base = lu
            .solve(&model.a_mp())
            .ok_or_else(|| Error::SingularSystem("nu I - A-- must be invertible".into()))?;

        let mut upsilon = Vec::with_capacity(l);
        let mut stay = Vec::with_capacity(l + 1);
        stay.push(im);
        let mut current = base;
        for k in 0..l {
            upsilon.push(current.clone());
            stay.push(&m * &stay[k]);
            current = &m * &current;
        }
        Ok(Self { upsilon, stay })
    }

    /// Total exit probability within the first `k` stages, per down-phase.
    pub fn exit_mass(&self, k: usize) -> DVector<f64> {
        let np = self.upsilon[0].ncols();
        let ones = DVector::from_element(np, 1.0);
        let mut s = DVector::zeros(self.upsilon[0].nrows());
        for u in self.upsilon.iter().take(k) {
            s += u * &ones;
        }
        s
    }
}

/// Stage-split first-passage matrices between two levels a distance `gap`
/// apart, under taboo of the respective other level.
#[derive(Debug, Clone)]
pub struct TwoBoundaryMatrices {
    /// Cross the gap upward before returning to the bottom (S+ x S+).
    pub lambda: Vec<DMatrix<f64>>,
    /// Return to the bottom before crossing the gap (S+ x S-).
    pub psi: Vec<DMatrix<f64>>,
    /// Cross the gap downward before returning to the top (S- x S-).
    pub lambda_hat: Vec<DMatrix<f64>>,
    /// Return to the top before dropping the gap (S- x S+).
    pub psi_hat: Vec<DMatrix<f64>>,
    /// The level separation these matrices refer to.
    pub gap: f64,
}

impl TwoBoundaryMatrices {
    /// Row sums of `sum_k (lambda^(k) 1 + psi^(k) 1)`; the two first-passage
    /// events are disjoint so these stay at or below one.
    pub fn splitting_row_sums(&self) -> DVector<f64> {
        let np = self.lambda[0].nrows();
        let ones_p = DVector::from_element(np, 1.0);
        let ones_m = DVector::from_element(self.psi[0].ncols(), 1.0);
        let mut s = DVector::zeros(np);
        for (lam, psi) in self.lambda.iter().zip(&self.psi) {
            s += lam * &ones_p + psi * &ones_m;
        }
        s
    }
}

/// Evaluator for the queue's time-dependent laws.
#[derive(Debug)]
pub struct QueueDistributions {
    walk: Arc<WalkDistributions>,
    boundary: BoundaryExitMatrices,
    /// Kernels `sum_{n+m=s} Psi^(n) Upsilon^(m)` for the zero-level
    /// recursions.
    exit_kernels: Vec<DMatrix<f64>>,
    /// LU factor of `I - Psi^(0) Upsilon^(0)`.
    zero_lu: LuF64,
    tb_cache: RwLock<HashMap<u64, Arc<TwoBoundaryMatrices>>>,
}

impl QueueDistributions {
    /// Derive the boundary machinery from an already-solved walk.
    pub fn new(walk: Arc<WalkDistributions>) -> Result<Self> {
        let boundary = BoundaryExitMatrices::new(&walk)?;
        let l = walk.clock().stages();
        let np = walk.model().n_plus();
        let rm = walk.return_matrices();
        let mut exit_kernels = Vec::with_capacity(l);
        for s in 0..l {
            let mut ks = DMatrix::zeros(np, np);
            for n in 0..=s {
                ks += rm.psi.block(n) * &boundary.upsilon[s - n];
            }
            exit_kernels.push(ks);
        }
        let zero_lu = (DMatrix::identity(np, np) - &exit_kernels[0]).lu();
        Ok(Self {
            walk,
            boundary,
            exit_kernels,
            zero_lu,
            tb_cache: RwLock::new(HashMap::new()),
        })
    }

    /// The underlying walk evaluator.
    pub fn walk(&self) -> &WalkDistributions {
        &self.walk
    }

    /// Boundary-exit matrices for this model and clock.
    pub fn boundary_exit(&self) -> &BoundaryExitMatrices {
        &self.boundary
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        let l = self.walk.clock().stages();
        if k == 0 || k > l {
            return Err(Error::StageOutOfRange { k, l });
        }
        Ok(())
    }

    fn check_level(&self, name: &str, v: f64) -> Result<()> {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::InvalidLevels(format!("{name} = {v} must be >= 0")));
        }
        Ok(())
    }

    /// Taboo parts `g_+(a, x, j), g_-(a, x, j)` for all `j <= k`.
    fn taboo_all(&self, a: f64, x: f64, k: usize) -> Result<StageParts> {
        let rm = self.walk.return_matrices();
        let wp = self.walk.w_pair(a)?;
        let (rp_shift, rm_shift) = self.walk.r_all(x - a, k)?;
        let (_, rm_at_x) = self.walk.r_all(x, k)?;
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        // t(j) = sum_n W^(n)_a r_-(x, j - n): hit zero, then end below x.
        let mut t = Vec::with_capacity(k);
        for j in 1..=k {
            let mut tj = DVector::zeros(nm);
            for n in 0..j {
                tj += wp.w.block(n) * &rm_at_x[j - n - 1];
            }
            t.push(tj);
        }
        let mut g_plus = Vec::with_capacity(k);
        let mut g_minus = Vec::with_capacity(k);
        for j in 1..=k {
            g_minus.push(&rm_shift[j - 1] - &t[j - 1]);
            let mut corr = DVector::zeros(np);
            for m in 0..j {
                corr += rm.psi.block(m) * &t[j - m - 1];
            }
            g_plus.push(&rp_shift[j - 1] - corr);
        }
        Ok((g_plus, g_minus))
    }

    /// Queue CDF parts starting at level zero, all `j <= k`.
    fn q_zero_all(&self, x: f64, k: usize) -> Result<StageParts> {
        let rm = self.walk.return_matrices();
        let nm = self.walk.model().n_minus();
        let ones_m = DVector::from_element(nm, 1.0);
        let (g_plus, _) = self.taboo_all(0.0, x, k)?;

        let mut q_plus: Vec<DVector<f64>> = Vec::with_capacity(k);
        for j in 1..=k {
            let mut rhs = g_plus[j - 1].clone();
            // Return to zero during stage n and idle through the remaining
            // stages: the level is still zero when the horizon fires, which
            // counts as <= x.
            for n in 0..j {
                rhs += rm.psi.block(n) * (&self.boundary.stay[j - n] * &ones_m);
            }
            for s in 1..j {
                rhs += &self.exit_kernels[s] * &q_plus[j - s - 1];
            }
            let qj = self
                .zero_lu
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("I - Psi^(0) Upsilon^(0)".into()))?;
            q_plus.push(qj);
        }
        let mut q_minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut qj = &self.boundary.stay[j] * &ones_m;
            for n in 0..j {
                qj += &self.boundary.upsilon[n] * &q_plus[j - n - 1];
            }
            q_minus.push(qj);
        }
        Ok((q_plus, q_minus))
    }

    /// Queue CDF parts from a general initial level, all `j <= k`.
    fn q_all(&self, a: f64, x: f64, k: usize) -> Result<StageParts> {
        if a == 0.0 {
            return self.q_zero_all(x, k);
        }
        let rm = self.walk.return_matrices();
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        let wp = self.walk.w_pair(a)?;
        let (g_plus, g_minus) = self.taboo_all(a, x, k)?;
        let (_, q0_minus) = self.q_zero_all(x, k)?;
        // s(j) = sum_m W^(m)_a q_-(0, x, j - m): drop to zero, then queue.
        let mut s = Vec::with_capacity(k);
        for j in 1..=k {
            let mut sj = DVector::zeros(nm);
            for m in 0..j {
                sj += wp.w.block(m) * &q0_minus[j - m - 1];
            }
            s.push(sj);
        }
        let mut q_plus = Vec::with_capacity(k);
        let mut q_minus = Vec::with_capacity(k);
        for j in 1..=k {
            q_minus.push(&g_minus[j - 1] + &s[j - 1]);
            let mut corr = DVector::zeros(np);
            for n in 0..j {
                corr += rm.psi.block(n) * &s[j - n - 1];
            }
            q_plus.push(&g_plus[j - 1] + corr);
        }
        Ok((q_plus, q_minus))
    }

    /// Taboo CDF `g(a, x, k)`: below `x` at the horizon without having
    /// touched level zero on the way.
    pub fn taboo_cdf(&self, a: f64, x: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        if x <= 0.0 || !x.is_finite() {
            return Err(Error::InvalidLevels(format!("x = {x} must be > 0")));
        }
        let (gp, gm) = self.taboo_all(a, x, k)?;
        Ok(self.walk.join(&gp[k - 1], &gm[k - 1]))
    }

    /// Queue CDF `q(a, x, k) = P[Z at the horizon <= x]`.
    pub fn cdf(&self, a: f64, x: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        self.check_level("x", x)?;
        let (qp, qm) = self.q_all(a, x, k)?;
        Ok(self.walk.join(&qp[k - 1], &qm[k - 1]))
    }

    /// Queue minimum CDF `rho(a, x, k)`: the reflected minimum drops to `x`
    /// exactly when the free walk drops by `a - x`, so this is the walk's
    /// minimum law evaluated at `x - a`.
    pub fn min_cdf(&self, a: f64, x: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        self.check_level("x", x)?;
        self.walk.min_cdf(x - a, k)
    }

    /// Stage-split two-boundary matrices for a separation `gap >= 0`,
    /// cached per separation.
    pub fn two_boundary(&self, gap: f64) -> Result<Arc<TwoBoundaryMatrices>> {
        self.check_level("gap", gap)?;
        let key = gap.to_bits();
        if let Some(hit) = self.tb_cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let tb = Arc::new(self.compute_two_boundary(gap)?);
        self.tb_cache
            .write()
            .unwrap()
            .entry(key)
            .or_insert(tb.clone());
        Ok(tb)
    }

    #[allow(clippy::needless_range_loop)] // index m pairs psi[m] with phi.block(k - m)
    fn compute_two_boundary(&self, gap: f64) -> Result<TwoBoundaryMatrices> {
        let model = self.walk.model();
        let l = self.walk.clock().stages();
        let np = model.n_plus();
        let nm = model.n_minus();
        if gap == 0.0 {
            // Degenerate separation: an up-phase sits on the top boundary
            // and crosses it immediately, so returning to the bottom first
            // is impossible; mirrored for down-phases.
            let mut lambda = vec![DMatrix::zeros(np, np); l];
            let mut lambda_hat = vec![DMatrix::zeros(nm, nm); l];
            lambda[0] = DMatrix::identity(np, np);
            lambda_hat[0] = DMatrix::identity(nm, nm);
            return Ok(TwoBoundaryMatrices {
                lambda,
                psi: vec![DMatrix::zeros(np, nm); l],
                lambda_hat,
                psi_hat: vec![DMatrix::zeros(nm, np); l],
                gap,
            });
        }
        let rm = self.walk.return_matrices();
        let wp = self.walk.w_pair(gap)?;
        // phi^(s): from the top in an up-phase, reach the bottom in stage s
        // (first return to the top level, then a full down-crossing);
        // phi_hat^(s) is the mirrored ascent from the bottom.
        let phi = toeplitz_product(&rm.psi, &wp.w)?;
        let phi_hat = toeplitz_product(&rm.psi_hat, &wp.w_hat)?;
        let omega = phi.block(0).clone();
        let omega_hat = phi_hat.block(0).clone();
        // The recursions right-multiply by these inverses; factor the
        // transposes so the solves stay left-sided.
        let lu_m_t = (DMatrix::identity(nm, nm) - &omega_hat * &omega)
            .transpose()
            .lu();
        let lu_p_t = (DMatrix::identity(np, np) - &omega * &omega_hat)
            .transpose()
            .lu();

        let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        let mut lambda: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        let mut psi_hat: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        let mut lambda_hat: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        for k in 0..l {
            // Unconstrained passage = taboo passage + paths that resolved
            // the taboo the other way first; solve for the taboo blocks.
            let mut bracket = wp.w_hat.block(k).clone();
            let mut lam_sum = DMatrix::zeros(np, nm);
            for m in 0..k {
                bracket -= &psi[m] * phi_hat.block(k - m);
                lam_sum += &lambda[m] * phi.block(k - m);
            }
            let rhs = rm.psi.block(k) - lam_sum - bracket * &omega;
            let psi_k = solve_from_right(&lu_m_t, &rhs)?;
            let mut lam_k = wp.w_hat.block(k).clone();
            for m in 0..=k {
                let p = if m == k { &psi_k } else { &psi[m] };
                lam_k -= p * phi_hat.block(k - m);
            }
            psi.push(psi_k);
            lambda.push(lam_k);

            let mut bracket_h = wp.w.block(k).clone();
            let mut lam_sum_h = DMatrix::zeros(nm, np);
            for m in 0..k {
                bracket_h -= &psi_hat[m] * phi.block(k - m);
                lam_sum_h += &lambda_hat[m] * phi_hat.block(k - m);
            }
            let rhs_h = rm.psi_hat.block(k) - lam_sum_h - bracket_h * &omega_hat;
            let psi_hat_k = solve_from_right(&lu_p_t, &rhs_h)?;
            let mut lam_hat_k = wp.w.block(k).clone();
            for m in 0..=k {
                let p = if m == k { &psi_hat_k } else { &psi_hat[m] };
                lam_hat_k -= p * phi.block(k - m);
            }
            psi_hat.push(psi_hat_k);
            lambda_hat.push(lam_hat_k);
        }
        Ok(TwoBoundaryMatrices {
            lambda,
            psi,
            lambda_hat,
            psi_hat,
            gap,
        })
    }

    /// Complement of the queue-maximum CDF from level zero: probability of
    /// reaching `x` before the horizon, for all `j <= k` (up-phase start).
    fn reach_bar_zero(&self, x: f64, k: usize) -> Result<Vec<DVector<f64>>> {
        let tb = self.two_boundary(x)?;
        let np = self.walk.model().n_plus();
        let ones_p = DVector::from_element(np, 1.0);
        let kernels = self.taboo_exit_kernels(&tb, k);
        let inv = (DMatrix::identity(np, np) - &kernels[0]).lu();
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
        for j in 1..=k {
            let mut rhs = DVector::zeros(np);
            for n in 0..j {
                rhs += &tb.lambda[n] * &ones_p;
            }
            for s in 1..j {
                rhs += &kernels[s] * &out[j - s - 1];
            }
            let v = inv
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("I - psi_x^(0) Upsilon^(0)".into()))?;
            out.push(v);
        }
        Ok(out)
    }

    /// Kernels `sum_{n+m=s} psi_x^(n) Upsilon^(m)`: return to the boundary
    /// under taboo, then idle before leaving again.
    fn taboo_exit_kernels(&self, tb: &TwoBoundaryMatrices, k: usize) -> Vec<DMatrix<f64>> {
        let np = self.walk.model().n_plus();
        let mut kernels = Vec::with_capacity(k);
        for s in 0..k {
            let mut ks = DMatrix::zeros(np, np);
            for n in 0..=s {
                ks += &tb.psi[n] * &self.boundary.upsilon[s - n];
            }
            kernels.push(ks);
        }
        kernels
    }

    /// Down-phase complement from level zero: exit the boundary, then reach
    /// the target.
    fn reach_bar_minus_zero(&self, bar_plus: &[DVector<f64>], k: usize) -> Vec<DVector<f64>> {
        let nm = self.walk.model().n_minus();
        let mut out = Vec::with_capacity(k);
        for j in 1..=k {
            let mut v = DVector::zeros(nm);
            for n in 0..j {
                v += &self.boundary.upsilon[n] * &bar_plus[j - n - 1];
            }
            out.push(v);
        }
        out
    }

    /// Queue maximum CDF `delta(a, x, k)`.
    pub fn max_cdf(&self, a: f64, x: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        self.check_level("x", x)?;
        let model = self.walk.model();
        if x < a {
            // The maximum starts at the initial level already.
            return Ok(DVector::zeros(model.num_phases()));
        }
        let np = model.n_plus();
        let nm = model.n_minus();
        let ones_p = DVector::from_element(np, 1.0);
        let ones_m = DVector::from_element(nm, 1.0);
        let (bar_plus, bar_minus) = if a == 0.0 {
            let bp = self.reach_bar_zero(x, k)?;
            let bm = self.reach_bar_minus_zero(&bp, k);
            (bp, bm)
        } else {
            self.reach_bar_general(a, x, k)?
        };
        let dp = &ones_p - &bar_plus[k - 1];
        let dm = &ones_m - &bar_minus[k - 1];
        Ok(self.walk.join(&dp, &dm))
    }

    /// Stage-convolution kernels between the upper gap `x - a` and the
    /// lower gap `a`: `G^(s) = sum psi_{x-a}^(n) psi_hat_a^(m)` (retry from
    /// the start level) and `H^(s) = sum psi_{x-a}^(n) lambda_hat_a^(m)`
    /// (drop to the boundary).
    fn gap_kernels(
        &self,
        tb_top: &TwoBoundaryMatrices,
        tb_bot: &TwoBoundaryMatrices,
        k: usize,
    ) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        let mut g = Vec::with_capacity(k);
        let mut h = Vec::with_capacity(k);
        for s in 0..k {
            let mut gs = DMatrix::zeros(np, np);
            let mut hs = DMatrix::zeros(np, nm);
            for n in 0..=s {
                gs += &tb_top.psi[n] * &tb_bot.psi_hat[s - n];
                hs += &tb_top.psi[n] * &tb_bot.lambda_hat[s - n];
            }
            g.push(gs);
            h.push(hs);
        }
        (g, h)
    }

    /// Complements of the queue-maximum CDF from `a > 0`, both phase
    /// classes, all `j <= k`.
    fn reach_bar_general(&self, a: f64, x: f64, k: usize) -> Result<StageParts> {
        let tb_top = self.two_boundary(x - a)?;
        let tb_bot = self.two_boundary(a)?;
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        let ones_p = DVector::from_element(np, 1.0);
        let bar0_plus = self.reach_bar_zero(x, k)?;
        let bar0_minus = self.reach_bar_minus_zero(&bar0_plus, k);
        let (g, h) = self.gap_kernels(&tb_top, &tb_bot, k);
        let inv = (DMatrix::identity(np, np) - &g[0]).lu();
        let mut bar_plus: Vec<DVector<f64>> = Vec::with_capacity(k);
        for j in 1..=k {
            let mut rhs = &h[0] * &bar0_minus[j - 1];
            for n in 0..j {
                rhs += &tb_top.lambda[n] * &ones_p;
            }
            for s in 1..j {
                rhs += &g[s] * &bar_plus[j - s - 1] + &h[s] * &bar0_minus[j - s - 1];
            }
            let v = inv
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("I - psi_{x-a}^(0) psi_hat_a^(0)".into()))?;
            bar_plus.push(v);
        }
        let mut bar_minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut v = DVector::zeros(nm);
            for n in 0..j {
                v += &tb_bot.psi_hat[n] * &bar_plus[j - n - 1]
                    + &tb_bot.lambda_hat[n] * &bar0_minus[j - n - 1];
            }
            bar_minus.push(v);
        }
        Ok((bar_plus, bar_minus))
    }

    /// Joint law of the queue minimum and the terminal level,
    /// `P[min <= x, Z <= y]`.
    pub fn joint_min_cdf(&self, a: f64, x: f64, y: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        self.check_level("x", x)?;
        self.check_level("y", y)?;
        if x >= a {
            // The minimum never exceeds the initial level.
            return self.cdf(a, y, k);
        }
        let rm = self.walk.return_matrices();
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        let wp = self.walk.w_pair(a - x)?;
        let (_, q_from_x_minus) = self.q_all(x, y, k)?;
        let mut p_minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut pj = DVector::zeros(nm);
            for n in 0..j {
                pj += wp.w.block(n) * &q_from_x_minus[j - n - 1];
            }
            p_minus.push(pj);
        }
        let mut p_plus = DVector::zeros(np);
        for n in 0..k {
            p_plus += rm.psi.block(n) * &p_minus[k - n - 1];
        }
        Ok(self.walk.join(&p_plus, &p_minus[k - 1]))
    }

    /// Probability of exceeding `x` and still ending at or below `y`, from
    /// level zero, both phase classes, all `j <= k`.
    fn exceed_zero(&self, x: f64, y: f64, k: usize) -> Result<StageParts> {
        let tb = self.two_boundary(x)?;
        let np = self.walk.model().n_plus();
        let nm = self.walk.model().n_minus();
        let (q_from_x_plus, _) = self.q_all(x, y, k)?;
        let kernels = self.taboo_exit_kernels(&tb, k);
        let inv = (DMatrix::identity(np, np) - &kernels[0]).lu();
        let mut plus: Vec<DVector<f64>> = Vec::with_capacity(k);
        for j in 1..=k {
            let mut rhs = DVector::zeros(np);
            for n in 0..j {
                rhs += &tb.lambda[n] * &q_from_x_plus[j - n - 1];
            }
            for s in 1..j {
                rhs += &kernels[s] * &plus[j - s - 1];
            }
            let v = inv
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("I - psi_x^(0) Upsilon^(0)".into()))?;
            plus.push(v);
        }
        let mut minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut v = DVector::zeros(nm);
            for n in 0..j {
                v += &self.boundary.upsilon[n] * &plus[j - n - 1];
            }
            minus.push(v);
        }
        Ok((plus, minus))
    }

    /// Joint law of the queue maximum and the terminal level,
    /// `P[max <= x, Z <= y]`, via the complement on the maximum.
    pub fn joint_max_cdf(&self, a: f64, x: f64, y: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        self.check_level("a", a)?;
        self.check_level("x", x)?;
        self.check_level("y", y)?;
        let model = self.walk.model();
        if x < a {
            // The maximum surely exceeds x.
            return Ok(DVector::zeros(model.num_phases()));
        }
        let np = model.n_plus();
        let nm = model.n_minus();
        let (q_plus, q_minus) = self.q_all(a, y, k)?;
        let (ex_plus, ex_minus) = if a == 0.0 {
            self.exceed_zero(x, y, k)?
        } else {
            let tb_top = self.two_boundary(x - a)?;
            let tb_bot = self.two_boundary(a)?;
            let (_, ex0_minus) = self.exceed_zero(x, y, k)?;
            let (q_from_x_plus, _) = self.q_all(x, y, k)?;
            let (g, h) = self.gap_kernels(&tb_top, &tb_bot, k);
            let inv = (DMatrix::identity(np, np) - &g[0]).lu();
            let mut plus: Vec<DVector<f64>> = Vec::with_capacity(k);
            for j in 1..=k {
                let mut rhs = &h[0] * &ex0_minus[j - 1];
                for n in 0..j {
                    rhs += &tb_top.lambda[n] * &q_from_x_plus[j - n - 1];
                }
                for s in 1..j {
                    rhs += &g[s] * &plus[j - s - 1] + &h[s] * &ex0_minus[j - s - 1];
                }
                let v = inv.solve(&rhs).ok_or_else(|| {
                    Error::SingularSystem("I - psi_{x-a}^(0) psi_hat_a^(0)".into())
                })?;
                plus.push(v);
            }
            let mut minus = Vec::with_capacity(k);
            for j in 1..=k {
                let mut v = DVector::zeros(nm);
                for n in 0..j {
                    v += &tb_bot.psi_hat[n] * &plus[j - n - 1]
                        + &tb_bot.lambda_hat[n] * &ex0_minus[j - n - 1];
                }
                minus.push(v);
            }
            (plus, minus)
        };
        let jp = &q_plus[k - 1] - &ex_plus[k - 1];
        let jm = &q_minus[k - 1] - &ex_minus[k - 1];
        Ok(self.walk.join(&jp, &jm))
    }
}

/// Solve `X (I - M) = RHS` given the LU factor of `(I - M)^T`.
fn solve_from_right(lu_t: &LuF64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xt = lu_t
        .solve(&rhs.transpose())
        .ok_or_else(|| Error::SingularSystem("two-boundary splitting system".into()))?;
    Ok(xt.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests_support::symmetric_model;
    use crate::model::ErlangClock;
    use crate::toeplitz_expm::ExpmMethod;
    use approx::assert_abs_diff_eq;

    fn queue(theta: f64, l: usize) -> QueueDistributions {
        let walk = WalkDistributions::new(
            symmetric_model(),
            ErlangClock::new(theta, l).unwrap(),
            ExpmMethod::Direct,
        )
        .unwrap();
        QueueDistributions::new(Arc::new(walk)).unwrap()
    }

    fn two_regime_queue(theta: f64, l: usize) -> QueueDistributions {
        let walk = WalkDistributions::new(
            crate::two_regime_model(0.5).unwrap(),
            ErlangClock::new(theta, l).unwrap(),
            ExpmMethod::Direct,
        )
        .unwrap();
        QueueDistributions::new(Arc::new(walk)).unwrap()
    }

    const PSI0: f64 = 0.2679491924311227; // 2 - sqrt(3)

    #[test]
    fn boundary_exit_scalar_powers() {
        // Symmetric model, nu = 1: Upsilon^(m) = 2^{-(m+1)}.
        let q = queue(3.0, 3);
        for m in 0..3 {
            assert_abs_diff_eq!(
                q.boundary_exit().upsilon[m][(0, 0)],
                0.5_f64.powi(m as i32 + 1),
                epsilon = 1e-14
            );
        }
        // Exit mass complements the stay probability exactly.
        for k in 0..=3usize {
            let mass = if k == 0 {
                0.0
            } else {
                q.boundary_exit().exit_mass(k)[0]
            };
            assert_abs_diff_eq!(
                mass + q.boundary_exit().stay[k][(0, 0)],
                1.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn boundary_exit_shrinks_with_rate() {
        // theta -> 0 at fixed L means nu -> infinity: no time to leave.
        let q_fast = queue(1e-4, 1);
        assert!(q_fast.boundary_exit().upsilon[0][(0, 0)] < 1e-3);
    }

    /// Scalar chain for the symmetric model at nu = 1, single stage:
    /// h(1) = 1/(1+psi0), r_+(1,1) = 1 - e^{-sqrt3} h(1),
    /// r_-(1,1) = 1 - psi0 e^{-sqrt3} h(1), g_+ = r_+ - psi0 r_-.
    fn scalar_taboo_chain() -> (f64, f64, f64) {
        let h1 = 1.0 / (1.0 + PSI0);
        let rbar = (-(3.0_f64.sqrt())).exp() * h1;
        let r_plus = 1.0 - rbar;
        let r_minus = 1.0 - PSI0 * rbar;
        (r_plus, r_minus, r_plus - PSI0 * r_minus)
    }

    #[test]
    fn taboo_scalar_chain() {
        let q = queue(1.0, 1);
        let w = q.walk();
        let r_plus_1 = w.cdf(1.0, 1).unwrap()[0];
        let r_minus_1 = w.cdf(1.0, 1).unwrap()[1];
        let g = q.taboo_cdf(0.0, 1.0, 1).unwrap();
        assert_abs_diff_eq!(g[0], r_plus_1 - PSI0 * r_minus_1, epsilon = 1e-12);
        let (_, _, g_expected) = scalar_taboo_chain();
        assert_abs_diff_eq!(g[0], g_expected, epsilon = 1e-12);
        // From a down-phase at the boundary the taboo is violated at once.
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn queue_cdf_scalar_chain_and_limits() {
        let q = queue(1.0, 1);
        let g_plus = q.taboo_cdf(0.0, 1.0, 1).unwrap()[0];
        // Stay term: return to zero (psi0), then idle through the last
        // stage (probability 1/2); denominator from retrying exits.
        let expected = (g_plus + PSI0 * 0.5) / (1.0 - PSI0 * 0.5);
        let qv = q.cdf(0.0, 1.0, 1).unwrap();
        assert_abs_diff_eq!(qv[0], expected, epsilon = 1e-12);
        let (_, _, g_closed) = scalar_taboo_chain();
        assert_abs_diff_eq!(
            qv[0],
            (g_closed + PSI0 * 0.5) / (1.0 - PSI0 * 0.5),
            epsilon = 1e-12
        );
        // x -> infinity: certain event.
        let q_inf = q.cdf(0.0, 1e6, 1).unwrap();
        for i in 0..2 {
            assert!((q_inf[i] - 1.0).abs() <= 1e-9);
        }
        // Atom at zero, down-phase: idle through the stage (1/2) or leave
        // and return in time. The scalar chain collapses to 1/(2 - psi0),
        // which is 1/sqrt(3); strictly more than the idle mass alone.
        let q0 = q.cdf(0.0, 0.0, 1).unwrap();
        assert_abs_diff_eq!(q0[1], 1.0 / (2.0 - PSI0), epsilon = 1e-12);
        assert!(q0[1] > 0.5);
    }

    #[test]
    fn queue_cdf_dominated_by_walk_cdf() {
        // Reflection pushes the level up: Z >= X pathwise, so q <= r.
        let q = two_regime_queue(10.0, 3);
        for &a in &[0.0, 1.0] {
            for &x in &[0.0, 0.5, 2.0, 5.0] {
                let qv = q.cdf(a, x, 3).unwrap();
                let rv = q.walk().cdf(x - a, 3).unwrap();
                for i in 0..4 {
                    assert!(qv[i] <= rv[i] + 1e-10, "a={a} x={x} i={i}");
                }
            }
        }
    }

    #[test]
    fn queue_cdf_monotone_in_level_and_antitone_in_start() {
        let q = two_regime_queue(10.0, 2);
        let mut prev = DVector::zeros(4);
        for &x in &[0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let v = q.cdf(0.5, x, 2).unwrap();
            for i in 0..4 {
                assert!(v[i] + 1e-12 >= prev[i]);
                assert!((0.0..=1.0 + 1e-12).contains(&v[i]));
            }
            prev = v;
        }
        let mut prev_a: Option<DVector<f64>> = None;
        for &a in &[0.0, 0.5, 1.0, 2.0] {
            let v = q.cdf(a, 2.0, 2).unwrap();
            if let Some(p) = prev_a {
                for i in 0..4 {
                    assert!(v[i] <= p[i] + 1e-12);
                }
            }
            prev_a = Some(v);
        }
    }

    #[test]
    fn taboo_below_queue_cdf() {
        let q = two_regime_queue(10.0, 3);
        for &a in &[0.0, 1.0] {
            for &x in &[0.5, 2.0, 5.0] {
                let g = q.taboo_cdf(a, x, 3).unwrap();
                let qv = q.cdf(a, x, 3).unwrap();
                for i in 0..4 {
                    assert!(g[i] <= qv[i] + 1e-12);
                    assert!(g[i] >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn queue_min_scalar_value_and_degenerate() {
        let q = queue(1.0, 1);
        // Start at 1, ask for the queue minimum to reach 0: the walk must
        // drop by one.
        let rho = q.min_cdf(1.0, 0.0, 1).unwrap();
        assert_abs_diff_eq!(rho[1], (-(3.0_f64.sqrt())).exp(), epsilon = 1e-12);
        // x >= a: certain.
        let rho1 = q.min_cdf(1.0, 1.0, 1).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(rho1[i], 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn two_boundary_matches_full_matrix_oracle() {
        // Independent route: the same splitting identities hold for the
        // assembled block matrices of the whole stage-extended process, so
        // the first block rows must agree with the per-stage recursion.
        let q = two_regime_queue(10.0, 4);
        let walk = q.walk();
        let rm = walk.return_matrices();
        let x = 1.3;
        let tb = q.two_boundary(x).unwrap();
        let wp = walk.w_pair(x).unwrap();
        let l = 4usize;
        let (np, nm) = (2usize, 2usize);

        let psi_big = rm.psi.assemble();
        let psi_hat_big = rm.psi_hat.assemble();
        let w_big = wp.w.assemble();
        let w_hat_big = wp.w_hat.assemble();
        let omega_big = &psi_big * &w_big;
        let omega_hat_big = &psi_hat_big * &w_hat_big;
        let eye_m = DMatrix::<f64>::identity(l * nm, l * nm);
        let eye_p = DMatrix::<f64>::identity(l * np, l * np);
        let psi_x_big = (&psi_big - &w_hat_big * &omega_big)
            * (&eye_m - &omega_hat_big * &omega_big)
                .try_inverse()
                .unwrap();
        let lambda_big = &w_hat_big - &psi_x_big * &omega_hat_big;
        let psi_hat_x_big = (&psi_hat_big - &w_big * &omega_hat_big)
            * (&eye_p - &omega_big * &omega_hat_big)
                .try_inverse()
                .unwrap();
        let lambda_hat_big = &w_big - &psi_hat_x_big * &omega_big;

        for k in 0..l {
            let psi_blk = psi_x_big.view((0, k * nm), (np, nm)).clone_owned();
            let lam_blk = lambda_big.view((0, k * np), (np, np)).clone_owned();
            let psih_blk = psi_hat_x_big.view((0, k * np), (nm, np)).clone_owned();
            let lamh_blk = lambda_hat_big.view((0, k * nm), (nm, nm)).clone_owned();
            assert_abs_diff_eq!(&tb.psi[k], &psi_blk, epsilon = 1e-11);
            assert_abs_diff_eq!(&tb.lambda[k], &lam_blk, epsilon = 1e-11);
            assert_abs_diff_eq!(&tb.psi_hat[k], &psih_blk, epsilon = 1e-11);
            assert_abs_diff_eq!(&tb.lambda_hat[k], &lamh_blk, epsilon = 1e-11);
        }
    }

    #[test]
    fn two_boundary_limits() {
        let q = two_regime_queue(10.0, 2);
        let rm = q.walk().return_matrices();
        // Large separation: the taboo becomes irrelevant.
        let tb = q.two_boundary(1e3).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(&tb.psi[k], rm.psi.block(k), epsilon = 1e-8);
            assert!(tb.lambda[k].amax() <= 1e-8);
        }
        // Vanishing separation: immediate crossing.
        let tb0 = q.two_boundary(0.0).unwrap();
        assert_abs_diff_eq!(
            tb0.lambda[0],
            DMatrix::identity(2, 2),
            epsilon = 0.0
        );
        assert!(tb0.psi[0].amax() == 0.0);
        // The computed family approaches that degenerate limit as the
        // separation shrinks.
        let tb_small = q.two_boundary(1e-9).unwrap();
        assert_abs_diff_eq!(tb_small.lambda[0], DMatrix::identity(2, 2), epsilon = 1e-7);
        assert!(tb_small.psi[0].amax() <= 1e-7);
        // Disjoint events: splitting row sums below one.
        let tb1 = q.two_boundary(0.7).unwrap();
        let rows = tb1.splitting_row_sums();
        for i in 0..2 {
            assert!(rows[i] <= 1.0 + 1e-12);
        }
        // All families nonnegative.
        for k in 0..2 {
            for m in [&tb1.lambda[k], &tb1.lambda_hat[k]] {
                assert!(m.iter().all(|&v| v >= -1e-12));
            }
            for m in [&tb1.psi[k], &tb1.psi_hat[k]] {
                assert!(m.iter().all(|&v| v >= -1e-12));
            }
        }
    }

    #[test]
    fn queue_max_degenerate_and_limits() {
        let q = two_regime_queue(10.0, 2);
        // x < a: impossible.
        let d = q.max_cdf(2.0, 1.0, 2).unwrap();
        assert_abs_diff_eq!(d, DVector::zeros(4), epsilon = 0.0);
        // Large x: certain.
        let d_inf = q.max_cdf(0.0, 1e6, 2).unwrap();
        for i in 0..4 {
            assert!((d_inf[i] - 1.0).abs() <= 1e-9);
        }
        // Monotone in x.
        let mut prev = DVector::zeros(4);
        for &x in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let v = q.max_cdf(0.0, x, 2).unwrap();
            for i in 0..4 {
                assert!(v[i] + 1e-12 >= prev[i]);
            }
            prev = v;
        }
        // At x = a = 0 the down-phase value is the probability of idling in
        // the down class for both stages (row sum of the stay matrix).
        let d0 = q.max_cdf(0.0, 0.0, 2).unwrap();
        let stay2 = &q.boundary_exit().stay[2];
        assert_abs_diff_eq!(d0[1], stay2[(0, 0)] + stay2[(0, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(d0[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn queue_max_scalar_single_stage() {
        // L = 1, a = 0: delta_+ = 1 - Lambda_1 / (1 - psi_x Upsilon^0).
        let q = queue(1.0, 1);
        let tb = q.two_boundary(1.0).unwrap();
        let lam = tb.lambda[0][(0, 0)];
        let psix = tb.psi[0][(0, 0)];
        let expected = 1.0 - lam / (1.0 - psix * 0.5);
        let d = q.max_cdf(0.0, 1.0, 1).unwrap();
        assert_abs_diff_eq!(d[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn joint_min_cases_and_marginals() {
        let q = two_regime_queue(10.0, 3);
        // x >= a reduces to the queue CDF.
        let j = q.joint_min_cdf(1.0, 1.5, 2.0, 3).unwrap();
        let qv = q.cdf(1.0, 2.0, 3).unwrap();
        assert_abs_diff_eq!(j, qv, epsilon = 0.0);
        // y -> infinity recovers the minimum law.
        let j_inf = q.joint_min_cdf(2.0, 0.5, 1e6, 3).unwrap();
        let rho = q.min_cdf(2.0, 0.5, 3).unwrap();
        for i in 0..4 {
            assert!((j_inf[i] - rho[i]).abs() <= 1e-9);
        }
        // Dominated by both marginals.
        let j2 = q.joint_min_cdf(2.0, 0.5, 1.0, 3).unwrap();
        let q2 = q.cdf(2.0, 1.0, 3).unwrap();
        let rho2 = q.min_cdf(2.0, 0.5, 3).unwrap();
        for i in 0..4 {
            assert!(j2[i] <= q2[i] + 1e-12);
            assert!(j2[i] <= rho2[i] + 1e-12);
        }
    }

    #[test]
    fn joint_max_cases_and_marginals() {
        let q = two_regime_queue(10.0, 3);
        // x < a: impossible.
        let j = q.joint_max_cdf(2.0, 1.0, 5.0, 3).unwrap();
        assert_abs_diff_eq!(j, DVector::zeros(4), epsilon = 0.0);
        // y -> infinity recovers the maximum law.
        for &a in &[0.0, 1.0] {
            let j_inf = q.joint_max_cdf(a, 3.0, 1e6, 3).unwrap();
            let delta = q.max_cdf(a, 3.0, 3).unwrap();
            for i in 0..4 {
                assert!(
                    (j_inf[i] - delta[i]).abs() <= 1e-9,
                    "a={a} i={i}: {} vs {}",
                    j_inf[i],
                    delta[i]
                );
            }
        }
        // x -> infinity recovers the queue CDF.
        let j_x = q.joint_max_cdf(1.0, 1e6, 2.0, 3).unwrap();
        let qv = q.cdf(1.0, 2.0, 3).unwrap();
        for i in 0..4 {
            assert!((j_x[i] - qv[i]).abs() <= 1e-9);
        }
        // Dominated by both marginals.
        let j2 = q.joint_max_cdf(1.0, 3.0, 2.0, 3).unwrap();
        let d2 = q.max_cdf(1.0, 3.0, 3).unwrap();
        let q2 = q.cdf(1.0, 2.0, 3).unwrap();
        for i in 0..4 {
            assert!(j2[i] <= d2[i] + 1e-10);
            assert!(j2[i] <= q2[i] + 1e-10);
            assert!(j2[i] >= -1e-12);
        }
    }

    #[test]
    fn rejects_bad_levels_and_stages() {
        let q = queue(1.0, 1);
        assert!(matches!(
            q.cdf(-1.0, 0.5, 1),
            Err(Error::InvalidLevels(_))
        ));
        assert!(matches!(q.cdf(0.0, -0.5, 1), Err(Error::InvalidLevels(_))));
        assert!(matches!(
            q.taboo_cdf(0.0, 0.0, 1),
            Err(Error::InvalidLevels(_))
        ));
        assert!(matches!(
            q.cdf(0.0, 0.5, 2),
            Err(Error::StageOutOfRange { .. })
        ));
    }
}
