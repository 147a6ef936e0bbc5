//! Time-dependent distributions of the unrestricted random walk.
//!
//! Everything is conditioned on the walk starting at level 0 with `k`
//! Erlang stages remaining. The building blocks are the stage-split
//! first-return matrices, the record generators and their exponential
//! blocks, and the sign probabilities `h` / `h_hat` (level above/below zero
//! when the horizon fires). The level CDF `r`, the running-minimum CDF
//! `eta`, the running-maximum CDF `mu` and both joint laws are finite
//! stage convolutions of those pieces.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::model::{ErlangClock, FluidModel, PhaseSet, StageVectorFamily};
use crate::stage_matrices::{record_generators, solve_stage_matrices, RecordGenerators, ReturnMatrices};
use crate::toeplitz_expm::{w_blocks, ExpmMethod};

/// Stage-indexed (up-phase, down-phase) vector pairs; index 0 is one
/// stage remaining.
pub(crate) type StageParts = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Probabilities of a positive (`h`) or negative (`h_hat`) level when the
/// clock fires, indexed by stages remaining.
#[derive(Debug, Clone)]
pub struct SignProbabilities {
    /// `h(k)`: level above 0 at the horizon, start in an up-phase.
    pub h: StageVectorFamily,
    /// `h_hat(k)`: level below 0 at the horizon, start in a down-phase.
    pub h_hat: StageVectorFamily,
}

/// Solve the sign-probability recursions for every `k = 1..=L`.
pub fn sign_probabilities(rm: &ReturnMatrices) -> Result<SignProbabilities> {
    let l = rm.psi.len();
    let np = rm.psi.nrows();
    let nm = rm.psi_hat.nrows();
    let ones_p = DVector::from_element(np, 1.0);
    let ones_m = DVector::from_element(nm, 1.0);

    // Crossing kernels G^(s) = sum_{m+n=s} Psi^(m) PsiHat^(n) and mirror.
    let mut g = Vec::with_capacity(l);
    let mut g_hat = Vec::with_capacity(l);
    for s in 0..l {
        let mut gs = DMatrix::zeros(np, np);
        let mut gs_hat = DMatrix::zeros(nm, nm);
        for m in 0..=s {
            gs += rm.psi.block(m) * rm.psi_hat.block(s - m);
            gs_hat += rm.psi_hat.block(m) * rm.psi.block(s - m);
        }
        g.push(gs);
        g_hat.push(gs_hat);
    }
    let lu_p = (DMatrix::identity(np, np) - &g[0]).lu();
    let lu_m = (DMatrix::identity(nm, nm) - &g_hat[0]).lu();

    let mut h: Vec<DVector<f64>> = Vec::with_capacity(l);
    let mut h_hat: Vec<DVector<f64>> = Vec::with_capacity(l);
    for k in 1..=l {
        let mut rhs = ones_p.clone();
        let mut rhs_hat = ones_m.clone();
        for n in 0..k {
            rhs -= rm.psi.block(n) * &ones_m;
            rhs_hat -= rm.psi_hat.block(n) * &ones_p;
        }
        for s in 1..k {
            rhs += &g[s] * &h[k - s - 1];
            rhs_hat += &g_hat[s] * &h_hat[k - s - 1];
        }
        let hk = lu_p
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("I - Psi^(0) PsiHat^(0)".into()))?;
        let hk_hat = lu_m
            .solve(&rhs_hat)
            .ok_or_else(|| Error::SingularSystem("I - PsiHat^(0) Psi^(0)".into()))?;
        h.push(hk);
        h_hat.push(hk_hat);
    }
    Ok(SignProbabilities {
        h: StageVectorFamily::new(h, PhaseSet::Plus)?,
        h_hat: StageVectorFamily::new(h_hat, PhaseSet::Minus)?,
    })
}

/// Cached exponential blocks of both record generators at one displacement.
#[derive(Debug, Clone)]
pub struct WPair {
    /// Blocks of `exp(U x)` (down-records, S- x S-).
    pub w: crate::model::StageMatrixFamily,
    /// Blocks of `exp(UHat x)` (up-records, S+ x S+).
    pub w_hat: crate::model::StageMatrixFamily,
}

/// Evaluator for the walk's time-dependent laws.
///
/// Holds the solved stage matrices and a read-mostly cache of exponential
/// blocks keyed by displacement; evaluation methods are pure and safe to
/// call concurrently.
#[derive(Debug)]
pub struct WalkDistributions {
    model: FluidModel,
    clock: ErlangClock,
    rm: ReturnMatrices,
    rg: RecordGenerators,
    sp: SignProbabilities,
    method: ExpmMethod,
    cache: RwLock<HashMap<u64, Arc<WPair>>>,
}

impl WalkDistributions {
    /// Solve all stage equations for `(model, clock)` and set up the cache.
    pub fn new(model: FluidModel, clock: ErlangClock, method: ExpmMethod) -> Result<Self> {
        let rm = solve_stage_matrices(&model, &clock)?;
        let rg = record_generators(&model, &clock, &rm)?;
        let sp = sign_probabilities(&rm)?;
        Ok(Self {
            model,
            clock,
            rm,
            rg,
            sp,
            method,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// The validated model.
    pub fn model(&self) -> &FluidModel {
        &self.model
    }

    /// The Erlang clock.
    pub fn clock(&self) -> &ErlangClock {
        &self.clock
    }

    /// Stage-split first-return matrices.
    pub fn return_matrices(&self) -> &ReturnMatrices {
        &self.rm
    }

    /// Record-process generator blocks.
    pub fn generators(&self) -> &RecordGenerators {
        &self.rg
    }

    /// Sign probabilities `h`, `h_hat`.
    pub fn sign_probabilities(&self) -> &SignProbabilities {
        &self.sp
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        let l = self.clock.stages();
        if k == 0 || k > l {
            return Err(Error::StageOutOfRange { k, l });
        }
        Ok(())
    }

    /// Exponential blocks of both record generators at displacement `x >= 0`.
    pub fn w_pair(&self, x: f64) -> Result<Arc<WPair>> {
        if x < 0.0 || !x.is_finite() {
            return Err(Error::NegativeDisplacement(x));
        }
        let key = x.to_bits();
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let pair = Arc::new(WPair {
            w: w_blocks(&self.rg.u, x, self.method)?,
            w_hat: w_blocks(&self.rg.u_hat, x, self.method)?,
        });
        self.cache
            .write()
            .unwrap()
            .entry(key)
            .or_insert(pair.clone());
        Ok(pair)
    }

    /// `r(x, j)` split into (up-phase, down-phase) parts for all `j <= k`.
    ///
    /// Index 0 of each returned list is `j = 1`.
    pub(crate) fn r_all(&self, x: f64, k: usize) -> Result<StageParts> {
        self.check_stage(k)?;
        let np = self.model.n_plus();
        let nm = self.model.n_minus();
        let ones_p = DVector::from_element(np, 1.0);
        let ones_m = DVector::from_element(nm, 1.0);
        let mut r_plus = Vec::with_capacity(k);
        let mut r_minus = Vec::with_capacity(k);
        if x <= 0.0 {
            let wp = self.w_pair(-x)?;
            for j in 1..=k {
                let mut rm_j = DVector::zeros(nm);
                for n in 0..j {
                    rm_j += wp.w.block(n) * self.sp.h_hat.get(j - n);
                }
                r_minus.push(rm_j);
            }
            for j in 1..=k {
                let mut rp_j = DVector::zeros(np);
                for n in 0..j {
                    rp_j += self.rm.psi.block(n) * &r_minus[j - n - 1];
                }
                r_plus.push(rp_j);
            }
        } else {
            let wp = self.w_pair(x)?;
            // Complement of r_plus first.
            let mut rbar_plus = Vec::with_capacity(k);
            for j in 1..=k {
                let mut rb = DVector::zeros(np);
                for n in 0..j {
                    rb += wp.w_hat.block(n) * self.sp.h.get(j - n);
                }
                rbar_plus.push(rb);
            }
            for j in 1..=k {
                r_plus.push(&ones_p - &rbar_plus[j - 1]);
                let mut rm_j = ones_m.clone();
                for n in 0..j {
                    rm_j -= self.rm.psi_hat.block(n) * &rbar_plus[j - n - 1];
                }
                r_minus.push(rm_j);
            }
        }
        Ok((r_plus, r_minus))
    }

    /// Level CDF `P[X at the horizon <= x]`, one entry per phase in the
    /// caller's ordering, with `k` stages remaining.
    pub fn cdf(&self, x: f64, k: usize) -> Result<DVector<f64>> {
        let (rp, rm) = self.r_all(x, k)?;
        Ok(self.join(&rp[k - 1], &rm[k - 1]))
    }

    /// Running-minimum parts for all stages `j <= k`.
    pub(crate) fn eta_all(&self, x: f64, k: usize) -> Result<StageParts> {
        self.check_stage(k)?;
        let np = self.model.n_plus();
        let nm = self.model.n_minus();
        if x >= 0.0 {
            let ones_p = vec![DVector::from_element(np, 1.0); k];
            let ones_m = vec![DVector::from_element(nm, 1.0); k];
            return Ok((ones_p, ones_m));
        }
        let wp = self.w_pair(-x)?;
        let ones_m = DVector::from_element(nm, 1.0);
        let mut eta_minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut em = DVector::zeros(nm);
            for n in 0..j {
                em += wp.w.block(n) * &ones_m;
            }
            eta_minus.push(em);
        }
        let mut eta_plus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut ep = DVector::zeros(np);
            for n in 0..j {
                ep += self.rm.psi.block(n) * &eta_minus[j - n - 1];
            }
            eta_plus.push(ep);
        }
        Ok((eta_plus, eta_minus))
    }

    /// CDF of the running minimum, all phases, caller ordering.
    pub fn min_cdf(&self, x: f64, k: usize) -> Result<DVector<f64>> {
        let (ep, em) = self.eta_all(x, k)?;
        Ok(self.join(&ep[k - 1], &em[k - 1]))
    }

    /// Complement of the running-maximum CDF for up-phases, all `j <= k`:
    /// the probability of reaching level `x > 0` before the horizon.
    fn mu_bar_plus_all(&self, x: f64, k: usize) -> Result<Vec<DVector<f64>>> {
        let np = self.model.n_plus();
        let wp = self.w_pair(x)?;
        let ones_p = DVector::from_element(np, 1.0);
        let mut out = Vec::with_capacity(k);
        for j in 1..=k {
            let mut mb = DVector::zeros(np);
            for n in 0..j {
                mb += wp.w_hat.block(n) * &ones_p;
            }
            out.push(mb);
        }
        Ok(out)
    }

    /// Running-maximum parts for all stages `j <= k`.
    pub(crate) fn mu_all(&self, x: f64, k: usize) -> Result<StageParts> {
        self.check_stage(k)?;
        let np = self.model.n_plus();
        let nm = self.model.n_minus();
        if x < 0.0 {
            return Ok((vec![DVector::zeros(np); k], vec![DVector::zeros(nm); k]));
        }
        let mu_bar = self.mu_bar_plus_all(x, k)?;
        let ones_p = DVector::from_element(np, 1.0);
        let ones_m = DVector::from_element(nm, 1.0);
        let mut mu_plus = Vec::with_capacity(k);
        let mut mu_minus = Vec::with_capacity(k);
        for j in 1..=k {
            mu_plus.push(&ones_p - &mu_bar[j - 1]);
            let mut mm = ones_m.clone();
            for n in 0..j {
                mm -= self.rm.psi_hat.block(n) * &mu_bar[j - n - 1];
            }
            mu_minus.push(mm);
        }
        Ok((mu_plus, mu_minus))
    }

    /// CDF of the running maximum, all phases, caller ordering.
    pub fn max_cdf(&self, x: f64, k: usize) -> Result<DVector<f64>> {
        let (mp, mm) = self.mu_all(x, k)?;
        Ok(self.join(&mp[k - 1], &mm[k - 1]))
    }

    /// Joint law `P[min <= x, X <= y]`, all phases, caller ordering.
    pub fn joint_min_cdf(&self, x: f64, y: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        if x >= 0.0 {
            return self.cdf(y, k);
        }
        let np = self.model.n_plus();
        let nm = self.model.n_minus();
        let wp = self.w_pair(-x)?;
        // After descending to x the level must end below y, a gap of y - x.
        let (_, r_shift_minus) = self.r_all(y - x, k)?;
        let mut p_minus = Vec::with_capacity(k);
        for j in 1..=k {
            let mut pm = DVector::zeros(nm);
            for n in 0..j {
                pm += wp.w.block(n) * &r_shift_minus[j - n - 1];
            }
            p_minus.push(pm);
        }
        let mut pp = DVector::zeros(np);
        for n in 0..k {
            pp += self.rm.psi.block(n) * &p_minus[k - n - 1];
        }
        Ok(self.join(&pp, &p_minus[k - 1]))
    }

    /// Joint law `P[max <= x, X <= y]`, all phases, caller ordering.
    pub fn joint_max_cdf(&self, x: f64, y: f64, k: usize) -> Result<DVector<f64>> {
        self.check_stage(k)?;
        let np = self.model.n_plus();
        let nm = self.model.n_minus();
        if x < 0.0 {
            return Ok(DVector::zeros(self.model.num_phases()));
        }
        if y >= x {
            // X <= max <= x < ... the level constraint is vacuous.
            return self.max_cdf(x, k);
        }
        let (rp, rm_) = self.r_all(y, k)?;
        let (rp_shift, _) = self.r_all(y - x, k)?;
        let wp = self.w_pair(x)?;
        // s(j) = sum_m WHat^(m)_x r_plus(y - x, j - m)
        let mut s = Vec::with_capacity(k);
        for j in 1..=k {
            let mut sj = DVector::zeros(np);
            for m in 0..j {
                sj += wp.w_hat.block(m) * &rp_shift[j - m - 1];
            }
            s.push(sj);
        }
        let p_plus = &rp[k - 1] - &s[k - 1];
        let mut p_minus = rm_[k - 1].clone();
        for n in 0..k {
            p_minus -= self.rm.psi_hat.block(n) * &s[k - n - 1];
        }
        let _ = nm;
        Ok(self.join(&p_plus, &p_minus))
    }

    /// One-sided derivatives of `r_minus(. , k)` at level 0, as vectors over
    /// the down-phases: `(left, right)`. For `k = 1` they differ by
    /// `nu |C_-|^{-1} 1`; for `k >= 2` the density is continuous at 0.
    pub fn density_one_sided_at_zero(&self, k: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_stage(k)?;
        let nm = self.model.n_minus();
        let np = self.model.n_plus();
        let mut left = DVector::zeros(nm);
        for n in 0..k {
            left -= self.rg.u.block(n) * self.sp.h_hat.get(k - n);
        }
        let mut right = DVector::zeros(nm);
        for n in 0..k {
            let mut inner = DVector::zeros(np);
            for m in 0..(k - n) {
                inner += self.rg.u_hat.block(m) * self.sp.h.get(k - n - m);
            }
            right -= self.rm.psi_hat.block(n) * inner;
        }
        Ok((left, right))
    }

    /// Assemble (plus, minus) parts into a full-phase vector in the
    /// caller's phase ordering.
    pub(crate) fn join(&self, plus: &DVector<f64>, minus: &DVector<f64>) -> DVector<f64> {
        let internal = DVector::from_fn(self.model.num_phases(), |i, _| {
            if i < self.model.n_plus() {
                plus[i]
            } else {
                minus[i - self.model.n_plus()]
            }
        });
        self.model.vector_to_user(&internal)
    }

    /// Split a full-phase user-order vector into internal (plus, minus).
    #[allow(dead_code)]
    pub(crate) fn split(&self, user: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let np = self.model.n_plus();
        let plus = DVector::from_fn(np, |i, _| user[self.model.to_user_phase(i)]);
        let minus = DVector::from_fn(self.model.n_minus(), |i, _| {
            user[self.model.to_user_phase(np + i)]
        });
        (plus, minus)
    }
}

/// A bilateral phase-type law: the fluid level of an absorbing Markov
/// fluid model, evaluated at the absorption time. Supported on all of R.
#[derive(Debug, Clone)]
pub struct BphDistribution {
    /// Initial distribution over transient states, internal (up, down) order.
    gamma_plus: DVector<f64>,
    gamma_minus: DVector<f64>,
    /// Return matrices of the killed walk.
    psi: DMatrix<f64>,
    psi_hat: DMatrix<f64>,
    /// Record generators of the killed walk.
    u: DMatrix<f64>,
    u_hat: DMatrix<f64>,
    /// Sign probabilities at absorption.
    h: DVector<f64>,
    h_hat: DVector<f64>,
    /// p = gamma_+ + gamma_- PsiHat, p_hat = gamma_+ Psi + gamma_-.
    p: DVector<f64>,
    p_hat: DVector<f64>,
    /// Alternative-form generators and weight vectors.
    k_mat: DMatrix<f64>,
    k_hat_mat: DMatrix<f64>,
    v_plus: DVector<f64>,
    v_minus: DVector<f64>,
    ip_inv: DMatrix<f64>,
    im_inv: DMatrix<f64>,
}

impl BphDistribution {
    /// Build from a representation `(gamma, D, E)`: initial distribution
    /// over the transient states, transient generator block, and nonzero
    /// fluid rates.
    pub fn new(gamma: &DVector<f64>, d: &DMatrix<f64>, e: &DVector<f64>) -> Result<Self> {
        let m = d.nrows();
        if d.ncols() != m || gamma.len() != m || e.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "bph: gamma {}, D {}x{}, E {}",
                gamma.len(),
                d.nrows(),
                d.ncols(),
                e.len()
            )));
        }
        if gamma.iter().any(|&g| g < 0.0) || (gamma.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInitialDistribution(
                "gamma must be nonnegative and sum to one over the transient states".into(),
            ));
        }
        let mut exit = DVector::zeros(m);
        for i in 0..m {
            if d[(i, i)] >= 0.0 {
                return Err(Error::InvalidSubgenerator(format!(
                    "diagonal entry D[{i},{i}] must be negative"
                )));
            }
            let mut row = 0.0;
            for j in 0..m {
                if i != j && d[(i, j)] < 0.0 {
                    return Err(Error::InvalidSubgenerator(format!(
                        "off-diagonal entry D[{i},{j}] is negative"
                    )));
                }
                row += d[(i, j)];
            }
            if row > 1e-10 {
                return Err(Error::InvalidSubgenerator(format!(
                    "row {i} of D sums to {row:.3e} > 0"
                )));
            }
            exit[i] = -row;
        }
        if e.iter().any(|&v| v == 0.0) {
            return Err(Error::InvalidSubgenerator(
                "fluid rates must be nonzero".into(),
            ));
        }
        // Absorption must be certain: D nonsingular.
        if d.clone().lu().solve(&exit).is_none() {
            return Err(Error::InvalidSubgenerator(
                "D is singular: absorption is not certain".into(),
            ));
        }

        // Partition by rate sign, up-phases first.
        let plus: Vec<usize> = (0..m).filter(|&i| e[i] > 0.0).collect();
        let minus: Vec<usize> = (0..m).filter(|&i| e[i] < 0.0).collect();
        let (np, nm) = (plus.len(), minus.len());
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| d[(rows[i], cols[j])])
        };
        let d_pp = pick(&plus, &plus);
        let d_pm = pick(&plus, &minus);
        let d_mp = pick(&minus, &plus);
        let d_mm = pick(&minus, &minus);
        let ep_inv = DMatrix::from_diagonal(&DVector::from_fn(np, |i, _| 1.0 / e[plus[i]]));
        let em_inv = DMatrix::from_diagonal(&DVector::from_fn(nm, |i, _| 1.0 / e[minus[i]].abs()));
        let exit_p = DVector::from_fn(np, |i, _| exit[plus[i]]);
        let exit_m = DVector::from_fn(nm, |i, _| exit[minus[i]]);
        let gamma_plus = DVector::from_fn(np, |i, _| gamma[plus[i]]);
        let gamma_minus = DVector::from_fn(nm, |i, _| gamma[minus[i]]);

        // Killed-walk return matrices: same Riccati equations, with the
        // absorption already inside D.
        let ap = &ep_inv * &d_pp;
        let am = &em_inv * &d_mm;
        let cm = &em_inv * &d_mp;
        let cp = &ep_inv * &d_pm;
        let psi = crate::linalg::solve_nare_minimal(&ap, &am, &cm, &cp, 1e-14, 200)?;
        let psi_hat = crate::linalg::solve_nare_minimal(&am, &ap, &cp, &cm, 1e-14, 200)?;
        let u = &am + &cm * &psi;
        let u_hat = &ap + &cp * &psi_hat;

        let ones_p = DVector::from_element(np, 1.0);
        let ones_m = DVector::from_element(nm, 1.0);
        let ip = DMatrix::identity(np, np) - &psi * &psi_hat;
        let im = DMatrix::identity(nm, nm) - &psi_hat * &psi;
        let ip_lu = ip.clone().lu();
        let im_lu = im.clone().lu();
        let h = ip_lu
            .solve(&(&ones_p - &psi * &ones_m))
            .ok_or_else(|| Error::SingularSystem("I - Psi PsiHat".into()))?;
        let h_hat = im_lu
            .solve(&(&ones_m - &psi_hat * &ones_p))
            .ok_or_else(|| Error::SingularSystem("I - PsiHat Psi".into()))?;

        let p = &gamma_plus + (gamma_minus.transpose() * &psi_hat).transpose();
        let p_hat = (gamma_plus.transpose() * &psi).transpose() + &gamma_minus;

        let k_mat = &ap + &psi * &cm;
        let k_hat_mat = &am + &psi_hat * &cp;
        let v_plus = &ep_inv * &exit_p + &psi * (&em_inv * &exit_m);
        let v_minus = &psi_hat * (&ep_inv * &exit_p) + &em_inv * &exit_m;
        let ip_inv = ip
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("I - Psi PsiHat".into()))?;
        let im_inv = im
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("I - PsiHat Psi".into()))?;

        Ok(Self {
            gamma_plus,
            gamma_minus,
            psi,
            psi_hat,
            u,
            u_hat,
            h,
            h_hat,
            p,
            p_hat,
            k_mat,
            k_hat_mat,
            v_plus,
            v_minus,
            ip_inv,
            im_inv,
        })
    }

    /// Density by the record-generator route. At `x = 0` the right limit is
    /// reported; the one-sided limits are available separately.
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            let w = expm(&(&self.u * (-x)));
            let weights = (self.p_hat.transpose() * w * (-&self.u)).transpose();
            weights.dot(&self.h_hat)
        } else {
            let w = expm(&(&self.u_hat * x));
            let weights = (self.p.transpose() * w * (-&self.u_hat)).transpose();
            weights.dot(&self.h)
        }
    }

    /// Density by the transformed route, using the similarity between the
    /// record generators and `K`, `KHat`.
    pub fn density_alt(&self, x: f64) -> f64 {
        if x < 0.0 {
            let e = expm(&(&self.k_hat_mat * (-x)));
            (self.p_hat.transpose() * &self.im_inv * e * &self.v_minus)[(0, 0)]
        } else {
            let e = expm(&(&self.k_mat * x));
            (self.p.transpose() * &self.ip_inv * e * &self.v_plus)[(0, 0)]
        }
    }

    /// One-sided density limits at 0: `(from below, from above)`.
    pub fn density_at_zero(&self) -> (f64, f64) {
        let below = (self.p_hat.transpose() * (-&self.u) * &self.h_hat)[(0, 0)];
        let above = (self.p.transpose() * (-&self.u_hat) * &self.h)[(0, 0)];
        (below, above)
    }

    /// `P[Y > x]` for `x >= 0`, used to pick quadrature cutoffs.
    pub fn upper_tail(&self, x: f64) -> f64 {
        let w = expm(&(&self.u_hat * x));
        (self.p.transpose() * w * &self.h)[(0, 0)]
    }

    /// `P[Y <= x]` for `x <= 0`.
    pub fn lower_tail(&self, x: f64) -> f64 {
        let w = expm(&(&self.u * (-x)));
        (self.p_hat.transpose() * w * &self.h_hat)[(0, 0)]
    }

    /// Initial-distribution mass on up-phases (diagnostic).
    pub fn mass_split(&self) -> (f64, f64) {
        (self.gamma_plus.sum(), self.gamma_minus.sum())
    }

    /// The similarity residual `(I - Psi PsiHat) UHat - K (I - Psi PsiHat)`,
    /// which should vanish; exposed for verification.
    pub fn similarity_residual(&self) -> f64 {
        let ip = DMatrix::identity(self.psi.nrows(), self.psi.nrows()) - &self.psi * &self.psi_hat;
        ((&ip * &self.u_hat) - (&self.k_mat * &ip)).amax()
    }
}

/// Representation of the walk at the Erlang horizon as a bilateral
/// phase-type law: transient states are (stage, phase) pairs in stage-major
/// order, absorption happens when the last stage completes.
pub fn erlangized_bph_representation(
    model: &FluidModel,
    clock: &ErlangClock,
    initial_phase: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let m = model.num_phases();
    if initial_phase >= m {
        return Err(Error::PhaseOutOfRange {
            phase: initial_phase,
            phases: m,
        });
    }
    let l = clock.stages();
    let nu = clock.rate();
    let n = crate::stage_matrices::clock_generator(clock);
    let il = DMatrix::<f64>::identity(l, l);
    let d = n.kronecker(&DMatrix::identity(m, m)) + il.kronecker(model.generator_user());
    let _ = nu;
    let mut gamma = DVector::zeros(l * m);
    gamma[initial_phase] = 1.0;
    let mut e = DVector::zeros(l * m);
    for s in 0..l {
        for i in 0..m {
            e[s * m + i] = model.rates_user()[i];
        }
    }
    Ok((gamma, d, e))
}
