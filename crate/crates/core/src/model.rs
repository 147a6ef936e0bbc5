//! Fluid model and Erlang clock definitions.
//!
//! A Markov-modulated fluid model is a phase process with generator `A`
//! driving a level that moves at rate `c_i` while the phase is `i`. Phases
//! are split by the sign of their rate into up-phases and down-phases; all
//! internal computations order the phases as (up, down), and the original
//! ordering is kept so results can be reported against the caller's indices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-sum slack tolerated when validating a generator.
pub const GENERATOR_TOL: f64 = 1e-12;

/// Tag for the phase class a family of blocks is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSet {
    /// Up-phases: rates strictly positive.
    Plus,
    /// Down-phases: rates strictly negative.
    Minus,
}

/// A validated fluid model, phases internally reordered as (S+, S-).
#[derive(Debug, Clone)]
pub struct FluidModel {
    /// Generator in internal order.
    a: DMatrix<f64>,
    /// Rates in internal order.
    c: DVector<f64>,
    /// Generator in the caller's original order.
    a_user: DMatrix<f64>,
    /// Rates in the caller's original order.
    c_user: DVector<f64>,
    n_plus: usize,
    /// `perm[internal] = user` phase index.
    perm: Vec<usize>,
    /// `inv_perm[user] = internal` phase index.
    inv_perm: Vec<usize>,
}

impl FluidModel {
    /// Validate a generator/rate pair and build the model.
    ///
    /// Requirements: `a` square with zero row sums and nonnegative
    /// off-diagonals, irreducible on its off-diagonal support, `c` of
    /// matching length with no zero entry and at least one rate of each
    /// sign.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m {
            return Err(Error::ShapeMismatch(format!(
                "generator must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "rate vector has length {}, generator is {}x{}",
                c.len(),
                m,
                m
            )));
        }
        for i in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                if i != j && a[(i, j)] < 0.0 {
                    return Err(Error::NonConservativeGenerator(format!(
                        "off-diagonal entry A[{},{}] = {} is negative",
                        i,
                        j,
                        a[(i, j)]
                    )));
                }
                row_sum += a[(i, j)];
            }
            if row_sum.abs() > GENERATOR_TOL {
                return Err(Error::NonConservativeGenerator(format!(
                    "row {} sums to {:.3e}",
                    i, row_sum
                )));
            }
        }
        for i in 0..m {
            if c[i] == 0.0 {
                return Err(Error::ZeroRate(i));
            }
        }
        if !is_irreducible(&a) {
            return Err(Error::NotIrreducible(
                "off-diagonal support graph is not strongly connected".into(),
            ));
        }

        // Internal order: up-phases first, preserving relative order.
        let mut perm: Vec<usize> = (0..m).filter(|&i| c[i] > 0.0).collect();
        let n_plus = perm.len();
        perm.extend((0..m).filter(|&i| c[i] < 0.0));
        if n_plus == 0 || n_plus == m {
            return Err(Error::NotIrreducible(
                "both up-phases and down-phases are required".into(),
            ));
        }
        let mut inv_perm = vec![0usize; m];
        for (internal, &user) in perm.iter().enumerate() {
            inv_perm[user] = internal;
        }
        let a_int = DMatrix::from_fn(m, m, |i, j| a[(perm[i], perm[j])]);
        let c_int = DVector::from_fn(m, |i, _| c[perm[i]]);
        Ok(Self {
            a: a_int,
            c: c_int,
            a_user: a,
            c_user: c,
            n_plus,
            perm,
            inv_perm,
        })
    }

    /// Total number of phases.
    pub fn num_phases(&self) -> usize {
        self.a.nrows()
    }

    /// Number of up-phases.
    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    /// Number of down-phases.
    pub fn n_minus(&self) -> usize {
        self.num_phases() - self.n_plus
    }

    /// Up-phase indices in the caller's ordering.
    pub fn plus_phases(&self) -> Vec<usize> {
        self.perm[..self.n_plus].to_vec()
    }

    /// Down-phase indices in the caller's ordering.
    pub fn minus_phases(&self) -> Vec<usize> {
        self.perm[self.n_plus..].to_vec()
    }

    /// Generator in internal (S+, S-) order.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Rates in internal (S+, S-) order.
    pub fn rates(&self) -> &DVector<f64> {
        &self.c
    }

    /// Generator exactly as supplied by the caller.
    pub fn generator_user(&self) -> &DMatrix<f64> {
        &self.a_user
    }

    /// Rates exactly as supplied by the caller.
    pub fn rates_user(&self) -> &DVector<f64> {
        &self.c_user
    }

    /// Map an internal phase index to the caller's index.
    pub fn to_user_phase(&self, internal: usize) -> usize {
        self.perm[internal]
    }

    /// Map a caller phase index to the internal index.
    pub fn to_internal_phase(&self, user: usize) -> usize {
        self.inv_perm[user]
    }

    /// Reorder an internal-order vector of per-phase values to user order.
    pub fn vector_to_user(&self, internal: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(internal.len(), |u, _| internal[self.inv_perm[u]])
    }

    /// Generator block A_{++}.
    pub fn a_pp(&self) -> DMatrix<f64> {
        self.a.view((0, 0), (self.n_plus, self.n_plus)).into()
    }

    /// Generator block A_{+-}.
    pub fn a_pm(&self) -> DMatrix<f64> {
        self.a
            .view((0, self.n_plus), (self.n_plus, self.n_minus()))
            .into()
    }

    /// Generator block A_{-+}.
    pub fn a_mp(&self) -> DMatrix<f64> {
        self.a
            .view((self.n_plus, 0), (self.n_minus(), self.n_plus))
            .into()
    }

    /// Generator block A_{--}.
    pub fn a_mm(&self) -> DMatrix<f64> {
        self.a
            .view((self.n_plus, self.n_plus), (self.n_minus(), self.n_minus()))
            .into()
    }

    /// Diagonal matrix C_+^{-1}.
    pub fn c_plus_inv(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(self.n_plus, |i, _| 1.0 / self.c[i]))
    }

    /// Diagonal matrix |C_-|^{-1}.
    pub fn c_minus_abs_inv(&self) -> DMatrix<f64> {
        let np = self.n_plus;
        DMatrix::from_diagonal(&DVector::from_fn(self.n_minus(), |i, _| {
            1.0 / self.c[np + i].abs()
        }))
    }

    /// Stationary distribution of the phase process, internal order.
    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        let m = self.num_phases();
        // Solve alpha A = 0 with alpha 1 = 1: replace the last column of A^T
        // by ones and solve against e_last.
        let mut sys = self.a.transpose();
        for j in 0..m {
            sys[(m - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(m);
        rhs[m - 1] = 1.0;
        let alpha = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NotIrreducible("stationary system is singular".into()))?;
        Ok(alpha)
    }

    /// Stationary drift `alpha C 1`.
    pub fn stationary_drift(&self) -> Result<f64> {
        let alpha = self.stationary_distribution()?;
        Ok(alpha.dot(&self.c))
    }
}

/// Strong connectivity of the off-diagonal support graph, checked by two
/// breadth-first sweeps (forward and transposed reachability from 0).
fn is_irreducible(a: &DMatrix<f64>) -> bool {
    let m = a.nrows();
    if m == 0 {
        return false;
    }
    if m == 1 {
        return true;
    }
    let reach = |transpose: bool| -> usize {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let w = if transpose { a[(j, i)] } else { a[(i, j)] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    };
    reach(false) == m && reach(true) == m
}

/// Erlang horizon: `L` stages at rate `nu = L / theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangClock {
    theta: f64,
    stages: usize,
}

impl ErlangClock {
    /// Build a clock with mean `theta` and `stages` exponential stages.
    pub fn new(theta: f64, stages: usize) -> Result<Self> {
        if theta.is_nan() || theta <= 0.0 {
            return Err(Error::InvalidHorizon(theta));
        }
        if stages < 1 {
            return Err(Error::InvalidStages(stages));
        }
        Ok(Self { theta, stages })
    }

    /// Mean horizon.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Number of stages `L`.
    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Stage rate `nu = L / theta`, always derived.
    pub fn rate(&self) -> f64 {
        self.stages as f64 / self.theta
    }

    /// Variance of the horizon, `theta^2 / L`.
    pub fn variance(&self) -> f64 {
        self.theta * self.theta / self.stages as f64
    }
}

/// A stage-indexed sequence of equally shaped matrices: the first block row
/// of a block-triangular block-Toeplitz matrix.
#[derive(Debug, Clone)]
pub struct StageMatrixFamily {
    blocks: Vec<DMatrix<f64>>,
    row_set: PhaseSet,
    col_set: PhaseSet,
}

impl StageMatrixFamily {
    /// Wrap a list of equally shaped blocks.
    pub fn new(blocks: Vec<DMatrix<f64>>, row_set: PhaseSet, col_set: PhaseSet) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::ShapeMismatch("stage family needs >= 1 block".into()));
        }
        let (r, c) = (blocks[0].nrows(), blocks[0].ncols());
        if blocks.iter().any(|b| b.nrows() != r || b.ncols() != c) {
            return Err(Error::ShapeMismatch(
                "stage family blocks differ in shape".into(),
            ));
        }
        Ok(Self {
            blocks,
            row_set,
            col_set,
        })
    }

    /// Number of stage blocks (the clock's `L`).
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// True when the family is empty (never happens for validated families).
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block for stage `k`, `0 <= k < L`.
    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k]
    }

    /// All blocks in stage order.
    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Row dimension of each block.
    pub fn nrows(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Column dimension of each block.
    pub fn ncols(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Phase class indexing the rows.
    pub fn row_set(&self) -> PhaseSet {
        self.row_set
    }

    /// Phase class indexing the columns.
    pub fn col_set(&self) -> PhaseSet {
        self.col_set
    }

    /// Entrywise sum of blocks `0..=k`.
    pub fn partial_sum(&self, k: usize) -> DMatrix<f64> {
        let mut s = self.blocks[0].clone();
        for b in &self.blocks[1..=k.min(self.len() - 1)] {
            s += b;
        }
        s
    }

    /// Row sums of the entrywise sum of all blocks.
    pub fn total_row_sums(&self) -> DVector<f64> {
        let ones = DVector::from_element(self.ncols(), 1.0);
        let mut s = DVector::zeros(self.nrows());
        for b in &self.blocks {
            s += b * &ones;
        }
        s
    }

    /// Assemble the full upper-triangular block-Toeplitz matrix with this
    /// family as its first block row.
    pub fn assemble(&self) -> DMatrix<f64> {
        let l = self.len();
        let (r, c) = (self.nrows(), self.ncols());
        let mut full = DMatrix::zeros(l * r, l * c);
        for bi in 0..l {
            for bj in bi..l {
                let blk = &self.blocks[bj - bi];
                full.view_mut((bi * r, bj * c), (r, c)).copy_from(blk);
            }
        }
        full
    }

    /// Extract the first block row of an assembled block matrix.
    pub fn from_assembled(
        full: &DMatrix<f64>,
        l: usize,
        r: usize,
        c: usize,
        row_set: PhaseSet,
        col_set: PhaseSet,
    ) -> Result<Self> {
        if full.nrows() != l * r || full.ncols() != l * c {
            return Err(Error::ShapeMismatch(format!(
                "assembled matrix {}x{} does not split into {} blocks of {}x{}",
                full.nrows(),
                full.ncols(),
                l,
                r,
                c
            )));
        }
        let blocks = (0..l)
            .map(|k| full.view((0, k * c), (r, c)).into())
            .collect();
        Self::new(blocks, row_set, col_set)
    }
}

/// A stage-indexed list of probability vectors, indexed by the number of
/// stages remaining (k = 1..=L).
#[derive(Debug, Clone)]
pub struct StageVectorFamily {
    vectors: Vec<DVector<f64>>,
    set: PhaseSet,
}

impl StageVectorFamily {
    /// Wrap vectors v(1)..v(L); `vectors[k-1]` is for `k` stages remaining.
    pub fn new(vectors: Vec<DVector<f64>>, set: PhaseSet) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::ShapeMismatch("stage vectors need >= 1 entry".into()));
        }
        let n = vectors[0].len();
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::ShapeMismatch("stage vectors differ in length".into()));
        }
        Ok(Self { vectors, set })
    }

    /// Vector for `k` stages remaining, `1 <= k <= L`.
    pub fn get(&self, k: usize) -> &DVector<f64> {
        &self.vectors[k - 1]
    }

    /// The clock's `L`.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    /// True when empty (never for validated families).
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Phase class the entries refer to.
    pub fn set(&self) -> PhaseSet {
        self.set
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::FluidModel;
    use nalgebra::{dmatrix, dvector};

    /// Two phases, unit rates, unit switching: everything scalar and
    /// fully symmetric between up and down.
    pub(crate) fn symmetric_model() -> FluidModel {
        FluidModel::new(dmatrix![-1.0, 1.0; 1.0, -1.0], dvector![1.0, -1.0]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::symmetric_model;
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn smallest_valid_model_partition() {
        let model = symmetric_model();
        assert_eq!(model.plus_phases(), vec![0]);
        assert_eq!(model.minus_phases(), vec![1]);
    }

    #[test]
    fn two_regime_partition() {
        let model = crate::two_regime_model(0.5).unwrap();
        // User phases are 0-based: up-phases {0,2}, down-phases {1,3}.
        assert_eq!(model.plus_phases(), vec![0, 2]);
        assert_eq!(model.minus_phases(), vec![1, 3]);
    }

    #[test]
    fn zero_rate_rejected() {
        let err = FluidModel::new(dmatrix![-1.0, 1.0; 1.0, -1.0], dvector![1.0, 0.0]);
        assert!(matches!(err, Err(Error::ZeroRate(1))));
    }

    #[test]
    fn bad_row_sum_rejected() {
        let err = FluidModel::new(dmatrix![-1.0, 0.5; 1.0, -1.0], dvector![1.0, -1.0]);
        assert!(matches!(err, Err(Error::NonConservativeGenerator(_))));
    }

    #[test]
    fn reducible_generator_rejected() {
        let a = dmatrix![
            -1.0, 1.0, 0.0;
            1.0, -1.0, 0.0;
            0.0, 1.0, -1.0
        ];
        let err = FluidModel::new(a, dvector![1.0, -1.0, 1.0]);
        assert!(matches!(err, Err(Error::NotIrreducible(_))));
    }

    #[test]
    fn single_sign_rejected() {
        let err = FluidModel::new(dmatrix![-1.0, 1.0; 1.0, -1.0], dvector![1.0, 2.0]);
        assert!(matches!(err, Err(Error::NotIrreducible(_))));
    }

    #[test]
    fn reorder_round_trip() {
        let model = crate::two_regime_model(0.5).unwrap();
        for u in 0..model.num_phases() {
            assert_eq!(model.to_user_phase(model.to_internal_phase(u)), u);
        }
        // Reordered generator must still be conservative and match entries.
        for i in 0..4 {
            for j in 0..4 {
                let (ui, uj) = (model.to_user_phase(i), model.to_user_phase(j));
                assert_eq!(model.generator()[(i, j)], model.generator_user()[(ui, uj)]);
            }
        }
    }

    #[test]
    fn erlang_clock_rates() {
        let c = ErlangClock::new(10.0, 1).unwrap();
        assert_abs_diff_eq!(c.rate(), 0.1);
        let c = ErlangClock::new(1.0, 1).unwrap();
        assert_abs_diff_eq!(c.rate(), 1.0);
        let c = ErlangClock::new(10.0, 30).unwrap();
        assert_abs_diff_eq!(c.rate(), 3.0);
        assert_abs_diff_eq!(c.variance(), 10.0 / 3.0);
        assert!(ErlangClock::new(0.0, 1).is_err());
        assert!(ErlangClock::new(1.0, 0).is_err());
    }

    #[test]
    fn stationary_drift_values() {
        let model = symmetric_model();
        assert_abs_diff_eq!(model.stationary_drift().unwrap(), 0.0, epsilon = 1e-14);

        let model = FluidModel::new(dmatrix![-1.0, 1.0; 1.0, -1.0], dvector![2.0, -1.0]).unwrap();
        assert_abs_diff_eq!(model.stationary_drift().unwrap(), 0.5, epsilon = 1e-14);

        let demo = crate::two_regime_model(0.5).unwrap();
        let drift = demo.stationary_drift().unwrap();
        assert!(drift > 0.0, "two-regime drift should be positive");
        assert_abs_diff_eq!(drift, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn stationary_vector_solves_alpha_a() {
        let model = crate::two_regime_model(0.5).unwrap();
        let alpha = model.stationary_distribution().unwrap();
        let res = (alpha.transpose() * model.generator()).abs().max();
        assert!(res <= 1e-12);
        assert_abs_diff_eq!(alpha.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn assemble_and_split_round_trip() {
        let blocks = vec![
            dmatrix![1.0, 2.0; 3.0, 4.0],
            dmatrix![5.0, 6.0; 7.0, 8.0],
            dmatrix![9.0, 10.0; 11.0, 12.0],
        ];
        let fam = StageMatrixFamily::new(blocks, PhaseSet::Minus, PhaseSet::Minus).unwrap();
        let full = fam.assemble();
        assert_eq!(full.nrows(), 6);
        // Toeplitz structure: block (1,2) equals block (0,1).
        assert_eq!(full.view((2, 4), (2, 2)).clone_owned(), *fam.block(1));
        let back =
            StageMatrixFamily::from_assembled(&full, 3, 2, 2, PhaseSet::Minus, PhaseSet::Minus)
                .unwrap();
        for k in 0..3 {
            assert_eq!(back.block(k), fam.block(k));
        }
    }
}
