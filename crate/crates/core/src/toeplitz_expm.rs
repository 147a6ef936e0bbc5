//! First block row of `exp(U x)` for block-triangular block-Toeplitz `U`.
//!
//! The record generators are upper-triangular block-Toeplitz, so their
//! exponentials are too, and the first block row determines everything.
//! Three interchangeable routes are provided:
//!
//! - `direct`: assemble the full `L m x L m` matrix and exponentiate
//!   (scaling-and-squaring with Padé approximants);
//! - `epsilon_circulant`: complete the matrix to a block eps-circulant,
//!   which a scaled DFT block-diagonalizes; error is O(eps) with a
//!   round-off term growing like 1/eps;
//! - `embedding`: zero-pad the blocks into a plain block circulant of K
//!   blocks (K >= L, rounded up to a power of two) and block-diagonalize
//!   by FFT; the wrap-around error vanishes as K grows.
//!
//! All three clamp tiny negative entries produced by round-off; anything
//! below `-1e-10` is treated as a bug and reported as an error.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::model::StageMatrixFamily;

/// Entries in [-CLAMP_TOL, 0) are rounded up to zero; below is an error.
pub const CLAMP_TOL: f64 = 1e-10;

/// Default eps for the eps-circulant completion.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Above this assembled size the default method switches away from direct.
pub const DIRECT_SIZE_LIMIT: usize = 512;

/// Method selector for the block exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum ExpmMethod {
    /// Assemble and exponentiate the full block matrix.
    Direct,
    /// Eps-circulant completion, block-diagonalized by scaled FFT.
    EpsilonCirculant {
        /// Completion weight in (0, 1].
        epsilon: f64,
    },
    /// Zero-padded circulant embedding with `blocks` >= L blocks.
    Embedding {
        /// Circulant size before rounding up to a power of two.
        blocks: usize,
    },
    /// Direct when `L * m <= 512`, otherwise embedding with `4 L` blocks.
    #[default]
    Auto,
}


/// Eps-circulant result: the blocks plus a heuristic error estimate.
#[derive(Debug, Clone)]
pub struct EpsCirculantBlocks {
    /// Approximated first-row blocks of `exp(U x)`.
    pub family: StageMatrixFamily,
    /// First-order truncation plus round-off amplification estimate.
    pub error_estimate: f64,
}

fn check_displacement(x: f64) -> Result<()> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::NegativeDisplacement(x));
    }
    Ok(())
}

fn check_square(fam: &StageMatrixFamily) -> Result<()> {
    if fam.nrows() != fam.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "generator family blocks must be square, got {}x{}",
            fam.nrows(),
            fam.ncols()
        )));
    }
    Ok(())
}

fn clamp_block(b: &mut DMatrix<f64>) -> Result<()> {
    for v in b.iter_mut() {
        if *v < 0.0 {
            if *v < -CLAMP_TOL {
                return Err(Error::ExcessiveNegativeEntry { value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Exact route: exponentiate the assembled block matrix and read off the
/// first block row. `W^(0)_x` equals `exp(U^(0) x)` by triangularity.
pub fn w_blocks_direct(fam: &StageMatrixFamily, x: f64) -> Result<StageMatrixFamily> {
    check_displacement(x)?;
    check_square(fam)?;
    let l = fam.len();
    let m = fam.nrows();
    let full = fam.assemble() * x;
    let e = expm(&full);
    let mut fam_out =
        StageMatrixFamily::from_assembled(&e, l, m, m, fam.row_set(), fam.col_set())?;
    let mut blocks: Vec<DMatrix<f64>> = fam_out.blocks().to_vec();
    for b in &mut blocks {
        clamp_block(b)?;
    }
    fam_out = StageMatrixFamily::new(blocks, fam.row_set(), fam.col_set())?;
    Ok(fam_out)
}

/// Shared FFT core: first block row of `exp(circulant(B_0..B_{K-1}) x)`.
///
/// The circulant is block-diagonalized by the DFT: the j-th spectral block
/// is `sum_s omega^{js} B_s` with `omega = exp(2 pi i / K)`, and the first
/// row of the exponential is recovered by the forward transform.
fn circulant_expm_first_row(
    blocks: &[DMatrix<Complex64>],
    x: f64,
) -> Vec<DMatrix<Complex64>> {
    let k = blocks.len();
    let m = blocks[0].nrows();
    let mut planner = FftPlanner::<f64>::new();
    let fft_inv = planner.plan_fft_inverse(k);
    let fft_fwd = planner.plan_fft_forward(k);

    // Spectral blocks via one inverse transform per matrix entry.
    let mut spectral = vec![DMatrix::<Complex64>::zeros(m, m); k];
    let mut buf = vec![Complex64::default(); k];
    for r in 0..m {
        for c in 0..m {
            for (s, b) in blocks.iter().enumerate() {
                buf[s] = b[(r, c)];
            }
            fft_inv.process(&mut buf);
            for (j, v) in buf.iter().enumerate() {
                spectral[j][(r, c)] = *v;
            }
        }
    }

    // One small exponential per spectral block.
    let exps: Vec<DMatrix<Complex64>> = spectral
        .iter()
        .map(|lam| expm(&lam.map(|v| v * Complex64::new(x, 0.0))))
        .collect();

    // Recover the first block row with the forward transform.
    let mut out = vec![DMatrix::<Complex64>::zeros(m, m); k];
    for r in 0..m {
        for c in 0..m {
            for (j, e) in exps.iter().enumerate() {
                buf[j] = e[(r, c)];
            }
            fft_fwd.process(&mut buf);
            let scale = 1.0 / k as f64;
            for (i, v) in buf.iter().enumerate() {
                out[i][(r, c)] = v * scale;
            }
        }
    }
    out
}

/// Eps-circulant route: complete the Toeplitz matrix with eps-weighted
/// wrap-around blocks, diagonally rescale into a plain circulant, and
/// exponentiate spectrally.
pub fn w_blocks_epsilon_circulant(
    fam: &StageMatrixFamily,
    x: f64,
    epsilon: f64,
) -> Result<EpsCirculantBlocks> {
    check_displacement(x)?;
    check_square(fam)?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidLevels(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let l = fam.len();
    let zeta = epsilon.powf(1.0 / l as f64);

    let scaled: Vec<DMatrix<Complex64>> = fam
        .blocks()
        .iter()
        .enumerate()
        .map(|(s, b)| b.map(|v| Complex64::new(v * zeta.powi(s as i32), 0.0)))
        .collect();
    let first_row = circulant_expm_first_row(&scaled, x);

    let mut blocks = Vec::with_capacity(l);
    for (i, blk) in first_row.into_iter().enumerate() {
        let unscale = zeta.powi(-(i as i32));
        let mut real = blk.map(|v| v.re * unscale);
        clamp_block(&mut real)?;
        blocks.push(real);
    }
    let family = StageMatrixFamily::new(blocks, fam.row_set(), fam.col_set())?;
    // First-order completion error plus round-off amplified by the
    // rescaling; probabilities are O(1) so no further scale factor.
    let error_estimate = epsilon + f64::EPSILON / zeta.powi(l as i32 - 1);
    Ok(EpsCirculantBlocks {
        family,
        error_estimate,
    })
}

/// Embedding route: zero-pad to `K` blocks (rounded up to a power of two),
/// exponentiate the plain block circulant, keep the first `L` blocks.
pub fn w_blocks_embedding(
    fam: &StageMatrixFamily,
    x: f64,
    blocks: usize,
) -> Result<StageMatrixFamily> {
    check_displacement(x)?;
    check_square(fam)?;
    let l = fam.len();
    if blocks < l {
        return Err(Error::InvalidEmbedding { k: blocks, l });
    }
    let k = blocks.next_power_of_two();
    let m = fam.nrows();
    let zero = DMatrix::<Complex64>::zeros(m, m);
    let mut padded = Vec::with_capacity(k);
    for s in 0..k {
        if s < l {
            padded.push(fam.block(s).map(|v| Complex64::new(v, 0.0)));
        } else {
            padded.push(zero.clone());
        }
    }
    let first_row = circulant_expm_first_row(&padded, x);
    let mut out = Vec::with_capacity(l);
    for blk in first_row.into_iter().take(l) {
        let mut real = blk.map(|v| v.re);
        clamp_block(&mut real)?;
        out.push(real);
    }
    StageMatrixFamily::new(out, fam.row_set(), fam.col_set())
}

/// Dispatch on the configured method.
pub fn w_blocks(fam: &StageMatrixFamily, x: f64, method: ExpmMethod) -> Result<StageMatrixFamily> {
    match method {
        ExpmMethod::Direct => w_blocks_direct(fam, x),
        ExpmMethod::EpsilonCirculant { epsilon } => {
            Ok(w_blocks_epsilon_circulant(fam, x, epsilon)?.family)
        }
        ExpmMethod::Embedding { blocks } => w_blocks_embedding(fam, x, blocks),
        ExpmMethod::Auto => {
            let size = fam.len() * fam.nrows();
            if size <= DIRECT_SIZE_LIMIT {
                w_blocks_direct(fam, x)
            } else {
                w_blocks_embedding(fam, x, 4 * fam.len())
            }
        }
    }
}

/// Block convolution `(A * B)^(k) = sum_n A^(n) B^(k-n)`: the first block
/// row of the product of two triangular block-Toeplitz matrices.
pub fn toeplitz_product(a: &StageMatrixFamily, b: &StageMatrixFamily) -> Result<StageMatrixFamily> {
    if a.len() != b.len() || a.ncols() != b.nrows() {
        return Err(Error::ShapeMismatch(
            "toeplitz product: stage counts or inner dimensions differ".into(),
        ));
    }
    let l = a.len();
    let mut out = Vec::with_capacity(l);
    for k in 0..l {
        let mut blk = DMatrix::zeros(a.nrows(), b.ncols());
        for n in 0..=k {
            blk += a.block(n) * b.block(k - n);
        }
        out.push(blk);
    }
    StageMatrixFamily::new(out, a.row_set(), b.col_set())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests_support::symmetric_model;
    use crate::model::ErlangClock;
    use crate::stage_matrices::{record_generators, solve_stage_matrices};
    use approx::assert_abs_diff_eq;

    fn u_family(theta: f64, l: usize) -> StageMatrixFamily {
        let model = symmetric_model();
        let clock = ErlangClock::new(theta, l).unwrap();
        let rm = solve_stage_matrices(&model, &clock).unwrap();
        record_generators(&model, &clock, &rm).unwrap().u
    }

    fn two_regime_u(theta: f64, l: usize) -> StageMatrixFamily {
        let model = crate::two_regime_model(0.5).unwrap();
        let clock = ErlangClock::new(theta, l).unwrap();
        let rm = solve_stage_matrices(&model, &clock).unwrap();
        record_generators(&model, &clock, &rm).unwrap().u
    }

    fn family_gap(a: &StageMatrixFamily, b: &StageMatrixFamily) -> f64 {
        a.blocks()
            .iter()
            .zip(b.blocks())
            .map(|(x, y)| (x - y).amax())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_displacement_is_identity() {
        let fam = u_family(1.0, 3);
        let w = w_blocks_direct(&fam, 0.0).unwrap();
        assert_abs_diff_eq!(w.block(0)[(0, 0)], 1.0, epsilon = 1e-14);
        for k in 1..3 {
            assert_abs_diff_eq!(w.block(k)[(0, 0)], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_exponential_at_unit_displacement() {
        // Single stage: W^(0)_1 = exp(-sqrt(3)).
        let fam = u_family(1.0, 1);
        let w = w_blocks_direct(&fam, 1.0).unwrap();
        assert_abs_diff_eq!(
            w.block(0)[(0, 0)],
            (-(3.0_f64.sqrt())).exp(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn negative_displacement_rejected() {
        let fam = u_family(1.0, 1);
        assert!(matches!(
            w_blocks_direct(&fam, -1.0),
            Err(Error::NegativeDisplacement(_))
        ));
    }

    #[test]
    fn first_block_is_exponential_of_diagonal_block() {
        let fam = u_family(2.0, 4);
        let w = w_blocks_direct(&fam, 0.7).unwrap();
        let direct0 = expm(&(fam.block(0) * 0.7));
        assert_abs_diff_eq!(w.block(0), &direct0, epsilon = 1e-13);
    }

    #[test]
    fn semigroup_block_convolution() {
        let fam = two_regime_u(10.0, 4);
        let wx = w_blocks_direct(&fam, 0.6).unwrap();
        let wy = w_blocks_direct(&fam, 1.1).unwrap();
        let wxy = w_blocks_direct(&fam, 1.7).unwrap();
        let conv = toeplitz_product(&wx, &wy).unwrap();
        assert!(family_gap(&wxy, &conv) <= 1e-12);
    }

    #[test]
    fn eps_circulant_converges_to_direct() {
        let fam = u_family(1.0, 3);
        let direct = w_blocks_direct(&fam, 1.0).unwrap();
        let eps = w_blocks_epsilon_circulant(&fam, 1.0, 1e-8).unwrap();
        let gap = family_gap(&direct, &eps.family);
        assert!(gap < 1e-6);
        // The reported estimate is the right order of magnitude.
        assert!(eps.error_estimate > 0.0 && gap <= 50.0 * eps.error_estimate);
    }

    #[test]
    fn eps_circulant_single_stage_exact() {
        let fam = u_family(1.0, 1);
        let direct = w_blocks_direct(&fam, 1.0).unwrap();
        let eps = w_blocks_epsilon_circulant(&fam, 1.0, 0.5).unwrap();
        assert!(family_gap(&direct, &eps.family) < 1e-12);
    }

    #[test]
    fn eps_circulant_error_scales_linearly() {
        let fam = two_regime_u(10.0, 5);
        let direct = w_blocks_direct(&fam, 1.0).unwrap();
        let e1 = w_blocks_epsilon_circulant(&fam, 1.0, 1e-4).unwrap();
        let e2 = w_blocks_epsilon_circulant(&fam, 1.0, 5e-5).unwrap();
        let g1 = family_gap(&direct, &e1.family);
        let g2 = family_gap(&direct, &e2.family);
        let ratio = g2 / g1;
        assert!(
            (0.3..=0.7).contains(&ratio),
            "halving eps should roughly halve the error, ratio {ratio} (gaps {g1:.3e}, {g2:.3e})"
        );
    }

    #[test]
    fn embedding_equals_direct_when_k_is_l_one_stage() {
        let fam = u_family(1.0, 1);
        let direct = w_blocks_direct(&fam, 1.3).unwrap();
        let emb = w_blocks_embedding(&fam, 1.3, 1).unwrap();
        assert!(family_gap(&direct, &emb) < 1e-12);
    }

    #[test]
    fn embedding_accuracy_improves_with_k() {
        let fam = u_family(1.0, 5);
        let direct = w_blocks_direct(&fam, 1.0).unwrap();
        let gaps: Vec<f64> = [5usize, 10, 20, 40]
            .iter()
            .map(|&k| family_gap(&direct, &w_blocks_embedding(&fam, 1.0, k).unwrap()))
            .collect();
        for pair in gaps.windows(2) {
            assert!(
                pair[1] < pair[0],
                "doubling K must shrink the gap: {gaps:?}"
            );
        }
        let k4 = family_gap(&direct, &w_blocks_embedding(&fam, 1.0, 20).unwrap());
        assert!(k4 <= 1e-8, "K = 4L gap {k4:.3e}");
    }

    #[test]
    fn rejects_k_smaller_than_l() {
        let fam = u_family(1.0, 3);
        assert!(matches!(
            w_blocks_embedding(&fam, 1.0, 2),
            Err(Error::InvalidEmbedding { .. })
        ));
    }

    #[test]
    fn blocks_are_substochastic() {
        let fam = two_regime_u(10.0, 5);
        for x in [0.0, 0.5, 2.0, 10.0] {
            let w = w_blocks(&fam, x, ExpmMethod::Auto).unwrap();
            let rows = w.total_row_sums();
            for i in 0..rows.len() {
                assert!(rows[i] <= 1.0 + 1e-12);
                assert!(rows[i] >= 0.0);
            }
            for b in w.blocks() {
                for &v in b.iter() {
                    assert!((0.0..=1.0 + 1e-12).contains(&v));
                }
            }
        }
    }
}
