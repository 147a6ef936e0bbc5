//! Dense linear-algebra kernels: matrix exponential, Sylvester solves,
//! and a Newton solver for nonsymmetric algebraic Riccati equations.
//!
//! Everything here works on small dense matrices (phase spaces of a few
//! dozen states at most), so simplicity and accuracy win over asymptotics:
//! the exponential is scaling-and-squaring with diagonal Padé approximants,
//! Sylvester equations are solved by Kronecker vectorization, and the
//! Riccati solver is a Newton iteration started at zero.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};

/// Padé coefficients for the degree-13 diagonal approximant of exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];

/// 1-norm thresholds from Higham (2005) for choosing the Padé degree.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

fn one_norm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    let mut best = 0.0_f64;
    for col in a.column_iter() {
        let s: f64 = col.iter().map(|v| v.clone().modulus()).sum();
        best = best.max(s);
    }
    best
}

/// Evaluate the [m/m] Padé numerator/denominator split U = A*odd, V = even.
fn pade_uv<T: ComplexField<RealField = f64>>(
    a: &DMatrix<T>,
    powers: &[DMatrix<T>],
    coeffs: &[f64],
) -> (DMatrix<T>, DMatrix<T>) {
    let n = a.nrows();
    let mut odd = DMatrix::<T>::zeros(n, n);
    let mut even = DMatrix::<T>::zeros(n, n);
    // powers[p] = A^{2p}, with powers[0] = I.
    for (i, &c) in coeffs.iter().enumerate() {
        let target = if i % 2 == 1 { &mut odd } else { &mut even };
        *target += powers[i / 2].scale(c);
    }
    (a * odd, even)
}

/// Matrix exponential by scaling-and-squaring with diagonal Padé approximants.
///
/// Works for real and complex square matrices; accuracy is near machine
/// precision for the well-scaled subgenerators this library produces.
pub fn expm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);

    let i_n = DMatrix::<T>::identity(n, n);
    if norm <= THETA9 {
        let a2 = a * a;
        let (coeffs, np): (&[f64], usize) = if norm <= THETA3 {
            (&PADE3, 2)
        } else if norm <= THETA5 {
            (&PADE5, 3)
        } else if norm <= THETA7 {
            (&PADE7, 4)
        } else {
            (&PADE9, 5)
        };
        let mut powers = Vec::with_capacity(np);
        powers.push(i_n.clone());
        powers.push(a2.clone());
        for _ in 2..np {
            let next = powers.last().unwrap() * &a2;
            powers.push(next);
        }
        let (u, v) = pade_uv(a, &powers, coeffs);
        return pade_solve(u, v);
    }

    // Degree 13 with scaling.
    let s = ((norm / THETA13).log2().ceil()).max(0.0) as u32;
    let a_s = a.scale(0.5_f64.powi(s as i32));
    let a2 = &a_s * &a_s;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let b = &PADE13;
    let w1 = a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]);
    let w2 = &a6 * w1 + a6.scale(b[7]) + a4.scale(b[5]) + a2.scale(b[3]) + i_n.scale(b[1]);
    let u = &a_s * w2;
    let z1 = a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]);
    let v = &a6 * z1 + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + i_n.scale(b[0]);

    let mut r = pade_solve(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Solve (V - U) R = (V + U) for the Padé quotient R.
fn pade_solve<T: ComplexField<RealField = f64>>(u: DMatrix<T>, v: DMatrix<T>) -> DMatrix<T> {
    let num = &v + &u;
    let den = v - u;
    den.lu()
        .solve(&num)
        .expect("Padé denominator is singular; matrix norm control failed")
}

/// Solve the Sylvester equation `A X + X B = C` by Kronecker vectorization.
///
/// The stage blocks this library manipulates are small (at most a few dozen
/// rows), so the dense (mn)x(mn) system is solved directly with partial
/// pivoting. Returns `SingularSylvester` when the spectra of `A` and `-B`
/// intersect.
pub fn solve_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let n = b.ncols();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(m, n));
    }
    if a.ncols() != m || b.nrows() != n || c.nrows() != m || c.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "sylvester: A {}x{}, B {}x{}, C {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    // vec(AX) = (I_n ⊗ A) vec(X), vec(XB) = (B^T ⊗ I_m) vec(X)
    let i_m = DMatrix::<f64>::identity(m, m);
    let i_n = DMatrix::<f64>::identity(n, n);
    let k = i_n.kronecker(a) + b.transpose().kronecker(&i_m);
    let rhs = DVector::from_column_slice(c.as_slice());
    let lu = k.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSylvester("spectra of A and -B intersect".into()))?;
    Ok(DMatrix::from_column_slice(m, n, sol.as_slice()))
}

/// Solve `M X = B` with dense LU, mapping singularity to the given error.
pub fn solve_linear(
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
    context: &str,
) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem(context.into()))
}

/// Residual of the Riccati operator `R(X) = D + A X + X B + X C X`.
fn nare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    d + a * x + x * b + x * c * x
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Compensated accumulator holding roughly twice working precision.
#[derive(Clone, Copy, Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let (s, e) = two_sum(self.hi, v);
        self.hi = s;
        self.lo += e;
    }

    #[inline]
    fn add_prod(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        self.add(p);
        self.lo += e;
    }

    #[inline]
    fn add_triple(&mut self, a: f64, b: f64, c: f64) {
        let (p1, e1) = two_prod(a, b);
        let (p2, e2) = two_prod(p1, c);
        self.add(p2);
        self.lo += e1 * c + e2;
    }

    #[inline]
    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Riccati residual evaluated in compensated arithmetic.
///
/// Near a stochastic (zero-drift) solution the residual is a difference of
/// order-one terms that cancels to the square of the error; the plain f64
/// evaluation bottoms out around sqrt(machine eps), which is not enough for
/// the row-sum accuracy required downstream. Doubled precision keeps the
/// Newton direction meaningful down to steps of about 1e-13.
fn nare_residual_compensated(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = x.nrows();
    let n = x.ncols();
    DMatrix::from_fn(m, n, |i, j| {
        let mut acc = Compensated::default();
        acc.add(d[(i, j)]);
        for k in 0..m {
            acc.add_prod(a[(i, k)], x[(k, j)]);
        }
        for k in 0..n {
            acc.add_prod(x[(i, k)], b[(k, j)]);
        }
        for k in 0..n {
            let xik = x[(i, k)];
            if xik == 0.0 {
                continue;
            }
            for l in 0..m {
                acc.add_triple(xik, c[(k, l)], x[(l, j)]);
            }
        }
        acc.value()
    })
}

/// Minimal nonnegative solution of `D + A X + X B + X C X = 0`.
///
/// Newton iteration from `X = 0`: each step solves the Sylvester equation
/// `(A + X C) H + H (B + C X) = -R(X)`. For the fluid-model equations this
/// produces a monotonically increasing sequence of nonnegative iterates
/// converging to the minimal solution. If a step ever leaves the nonnegative
/// cone the solver falls back to the linearly convergent fixed-point scheme
/// `A X' + X' B = -D - X C X`.
pub fn solve_nare_minimal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let n = b.nrows();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(m, n));
    }
    let mut x = DMatrix::<f64>::zeros(m, n);
    let mut newton_ok = true;
    let mut residual = nare_residual_compensated(a, b, c, d, &x);

    for _iter in 0..max_iter {
        let res_norm = residual.amax();
        let scale = 1.0 + x.amax();
        if newton_ok {
            let ja = a + &x * c;
            let jb = b + c * &x;
            let step = solve_sylvester(&ja, &jb, &(-&residual))?;
            let candidate = &x + &step;
            if candidate.iter().any(|&v| v < -1e-14) {
                newton_ok = false;
            } else {
                let step_norm = step.amax();
                x = candidate;
                residual = nare_residual_compensated(a, b, c, d, &x);
                if res_norm <= tol * scale && step_norm <= 1e-13 * scale {
                    return Ok(x);
                }
                continue;
            }
        }
        // Fixed-point fallback, kept inside the cone by construction.
        let rhs = -(d + &x * c * &x);
        let next = solve_sylvester(a, b, &rhs)?;
        let diff = (&next - &x).amax();
        x = next.map(|v| v.max(0.0));
        residual = nare_residual_compensated(a, b, c, d, &x);
        if residual.amax() <= tol * scale && diff <= 1e-13 * scale {
            return Ok(x);
        }
    }
    let res = nare_residual(a, b, c, d, &x).amax();
    if res <= tol {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Max-norm of a matrix (largest absolute entry).
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}
