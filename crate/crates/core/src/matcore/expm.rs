use super::{check_generator, ensure_finite, ensure_square, Matrix};
use crate::error::{FluidError, Result};

/// Tolerance for routing a matrix to the uniformization path.
const SUBGEN_TOL: f64 = 1e-12;

/// Matrix exponential `e^{A t}`.
///
/// Sub-generators go through uniformization with scaling and squaring, so
/// the result is entrywise nonnegative with row sums at most one. Any other
/// matrix falls back to a Padé approximant with scaling and squaring.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    ensure_square(a, "expm argument")?;
    ensure_finite(a, "expm argument")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(FluidError::InvalidPoint(format!(
            "expm needs a finite t >= 0, got {t}"
        )));
    }
    let n = a.nrows();
    if n == 0 || t == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    let scale = super::inf_norm(a).max(1.0);
    if check_generator(a, SUBGEN_TOL * scale).is_subgenerator {
        Ok(uniformized(a, t))
    } else {
        Ok((a * t).exp())
    }
}

fn uniformized(a: &Matrix, t: f64) -> Matrix {
    let n = a.nrows();
    let mut b = a * t;
    // Off-diagonal rounding noise would break nonnegativity of P.
    for i in 0..n {
        for j in 0..n {
            if i != j && b[(i, j)] < 0.0 {
                b[(i, j)] = 0.0;
            }
        }
    }
    let q = (0..n).map(|i| -b[(i, i)]).fold(0.0, f64::max);
    if q == 0.0 {
        return Matrix::identity(n, n);
    }
    let squarings = if q > 1.0 { q.log2().ceil() as i32 } else { 0 };
    let b = b / 2f64.powi(squarings);
    let lambda = q / 2f64.powi(squarings);

    let mut p = b / lambda;
    for i in 0..n {
        p[(i, i)] += 1.0;
    }
    // e^{B} = sum_k e^{-lambda} lambda^k / k! P^k with lambda <= 1.
    let mut weight = (-lambda).exp();
    let mut term = Matrix::identity(n, n);
    let mut acc = &term * weight;
    let mut k = 0u32;
    while weight > 1e-20 {
        k += 1;
        term = &term * &p;
        weight *= lambda / f64::from(k);
        acc += &term * weight;
        if k > 60 {
            break;
        }
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}
