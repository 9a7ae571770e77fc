use super::{check_generator, ensure_finite, ensure_square, inf_norm, Matrix, RowVector};
use crate::error::{FluidError, Result};

/// Invariant probability vector `v` of a generator: `v G = 0`, `v e = 1`.
///
/// Uniqueness is checked on the numerical rank of `G`; the vector itself is
/// obtained by replacing the last column of `G` with ones and solving the
/// resulting nonsingular system.
pub fn stationary_vector(g: &Matrix, tol: f64) -> Result<RowVector> {
    ensure_square(g, "generator")?;
    ensure_finite(g, "generator")?;
    let n = g.nrows();
    if n == 0 {
        return Ok(RowVector::zeros(0));
    }
    let scale = inf_norm(g).max(1.0);
    let check = check_generator(g, tol * scale);
    if !check.is_generator {
        return Err(FluidError::NotAGenerator(format!(
            "largest |row sum| {:e} (tolerance {:e})",
            check.max_row_sum_abs, tol
        )));
    }
    if n == 1 {
        return Ok(RowVector::from_element(1, 1.0));
    }

    let sv = g.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let cutoff = smax.max(f64::MIN_POSITIVE) * 1e-13 * n as f64;
    let nullity = sv.iter().filter(|&&s| s <= cutoff).count();
    if nullity > 1 {
        return Err(FluidError::Reducible(nullity));
    }

    let mut a = g.clone();
    a.column_mut(n - 1).fill(1.0);
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = a
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(FluidError::Reducible(2))?;

    let mut v = sol.transpose();
    for x in v.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-10 {
                return Err(FluidError::Reducible(2));
            }
            *x = 0.0;
        }
    }
    let s = v.sum();
    v /= s;
    Ok(v)
}
