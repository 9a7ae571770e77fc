use super::{ensure_finite, ensure_shape, ensure_square, inf_norm, Matrix, Tolerances};
use crate::error::{FluidError, Result};

/// Relative pivot threshold below which a Sylvester operator is declared singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Solves `A X + X B + C = 0` for `X` (`A` is m x m, `B` is n x n, `C` is m x n).
pub fn solve_sylvester(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    solve_sylvester_with(a, b, c, &Tolerances::default())
}

pub fn solve_sylvester_with(a: &Matrix, b: &Matrix, c: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    ensure_square(a, "Sylvester A")?;
    ensure_square(b, "Sylvester B")?;
    let (m, n) = (a.nrows(), b.nrows());
    ensure_shape(c, m, n, "Sylvester C")?;
    ensure_finite(a, "Sylvester A")?;
    ensure_finite(b, "Sylvester B")?;
    ensure_finite(c, "Sylvester C")?;
    if m == 0 || n == 0 {
        return Ok(Matrix::zeros(m, n));
    }
    if m.max(n) <= tol.kron_max_dim {
        let rhs = -c;
        kron_solve(a, b, &rhs)
    } else {
        bartels_stewart(a, b, c)
    }
}

/// `A X + X B + C`.
pub fn sylvester_residual(a: &Matrix, b: &Matrix, c: &Matrix, x: &Matrix) -> Matrix {
    a * x + x * b + c
}

/// Direct solve of `A X + X B = F` through the vectorized system
/// `(I ⊗ A + Bᵀ ⊗ I) vec(X) = vec(F)` (column-major vec).
fn kron_solve(a: &Matrix, b: &Matrix, f: &Matrix) -> Result<Matrix> {
    let (m, n) = (a.nrows(), b.nrows());
    let big = Matrix::identity(n, n).kronecker(a) + b.transpose().kronecker(&Matrix::identity(m, m));
    let lu = big.lu();
    let u = lu.u();
    let dmax = u.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let dmin = u.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let scale = (inf_norm(a) + inf_norm(b)).max(dmax);
    if !(dmin > PIVOT_RTOL * scale) {
        return Err(FluidError::SingularPencil);
    }
    let rhs = nalgebra::DVector::from_column_slice(f.as_slice());
    let x = lu.solve(&rhs).ok_or(FluidError::SingularPencil)?;
    Ok(Matrix::from_column_slice(m, n, x.as_slice()))
}

/// Partition of a real quasi-triangular Schur factor into its 1x1 and 2x2
/// diagonal blocks, returned as (start, size).
fn schur_blocks(t: &Matrix) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)].abs();
            let diag = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub > f64::EPSILON * diag.max(f64::MIN_POSITIVE) {
                blocks.push((i, 2));
                i += 2;
                continue;
            }
        }
        blocks.push((i, 1));
        i += 1;
    }
    blocks
}

/// Bartels–Stewart: reduce both coefficients to real Schur form
/// `A = U S Uᵀ`, `B = V R Vᵀ`, then solve `S Y + Y R = -Uᵀ C V` block by block.
fn bartels_stewart(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    let (ua, sa) = a.clone().schur().unpack();
    let (ub, sb) = b.clone().schur().unpack();
    let f = -(ua.transpose() * c * &ub);

    let ra = schur_blocks(&sa);
    let rb = schur_blocks(&sb);
    let (m, n) = (a.nrows(), b.nrows());
    let mut y = Matrix::zeros(m, n);

    // Y_kl depends on Y_il (i below k) and Y_kj (j left of l).
    for &(k0, kp) in ra.iter().rev() {
        for &(l0, lq) in rb.iter() {
            let mut rhs = f.view((k0, l0), (kp, lq)).clone_owned();
            if k0 + kp < m {
                let tail = m - (k0 + kp);
                rhs -= sa.view((k0, k0 + kp), (kp, tail)) * y.view((k0 + kp, l0), (tail, lq));
            }
            if l0 > 0 {
                rhs -= y.view((k0, 0), (kp, l0)) * sb.view((0, l0), (l0, lq));
            }
            let akk = sa.view((k0, k0), (kp, kp)).clone_owned();
            let bll = sb.view((l0, l0), (lq, lq)).clone_owned();
            let blk = kron_solve(&akk, &bll, &rhs)?;
            y.view_mut((k0, l0), (kp, lq)).copy_from(&blk);
        }
    }
    Ok(ua * y * ub.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_case() {
        let x = solve_sylvester(
            &Matrix::from_element(1, 1, -2.0),
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decoupled_scalars() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -3.0]);
        let b = Matrix::from_element(1, 1, -1.0);
        let c = Matrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn overlapping_spectra_rejected() {
        // A = 1, B = -1: A and -B share eigenvalue 1.
        let r = solve_sylvester(
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::from_element(1, 1, 1.0),
        );
        assert!(matches!(r, Err(FluidError::SingularPencil)));
    }

    #[test]
    fn schur_path_handles_complex_pairs() {
        // A has a complex eigenpair, forcing a 2x2 Schur block.
        let mut a = Matrix::zeros(10, 10);
        for i in 0..10 {
            a[(i, i)] = -2.0 - i as f64 * 0.1;
        }
        a[(0, 1)] = 3.0;
        a[(1, 0)] = -3.0;
        a[(4, 7)] = 0.5;
        let b = Matrix::from_fn(9, 9, |i, j| if i == j { -1.0 } else { 0.05 * ((i + 2 * j) % 5) as f64 });
        let c = Matrix::from_fn(10, 9, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        let r = sylvester_residual(&a, &b, &c, &x);
        assert!(inf_norm(&r) < 1e-12, "residual {}", inf_norm(&r));
    }

    #[test]
    fn empty_blocks() {
        let x = solve_sylvester(&Matrix::zeros(0, 0), &Matrix::from_element(2, 2, -1.0), &Matrix::zeros(0, 2)).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (0, 2));
    }
}
