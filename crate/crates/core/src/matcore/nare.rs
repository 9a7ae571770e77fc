use super::{
    check_generator, clamp_small_negatives, ensure_finite, ensure_shape, ensure_square, inf_norm, is_zero,
    solve_sylvester_with, Matrix, Tolerances,
};
use crate::error::{FluidError, Result};

/// Algorithm selection for [`solve_nare_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NareMethod {
    /// Doubling, Newton if doubling fails, and a direct Sylvester solve when
    /// the quadratic term vanishes.
    Auto,
    /// Structure-preserving doubling only (no shortcut for `Tmp = 0`).
    Doubling,
    /// Newton iteration started from zero.
    Newton,
    /// Linear case `Tmp = 0`, solved as a single Sylvester equation.
    Sylvester,
}

/// How a Riccati solution was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NareReport {
    pub method: NareMethod,
    pub iterations: usize,
    pub residual: f64,
}

/// `Tpp X + X Tmp X + X Tmm + Tpm`.
pub fn nare_residual(tpp: &Matrix, tpm: &Matrix, tmp: &Matrix, tmm: &Matrix, x: &Matrix) -> Matrix {
    tpp * x + x * tmp * x + x * tmm + tpm
}

/// Minimal nonnegative solution of `Tpp X + X Tmp X + X Tmm + Tpm = 0`.
pub fn solve_nare(tpp: &Matrix, tpm: &Matrix, tmp: &Matrix, tmm: &Matrix) -> Result<Matrix> {
    solve_nare_with(tpp, tpm, tmp, tmm, &Tolerances::default(), NareMethod::Auto).map(|(x, _)| x)
}

pub fn solve_nare_with(
    tpp: &Matrix,
    tpm: &Matrix,
    tmp: &Matrix,
    tmm: &Matrix,
    tol: &Tolerances,
    method: NareMethod,
) -> Result<(Matrix, NareReport)> {
    check_blocks(tpp, tpm, tmp, tmm, tol)?;
    let (np, nm) = (tpp.nrows(), tmm.nrows());
    if np == 0 || nm == 0 {
        let report = NareReport { method, iterations: 0, residual: 0.0 };
        return Ok((Matrix::zeros(np, nm), report));
    }

    let (mut x, mut report) = match method {
        NareMethod::Sylvester => {
            if !is_zero(tmp) {
                return Err(FluidError::InvalidBlocks(
                    "the linear solve needs Tmp = 0".into(),
                ));
            }
            (solve_sylvester_with(tpp, tmm, tpm, tol)?, report0(NareMethod::Sylvester))
        }
        NareMethod::Newton => newton(tpp, tpm, tmp, tmm, tol, Matrix::zeros(np, nm))?,
        NareMethod::Doubling => doubling(tpp, tpm, tmp, tmm, tol)?,
        NareMethod::Auto => {
            if is_zero(tmp) {
                (solve_sylvester_with(tpp, tmm, tpm, tol)?, report0(NareMethod::Sylvester))
            } else {
                match doubling(tpp, tpm, tmp, tmm, tol) {
                    Ok(r) => r,
                    Err(FluidError::NoConvergence { .. }) | Err(FluidError::SingularPencil) => {
                        newton(tpp, tpm, tmp, tmm, tol, Matrix::zeros(np, nm))?
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    };

    clamp_small_negatives(&mut x, 1e-12);
    report.residual = inf_norm(&nare_residual(tpp, tpm, tmp, tmm, &x));
    // One Newton step removes the rounding left by doubling on harder instances.
    if report.residual > 1e-13 && method != NareMethod::Sylvester {
        if let Ok(polished) = newton_step(tpp, tpm, tmp, tmm, tol, &x) {
            let mut polished = polished;
            clamp_small_negatives(&mut polished, 1e-12);
            let r = inf_norm(&nare_residual(tpp, tpm, tmp, tmm, &polished));
            if r < report.residual {
                x = polished;
                report.residual = r;
            }
        }
    }
    ensure_finite(&x, "Riccati solution")?;
    Ok((x, report))
}

fn report0(method: NareMethod) -> NareReport {
    NareReport { method, iterations: 1, residual: 0.0 }
}

fn check_blocks(tpp: &Matrix, tpm: &Matrix, tmp: &Matrix, tmm: &Matrix, tol: &Tolerances) -> Result<()> {
    ensure_square(tpp, "Tpp")?;
    ensure_square(tmm, "Tmm")?;
    let (np, nm) = (tpp.nrows(), tmm.nrows());
    ensure_shape(tpm, np, nm, "Tpm")?;
    ensure_shape(tmp, nm, np, "Tmp")?;
    for (m, name) in [(tpp, "Tpp"), (tpm, "Tpm"), (tmp, "Tmp"), (tmm, "Tmm")] {
        ensure_finite(m, name)?;
    }
    let mut t = Matrix::zeros(np + nm, np + nm);
    t.view_mut((0, 0), (np, np)).copy_from(tpp);
    t.view_mut((0, np), (np, nm)).copy_from(tpm);
    t.view_mut((np, 0), (nm, np)).copy_from(tmp);
    t.view_mut((np, np), (nm, nm)).copy_from(tmm);
    let scale = inf_norm(&t).max(1.0);
    let check = check_generator(&t, tol.generator * scale);
    if !check.is_subgenerator {
        return Err(FluidError::InvalidBlocks(format!(
            "assembled [[Tpp, Tpm], [Tmp, Tmm]] is not a sub-generator (largest |row sum| {:e})",
            check.max_row_sum_abs
        )));
    }
    Ok(())
}

fn inverse(m: &Matrix) -> Result<Matrix> {
    m.clone().try_inverse().ok_or(FluidError::SingularPencil)
}

/// Structure-preserving doubling on the M-matrix form
/// `X C X - X D - A X + B = 0` with `A = -Tpp`, `B = Tpm`, `C = Tmp`, `D = -Tmm`.
fn doubling(tpp: &Matrix, tpm: &Matrix, tmp: &Matrix, tmm: &Matrix, tol: &Tolerances) -> Result<(Matrix, NareReport)> {
    let (np, nm) = (tpp.nrows(), tmm.nrows());
    let a = -tpp;
    let d = -tmm;
    let b = tpm;
    let c = tmp;
    let gamma = (0..np)
        .map(|i| a[(i, i)])
        .chain((0..nm).map(|j| d[(j, j)]))
        .fold(0.0, f64::max);
    if gamma == 0.0 {
        // No state can be left: nothing returns.
        return Ok((Matrix::zeros(np, nm), report0(NareMethod::Doubling)));
    }
    let ip = Matrix::identity(np, np);
    let im = Matrix::identity(nm, nm);
    let ag = &a + &ip * gamma;
    let dg = &d + &im * gamma;
    let ag_inv = inverse(&ag)?;
    let dg_inv = inverse(&dg)?;
    let w = &ag - b * &dg_inv * c;
    let v = &dg - c * &ag_inv * b;
    let w_inv = inverse(&w)?;
    let v_inv = inverse(&v)?;
    let two_g = 2.0 * gamma;

    let mut e = &im - &v_inv * two_g;
    let mut f = &ip - &w_inv * two_g;
    let mut g = &dg_inv * c * &w_inv * two_g;
    let mut h = &w_inv * b * &dg_inv * two_g;

    let mut last_step = f64::INFINITY;
    for k in 1..=tol.max_iter {
        let gh = inverse(&(&im - &g * &h))?;
        let hg = inverse(&(&ip - &h * &g))?;
        let e_gh = &e * &gh;
        let f_hg = &f * &hg;
        let h_next = &h + &f_hg * &h * &e;
        let g_next = &g + &e_gh * &g * &f;
        e = &e_gh * &e;
        f = &f_hg * &f;
        let step = inf_norm(&(&h_next - &h));
        h = h_next;
        g = g_next;
        ensure_finite(&h, "doubling iterate")?;
        last_step = step;
        if step <= tol.nare_step * inf_norm(&h).max(1.0) {
            return Ok((h, NareReport { method: NareMethod::Doubling, iterations: k, residual: 0.0 }));
        }
    }
    Err(FluidError::NoConvergence { method: "doubling", iterations: tol.max_iter, last_step })
}

/// Newton update from `x`: solves
/// `(Tpp + X Tmp) Y + Y (Tmm + Tmp X) = X Tmp X - Tpm`.
fn newton_step(tpp: &Matrix, tpm: &Matrix, tmp: &Matrix, tmm: &Matrix, tol: &Tolerances, x: &Matrix) -> Result<Matrix> {
    let lhs_a = tpp + x * tmp;
    let lhs_b = tmm + tmp * x;
    let rhs = tpm - x * tmp * x;
    solve_sylvester_with(&lhs_a, &lhs_b, &rhs, tol)
}

fn newton(
    tpp: &Matrix,
    tpm: &Matrix,
    tmp: &Matrix,
    tmm: &Matrix,
    tol: &Tolerances,
    mut x: Matrix,
) -> Result<(Matrix, NareReport)> {
    let mut last_step = f64::INFINITY;
    for k in 1..=tol.max_iter {
        let next = newton_step(tpp, tpm, tmp, tmm, tol, &x)?;
        let step = inf_norm(&(&next - &x));
        x = next;
        let converged = step <= tol.nare_step * inf_norm(&x).max(1.0);
        // Near the rounding floor the step stops shrinking; accept once it is tiny.
        let stalled = step < 1e-11 && step >= last_step;
        if converged || stalled {
            return Ok((x, NareReport { method: NareMethod::Newton, iterations: k, residual: 0.0 }));
        }
        last_step = step;
    }
    Err(FluidError::NoConvergence { method: "newton", iterations: tol.max_iter, last_step })
}
