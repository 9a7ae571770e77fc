//! Classic Markov-modulated fluid queue: a fluid level that rises at rate one
//! while the background chain is in `S+` and falls at rate one in `S-`,
//! reflected at zero.

use crate::error::{FluidError, Result};
use crate::matcore::{
    check_generator, ensure_finite, ensure_shape, ensure_square, expm, inf_norm, ones, solve_nare_with,
    stationary_vector, Matrix, NareMethod, RowVector, Tolerances,
};

/// Rate matrices of a classic fluid queue.
///
/// `t0mm` and `t0mp` govern the background chain while the fluid is empty;
/// `t0mp` holds the rates of transitions that start a busy period.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicModel {
    pub tpp: Matrix,
    pub tpm: Matrix,
    pub tmp: Matrix,
    pub tmm: Matrix,
    pub t0mm: Matrix,
    pub t0mp: Matrix,
}

impl ClassicModel {
    pub fn n_plus(&self) -> usize {
        self.tpp.nrows()
    }

    pub fn n_minus(&self) -> usize {
        self.tmm.nrows()
    }

    /// Assembled generator `[[Tpp, Tpm], [Tmp, Tmm]]`.
    pub fn generator(&self) -> Matrix {
        let (np, nm) = (self.n_plus(), self.n_minus());
        let mut t = Matrix::zeros(np + nm, np + nm);
        t.view_mut((0, 0), (np, np)).copy_from(&self.tpp);
        t.view_mut((0, np), (np, nm)).copy_from(&self.tpm);
        t.view_mut((np, 0), (nm, np)).copy_from(&self.tmp);
        t.view_mut((np, np), (nm, nm)).copy_from(&self.tmm);
        t
    }

    /// Checks shapes, signs and row sums.
    pub fn validate(&self, tol: f64) -> Result<()> {
        ensure_square(&self.tpp, "Tpp")?;
        ensure_square(&self.tmm, "Tmm")?;
        let (np, nm) = (self.n_plus(), self.n_minus());
        ensure_shape(&self.tpm, np, nm, "Tpm")?;
        ensure_shape(&self.tmp, nm, np, "Tmp")?;
        ensure_shape(&self.t0mm, nm, nm, "T0mm")?;
        ensure_shape(&self.t0mp, nm, np, "T0mp")?;
        for (m, name) in [
            (&self.tpp, "Tpp"),
            (&self.tpm, "Tpm"),
            (&self.tmp, "Tmp"),
            (&self.tmm, "Tmm"),
            (&self.t0mm, "T0mm"),
            (&self.t0mp, "T0mp"),
        ] {
            ensure_finite(m, name)?;
        }
        let mut problems = Vec::new();
        let t = self.generator();
        if !check_generator(&t, tol * inf_norm(&t).max(1.0)).is_generator {
            problems.push("[[Tpp, Tpm], [Tmp, Tmm]] is not a generator".to_string());
        }
        let mut b = Matrix::zeros(nm, nm + np);
        b.view_mut((0, 0), (nm, nm)).copy_from(&self.t0mm);
        b.view_mut((0, nm), (nm, np)).copy_from(&self.t0mp);
        for i in 0..nm {
            let s: f64 = b.row(i).sum();
            let scale = b.row(i).iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if s.abs() > tol * scale {
                problems.push(format!("[T0mm | T0mp] row {i} sums to {s:e}"));
            }
            for j in 0..nm + np {
                if j != i && b[(i, j)] < -tol {
                    problems.push(format!("[T0mm | T0mp] entry ({i}, {j}) is negative"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FluidError::InvalidModel(problems))
        }
    }
}

/// Stationary solution of a [`ClassicModel`].
#[derive(Debug, Clone)]
pub struct ClassicSolution {
    pub psi: Matrix,
    pub k: Matrix,
    pub p_minus: RowVector,
    /// `(ξ+ e, ξ- e)` for the stationary vector `ξ` of the assembled generator.
    pub drift: (f64, f64),
    pub stable: bool,
    /// `p_minus T0mp`: the rate vector at which busy periods start.
    pub(crate) start: RowVector,
    /// `(-K)^{-1} e`.
    pub(crate) neg_k_inv_e: nalgebra::DVector<f64>,
}

/// Drift pair `(ξ+ e, ξ- e)` of a generator split into `np` up-states followed by down-states.
pub(crate) fn drift_pair(t: &Matrix, np: usize, tol: f64) -> Result<(f64, f64)> {
    let xi = stationary_vector(t, tol)?;
    let up: f64 = xi.columns(0, np).sum();
    let down: f64 = xi.columns(np, xi.len() - np).sum();
    Ok((up, down))
}

pub fn solve_classic(model: &ClassicModel) -> Result<ClassicSolution> {
    solve_classic_with(model, &Tolerances::default())
}

pub fn solve_classic_with(model: &ClassicModel, tol: &Tolerances) -> Result<ClassicSolution> {
    model.validate(tol.generator)?;
    let np = model.n_plus();
    let drift = drift_pair(&model.generator(), np, tol.generator)?;
    if !(drift.0 < drift.1) {
        return Err(FluidError::Unstable { up: drift.0, down: drift.1 });
    }
    let (psi, _) = solve_nare_with(&model.tpp, &model.tpm, &model.tmp, &model.tmm, tol, NareMethod::Auto)?;
    let k = &model.tpp + &psi * &model.tmp;

    let boundary = &model.t0mm + &model.t0mp * &psi;
    let mut p = stationary_vector(&boundary, tol.generator)?;
    let neg_k_inv_e = if np == 0 {
        nalgebra::DVector::zeros(0)
    } else {
        (-&k)
            .lu()
            .solve(&ones(np))
            .ok_or_else(|| FluidError::Singular("K".into()))?
    };
    let start = &p * &model.t0mp;
    let total = p.sum() + 2.0 * (&start * &neg_k_inv_e)[(0, 0)];
    p /= total;
    let start = start / total;
    Ok(ClassicSolution { psi, k, p_minus: p, drift, stable: true, start, neg_k_inv_e })
}

/// Stationary densities `(π+(x), π-(x))` at level `x > 0`.
pub fn classic_density(sol: &ClassicSolution, x: f64) -> Result<(RowVector, RowVector)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(FluidError::InvalidPoint(format!("density needs x > 0, got {x}")));
    }
    let plus = &sol.start * expm(&sol.k, x)?;
    let minus = &plus * &sol.psi;
    Ok((plus, minus))
}

/// `P[Ξ <= x]`.
pub fn classic_level_cdf(sol: &ClassicSolution, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(FluidError::InvalidPoint(format!("level must be >= 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    // (-K)^{-1} (I - e^{Kx}) e = (I - e^{Kx}) (-K)^{-1} e since the factors commute.
    let tail = expm(&sol.k, x)? * &sol.neg_k_inv_e;
    let body = &sol.neg_k_inv_e - tail;
    Ok(sol.p_minus.sum() + 2.0 * (&sol.start * body)[(0, 0)])
}

/// Mean fluid level `2 p T0mp (-K)^{-2} e`.
pub fn classic_mean_level(sol: &ClassicSolution) -> Result<f64> {
    if sol.k.nrows() == 0 {
        return Ok(0.0);
    }
    let second = (-&sol.k)
        .lu()
        .solve(&sol.neg_k_inv_e)
        .ok_or_else(|| FluidError::Singular("K".into()))?;
    Ok(2.0 * (&sol.start * second)[(0, 0)])
}
