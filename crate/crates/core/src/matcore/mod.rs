//! Dense real-matrix kernels shared by every solver in the crate.
//!
//! Storage is `nalgebra::DMatrix<f64>`. Zero-sized blocks are legal
//! throughout: a color without up-states simply carries `0 x n` matrices,
//! and every kernel returns correspondingly empty results.

mod expm;
mod nare;
mod stationary;
mod sylvester;

pub use expm::expm;
pub use nare::{nare_residual, solve_nare, solve_nare_with, NareMethod, NareReport};
pub use stationary::stationary_vector;
pub use sylvester::{solve_sylvester, solve_sylvester_with, sylvester_residual};

use crate::error::{FluidError, Result};
use nalgebra::{DMatrix, RowDVector};

pub type Matrix = DMatrix<f64>;
pub type RowVector = RowDVector<f64>;

/// Numerical tolerances used by the kernels. Defaults match the documented
/// solver contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance on generator row sums and off-diagonal signs.
    pub generator: f64,
    /// Convergence threshold on the infinity-norm step of the Riccati iteration.
    pub nare_step: f64,
    /// Iteration cap for the Riccati solvers.
    pub max_iter: usize,
    /// Sylvester equations with both sides up to this size use a direct
    /// Kronecker solve; larger ones go through Schur forms.
    pub kron_max_dim: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            generator: 1e-10,
            nare_step: 1e-14,
            max_iter: 200,
            kron_max_dim: 8,
        }
    }
}

/// Result of [`check_generator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorCheck {
    pub is_generator: bool,
    pub is_subgenerator: bool,
    pub max_row_sum_abs: f64,
}

/// Classifies a square matrix as generator / sub-generator.
pub fn check_generator(g: &Matrix, tol: f64) -> GeneratorCheck {
    let n = g.nrows();
    let mut offdiag_ok = g.is_square();
    let mut max_abs: f64 = 0.0;
    let mut max_sum = f64::NEG_INFINITY;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..g.ncols() {
            let v = g[(i, j)];
            if i != j && v < -tol {
                offdiag_ok = false;
            }
            s += v;
        }
        max_abs = max_abs.max(s.abs());
        max_sum = max_sum.max(s);
    }
    if n == 0 {
        max_sum = 0.0;
    }
    GeneratorCheck {
        is_generator: offdiag_ok && max_abs <= tol,
        is_subgenerator: offdiag_ok && max_sum <= tol,
        max_row_sum_abs: max_abs,
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FluidError::NonFinite(what))
    }
}

pub(crate) fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(FluidError::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub(crate) fn ensure_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(FluidError::Dimension(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Infinity norm (max absolute row sum). Zero for empty matrices.
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Row sums as a column vector.
pub fn row_sums(m: &Matrix) -> Vec<f64> {
    m.row_iter().map(|r| r.sum()).collect()
}

pub fn ones(n: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_element(n, 1.0)
}

pub fn is_zero(m: &Matrix) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// Block-diagonal matrix built from square or rectangular blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Sets negative entries larger than `-tol` to zero. Used on outputs that are
/// probabilities or rates and can only go negative through rounding.
pub(crate) fn clamp_small_negatives(m: &mut Matrix, tol: f64) {
    for v in m.iter_mut() {
        if *v < 0.0 && *v > -tol {
            *v = 0.0;
        }
    }
}
