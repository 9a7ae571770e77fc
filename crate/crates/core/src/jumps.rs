//! Colored fluid queues with upward phase-type fluid jumps.
//!
//! Between jumps the background chain always sits in `S-` and the fluid
//! drains at rate one. A jump adds a phase-type amount of fluid of a single
//! color, either on top of the current top color (same color) or as a new,
//! higher color. The analysis replaces every jump by a unit-rate climb whose
//! length follows the jump-size distribution, solves the resulting colored
//! queue, and censors the climbing periods out again.

use std::collections::BTreeMap;

use crate::colored::{self, ColorBlocks, ColoredModel, ColoredSolution, CrossBlocks, SolveOptions};
use crate::error::{FluidError, Result};
use crate::matcore::{ones, Matrix, RowVector};

/// Phase-type distribution: absorption time of a chain started in `alpha`
/// with transient sub-generator `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhDist {
    pub alpha: RowVector,
    pub u: Matrix,
}

impl PhDist {
    pub fn new(alpha: RowVector, u: Matrix) -> Result<Self> {
        let ph = Self { alpha, u };
        let problems = ph.problems(1e-10);
        if problems.is_empty() {
            Ok(ph)
        } else {
            Err(FluidError::InvalidModel(problems))
        }
    }

    pub fn exponential(rate: f64) -> Self {
        Self { alpha: RowVector::from_element(1, 1.0), u: Matrix::from_element(1, 1, -rate) }
    }

    /// Erlang distribution with `k` phases and the given mean.
    pub fn erlang(k: usize, mean: f64) -> Self {
        let r = k as f64 / mean;
        let mut u = Matrix::zeros(k, k);
        for i in 0..k {
            u[(i, i)] = -r;
            if i + 1 < k {
                u[(i, i + 1)] = r;
            }
        }
        let mut alpha = RowVector::zeros(k);
        alpha[0] = 1.0;
        Self { alpha, u }
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// Absorption rates `(-U) e`.
    pub fn exit_rates(&self) -> nalgebra::DVector<f64> {
        -(&self.u * ones(self.order()))
    }

    pub fn mean(&self) -> Result<f64> {
        let m = (-&self.u)
            .lu()
            .solve(&ones(self.order()))
            .ok_or_else(|| FluidError::Singular("phase-type generator".into()))?;
        Ok((&self.alpha * m)[(0, 0)])
    }

    pub(crate) fn problems(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.order();
        if m == 0 {
            out.push("phase-type distribution has no phases".into());
            return out;
        }
        if self.u.nrows() != m || self.u.ncols() != m {
            out.push(format!("U must be {m}x{m}, got {}x{}", self.u.nrows(), self.u.ncols()));
            return out;
        }
        if self.alpha.iter().chain(self.u.iter()).any(|v| !v.is_finite()) {
            out.push("non-finite phase-type parameter".into());
            return out;
        }
        if self.alpha.iter().any(|&a| a < -tol) {
            out.push("alpha has a negative entry".into());
        }
        let mass = self.alpha.sum();
        if (mass - 1.0).abs() > tol {
            out.push(format!("alpha sums to {mass}, expected 1"));
        }
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..m {
                if i != j && self.u[(i, j)] < -tol {
                    out.push(format!("U has a negative off-diagonal entry at ({i}, {j})"));
                }
                s += self.u[(i, j)];
            }
            if s > tol {
                out.push(format!("U row {i} sums to {s:e} > 0"));
            }
        }
        if out.is_empty() && (-&self.u).try_inverse().is_none() {
            out.push("U is singular: absorption is not certain".into());
        }
        out
    }
}

/// Jump model. Colors are numbered from 1; color 0 is the empty queue.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpModel {
    pub n_minus: usize,
    /// `tmm[c]` for `c = 0..=C`: background rates without a jump.
    pub tmm: Vec<Matrix>,
    /// `ph[c - 1][l - 1]`: size distribution of type-`l` jumps of color `c`.
    pub ph: Vec<Vec<PhDist>>,
    /// `q_new[(c, c')][l - 1]`, `0 <= c < c'`: rates of type-`l` jumps that put
    /// fluid of color `c'` on top of color `c`. Absent keys are zero.
    pub q_new: BTreeMap<(usize, usize), Vec<Matrix>>,
    /// `q_same[c - 1][l - 1]`: rates of type-`l` jumps that add color-`c` fluid
    /// while color `c` is on top. An empty list means no such jumps.
    pub q_same: Vec<Vec<Matrix>>,
}

impl JumpModel {
    pub fn num_colors(&self) -> usize {
        self.ph.len()
    }

    /// Lists every violated invariant.
    pub fn problems(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let cc = self.num_colors();
        let n = self.n_minus;
        if cc == 0 {
            out.push("at least one color is required".into());
            return out;
        }
        if self.tmm.len() != cc + 1 {
            out.push(format!("expected {} down-rate matrices (colors 0..={cc}), got {}", cc + 1, self.tmm.len()));
            return out;
        }
        if self.q_same.len() != cc {
            out.push(format!("expected {cc} same-color jump lists, got {}", self.q_same.len()));
            return out;
        }
        for (c, list) in self.ph.iter().enumerate() {
            if list.is_empty() {
                out.push(format!("color {} has no jump types", c + 1));
            }
            for (l, ph) in list.iter().enumerate() {
                for p in ph.problems(tol) {
                    out.push(format!("ph[{}][{}]: {p}", c + 1, l + 1));
                }
            }
        }
        let check = |m: &Matrix, name: &str, out: &mut Vec<String>| -> bool {
            if m.nrows() != n || m.ncols() != n {
                out.push(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols()));
                return false;
            }
            if m.iter().any(|v| !v.is_finite()) {
                out.push(format!("{name} has a non-finite entry"));
                return false;
            }
            true
        };
        let mut ok = true;
        for (c, m) in self.tmm.iter().enumerate() {
            ok &= check(m, &format!("Tmm[{c}]"), &mut out);
        }
        for (&(c, d), list) in &self.q_new {
            if !(c < d && d <= cc) {
                out.push(format!("jump key ({c}, {d}) needs 0 <= c < c' <= {cc}"));
                ok = false;
                continue;
            }
            if list.len() != self.ph[d - 1].len() {
                out.push(format!(
                    "Q[{c}][{d}] has {} types but color {d} has {}",
                    list.len(),
                    self.ph[d - 1].len()
                ));
                ok = false;
                continue;
            }
            for (l, m) in list.iter().enumerate() {
                ok &= check(m, &format!("Q[{c}][{d}][{}]", l + 1), &mut out);
            }
        }
        for (c, list) in self.q_same.iter().enumerate() {
            if !list.is_empty() && list.len() != self.ph[c].len() {
                out.push(format!("Qsame[{}] has {} types but color {} has {}", c + 1, list.len(), c + 1, self.ph[c].len()));
                ok = false;
                continue;
            }
            for (l, m) in list.iter().enumerate() {
                ok &= check(m, &format!("Qsame[{}][{}]", c + 1, l + 1), &mut out);
            }
        }
        if !ok {
            return out;
        }

        for c in 0..=cc {
            let mut total = self.tmm[c].clone();
            let t = &self.tmm[c];
            for i in 0..n {
                for j in 0..n {
                    if i != j && t[(i, j)] < -tol {
                        out.push(format!("Tmm[{c}] has a negative off-diagonal entry at ({i}, {j})"));
                    }
                }
            }
            let mut jump_mats: Vec<(String, &Matrix)> = Vec::new();
            for (&(a, d), list) in self.q_new.range((c, 0)..(c + 1, 0)) {
                for (l, m) in list.iter().enumerate() {
                    jump_mats.push((format!("Q[{a}][{d}][{}]", l + 1), m));
                }
            }
            if c >= 1 {
                for (l, m) in self.q_same[c - 1].iter().enumerate() {
                    jump_mats.push((format!("Qsame[{c}][{}]", l + 1), m));
                }
            }
            for (name, m) in jump_mats {
                if m.iter().any(|&v| v < -tol) {
                    out.push(format!("{name} has a negative rate"));
                }
                total += m;
            }
            for i in 0..n {
                let s: f64 = total.row(i).sum();
                let mag = total.row(i).iter().map(|v| v.abs()).sum::<f64>().max(1.0);
                if s.abs() > tol * mag {
                    out.push(format!("color {c} row {i}: total rates sum to {s:e} instead of 0"));
                }
            }
        }
        out
    }
}

/// Index of the expanded up-states: `S+^(c)` enumerates triples
/// `(a, l, m)` (background state after the jump, jump type, phase) with `a`
/// slowest and `m` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMap {
    n_minus: usize,
    /// Per color, the starting offset of each type inside one background block.
    type_offsets: Vec<Vec<usize>>,
}

impl StateMap {
    fn new(jm: &JumpModel) -> Self {
        let type_offsets = jm
            .ph
            .iter()
            .map(|list| {
                let mut off = vec![0];
                for ph in list {
                    off.push(off.last().unwrap() + ph.order());
                }
                off
            })
            .collect();
        Self { n_minus: jm.n_minus, type_offsets }
    }

    /// Phases per background state for color `c`.
    pub fn block(&self, c: usize) -> usize {
        *self.type_offsets[c - 1].last().unwrap()
    }

    pub fn len(&self, c: usize) -> usize {
        self.n_minus * self.block(c)
    }

    /// Position of `(a, l, m)` in `S+^(c)`; `l` is 1-based, `a` and `m` 0-based.
    pub fn index(&self, c: usize, a: usize, l: usize, m: usize) -> usize {
        a * self.block(c) + self.type_offsets[c - 1][l - 1] + m
    }

    /// Inverse of [`StateMap::index`].
    pub fn triple(&self, c: usize, idx: usize) -> (usize, usize, usize) {
        let b = self.block(c);
        let (a, rest) = (idx / b, idx % b);
        let off = &self.type_offsets[c - 1];
        let l = off.partition_point(|&o| o <= rest);
        (a, l, rest - off[l - 1])
    }
}

/// Builds `[Q_1 ⊗ α_1, ..., Q_L ⊗ α_L]` in the `(a, l, m)` column order.
fn spread(map: &StateMap, c: usize, qs: &[Matrix], ph: &[PhDist]) -> Matrix {
    let n = map.n_minus;
    let mut out = Matrix::zeros(n, map.len(c));
    for (l, (q, d)) in qs.iter().zip(ph).enumerate() {
        for i in 0..n {
            for a in 0..n {
                let r = q[(i, a)];
                if r == 0.0 {
                    continue;
                }
                for m in 0..d.order() {
                    out[(i, map.index(c, a, l + 1, m))] = r * d.alpha[m];
                }
            }
        }
    }
    out
}

/// Replaces every jump by a unit-rate climb through the phases of its size
/// distribution.
pub fn expand_jumps(jm: &JumpModel) -> Result<(ColoredModel, StateMap)> {
    let problems = jm.problems(1e-10);
    if !problems.is_empty() {
        return Err(FluidError::InvalidModel(problems));
    }
    let map = StateMap::new(jm);
    let cc = jm.num_colors();
    let n = jm.n_minus;
    let mut colors = Vec::with_capacity(cc);
    for c in 1..=cc {
        let len = map.len(c);
        let mut tpp = Matrix::zeros(len, len);
        let mut tpm = Matrix::zeros(len, n);
        for a in 0..n {
            for (l, ph) in jm.ph[c - 1].iter().enumerate() {
                let exit = ph.exit_rates();
                let base = map.index(c, a, l + 1, 0);
                tpp.view_mut((base, base), (ph.order(), ph.order())).copy_from(&ph.u);
                for m in 0..ph.order() {
                    tpm[(base + m, a)] = exit[m];
                }
            }
        }
        let tmp = if jm.q_same[c - 1].is_empty() {
            Matrix::zeros(n, len)
        } else {
            spread(&map, c, &jm.q_same[c - 1], &jm.ph[c - 1])
        };
        colors.push(ColorBlocks { tpp, tpm, tmp, tmm: jm.tmm[c].clone() });
    }
    let mut tmp2 = CrossBlocks::new();
    let mut t0mp: Vec<Matrix> = (1..=cc).map(|c| Matrix::zeros(n, map.len(c))).collect();
    for (&(c, d), qs) in &jm.q_new {
        let blk = spread(&map, d, qs, &jm.ph[d - 1]);
        if c == 0 {
            t0mp[d - 1] += blk;
        } else {
            tmp2.insert((c, d), blk);
        }
    }
    let model = ColoredModel {
        n_minus: n,
        colors,
        tpp2: CrossBlocks::new(),
        tmp2,
        t0mm: jm.tmm[0].clone(),
        t0mp,
    };
    Ok((model, map))
}

/// Stationary solution of a [`JumpModel`], censored to the draining periods.
#[derive(Debug, Clone)]
pub struct JumpSolution {
    pub colored: ColoredSolution,
    pub map: StateMap,
}

impl JumpSolution {
    pub fn recurrent(&self) -> bool {
        self.colored.recurrent
    }

    /// Boundary probabilities over `S-` (queue empty).
    pub fn p_minus(&self) -> Result<&RowVector> {
        self.colored.p_minus.as_ref().ok_or(FluidError::NotRecurrent)
    }
}

pub fn solve_jumps(jm: &JumpModel) -> Result<JumpSolution> {
    solve_jumps_with(jm, &SolveOptions::default())
}

pub fn solve_jumps_with(jm: &JumpModel, opts: &SolveOptions) -> Result<JumpSolution> {
    let (model, map) = expand_jumps(jm)?;
    let colored = colored::solve_scaled(&model, opts, 1.0)?;
    Ok(JumpSolution { colored, map })
}

/// Density of the draining states at the color-level vector `xs`.
pub fn jump_density(js: &JumpSolution, xs: &[f64]) -> Result<RowVector> {
    colored::density(&js.colored, xs).map(|(_, minus)| minus)
}

/// `P[Ξ <= x]` for the total fluid (workload) level.
pub fn jump_level_cdf(js: &JumpSolution, x: f64) -> Result<f64> {
    colored::level_cdf(&js.colored, x)
}

pub fn jump_mean_level(js: &JumpSolution) -> Result<f64> {
    colored::mean_level(&js.colored)
}

/// Law of the top color over `{0, ..., C}`.
pub fn jump_top_color_dist(js: &JumpSolution) -> Result<Vec<f64>> {
    colored::top_color_dist(&js.colored)
}

/// Joint law of (top color, background state): row `c` for `c = 0..=C`,
/// column per state of `S-`.
pub fn joint_marginal(js: &JumpSolution) -> Result<Matrix> {
    let p = js.p_minus()?;
    let occ = js.colored.occupation()?;
    let cc = js.colored.num_colors();
    let n = p.len();
    let mut m = Matrix::zeros(cc + 1, n);
    m.row_mut(0).copy_from(p);
    for c in 1..=cc {
        let row = &occ[c - 1] * &js.colored.psi[c - 1];
        m.row_mut(c).copy_from(&row);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    pub(crate) fn mm1(lambda: f64, mu: f64) -> JumpModel {
        let mut q_new = BTreeMap::new();
        q_new.insert((0, 1), vec![s(lambda)]);
        JumpModel {
            n_minus: 1,
            tmm: vec![s(-lambda), s(-lambda)],
            ph: vec![vec![PhDist::exponential(mu)]],
            q_new,
            q_same: vec![vec![s(lambda)]],
        }
    }

    #[test]
    fn expansion_of_mm1() {
        let (m, _) = expand_jumps(&mm1(1.0, 2.0)).unwrap();
        let b = m.color(1);
        assert_eq!(b.tpp, s(-2.0));
        assert_eq!(b.tpm, s(2.0));
        assert_eq!(b.tmp, s(1.0));
        assert_eq!(b.tmm, s(-1.0));
        assert_eq!(m.t0mp[0], s(1.0));
        assert_eq!(m.t0mm, s(-1.0));
    }

    #[test]
    fn mm1_workload() {
        let js = solve_jumps(&mm1(1.0, 2.0)).unwrap();
        assert!((js.p_minus().unwrap()[0] - 0.5).abs() < 1e-12);
        assert!((js.colored.psi[0][(0, 0)] - 1.0).abs() < 1e-12);
        for x in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let want = 1.0 - 0.5 * f64::exp(-x);
            assert!((jump_level_cdf(&js, x).unwrap() - want).abs() < 1e-12);
        }
        let g = jump_top_color_dist(&js).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.5).abs() < 1e-12);
        let jm = joint_marginal(&js).unwrap();
        assert!((jm[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overloaded_mm1_is_flagged() {
        let js = solve_jumps(&mm1(3.0, 2.0)).unwrap();
        assert!(!js.recurrent());
    }

    #[test]
    fn state_map_round_trip() {
        let mut jm = mm1(1.0, 2.0);
        jm.n_minus = 1;
        jm.ph[0] = vec![PhDist::erlang(2, 1.0), PhDist::exponential(3.0)];
        let map = StateMap::new(&jm);
        assert_eq!(map.len(1), 3);
        for idx in 0..3 {
            let (a, l, m) = map.triple(1, idx);
            assert_eq!(map.index(1, a, l, m), idx);
        }
        assert_eq!(map.triple(1, 2), (0, 2, 0));
    }
}
