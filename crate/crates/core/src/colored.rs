//! Colored fluid queues.
//!
//! Fluid is stored as a stack of colors `1..=C` that strictly increase from
//! bottom to top. While fluid rises the background chain lives in the
//! up-states `S+^(c)` of the color being added; while it falls, the chain
//! lives in the shared down-states `S-` but uses the rate matrices of the
//! color on top. The solution is computed by a backward recursion over colors,
//! one Riccati equation per color.

use std::collections::BTreeMap;
use std::fmt;

use crate::classic::{drift_pair, ClassicModel};
use crate::error::{FluidError, Result};
use crate::matcore::{
    check_generator, expm, inf_norm, is_zero, ones, solve_nare_with, stationary_vector, Matrix, NareMethod,
    NareReport, RowVector, Tolerances,
};

/// Off-diagonal blocks between colors, keyed by `(c, c')` with `1 <= c < c' <= C`.
/// Absent keys are zero blocks.
pub type CrossBlocks = BTreeMap<(usize, usize), Matrix>;

/// Per-color rate matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorBlocks {
    /// Up to up, within the color.
    pub tpp: Matrix,
    /// Up to down.
    pub tpm: Matrix,
    /// Down to up, starting more fluid of the same color.
    pub tmp: Matrix,
    /// Down to down while this color is on top.
    pub tmm: Matrix,
}

/// A colored fluid queue. Colors are numbered from 1; `colors[c - 1]` and
/// `t0mp[c - 1]` hold the blocks of color `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColoredModel {
    pub n_minus: usize,
    pub colors: Vec<ColorBlocks>,
    /// `tpp2[(c, c')]`: from `S+^(c)` to `S+^(c')`, switching to a higher color while rising.
    pub tpp2: CrossBlocks,
    /// `tmp2[(c, c')]`: from `S-` (color `c` on top) to `S+^(c')`.
    pub tmp2: CrossBlocks,
    /// Down to down while the queue is empty.
    pub t0mm: Matrix,
    /// `t0mp[c - 1]`: from the empty queue into `S+^(c)`.
    pub t0mp: Vec<Matrix>,
}

impl ColoredModel {
    pub fn num_colors(&self) -> usize {
        self.colors.len()
    }

    /// Size of `S+^(c)`, for `c` in `1..=C`.
    pub fn n_plus(&self, c: usize) -> usize {
        self.colors[c - 1].tpp.nrows()
    }

    pub fn color(&self, c: usize) -> &ColorBlocks {
        &self.colors[c - 1]
    }

    /// Cross blocks leaving color `c`, as `(c', block)` pairs.
    fn cross_from<'a>(blocks: &'a CrossBlocks, c: usize) -> impl Iterator<Item = (usize, &'a Matrix)> + 'a {
        blocks.range((c, 0)..(c + 1, 0)).map(|(&(_, to), m)| (to, m))
    }
}

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub block: String,
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} row {}: {}", self.block, r, self.message),
            None => write!(f, "{}: {}", self.block, self.message),
        }
    }
}

fn diag(block: impl Into<String>, row: Option<usize>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { block: block.into(), row, message: message.into() }
}

/// A row of a generator split over several blocks; `diag_block` marks the
/// block that holds the diagonal.
struct RowGroup<'a> {
    parts: Vec<(String, &'a Matrix, bool)>,
    label: String,
}

impl RowGroup<'_> {
    fn check(&self, rows: usize, tol: f64, out: &mut Vec<Diagnostic>) {
        for i in 0..rows {
            let mut sum = 0.0;
            let mut mag = 0.0;
            for (name, m, has_diag) in &self.parts {
                for j in 0..m.ncols() {
                    let v = m[(i, j)];
                    sum += v;
                    mag += v.abs();
                    let off = !(*has_diag && i == j);
                    if off && v < -tol {
                        out.push(diag(name.clone(), Some(i), format!("negative rate {v:e} in column {j}")));
                    }
                }
            }
            if sum.abs() > tol * mag.max(1.0) {
                out.push(diag(self.label.clone(), Some(i), format!("row sums to {sum:e} instead of 0")));
            }
        }
    }
}

fn shape(out: &mut Vec<Diagnostic>, name: &str, m: &Matrix, rows: usize, cols: usize) -> bool {
    if m.nrows() != rows || m.ncols() != cols {
        out.push(diag(name, None, format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols())));
        return false;
    }
    if m.iter().any(|v| !v.is_finite()) {
        out.push(diag(name, None, "non-finite entry"));
        return false;
    }
    true
}

/// Lists every violated structural invariant. Empty means the model is valid.
pub fn validate(model: &ColoredModel, tol: f64) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let cc = model.num_colors();
    let nm = model.n_minus;
    if cc == 0 {
        out.push(diag("model", None, "at least one color is required"));
        return out;
    }
    if model.t0mp.len() != cc {
        out.push(diag("T0mp", None, format!("expected {cc} blocks, got {}", model.t0mp.len())));
        return out;
    }
    let mut ok = shape(&mut out, "T0mm", &model.t0mm, nm, nm);
    for c in 1..=cc {
        let b = model.color(c);
        let np = b.tpp.nrows();
        ok &= shape(&mut out, &format!("Tpp[{c}]"), &b.tpp, np, np);
        ok &= shape(&mut out, &format!("Tpm[{c}]"), &b.tpm, np, nm);
        ok &= shape(&mut out, &format!("Tmp[{c}]"), &b.tmp, nm, np);
        ok &= shape(&mut out, &format!("Tmm[{c}]"), &b.tmm, nm, nm);
        ok &= shape(&mut out, &format!("T0mp[{c}]"), &model.t0mp[c - 1], nm, np);
    }
    for (name, blocks, rows_up) in [("Tpp2", &model.tpp2, true), ("Tmp2", &model.tmp2, false)] {
        for (&(c, d), m) in blocks.iter() {
            if !(1 <= c && c < d && d <= cc) {
                out.push(diag(format!("{name}[{c}][{d}]"), None, "needs 1 <= c < c' <= C"));
                ok = false;
                continue;
            }
            let rows = if rows_up { model.n_plus(c) } else { nm };
            ok &= shape(&mut out, &format!("{name}[{c}][{d}]"), m, rows, model.n_plus(d));
        }
    }
    if !ok {
        return out;
    }

    for c in 1..=cc {
        let b = model.color(c);
        let mut up = RowGroup {
            parts: vec![(format!("Tpp[{c}]"), &b.tpp, true), (format!("Tpm[{c}]"), &b.tpm, false)],
            label: format!("up-states of color {c}"),
        };
        for (d, m) in ColoredModel::cross_from(&model.tpp2, c) {
            up.parts.push((format!("Tpp2[{c}][{d}]"), m, false));
        }
        up.check(b.tpp.nrows(), tol, &mut out);

        let mut down = RowGroup {
            parts: vec![(format!("Tmp[{c}]"), &b.tmp, false), (format!("Tmm[{c}]"), &b.tmm, true)],
            label: format!("down-states under color {c}"),
        };
        for (d, m) in ColoredModel::cross_from(&model.tmp2, c) {
            down.parts.push((format!("Tmp2[{c}][{d}]"), m, false));
        }
        down.check(nm, tol, &mut out);
    }
    let mut empty = RowGroup { parts: vec![("T0mm".into(), &model.t0mm, true)], label: "empty-queue states".into() };
    for c in 1..=cc {
        empty.parts.push((format!("T0mp[{c}]"), &model.t0mp[c - 1], false));
    }
    empty.check(nm, tol, &mut out);
    out
}

/// Solver switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: Tolerances,
    /// [`NareMethod::Auto`] takes the linear (Sylvester) route whenever a
    /// color has no same-color restarts; [`NareMethod::Doubling`] forces the
    /// general Riccati solver for every color.
    pub nare: NareMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: Tolerances::default(), nare: NareMethod::Auto }
    }
}

/// Stationary solution of a [`ColoredModel`].
///
/// Per-color vectors are indexed by `c - 1`.
#[derive(Debug, Clone)]
pub struct ColoredSolution {
    pub psi: Vec<Matrix>,
    pub kc: Vec<Matrix>,
    /// Off-diagonal blocks of the full `K`: `Tpp2[c][c'] + Psi[c] Tmp2[c][c']`
    /// (zero blocks omitted).
    pub cross: CrossBlocks,
    /// Boundary probabilities over `S-`; absent when the model is not recurrent.
    pub p_minus: Option<RowVector>,
    /// `(ξ+ e, ξ- e)` per color; `None` when the per-color chain is not a
    /// generator because a higher color is transient.
    pub drifts: Vec<Option<(f64, f64)>>,
    pub recurrent: bool,
    pub reports: Vec<NareReport>,
    /// 2 when densities live on both up- and down-states, 1 when only
    /// down-states are kept (jump models).
    pub(crate) mass_factor: f64,
    /// `p_minus T0mp[c]`, normalized.
    pub(crate) start: Vec<RowVector>,
    /// Color-`c` block of `[p_minus T0mp] (-K)^{-1}`, normalized.
    pub(crate) occupation: Vec<RowVector>,
    pub(crate) neg_kc_inv: Vec<Matrix>,
}

impl ColoredSolution {
    pub fn num_colors(&self) -> usize {
        self.psi.len()
    }

    fn require_recurrent(&self) -> Result<&RowVector> {
        match (&self.p_minus, self.recurrent) {
            (Some(p), true) => Ok(p),
            _ => Err(FluidError::NotRecurrent),
        }
    }

    /// `p_minus T0mp[c]` after normalization.
    pub fn start_rates(&self) -> Result<&[RowVector]> {
        self.require_recurrent()?;
        Ok(&self.start)
    }

    /// Color blocks of `[p_minus T0mp] (-K)^{-1}` after normalization.
    pub fn occupation(&self) -> Result<&[RowVector]> {
        self.require_recurrent()?;
        Ok(&self.occupation)
    }
}

pub fn solve_colored(model: &ColoredModel) -> Result<ColoredSolution> {
    solve_colored_with(model, &SolveOptions::default())
}

pub fn solve_colored_with(model: &ColoredModel, opts: &SolveOptions) -> Result<ColoredSolution> {
    solve_scaled(model, opts, 2.0)
}

pub(crate) fn solve_scaled(model: &ColoredModel, opts: &SolveOptions, mass_factor: f64) -> Result<ColoredSolution> {
    let tol = &opts.tol;
    let diags = validate(model, tol.generator);
    if !diags.is_empty() {
        return Err(FluidError::InvalidModel(diags.iter().map(|d| d.to_string()).collect()));
    }
    let cc = model.num_colors();
    let nm = model.n_minus;
    let mut psi = vec![Matrix::zeros(0, 0); cc];
    let mut kc = vec![Matrix::zeros(0, 0); cc];
    let mut drifts = vec![None; cc];
    let mut reports = Vec::with_capacity(cc);

    for c in (1..=cc).rev() {
        let b = model.color(c);
        let np = b.tpp.nrows();
        let mut tpm_eff = b.tpm.clone();
        for (d, m) in ColoredModel::cross_from(&model.tpp2, c) {
            tpm_eff += m * &psi[d - 1];
        }
        let mut tmm_eff = b.tmm.clone();
        for (d, m) in ColoredModel::cross_from(&model.tmp2, c) {
            tmm_eff += m * &psi[d - 1];
        }

        drifts[c - 1] = if np == 0 {
            Some((0.0, 1.0))
        } else {
            let mut t = Matrix::zeros(np + nm, np + nm);
            t.view_mut((0, 0), (np, np)).copy_from(&b.tpp);
            t.view_mut((0, np), (np, nm)).copy_from(&tpm_eff);
            t.view_mut((np, 0), (nm, np)).copy_from(&b.tmp);
            t.view_mut((np, np), (nm, nm)).copy_from(&tmm_eff);
            if check_generator(&t, tol.generator * inf_norm(&t).max(1.0)).is_generator {
                Some(drift_pair(&t, np, tol.generator)?)
            } else {
                None
            }
        };

        let (x, report) = solve_nare_with(&b.tpp, &tpm_eff, &b.tmp, &tmm_eff, tol, opts.nare)?;
        kc[c - 1] = &b.tpp + &x * &b.tmp;
        psi[c - 1] = x;
        reports.push(report);
    }
    reports.reverse();

    let mut cross = CrossBlocks::new();
    let keys: std::collections::BTreeSet<(usize, usize)> =
        model.tpp2.keys().chain(model.tmp2.keys()).copied().collect();
    for (c, d) in keys {
        let mut blk = Matrix::zeros(model.n_plus(c), model.n_plus(d));
        if let Some(m) = model.tpp2.get(&(c, d)) {
            blk += m;
        }
        if let Some(m) = model.tmp2.get(&(c, d)) {
            blk += &psi[c - 1] * m;
        }
        if !is_zero(&blk) {
            cross.insert((c, d), blk);
        }
    }

    let recurrent = drifts.iter().all(|d| matches!(d, Some((up, down)) if up < down));
    let mut sol = ColoredSolution {
        psi,
        kc,
        cross,
        p_minus: None,
        drifts,
        recurrent,
        reports,
        mass_factor,
        start: Vec::new(),
        occupation: Vec::new(),
        neg_kc_inv: Vec::new(),
    };
    if !recurrent {
        return Ok(sol);
    }

    let mut boundary = model.t0mm.clone();
    for c in 1..=cc {
        boundary += &model.t0mp[c - 1] * &sol.psi[c - 1];
    }
    let mut p = stationary_vector(&boundary, tol.generator)?;

    sol.neg_kc_inv = sol
        .kc
        .iter()
        .enumerate()
        .map(|(i, k)| (-k).try_inverse().ok_or_else(|| FluidError::Singular(format!("K[{}]", i + 1))))
        .collect::<Result<_>>()?;
    let start: Vec<RowVector> = model.t0mp.iter().map(|t| &p * t).collect();
    let occupation = forward_substitute(&start, &sol.cross, &sol.neg_kc_inv);

    let total = p.sum() + mass_factor * occupation.iter().map(|z| z.sum()).sum::<f64>();
    p /= total;
    sol.start = start.into_iter().map(|v| v / total).collect();
    sol.occupation = occupation.into_iter().map(|v| v / total).collect();
    sol.p_minus = Some(p);
    Ok(sol)
}

/// Solves `z (-K) = y` for the block upper-triangular `K`, color by color.
fn forward_substitute(y: &[RowVector], cross: &CrossBlocks, neg_kc_inv: &[Matrix]) -> Vec<RowVector> {
    let cc = y.len();
    let mut incoming: Vec<Vec<(usize, &Matrix)>> = vec![Vec::new(); cc + 1];
    for (&(c, d), m) in cross {
        incoming[d].push((c, m));
    }
    let mut z: Vec<RowVector> = Vec::with_capacity(cc);
    for d in 1..=cc {
        let mut r = y[d - 1].clone();
        for &(c, m) in &incoming[d] {
            r += &z[c - 1] * m;
        }
        z.push(r * &neg_kc_inv[d - 1]);
    }
    z
}

/// Solves `(-K) w = e` for the block upper-triangular `K`, color by color.
fn backward_substitute_ones(sol: &ColoredSolution) -> Vec<nalgebra::DVector<f64>> {
    let cc = sol.num_colors();
    let mut w = vec![nalgebra::DVector::zeros(0); cc];
    for c in (1..=cc).rev() {
        let mut r = ones(sol.kc[c - 1].nrows());
        for (&(_, d), m) in sol.cross.range((c, 0)..(c + 1, 0)) {
            r += m * &w[d - 1];
        }
        w[c - 1] = &sol.neg_kc_inv[c - 1] * r;
    }
    w
}

/// Offsets of the color blocks inside the full `K`.
fn offsets(sol: &ColoredSolution) -> Vec<usize> {
    let mut off = vec![0];
    for k in &sol.kc {
        off.push(off.last().unwrap() + k.nrows());
    }
    off
}

/// The full upper block-triangular `K` over all up-states.
pub fn k_big(sol: &ColoredSolution) -> Matrix {
    let off = offsets(sol);
    let n = *off.last().unwrap();
    let mut k = Matrix::zeros(n, n);
    for (i, kc) in sol.kc.iter().enumerate() {
        k.view_mut((off[i], off[i]), (kc.nrows(), kc.ncols())).copy_from(kc);
    }
    for (&(c, d), m) in &sol.cross {
        k.view_mut((off[c - 1], off[d - 1]), (m.nrows(), m.ncols())).copy_from(m);
    }
    k
}

/// Joint stationary density at the color-level vector `xs` (length `C`).
///
/// Returns `(π+, π-)`: `π+` over the up-states of the highest color with
/// positive level, `π-` over `S-`.
pub fn density(sol: &ColoredSolution, xs: &[f64]) -> Result<(RowVector, RowVector)> {
    sol.require_recurrent()?;
    if xs.len() != sol.num_colors() {
        return Err(FluidError::InvalidPoint(format!(
            "expected {} color levels, got {}",
            sol.num_colors(),
            xs.len()
        )));
    }
    if xs.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(FluidError::InvalidPoint("color levels must be finite and >= 0".into()));
    }
    let pattern: Vec<(usize, f64)> =
        xs.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, &x)| (i + 1, x)).collect();
    if pattern.is_empty() {
        return Err(FluidError::InvalidPoint(
            "all levels are zero; the boundary mass is p_minus".into(),
        ));
    }
    let plus = density_along(sol, &pattern)?;
    let top = pattern.last().unwrap().0;
    let minus = &plus * &sol.psi[top - 1];
    Ok((plus, minus))
}

/// Up-state density for an explicit sequence of `(color, level)` pairs with
/// increasing colors. Levels may be zero, which gives one-sided limits.
pub(crate) fn density_along(sol: &ColoredSolution, pattern: &[(usize, f64)]) -> Result<RowVector> {
    let (c0, x0) = pattern[0];
    let mut r = &sol.start[c0 - 1] * expm(&sol.kc[c0 - 1], x0)?;
    for w in pattern.windows(2) {
        let ((c, _), (d, x)) = (w[0], w[1]);
        match sol.cross.get(&(c, d)) {
            Some(b) => r = &r * b * expm(&sol.kc[d - 1], x)?,
            None => return Ok(RowVector::zeros(sol.kc[pattern.last().unwrap().0 - 1].nrows())),
        }
    }
    Ok(r)
}

/// `P[Ξ <= x]` for the total fluid level `Ξ`.
pub fn level_cdf(sol: &ColoredSolution, x: f64) -> Result<f64> {
    let p = sol.require_recurrent()?;
    if !(x >= 0.0) {
        return Err(FluidError::InvalidPoint(format!("level must be >= 0, got {x}")));
    }
    let mass: f64 = sol.occupation.iter().map(|z| z.sum()).sum();
    if x.is_infinite() {
        return Ok(p.sum() + sol.mass_factor * mass);
    }
    // z (I - e^{Kx}) e with z = [p T0mp] (-K)^{-1}; the two factors commute.
    let k = k_big(sol);
    if k.nrows() == 0 {
        return Ok(p.sum());
    }
    let z = concat(&sol.occupation);
    let tail = (&z * expm(&k, x)? * ones(k.nrows()))[(0, 0)];
    Ok(p.sum() + sol.mass_factor * (mass - tail))
}

/// Mean total fluid level.
pub fn mean_level(sol: &ColoredSolution) -> Result<f64> {
    sol.require_recurrent()?;
    let w = backward_substitute_ones(sol);
    let s: f64 = sol.occupation.iter().zip(&w).map(|(z, w)| (z * w)[(0, 0)]).sum();
    Ok(sol.mass_factor * s)
}

fn concat(parts: &[RowVector]) -> RowVector {
    let n = parts.iter().map(|v| v.len()).sum();
    let mut out = RowVector::zeros(n);
    let mut o = 0;
    for v in parts {
        out.columns_mut(o, v.len()).copy_from(v);
        o += v.len();
    }
    out
}

/// Law of the top color `Γ` over `{0, 1, ..., C}` (0 means empty).
pub fn top_color_dist(sol: &ColoredSolution) -> Result<Vec<f64>> {
    let p = sol.require_recurrent()?;
    let mut out = vec![p.sum()];
    out.extend(sol.occupation.iter().map(|z| sol.mass_factor * z.sum()));
    Ok(out)
}

/// Same law as [`top_color_dist`], computed from a single dense solve with
/// the assembled `K`.
pub fn top_color_dist_dense(sol: &ColoredSolution) -> Result<Vec<f64>> {
    let p = sol.require_recurrent()?;
    let k = k_big(sol);
    let y = concat(&sol.start);
    let mut out = vec![p.sum()];
    if k.nrows() > 0 {
        let z = (-k)
            .transpose()
            .lu()
            .solve(&y.transpose())
            .ok_or_else(|| FluidError::Singular("K".into()))?;
        let off = offsets(sol);
        for c in 0..sol.num_colors() {
            out.push(sol.mass_factor * z.rows(off[c], off[c + 1] - off[c]).sum());
        }
    } else {
        out.extend(std::iter::repeat(0.0).take(sol.num_colors()));
    }
    Ok(out)
}

/// Top-color law by the chain recursion `v1 = m p T0mp[1] (-K1)^{-1}`,
/// `v_{c+1} = v_c (Tpp2[c][c+1] + Psi[c] Tmp2[c][c+1]) (-K_{c+1})^{-1}`,
/// which costs linear time in the number of colors.
///
/// Only valid when fluid starts in color 1 and colors are entered one at a
/// time; otherwise returns [`FluidError::HypothesisViolated`].
pub fn top_color_dist_recursive(sol: &ColoredSolution) -> Result<Vec<f64>> {
    let p = sol.require_recurrent()?;
    let mut problems = Vec::new();
    for &(c, d) in sol.cross.keys() {
        if d != c + 1 {
            problems.push(format!("color {c} jumps directly to color {d}"));
        }
    }
    for (i, s) in sol.start.iter().enumerate().skip(1) {
        if s.iter().any(|&v| v != 0.0) {
            problems.push(format!("an empty queue can start in color {}", i + 1));
        }
    }
    if !problems.is_empty() {
        return Err(FluidError::HypothesisViolated(problems));
    }
    let cc = sol.num_colors();
    let mut out = vec![p.sum()];
    let mut v = &sol.start[0] * &sol.neg_kc_inv[0] * sol.mass_factor;
    out.push(v.sum());
    for c in 1..cc {
        v = match sol.cross.get(&(c, c + 1)) {
            Some(b) => &v * b * &sol.neg_kc_inv[c],
            None => RowVector::zeros(sol.kc[c].nrows()),
        };
        out.push(v.sum());
    }
    Ok(out)
}

/// A classic queue is a colored queue with a single color.
impl From<&ClassicModel> for ColoredModel {
    fn from(m: &ClassicModel) -> Self {
        Self {
            n_minus: m.n_minus(),
            colors: vec![ColorBlocks { tpp: m.tpp.clone(), tpm: m.tpm.clone(), tmp: m.tmp.clone(), tmm: m.tmm.clone() }],
            tpp2: CrossBlocks::new(),
            tmp2: CrossBlocks::new(),
            t0mm: m.t0mm.clone(),
            t0mp: vec![m.t0mp.clone()],
        }
    }
}

/// Rewrites a model whose down-state dynamics ignore the top color as a
/// classic fluid queue with stacked up-states.
///
/// Requires: every `Tmm[c]` equal; `Tmp[c] = 0` for `c < C`;
/// `Tmp2[c][l] = 0` for `l < C`; `Tmp2[c][C] = Tmp[C]` for every `c < C`.
/// The classic `Psi` then stacks the per-color `Psi[c]`.
pub fn reduce_to_classic(model: &ColoredModel) -> Result<ClassicModel> {
    let cc = model.num_colors();
    let nm = model.n_minus;
    let diags = validate(model, Tolerances::default().generator);
    if !diags.is_empty() {
        return Err(FluidError::InvalidModel(diags.iter().map(|d| d.to_string()).collect()));
    }
    const SAME: f64 = 1e-12;
    let close = |a: &Matrix, b: &Matrix| (a - b).iter().all(|v| v.abs() <= SAME);
    let top = model.color(cc);
    let mut problems = Vec::new();
    for c in 1..cc {
        let b = model.color(c);
        if !close(&b.tmm, &top.tmm) {
            problems.push(format!("Tmm[{c}] differs from Tmm[{cc}]"));
        }
        if !is_zero(&b.tmp) {
            problems.push(format!("Tmp[{c}] is nonzero"));
        }
        match model.tmp2.get(&(c, cc)) {
            Some(m) if close(m, &top.tmp) => {}
            Some(_) => problems.push(format!("Tmp2[{c}][{cc}] differs from Tmp[{cc}]")),
            None if is_zero(&top.tmp) => {}
            None => problems.push(format!("Tmp2[{c}][{cc}] is zero but Tmp[{cc}] is not")),
        }
    }
    for (&(c, d), m) in &model.tmp2 {
        if d < cc && !is_zero(m) {
            problems.push(format!("Tmp2[{c}][{d}] is nonzero"));
        }
    }
    if !problems.is_empty() {
        return Err(FluidError::HypothesisViolated(problems));
    }

    let mut off = vec![0];
    for c in 1..=cc {
        off.push(off[c - 1] + model.n_plus(c));
    }
    let n = off[cc];
    let mut tpp = Matrix::zeros(n, n);
    let mut tpm = Matrix::zeros(n, nm);
    let mut tmp = Matrix::zeros(nm, n);
    let mut t0mp = Matrix::zeros(nm, n);
    for c in 1..=cc {
        let b = model.color(c);
        let w = model.n_plus(c);
        tpp.view_mut((off[c - 1], off[c - 1]), (w, w)).copy_from(&b.tpp);
        tpm.view_mut((off[c - 1], 0), (w, nm)).copy_from(&b.tpm);
        t0mp.view_mut((0, off[c - 1]), (nm, w)).copy_from(&model.t0mp[c - 1]);
    }
    for (&(c, d), m) in &model.tpp2 {
        tpp.view_mut((off[c - 1], off[d - 1]), (m.nrows(), m.ncols())).copy_from(m);
    }
    tmp.view_mut((0, off[cc - 1]), (nm, model.n_plus(cc))).copy_from(&top.tmp);
    Ok(ClassicModel { tpp, tpm, tmp, tmm: top.tmm.clone(), t0mm: model.t0mm.clone(), t0mp })
}

/// Residuals of the stationary balance equations of a two-color queue at an
/// interior point, using central differences for the derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceResiduals {
    /// Down-states with color 2 on top, at `(x, y)`.
    pub top_down: f64,
    /// Up-states of color 2, at `(x, y)`.
    pub top_up: f64,
    /// Down-states with only color 1 present, at level `x`.
    pub base_down: f64,
    /// Up-states of color 1, at level `x`.
    pub base_up: f64,
    /// Probability flow balance of the empty queue.
    pub empty: f64,
    /// Entrance into color 2 from color 1 at level `x`.
    pub color_switch: f64,
    /// Color 2 started from the empty queue.
    pub start_top: f64,
    /// Color 1 started from the empty queue.
    pub start_base: f64,
}

impl BalanceResiduals {
    pub fn max_differential(&self) -> f64 {
        self.top_down.max(self.top_up).max(self.base_down).max(self.base_up)
    }

    pub fn max_boundary(&self) -> f64 {
        self.empty.max(self.color_switch).max(self.start_top).max(self.start_base)
    }
}

fn vnorm(v: &RowVector) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Plugs the analytic densities of a two-color model into its stationary
/// balance equations at `(x, y)` with finite-difference step `h`.
pub fn pde_residual(sol: &ColoredSolution, model: &ColoredModel, x: f64, y: f64, h: f64) -> Result<BalanceResiduals> {
    let p = sol.require_recurrent()?.clone();
    if model.num_colors() != 2 || sol.num_colors() != 2 {
        return Err(FluidError::InvalidModel(vec!["balance residuals need exactly two colors".into()]));
    }
    if !(h > 0.0 && x > h && y > h) {
        return Err(FluidError::InvalidPoint(format!("need x, y > h > 0, got x={x}, y={y}, h={h}")));
    }
    let (c1, c2) = (model.color(1), model.color(2));
    let zero_cross_pp = Matrix::zeros(model.n_plus(1), model.n_plus(2));
    let zero_cross_mp = Matrix::zeros(model.n_minus, model.n_plus(2));
    let tpp12 = model.tpp2.get(&(1, 2)).unwrap_or(&zero_cross_pp);
    let tmp12 = model.tmp2.get(&(1, 2)).unwrap_or(&zero_cross_mp);
    let (psi1, psi2) = (&sol.psi[0], &sol.psi[1]);

    let top = |a: f64, b: f64| -> Result<(RowVector, RowVector)> {
        let up = density_along(sol, &[(1, a), (2, b)])?;
        let down = &up * psi2;
        Ok((up, down))
    };
    let base = |a: f64| -> Result<(RowVector, RowVector)> {
        let up = density_along(sol, &[(1, a)])?;
        let down = &up * psi1;
        Ok((up, down))
    };

    // Color-2 region: -d/dy π- = π- Tmm2 + π+ Tpm2 and d/dy π+ = π- Tmp2 + π+ Tpp2.
    let (up, down) = top(x, y)?;
    let (up_hi, down_hi) = top(x, y + h)?;
    let (up_lo, down_lo) = top(x, y - h)?;
    let d_down = (&down_hi - &down_lo) / (2.0 * h);
    let d_up = (&up_hi - &up_lo) / (2.0 * h);
    let top_down = vnorm(&(-d_down - &down * &c2.tmm - &up * &c2.tpm));
    let top_up = vnorm(&(d_up - &down * &c2.tmp - &up * &c2.tpp));

    // Color-1 line, fed by color-2 fluid draining back to its base.
    let (up, down) = base(x)?;
    let (up_hi, down_hi) = base(x + h)?;
    let (up_lo, down_lo) = base(x - h)?;
    let d_down = (&down_hi - &down_lo) / (2.0 * h);
    let d_up = (&up_hi - &up_lo) / (2.0 * h);
    let drained = top(x, 0.0)?.1;
    let base_down = vnorm(&(-d_down - &down * &c1.tmm - &up * &c1.tpm - drained));
    let base_up = vnorm(&(d_up - &down * &c1.tmp - &up * &c1.tpp));

    let into_base = base(0.0)?;
    let into_top_from_empty = density_along(sol, &[(2, 0.0)])?;
    let empty = vnorm(&(&p * &model.t0mm + &into_base.1 + &into_top_from_empty * psi2));

    let switched = top(x, 0.0)?.0;
    let (bu, bd) = base(x)?;
    let color_switch = vnorm(&(switched - &bd * tmp12 - &bu * tpp12));
    let start_top = vnorm(&(into_top_from_empty - &p * &model.t0mp[1]));
    let start_base = vnorm(&(into_base.0 - &p * &model.t0mp[0]));

    Ok(BalanceResiduals { top_down, top_up, base_down, base_up, empty, color_switch, start_top, start_base })
}
