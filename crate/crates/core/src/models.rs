//! Queueing models built on jump fluid queues, plus the classical finite QBD
//! baseline for the cascade queue.
//!
//! * Finite LCFS-preemptive-resume queues with marked Markovian arrivals,
//!   phase-type services and per-type admission thresholds. Fluid color `c`
//!   holds the remaining work of the `c`-th oldest job, so the top color is
//!   the queue length.
//! * Finite FCFS queues where each job spawns a cascade of higher-level jobs
//!   during its service. Color `c` holds the remaining work of the level-`c`
//!   job currently being served (depth-first, preemptive).

use std::collections::BTreeMap;

use crate::error::{FluidError, Result};
use crate::jumps::{joint_marginal, JumpModel, JumpSolution, PhDist};
use crate::matcore::{check_generator, inf_norm, kron, ones, stationary_vector, Matrix, RowVector};

/// Marked Markovian arrival process: `d0` holds phase changes without
/// arrivals, `d[l - 1]` the rates of type-`l` arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmap {
    pub d0: Matrix,
    pub d: Vec<Matrix>,
}

impl Mmap {
    /// Poisson arrivals of a single type.
    pub fn poisson(rate: f64) -> Self {
        Self { d0: Matrix::from_element(1, 1, -rate), d: vec![Matrix::from_element(1, 1, rate)] }
    }

    pub fn phases(&self) -> usize {
        self.d0.nrows()
    }

    pub fn types(&self) -> usize {
        self.d.len()
    }

    /// `D0 + sum_l D_l`.
    pub fn phase_generator(&self) -> Matrix {
        self.d.iter().fold(self.d0.clone(), |acc, m| acc + m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.phases();
        let mut problems = Vec::new();
        if self.d.is_empty() {
            problems.push("at least one arrival type is required".to_string());
        }
        for (name, m) in std::iter::once(("D0".to_string(), &self.d0))
            .chain(self.d.iter().enumerate().map(|(l, m)| (format!("D{}", l + 1), m)))
        {
            if m.nrows() != n || m.ncols() != n {
                problems.push(format!("{name} must be {n}x{n}"));
            } else if m.iter().any(|v| !v.is_finite()) {
                problems.push(format!("{name} has a non-finite entry"));
            }
        }
        if !problems.is_empty() {
            return Err(FluidError::InvalidModel(problems));
        }
        for (l, m) in self.d.iter().enumerate() {
            if m.iter().any(|&v| v < 0.0) {
                problems.push(format!("D{} has a negative rate", l + 1));
            }
        }
        let g = self.phase_generator();
        if !check_generator(&g, 1e-10 * inf_norm(&g).max(1.0)).is_generator {
            problems.push("D0 + sum of D_l is not a generator".into());
        }
        if !problems.is_empty() {
            return Err(FluidError::InvalidModel(problems));
        }
        stationary_vector(&g, 1e-10).map(|_| ())
    }

    /// Long-run arrival rate of each type.
    pub fn type_rates(&self) -> Result<Vec<f64>> {
        let theta = stationary_vector(&self.phase_generator(), 1e-10)?;
        Ok(self.d.iter().map(|m| (&theta * m * ones(self.phases()))[(0, 0)]).collect())
    }

    /// Copy with every arrival rate multiplied by `s`; the diagonal of `D0`
    /// absorbs the change so rows still sum to zero.
    pub fn scaled(&self, s: f64) -> Self {
        let mut d0 = self.d0.clone();
        let d: Vec<Matrix> = self.d.iter().map(|m| m * s).collect();
        for (old, new) in self.d.iter().zip(&d) {
            for i in 0..self.phases() {
                d0[(i, i)] += old.row(i).sum() - new.row(i).sum();
            }
        }
        Self { d0, d }
    }
}

/// Offered load `sum_l rate_l * demand_l`.
pub fn offered_load(arrivals: &Mmap, demands: &[f64]) -> Result<f64> {
    let rates = arrivals.type_rates()?;
    Ok(rates.iter().zip(demands).map(|(r, w)| r * w).sum())
}

/// Scales arrival rates so the offered load equals `rho`.
pub fn scale_to_load(arrivals: &Mmap, demands: &[f64], rho: f64) -> Result<Mmap> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(FluidError::Config(format!("load must be positive, got {rho}")));
    }
    let load = |s: f64| offered_load(&arrivals.scaled(s), demands);
    let base = load(1.0)?;
    if !(base > 0.0) {
        return Err(FluidError::Config("arrival process offers no work".into()));
    }
    let guess = rho / base;
    // Exact when arrivals do not change the phase; otherwise refine by bisection.
    if (load(guess)? - rho).abs() <= 1e-13 * rho {
        return Ok(arrivals.scaled(guess));
    }
    let (mut lo, mut hi) = (0.0, guess.max(1e-300));
    while load(hi)? < rho {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(FluidError::Config(format!("cannot reach load {rho}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if load(mid)? < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(arrivals.scaled(0.5 * (lo + hi)))
}

/// Admission threshold of a job type: jobs of the type are rejected when the
/// queue holds this many jobs. `None` means never rejected.
pub type Threshold = Option<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct LcfsSpec {
    pub arrivals: Mmap,
    pub services: Vec<PhDist>,
    pub thresholds: Vec<Threshold>,
}

impl LcfsSpec {
    pub fn validate(&self) -> Result<()> {
        self.arrivals.validate()?;
        let l = self.arrivals.types();
        if self.services.len() != l || self.thresholds.len() != l {
            return Err(FluidError::InvalidModel(vec![format!(
                "{l} arrival types but {} services and {} thresholds",
                self.services.len(),
                self.thresholds.len()
            )]));
        }
        let mut problems = Vec::new();
        for (i, s) in self.services.iter().enumerate() {
            for p in s.problems(1e-10) {
                problems.push(format!("service {}: {p}", i + 1));
            }
        }
        if !problems.is_empty() {
            return Err(FluidError::InvalidModel(problems));
        }
        if self.thresholds.iter().all(|t| t.is_none()) {
            return Err(FluidError::InvalidThresholds(
                "all thresholds are infinite; at least one must be finite".into(),
            ));
        }
        if self.thresholds.iter().any(|t| *t == Some(0)) {
            return Err(FluidError::InvalidThresholds("thresholds must be at least 1".into()));
        }
        Ok(())
    }

    /// Types sorted by decreasing threshold (infinite first); stable for ties.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.thresholds.len()).collect();
        order.sort_by_key(|&l| std::cmp::Reverse(self.thresholds[l].unwrap_or(usize::MAX)));
        order
    }

    /// Number of colors of the fluid model.
    pub fn colors(&self) -> usize {
        let finite = self.thresholds.iter().flatten().copied().max().unwrap_or(0);
        if self.thresholds.iter().any(|t| t.is_none()) {
            finite + 1
        } else {
            finite
        }
    }
}

fn admits(t: Threshold, jobs: usize) -> bool {
    t.map_or(true, |n| jobs < n)
}

/// Jump model of a finite LCFS queue. Jump types inside each color follow
/// [`LcfsSpec::canonical_order`].
pub fn build_lcfs(spec: &LcfsSpec) -> Result<JumpModel> {
    spec.validate()?;
    let order = spec.canonical_order();
    let cc = spec.colors();
    let a = &spec.arrivals;
    let unbounded_top = spec.thresholds.iter().any(|t| t.is_none());

    let mut tmm = Vec::with_capacity(cc + 1);
    for c in 0..=cc {
        let mut m = a.d0.clone();
        for &l in &order {
            if !admits(spec.thresholds[l], c) {
                m += &a.d[l];
            }
        }
        tmm.push(m);
    }
    let mut ph = Vec::with_capacity(cc);
    let mut q_new = BTreeMap::new();
    for c in 1..=cc {
        // Types admitted when the queue holds c - 1 jobs form a prefix of the canonical order.
        let admitted: Vec<usize> = order.iter().copied().filter(|&l| admits(spec.thresholds[l], c - 1)).collect();
        ph.push(admitted.iter().map(|&l| spec.services[l].clone()).collect::<Vec<_>>());
        q_new.insert((c - 1, c), admitted.iter().map(|&l| a.d[l].clone()).collect::<Vec<_>>());
    }
    let mut q_same = vec![Vec::new(); cc];
    if unbounded_top {
        // Above every finite threshold only unbounded types arrive; they stay in the top color.
        q_same[cc - 1] = order
            .iter()
            .filter(|&&l| spec.thresholds[l].is_none())
            .map(|&l| a.d[l].clone())
            .collect();
    }
    Ok(JumpModel { n_minus: a.phases(), tmm, ph, q_new, q_same })
}

/// Fraction of offered type-`l` arrivals that are rejected, per type in the
/// order of `spec.services`: rejected rate over offered rate.
pub fn lcfs_loss_probability(js: &JumpSolution, spec: &LcfsSpec) -> Result<Vec<f64>> {
    let m = joint_marginal(js)?;
    Ok(loss_from_marginal(&m, spec))
}

/// Loss probabilities from a (top color, arrival phase) occupation matrix.
pub fn loss_from_marginal(m: &Matrix, spec: &LcfsSpec) -> Vec<f64> {
    let n = spec.arrivals.phases();
    spec.arrivals
        .d
        .iter()
        .zip(&spec.thresholds)
        .map(|(d, &t)| {
            let rates = d * ones(n);
            let (mut lost, mut offered) = (0.0, 0.0);
            for c in 0..m.nrows() {
                let r = (m.row(c) * &rates)[(0, 0)];
                offered += r;
                if !admits(t, c) {
                    lost += r;
                }
            }
            if offered > 0.0 {
                lost / offered
            } else {
                0.0
            }
        })
        .collect()
}

/// Queue of level-1 jobs whose service spawns higher-level jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    /// Level-1 arrivals (a single type).
    pub arrivals: Mmap,
    /// Service time of a level-`c` job, `levels[c - 1]`.
    pub levels: Vec<PhDist>,
    /// `gamma[c - 1]`: spawn rate of level-`(c + 1)` jobs while a level-`c` job
    /// is served, for `c = 1..C-1`.
    pub gamma: Vec<f64>,
    /// Capacity for level-1 jobs.
    pub capacity: usize,
}

impl CascadeSpec {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.arrivals.validate()?;
        let mut problems = Vec::new();
        if self.arrivals.types() != 1 {
            problems.push("cascade arrivals must have a single type".to_string());
        }
        if self.levels.is_empty() {
            problems.push("at least one job level is required".into());
        }
        if self.gamma.len() + 1 != self.levels.len().max(1) {
            problems.push(format!("{} levels need {} spawn rates, got {}", self.levels.len(), self.levels.len().saturating_sub(1), self.gamma.len()));
        }
        if self.gamma.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            problems.push("spawn rates must be finite and >= 0".into());
        }
        if self.capacity == 0 {
            problems.push("capacity must be at least 1".into());
        }
        for (c, ph) in self.levels.iter().enumerate() {
            for p in ph.problems(1e-10) {
                problems.push(format!("level {}: {p}", c + 1));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FluidError::InvalidModel(problems))
        }
    }

    /// Expected total work brought by one level-1 job including all of its
    /// descendants: `w_C = m_C`, `w_c = m_c (1 + gamma_c w_{c+1})`.
    pub fn job_demand(&self) -> Result<f64> {
        let mut w = 0.0;
        for c in (0..self.levels.len()).rev() {
            let m = self.levels[c].mean()?;
            let g = if c < self.gamma.len() { self.gamma[c] } else { 0.0 };
            w = m * (1.0 + g * w);
        }
        Ok(w)
    }

    /// Offered load of level-1 arrivals.
    pub fn load(&self) -> Result<f64> {
        offered_load(&self.arrivals, &[self.job_demand()?])
    }
}

/// Index of `(map phase i, count n)` in the cascade down-states; counts run from 1.
fn cascade_index(n_cap: usize, i: usize, n: usize) -> usize {
    i * n_cap + (n - 1)
}

/// Jump model of the cascade queue. Down-states are (arrival phase, level-1
/// count) with the phase major. While the fluid is empty, count 1 means an
/// empty queue; counts above 1 are auxiliary states that wait an exponential
/// time of mean one and then start the next level-1 job.
pub fn build_cascade(spec: &CascadeSpec) -> Result<JumpModel> {
    spec.validate()?;
    let a = &spec.arrivals;
    let (ma, n_cap, cc) = (a.phases(), spec.capacity, spec.num_levels());
    let n = ma * n_cap;
    let mut shift = Matrix::zeros(n_cap, n_cap);
    for k in 0..n_cap {
        shift[(k, (k + 1).min(n_cap - 1))] = 1.0;
    }
    let busy = kron(&a.d0, &Matrix::identity(n_cap, n_cap)) + kron(&a.d[0], &shift);

    let mut tmm = Vec::with_capacity(cc + 1);
    let mut empty = Matrix::zeros(n, n);
    let mut restart = Matrix::zeros(n, n);
    for i in 0..ma {
        for j in 0..ma {
            empty[(cascade_index(n_cap, i, 1), cascade_index(n_cap, j, 1))] = a.d0[(i, j)];
            restart[(cascade_index(n_cap, i, 1), cascade_index(n_cap, j, 1))] = a.d[0][(i, j)];
        }
        for k in 2..=n_cap {
            empty[(cascade_index(n_cap, i, k), cascade_index(n_cap, i, k))] = -1.0;
            restart[(cascade_index(n_cap, i, k), cascade_index(n_cap, i, k - 1))] = 1.0;
        }
    }
    tmm.push(empty);
    let mut q_new = BTreeMap::new();
    q_new.insert((0, 1), vec![restart]);
    for c in 1..=cc {
        let g = if c < cc { spec.gamma[c - 1] } else { 0.0 };
        tmm.push(&busy - Matrix::identity(n, n) * g);
        if c < cc {
            q_new.insert((c, c + 1), vec![Matrix::identity(n, n) * g]);
        }
    }
    let ph = spec.levels.iter().map(|p| vec![p.clone()]).collect();
    Ok(JumpModel { n_minus: n, tmm, ph, q_new, q_same: vec![Vec::new(); cc] })
}

/// Law of the number of level-1 jobs, `0..=N`.
pub fn cascade_queue_length_dist(js: &JumpSolution, spec: &CascadeSpec) -> Result<Vec<f64>> {
    let m = joint_marginal(js)?;
    Ok(queue_length_from_marginal(&m, spec))
}

/// Aggregates a (top color, down-state) occupation matrix of the cascade jump
/// model into the level-1 queue-length law, dropping the auxiliary states.
pub fn queue_length_from_marginal(m: &Matrix, spec: &CascadeSpec) -> Vec<f64> {
    let (ma, n_cap) = (spec.arrivals.phases(), spec.capacity);
    let mut out = vec![0.0; n_cap + 1];
    for i in 0..ma {
        out[0] += m[(0, cascade_index(n_cap, i, 1))];
        for c in 1..m.nrows() {
            for k in 1..=n_cap {
                out[k] += m[(c, cascade_index(n_cap, i, k))];
            }
        }
    }
    let total: f64 = out.iter().sum();
    out.iter().map(|v| v / total).collect()
}

/// Default bound on the number of service phases the QBD baseline accepts.
pub const DEFAULT_PHASE_BOUND: usize = 1500;

/// Phases of the phase-type law of one level-1 job with all descendants:
/// one per stack of phases `(m_1, ..., m_c)`, `c = 1..C`.
pub fn multilevel_phase_count(spec: &CascadeSpec) -> usize {
    let mut total = 0usize;
    let mut prod = 1usize;
    for ph in &spec.levels {
        prod = prod.saturating_mul(ph.order());
        total = total.saturating_add(prod);
    }
    total
}

/// Phase-type representation `(beta, S)` of the full service of a level-1 job
/// under depth-first preemptive service of its descendants.
pub fn multilevel_service(spec: &CascadeSpec, bound: usize) -> Result<(RowVector, Matrix)> {
    spec.validate()?;
    let phases = multilevel_phase_count(spec);
    if phases > bound {
        return Err(FluidError::PhaseBlowup { phases, bound });
    }
    let cc = spec.num_levels();
    // Stacks of depth c occupy a contiguous range; inside it, stack
    // (m_1, ..., m_c) sits at offset sum_k m_k * prod_{j>k} M_j.
    let orders: Vec<usize> = spec.levels.iter().map(|p| p.order()).collect();
    let mut start = vec![0usize; cc + 1];
    let mut size = vec![1usize; cc + 1];
    for c in 1..=cc {
        size[c] = size[c - 1] * orders[c - 1];
        if c < cc {
            start[c + 1] = start[c] + size[c];
        }
    }
    let mut s = Matrix::zeros(phases, phases);
    for c in 1..=cc {
        let ph = &spec.levels[c - 1];
        let exit = ph.exit_rates();
        let g = if c < cc { spec.gamma[c - 1] } else { 0.0 };
        let mk = orders[c - 1];
        for prefix in 0..size[c - 1] {
            for m in 0..mk {
                let from = start[c] + prefix * mk + m;
                for m2 in 0..mk {
                    s[(from, start[c] + prefix * mk + m2)] += ph.u[(m, m2)];
                }
                if c > 1 {
                    // Resume the parent stack.
                    s[(from, start[c - 1] + prefix)] += exit[m];
                }
                if g > 0.0 {
                    s[(from, from)] -= g;
                    let child = &spec.levels[c];
                    let base = start[c + 1] + (prefix * mk + m) * orders[c];
                    for m2 in 0..orders[c] {
                        s[(from, base + m2)] += g * child.alpha[m2];
                    }
                }
            }
        }
    }
    let mut beta = RowVector::zeros(phases);
    beta.columns_mut(0, orders[0]).copy_from(&spec.levels[0].alpha);
    Ok((beta, s))
}

/// Level-1 queue-length law from the finite level-structured QBD, solved by
/// linear level reduction.
pub fn solve_finite_qbd(spec: &CascadeSpec, bound: usize) -> Result<Vec<f64>> {
    let (beta, s) = multilevel_service(spec, bound)?;
    let a = &spec.arrivals;
    let (ma, p, n_cap) = (a.phases(), beta.len(), spec.capacity);
    let exit = -(&s * ones(p));
    let im = Matrix::identity(ma, ma);
    let ip = Matrix::identity(p, p);
    let exit_m = Matrix::from_column_slice(p, 1, exit.as_slice());
    let beta_m = Matrix::from_row_slice(1, p, beta.as_slice());

    let up0 = kron(&a.d[0], &beta_m);
    let up = kron(&a.d[0], &ip);
    let down1 = kron(&im, &exit_m);
    let down = kron(&im, &(&exit_m * &beta_m));
    let local = kron(&a.d0, &ip) + kron(&im, &s);
    let local_top = &local + &up;

    // u = local generator of level n censored on levels <= n;
    // r[n] = Up_{n-1} (-U_n)^{-1} carries mass from level n-1 to n.
    let mut r: Vec<Matrix> = vec![Matrix::zeros(0, 0); n_cap + 1];
    let mut u = local_top;
    for n in (1..=n_cap).rev() {
        let up_prev = if n == 1 { &up0 } else { &up };
        let lu = (-&u).transpose().lu();
        let rn = lu
            .solve(&up_prev.transpose())
            .ok_or_else(|| FluidError::Singular(format!("QBD level {n}")))?
            .transpose();
        let down_n = if n == 1 { &down1 } else { &down };
        u = if n == 1 { &a.d0 + &rn * down_n } else { &local + &rn * down_n };
        r[n] = rn;
    }
    let pi0 = stationary_vector(&u, 1e-9)?;
    let mut out = vec![pi0.sum()];
    let mut pi = pi0;
    for rn in r.iter().skip(1) {
        pi = &pi * rn;
        out.push(pi.sum());
    }
    let total: f64 = out.iter().sum();
    Ok(out.iter().map(|v| v / total).collect())
}

/// Ready-made parameter sets.
pub mod presets {
    use super::*;

    /// Two-phase, two-type MMAP: phase `i` lasts `q_i` on average, arrivals
    /// occur at rate `lambda` in both phases and are of type 1 with
    /// probability `p_i`.
    pub fn two_type_mmap(lambda: f64, q: [f64; 2], p: [f64; 2]) -> Mmap {
        let d0 = Matrix::from_row_slice(2, 2, &[-lambda - 1.0 / q[0], 1.0 / q[0], 1.0 / q[1], -lambda - 1.0 / q[1]]);
        let d1 = Matrix::from_row_slice(2, 2, &[lambda * p[0], 0.0, 0.0, lambda * p[1]]);
        let d2 = Matrix::from_row_slice(2, 2, &[lambda * (1.0 - p[0]), 0.0, 0.0, lambda * (1.0 - p[1])]);
        Mmap { d0, d: vec![d1, d2] }
    }

    /// Bursty two-type LCFS queue: phases with mean sojourns 100 and 500,
    /// type-1 fractions 0.1 and 0.3, exponential services with means 2 and
    /// 1/2, arrival rate set for offered load `rho`.
    pub fn bursty_lcfs(rho: f64, n1: Threshold, n2: Threshold) -> Result<LcfsSpec> {
        let services = vec![PhDist::exponential(0.5), PhDist::exponential(2.0)];
        let base = two_type_mmap(1.0, [100.0, 500.0], [0.1, 0.3]);
        let arrivals = scale_to_load(&base, &[2.0, 0.5], rho)?;
        Ok(LcfsSpec { arrivals, services, thresholds: vec![n1, n2] })
    }

    /// Interrupted Poisson process: phases with mean sojourn `sojourn`,
    /// arrivals at `rate` only in the second phase.
    pub fn ipp(sojourn: f64, rate: f64) -> Mmap {
        let s = 1.0 / sojourn;
        let d0 = Matrix::from_row_slice(2, 2, &[-s, s, s, -s - rate]);
        let d1 = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, rate]);
        Mmap { d0, d: vec![d1] }
    }

    /// Cascade queue with IPP arrivals (mean sojourn 100), Erlang-`k` level-`c`
    /// services with mean `1.1^-c`, spawn rates `0.9^c` during level-`c`
    /// service, capacity `n`, and load `rho`.
    pub fn ipp_cascade(levels: usize, k: usize, n: usize, rho: f64) -> Result<CascadeSpec> {
        let ph = (1..=levels).map(|c| PhDist::erlang(k, 1.1f64.powi(-(c as i32)))).collect();
        let gamma = (1..levels).map(|c| 0.9f64.powi(c as i32)).collect();
        let mut spec = CascadeSpec { arrivals: ipp(100.0, 1.0), levels: ph, gamma, capacity: n };
        let demand = spec.job_demand()?;
        spec.arrivals = scale_to_load(&spec.arrivals, &[demand], rho)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jumps::{jump_top_color_dist, solve_jumps};

    fn mm1n(lambda: f64, mu: f64, n: usize) -> LcfsSpec {
        LcfsSpec { arrivals: Mmap::poisson(lambda), services: vec![PhDist::exponential(mu)], thresholds: vec![Some(n)] }
    }

    #[test]
    fn mm1n_queue_length() {
        let spec = mm1n(1.0, 2.0, 3);
        let js = solve_jumps(&build_lcfs(&spec).unwrap()).unwrap();
        let g = jump_top_color_dist(&js).unwrap();
        for (n, want) in [8.0, 4.0, 2.0, 1.0].iter().enumerate() {
            assert!((g[n] - want / 15.0).abs() < 1e-12, "{g:?}");
        }
        let loss = lcfs_loss_probability(&js, &spec).unwrap();
        assert!((loss[0] - 1.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn pure_loss_system() {
        let js = solve_jumps(&build_lcfs(&mm1n(1.0, 2.0, 1)).unwrap()).unwrap();
        let g = jump_top_color_dist(&js).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_layout() {
        let spec = LcfsSpec {
            arrivals: Mmap {
                d0: Matrix::from_element(1, 1, -6.0),
                d: vec![Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, 2.0), Matrix::from_element(1, 1, 3.0)],
            },
            services: vec![PhDist::exponential(10.0), PhDist::exponential(20.0), PhDist::exponential(30.0)],
            thresholds: vec![Some(10), None, Some(20)],
        };
        assert_eq!(spec.canonical_order(), vec![1, 2, 0]);
        let jm = build_lcfs(&spec).unwrap();
        assert_eq!(jm.num_colors(), 21);
        // Canonical types: unbounded (rate 2), threshold 20 (rate 3), threshold 10 (rate 1).
        assert_eq!(jm.tmm[19][(0, 0)], -6.0 + 1.0);
        assert_eq!(jm.tmm[20][(0, 0)], -6.0 + 1.0 + 3.0);
        assert_eq!(jm.tmm[21][(0, 0)], -6.0 + 1.0 + 3.0);
        assert_eq!(jm.ph[9].len(), 3);
        assert_eq!(jm.ph[10].len(), 2);
        assert_eq!(jm.ph[20].len(), 1);
        assert_eq!(jm.q_same[20].len(), 1);
    }

    #[test]
    fn all_unbounded_rejected() {
        let mut spec = mm1n(1.0, 2.0, 3);
        spec.thresholds = vec![None];
        assert!(matches!(build_lcfs(&spec), Err(FluidError::InvalidThresholds(_))));
    }

    #[test]
    fn phase_counts() {
        let mk = |c: usize, k: usize| CascadeSpec {
            arrivals: Mmap::poisson(1.0),
            levels: vec![PhDist::erlang(k, 1.0); c],
            gamma: vec![0.5; c - 1],
            capacity: 2,
        };
        assert_eq!(multilevel_phase_count(&mk(2, 3)), 12);
        assert_eq!(multilevel_phase_count(&mk(7, 3)), 3279);
        assert!(matches!(solve_finite_qbd(&mk(7, 3), DEFAULT_PHASE_BOUND), Err(FluidError::PhaseBlowup { .. })));
    }

    #[test]
    fn multilevel_service_mean_matches_demand() {
        let spec = presets::ipp_cascade(3, 2, 4, 0.8).unwrap();
        let (beta, s) = multilevel_service(&spec, DEFAULT_PHASE_BOUND).unwrap();
        let mean = (&beta * (-s).lu().solve(&ones(beta.len())).unwrap())[(0, 0)];
        assert!((mean - spec.job_demand().unwrap()).abs() < 1e-12);
        assert!((spec.load().unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_level_cascade_is_mm1n() {
        let spec = CascadeSpec {
            arrivals: Mmap::poisson(1.0),
            levels: vec![PhDist::exponential(2.0)],
            gamma: vec![],
            capacity: 3,
        };
        let js = solve_jumps(&build_cascade(&spec).unwrap()).unwrap();
        let q = cascade_queue_length_dist(&js, &spec).unwrap();
        let qbd = solve_finite_qbd(&spec, DEFAULT_PHASE_BOUND).unwrap();
        for (n, want) in [8.0, 4.0, 2.0, 1.0].iter().enumerate() {
            assert!((q[n] - want / 15.0).abs() < 1e-12, "{q:?}");
            assert!((qbd[n] - want / 15.0).abs() < 1e-12, "{qbd:?}");
        }
    }
}
