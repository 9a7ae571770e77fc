//! Discrete-event simulation of colored fluid queues and jump models.
//!
//! The simulator runs the piecewise-deterministic process exactly: the
//! background chain holds an exponential time drawn from its current row, the
//! top color rises or drains at rate one meanwhile, and reaching zero pops the
//! stack to the next lower nonempty color. Jump models are simulated through
//! their expanded colored form with the climbing periods censored, which draws
//! each jump size by running its phase-type chain.
//!
//! Replications use independent ChaCha8 streams derived from `(seed, index)`,
//! so results are bit-identical for a given seed and configuration regardless
//! of the execution policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::colored::ColoredModel;
use crate::error::{FluidError, Result};
use crate::jumps::{expand_jumps, JumpModel};
use crate::matcore::Matrix;
use crate::par::{map_indexed, Execution};

/// Axis-aligned box in per-color fluid coordinates: `lo[c - 1] <= x_c < hi[c - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LevelBox {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
    /// Levels at which the empirical CDF is recorded.
    pub sample_grid: Vec<f64>,
    /// Boxes whose occupation time fraction is recorded.
    pub boxes: Vec<LevelBox>,
    pub execution: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1e5,
            warmup: 1e3,
            replications: 20,
            seed: 1,
            sample_grid: Vec::new(),
            boxes: Vec::new(),
            execution: Execution::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0) || !(self.horizon > self.warmup) || !self.horizon.is_finite() {
            return Err(FluidError::Config(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(FluidError::Config("at least one replication is required".into()));
        }
        if self.sample_grid.iter().any(|g| !g.is_finite()) {
            return Err(FluidError::Config("sample grid must be finite".into()));
        }
        Ok(())
    }
}

/// Across-replication mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se }
    }

    /// True when `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.se
    }
}

/// Time fractions observed in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepStats {
    pub level_cdf: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Rows are top colors `0..=C`, columns down-states.
    pub marginal: Matrix,
    pub utilization: f64,
    pub boxes: Vec<f64>,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub level_cdf_hat: Vec<Estimate>,
    pub gamma_hat: Vec<Estimate>,
    pub background_marginal_hat: Vec<Vec<Estimate>>,
    pub utilization_hat: Estimate,
    pub box_hat: Vec<Estimate>,
    pub replications: Vec<RepStats>,
}

impl SimResult {
    /// Mean and standard error of any per-replication statistic.
    pub fn estimate<F: Fn(&RepStats) -> f64>(&self, f: F) -> Estimate {
        let xs: Vec<f64> = self.replications.iter().map(f).collect();
        Estimate::from_samples(&xs)
    }

    fn aggregate(reps: Vec<RepStats>) -> Self {
        let est = |f: &dyn Fn(&RepStats) -> f64| Estimate::from_samples(&reps.iter().map(f).collect::<Vec<_>>());
        let first = &reps[0];
        let level_cdf_hat = (0..first.level_cdf.len()).map(|g| est(&|r| r.level_cdf[g])).collect();
        let gamma_hat = (0..first.gamma.len()).map(|c| est(&|r| r.gamma[c])).collect();
        let background_marginal_hat = (0..first.marginal.nrows())
            .map(|c| (0..first.marginal.ncols()).map(|i| est(&|r| r.marginal[(c, i)])).collect())
            .collect();
        let utilization_hat = est(&|r| r.utilization);
        let box_hat = (0..first.boxes.len()).map(|b| est(&|r| r.boxes[b])).collect();
        Self { level_cdf_hat, gamma_hat, background_marginal_hat, utilization_hat, box_hat, replications: reps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Down(usize),
    /// Up-state `j` of color `c`.
    Up(usize, usize),
}

/// Competing clocks leaving one state: total rate and cumulative outcome weights.
#[derive(Debug, Clone, Default)]
struct Row {
    total: f64,
    cum: Vec<f64>,
    targets: Vec<Target>,
}

impl Row {
    fn push(&mut self, rate: f64, t: Target) {
        if rate > 0.0 {
            self.total += rate;
            self.cum.push(self.total);
            self.targets.push(t);
        }
    }

    fn pick(&self, u: f64) -> Target {
        let x = u * self.total;
        let k = self.cum.partition_point(|&c| c <= x).min(self.targets.len() - 1);
        self.targets[k]
    }
}

struct Tables {
    colors: usize,
    n_minus: usize,
    /// `down[c][i]`, `c = 0` for the empty queue.
    down: Vec<Vec<Row>>,
    /// `up[c][j]`, `c >= 1` (index 0 unused).
    up: Vec<Vec<Row>>,
}

impl Tables {
    fn new(m: &ColoredModel) -> Self {
        let (cc, n) = (m.num_colors(), m.n_minus);
        let mut down = vec![vec![Row::default(); n]; cc + 1];
        let mut up = vec![Vec::new(); cc + 1];
        for i in 0..n {
            for k in 0..n {
                if k != i {
                    down[0][i].push(m.t0mm[(i, k)], Target::Down(k));
                }
            }
            for c2 in 1..=cc {
                for j in 0..m.n_plus(c2) {
                    down[0][i].push(m.t0mp[c2 - 1][(i, j)], Target::Up(c2, j));
                }
            }
        }
        for c in 1..=cc {
            let b = m.color(c);
            for i in 0..n {
                let row = &mut down[c][i];
                for k in 0..n {
                    if k != i {
                        row.push(b.tmm[(i, k)], Target::Down(k));
                    }
                }
                for j in 0..m.n_plus(c) {
                    row.push(b.tmp[(i, j)], Target::Up(c, j));
                }
            }
            up[c] = vec![Row::default(); m.n_plus(c)];
            for j in 0..m.n_plus(c) {
                let row = &mut up[c][j];
                for k in 0..m.n_plus(c) {
                    if k != j {
                        row.push(b.tpp[(j, k)], Target::Up(c, k));
                    }
                }
                for i in 0..n {
                    row.push(b.tpm[(j, i)], Target::Down(i));
                }
            }
            for (&(_, c2), blk) in m.tmp2.range((c, c + 1)..(c + 1, 0)) {
                for i in 0..n {
                    for j in 0..blk.ncols() {
                        down[c][i].push(blk[(i, j)], Target::Up(c2, j));
                    }
                }
            }
            for (&(_, c2), blk) in m.tpp2.range((c, c + 1)..(c + 1, 0)) {
                for j in 0..blk.nrows() {
                    for k in 0..blk.ncols() {
                        up[c][j].push(blk[(j, k)], Target::Up(c2, k));
                    }
                }
            }
        }
        Self { colors: cc, n_minus: n, down, up }
    }
}

struct Recorder<'a> {
    cfg: &'a SimConfig,
    stats: RepStats,
}

impl Recorder<'_> {
    /// Accounts for the clock interval `[t, t + len]` during which the total
    /// level moves from `level` with `slope`, `top` is the top color with
    /// amounts `x`, and `down` is the down-state if any.
    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, t: f64, len: f64, level: f64, slope: f64, top: usize, x: &[f64], down: Option<usize>) {
        let a = t.max(self.cfg.warmup);
        let b = (t + len).min(self.cfg.horizon);
        if b <= a {
            return;
        }
        let dur = b - a;
        let shift = slope * (a - t);
        let la = level + shift;
        let s = &mut self.stats;
        s.gamma[top] += dur;
        if let Some(i) = down {
            s.marginal[(top, i)] += dur;
        }
        if top > 0 {
            s.utilization += dur;
        }
        for (g, acc) in self.cfg.sample_grid.iter().zip(s.level_cdf.iter_mut()) {
            *acc += time_below(la, slope, dur, *g);
        }
        for (bx, acc) in self.cfg.boxes.iter().zip(s.boxes.iter_mut()) {
            let mut inside = true;
            for c in 1..x.len() {
                if c != top && !(bx.lo[c - 1] <= x[c] && x[c] < bx.hi[c - 1]) {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            if top == 0 {
                *acc += dur;
                continue;
            }
            let xa = x[top] + shift;
            let xb = xa + slope * dur;
            let (lo, hi) = (xa.min(xb), xa.max(xb));
            let (blo, bhi) = (bx.lo[top - 1], bx.hi[top - 1]);
            *acc += if slope == 0.0 {
                if blo <= xa && xa < bhi {
                    dur
                } else {
                    0.0
                }
            } else {
                (hi.min(bhi) - lo.max(blo)).max(0.0)
            };
        }
    }
}

/// Time spent at or below `g` while the level moves linearly from `la` with `slope` for `dur`.
fn time_below(la: f64, slope: f64, dur: f64, g: f64) -> f64 {
    if slope == 0.0 {
        return if la <= g { dur } else { 0.0 };
    }
    let lb = la + slope * dur;
    let (lo, hi) = (la.min(lb), la.max(lb));
    ((g - lo) / (hi - lo)).clamp(0.0, 1.0) * dur
}

#[derive(Debug, Clone, Copy)]
enum State {
    Down(usize),
    Up(usize),
}

fn run_replication(tables: &Tables, cfg: &SimConfig, rep: usize, censor_up: bool) -> RepStats {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep as u64);
    let cc = tables.colors;
    let mut rec = Recorder {
        cfg,
        stats: RepStats {
            level_cdf: vec![0.0; cfg.sample_grid.len()],
            gamma: vec![0.0; cc + 1],
            marginal: Matrix::zeros(cc + 1, tables.n_minus),
            utilization: 0.0,
            boxes: vec![0.0; cfg.boxes.len()],
            events: 0,
        },
    };
    let mut x = vec![0.0; cc + 1];
    let mut level = 0.0;
    let mut top = 0usize;
    let mut state = State::Down(0);
    let mut t = 0.0;

    while t < cfg.horizon {
        rec.stats.events += 1;
        let row = match state {
            State::Down(i) => &tables.down[top][i],
            State::Up(j) => &tables.up[top][j],
        };
        let hold = if row.total > 0.0 {
            rng.sample::<f64, _>(Exp1) / row.total
        } else {
            f64::INFINITY
        };
        let next = match state {
            State::Down(i) if top > 0 && hold >= x[top] => {
                // The top color empties before the next transition.
                let len = x[top];
                rec.record(t, len, level, -1.0, top, &x, Some(i));
                t += len;
                level -= len;
                x[top] = 0.0;
                let old = top;
                while top > 0 && x[top] <= 0.0 {
                    top -= 1;
                }
                debug_assert!(top < old && (top == 0 || x[top] > 0.0));
                if top == 0 {
                    level = 0.0;
                }
                continue;
            }
            State::Down(i) => {
                let slope = if top > 0 { -1.0 } else { 0.0 };
                rec.record(t, hold, level, slope, top, &x, Some(i));
                t += hold;
                if top > 0 {
                    x[top] -= hold;
                    level -= hold;
                }
                hold
            }
            State::Up(_) => {
                if censor_up {
                    if !hold.is_finite() {
                        break;
                    }
                } else {
                    rec.record(t, hold, level, 1.0, top, &x, None);
                    t += hold;
                }
                x[top] += hold;
                level += hold;
                hold
            }
        };
        if !next.is_finite() || t >= cfg.horizon {
            break;
        }
        state = match row.pick(rng.random::<f64>()) {
            Target::Down(k) => State::Down(k),
            Target::Up(c2, j) => {
                if c2 != top {
                    debug_assert!(c2 > top && x[c2] == 0.0);
                    top = c2;
                }
                State::Up(j)
            }
        };
    }
    let span = cfg.horizon - cfg.warmup;
    let s = &mut rec.stats;
    s.level_cdf.iter_mut().chain(s.gamma.iter_mut()).chain(s.boxes.iter_mut()).for_each(|v| *v /= span);
    s.marginal /= span;
    s.utilization /= span;
    rec.stats
}

/// Simulates a colored fluid queue; statistics cover all time.
pub fn simulate_colored(model: &ColoredModel, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    check_boxes(cfg, model.num_colors())?;
    let tables = Tables::new(model);
    let reps = map_indexed(cfg.replications, cfg.execution, |r| run_replication(&tables, cfg, r, false));
    Ok(SimResult::aggregate(reps))
}

/// Simulates a jump model; time runs only while the background is in a
/// down-state, as in the jump model itself.
pub fn simulate(jm: &JumpModel, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    check_boxes(cfg, jm.num_colors())?;
    let (model, _) = expand_jumps(jm)?;
    let tables = Tables::new(&model);
    let reps = map_indexed(cfg.replications, cfg.execution, |r| run_replication(&tables, cfg, r, true));
    Ok(SimResult::aggregate(reps))
}

fn check_boxes(cfg: &SimConfig, colors: usize) -> Result<()> {
    for b in &cfg.boxes {
        if b.lo.len() != colors || b.hi.len() != colors {
            return Err(FluidError::Config(format!("boxes need {colors} coordinates")));
        }
    }
    Ok(())
}
