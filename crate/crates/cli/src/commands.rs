use std::path::Path;
use std::time::Instant;

use fluidq::classic::{classic_level_cdf, classic_mean_level, solve_classic_with, ClassicModel};
use fluidq::colored::{level_cdf, mean_level, solve_colored_with, top_color_dist, ColoredModel, SolveOptions};
use fluidq::jumps::{
    joint_marginal, jump_level_cdf, jump_mean_level, jump_top_color_dist, solve_jumps_with, JumpModel, JumpSolution,
};
use fluidq::models::{
    build_cascade, build_lcfs, cascade_queue_length_dist, lcfs_loss_probability, loss_from_marginal,
    queue_length_from_marginal, solve_finite_qbd, CascadeSpec, LcfsSpec, DEFAULT_PHASE_BOUND,
};
use fluidq::sim::{simulate, simulate_colored, Estimate, SimConfig, SimResult};
use fluidq::{FluidError, Matrix};

use crate::input::{CascadeSource, Model};
use crate::table::{Cell, Table};
use crate::Failure;

/// Settings shared by every command.
pub struct Context<'a> {
    pub out: &'a Path,
    pub grid: &'a [f64],
    pub opts: SolveOptions,
    pub footer: Vec<String>,
}

impl Context<'_> {
    fn write(&self, name: &str, table: &Table) -> Result<(), Failure> {
        table.write(&self.out.join(name), &self.footer)
    }
}

/// A model ready to solve or simulate.
enum Prepared {
    Classic(ClassicModel),
    Colored(ColoredModel),
    Jumps(JumpModel, Extra),
}

enum Extra {
    None,
    Lcfs(LcfsSpec),
    Cascade(CascadeSpec),
}

fn prepare(model: &Model) -> Result<Prepared, Failure> {
    Ok(match model {
        Model::Classic(m) => Prepared::Classic(m.clone()),
        Model::Colored(m) => Prepared::Colored(m.clone()),
        Model::Jumps(m) => Prepared::Jumps(m.clone(), Extra::None),
        Model::Lcfs(input) => {
            let spec = input.spec()?;
            Prepared::Jumps(build_lcfs(&spec)?, Extra::Lcfs(spec))
        }
        Model::Cascade(input) => {
            let spec = input.spec()?;
            Prepared::Jumps(build_cascade(&spec)?, Extra::Cascade(spec))
        }
    })
}

/// Stationary quantities of a recurrent model.
struct Body {
    cdf: Vec<f64>,
    gamma: Vec<f64>,
    p_minus: Vec<f64>,
    mean_level: f64,
    marginal: Option<Matrix>,
    loss: Option<Vec<f64>>,
    queue: Option<Vec<f64>>,
}

struct Analysis {
    /// `(up, down)` stationary mass per color; `None` for transient colors.
    drifts: Vec<Option<(f64, f64)>>,
    /// Absent when the model is not positive recurrent.
    body: Option<Body>,
}

fn analyze(prep: &Prepared, grid: &[f64], opts: &SolveOptions) -> Result<Analysis, Failure> {
    match prep {
        Prepared::Classic(m) => match solve_classic_with(m, &opts.tol) {
            Err(FluidError::Unstable { up, down }) => Ok(Analysis { drifts: vec![Some((up, down))], body: None }),
            Err(e) => Err(e.into()),
            Ok(sol) => {
                let cdf = grid.iter().map(|&x| classic_level_cdf(&sol, x)).collect::<fluidq::Result<_>>()?;
                let p = sol.p_minus.sum();
                let body = Body {
                    cdf,
                    gamma: vec![p, 1.0 - p],
                    p_minus: sol.p_minus.iter().copied().collect(),
                    mean_level: classic_mean_level(&sol)?,
                    marginal: None,
                    loss: None,
                    queue: None,
                };
                Ok(Analysis { drifts: vec![Some(sol.drift)], body: Some(body) })
            }
        },
        Prepared::Colored(m) => {
            let sol = solve_colored_with(m, opts)?;
            let body = match &sol.p_minus {
                Some(p) if sol.recurrent => Some(Body {
                    cdf: grid.iter().map(|&x| level_cdf(&sol, x)).collect::<fluidq::Result<_>>()?,
                    gamma: top_color_dist(&sol)?,
                    p_minus: p.iter().copied().collect(),
                    mean_level: mean_level(&sol)?,
                    marginal: None,
                    loss: None,
                    queue: None,
                }),
                _ => None,
            };
            Ok(Analysis { drifts: sol.drifts.clone(), body })
        }
        Prepared::Jumps(jm, extra) => {
            let js = solve_jumps_with(jm, opts)?;
            let body = if js.recurrent() { Some(jump_body(&js, extra, grid)?) } else { None };
            Ok(Analysis { drifts: js.colored.drifts.clone(), body })
        }
    }
}

fn jump_body(js: &JumpSolution, extra: &Extra, grid: &[f64]) -> Result<Body, Failure> {
    Ok(Body {
        cdf: grid.iter().map(|&x| jump_level_cdf(js, x)).collect::<fluidq::Result<_>>()?,
        gamma: jump_top_color_dist(js)?,
        p_minus: js.p_minus()?.iter().copied().collect(),
        mean_level: jump_mean_level(js)?,
        marginal: Some(joint_marginal(js)?),
        loss: match extra {
            Extra::Lcfs(spec) => Some(lcfs_loss_probability(js, spec)?),
            _ => None,
        },
        queue: match extra {
            Extra::Cascade(spec) => Some(cascade_queue_length_dist(js, spec)?),
            _ => None,
        },
    })
}

fn drift_table(drifts: &[Option<(f64, f64)>]) -> Table {
    let mut t = Table::new(&["color", "up_fraction", "down_fraction", "status"]);
    for (c, d) in drifts.iter().enumerate() {
        let row = match d {
            Some((up, down)) => vec![(c + 1).into(), (*up).into(), (*down).into(), if up < down { "stable" } else { "unstable" }.into()],
            None => vec![(c + 1).into(), f64::NAN.into(), f64::NAN.into(), "transient".into()],
        };
        t.push(row);
    }
    t
}

fn threshold_cell(t: Option<usize>) -> Cell {
    t.map_or(Cell::Text("inf".into()), |n| n.into())
}

pub fn solve(model: &Model, ctx: &Context, qbd_baseline: bool) -> Result<(), Failure> {
    if qbd_baseline && !matches!(model, Model::Cascade(_)) {
        return Err(Failure::Input(format!("--qbd-baseline: only applies to cascade models, not {}", model.kind())));
    }
    let prep = prepare(model)?;
    let analysis = analyze(&prep, ctx.grid, &ctx.opts)?;
    ctx.write("drift.csv", &drift_table(&analysis.drifts))?;
    let Some(body) = analysis.body else {
        return Err(FluidError::NotRecurrent.into());
    };

    let mut cdf = Table::new(&["x", "cdf"]);
    for (&x, &v) in ctx.grid.iter().zip(&body.cdf) {
        cdf.push(vec![x.into(), v.into()]);
    }
    ctx.write("cdf.csv", &cdf)?;

    let mut gamma = Table::new(&["color", "probability"]);
    for (c, &g) in body.gamma.iter().enumerate() {
        gamma.push(vec![c.into(), g.into()]);
    }
    ctx.write("gamma.csv", &gamma)?;

    let mut boundary = Table::new(&["state", "probability"]);
    for (i, &p) in body.p_minus.iter().enumerate() {
        boundary.push(vec![i.into(), p.into()]);
    }
    ctx.write("boundary.csv", &boundary)?;

    let mut summary = Table::new(&["quantity", "value"]);
    summary.push(vec!["p_empty".into(), body.p_minus.iter().sum::<f64>().into()]);
    summary.push(vec!["mean_level".into(), body.mean_level.into()]);
    ctx.write("summary.csv", &summary)?;

    if let Some(m) = &body.marginal {
        let mut t = Table::new(&["color", "state", "probability"]);
        for c in 0..m.nrows() {
            for i in 0..m.ncols() {
                t.push(vec![c.into(), i.into(), m[(c, i)].into()]);
            }
        }
        ctx.write("marginal.csv", &t)?;
    }

    if let (Some(loss), Prepared::Jumps(_, Extra::Lcfs(spec))) = (&body.loss, &prep) {
        let mut t = Table::new(&["type", "threshold", "loss"]);
        for (l, &v) in loss.iter().enumerate() {
            t.push(vec![(l + 1).into(), threshold_cell(spec.thresholds[l]), v.into()]);
        }
        ctx.write("loss.csv", &t)?;
    }

    if let (Some(queue), Prepared::Jumps(_, Extra::Cascade(spec))) = (&body.queue, &prep) {
        let qbd = if qbd_baseline {
            match solve_finite_qbd(spec, DEFAULT_PHASE_BOUND) {
                Ok(q) => Some(q),
                Err(e @ FluidError::PhaseBlowup { .. }) => {
                    eprintln!("warning: QBD baseline skipped: {e}");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let mut t = if qbd_baseline {
            Table::new(&["n", "probability", "qbd_probability", "abs_difference"])
        } else {
            Table::new(&["n", "probability"])
        };
        for (n, &p) in queue.iter().enumerate() {
            let mut row = vec![n.into(), p.into()];
            if qbd_baseline {
                let b = qbd.as_ref().map_or(f64::NAN, |q| q[n]);
                row.push(b.into());
                row.push((p - b).abs().into());
            }
            t.push(row);
        }
        ctx.write("queue_length.csv", &t)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Param {
    #[value(name = "N1", alias = "n1")]
    N1,
    #[value(name = "N2", alias = "n2")]
    N2,
    #[value(name = "C", alias = "c")]
    C,
    #[value(name = "rho")]
    Rho,
}

impl Param {
    fn name(self) -> &'static str {
        match self {
            Param::N1 => "N1",
            Param::N2 => "N2",
            Param::C => "C",
            Param::Rho => "rho",
        }
    }
}

/// Returns a copy of `model` with `param` set to `value`, and the table cell for the value.
fn apply(model: &Model, param: Param, value: &str) -> Result<(Model, Cell), Failure> {
    let field = format!("--values {value}");
    let count = || -> Result<Option<usize>, Failure> {
        if value == "inf" {
            return Ok(None);
        }
        match value.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Input(format!("{field}: {} needs a positive integer", param.name()))),
        }
    };
    let real = || value.parse::<f64>().map_err(|_| Failure::Input(format!("{field}: rho needs a number")));
    let mut m = model.clone();
    let cell = match (&mut m, param) {
        (Model::Lcfs(l), Param::N1) => {
            let n = count()?;
            l.thresholds[0] = n;
            if let (Some(r), Some(n)) = (l.n2_ratio, n) {
                l.thresholds[1] = Some(((r * n as f64).round() as usize).max(1));
            }
            threshold_cell(n)
        }
        (Model::Lcfs(l), Param::N2) if l.thresholds.len() >= 2 => {
            let n = count()?;
            l.thresholds[1] = n;
            threshold_cell(n)
        }
        (Model::Lcfs(l), Param::Rho) => {
            let r = real()?;
            l.rho = Some(r);
            r.into()
        }
        (Model::Cascade(c), Param::N1) => {
            let n = count()?.ok_or_else(|| Failure::Input(format!("{field}: cascade capacity must be finite")))?;
            c.capacity = n;
            n.into()
        }
        (Model::Cascade(c), Param::C) => match &mut c.source {
            CascadeSource::Ipp { levels, .. } => {
                let n = count()?.ok_or_else(|| Failure::Input(format!("{field}: C must be finite")))?;
                *levels = n;
                n.into()
            }
            CascadeSource::Explicit { .. } => {
                return Err(Failure::Input("--param C: needs a cascade model built from the ipp preset".into()))
            }
        },
        (Model::Cascade(c), Param::Rho) => {
            let r = real()?;
            c.rho = Some(r);
            r.into()
        }
        (m, p) => {
            return Err(Failure::Input(format!("--param {}: does not apply to {} models", p.name(), m.kind())));
        }
    };
    Ok((m, cell))
}

fn status(e: &Failure) -> String {
    match e {
        Failure::Solve(FluidError::NotRecurrent | FluidError::Unstable { .. }) => "not_recurrent".into(),
        other => format!("failed: {other}"),
    }
}

pub fn sweep(model: &Model, ctx: &Context, param: Param, values: &[String], qbd_baseline: bool) -> Result<(), Failure> {
    let cascade = matches!(model, Model::Cascade(_));
    if qbd_baseline && !cascade {
        return Err(Failure::Input(format!("--qbd-baseline: only applies to cascade models, not {}", model.kind())));
    }
    // Applying every value first reports bad values before any solve starts.
    let points = values.iter().map(|v| apply(model, param, v)).collect::<Result<Vec<_>, _>>()?;
    let types = match model {
        Model::Lcfs(l) => l.services.len(),
        _ => 0,
    };

    let mut headers: Vec<String> = vec![param.name().into(), "status".into(), "seconds".into()];
    if cascade {
        headers.extend(["p_empty", "p_full", "mean_queue_length"].map(String::from));
        if qbd_baseline {
            headers.extend(["qbd_status", "qbd_seconds", "qbd_max_abs_difference"].map(String::from));
        }
    } else {
        headers.extend((1..=types).map(|l| format!("loss_type{l}")));
        headers.extend(["p_empty", "mean_top_color"].map(String::from));
    }
    let width = headers.len();
    let mut table = Table::new(&headers);
    let (mut invalid, mut not_recurrent) = (false, false);
    let mut losses: Vec<Option<Vec<f64>>> = Vec::new();

    // Points run one after another so the seconds column measures uncontended solves.
    for (k, (point, cell)) in points.iter().enumerate() {
        let start = Instant::now();
        let result = prepare(point).and_then(|p| {
            let a = analyze(&p, &[], &ctx.opts)?;
            a.body.map(|b| (p, b)).ok_or(Failure::Solve(FluidError::NotRecurrent))
        });
        let secs = start.elapsed().as_secs_f64();
        let mut row = vec![cell.clone()];
        match result {
            Ok((prep, body)) => {
                row.push("ok".into());
                row.push(secs.into());
                let mean_top: f64 = body.gamma.iter().enumerate().map(|(c, g)| c as f64 * g).sum();
                if let Some(q) = &body.queue {
                    let mean: f64 = q.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
                    row.extend([q[0].into(), q[q.len() - 1].into(), mean.into()]);
                    if qbd_baseline {
                        let Prepared::Jumps(_, Extra::Cascade(spec)) = &prep else { unreachable!() };
                        let t = Instant::now();
                        match solve_finite_qbd(spec, DEFAULT_PHASE_BOUND) {
                            Ok(b) => {
                                let diff = q.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                                row.extend(["ok".into(), t.elapsed().as_secs_f64().into(), diff.into()]);
                            }
                            Err(FluidError::PhaseBlowup { .. }) => {
                                row.extend(["phase_blowup".into(), f64::NAN.into(), f64::NAN.into()]);
                            }
                            Err(e) => row.extend([format!("failed: {e}").into(), f64::NAN.into(), f64::NAN.into()]),
                        }
                    }
                } else {
                    if let Some(loss) = &body.loss {
                        row.extend(loss.iter().map(|&v| Cell::Real(v)));
                    }
                    row.extend([body.gamma[0].into(), mean_top.into()]);
                }
                losses.push(body.loss);
            }
            Err(e) => {
                eprintln!("{} = {}: {e}", param.name(), values[k]);
                if e.exit_code() == 2 {
                    not_recurrent = true;
                } else {
                    invalid = true;
                }
                row.push(status(&e).into());
                row.push(secs.into());
                row.resize(width, Cell::Real(f64::NAN));
                losses.push(None);
            }
        }
        table.push(row);
    }
    ctx.write("sweep.csv", &table)?;

    if param == Param::N1 {
        check_monotone(values, &losses);
    }
    if invalid {
        Err(Failure::Input("one or more sweep points failed".into()))
    } else if not_recurrent {
        Err(Failure::Solve(FluidError::NotRecurrent))
    } else {
        Ok(())
    }
}

/// Warns when a loss probability grows along increasing `N1`.
fn check_monotone(values: &[String], losses: &[Option<Vec<f64>>]) {
    let ns: Vec<f64> = values.iter().map(|v| v.parse::<f64>().unwrap_or(f64::INFINITY)).collect();
    for i in 0..losses.len() {
        for j in 0..losses.len() {
            if ns[i] >= ns[j] {
                continue;
            }
            if let (Some(a), Some(b)) = (&losses[i], &losses[j]) {
                for (l, (x, y)) in a.iter().zip(b).enumerate() {
                    if *y > *x + 1e-12 {
                        eprintln!(
                            "warning: type-{} loss grows from {x:e} at N1 = {} to {y:e} at N1 = {}",
                            l + 1,
                            values[i],
                            values[j]
                        );
                    }
                }
            }
        }
    }
}

pub struct SimArgs {
    pub horizon: f64,
    pub warmup: f64,
    pub reps: usize,
    pub seed: u64,
    pub compare: bool,
}

fn sim_table(key: &[&str], compare: bool) -> Table {
    let mut h: Vec<&str> = key.to_vec();
    h.extend(["mean", "se"]);
    if compare {
        h.extend(["analytic", "z"]);
    }
    Table::new(&h)
}

/// Appends `(mean, se[, analytic, z])` and tracks the largest |z|.
fn sim_row(mut key: Vec<Cell>, est: &Estimate, analytic: Option<f64>, max_z: &mut f64) -> Vec<Cell> {
    key.push(est.mean.into());
    key.push(est.se.into());
    if let Some(a) = analytic {
        let z = (est.mean - a) / est.se;
        if z.is_finite() {
            *max_z = max_z.max(z.abs());
        }
        key.push(a.into());
        key.push(z.into());
    }
    key
}

pub fn simulate_cmd(model: &Model, ctx: &Context, args: &SimArgs) -> Result<(), Failure> {
    let cfg = SimConfig {
        horizon: args.horizon,
        warmup: args.warmup,
        replications: args.reps,
        seed: args.seed,
        sample_grid: ctx.grid.to_vec(),
        ..Default::default()
    };
    let prep = prepare(model)?;
    let analytic = if args.compare {
        let a = analyze(&prep, ctx.grid, &ctx.opts)?;
        Some(a.body.ok_or(Failure::Solve(FluidError::NotRecurrent))?)
    } else {
        None
    };
    let result: SimResult = match &prep {
        Prepared::Classic(m) => simulate_colored(&ColoredModel::from(m), &cfg)?,
        Prepared::Colored(m) => simulate_colored(m, &cfg)?,
        Prepared::Jumps(jm, _) => simulate(jm, &cfg)?,
    };
    let compare = analytic.is_some();
    let a = analytic.as_ref();
    let mut max_z: f64 = 0.0;

    let mut summary = sim_table(&["statistic"], compare);
    summary.push(sim_row(vec!["utilization".into()], &result.utilization_hat, a.map(|b| 1.0 - b.gamma[0]), &mut max_z));
    ctx.write("sim_summary.csv", &summary)?;

    let mut cdf = sim_table(&["x"], compare);
    for (g, (&x, est)) in ctx.grid.iter().zip(&result.level_cdf_hat).enumerate() {
        cdf.push(sim_row(vec![x.into()], est, a.map(|b| b.cdf[g]), &mut max_z));
    }
    ctx.write("sim_cdf.csv", &cdf)?;

    let mut gamma = sim_table(&["color"], compare);
    for (c, est) in result.gamma_hat.iter().enumerate() {
        gamma.push(sim_row(vec![c.into()], est, a.map(|b| b.gamma[c]), &mut max_z));
    }
    ctx.write("sim_gamma.csv", &gamma)?;

    if let Prepared::Jumps(_, extra) = &prep {
        let mut marginal = sim_table(&["color", "state"], compare);
        for (c, row) in result.background_marginal_hat.iter().enumerate() {
            for (i, est) in row.iter().enumerate() {
                let exact = a.and_then(|b| b.marginal.as_ref()).map(|m| m[(c, i)]);
                marginal.push(sim_row(vec![c.into(), i.into()], est, exact, &mut max_z));
            }
        }
        ctx.write("sim_marginal.csv", &marginal)?;

        match extra {
            Extra::Lcfs(spec) => {
                let mut t = sim_table(&["type"], compare);
                for l in 0..spec.services.len() {
                    let est = result.estimate(|s| loss_from_marginal(&s.marginal, spec)[l]);
                    let exact = a.and_then(|b| b.loss.as_ref()).map(|v| v[l]);
                    t.push(sim_row(vec![(l + 1).into()], &est, exact, &mut max_z));
                }
                ctx.write("sim_loss.csv", &t)?;
            }
            Extra::Cascade(spec) => {
                let mut t = sim_table(&["n"], compare);
                for n in 0..=spec.capacity {
                    let est = result.estimate(|s| queue_length_from_marginal(&s.marginal, spec)[n]);
                    let exact = a.and_then(|b| b.queue.as_ref()).map(|v| v[n]);
                    t.push(sim_row(vec![n.into()], &est, exact, &mut max_z));
                }
                ctx.write("sim_queue_length.csv", &t)?;
            }
            Extra::None => {}
        }
    }
    if compare {
        eprintln!("largest |z| against the analytic solution: {max_z:.3}");
    }
    Ok(())
}
