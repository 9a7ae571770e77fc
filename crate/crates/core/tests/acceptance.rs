//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use fluidq::colored::*;
use fluidq::jumps::*;
use fluidq::matcore::{nare_residual, ones, solve_nare, NareMethod};
use fluidq::models::*;
use fluidq::sim::{simulate, SimConfig};
use fluidq::Matrix;
use rand::Rng;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(summary: String) -> Self {
        Self { pass: true, summary, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.pass = false;
            self.details.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.details.push(what.into());
    }
}

/// Median wall time of `reps` calls after one untimed warm-up call.
fn median_time<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    f();
    let mut ts: Vec<Duration> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    ts.sort();
    ts[reps / 2].as_secs_f64()
}

/// Least-squares slope and coefficient of determination of `y` on `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}

fn mm1_jump(lambda: f64, mu: f64) -> JumpModel {
    let mut q_new = BTreeMap::new();
    q_new.insert((0, 1), vec![scalar(lambda)]);
    JumpModel {
        n_minus: 1,
        tmm: vec![scalar(-lambda), scalar(-lambda)],
        ph: vec![vec![PhDist::exponential(mu)]],
        q_new,
        q_same: vec![vec![scalar(lambda)]],
    }
}

fn mm1n_spec(n: usize) -> LcfsSpec {
    LcfsSpec { arrivals: Mmap::poisson(1.0), services: vec![PhDist::exponential(2.0)], thresholds: vec![Some(n)] }
}

fn workload_oracle() -> Outcome {
    let start = Instant::now();
    let js = solve_jumps(&mm1_jump(1.0, 2.0)).unwrap();
    let mut err = (js.p_minus().unwrap()[0] - 0.5).abs();
    for x in [0.0, 0.5, 1.0, 2.0, 5.0] {
        err = err.max((jump_level_cdf(&js, x).unwrap() - (1.0 - 0.5 * (-x).exp())).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let mut o = Outcome::new(format!("M/M/1 workload oracle: max error {err:.1e}, {:.2} ms", secs * 1e3));
    o.check(err <= 1e-10, format!("error {err:e} above 1e-10"));
    o.check(secs < 0.1, format!("runtime {secs} s"));
    o
}

fn birth_death_oracle() -> Outcome {
    let start = Instant::now();
    let mut err: f64 = 0.0;
    for n in 1..=50 {
        let spec = mm1n_spec(n);
        let js = solve_jumps(&build_lcfs(&spec).unwrap()).unwrap();
        let law = mm1n_law(0.5, n);
        let gamma = jump_top_color_dist(&js).unwrap();
        for k in 0..=n {
            err = err.max((gamma[k] - law[k]).abs());
        }
        err = err.max((lcfs_loss_probability(&js, &spec).unwrap()[0] - law[n]).abs());
    }
    let oracle_secs = start.elapsed().as_secs_f64();
    let sizes = [50usize, 100, 200, 400];
    let times: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let spec = mm1n_spec(n);
            median_time(21, || {
                let js = solve_jumps(&build_lcfs(&spec).unwrap()).unwrap();
                std::hint::black_box(lcfs_loss_probability(&js, &spec).unwrap());
            })
        })
        .collect();
    let total = start.elapsed().as_secs_f64();
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    let mut o = Outcome::new(format!(
        "M/M/1/N oracle: max error {err:.1e} over N=1..50 in {oracle_secs:.2} s, log-log runtime slope {slope:.3}"
    ));
    o.note(format!(
        "solve times (ms) for N={sizes:?}: {:?}",
        times.iter().map(|t| format!("{:.3}", t * 1e3)).collect::<Vec<_>>()
    ));
    o.check(err <= 1e-10, format!("error {err:e} above 1e-10"));
    o.check(oracle_secs < 5.0 && total < 5.0, format!("runtime {total} s"));
    o.check((slope - 1.0).abs() <= 0.15, format!("slope {slope} outside 1 +/- 0.15"));
    o
}

fn stacked(psi: &[Matrix]) -> Matrix {
    let rows: usize = psi.iter().map(|m| m.nrows()).sum();
    let mut out = Matrix::zeros(rows, psi[0].ncols());
    let mut r = 0;
    for m in psi {
        out.view_mut((r, 0), (m.nrows(), m.ncols())).copy_from(m);
        r += m.nrows();
    }
    out
}

fn reduction() -> Outcome {
    let mut r = rng(3001);
    let mut err: f64 = 0.0;
    for k in 0..20 {
        let m = random_reducible(&mut r, 2 + k % 2, 4);
        let classic = reduce_to_classic(&m).unwrap();
        let psi_hat = solve_nare(&classic.tpp, &classic.tpm, &classic.tmp, &classic.tmm).unwrap();
        let sol = solve_colored(&m).unwrap();
        err = err.max((stacked(&sol.psi) - psi_hat).amax());
    }
    let mut o = Outcome::new(format!("reduction to a classic queue: 20 models, max |Psi - Psi_hat| {err:.1e}"));
    o.check(err <= 1e-10, format!("difference {err:e} above 1e-10"));
    o
}

fn special_cases() -> Outcome {
    let chain = recurrent_models(4001, 20, |r| Shape { no_skip: true, ..Shape::new(r.random_range(2..=4), 4) });
    let mut gamma_err: f64 = 0.0;
    for m in &chain {
        let sol = solve_colored(m).unwrap();
        let general = top_color_dist(&sol).unwrap();
        let fast = top_color_dist_recursive(&sol).unwrap();
        for (a, b) in general.iter().zip(&fast) {
            gamma_err = gamma_err.max((a - b).abs());
        }
    }
    let linear = recurrent_models(4002, 20, |r| Shape { linear: true, ..Shape::new(r.random_range(1..=3), 4) });
    let mut psi_err: f64 = 0.0;
    let mut routed = true;
    for m in &linear {
        let fast = solve_colored(m).unwrap();
        routed &= fast.reports.iter().all(|r| r.method == NareMethod::Sylvester);
        let general = solve_colored_with(m, &SolveOptions { nare: NareMethod::Doubling, ..Default::default() }).unwrap();
        for (a, b) in fast.psi.iter().zip(&general.psi) {
            psi_err = psi_err.max((a - b).amax());
        }
    }
    let mut o = Outcome::new(format!(
        "special-case routes: top-color recursion vs general {gamma_err:.1e}, Sylvester vs general Riccati {psi_err:.1e}"
    ));
    o.check(gamma_err <= 1e-10, format!("top-color difference {gamma_err:e}"));
    o.check(psi_err <= 1e-10, format!("Psi difference {psi_err:e}"));
    o.check(routed, "linear colors were not routed to the Sylvester solver");
    o
}

fn cascade_vs_qbd() -> Outcome {
    let mut err: f64 = 0.0;
    for c in 1..=4 {
        for n in [2, 5, 10] {
            let spec = presets::ipp_cascade(c, 2, n, 0.8).unwrap();
            let js = solve_jumps(&build_cascade(&spec).unwrap()).unwrap();
            let fluid = cascade_queue_length_dist(&js, &spec).unwrap();
            let qbd = solve_finite_qbd(&spec, DEFAULT_PHASE_BOUND).unwrap();
            for (a, b) in fluid.iter().zip(&qbd) {
                err = err.max((a - b).abs());
            }
        }
    }
    let cs: Vec<usize> = (2..=6).collect();
    let fluid_times: Vec<f64> = cs
        .iter()
        .map(|&c| {
            let spec = presets::ipp_cascade(c, 3, 10, 0.8).unwrap();
            median_time(9, || {
                let js = solve_jumps(&build_cascade(&spec).unwrap()).unwrap();
                std::hint::black_box(cascade_queue_length_dist(&js, &spec).unwrap());
            })
        })
        .collect();
    let (_, r2) = linear_fit(&cs.iter().map(|&c| c as f64).collect::<Vec<_>>(), &fluid_times);
    let qbd_cs = [3usize, 4, 5, 6];
    let qbd_times: Vec<f64> = qbd_cs
        .iter()
        .map(|&c| {
            let spec = presets::ipp_cascade(c, 3, 2, 0.8).unwrap();
            let reps = if c < 6 { 3 } else { 1 };
            if c == 6 {
                // Skip the warm-up for the largest case; one solve takes seconds.
                let t = Instant::now();
                std::hint::black_box(solve_finite_qbd(&spec, DEFAULT_PHASE_BOUND).unwrap());
                return t.elapsed().as_secs_f64();
            }
            median_time(reps, || {
                std::hint::black_box(solve_finite_qbd(&spec, DEFAULT_PHASE_BOUND).unwrap());
            })
        })
        .collect();
    let ratios: Vec<f64> = qbd_times.windows(2).map(|w| w[1] / w[0]).collect();
    let mut o = Outcome::new(format!(
        "cascade vs QBD: max difference {err:.1e}; fluid runtime linear fit R^2 {r2:.3}; QBD runtime ratios {:?}",
        ratios.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>()
    ));
    o.note(format!(
        "fluid times (ms) C=2..6, k=3, N=10: {:?}",
        fluid_times.iter().map(|t| format!("{:.3}", t * 1e3)).collect::<Vec<_>>()
    ));
    o.note(format!(
        "QBD times (ms) C=3..6, k=3, N=2: {:?}",
        qbd_times.iter().map(|t| format!("{:.1}", t * 1e3)).collect::<Vec<_>>()
    ));
    o.check(err <= 1e-8, format!("difference {err:e} above 1e-8"));
    o.check(r2 >= 0.9, format!("R^2 {r2}"));
    o.check(ratios.iter().all(|&r| r >= 5.0), "QBD runtime ratio below 5");
    o
}

fn bursty_lcfs_losses() -> Outcome {
    let mut o = Outcome::new(String::new());
    let mut losses = BTreeMap::new();
    let mut worst_z: f64 = 0.0;
    for rho in [1.0, 1.025] {
        for n1 in [50usize, 100] {
            for reduced in [false, true] {
                let n2 = if reduced { (0.95 * n1 as f64).round() as usize } else { n1 };
                let spec = presets::bursty_lcfs(rho, Some(n1), Some(n2)).unwrap();
                let jm = build_lcfs(&spec).unwrap();
                let loss = lcfs_loss_probability(&solve_jumps(&jm).unwrap(), &spec).unwrap();
                let cfg = SimConfig { horizon: 1e6, warmup: 1e3, replications: 20, seed: 2026, ..Default::default() };
                let r = simulate(&jm, &cfg).unwrap();
                for l in 0..2 {
                    let est = r.estimate(|s| loss_from_marginal(&s.marginal, &spec)[l]);
                    let z = (est.mean - loss[l]) / est.se;
                    worst_z = worst_z.max(z.abs());
                    o.note(format!(
                        "rho={rho} N1={n1} N2={n2} type {}: analytic {:.6e}, simulated {:.6e} +/- {:.1e} (z={z:+.2})",
                        l + 1,
                        loss[l],
                        est.mean,
                        est.se
                    ));
                    o.check(est.covers(loss[l], 3.0), format!("rho={rho} N1={n1} N2={n2} type {} outside 3 SE", l + 1));
                }
                if reduced {
                    o.check(loss[0] < loss[1], format!("rho={rho} N1={n1}: type-1 loss not below type-2"));
                }
                losses.insert((rho.to_bits(), reduced, n1), loss);
            }
        }
    }
    for rho in [1.0f64, 1.025] {
        for reduced in [false, true] {
            let (a, b) = (&losses[&(rho.to_bits(), reduced, 50)], &losses[&(rho.to_bits(), reduced, 100)]);
            o.check(b[0] <= a[0] && b[1] <= a[1], format!("rho={rho}: loss grows with N1"));
        }
    }
    o.summary = format!("bursty LCFS losses: monotone in N1, type order, simulation agreement (max |z| {worst_z:.2})");
    o
}

fn balance_residuals() -> Outcome {
    let models = recurrent_models(7001, 5, |_| Shape::new(2, 3));
    let (mut diff, mut bound, mut control): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    let grid = [0.25, 0.75, 1.5];
    for m in &models {
        let sol = solve_colored(m).unwrap();
        let mut bad = sol.clone();
        bad.psi[1] = bad.psi[1].map(|v| v + 0.05);
        bad.kc[1] = &m.colors[1].tpp + &bad.psi[1] * &m.colors[1].tmp;
        let mut broken: f64 = 0.0;
        for &x in &grid {
            for &y in &grid {
                let r = pde_residual(&sol, m, x, y, 1e-4).unwrap();
                diff = diff.max(r.max_differential());
                bound = bound.max(r.max_boundary());
                let b = pde_residual(&bad, m, x, y, 1e-4).unwrap();
                broken = broken.max(b.max_differential().max(b.max_boundary()));
            }
        }
        control = control.min(broken);
    }
    let mut o = Outcome::new(format!(
        "two-color balance equations: differential {diff:.1e}, boundary {bound:.1e}, perturbed-Psi control {control:.1e}"
    ));
    o.check(diff <= 1e-5, format!("differential residual {diff:e}"));
    o.check(bound <= 1e-10, format!("boundary residual {bound:e}"));
    o.check(control > 1e-3, format!("control residual {control:e} not above 1e-3"));
    o
}

fn riccati_residual(model: &ColoredModel, sol: &ColoredSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 1..=model.num_colors() {
        let b = model.color(c);
        let mut tpm = b.tpm.clone();
        let mut tmm = b.tmm.clone();
        for (&(_, d), m) in model.tpp2.range((c, 0)..(c + 1, 0)) {
            tpm += m * &sol.psi[d - 1];
        }
        for (&(_, d), m) in model.tmp2.range((c, 0)..(c + 1, 0)) {
            tmm += m * &sol.psi[d - 1];
        }
        worst = worst.max(nare_residual(&b.tpp, &tpm, &b.tmp, &tmm, &sol.psi[c - 1]).amax());
    }
    worst
}

fn total_mass(sol: &ColoredSolution) -> f64 {
    let p = sol.p_minus.as_ref().unwrap().sum();
    let dens = |xs: &[f64]| {
        let (a, b) = density(sol, xs).unwrap();
        a.sum() + b.sum()
    };
    let tol = 1e-10;
    let tiny = |x: f64| x.max(1e-300);
    match sol.num_colors() {
        1 => p + integrate_half_line(&mut |x| dens(&[tiny(x)]), tol),
        _ => {
            let only1 = integrate_half_line(&mut |x| dens(&[tiny(x), 0.0]), tol);
            let only2 = integrate_half_line(&mut |y| dens(&[0.0, tiny(y)]), tol);
            let both =
                integrate_half_line(&mut |x| integrate_half_line(&mut |y| dens(&[tiny(x), tiny(y)]), tol), tol);
            p + only1 + only2 + both
        }
    }
}

fn global_invariants() -> Outcome {
    let models = recurrent_models(8001, 50, |r| Shape::new(r.random_range(1..=3), 4));
    let (mut stoch, mut resid, mut gsum, mut mass): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut k_ok = true;
    let mut cdf_ok = true;
    let mut small = 0;
    for m in &models {
        let sol = solve_colored(m).unwrap();
        for (psi, k) in sol.psi.iter().zip(&sol.kc) {
            stoch = stoch.max((psi * ones(psi.ncols()) - ones(psi.nrows())).amax());
            k_ok &= psi.iter().all(|&v| v >= 0.0);
            for i in 0..k.nrows() {
                k_ok &= (0..k.ncols()).all(|j| i == j || k[(i, j)] >= -1e-12);
            }
            k_ok &= (-k).try_inverse().is_some_and(|inv| inv.iter().all(|&v| v >= -1e-12));
        }
        resid = resid.max(riccati_residual(m, &sol));
        gsum = gsum.max((top_color_dist(&sol).unwrap().iter().sum::<f64>() - 1.0).abs());
        let mut prev = 0.0;
        for j in 0..60 {
            let f = level_cdf(&sol, 0.2 * j as f64).unwrap();
            cdf_ok &= f >= prev - 1e-14;
            prev = f;
        }
        cdf_ok &= (level_cdf(&sol, 1e4).unwrap() - 1.0).abs() < 1e-10;
        if m.num_colors() <= 2 {
            small += 1;
            mass = mass.max((total_mass(&sol) - 1.0).abs());
        }
    }
    let mut o = Outcome::new(format!(
        "global invariants on 50 models: Psi row sums {stoch:.1e}, Riccati residual {resid:.1e}, Gamma sum {gsum:.1e}, quadrature mass error {mass:.1e} ({small} models)"
    ));
    o.check(stoch <= 1e-10, format!("Psi row sums off by {stoch:e}"));
    o.check(k_ok, "a K_c is not a nonsingular M-matrix or a Psi entry is negative");
    o.check(resid <= 1e-12, format!("Riccati residual {resid:e}"));
    o.check(gsum <= 1e-10, format!("Gamma sums off by {gsum:e}"));
    o.check(cdf_ok, "level CDF decreases or misses 1");
    o.check(mass <= 1e-6, format!("quadrature mass error {mass:e}"));
    o
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1", workload_oracle),
        ("2", birth_death_oracle),
        ("3", reduction),
        ("4", special_cases),
        ("5", cascade_vs_qbd),
        ("6", bursty_lcfs_losses),
        ("7", balance_residuals),
        ("8", global_invariants),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{id}] {} ({:.1} s)", o.summary, start.elapsed().as_secs_f64());
        for d in &o.details {
            println!("       {d}");
        }
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
