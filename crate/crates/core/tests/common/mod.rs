#![allow(dead_code)]

use std::collections::BTreeMap;

use fluidq::colored::{solve_colored, ColorBlocks, ColoredModel, CrossBlocks};
use fluidq::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Random rate, zero with probability `sparsity`.
fn rate(rng: &mut ChaCha8Rng, scale: f64, sparsity: f64) -> f64 {
    if rng.random::<f64>() < sparsity {
        0.0
    } else {
        scale * rng.random_range(0.1..1.0)
    }
}

fn random_block(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64, sparsity: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rate(rng, scale, sparsity))
}

/// Off-diagonal rates only; the diagonal is filled by [`close_rows`].
fn random_square(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let mut m = random_block(rng, n, n, scale, 0.3);
    for i in 0..n {
        m[(i, i)] = 0.0;
    }
    m
}

/// Sets `diag[i][i]` so that row `i` summed over `diag` and `others` is zero.
fn close_rows(diag: &mut Matrix, others: &[&Matrix]) {
    for i in 0..diag.nrows() {
        let s: f64 = diag.row(i).sum() + others.iter().map(|m| m.row(i).sum()).sum::<f64>();
        diag[(i, i)] -= s;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub colors: usize,
    pub max_block: usize,
    /// Cross blocks only between consecutive colors and busy periods start in color 1.
    pub no_skip: bool,
    /// `Tmp[c] = 0` for every color.
    pub linear: bool,
}

impl Shape {
    pub fn new(colors: usize, max_block: usize) -> Self {
        Self { colors, max_block, no_skip: false, linear: false }
    }
}

/// Random valid colored model; up-states leave quickly so most draws are recurrent.
pub fn random_colored(rng: &mut ChaCha8Rng, shape: Shape) -> ColoredModel {
    let cc = shape.colors;
    let nm = rng.random_range(1..=shape.max_block);
    let np: Vec<usize> = (0..cc).map(|_| rng.random_range(1..=shape.max_block)).collect();
    let linked = |c: usize, d: usize| !shape.no_skip || d == c + 1;
    let mut tpp2 = CrossBlocks::new();
    let mut tmp2 = CrossBlocks::new();
    for c in 1..=cc {
        for d in c + 1..=cc {
            if linked(c, d) {
                tpp2.insert((c, d), random_block(rng, np[c - 1], np[d - 1], 0.5, 0.3));
                tmp2.insert((c, d), random_block(rng, nm, np[d - 1], 0.3, 0.4));
            }
        }
    }
    let mut colors = Vec::with_capacity(cc);
    for c in 1..=cc {
        let n = np[c - 1];
        let mut tpp = random_square(rng, n, 1.0);
        let tpm = random_block(rng, n, nm, 3.0, 0.2);
        let tmp = if shape.linear { Matrix::zeros(nm, n) } else { random_block(rng, nm, n, 0.8, 0.3) };
        let mut tmm = random_square(rng, nm, 1.0);
        let up_cross: Vec<&Matrix> = tpp2.range((c, 0)..(c + 1, 0)).map(|(_, m)| m).collect();
        let down_cross: Vec<&Matrix> = tmp2.range((c, 0)..(c + 1, 0)).map(|(_, m)| m).collect();
        let mut others = vec![&tpm];
        others.extend(up_cross);
        close_rows(&mut tpp, &others);
        let mut others = vec![&tmp];
        others.extend(down_cross);
        close_rows(&mut tmm, &others);
        colors.push(ColorBlocks { tpp, tpm, tmp, tmm });
    }
    let mut t0mm = random_square(rng, nm, 1.0);
    let mut t0mp: Vec<Matrix> = (1..=cc)
        .map(|c| {
            if shape.no_skip && c > 1 {
                Matrix::zeros(nm, np[c - 1])
            } else {
                random_block(rng, nm, np[c - 1], 1.0, 0.3)
            }
        })
        .collect();
    // Some busy period must be able to start.
    t0mp[0][(0, 0)] += 0.5;
    let refs: Vec<&Matrix> = t0mp.iter().collect();
    close_rows(&mut t0mm, &refs);
    ColoredModel { n_minus: nm, colors, tpp2, tmp2, t0mm, t0mp }
}

/// Draws random models until `count` recurrent ones are found.
pub fn recurrent_models(seed: u64, count: usize, shape: impl Fn(&mut ChaCha8Rng) -> Shape) -> Vec<ColoredModel> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        assert!(tries < 100 * count, "random generator rarely yields recurrent models");
        let s = shape(&mut r);
        let m = random_colored(&mut r, s);
        if matches!(solve_colored(&m), Ok(sol) if sol.recurrent) {
            out.push(m);
        }
    }
    out
}

/// Random model satisfying the hypotheses under which a colored queue is a
/// classic queue with stacked up-states.
pub fn random_reducible(rng: &mut ChaCha8Rng, cc: usize, max_block: usize) -> ColoredModel {
    let nm = rng.random_range(1..=max_block);
    let np: Vec<usize> = (0..cc).map(|_| rng.random_range(1..=max_block)).collect();
    let top_tmp = random_block(rng, nm, np[cc - 1], 0.8, 0.2);
    let mut tmm = random_square(rng, nm, 1.0);
    close_rows(&mut tmm, &[&top_tmp]);
    let mut tpp2 = CrossBlocks::new();
    let mut tmp2 = CrossBlocks::new();
    for c in 1..cc {
        for d in c + 1..=cc {
            tpp2.insert((c, d), random_block(rng, np[c - 1], np[d - 1], 0.5, 0.3));
        }
        tmp2.insert((c, cc), top_tmp.clone());
    }
    let colors = (1..=cc)
        .map(|c| {
            let n = np[c - 1];
            let mut tpp = random_square(rng, n, 1.0);
            let tpm = random_block(rng, n, nm, 2.0, 0.2);
            let cross: Vec<&Matrix> = tpp2.range((c, 0)..(c + 1, 0)).map(|(_, m)| m).collect();
            let mut others = vec![&tpm];
            others.extend(cross);
            close_rows(&mut tpp, &others);
            let tmp = if c == cc { top_tmp.clone() } else { Matrix::zeros(nm, n) };
            ColorBlocks { tpp, tpm, tmp, tmm: tmm.clone() }
        })
        .collect();
    let mut t0mm = random_square(rng, nm, 1.0);
    let mut t0mp: Vec<Matrix> = np.iter().map(|&n| random_block(rng, nm, n, 1.0, 0.3)).collect();
    t0mp[0][(0, 0)] += 0.5;
    let refs: Vec<&Matrix> = t0mp.iter().collect();
    close_rows(&mut t0mm, &refs);
    ColoredModel { n_minus: nm, colors, tpp2, tmp2, t0mm, t0mp }
}

/// Valid scalar model with two colors; both `Psi` equal one.
pub fn two_color_scalar() -> ColoredModel {
    let mut tpp2 = BTreeMap::new();
    tpp2.insert((1, 2), scalar(1.0));
    let mut tmp2 = BTreeMap::new();
    tmp2.insert((1, 2), scalar(1.0));
    ColoredModel {
        n_minus: 1,
        colors: vec![
            ColorBlocks { tpp: scalar(-2.0), tpm: scalar(1.0), tmp: scalar(0.5), tmm: scalar(-1.5) },
            ColorBlocks { tpp: scalar(-3.0), tpm: scalar(3.0), tmp: scalar(1.0), tmm: scalar(-1.0) },
        ],
        tpp2,
        tmp2,
        t0mm: scalar(-1.0),
        t0mp: vec![scalar(0.5), scalar(0.5)],
    }
}

/// M/M/1/N queue-length law.
pub fn mm1n_law(rho: f64, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..=n).map(|k| rho.powi(k as i32)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let fc = f(mid);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(mid - dx) + f(mid + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature on `[a, b]`.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    while let Some((lo, hi, eps)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        if err <= eps || hi - lo < 1e-12 * (b - a).abs().max(1.0) {
            total += v;
        } else {
            let m = 0.5 * (lo + hi);
            stack.push((lo, m, 0.5 * eps));
            stack.push((m, hi, 0.5 * eps));
        }
    }
    total
}

/// `int_0^inf f` through the substitution `x = t / (1 - t)`.
pub fn integrate_half_line(f: &mut dyn FnMut(f64) -> f64, tol: f64) -> f64 {
    integrate(
        &mut |t: f64| {
            let s = 1.0 - t;
            let x = t / s;
            if !x.is_finite() {
                0.0
            } else {
                f(x) / (s * s)
            }
        },
        0.0,
        1.0,
        tol,
    )
}
