//! JSON model files.
//!
//! Every file carries a top-level `"kind"`. Matrices are row-major arrays of
//! arrays, phase-type distributions are `{"alpha": [...], "U": [[...]]}` and
//! thresholds are non-negative integers or the string `"inf"`.

use std::collections::BTreeMap;
use std::path::Path;

use fluidq::classic::ClassicModel;
use fluidq::colored::{ColorBlocks, ColoredModel, CrossBlocks};
use fluidq::jumps::{JumpModel, PhDist};
use fluidq::models::{presets, scale_to_load, CascadeSpec, LcfsSpec, Mmap, Threshold};
use fluidq::{Matrix, RowVector};
use serde::Deserialize;

use crate::Failure;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelFile {
    Classic(ClassicJson),
    Colored(ColoredJson),
    Jumps(JumpsJson),
    Lcfs(LcfsJson),
    Cascade(CascadeJson),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassicJson {
    #[serde(rename = "Tpp")]
    tpp: Rows,
    #[serde(rename = "Tpm")]
    tpm: Rows,
    #[serde(rename = "Tmp")]
    tmp: Rows,
    #[serde(rename = "Tmm")]
    tmm: Rows,
    #[serde(rename = "T0mm")]
    t0mm: Rows,
    #[serde(rename = "T0mp")]
    t0mp: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColorJson {
    #[serde(rename = "Tpp")]
    tpp: Rows,
    #[serde(rename = "Tpm")]
    tpm: Rows,
    #[serde(rename = "Tmp")]
    tmp: Rows,
    #[serde(rename = "Tmm")]
    tmm: Rows,
    #[serde(rename = "T0mp")]
    t0mp: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossJson {
    from: usize,
    to: usize,
    block: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColoredJson {
    #[serde(rename = "T0mm")]
    t0mm: Rows,
    colors: Vec<ColorJson>,
    #[serde(rename = "Tpp2", default)]
    tpp2: Vec<CrossJson>,
    #[serde(rename = "Tmp2", default)]
    tmp2: Vec<CrossJson>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhJson {
    alpha: Vec<f64>,
    #[serde(rename = "U")]
    u: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewJumpJson {
    from: usize,
    to: usize,
    rates: Vec<Rows>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpsJson {
    #[serde(rename = "Tmm")]
    tmm: Vec<Rows>,
    ph: Vec<Vec<PhJson>>,
    #[serde(default)]
    q_new: Vec<NewJumpJson>,
    #[serde(default)]
    q_same: Option<Vec<Vec<Rows>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MmapJson {
    #[serde(rename = "D0")]
    d0: Rows,
    #[serde(rename = "D")]
    d: Vec<Rows>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ThresholdJson {
    Finite(usize),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LcfsJson {
    preset: Option<String>,
    arrivals: Option<MmapJson>,
    services: Option<Vec<PhJson>>,
    thresholds: Vec<ThresholdJson>,
    rho: Option<f64>,
    n2_ratio: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CascadeJson {
    preset: Option<String>,
    arrivals: Option<MmapJson>,
    levels: Option<Vec<PhJson>>,
    gamma: Option<Vec<f64>>,
    num_levels: Option<usize>,
    erlang_k: Option<usize>,
    capacity: usize,
    rho: Option<f64>,
}

/// A parsed model file.
#[derive(Debug, Clone)]
pub enum Model {
    Classic(ClassicModel),
    Colored(ColoredModel),
    Jumps(JumpModel),
    Lcfs(LcfsInput),
    Cascade(CascadeInput),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Classic(_) => "classic",
            Model::Colored(_) => "colored",
            Model::Jumps(_) => "jumps",
            Model::Lcfs(_) => "lcfs",
            Model::Cascade(_) => "cascade",
        }
    }
}

/// LCFS queue before load scaling.
#[derive(Debug, Clone)]
pub struct LcfsInput {
    pub arrivals: Mmap,
    pub services: Vec<PhDist>,
    pub thresholds: Vec<Threshold>,
    /// Offered load; when set, arrivals are rescaled to reach it.
    pub rho: Option<f64>,
    /// When set, sweeping `N1` also sets `N2 = round(n2_ratio * N1)`.
    pub n2_ratio: Option<f64>,
}

impl LcfsInput {
    pub fn spec(&self) -> fluidq::Result<LcfsSpec> {
        let arrivals = match self.rho {
            Some(rho) => {
                let demands = self.services.iter().map(PhDist::mean).collect::<fluidq::Result<Vec<_>>>()?;
                scale_to_load(&self.arrivals, &demands, rho)?
            }
            None => self.arrivals.clone(),
        };
        Ok(LcfsSpec { arrivals, services: self.services.clone(), thresholds: self.thresholds.clone() })
    }
}

#[derive(Debug, Clone)]
pub enum CascadeSource {
    Explicit { arrivals: Mmap, levels: Vec<PhDist>, gamma: Vec<f64> },
    /// IPP arrivals with Erlang-`k` levels.
    Ipp { levels: usize, k: usize },
}

#[derive(Debug, Clone)]
pub struct CascadeInput {
    pub source: CascadeSource,
    pub capacity: usize,
    pub rho: Option<f64>,
}

impl CascadeInput {
    pub fn spec(&self) -> fluidq::Result<CascadeSpec> {
        match &self.source {
            CascadeSource::Ipp { levels, k } => presets::ipp_cascade(*levels, *k, self.capacity, self.rho.unwrap_or(0.8)),
            CascadeSource::Explicit { arrivals, levels, gamma } => {
                let mut spec = CascadeSpec {
                    arrivals: arrivals.clone(),
                    levels: levels.clone(),
                    gamma: gamma.clone(),
                    capacity: self.capacity,
                };
                if let Some(rho) = self.rho {
                    let demand = spec.job_demand()?;
                    spec.arrivals = scale_to_load(&spec.arrivals, &[demand], rho)?;
                }
                Ok(spec)
            }
        }
    }
}

pub fn load(path: &Path) -> Result<Model, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Model, Failure> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Failure::Input(format!("schema: {e}")))?;
    match file {
        ModelFile::Classic(j) => classic(j).map(Model::Classic),
        ModelFile::Colored(j) => colored(j).map(Model::Colored),
        ModelFile::Jumps(j) => jumps(j).map(Model::Jumps),
        ModelFile::Lcfs(j) => lcfs(j).map(Model::Lcfs),
        ModelFile::Cascade(j) => cascade(j).map(Model::Cascade),
    }
}

fn bad(msg: String) -> Failure {
    Failure::Input(msg)
}

/// Builds a `rows x cols` matrix, naming `field` on any mismatch.
fn matrix(field: &str, data: &Rows, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    if data.len() != rows {
        return Err(bad(format!("{field}: expected {rows} rows, got {}", data.len())));
    }
    for (i, r) in data.iter().enumerate() {
        if r.len() != cols {
            return Err(bad(format!("{field}: row {i} has {} entries, expected {cols}", r.len())));
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(bad(format!("{field}: row {i} holds non-finite value {v}")));
        }
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| data[i][j]))
}

fn square(field: &str, data: &Rows) -> Result<Matrix, Failure> {
    matrix(field, data, data.len(), data.len())
}

fn classic(j: ClassicJson) -> Result<ClassicModel, Failure> {
    let np = j.tpp.len();
    let nm = j.tmm.len();
    Ok(ClassicModel {
        tpp: square("Tpp", &j.tpp)?,
        tpm: matrix("Tpm", &j.tpm, np, nm)?,
        tmp: matrix("Tmp", &j.tmp, nm, np)?,
        tmm: square("Tmm", &j.tmm)?,
        t0mm: matrix("T0mm", &j.t0mm, nm, nm)?,
        t0mp: matrix("T0mp", &j.t0mp, nm, np)?,
    })
}

fn cross(field: &str, list: &[CrossJson], sizes: &[usize], nm: usize, from_down: bool) -> Result<CrossBlocks, Failure> {
    let cc = sizes.len();
    let mut out = CrossBlocks::new();
    for (k, e) in list.iter().enumerate() {
        let name = format!("{field}[{k}]");
        if !(1 <= e.from && e.from < e.to && e.to <= cc) {
            return Err(bad(format!("{name}: need 1 <= from < to <= {cc}, got from {} to {}", e.from, e.to)));
        }
        let rows = if from_down { nm } else { sizes[e.from - 1] };
        let m = matrix(&format!("{name}.block"), &e.block, rows, sizes[e.to - 1])?;
        if out.insert((e.from, e.to), m).is_some() {
            return Err(bad(format!("{name}: duplicate block ({}, {})", e.from, e.to)));
        }
    }
    Ok(out)
}

fn colored(j: ColoredJson) -> Result<ColoredModel, Failure> {
    let nm = j.t0mm.len();
    let t0mm = square("T0mm", &j.t0mm)?;
    if j.colors.is_empty() {
        return Err(bad("colors: at least one color is required".into()));
    }
    let sizes: Vec<usize> = j.colors.iter().map(|c| c.tpp.len()).collect();
    let mut colors = Vec::with_capacity(sizes.len());
    let mut t0mp = Vec::with_capacity(sizes.len());
    for (k, c) in j.colors.iter().enumerate() {
        let np = sizes[k];
        let f = |name: &str| format!("colors[{k}].{name}");
        colors.push(ColorBlocks {
            tpp: square(&f("Tpp"), &c.tpp)?,
            tpm: matrix(&f("Tpm"), &c.tpm, np, nm)?,
            tmp: matrix(&f("Tmp"), &c.tmp, nm, np)?,
            tmm: matrix(&f("Tmm"), &c.tmm, nm, nm)?,
        });
        t0mp.push(matrix(&f("T0mp"), &c.t0mp, nm, np)?);
    }
    Ok(ColoredModel {
        n_minus: nm,
        colors,
        tpp2: cross("Tpp2", &j.tpp2, &sizes, nm, false)?,
        tmp2: cross("Tmp2", &j.tmp2, &sizes, nm, true)?,
        t0mm,
        t0mp,
    })
}

fn ph(field: &str, j: &PhJson) -> Result<PhDist, Failure> {
    let n = j.alpha.len();
    let u = matrix(&format!("{field}.U"), &j.u, n, n)?;
    PhDist::new(RowVector::from_row_slice(&j.alpha), u).map_err(|e| bad(format!("{field}: {e}")))
}

fn jumps(j: JumpsJson) -> Result<JumpModel, Failure> {
    let cc = j.ph.len();
    if cc == 0 {
        return Err(bad("ph: at least one color is required".into()));
    }
    if j.tmm.len() != cc + 1 {
        return Err(bad(format!("Tmm: expected {} blocks (colors 0..={cc}), got {}", cc + 1, j.tmm.len())));
    }
    let nm = j.tmm[0].len();
    let tmm = j.tmm.iter().enumerate().map(|(c, m)| matrix(&format!("Tmm[{c}]"), m, nm, nm)).collect::<Result<Vec<_>, _>>()?;
    let mut phs = Vec::with_capacity(cc);
    for (c, list) in j.ph.iter().enumerate() {
        if list.is_empty() {
            return Err(bad(format!("ph[{c}]: at least one jump type is required")));
        }
        phs.push(list.iter().enumerate().map(|(l, p)| ph(&format!("ph[{c}][{l}]"), p)).collect::<Result<Vec<_>, _>>()?);
    }
    let rate_list = |field: String, list: &[Rows], types: usize| -> Result<Vec<Matrix>, Failure> {
        if list.len() != types {
            return Err(bad(format!("{field}: expected {types} rate matrices (one per jump type), got {}", list.len())));
        }
        list.iter().enumerate().map(|(l, m)| matrix(&format!("{field}[{l}]"), m, nm, nm)).collect()
    };
    let mut q_new = BTreeMap::new();
    for (k, e) in j.q_new.iter().enumerate() {
        if !(e.from < e.to && e.to <= cc) {
            return Err(bad(format!("q_new[{k}]: need 0 <= from < to <= {cc}, got from {} to {}", e.from, e.to)));
        }
        let list = rate_list(format!("q_new[{k}].rates"), &e.rates, phs[e.to - 1].len())?;
        if q_new.insert((e.from, e.to), list).is_some() {
            return Err(bad(format!("q_new[{k}]: duplicate entry ({}, {})", e.from, e.to)));
        }
    }
    let q_same = match &j.q_same {
        None => vec![Vec::new(); cc],
        Some(all) if all.len() != cc => {
            return Err(bad(format!("q_same: expected {cc} lists (one per color), got {}", all.len())));
        }
        Some(all) => all
            .iter()
            .enumerate()
            .map(|(c, list)| if list.is_empty() { Ok(Vec::new()) } else { rate_list(format!("q_same[{c}]"), list, phs[c].len()) })
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok(JumpModel { n_minus: nm, tmm, ph: phs, q_new, q_same })
}

fn mmap(field: &str, j: &MmapJson) -> Result<Mmap, Failure> {
    let n = j.d0.len();
    let d0 = matrix(&format!("{field}.D0"), &j.d0, n, n)?;
    let d = j.d.iter().enumerate().map(|(l, m)| matrix(&format!("{field}.D[{l}]"), m, n, n)).collect::<Result<Vec<_>, _>>()?;
    let m = Mmap { d0, d };
    m.validate().map_err(|e| bad(format!("{field}: {e}")))?;
    Ok(m)
}

fn threshold(field: &str, t: &ThresholdJson) -> Result<Threshold, Failure> {
    match t {
        ThresholdJson::Finite(n) => Ok(Some(*n)),
        ThresholdJson::Text(s) if s == "inf" => Ok(None),
        ThresholdJson::Text(s) => Err(bad(format!("{field}: expected an integer or \"inf\", got \"{s}\""))),
    }
}

fn lcfs(j: LcfsJson) -> Result<LcfsInput, Failure> {
    let thresholds =
        j.thresholds.iter().enumerate().map(|(l, t)| threshold(&format!("thresholds[{l}]"), t)).collect::<Result<Vec<_>, _>>()?;
    let (arrivals, services, rho) = match j.preset.as_deref() {
        Some("bursty") => {
            if j.arrivals.is_some() || j.services.is_some() {
                return Err(bad("preset: \"bursty\" fixes arrivals and services; remove them".into()));
            }
            let services = vec![PhDist::exponential(0.5), PhDist::exponential(2.0)];
            (presets::two_type_mmap(1.0, [100.0, 500.0], [0.1, 0.3]), services, Some(j.rho.unwrap_or(1.0)))
        }
        Some(other) => return Err(bad(format!("preset: unknown LCFS preset \"{other}\" (known: bursty)"))),
        None => {
            let arrivals = j.arrivals.as_ref().ok_or_else(|| bad("arrivals: required without a preset".into()))?;
            let services = j.services.as_ref().ok_or_else(|| bad("services: required without a preset".into()))?;
            let services =
                services.iter().enumerate().map(|(l, p)| ph(&format!("services[{l}]"), p)).collect::<Result<Vec<_>, _>>()?;
            (mmap("arrivals", arrivals)?, services, j.rho)
        }
    };
    if arrivals.types() != services.len() {
        return Err(bad(format!("services: {} given for {} arrival types", services.len(), arrivals.types())));
    }
    if thresholds.len() != services.len() {
        return Err(bad(format!("thresholds: {} given for {} job types", thresholds.len(), services.len())));
    }
    if let Some(r) = j.n2_ratio {
        if thresholds.len() < 2 || !(r > 0.0) {
            return Err(bad("n2_ratio: needs two job types and a positive ratio".into()));
        }
    }
    Ok(LcfsInput { arrivals, services, thresholds, rho, n2_ratio: j.n2_ratio })
}

fn cascade(j: CascadeJson) -> Result<CascadeInput, Failure> {
    let source = match j.preset.as_deref() {
        Some("ipp") => {
            if j.arrivals.is_some() || j.levels.is_some() || j.gamma.is_some() {
                return Err(bad("preset: \"ipp\" fixes arrivals, levels and gamma; remove them".into()));
            }
            let levels = j.num_levels.ok_or_else(|| bad("num_levels: required by the ipp preset".into()))?;
            CascadeSource::Ipp { levels, k: j.erlang_k.unwrap_or(2) }
        }
        Some(other) => return Err(bad(format!("preset: unknown cascade preset \"{other}\" (known: ipp)"))),
        None => {
            if j.num_levels.is_some() || j.erlang_k.is_some() {
                return Err(bad("num_levels: only used with the ipp preset".into()));
            }
            let arrivals = mmap("arrivals", j.arrivals.as_ref().ok_or_else(|| bad("arrivals: required without a preset".into()))?)?;
            let levels = j.levels.as_ref().ok_or_else(|| bad("levels: required without a preset".into()))?;
            let levels = levels.iter().enumerate().map(|(c, p)| ph(&format!("levels[{c}]"), p)).collect::<Result<Vec<_>, _>>()?;
            let gamma = j.gamma.clone().unwrap_or_default();
            CascadeSource::Explicit { arrivals, levels, gamma }
        }
    };
    let input = CascadeInput { source, capacity: j.capacity, rho: j.rho };
    input.spec().and_then(|s| s.validate()).map_err(|e| bad(format!("cascade: {e}")))?;
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_accept_inf() {
        let m = parse(r#"{"kind":"lcfs","preset":"bursty","thresholds":["inf",5]}"#).unwrap();
        match m {
            Model::Lcfs(l) => assert_eq!(l.thresholds, vec![None, Some(5)]),
            other => panic!("{other:?}"),
        }
        assert!(parse(r#"{"kind":"lcfs","preset":"bursty","thresholds":["infinite",5]}"#).is_err());
    }

    #[test]
    fn ragged_rows_name_the_field() {
        let err = parse(r#"{"kind":"classic","Tpp":[[-2]],"Tpm":[[2, 0]],"Tmp":[[1]],"Tmm":[[-1]],"T0mm":[[-1]],"T0mp":[[1]]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("Tpm"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse(r#"{"kind":"cascade","preset":"ipp","num_levels":2,"capacity":3,"bogus":1}"#).is_err());
        assert!(parse(r#"{"kind":"nope"}"#).is_err());
    }

    #[test]
    fn colored_cross_blocks_are_checked() {
        let text = r#"{"kind":"colored","T0mm":[[-1]],
            "colors":[{"Tpp":[[-2]],"Tpm":[[1]],"Tmp":[[0]],"Tmm":[[-1]],"T0mp":[[1]]},
                      {"Tpp":[[-2]],"Tpm":[[2]],"Tmp":[[0]],"Tmm":[[-1]],"T0mp":[[0]]}],
            "Tpp2":[{"from":1,"to":2,"block":[[1]]}],
            "Tmp2":[{"from":2,"to":1,"block":[[1]]}]}"#;
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("Tmp2[0]"), "{err}");
    }
}
