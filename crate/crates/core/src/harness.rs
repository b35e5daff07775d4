//! Factorial Monte Carlo study runner.
//!
//! Seeds are derived from the master seed and the cell coordinates, so the
//! data of a replication do not depend on which methods run, on the
//! misspecification level, or on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::datagen::{build_q, detect_perfect_patterns, generate, misspecify_q, Discrimination, GenConfig, MISSPEC_VARIANTS};
use crate::em::{classify_map, fit_em, EmSettings};
use crate::error::{domain, Error, Result};
use crate::io::save_json;
use crate::mcmc::{fit_mcmc, McmcSettings, PriorSpec};
use crate::metrics::{bias_rmse, eacr, pacr, slip_guess_from_fit, ReplicationOutcome, Which};
use crate::models::ModelKind;
use crate::np::{classify_np, NpSettings, Rule};
use crate::qmatrix::QMatrix;
use crate::rng::{derive_seed, role, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Marginal maximum likelihood via EM.
    Ml,
    /// MCMC posterior summaries.
    Bayes,
    /// Nonparametric Hamming classification.
    Np,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ml, Method::Bayes, Method::Np];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ml => "ml",
            Self::Bayes => "bayes",
            Self::Np => "np",
        }
    }

    fn code(self) -> u64 {
        match self {
            Self::Ml => 1,
            Self::Bayes => 2,
            Self::Np => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" | "em" => Ok(Self::Ml),
            "bayes" | "mcmc" => Ok(Self::Bayes),
            "np" => Ok(Self::Np),
            _ => Err(Error::Parse(format!("unknown method {s:?}"))),
        }
    }
}

/// Factor levels and estimator settings of a study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyDesign {
    pub models: Vec<ModelKind>,
    pub methods: Vec<Method>,
    pub n: Vec<usize>,
    pub j: Vec<usize>,
    pub k: Vec<usize>,
    pub discrimination: Vec<Discrimination>,
    pub qmis: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    pub em: EmSettings,
    pub mcmc: McmcSettings,
    pub prior: PriorSpec,
    /// Write one line per replication and method as well.
    pub detail: bool,
}

impl Default for StudyDesign {
    fn default() -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            n: vec![20, 40, 160],
            j: vec![20, 40],
            k: vec![4, 5],
            discrimination: vec![Discrimination::High, Discrimination::Low],
            qmis: vec![0.0, 0.1, 0.2],
            replications: 100,
            master_seed: 20_240_101,
            em: EmSettings::default(),
            mcmc: McmcSettings::default(),
            prior: PriorSpec::default(),
            detail: false,
        }
    }
}

/// Misspecification rate in thousandths, used as a seed and map key.
fn permille(rate: f64) -> u64 {
    (rate * 1000.0).round() as u64
}

impl StudyDesign {
    /// Parse a TOML study file. Every problem is reported, one per line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut d = Self::default();
        let mut errs = Vec::new();
        for (key, value) in &table {
            match key.as_str() {
                "models" => d.models = parse_list(key, value, &mut errs, |s| s.parse::<ModelKind>().ok()),
                "methods" => d.methods = parse_list(key, value, &mut errs, |s| s.parse::<Method>().ok()),
                "discrimination" => {
                    d.discrimination = parse_list(key, value, &mut errs, |s| s.parse::<Discrimination>().ok())
                }
                "n" => d.n = int_list(key, value, &mut errs, 1),
                "j" => d.j = int_list(key, value, &mut errs, 1),
                "k" => d.k = int_list(key, value, &mut errs, 1),
                "qmis" => {
                    d.qmis = match value.as_array() {
                        Some(a) => a
                            .iter()
                            .filter_map(|v| match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                                Some(x) if (0.0..0.5).contains(&x) => Some(x),
                                _ => {
                                    errs.push(format!("qmis: {v} is not a rate in [0, 0.5)"));
                                    None
                                }
                            })
                            .collect(),
                        None => {
                            errs.push("qmis: expected an array of rates".into());
                            vec![]
                        }
                    }
                }
                "replications" => d.replications = int_value(key, value, &mut errs, 1).unwrap_or(d.replications),
                "master_seed" => match value.as_integer() {
                    Some(s) if s >= 0 => d.master_seed = s as u64,
                    _ => errs.push("master_seed: expected a non-negative integer".into()),
                },
                "detail" => match value.as_bool() {
                    Some(b) => d.detail = b,
                    None => errs.push("detail: expected true or false".into()),
                },
                "em" => section(key, value, &mut errs, |k, v, errs| match k {
                    "tol" => d.em.tol = float_value("em.tol", v, errs).unwrap_or(d.em.tol),
                    "max_iter" => d.em.max_iter = int_value("em.max_iter", v, errs, 1).unwrap_or(d.em.max_iter),
                    "floor" => {
                        if let Some(f) = float_value("em.floor", v, errs) {
                            d.em.floor = f;
                            d.em.ceiling = 1.0 - f;
                        }
                    }
                    "newton_max_iter" => {
                        d.em.newton_max_iter = int_value("em.newton_max_iter", v, errs, 1).unwrap_or(d.em.newton_max_iter)
                    }
                    other => errs.push(format!("em: unknown key {other:?}")),
                }),
                "mcmc" => section(key, value, &mut errs, |k, v, errs| match k {
                    "chains" => d.mcmc.chains = int_value("mcmc.chains", v, errs, 1).unwrap_or(d.mcmc.chains),
                    "iterations" => d.mcmc.iterations = int_value("mcmc.iterations", v, errs, 1).unwrap_or(d.mcmc.iterations),
                    "burn_in" => d.mcmc.burn_in = int_value("mcmc.burn_in", v, errs, 0).unwrap_or(d.mcmc.burn_in),
                    "thin" => d.mcmc.thin = int_value("mcmc.thin", v, errs, 1).unwrap_or(d.mcmc.thin),
                    "map" => match v.as_str() {
                        Some("joint") => d.mcmc.map = crate::mcmc::MapKind::Joint,
                        Some("marginal") => d.mcmc.map = crate::mcmc::MapKind::Marginal,
                        _ => errs.push("mcmc.map: expected \"joint\" or \"marginal\"".into()),
                    },
                    other => errs.push(format!("mcmc: unknown key {other:?}")),
                }),
                "prior" => section(key, value, &mut errs, |k, v, errs| match k {
                    "normal_variance" => {
                        d.prior.normal_variance = float_value("prior.normal_variance", v, errs).unwrap_or(d.prior.normal_variance)
                    }
                    other => errs.push(format!("prior: unknown key {other:?}")),
                }),
                other => errs.push(format!("unknown key {other:?}")),
            }
        }
        errs.extend(d.problems());
        if errs.is_empty() {
            Ok(d)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, empty) in [
            ("models", self.models.is_empty()),
            ("methods", self.methods.is_empty()),
            ("n", self.n.is_empty()),
            ("j", self.j.is_empty()),
            ("k", self.k.is_empty()),
            ("discrimination", self.discrimination.is_empty()),
            ("qmis", self.qmis.is_empty()),
        ] {
            if empty {
                errs.push(format!("{name}: no levels selected"));
            }
        }
        if self.replications == 0 {
            errs.push("replications: must be at least 1".into());
        }
        for &k in &self.k {
            if !matches!(k, 4 | 5) {
                errs.push(format!("k: {k} unsupported (4 or 5)"));
            }
        }
        for &j in &self.j {
            if !matches!(j, 20 | 40) {
                errs.push(format!("j: {j} unsupported (20 or 40)"));
            }
        }
        if !(self.em.floor > 0.0 && self.em.floor < 0.5) {
            errs.push(format!("em.floor: {} outside (0, 0.5)", self.em.floor));
        }
        if !(self.em.tol > 0.0) {
            errs.push("em.tol: must be positive".into());
        }
        if let Err(e) = self.mcmc.check() {
            errs.push(format!("mcmc: {e}"));
        }
        if !(self.prior.normal_variance > 0.0) {
            errs.push("prior.normal_variance: must be positive".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.problems();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn parse_list<T: PartialEq>(key: &str, value: &toml::Value, errs: &mut Vec<String>, f: impl Fn(&str) -> Option<T>) -> Vec<T> {
    let Some(items) = value.as_array() else {
        errs.push(format!("{key}: expected an array of strings"));
        return vec![];
    };
    let mut out = Vec::new();
    for v in items {
        match v.as_str().and_then(&f) {
            Some(x) if !out.contains(&x) => out.push(x),
            Some(_) => errs.push(format!("{key}: duplicate level {v}")),
            None => errs.push(format!("{key}: unknown level {v}")),
        }
    }
    out
}

fn int_list(key: &str, value: &toml::Value, errs: &mut Vec<String>, min: i64) -> Vec<usize> {
    let Some(items) = value.as_array() else {
        errs.push(format!("{key}: expected an array of integers"));
        return vec![];
    };
    let mut out = Vec::new();
    for v in items {
        match v.as_integer() {
            Some(i) if i >= min && !out.contains(&(i as usize)) => out.push(i as usize),
            Some(i) if i >= min => errs.push(format!("{key}: duplicate level {i}")),
            _ => errs.push(format!("{key}: {v} is not an integer >= {min}")),
        }
    }
    out
}

fn int_value(key: &str, value: &toml::Value, errs: &mut Vec<String>, min: i64) -> Option<usize> {
    match value.as_integer() {
        Some(i) if i >= min => Some(i as usize),
        _ => {
            errs.push(format!("{key}: {value} is not an integer >= {min}"));
            None
        }
    }
}

fn float_value(key: &str, value: &toml::Value, errs: &mut Vec<String>) -> Option<f64> {
    match value.as_float().or_else(|| value.as_integer().map(|i| i as f64)) {
        Some(x) if x.is_finite() => Some(x),
        _ => {
            errs.push(format!("{key}: {value} is not a number"));
            None
        }
    }
}

fn section(key: &str, value: &toml::Value, errs: &mut Vec<String>, mut f: impl FnMut(&str, &toml::Value, &mut Vec<String>)) {
    match value.as_table() {
        Some(t) => {
            for (k, v) in t {
                f(k, v, errs);
            }
        }
        None => errs.push(format!("{key}: expected a table")),
    }
}

/// One combination of factor levels for one model, with the methods that
/// apply to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub model: ModelKind,
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub discrimination: Discrimination,
    pub qmis: f64,
    pub methods: Vec<Method>,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        write!(
            f,
            "{} N={} J={} K={} disc={} qmis={:.2} [{}]",
            self.model,
            self.n,
            self.j,
            self.k,
            self.discrimination,
            self.qmis,
            methods.join(",")
        )
    }
}

/// Cartesian product of the factor levels. NP is dropped for LCDM with a
/// warning; a cell left with no methods is dropped.
pub fn expand_design(d: &StudyDesign) -> Result<(Vec<Cell>, Vec<String>)> {
    d.validate()?;
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for &model in &d.models {
        let methods: Vec<Method> = d
            .methods
            .iter()
            .copied()
            .filter(|&m| !(m == Method::Np && model == ModelKind::Lcdm))
            .collect();
        if methods.len() < d.methods.len() {
            warnings.push(format!("nonparametric classification skipped for {model}"));
        }
        if methods.is_empty() {
            continue;
        }
        for &n in &d.n {
            for &j in &d.j {
                for &k in &d.k {
                    for &discrimination in &d.discrimination {
                        for &qmis in &d.qmis {
                            cells.push(Cell { model, n, j, k, discrimination, qmis, methods: methods.clone() });
                        }
                    }
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Config(vec!["design selects no cells".into()]));
    }
    Ok((cells, warnings))
}

/// The true Q-matrix shared by every cell with this K and J.
pub fn design_q(master_seed: u64, k: usize, j: usize) -> Result<QMatrix> {
    build_q(k, j, &mut stream(master_seed, &[role::QMATRIX, k as u64, j as u64]))
}

/// Misspecified variants of the true Q for one rate.
pub fn design_variants(master_seed: u64, q: &QMatrix, rate: f64) -> Result<Vec<QMatrix>> {
    let path = [role::MISSPEC, q.n_attributes() as u64, q.n_items() as u64, permille(rate)];
    misspecify_q(q, rate, &mut stream(master_seed, &path))
}

/// Seed of replication `m` (1-based). It ignores the misspecification
/// level and the method, so those comparisons share datasets.
pub fn replication_seed(master_seed: u64, cell: &Cell, m: usize) -> u64 {
    derive_seed(
        master_seed,
        &[cell.model.code(), cell.n as u64, cell.j as u64, cell.k as u64, cell.discrimination.code(), m as u64],
    )
}

/// Q-matrices needed by a set of cells.
#[derive(Debug, Clone, Default)]
pub struct QBank {
    truth: BTreeMap<(usize, usize), QMatrix>,
    variants: BTreeMap<(usize, usize, u64), Vec<QMatrix>>,
}

impl QBank {
    pub fn build(master_seed: u64, cells: &[Cell]) -> Result<Self> {
        let mut bank = Self::default();
        for c in cells {
            if let std::collections::btree_map::Entry::Vacant(e) = bank.truth.entry((c.k, c.j)) {
                e.insert(design_q(master_seed, c.k, c.j)?);
            }
            let key = (c.k, c.j, permille(c.qmis));
            if c.qmis > 0.0 && !bank.variants.contains_key(&key) {
                let v = design_variants(master_seed, &bank.truth[&(c.k, c.j)], c.qmis)?;
                bank.variants.insert(key, v);
            }
        }
        Ok(bank)
    }

    pub fn truth(&self, k: usize, j: usize) -> &QMatrix {
        &self.truth[&(k, j)]
    }

    /// Q used for fitting replication `m` (1-based): variant ceil(m/10).
    pub fn fitting(&self, cell: &Cell, m: usize) -> &QMatrix {
        if cell.qmis > 0.0 {
            let v = &self.variants[&(cell.k, cell.j, permille(cell.qmis))];
            &v[((m - 1) / 10) % MISSPEC_VARIANTS]
        } else {
            self.truth(cell.k, cell.j)
        }
    }
}

/// What happened to one method on one replication.
#[derive(Debug, Clone)]
pub enum RepStatus {
    Omitted,
    Failed(String),
    Done(ReplicationOutcome),
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    /// One entry per method of the cell, in cell order.
    pub status: Vec<RepStatus>,
}

/// Generate and fit one replication with every method of the cell.
pub fn run_replication(cell: &Cell, design: &StudyDesign, bank: &QBank, m: usize) -> Result<Replication> {
    let seed = replication_seed(design.master_seed, cell, m);
    let q_true = bank.truth(cell.k, cell.j);
    let ds = generate(&GenConfig::new(cell.n, cell.model, q_true.clone(), cell.discrimination, seed))?;
    let truth = ds.truth.expect("generated data carry truth");
    if detect_perfect_patterns(&ds.responses).is_flagged() {
        return Ok(Replication { index: m, seed, status: vec![RepStatus::Omitted; cell.methods.len()] });
    }
    let q_fit = bank.fitting(cell, m);
    let status = cell
        .methods
        .iter()
        .map(|&method| {
            let fit_seed = derive_seed(seed, &[method.code(), permille(cell.qmis)]);
            let result = match method {
                Method::Ml => fit_em(&ds.responses, q_fit, cell.model, &design.em, fit_seed).and_then(|fit| {
                    let sg = slip_guess_from_fit(&fit.item_params, q_fit)?;
                    Ok((classify_map(&fit), Some(sg)))
                }),
                Method::Bayes => fit_mcmc(&ds.responses, q_fit, cell.model, &design.mcmc, &design.prior, fit_seed)
                    .map(|fit| (fit.map_profiles.clone(), Some(fit.slip_guess_eap))),
                Method::Np => Rule::for_model(cell.model)
                    .and_then(|rule| classify_np(&ds.responses, q_fit, rule, &NpSettings::default(), fit_seed))
                    .map(|fit| (fit.profiles(), None)),
            };
            match result {
                Ok((est_profiles, est_slip_guess)) => RepStatus::Done(ReplicationOutcome {
                    est_profiles,
                    true_profiles: truth.profiles.clone(),
                    est_slip_guess,
                    true_slip_guess: truth.slip_guess.clone(),
                    omitted: false,
                }),
                Err(e) => RepStatus::Failed(e.to_string()),
            }
        })
        .collect();
    Ok(Replication { index: m, seed, status })
}

/// Aggregated measures of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub model: ModelKind,
    pub method: Method,
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub discrimination: Discrimination,
    pub qmis_rate: f64,
    pub eacr: Option<f64>,
    pub pacr: Option<f64>,
    pub bias_slip: Option<f64>,
    pub rmse_slip: Option<f64>,
    pub bias_guess: Option<f64>,
    pub rmse_guess: Option<f64>,
    pub n_replications_used: usize,
    pub n_omitted: usize,
    pub n_failed: usize,
}

pub const CSV_HEADER: [&str; 15] = [
    "model",
    "method",
    "N",
    "J",
    "K",
    "discrimination",
    "qmis_rate",
    "eacr",
    "pacr",
    "bias_slip",
    "rmse_slip",
    "bias_guess",
    "rmse_guess",
    "n_replications_used",
    "n_omitted",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl CellResult {
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.model.name().to_string(),
            self.method.name().to_string(),
            self.n.to_string(),
            self.j.to_string(),
            self.k.to_string(),
            self.discrimination.name().to_string(),
            format!("{:.2}", self.qmis_rate),
            fmt_opt(self.eacr),
            fmt_opt(self.pacr),
            fmt_opt(self.bias_slip),
            fmt_opt(self.rmse_slip),
            fmt_opt(self.bias_guess),
            fmt_opt(self.rmse_guess),
            self.n_replications_used.to_string(),
            self.n_omitted.to_string(),
        ]
    }
}

/// Aggregate per-method outcomes of a cell.
pub fn aggregate(cell: &Cell, reps: &[Replication]) -> Result<Vec<CellResult>> {
    let n_omitted = reps.iter().filter(|r| matches!(r.status.first(), Some(RepStatus::Omitted))).count();
    cell.methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let outcomes: Vec<ReplicationOutcome> = reps
                .iter()
                .filter_map(|r| match &r.status[mi] {
                    RepStatus::Done(o) => Some(o.clone()),
                    _ => None,
                })
                .collect();
            let n_failed = reps.iter().filter(|r| matches!(r.status[mi], RepStatus::Failed(_))).count();
            let mut res = CellResult {
                model: cell.model,
                method,
                n: cell.n,
                j: cell.j,
                k: cell.k,
                discrimination: cell.discrimination,
                qmis_rate: cell.qmis,
                eacr: None,
                pacr: None,
                bias_slip: None,
                rmse_slip: None,
                bias_guess: None,
                rmse_guess: None,
                n_replications_used: outcomes.len(),
                n_omitted,
                n_failed,
            };
            if !outcomes.is_empty() {
                res.eacr = Some(eacr(&outcomes)?.mean);
                res.pacr = Some(pacr(&outcomes)?);
                if let Some(b) = bias_rmse(&outcomes, Which::Slip)? {
                    res.bias_slip = Some(b.bias);
                    res.rmse_slip = Some(b.rmse);
                }
                if let Some(b) = bias_rmse(&outcomes, Which::Guess)? {
                    res.bias_guess = Some(b.bias);
                    res.rmse_guess = Some(b.rmse);
                }
            }
            Ok(res)
        })
        .collect()
}

/// All replications of one cell, in order. Replications run in parallel
/// on the current rayon pool.
pub fn run_cell_replications(cell: &Cell, design: &StudyDesign, bank: &QBank) -> Result<Vec<Replication>> {
    (1..=design.replications)
        .into_par_iter()
        .map(|m| run_replication(cell, design, bank, m))
        .collect()
}

/// Run one cell end to end.
pub fn run_cell(cell: &Cell, design: &StudyDesign) -> Result<Vec<CellResult>> {
    design.validate()?;
    let bank = QBank::build(design.master_seed, std::slice::from_ref(cell))?;
    let reps = run_cell_replications(cell, design, &bank)?;
    aggregate(cell, &reps)
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub results: Vec<CellResult>,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
    pub warnings: Vec<String>,
}

struct CellDone {
    index: usize,
    results: Vec<CellResult>,
    reps: Vec<Replication>,
    seconds: f64,
}

/// Run every cell of the design and write `results.csv`, `manifest.json`
/// and `timings.csv` into `out_dir`.
///
/// `results.csv` and `manifest.json` depend only on the design; wall times
/// are kept apart in `timings.csv`.
pub fn run_study(design: &StudyDesign, parallelism: usize, out_dir: impl AsRef<Path>) -> Result<StudySummary> {
    let out_dir = out_dir.as_ref();
    let (cells, warnings) = expand_design(design)?;
    let bank = QBank::build(design.master_seed, &cells)?;
    fs::create_dir_all(out_dir)?;
    let results_path = out_dir.join("results.csv");
    let manifest_path = out_dir.join("manifest.json");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| domain(format!("thread pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<Result<CellDone>>();
    let writer = {
        let results_path = results_path.clone();
        let timings_path = out_dir.join("timings.csv");
        let detail_path = design.detail.then(|| out_dir.join("replications.csv"));
        let total = cells.len();
        let cells = cells.clone();
        std::thread::spawn(move || -> Result<Vec<CellResult>> {
            let mut out = csv::Writer::from_writer(BufWriter::new(File::create(&results_path)?));
            out.write_record(CSV_HEADER)?;
            out.flush()?;
            let mut timings = csv::Writer::from_path(&timings_path)?;
            timings.write_record(["model", "N", "J", "K", "discrimination", "qmis_rate", "seconds"])?;
            let mut detail = match &detail_path {
                Some(p) => {
                    let mut w = csv::Writer::from_path(p)?;
                    w.write_record(["model", "method", "N", "J", "K", "discrimination", "qmis_rate", "replication", "seed", "status", "eacr", "pacr"])?;
                    Some(w)
                }
                None => None,
            };
            let mut pending: BTreeMap<usize, CellDone> = BTreeMap::new();
            let mut next = 0;
            let mut all = Vec::new();
            for msg in rx {
                let done = msg?;
                pending.insert(done.index, done);
                while let Some(done) = pending.remove(&next) {
                    let cell = &cells[next];
                    for r in &done.results {
                        out.write_record(r.csv_record())?;
                    }
                    out.flush()?;
                    timings.write_record([
                        cell.model.name().to_string(),
                        cell.n.to_string(),
                        cell.j.to_string(),
                        cell.k.to_string(),
                        cell.discrimination.name().to_string(),
                        format!("{:.2}", cell.qmis),
                        format!("{:.3}", done.seconds),
                    ])?;
                    timings.flush()?;
                    if let Some(w) = detail.as_mut() {
                        write_detail(w, cell, &done.reps)?;
                    }
                    all.extend(done.results);
                    next += 1;
                }
            }
            if next != total {
                return Err(domain(format!("only {next} of {total} cells finished")));
            }
            Ok(all)
        })
    };

    pool.install(|| {
        cells.par_iter().enumerate().for_each_with(tx, |tx, (index, cell)| {
            let start = Instant::now();
            let msg = run_cell_replications(cell, design, &bank).and_then(|reps| {
                let results = aggregate(cell, &reps)?;
                Ok(CellDone { index, results, reps, seconds: start.elapsed().as_secs_f64() })
            });
            // the writer only hangs up after an I/O error, which it reports
            let _ = tx.send(msg);
        })
    });

    let written = writer.join().map_err(|_| domain("result writer panicked"))?;
    let complete = written.is_ok();
    let failures: Vec<_> = written
        .as_ref()
        .map(|rows| {
            rows.iter()
                .filter(|r| r.n_failed > 0)
                .map(|r| {
                    json!({
                        "model": r.model, "method": r.method, "N": r.n, "J": r.j, "K": r.k,
                        "discrimination": r.discrimination, "qmis_rate": r.qmis_rate, "n_failed": r.n_failed,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    let qs: Vec<_> = bank
        .truth
        .iter()
        .map(|((k, j), q)| json!({ "K": k, "J": j, "q": q.rows() }))
        .collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "complete": complete,
        "design": design,
        "cells": cells.len(),
        "result_rows": cells.iter().map(|c| c.methods.len()).sum::<usize>(),
        "warnings": warnings,
        "true_q": qs,
        "failures": failures,
    });
    save_json(&manifest, &manifest_path)?;
    let results = written?;
    Ok(StudySummary { results, results_path, manifest_path, warnings })
}

fn write_detail<W: Write>(w: &mut csv::Writer<W>, cell: &Cell, reps: &[Replication]) -> Result<()> {
    for rep in reps {
        for (mi, method) in cell.methods.iter().enumerate() {
            let (status, e, p) = match &rep.status[mi] {
                RepStatus::Omitted => ("omitted".to_string(), "NA".into(), "NA".into()),
                RepStatus::Failed(msg) => (format!("failed: {msg}"), "NA".into(), "NA".into()),
                RepStatus::Done(o) => (
                    "ok".to_string(),
                    format!("{:.6}", eacr(std::slice::from_ref(o))?.mean),
                    format!("{:.6}", pacr(std::slice::from_ref(o))?),
                ),
            };
            w.write_record([
                cell.model.name().to_string(),
                method.name().to_string(),
                cell.n.to_string(),
                cell.j.to_string(),
                cell.k.to_string(),
                cell.discrimination.name().to_string(),
                format!("{:.2}", cell.qmis),
                rep.index.to_string(),
                rep.seed.to_string(),
                status,
                e,
                p,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
