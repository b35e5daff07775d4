//! `dcm`: simulate, fit, study and summarize diagnostic classification models.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcm_core::datagen::{detect_perfect_patterns, generate, Discrimination, GenConfig};
use dcm_core::dataset::TruthFile;
use dcm_core::em::{classify_map, fit_em, EmSettings};
use dcm_core::harness::{design_q, expand_design, run_study, Method, StudyDesign};
use dcm_core::io::{load_binary_matrix, save_binary_matrix, save_json};
use dcm_core::mcmc::{fit_mcmc, McmcSettings, PriorSpec};
use dcm_core::metrics::{eacr, pacr, ReplicationOutcome};
use dcm_core::np::{classify_np, NpSettings, Rule};
use dcm_core::{BinaryMatrix, Error, ModelKind, QMatrix};
use serde_json::{json, Value};

mod summarize;

#[derive(Parser)]
#[command(name = "dcm", version, about = "Diagnostic classification models: simulation, estimation and studies")]
struct Cli {
    /// Suppress progress output on stderr (warnings are still printed).
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset: responses.csv, truth.json and q.csv.
    Simulate(SimulateArgs),
    /// Fit a model to a response matrix.
    Fit(FitArgs),
    /// Run a simulation study from a TOML design.
    Study(StudyArgs),
    /// Marginal tables from a study's results.csv.
    Summarize(summarize::SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    j: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, value_name = "high|low")]
    disc: Discrimination,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Response matrix CSV, one row of 0/1 per respondent.
    #[arg(long)]
    data: PathBuf,
    /// Q-matrix CSV.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    model: ModelKind,
    #[arg(long, value_name = "em|mcmc|np")]
    method: Method,
    /// Fit summary JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Truth sidecar; defaults to truth.json next to the data if present.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Write retained MCMC draws to this CSV.
    #[arg(long)]
    draws: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// TOML design; the full factorial default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "study")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Print the cell list and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical { .. } | Error::InfiniteLogit { .. } | Error::EmptyCell => 4,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, cli.quiet),
        Command::Fit(a) => fit(a, cli.quiet),
        Command::Study(a) => study(a, cli.quiet),
        Command::Summarize(a) => summarize::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn simulate(a: SimulateArgs, quiet: bool) -> CliResult<()> {
    if a.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let q = design_q(a.seed, a.k, a.j).map_err(|e| Failure::usage(format!("unsupported design: {e}")))?;
    let ds = generate(&GenConfig::new(a.n, a.model, q.clone(), a.disc, a.seed))?;
    let truth = ds.truth.as_ref().expect("simulated data carry truth");
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    save_binary_matrix(&ds.responses, a.out.join("responses.csv"))?;
    q.save(a.out.join("q.csv"))?;
    save_json(&TruthFile::from_truth(truth, &q), a.out.join("truth.json"))?;
    let pp = detect_perfect_patterns(&ds.responses);
    if pp.is_flagged() {
        eprintln!(
            "warning: perfect response patterns (all correct: {:?}, all incorrect: {:?})",
            pp.all_correct, pp.all_incorrect
        );
    }
    if !quiet {
        eprintln!("wrote responses.csv, q.csv, truth.json to {}", a.out.display());
    }
    Ok(())
}

fn truth_path(a: &FitArgs) -> Option<PathBuf> {
    if let Some(p) = &a.truth {
        return Some(p.clone());
    }
    let sidecar = a.data.parent().unwrap_or(Path::new(".")).join("truth.json");
    sidecar.exists().then_some(sidecar)
}

fn fit(a: FitArgs, quiet: bool) -> CliResult<()> {
    for p in [&a.data, &a.q] {
        if !p.is_file() {
            return Err(Failure::usage(format!("{} does not exist", p.display())));
        }
    }
    let rule = match a.method {
        Method::Np => Some(Rule::for_model(a.model).map_err(|e| Failure::usage(e.to_string()))?),
        _ => None,
    };
    let data = load_binary_matrix(&a.data)?;
    let q = QMatrix::load(&a.q)?;
    if data.cols() != q.n_items() {
        return Err(Error::Dimension { expected: q.n_items(), got: data.cols() }.into());
    }
    let truth = match truth_path(&a) {
        Some(p) => Some(TruthFile::load(&p)?.into_truth()?),
        None => None,
    };

    let pp = detect_perfect_patterns(&data);
    let mut warnings = Vec::new();
    if pp.is_flagged() {
        warnings.push(format!(
            "perfect response patterns (all correct: {:?}, all incorrect: {:?}); estimates will sit on the boundary",
            pp.all_correct, pp.all_incorrect
        ));
    }

    let (mut summary, profiles) = match a.method {
        Method::Ml => {
            let mut settings = EmSettings::default();
            if let Some(t) = a.tol {
                settings.tol = t;
            }
            if let Some(m) = a.max_iter {
                settings.max_iter = m;
            }
            let fit = fit_em(&data, &q, a.model, &settings, a.seed)?;
            if !fit.converged {
                warnings.push(format!("EM stopped at max_iter={} before converging", settings.max_iter));
            }
            if !fit.boundary_items.is_empty() {
                warnings.push(format!("boundary estimates for items {:?}", fit.boundary_items));
            }
            if !fit.newton_unconverged.is_empty() {
                warnings.push(format!("inner Newton hit its cap for items {:?}", fit.newton_unconverged));
            }
            let profiles = classify_map(&fit);
            (fit.to_json(&q), profiles)
        }
        Method::Bayes => {
            let mut settings = McmcSettings::default();
            if let Some(c) = a.chains {
                settings.chains = c;
            }
            if let Some(i) = a.iters {
                settings.iterations = i;
            }
            if let Some(b) = a.burnin {
                settings.burn_in = b;
            }
            if let Some(t) = a.thin {
                settings.thin = t;
            }
            settings.keep_draws = a.draws.is_some();
            settings.check().map_err(|e| Failure::usage(e.to_string()))?;
            let fit = fit_mcmc(&data, &q, a.model, &settings, &PriorSpec::default(), a.seed)?;
            warnings.extend(fit.warnings.iter().cloned());
            if let Some(path) = &a.draws {
                let file = fs::File::create(path).map_err(Error::from)?;
                fit.write_draws_csv(std::io::BufWriter::new(file))?;
            }
            (fit.to_json(&q), fit.map_profiles.clone())
        }
        Method::Np => {
            let fit = classify_np(&data, &q, rule.expect("checked above"), &NpSettings::default(), a.seed)?;
            let profiles = fit.profiles();
            let summary = json!({
                "rule": format!("{:?}", fit.rule).to_lowercase(),
                "distances": fit.distances,
                "tie_counts": fit.tie_counts,
                "n_tied": fit.n_tied(),
            });
            (summary, profiles)
        }
    };

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("method".into(), json!(a.method));
    obj.insert("profiles".into(), json!(profiles.to_rows()));
    obj.insert("warnings".into(), json!(warnings));

    if let Some(t) = &truth {
        if t.profiles.rows() != profiles.rows() || t.profiles.cols() != profiles.cols() {
            return Err(Error::Dimension { expected: profiles.rows(), got: t.profiles.rows() }.into());
        }
        let (e, p) = accuracy(&profiles, &t.profiles)?;
        println!("EACR {e:.4}");
        println!("PACR {p:.4}");
        obj.insert("eacr".into(), json!(e));
        obj.insert("pacr".into(), json!(p));
    }
    save_json(&Value::Object(obj.clone()), &a.out)?;
    if !quiet {
        eprintln!("wrote {}", a.out.display());
    }
    Ok(())
}

fn accuracy(est: &BinaryMatrix, truth: &BinaryMatrix) -> dcm_core::Result<(f64, f64)> {
    let outcome = ReplicationOutcome {
        est_profiles: est.clone(),
        true_profiles: truth.clone(),
        est_slip_guess: None,
        true_slip_guess: vec![],
        omitted: false,
    };
    let one = std::slice::from_ref(&outcome);
    Ok((eacr(one)?.mean, pacr(one)?))
}

fn study(a: StudyArgs, quiet: bool) -> CliResult<()> {
    let design = match &a.config {
        Some(p) if !p.is_file() => return Err(Failure::usage(format!("{} does not exist", p.display()))),
        Some(p) => StudyDesign::load(p)?,
        None => StudyDesign::default(),
    };
    if a.parallel == 0 {
        return Err(Failure::usage("--parallel must be at least 1"));
    }
    let (cells, warnings) = expand_design(&design)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if a.dry_run {
        for c in &cells {
            println!("{c}");
        }
        let rows: usize = cells.iter().map(|c| c.methods.len()).sum();
        println!("{} cells, {rows} result rows, {} replications each", cells.len(), design.replications);
        return Ok(());
    }
    if !quiet {
        eprintln!("running {} cells on {} threads", cells.len(), a.parallel);
    }
    let summary = run_study(&design, a.parallel, &a.out)?;
    let failed: usize = summary.results.iter().map(|r| r.n_failed).sum();
    if failed > 0 {
        eprintln!("warning: {failed} estimator failures, see manifest.json");
    }
    if !quiet {
        eprintln!("wrote {} and {}", summary.results_path.display(), summary.manifest_path.display());
    }
    Ok(())
}
