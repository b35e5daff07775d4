//! Marginal tables over a study's `results.csv`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use dcm_core::Error;

use crate::{CliResult, Failure};

#[derive(Args)]
pub struct SummarizeArgs {
    /// results.csv written by `dcm study`.
    pub results: PathBuf,
    /// Factors that become table columns, comma separated (e.g. qmis or n,j).
    #[arg(long, value_delimiter = ',')]
    pub by: Vec<String>,
    /// Keep only rows with factor=level, e.g. disc=high. Repeatable.
    #[arg(long, value_delimiter = ',')]
    pub filter: Vec<String>,
    /// Measures to average.
    #[arg(long, value_delimiter = ',', default_value = "eacr,pacr")]
    pub measures: Vec<String>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

const FACTORS: [&str; 7] = ["model", "method", "N", "J", "K", "discrimination", "qmis_rate"];
const MEASURES: [&str; 6] = ["eacr", "pacr", "bias_slip", "rmse_slip", "bias_guess", "rmse_guess"];

fn factor_name(s: &str) -> Option<&'static str> {
    match s.to_ascii_lowercase().as_str() {
        "model" => Some("model"),
        "method" => Some("method"),
        "n" => Some("N"),
        "j" => Some("J"),
        "k" => Some("K"),
        "disc" | "discrimination" => Some("discrimination"),
        "qmis" | "qmis_rate" => Some("qmis_rate"),
        _ => None,
    }
}

/// Sort key that puts known levels in design order and numbers numerically.
fn level_key(factor: &str, level: &str) -> (usize, u64, String) {
    let known: &[&str] = match factor {
        "model" => &["dina", "dino", "rrum", "crum", "lcdm"],
        "method" => &["ml", "bayes", "np"],
        "discrimination" => &["high", "low"],
        _ => &[],
    };
    if let Some(i) = known.iter().position(|k| *k == level) {
        return (i, 0, String::new());
    }
    match level.parse::<f64>() {
        Ok(x) => (0, (x * 1e6).round() as u64, String::new()),
        Err(_) => (usize::MAX, 0, level.to_string()),
    }
}

type Row = BTreeMap<String, String>;

fn read_rows(path: &PathBuf) -> CliResult<Vec<Row>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let header: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(str::to_string).collect();
    for needed in FACTORS.iter().chain(MEASURES.iter()) {
        if !header.iter().any(|h| h == needed) {
            return Err(Error::Parse(format!("{}: missing column {needed}", path.display())).into());
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        rows.push(header.iter().cloned().zip(rec.iter().map(str::to_string)).collect());
    }
    Ok(rows)
}

pub fn run(a: SummarizeArgs) -> CliResult<()> {
    let by: Vec<&str> = a
        .by
        .iter()
        .map(|s| factor_name(s).ok_or_else(|| Failure::usage(format!("unknown factor {s:?}"))))
        .collect::<CliResult<_>>()?;
    let mut filters = Vec::new();
    for f in &a.filter {
        let (k, v) = f.split_once('=').ok_or_else(|| Failure::usage(format!("filter {f:?} is not factor=level")))?;
        let k = factor_name(k.trim()).ok_or_else(|| Failure::usage(format!("unknown factor {k:?}")))?;
        filters.push((k, v.trim().to_ascii_lowercase()));
    }
    let measures: Vec<String> = a
        .measures
        .iter()
        .map(|m| {
            let m = m.to_ascii_lowercase();
            if MEASURES.contains(&m.as_str()) {
                Ok(m)
            } else {
                Err(Failure::usage(format!("unknown measure {m:?}")))
            }
        })
        .collect::<CliResult<_>>()?;
    if !a.results.is_file() {
        return Err(Failure::usage(format!("{} does not exist", a.results.display())));
    }

    let rows: Vec<Row> = read_rows(&a.results)?
        .into_iter()
        .filter(|r| filters.iter().all(|(k, v)| level_matches(k, &r[*k], v)))
        .collect();
    if rows.is_empty() {
        eprintln!("warning: no rows match the filter");
    }

    let mut row_keys: Vec<(String, String)> = rows.iter().map(|r| (r["method"].clone(), r["model"].clone())).collect();
    row_keys.sort_by_key(|(me, mo)| (level_key("method", me), level_key("model", mo)));
    row_keys.dedup();
    let mut col_keys: Vec<Vec<String>> = rows.iter().map(|r| by.iter().map(|f| r[*f].clone()).collect()).collect();
    col_keys.sort_by_key(|c: &Vec<String>| c.iter().zip(&by).map(|(l, f)| level_key(f, l)).collect::<Vec<_>>());
    col_keys.dedup();

    let mut header = vec!["method".to_string(), "model".to_string()];
    for c in &col_keys {
        let prefix: Vec<String> = by.iter().zip(c).map(|(f, l)| format!("{f}={l}")).collect();
        for m in &measures {
            header.push(if prefix.is_empty() { m.clone() } else { format!("{} {m}", prefix.join(" ")) });
        }
    }

    let mut table: Vec<Vec<Option<f64>>> = Vec::new();
    for (method, model) in &row_keys {
        let mut line = Vec::new();
        for c in &col_keys {
            let group: Vec<&Row> = rows
                .iter()
                .filter(|r| &r["method"] == method && &r["model"] == model)
                .filter(|r| by.iter().zip(c).all(|(f, l)| &r[*f] == l))
                .collect();
            for m in &measures {
                let vals: Vec<f64> = group.iter().filter_map(|r| r[m].parse::<f64>().ok()).collect();
                line.push((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
            }
        }
        table.push(line);
    }

    print_aligned(&header, &row_keys, &table);
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(&header).map_err(Error::from)?;
        for ((method, model), line) in row_keys.iter().zip(&table) {
            let mut rec = vec![method.clone(), model.clone()];
            rec.extend(line.iter().map(|v| v.map_or("NA".into(), |x| format!("{x:.6}"))));
            w.write_record(&rec).map_err(Error::from)?;
        }
        w.flush().map_err(Error::from)?;
    }
    Ok(())
}

fn level_matches(factor: &str, value: &str, wanted: &str) -> bool {
    match factor {
        "N" | "J" | "K" | "qmis_rate" => match (value.parse::<f64>(), wanted.parse::<f64>()) {
            (Ok(a), Ok(b)) => (a - b).abs() < 1e-9,
            _ => false,
        },
        _ => value.eq_ignore_ascii_case(wanted),
    }
}

fn print_aligned(header: &[String], rows: &[(String, String)], table: &[Vec<Option<f64>>]) {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .zip(table)
        .map(|((method, model), line)| {
            let mut v = vec![method.clone(), model.clone()];
            v.extend(line.iter().map(|x| x.map_or("NA".into(), |x| format!("{x:.3}"))));
            v
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let line = |out: &mut dyn Write, r: &[String]| {
        let parts: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 2 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    for r in &cells {
        line(&mut out, r);
    }
}
