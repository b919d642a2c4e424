//! Aggregation of ledgers, Hölder fits and oscillation profiles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use degenpar::fmt::g17;
use degenpar::frozen;
use degenpar::ineq::{read_ledger, EstimateReport, LEDGER_HEADER};

use crate::artifacts::Artifact;
use crate::error::CliError;
use crate::experiment::violations;

const FIT_PREFIX: &str = "p,mode,grid,member,alpha";
const PROFILE_HEADER: &str = "R,omega";

/// Inputs of a report, classified by their header line.
#[derive(Debug, Default)]
pub struct ReportInputs {
    pub ledgers: Vec<(String, Vec<EstimateReport>)>,
    /// Hölder fit tables.
    pub fits: Vec<(String, String)>,
    pub profiles: Vec<(String, String)>,
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path).map_err(io)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io)?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else if path.extension().map_or(false, |e| e == "csv") {
        out.push(path.to_path_buf());
    } else if !path.exists() {
        return Err(CliError::Usage(format!("{}: no such file or directory", path.display())));
    }
    Ok(())
}

fn ledger_error(name: &str, e: degenpar::Error) -> CliError {
    match e {
        degenpar::Error::Config { line, msg } => CliError::Config { file: name.to_string(), line, msg },
        other => other.into(),
    }
}

/// Reads files and directories (recursively); CSV files with other headers are ignored.
pub fn load_inputs(paths: &[PathBuf]) -> Result<ReportInputs, CliError> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    let mut inputs = ReportInputs::default();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|source| CliError::Io { path: f.clone(), source })?;
        let name = f.display().to_string();
        let header = text.lines().next().unwrap_or("").trim();
        if header == LEDGER_HEADER {
            let rows = read_ledger(&text).map_err(|e| ledger_error(&name, e))?;
            inputs.ledgers.push((name, rows));
        } else if header.starts_with(FIT_PREFIX) {
            inputs.fits.push((name, text));
        } else if header == PROFILE_HEADER {
            inputs.profiles.push((name, text));
        }
    }
    Ok(inputs)
}

/// Per-id aggregate of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct IdSummary {
    pub id: String,
    pub rows: usize,
    pub violations: usize,
    pub worst_ratio: f64,
    /// Largest `ratio / constant` over rows with a frozen constant.
    pub worst_fraction: Option<f64>,
}

impl IdSummary {
    pub fn status(&self) -> &'static str {
        match (self.worst_fraction, self.violations) {
            (None, _) => "unchecked",
            (Some(_), 0) => "pass",
            _ => "fail",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub ids: Vec<IdSummary>,
    pub pass: bool,
    pub artifacts: Vec<Artifact>,
}

fn summarize(ledgers: &[(String, Vec<EstimateReport>)]) -> Vec<IdSummary> {
    let mut by_id: BTreeMap<String, IdSummary> = BTreeMap::new();
    for r in ledgers.iter().flat_map(|(_, rows)| rows) {
        let s = by_id.entry(r.id.clone()).or_insert_with(|| IdSummary { id: r.id.clone(), rows: 0, violations: 0, worst_ratio: 0.0, worst_fraction: None });
        s.rows += 1;
        if !r.zero_over_zero {
            s.worst_ratio = s.worst_ratio.max(r.ratio);
        }
        if let Some(c) = frozen::ledger_constant(&r.id, r.n, r.p) {
            let f = if r.zero_over_zero { 0.0 } else { r.ratio / c };
            s.worst_fraction = Some(s.worst_fraction.map_or(f, |w: f64| w.max(f)));
        }
        s.violations += violations(std::slice::from_ref(r)).len();
    }
    by_id.into_values().collect()
}

/// Alpha rows keyed by `(p, mode)`: count, mean, min and max.
fn alpha_table(fits: &[(String, String)]) -> Result<String, CliError> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (name, text) in fits {
        for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = |msg: &str| CliError::Config { file: name.clone(), line: i + 1, msg: msg.to_string() };
            if cols.len() < 5 {
                return Err(bad("expected at least 5 columns"));
            }
            let alpha: f64 = cols[4].parse().map_err(|_| bad("bad alpha"))?;
            groups.entry((cols[0].to_string(), cols[1].to_string())).or_default().push(alpha);
        }
    }
    let mut s = String::from("p,mode,fits,alpha_mean,alpha_min,alpha_max\n");
    for ((p, mode), a) in groups {
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let min = a.iter().copied().fold(f64::INFINITY, f64::min);
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.push_str(&format!("{p},{mode},{},{},{},{}\n", a.len(), g17(mean), g17(min), g17(max)));
    }
    Ok(s)
}

/// Long-format `profile,R,omega` for plotting.
fn profile_table(profiles: &[(String, String)]) -> String {
    let mut s = String::from("profile,R,omega\n");
    for (name, text) in profiles {
        let label = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            s.push_str(&format!("{label},{line}\n"));
        }
    }
    s
}

pub fn emit_report(inputs: &ReportInputs) -> Result<Report, CliError> {
    if inputs.ledgers.is_empty() {
        return Err(CliError::Usage("report needs at least one ledger".into()));
    }
    let ids = summarize(&inputs.ledgers);
    let pass = ids.iter().all(|s| s.violations == 0);

    let mut text = format!("status: {}\n", if pass { "pass" } else { "fail" });
    text.push_str(&format!("ledgers: {}\n", inputs.ledgers.len()));
    let mut csv = String::from("id,rows,violations,worst_ratio,worst_fraction,status\n");
    for s in &ids {
        let c = s.worst_fraction.map(g17).unwrap_or_default();
        text.push_str(&format!(
            "{:<20} {:>6} rows  {:>4} violations  worst ratio {}  worst ratio/constant {}  {}\n",
            s.id,
            s.rows,
            s.violations,
            g17(s.worst_ratio),
            if c.is_empty() { "-" } else { &c },
            s.status()
        ));
        csv.push_str(&format!("{},{},{},{},{c},{}\n", s.id, s.rows, s.violations, g17(s.worst_ratio), s.status()));
    }
    let failing: Vec<&str> = ids.iter().filter(|s| s.violations > 0).map(|s| s.id.as_str()).collect();
    if !failing.is_empty() {
        text.push_str(&format!("failing: {}\n", failing.join(", ")));
    }

    let mut artifacts = vec![Artifact::new("report.txt", text), Artifact::new("report.csv", csv)];
    if !inputs.fits.is_empty() {
        artifacts.push(Artifact::new("alpha_table.csv", alpha_table(&inputs.fits)?));
    }
    if !inputs.profiles.is_empty() {
        artifacts.push(Artifact::new("omega_profiles.csv", profile_table(&inputs.profiles)));
    }
    Ok(Report { ids, pass, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(rows: &[EstimateReport]) -> Vec<(String, Vec<EstimateReport>)> {
        vec![("l.csv".into(), rows.to_vec())]
    }

    #[test]
    fn pass_and_fail() {
        let ok = EstimateReport::new("caccioppoli", 1, 1.0, "64", 1e-3, vec![1.0]);
        let bad = EstimateReport::new("energy", 1, 1.0, "64", 10.0, vec![1.0]);
        let r = emit_report(&ReportInputs { ledgers: ledger(&[ok.clone()]), ..Default::default() }).unwrap();
        assert!(r.pass);
        let r = emit_report(&ReportInputs { ledgers: ledger(&[ok, bad]), ..Default::default() }).unwrap();
        assert!(!r.pass);
        assert_eq!(r.ids.iter().filter(|s| s.status() == "fail").map(|s| s.id.as_str()).collect::<Vec<_>>(), ["energy"]);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(emit_report(&ReportInputs::default()).is_err());
    }
}
