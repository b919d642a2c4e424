//! `key = value` configuration with `[section]` headers.
//!
//! ```text
//! kind = estimates
//! seed = 7
//!
//! [problem]
//! n = 1
//! p = 1
//! kind = random
//! count = 20
//!
//! [grid]
//! cells = 128, 256
//! ```

use std::path::{Path, PathBuf};

use degenpar::field::Field;
use degenpar::grid::CylinderMode;
use degenpar::ineq::INEQUALITY_IDS;
use degenpar::problem::{BoundaryMode, ExactSolution, SourceKind, Structure};

use crate::error::CliError;

const TOP_KEYS: &[&str] = &["kind", "seed", "output", "problem_file"];
const PROBLEM_KEYS: &[&str] = &[
    "n", "p", "mode", "kind", "count", "structure", "sources", "lambda", "big_lambda", "q", "time_dependent", "exact", "a", "a_ll", "a_ln",
    "a_nn", "d_l", "d_n", "b_l", "b_n", "c", "c0", "f", "f0", "f_l", "f_n", "boundary", "initial",
];
const SECTIONS: &[(&str, &[&str])] = &[
    ("problem", PROBLEM_KEYS),
    ("grid", &["cells"]),
    ("solver", &["dt", "tol", "continuation", "eps", "eps0", "eps_ratio", "basis"]),
    ("ineq", &["ids", "fields", "search", "ascent_steps"]),
    ("estimates", &["ids", "radii", "gamma"]),
    ("holder", &["mode", "r_max", "levels", "drop", "time"]),
    ("sweep", &["kind", "p"]),
];

pub const ESTIMATE_IDS: [&str; 5] = ["energy", "caccioppoli", "local_boundedness", "max_principle", "weak_residual"];

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    file: String,
}

fn config_error(e: &Entry, msg: impl Into<String>) -> CliError {
    CliError::Config { file: e.file.clone(), line: e.line, msg: msg.into() }
}

fn parse_entries(text: &str, file: &str) -> Result<Vec<Entry>, CliError> {
    let mut section = String::new();
    let mut out: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let err = |msg: String| CliError::Config { file: file.to_string(), line, msg };
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err(format!("malformed section header `{s}`")))?.trim();
            if !SECTIONS.iter().any(|(n, _)| *n == name) {
                return Err(err(format!("unknown section `[{name}]`")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{s}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let known = if section.is_empty() {
            TOP_KEYS.contains(&key)
        } else {
            SECTIONS.iter().any(|(n, keys)| *n == section && keys.contains(&key))
        };
        if !known {
            let qualified = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            return Err(err(format!("unknown key `{qualified}`")));
        }
        if out.iter().any(|e| e.section == section && e.key == key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        out.push(Entry { section: section.clone(), key: key.to_string(), value: value.to_string(), line, file: file.to_string() });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Solve,
    Ineq,
    Estimates,
    Holder,
    Sweep,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solve" => Kind::Solve,
            "ineq" => Kind::Ineq,
            "estimates" => Kind::Estimates,
            "holder" => Kind::Holder,
            "sweep" => Kind::Sweep,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Solve => "solve",
            Kind::Ineq => "ineq",
            Kind::Estimates => "estimates",
            Kind::Holder => "holder",
            Kind::Sweep => "sweep",
        }
    }
}

/// Where the problem (or ensemble) comes from.
#[derive(Clone, Debug)]
pub enum ProblemSource {
    Random {
        count: usize,
        structure: Structure,
        sources: SourceKind,
        lambda: f64,
        big_lambda: f64,
        q: Option<f64>,
        time_dependent: bool,
    },
    Manufactured {
        exact: String,
    },
    /// Closed-form coefficient and data fields.
    Explicit {
        fields: Vec<(String, Field)>,
        lambda: f64,
        big_lambda: f64,
        q: Option<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: f64,
    pub mode: BoundaryMode,
    pub source: ProblemSource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    H,
    HSquared,
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct SolverSpec {
    pub dt: DtRule,
    pub tol: f64,
    pub continuation: bool,
    /// Fixed regularization when continuation is off.
    pub eps: f64,
    pub eps0: f64,
    pub eps_ratio: f64,
    pub basis: usize,
}

#[derive(Clone, Debug)]
pub struct IneqSpec {
    pub ids: Vec<String>,
    /// Random fields evaluated per id and grid.
    pub fields: usize,
    /// Sup-search starts per id and grid; 0 skips the search.
    pub search: usize,
    pub ascent_steps: usize,
}

#[derive(Clone, Debug)]
pub struct EstimateSpec {
    pub ids: Vec<String>,
    pub radii: Vec<f64>,
    pub gamma: f64,
    /// Whether `ids` was given in the configuration.
    pub explicit: bool,
}

#[derive(Clone, Debug)]
pub struct HolderSpec {
    pub mode: CylinderMode,
    pub r_max: f64,
    pub levels: usize,
    pub drop: usize,
    pub time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub kind: Kind,
    pub p: Vec<f64>,
}

/// A validated experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub problem: ProblemSpec,
    /// Normal cell counts; 2D grids are `2N x N`.
    pub grids: Vec<usize>,
    pub solver: SolverSpec,
    pub ineq: IneqSpec,
    pub estimates: EstimateSpec,
    pub holder: HolderSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seed: None,
            output: None,
            problem: ProblemSpec {
                n: 1,
                p: 1.0,
                mode: BoundaryMode::Full,
                source: ProblemSource::Random {
                    count: 1,
                    structure: Structure::General,
                    sources: SourceKind::All,
                    lambda: 0.5,
                    big_lambda: 2.0,
                    q: None,
                    time_dependent: true,
                },
            },
            grids: vec![64],
            solver: SolverSpec { dt: DtRule::H, tol: 1e-10, continuation: false, eps: 0.0, eps0: 0.1, eps_ratio: 0.5, basis: 3 },
            ineq: IneqSpec { ids: INEQUALITY_IDS.iter().map(|s| s.to_string()).collect(), fields: 100, search: 0, ascent_steps: 24 },
            estimates: EstimateSpec { ids: ESTIMATE_IDS.iter().map(|s| s.to_string()).collect(), radii: vec![0.5, 0.75], gamma: 2.0, explicit: false },
            holder: HolderSpec { mode: CylinderMode::Boundary, r_max: 0.5, levels: 7, drop: 2, time: None },
            sweep: SweepSpec { kind: Kind::Estimates, p: vec![-0.5, 0.0, 0.5, 1.0, 2.0] },
        }
    }
}

fn num<T: std::str::FromStr>(e: &Entry) -> Result<T, CliError> {
    e.value.parse::<T>().map_err(|_| config_error(e, format!("bad value `{}` for `{}`", e.value, e.key)))
}

fn list<T: std::str::FromStr>(e: &Entry) -> Result<Vec<T>, CliError> {
    let items: Result<Vec<T>, _> = e.value.split(',').map(|s| s.trim().parse::<T>()).collect();
    let items = items.map_err(|_| config_error(e, format!("bad list `{}` for `{}`", e.value, e.key)))?;
    if items.is_empty() {
        return Err(config_error(e, format!("empty list for `{}`", e.key)));
    }
    Ok(items)
}

fn boolean(e: &Entry) -> Result<bool, CliError> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(config_error(e, format!("bad boolean `{v}` for `{}`", e.key))),
    }
}

fn positive(e: &Entry, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_error(e, format!("`{}` must be positive", e.key)))
    }
}

fn ids(e: &Entry, known: &[&str]) -> Result<Vec<String>, CliError> {
    let ids: Vec<String> = e.value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(config_error(e, "empty id list"));
    }
    for id in &ids {
        if !known.contains(&id.as_str()) {
            return Err(config_error(e, format!("unknown id `{id}` (known: {})", known.join(", "))));
        }
    }
    Ok(ids)
}

impl ExperimentConfig {
    /// Reads a configuration file; `problem_file` is resolved relative to it.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse_with_base(&text, &path.display().to_string(), path.parent())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::parse_with_base(text, "<config>", None)
    }

    fn parse_with_base(text: &str, file: &str, base: Option<&Path>) -> Result<Self, CliError> {
        let mut entries = parse_entries(text, file)?;
        if let Some(e) = entries.iter().find(|e| e.section.is_empty() && e.key == "problem_file").cloned() {
            let path = base.map(|b| b.join(&e.value)).unwrap_or_else(|| PathBuf::from(&e.value));
            if !path.is_file() {
                return Err(config_error(&e, format!("problem file `{}` does not exist", path.display())));
            }
            let inc = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let included = parse_entries(&inc, &path.display().to_string())?;
            if let Some(bad) = included.iter().find(|i| i.section != "problem") {
                return Err(config_error(bad, "a problem file may only contain the [problem] section"));
            }
            // keys in the main file take precedence
            let extra: Vec<Entry> = included.into_iter().filter(|i| !entries.iter().any(|m| m.section == "problem" && m.key == i.key)).collect();
            entries.extend(extra);
        }
        let mut cfg = ExperimentConfig::default();
        let get = |section: &str, key: &str| entries.iter().find(|e| e.section == section && e.key == key);

        if let Some(e) = get("", "kind") {
            cfg.kind = Some(Kind::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown experiment kind `{}`", e.value)))?);
        }
        if let Some(e) = get("", "seed") {
            cfg.seed = Some(num(e)?);
        }
        if let Some(e) = get("", "output") {
            cfg.output = Some(PathBuf::from(&e.value));
        }

        // problem
        let pr = &mut cfg.problem;
        if let Some(e) = get("problem", "n") {
            pr.n = num(e)?;
            if !(1..=2).contains(&pr.n) {
                return Err(config_error(e, "n must be 1 or 2"));
            }
        }
        if let Some(e) = get("problem", "p") {
            pr.p = num(e)?;
            if !(pr.p > -1.0) || !pr.p.is_finite() {
                return Err(config_error(e, format!("p = {} outside (-1, inf)", pr.p)));
            }
        }
        if let Some(e) = get("problem", "mode") {
            pr.mode = BoundaryMode::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown mode `{}`", e.value)))?;
        }
        let lambda = get("problem", "lambda").map(|e| num::<f64>(e).and_then(|v| positive(e, v))).transpose()?.unwrap_or(0.5);
        let big_lambda = get("problem", "big_lambda").map(|e| num::<f64>(e).and_then(|v| positive(e, v))).transpose()?.unwrap_or(2.0);
        let q = get("problem", "q").map(|e| num::<f64>(e).and_then(|v| positive(e, v))).transpose()?;
        let source_kind = get("problem", "kind").map(|e| e.value.as_str()).unwrap_or("random");
        let field_keys = &PROBLEM_KEYS[12..];
        let only = |allowed: &[&str], kind: &str| -> Result<(), CliError> {
            for e in entries.iter().filter(|e| e.section == "problem") {
                let generic = ["n", "p", "mode", "kind", "lambda", "big_lambda", "q"];
                if !generic.contains(&e.key.as_str()) && !allowed.contains(&e.key.as_str()) {
                    return Err(config_error(e, format!("key `problem.{}` does not apply to `{kind}` problems", e.key)));
                }
            }
            Ok(())
        };
        pr.source = match source_kind {
            "random" => {
                only(&["count", "structure", "sources", "time_dependent"], "random")?;
                let count = get("problem", "count").map(num::<usize>).transpose()?.unwrap_or(1);
                if count == 0 {
                    return Err(config_error(get("problem", "count").unwrap(), "count must be >= 1"));
                }
                let structure = match get("problem", "structure") {
                    Some(e) => Structure::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown structure `{}`", e.value)))?,
                    None => Structure::General,
                };
                let sources = match get("problem", "sources") {
                    Some(e) => SourceKind::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown source kind `{}`", e.value)))?,
                    None => SourceKind::All,
                };
                let time_dependent = get("problem", "time_dependent").map(boolean).transpose()?.unwrap_or(true);
                ProblemSource::Random { count, structure, sources, lambda, big_lambda, q, time_dependent }
            }
            "manufactured" => {
                only(&["exact"], "manufactured")?;
                let exact = get("problem", "exact").map(|e| e.value.clone()).unwrap_or_else(|| if pr.n == 1 { "t_sin".into() } else { "t_sin_cos".into() });
                if ExactSolution::by_name(&exact).is_none() {
                    let e = get("problem", "exact").unwrap();
                    return Err(config_error(e, format!("unknown exact solution `{exact}`")));
                }
                // boundary and initial data come from the exact solution
                if let Some(e) = get("problem", "mode").filter(|_| pr.mode == BoundaryMode::Full) {
                    return Err(config_error(e, "manufactured problems use mode = partial"));
                }
                pr.mode = BoundaryMode::Partial;
                ProblemSource::Manufactured { exact }
            }
            "explicit" => {
                only(field_keys, "explicit")?;
                let mut fields = Vec::new();
                for e in entries.iter().filter(|e| e.section == "problem" && field_keys.contains(&e.key.as_str())) {
                    let f = Field::parse(&e.value).map_err(|m| config_error(e, m))?;
                    fields.push((e.key.clone(), f));
                }
                ProblemSource::Explicit { fields, lambda, big_lambda, q }
            }
            other => {
                let e = get("problem", "kind").unwrap();
                return Err(config_error(e, format!("unknown problem kind `{other}` (random, manufactured, explicit)")));
            }
        };
        if let Some(e) = get("problem", "boundary").or_else(|| get("problem", "initial")) {
            if pr.mode != BoundaryMode::Partial {
                return Err(config_error(e, "boundary and initial data need mode = partial"));
            }
            if let ProblemSource::Random { .. } = pr.source {
                // random problems take their data from the explicit fields below
                for key in ["boundary", "initial"] {
                    if let Some(e) = get("problem", key) {
                        Field::parse(&e.value).map_err(|m| config_error(e, m))?;
                    }
                }
            }
        }

        if let Some(e) = get("grid", "cells") {
            cfg.grids = list(e)?;
            if cfg.grids.iter().any(|&c| c < 4) {
                return Err(config_error(e, "grids need at least 4 cells"));
            }
        }

        let s = &mut cfg.solver;
        if let Some(e) = get("solver", "dt") {
            s.dt = match e.value.as_str() {
                "h" => DtRule::H,
                "h2" => DtRule::HSquared,
                _ => DtRule::Fixed(positive(e, num(e)?)?),
            };
        }
        if let Some(e) = get("solver", "tol") {
            s.tol = positive(e, num(e)?)?;
        }
        if let Some(e) = get("solver", "continuation") {
            s.continuation = boolean(e)?;
        }
        if let Some(e) = get("solver", "eps") {
            s.eps = num(e)?;
            if !(s.eps >= 0.0) {
                return Err(config_error(e, "eps must be >= 0"));
            }
        }
        if let Some(e) = get("solver", "eps0") {
            s.eps0 = positive(e, num(e)?)?;
        }
        if let Some(e) = get("solver", "eps_ratio") {
            s.eps_ratio = num(e)?;
            if !(s.eps_ratio > 0.0 && s.eps_ratio < 1.0) {
                return Err(config_error(e, "eps_ratio must lie in (0, 1)"));
            }
        }
        if let Some(e) = get("solver", "basis") {
            s.basis = num(e)?;
            if s.basis == 0 {
                return Err(config_error(e, "basis must be >= 1"));
            }
        }

        let i = &mut cfg.ineq;
        if let Some(e) = get("ineq", "ids") {
            i.ids = ids(e, &INEQUALITY_IDS)?;
        }
        if let Some(e) = get("ineq", "fields") {
            i.fields = num(e)?;
        }
        if let Some(e) = get("ineq", "search") {
            i.search = num(e)?;
        }
        if let Some(e) = get("ineq", "ascent_steps") {
            i.ascent_steps = num(e)?;
        }

        let es = &mut cfg.estimates;
        if let Some(e) = get("estimates", "ids") {
            es.ids = ids(e, &ESTIMATE_IDS)?;
        }
        if let Some(e) = get("estimates", "radii") {
            es.radii = list(e)?;
            for &r in &es.radii {
                positive(e, r)?;
            }
        }
        if let Some(e) = get("estimates", "gamma") {
            es.gamma = positive(e, num(e)?)?;
        }

        let h = &mut cfg.holder;
        if let Some(e) = get("holder", "mode") {
            h.mode = CylinderMode::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown cylinder mode `{}`", e.value)))?;
        }
        if let Some(e) = get("holder", "r_max") {
            h.r_max = positive(e, num(e)?)?;
        }
        if let Some(e) = get("holder", "levels") {
            h.levels = num(e)?;
            if h.levels < 4 {
                return Err(config_error(e, "at least 4 radii are needed"));
            }
        }
        if let Some(e) = get("holder", "drop") {
            h.drop = num(e)?;
        }
        if let Some(e) = get("holder", "time") {
            h.time = Some(num(e)?);
        }

        if let Some(e) = get("sweep", "kind") {
            let k = Kind::parse(&e.value).ok_or_else(|| config_error(e, format!("unknown experiment kind `{}`", e.value)))?;
            if k == Kind::Sweep {
                return Err(config_error(e, "a sweep cannot contain sweeps"));
            }
            cfg.sweep.kind = k;
        }
        if let Some(e) = get("sweep", "p") {
            cfg.sweep.p = list(e)?;
            if let Some(bad) = cfg.sweep.p.iter().find(|p| !(**p > -1.0)) {
                return Err(config_error(e, format!("p = {bad} outside (-1, inf)")));
            }
        }
        if get("estimates", "ids").is_some() {
            cfg.estimates.explicit = true;
        }
        cfg.estimates.ids = cfg.applicable_estimates()?;
        Ok(cfg)
    }

    /// Whether the configured problem can meet the hypotheses of estimate `id`.
    pub fn estimate_applies(&self, id: &str) -> Result<(), CliError> {
        match id {
            "energy" if self.problem.mode != BoundaryMode::Full => Err(CliError::Usage("the energy estimate needs mode = full".into())),
            "max_principle" if matches!(self.problem.source, ProblemSource::Random { structure: Structure::General, .. }) => {
                Err(CliError::Usage("max_principle needs d_j = 0: use structure = max_principle or divergence".into()))
            }
            _ => Ok(()),
        }
    }

    /// Explicit ids must all apply; default ids are filtered to those that do.
    pub fn applicable_estimates(&self) -> Result<Vec<String>, CliError> {
        if self.estimates.explicit {
            self.estimates.ids.iter().try_for_each(|id| self.estimate_applies(id))?;
            Ok(self.estimates.ids.clone())
        } else {
            Ok(self.estimates.ids.iter().filter(|id| self.estimate_applies(id).is_ok()).cloned().collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = ExperimentConfig::parse(
            "kind = estimates\nseed = 9 # trailing comment\n[problem]\nn = 2\np = 0.5\nstructure = max_principle\ncount = 3\n[grid]\ncells = 16, 32\n[solver]\ndt = h2\n[estimates]\nids = energy, caccioppoli\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, Some(Kind::Estimates));
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.problem.n, 2);
        assert_eq!(cfg.grids, vec![16, 32]);
        assert_eq!(cfg.solver.dt, DtRule::HSquared);
        assert_eq!(cfg.estimates.ids, vec!["energy", "caccioppoli"]);
        match cfg.problem.source {
            ProblemSource::Random { count, structure, .. } => assert_eq!((count, structure), (3, Structure::MaxPrinciple)),
            _ => panic!(),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse("seed = 1\n[grid]\ncelss = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.celss") && msg.contains("line 3"), "{msg}");
        assert!(ExperimentConfig::parse("sede = 1\n").unwrap_err().to_string().contains("`sede`"));
        assert!(ExperimentConfig::parse("[nope]\n").is_err());
        assert!(ExperimentConfig::parse("[problem]\nkind = manufactured\ncount = 3\n").is_err());
    }

    #[test]
    fn rejects_inapplicable_estimates() {
        assert!(ExperimentConfig::parse("[problem]\nmode = partial\n[estimates]\nids = energy\n").is_err());
        assert!(ExperimentConfig::parse("[estimates]\nids = max_principle\n").is_err());
        assert!(ExperimentConfig::parse("[estimates]\nids = weak_residual\n").is_ok());
        let defaults = ExperimentConfig::parse("seed = 1\n").unwrap();
        assert!(!defaults.estimates.ids.iter().any(|id| id == "max_principle"));
    }

    #[test]
    fn explicit_fields() {
        let cfg = ExperimentConfig::parse("[problem]\nkind = explicit\nmode = partial\nf = const 1\nboundary = x_power 1 1\n[estimates]\nids = caccioppoli\n").unwrap();
        match cfg.problem.source {
            ProblemSource::Explicit { fields, .. } => assert_eq!(fields.len(), 2),
            _ => panic!(),
        }
        assert!(ExperimentConfig::parse("[problem]\nkind = explicit\nf = banana\n").is_err());
    }
}
