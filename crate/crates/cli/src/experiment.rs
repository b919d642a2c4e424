//! Experiment kinds: each returns its artifacts in memory so that writing
//! and hashing happen in one place.

use std::sync::Arc;

use degenpar::field::{Field, Point};
use degenpar::fmt::g17;
use degenpar::frozen;
use degenpar::grid::{v2_norm, CylinderMode, HalfDomainGrid, IntrinsicCylinder, TimeGridFunction, WeightedMeasure};
use degenpar::ineq::*;
use degenpar::problem::*;
use degenpar::solver::{solve_degenerate, solve_regularized, step_count, weak_residual, ContinuationReport, SolverSettings};
use degenpar::verify::*;
use rayon::prelude::*;

use crate::artifacts::Artifact;
use crate::config::{DtRule, ExperimentConfig, Kind, ProblemSource};
use crate::error::CliError;

/// Artifacts plus the ledger rows that exceed their frozen constants.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub ledger: Vec<EstimateReport>,
    pub violations: Vec<EstimateReport>,
}

fn ledger_text(rows: &[EstimateReport]) -> String {
    let mut s = String::from(LEDGER_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

/// Rows exceeding the constant of their id.
pub fn violations(rows: &[EstimateReport]) -> Vec<EstimateReport> {
    rows.iter().filter(|r| frozen::ledger_constant(&r.id, r.n, r.p).map_or(false, |c| r.violates(c))).cloned().collect()
}

fn ledger_outcome(mut artifacts: Vec<Artifact>, name: &str, rows: Vec<EstimateReport>) -> Outcome {
    artifacts.push(Artifact::new(name, ledger_text(&rows)));
    Outcome { violations: violations(&rows), artifacts, ledger: rows }
}

pub fn make_grid(n: usize, cells: usize) -> Result<Arc<HalfDomainGrid>, CliError> {
    Ok(Arc::new(if n == 1 { HalfDomainGrid::new_1d(cells)? } else { HalfDomainGrid::new_2d(2 * cells, cells)? }))
}

fn field_of(fields: &[(String, Field)], key: &str) -> Option<Field> {
    fields.iter().find(|(k, _)| k == key).map(|(_, f)| f.clone())
}

/// The problems of the configuration on one grid.
pub fn build_problems(cfg: &ExperimentConfig, grid: Arc<HalfDomainGrid>, seed: u64) -> Result<Vec<DegenerateProblem>, CliError> {
    let spec = &cfg.problem;
    let (n, p) = (spec.n, spec.p);
    Ok(match &spec.source {
        ProblemSource::Random { count, structure, sources, lambda, big_lambda, q, time_dependent } => {
            let es = EnsembleSpec {
                n,
                p,
                lambda: *lambda,
                big_lambda: *big_lambda,
                q: *q,
                structure: *structure,
                sources: *sources,
                time_dependent: *time_dependent,
            };
            let members = random_ensemble(grid, seed, *count, &es)?;
            if spec.mode == BoundaryMode::Full {
                members
            } else {
                members
                    .into_iter()
                    .map(|m| {
                        let mut pr = DegenerateProblem::partial(m.grid.clone(), p, m.coeffs.clone(), m.sources.clone(), Field::zero(), Field::zero())?;
                        pr.origin = m.origin;
                        Ok(pr)
                    })
                    .collect::<degenpar::Result<Vec<_>>>()?
            }
        }
        ProblemSource::Manufactured { exact } => {
            let ex = ExactSolution::by_name(exact).ok_or_else(|| CliError::Usage(format!("unknown exact solution `{exact}`")))?;
            vec![manufactured_problem(grid, p, &ex, CoefficientField::heat(n, p)?)?]
        }
        ProblemSource::Explicit { fields, lambda, big_lambda, q } => {
            if n == 1 {
                if let Some((k, _)) = fields.iter().find(|(k, _)| k.ends_with("_l") || k == "a_ln") {
                    return Err(CliError::Usage(format!("`{k}` has no meaning for n = 1")));
                }
            }
            let mut co = CoefficientField::heat(n, p)?;
            co.lambda = *lambda;
            co.big_lambda = *big_lambda;
            if let Some(q) = q {
                co.q = *q;
            }
            let set = |target: &mut Field, key: &str| {
                if let Some(f) = field_of(fields, key) {
                    *target = f;
                }
            };
            set(&mut co.a, "a");
            set(&mut co.diffusion[0][0], "a_ll");
            set(&mut co.diffusion[0][1], "a_ln");
            set(&mut co.diffusion[1][0], "a_ln");
            set(&mut co.diffusion[1][1], "a_nn");
            set(&mut co.d[0], "d_l");
            set(&mut co.d[1], "d_n");
            set(&mut co.b[0], "b_l");
            set(&mut co.b[1], "b_n");
            set(&mut co.c, "c");
            set(&mut co.c0, "c0");
            let mut src = SourceData::zero();
            set(&mut src.f, "f");
            set(&mut src.f0, "f0");
            set(&mut src.fi[0], "f_l");
            set(&mut src.fi[1], "f_n");
            let pr = if spec.mode == BoundaryMode::Full {
                DegenerateProblem::full(grid, p, co, src)?
            } else {
                let b = field_of(fields, "boundary").unwrap_or_default();
                let i = field_of(fields, "initial").unwrap_or_default();
                DegenerateProblem::partial(grid, p, co, src, b, i)?
            };
            vec![pr]
        }
    })
}

fn time_step(cfg: &ExperimentConfig, grid: &HalfDomainGrid) -> f64 {
    match cfg.solver.dt {
        DtRule::H => grid.h(),
        DtRule::HSquared => grid.h() * grid.h(),
        DtRule::Fixed(dt) => dt,
    }
}

fn solve(cfg: &ExperimentConfig, pr: &DegenerateProblem) -> Result<(TimeGridFunction, Option<ContinuationReport>), CliError> {
    let settings = SolverSettings {
        tol: cfg.solver.tol,
        eps0: cfg.solver.eps0,
        eps_ratio: cfg.solver.eps_ratio,
        ..SolverSettings::with_dt(time_step(cfg, &pr.grid))
    };
    if cfg.solver.continuation {
        let (u, rep) = solve_degenerate(pr, &settings)?;
        Ok((u, Some(rep)))
    } else {
        Ok((solve_regularized(pr, cfg.solver.eps, &settings)?, None))
    }
}

pub fn require_seed(cfg: &ExperimentConfig) -> Result<u64, CliError> {
    cfg.seed.ok_or_else(|| CliError::Usage("no seed: set `seed` in the configuration or pass --seed".into()))
}

pub fn run_experiment(kind: Kind, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let seed = require_seed(cfg)?;
    match kind {
        Kind::Solve => run_solve(cfg, seed),
        Kind::Ineq => run_ineq(cfg, seed),
        Kind::Estimates => run_estimates(cfg, seed),
        Kind::Holder => run_holder(cfg, seed),
        Kind::Sweep => run_sweep(cfg),
    }
}

/// Runs `f` for every member on every grid, in parallel, keeping the order.
fn per_member<T: Send>(
    cfg: &ExperimentConfig,
    seed: u64,
    f: impl Fn(&DegenerateProblem, usize) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    let mut jobs = Vec::new();
    for &cells in &cfg.grids {
        let grid = make_grid(cfg.problem.n, cells)?;
        for (k, pr) in build_problems(cfg, grid, seed)?.into_iter().enumerate() {
            jobs.push((pr, k));
        }
    }
    jobs.par_iter().map(|(pr, k)| f(pr, *k)).collect()
}

fn run_solve(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let exact = match &cfg.problem.source {
        ProblemSource::Manufactured { exact } => ExactSolution::by_name(exact),
        _ => None,
    };
    let results = per_member(cfg, seed, |pr, k| {
        let (u, cont) = solve(cfg, pr)?;
        let label = pr.grid.label();
        let mut arts = Vec::new();
        let mut final_csv = Vec::new();
        u.last().write_csv(&mut final_csv, u.t_end())?;
        arts.push(Artifact { path: format!("solve/{label}/member_{k}.csv"), bytes: final_csv });
        if let Some(rep) = &cont {
            arts.push(Artifact::new(format!("solve/{label}/continuation_{k}.csv"), rep.to_csv()));
        }
        let err = match &exact {
            Some(ex) => {
                let wm = WeightedMeasure::new(&pr.grid, pr.p)?;
                let last = u.slice(u.slice_count() - 1);
                let s: f64 = pr.grid.nodes().enumerate().map(|(i, x)| wm.weights()[i] * (last[i] - ex.eval(x, u.t_end())).powi(2)).sum();
                g17(s.sqrt())
            }
            None => String::new(),
        };
        let eps = cont.as_ref().map_or(cfg.solver.eps, |c| c.final_eps);
        let row = format!(
            "{label},{k},{},{},{},{},{},{},{}\n",
            g17(u.dt()),
            step_count(pr, u.dt())?,
            g17(eps),
            g17(u.max_abs()),
            g17(v2_norm(&u, pr.p)?),
            g17(weak_residual(&u, pr, cfg.solver.basis)?),
            err
        );
        Ok((arts, row))
    })?;
    let mut summary = String::from("grid,member,dt,steps,eps,max_abs,v2_norm,weak_residual,err_l2\n");
    let mut artifacts = Vec::new();
    for (a, row) in results {
        artifacts.extend(a);
        summary.push_str(&row);
    }
    artifacts.push(Artifact::new("solve_summary.csv", summary));
    Ok(Outcome { artifacts, ..Outcome::default() })
}

/// Evaluation of inequality `id` on random field `index`, `None` when the
/// field has no admissible levels.
pub fn ineq_report(id: &str, grid: &Arc<HalfDomainGrid>, params: &SearchParams, seed: u64, index: usize) -> Result<Option<EstimateReport>, CliError> {
    let p = params.p;
    let n = grid.dim();
    let rep = match id {
        "hardy" => hardy_ratio(&random_zero_trace_field(grid, seed, index)),
        "interpolation" => interpolation_gap(&random_zero_trace_field(grid, seed, index), params.eps, p)?,
        "hardy_sobolev" => hardy_sobolev_ratio(&random_zero_trace_field(grid, seed, index), params.s, params.r, n)?,
        "parabolic_sobolev" => parabolic_sobolev_ratio(&random_time_field(grid, params.time_steps, seed, index), p, n)?,
        "poincare" => {
            let b = random_ball_field(grid, seed, index);
            weighted_poincare_ratio(&b, p, b.radius())?
        }
        "isoperimetric" => {
            let b = random_ball_field(grid, seed, index);
            let (k, l) = isoperimetric_levels(&b);
            if !(k < l) {
                return Ok(None);
            }
            degiorgi_isoperimetric_sides(&b, k, l, b.radius(), p, isoperimetric_eps_default(p))?
        }
        other => return Err(degenpar::Error::UnknownInequality(other.to_string()).into()),
    };
    // the Hardy form has no weight; record the run's p for the ledger grouping
    let rep = EstimateReport { p, ..rep };
    Ok(Some(rep.with_param("field", index as f64).with_seed(seed)))
}

/// Interpolation is stated for `p > 0` only.
fn ineq_applies(id: &str, p: f64) -> bool {
    !(id == "interpolation" && p <= 0.0)
}

fn run_ineq(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let p = cfg.problem.p;
    let params = SearchParams { ascent_steps: cfg.ineq.ascent_steps, ..SearchParams::new(p) };
    let mut rows = Vec::new();
    let mut sup = String::from("id,n,p,grid,starts,sup_ratio,constant\n");
    let mut hardy = String::from("cells,best_constant\n");
    let mut artifacts = Vec::new();
    for &cells in &cfg.grids {
        let grid = make_grid(cfg.problem.n, cells)?;
        for id in cfg.ineq.ids.iter().filter(|id| ineq_applies(id, p)) {
            let reps: Result<Vec<Option<EstimateReport>>, CliError> =
                (0..cfg.ineq.fields).into_par_iter().map(|i| ineq_report(id, &grid, &params, seed, i)).collect();
            rows.extend(reps?.into_iter().flatten());
            if cfg.ineq.search > 0 {
                let s = empirical_sup_ratio(id, &grid, &params, seed, cfg.ineq.search)?;
                let c = frozen::ledger_constant(id, grid.dim(), p).map(g17).unwrap_or_default();
                sup.push_str(&format!("{id},{},{},{},{},{},{c}\n", grid.dim(), g17(p), grid.label(), cfg.ineq.search, g17(s)));
            }
        }
        if grid.dim() == 1 && cfg.ineq.ids.iter().any(|id| id == "hardy") {
            hardy.push_str(&format!("{cells},{}\n", g17(hardy_best_constant(&grid)?)));
        }
    }
    if cfg.ineq.search > 0 {
        artifacts.push(Artifact::new("ineq_sup.csv", sup));
    }
    if cfg.problem.n == 1 && cfg.ineq.ids.iter().any(|id| id == "hardy") {
        artifacts.push(Artifact::new("hardy_constants.csv", hardy));
    }
    Ok(ledger_outcome(artifacts, "ineq_ledger.csv", rows))
}

fn run_estimates(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let ids = cfg.applicable_estimates()?;
    let es = &cfg.estimates;
    let has = |id: &str| ids.iter().any(|i| i == id);
    let per = per_member(cfg, seed, |pr, k| {
        let (u, _) = solve(cfg, pr)?;
        let (n, p, label) = (pr.n(), pr.p, pr.grid.label());
        let mut rows = Vec::new();
        if has("energy") {
            rows.push(energy_estimate_ratio(&u, pr)?);
        }
        for &r in &es.radii {
            let cyl = IntrinsicCylinder::new(Point::normal(0.0), u.t_end(), r, CylinderMode::Boundary, p)?;
            if has("caccioppoli") {
                for level in [0.0, 0.5 * u.max_abs()] {
                    rows.push(caccioppoli_sides(&u, pr, &cyl, level, &Cutoff::standard(&cyl))?);
                }
            }
            if has("local_boundedness") {
                rows.push(local_boundedness_sides(&u, pr, &cyl, es.gamma)?);
            }
        }
        if has("max_principle") {
            rows.push(max_principle_gap(&u, pr)?.to_report(pr));
        }
        if has("weak_residual") {
            let res = weak_residual(&u, pr, cfg.solver.basis)?;
            rows.push(EstimateReport::new("weak_residual", n, p, &label, res, vec![pr.grid.h() + u.dt()]).with_param("dt", u.dt()));
        }
        Ok(rows.into_iter().map(|r| r.with_param("member", k as f64).with_seed(seed)).collect::<Vec<_>>())
    })?;
    Ok(ledger_outcome(Vec::new(), "estimates_ledger.csv", per.into_iter().flatten().collect()))
}

const FIT_HEADER: &str = "p,mode,grid,member,alpha,intercept,r_squared,radii,flat";

fn run_holder(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let h = &cfg.holder;
    let radii: Vec<f64> = (0..h.levels).map(|j| h.r_max * 0.5f64.powi(j as i32)).collect();
    let per = per_member(cfg, seed, |pr, k| {
        let (u, _) = solve(cfg, pr)?;
        let center = match h.mode {
            CylinderMode::Boundary | CylinderMode::Initial => Point::normal(0.0),
            CylinderMode::Interior | CylinderMode::Global => Point::normal(0.5),
        };
        let time = h.time.unwrap_or(if h.mode == CylinderMode::Initial { u.t0() } else { u.t_end() });
        let prof = oscillation_profile(&u, pr.p, center, time, h.mode, &radii)?;
        let fit = holder_exponent_fit_window(&prof, h.drop)?;
        let label = pr.grid.label();
        let art = Artifact::new(format!("holder/profile_{}_{label}_{k}.csv", h.mode.name()), prof.to_csv());
        let row = format!(
            "{},{},{label},{k},{},{},{},{},{}\n",
            g17(pr.p),
            h.mode.name(),
            g17(fit.alpha),
            g17(fit.intercept),
            g17(fit.r_squared),
            fit.radii.len(),
            fit.flat
        );
        Ok((art, row))
    })?;
    let mut fits = format!("{FIT_HEADER}\n");
    let mut artifacts = Vec::new();
    for (a, row) in per {
        artifacts.push(a);
        fits.push_str(&row);
    }
    artifacts.push(Artifact::new("holder_fits.csv", fits));
    Ok(Outcome { artifacts, ..Outcome::default() })
}

fn run_sweep(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let inner = cfg.sweep.kind;
    let outcomes: Result<Vec<(f64, Outcome)>, CliError> = cfg
        .sweep
        .p
        .par_iter()
        .map(|&p| {
            let mut c = cfg.clone();
            c.problem.p = p;
            run_experiment(inner, &c).map(|o| (p, o))
        })
        .collect();
    let mut out = Outcome::default();
    for (p, o) in outcomes? {
        let dir = format!("p_{}", g17(p));
        out.artifacts.extend(o.artifacts.into_iter().map(|a| a.nested(&dir)));
        out.ledger.extend(o.ledger);
        out.violations.extend(o.violations);
    }
    Ok(out)
}
