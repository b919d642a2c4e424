//! Fixtures shared by the frozen-constant oracle and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use degenpar::field::{Field, Point};
use degenpar::grid::{CylinderMode, HalfDomainGrid, IntrinsicCylinder, TimeGridFunction};
use degenpar::ineq::EstimateReport;
use degenpar::problem::*;
use degenpar::solver::{solve_regularized, weak_residual, SolverSettings};
use degenpar::verify::*;
use rayon::prelude::*;

pub fn g1(n: usize) -> Arc<HalfDomainGrid> {
    Arc::new(HalfDomainGrid::new_1d(n).unwrap())
}

/// `2N x N` cells, square.
pub fn g2(n: usize) -> Arc<HalfDomainGrid> {
    Arc::new(HalfDomainGrid::new_2d(2 * n, n).unwrap())
}

/// Implicit Euler with `dt = h`.
pub fn solve_dt_h(pr: &DegenerateProblem) -> TimeGridFunction {
    solve_regularized(pr, 0.0, &SolverSettings::with_dt(pr.grid.h())).unwrap()
}

pub const INEQ_P: [f64; 5] = [-0.5, 0.0, 0.5, 1.0, 2.0];
pub const INEQ_IDS: [&str; 5] = ["poincare", "isoperimetric", "interpolation", "hardy_sobolev", "parabolic_sobolev"];

/// Grids of the inequality corpus.
pub fn ineq_grids() -> [Arc<HalfDomainGrid>; 2] {
    [g1(128), Arc::new(HalfDomainGrid::new_2d(32, 16).unwrap())]
}

/// `(id, p)` pairs the inequalities are stated for.
pub fn ineq_cases() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for id in INEQ_IDS {
        for p in INEQ_P {
            if id == "interpolation" && p <= 0.0 {
                continue;
            }
            out.push((id, p));
        }
    }
    out
}

/// Energy ensemble: `n = 1`, `p = 1`, general structure.
pub fn energy_ensemble(cells: usize) -> Vec<DegenerateProblem> {
    random_ensemble(g1(cells), 7, 20, &EnsembleSpec::new(1, 1.0)).unwrap()
}

/// `d = 0`, `c, c_0 >= 0`: every estimate applies.
pub fn structured_ensemble(grid: Arc<HalfDomainGrid>, p: f64, count: usize) -> Vec<DegenerateProblem> {
    let mut spec = EnsembleSpec::new(grid.dim(), p);
    spec.structure = Structure::MaxPrinciple;
    random_ensemble(grid, 13, count, &spec).unwrap()
}

pub fn heat_sin(cells: usize, p: f64) -> DegenerateProblem {
    let f = Field::parse("sin_normal 1 1").unwrap();
    DegenerateProblem::full(g1(cells), p, CoefficientField::heat(1, p).unwrap(), SourceData::weighted(f)).unwrap()
}

/// Caccioppoli and local boundedness reports plus the required maximum
/// principle constants over the structured fixtures on one grid.
pub struct EstimateRun {
    pub caccioppoli: Vec<EstimateReport>,
    pub local_boundedness: Vec<EstimateReport>,
    pub max_principle: Vec<f64>,
}

pub fn estimate_run(cells: usize) -> EstimateRun {
    let mut problems = vec![heat_sin(cells, 0.0), heat_sin(cells, 1.0)];
    for p in [0.0, 1.0] {
        problems.extend(structured_ensemble(g1(cells), p, 10));
    }
    let runs: Vec<_> = problems
        .par_iter()
        .map(|pr| {
            let u = solve_dt_h(pr);
            let mut cacc = Vec::new();
            let mut lb = Vec::new();
            for r in [0.5, 0.75] {
                let cyl = IntrinsicCylinder::new(Point::normal(0.0), 0.0, r, CylinderMode::Boundary, pr.p).unwrap();
                for k in [0.0, 0.5 * u.max_abs()] {
                    cacc.push(caccioppoli_sides(&u, pr, &cyl, k, &Cutoff::standard(&cyl)).unwrap());
                }
                lb.push(local_boundedness_sides(&u, pr, &cyl, 2.0).unwrap());
            }
            (cacc, lb, max_principle_gap(&u, pr).unwrap().required_constant())
        })
        .collect();
    let mut out = EstimateRun { caccioppoli: vec![], local_boundedness: vec![], max_principle: vec![] };
    for (c, l, m) in runs {
        out.caccioppoli.extend(c);
        out.local_boundedness.extend(l);
        out.max_principle.push(m);
    }
    out
}

pub fn max_ratio(reports: &[EstimateReport]) -> f64 {
    reports.iter().map(|r| r.ratio).fold(0.0, f64::max)
}

/// A weak-residual fixture: a problem family on a grid ladder, with
/// `dt = h`. Manufactured members have an `O(h + dt)` leading term.
pub struct ResidualFixture {
    pub label: String,
    pub manufactured: bool,
    pub ladder: Vec<usize>,
    pub build: Box<dyn Fn(usize) -> DegenerateProblem + Sync>,
}

pub fn residual_fixtures() -> Vec<ResidualFixture> {
    let mut out = Vec::new();
    for p in [-0.5, 0.0, 1.0, 2.0] {
        out.push(ResidualFixture {
            label: format!("t_sin p={p}"),
            manufactured: true,
            ladder: vec![64, 128, 256],
            build: Box::new(move |n| manufactured_problem(g1(n), p, &ExactSolution::t_sin(), CoefficientField::heat(1, p).unwrap()).unwrap()),
        });
    }
    out.push(ResidualFixture {
        label: "t_sin_cos 2d p=1".into(),
        manufactured: true,
        ladder: vec![32, 64, 128],
        build: Box::new(|n| manufactured_problem(g2(n), 1.0, &ExactSolution::t_sin_cos(), CoefficientField::heat(2, 1.0).unwrap()).unwrap()),
    });
    for k in 0..3 {
        out.push(ResidualFixture {
            label: format!("ensemble #{k}"),
            manufactured: false,
            ladder: vec![64, 128, 256],
            build: Box::new(move |n| random_problem(g1(n), 7, k, &EnsembleSpec::new(1, 1.0)).unwrap()),
        });
    }
    out
}

/// `(h + dt, residual)` along the fixture's ladder.
pub fn residual_ladder(fx: &ResidualFixture) -> Vec<(f64, f64)> {
    fx.ladder
        .par_iter()
        .map(|&n| {
            let pr = (fx.build)(n);
            let u = solve_dt_h(&pr);
            (2.0 * pr.grid.h(), weak_residual(&u, &pr, 3).unwrap())
        })
        .collect()
}

/// Rescaled solves at `R = 1/2` against an `N = 128`, `dt = h^2` reference,
/// on an aligned (64) and two non-aligned grids.
pub fn covariance_checks(p: f64) -> Vec<CovarianceCheck> {
    let pr = random_problem(g1(128), 3, 0, &EnsembleSpec::new(1, p)).unwrap();
    let h = pr.grid.h();
    let u = solve_regularized(&pr, 0.0, &SolverSettings::with_dt(h * h)).unwrap();
    [64usize, 48, 32]
        .par_iter()
        .map(|&cells| scaling_covariance(&pr, &u, Point::normal(0.0), 0.0, 0.5, cells, 1).unwrap())
        .collect()
}
