//! Oracle run behind `degenpar::frozen`. Prints the constant table (raw
//! maxima times the margin); run with
//! `cargo test --release -p degenpar --test frozen_oracle -- --ignored --nocapture`.

mod common;

use common::*;
use degenpar::frozen::{MARGIN, ORACLE_SEED, ORACLE_STARTS};
use degenpar::ineq::{empirical_sup_ratio, SearchParams};

fn frozen(raw: f64) -> String {
    format!("{:.4e}", raw * MARGIN)
}

#[test]
#[ignore]
fn print_frozen_constants() {
    let mut energy = 0.0f64;
    for cells in [64, 128] {
        for pr in energy_ensemble(cells) {
            let u = solve_dt_h(&pr);
            energy = energy.max(degenpar::verify::energy_estimate_ratio(&u, &pr).unwrap().ratio);
        }
    }
    let (mut cacc, mut lb, mut mp) = (0.0f64, 0.0f64, 0.0f64);
    for cells in [64, 128] {
        let run = estimate_run(cells);
        cacc = cacc.max(max_ratio(&run.caccioppoli));
        lb = lb.max(max_ratio(&run.local_boundedness));
        mp = run.max_principle.iter().cloned().fold(mp, f64::max);
    }
    let mut residual = 0.0f64;
    for fx in residual_fixtures() {
        for (scale, r) in residual_ladder(&fx) {
            residual = residual.max(r / scale);
        }
    }
    let mut cov = 0.0f64;
    for p in [0.0, 1.0] {
        for c in covariance_checks(p) {
            cov = cov.max(c.max_diff / (c.h * c.scale));
        }
    }
    println!("pub const CACCIOPPOLI: f64 = {};", frozen(cacc));
    println!("pub const ENERGY: f64 = {};", frozen(energy));
    println!("pub const MAX_PRINCIPLE: f64 = {};", frozen(mp));
    println!("pub const LOCAL_BOUNDEDNESS: f64 = {};", frozen(lb));
    println!("pub const WEAK_RESIDUAL: f64 = {};", frozen(residual));
    println!("pub const SCALING_COVARIANCE: f64 = {};", frozen(cov));

    println!("pub const INEQUALITIES: [(&str, usize, f64, f64); {}] = [", 2 * ineq_cases().len());
    for grid in ineq_grids() {
        for (id, p) in ineq_cases() {
            let sup = empirical_sup_ratio(id, &grid, &SearchParams::new(p), ORACLE_SEED, ORACLE_STARTS).unwrap();
            println!("    (\"{id}\", {}, {p:?}, {}),", grid.dim(), frozen(sup));
        }
    }
    println!("];");
}
