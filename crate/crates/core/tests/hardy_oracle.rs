//! Independent check of the discrete Hardy constant: matrices from
//! Gauss-Legendre quadrature, eigenvalues from a dense Cholesky reduction.

use degenpar::grid::HalfDomainGrid;
use degenpar::ineq::{hardy_best_constant, hardy_forms};
use nalgebra::DMatrix;

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Dense `(int u^2/x^2, int u'^2)` for the hat basis through the centers.
fn dense_forms(cells: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = 1.0 / cells as f64;
    let x = |i: usize| (i as f64 + 0.5) * h;
    let mut b = DMatrix::zeros(cells, cells);
    let mut a = DMatrix::zeros(cells, cells);
    // [0, x0]: u = u0 x / x0
    b[(0, 0)] += 1.0 / x(0);
    a[(0, 0)] += 1.0 / x(0);
    for i in 0..cells - 1 {
        let (xl, xr) = (x(i), x(i + 1));
        let sub = 64;
        for s in 0..sub {
            let (a0, a1) = (xl + (xr - xl) * s as f64 / sub as f64, xl + (xr - xl) * (s + 1) as f64 / sub as f64);
            for (z, w) in GL5 {
                let t = 0.5 * (a0 + a1) + 0.5 * (a1 - a0) * z;
                let wt = 0.5 * (a1 - a0) * w / (t * t);
                let (pl, pr) = ((xr - t) / h, (t - xl) / h);
                b[(i, i)] += wt * pl * pl;
                b[(i, i + 1)] += wt * pl * pr;
                b[(i + 1, i)] += wt * pl * pr;
                b[(i + 1, i + 1)] += wt * pr * pr;
            }
        }
        a[(i, i)] += 1.0 / h;
        a[(i + 1, i + 1)] += 1.0 / h;
        a[(i, i + 1)] -= 1.0 / h;
        a[(i + 1, i)] -= 1.0 / h;
    }
    // [x_{N-1}, 1]: constant
    b[(cells - 1, cells - 1)] += 1.0 / x(cells - 1) - 1.0;
    (b, a)
}

fn dense_largest(b: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let l = a.clone().cholesky().expect("stiffness is SPD").l();
    let li = l.clone().try_inverse().unwrap();
    let c = &li * b * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    c.symmetric_eigen().eigenvalues.max()
}

#[test]
fn forms_match_quadrature() {
    for cells in [1usize, 2, 7, 64] {
        let (b, a) = hardy_forms(cells, 1.0 / cells as f64);
        let (db, da) = dense_forms(cells);
        for i in 0..cells {
            assert!((b.diag[i] - db[(i, i)]).abs() < 1e-11 * db[(i, i)].abs().max(1.0), "b[{i}] cells={cells}");
            assert!((a.diag[i] - da[(i, i)]).abs() < 1e-9 * da[(i, i)], "a[{i}] cells={cells}");
            if i + 1 < cells {
                assert!((b.off[i] - db[(i, i + 1)]).abs() < 1e-11 * db[(i, i + 1)].abs().max(1.0));
                assert!((a.off[i] - da[(i, i + 1)]).abs() < 1e-9 * da[(i, i)]);
            }
        }
    }
}

#[test]
fn sturm_bisection_matches_dense_eigen() {
    for cells in [16usize, 100, 256] {
        let (db, da) = dense_forms(cells);
        let dense = dense_largest(&db, &da);
        let grid = HalfDomainGrid::new_1d(cells).unwrap();
        let sturm = hardy_best_constant(&grid).unwrap();
        assert!((sturm - dense).abs() < 1e-9 * dense, "{cells}: {sturm} vs {dense}");
    }
}

#[test]
fn frozen_fixtures() {
    // dense generalized-eigen oracle values for the same discrete space
    let fixtures = [(256, 3.0918364113828014), (512, 3.1759625543598435), (1024, 3.249101539811523), (2048, 3.313075684876274)];
    for (cells, expect) in fixtures {
        let c = hardy_best_constant(&HalfDomainGrid::new_1d(cells).unwrap()).unwrap();
        assert!((c - expect).abs() < 1e-9, "{cells}: {c} vs {expect}");
        assert!(c <= 4.0 + 1e-9);
    }
}
