use std::sync::Arc;

use degenpar::field::{Field, Point};
use degenpar::grid::*;
use degenpar::ineq::*;
use degenpar::problem::*;
use degenpar::solver::{solve_regularized, SolverSettings};
use degenpar::verify::*;
use proptest::prelude::*;

fn g1(n: usize) -> Arc<HalfDomainGrid> {
    Arc::new(HalfDomainGrid::new_1d(n).unwrap())
}

fn solve(pr: &DegenerateProblem) -> TimeGridFunction {
    solve_regularized(pr, 0.0, &SolverSettings::with_dt(pr.grid.h())).unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cell_weights_integrate_one_exactly(p in -0.95f64..4.0, a in 0.0f64..0.9, len in 0.01f64..0.1) {
        let b = a + len;
        let exact = (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0);
        let got = weighted_cell_measure(&CellBox::normal_only(a, b), p).unwrap();
        prop_assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1e-300) + 1e-15);
    }

    #[test]
    fn superlevel_measure_is_monotone(seed in 0u64..1000, p in -0.9f64..3.0, k1 in -1.0f64..1.0, dk in 0.0f64..1.0) {
        let u = random_zero_trace_field(&g1(64), seed, 0);
        let lo = superlevel_measure(&u, k1, p, Region::Whole, None).unwrap();
        let hi = superlevel_measure(&u, k1 + dk, p, Region::Whole, None).unwrap();
        prop_assert!(hi <= lo);
    }

    #[test]
    fn v2_norm_triangle(seed in 0u64..1000, p in -0.9f64..3.0) {
        let grid = g1(32);
        let u = random_time_field(&grid, 6, seed, 0);
        let v = random_time_field(&grid, 6, seed, 1);
        let w = u.combine(1.0, &v, 1.0).unwrap();
        let lhs = v2_norm(&w, p).unwrap();
        prop_assert!(lhs <= v2_norm(&u, p).unwrap() + v2_norm(&v, p).unwrap() + 1e-12 * lhs);
    }

    #[test]
    fn hardy_ratio_bounded_on_fine_grids(seed in 0u64..1000) {
        let r = hardy_ratio(&random_zero_trace_field(&g1(256), seed, 3));
        prop_assert!(r.ratio <= 4.5, "{}", r.ratio);
    }

    #[test]
    fn inequality_ratios_are_scale_invariant(seed in 0u64..500, s in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let grid = g1(64);
        let u = random_zero_trace_field(&grid, seed, 0);
        let us = u.map(|v| s * v);
        let r = hardy_ratio(&u).ratio;
        prop_assert!((hardy_ratio(&us).ratio - r).abs() <= 1e-10 * r);
        let r = hardy_sobolev_ratio(&u, 1.0, 2.0, 1).unwrap().ratio;
        prop_assert!((hardy_sobolev_ratio(&us, 1.0, 2.0, 1).unwrap().ratio - r).abs() <= 1e-10 * r);
        let t = random_time_field(&grid, 6, seed, 0);
        let r = parabolic_sobolev_ratio(&t, 1.0, 1).unwrap().ratio;
        prop_assert!((parabolic_sobolev_ratio(&t.map(|v| s * v), 1.0, 1).unwrap().ratio - r).abs() <= 1e-10 * r);
        let b = random_ball_field(&grid, seed, 0);
        let r = weighted_poincare_ratio(&b, 1.0, b.radius()).unwrap().ratio;
        let rs = weighted_poincare_ratio(&b.map(|v| s * v), 1.0, b.radius()).unwrap().ratio;
        prop_assert!((rs - r).abs() <= 1e-10 * r.max(1e-300));
    }

    #[test]
    fn source_norms_are_homogeneous(seed in 0u64..1000, s in 0.01f64..20.0) {
        let pr = random_problem(g1(16), seed, 0, &EnsembleSpec::new(1, 0.5)).unwrap();
        let a = pr.source_norms(8).unwrap();
        let b = pr.with_scaled_data(s).source_norms(8).unwrap();
        prop_assert!((b.f0_norm - s * a.f0_norm).abs() <= 1e-10 * s * a.f0_norm);
        prop_assert!((b.f1_norm - s * a.f1_norm).abs() <= 1e-10 * s * a.f1_norm);
    }

    #[test]
    fn chi_exceeds_one(p in -0.99f64..10.0, n in 1usize..4) {
        prop_assert!(chi_exponent(n, p).unwrap() > 1.0);
    }

    #[test]
    fn oscillation_is_monotone_in_radius(seed in 0u64..200, p in prop_oneof![Just(0.0), Just(1.0)]) {
        let pr = random_problem(g1(48), seed, 0, &EnsembleSpec::new(1, p)).unwrap();
        let u = solve(&pr);
        let radii: Vec<f64> = (0..5).map(|j| 0.5 * 0.5f64.powi(j)).collect();
        let prof = oscillation_profile(&u, p, Point::normal(0.0), u.t_end(), CylinderMode::Boundary, &radii).unwrap();
        // radii increase along the profile
        prop_assert!(prof.omega.iter().all(|&w| w >= 0.0));
        for w in prof.omega.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, p in prop_oneof![Just(-0.5), Just(0.0), Just(1.0), Just(2.0)]) {
        let mut spec = EnsembleSpec::new(1, p);
        spec.time_dependent = false;
        let p1 = random_problem(g1(32), seed, 0, &spec).unwrap();
        let p2 = random_problem(g1(32), seed, 1, &spec).unwrap();
        let src = |pr: &DegenerateProblem, s: f64| pr.sources.scaled(s);
        let combined = SourceData {
            f: Field::custom({ let (a, b) = (src(&p1, alpha).f, src(&p2, beta).f); move |x, t| a.eval(x, t) + b.eval(x, t) }),
            f0: Field::custom({ let (a, b) = (src(&p1, alpha).f0, src(&p2, beta).f0); move |x, t| a.eval(x, t) + b.eval(x, t) }),
            fi: [Field::zero(), Field::custom({ let (a, b) = (src(&p1, alpha).fi[1].clone(), src(&p2, beta).fi[1].clone()); move |x, t| a.eval(x, t) + b.eval(x, t) })],
        };
        let q2 = DegenerateProblem::full(p1.grid.clone(), p, p1.coeffs.clone(), p2.sources.clone()).unwrap();
        let mix = DegenerateProblem::full(p1.grid.clone(), p, p1.coeffs.clone(), combined).unwrap();
        let (u1, u2, um) = (solve(&p1), solve(&q2), solve(&mix));
        let expect = u1.combine(alpha, &u2, beta).unwrap();
        prop_assert!(rel_diff(um.values(), expect.values()) <= 1e-8);
    }

    #[test]
    fn discrete_maximum_principle(seed in 0u64..1000, p in prop_oneof![Just(-0.5), Just(0.0), Just(1.0), Just(2.0)]) {
        let mut spec = EnsembleSpec::new(1, p);
        spec.structure = Structure::MaxPrinciple;
        spec.sources = SourceKind::NonNegative;
        let u = solve(&random_problem(g1(32), seed, 0, &spec).unwrap());
        let min = u.values().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-9, "{min}");
    }

    #[test]
    fn homogeneous_energy_decays(seed in 0u64..1000, p in prop_oneof![Just(-0.5), Just(0.0), Just(1.0), Just(2.0)], eps in prop_oneof![Just(0.0), Just(0.05)]) {
        let mut spec = EnsembleSpec::new(1, p);
        spec.structure = Structure::Divergence;
        spec.time_dependent = false;
        let mut pr = random_problem(g1(32), seed, 0, &spec).unwrap();
        pr.sources = SourceData::zero();
        pr.mode = BoundaryMode::Partial;
        pr.initial = Field::parse("sin_normal 1 1").unwrap();
        pr.boundary = Field::zero();
        let u = solve_regularized(&pr, eps, &SolverSettings::with_dt(pr.grid.h())).unwrap();
        let m = WeightedMeasure::shifted(&pr.grid, p, eps).unwrap();
        let energy: Vec<f64> = (0..u.slice_count())
            .map(|k| u.slice(k).iter().zip(m.weights()).map(|(v, w)| v * v * w).sum())
            .collect();
        for w in energy.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
        }
    }

    #[test]
    fn estimates_are_invariant_under_joint_scaling(seed in 0u64..1000, s in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0], p in prop_oneof![Just(0.0), Just(1.0)]) {
        let mut spec = EnsembleSpec::new(1, p);
        spec.structure = Structure::MaxPrinciple;
        let pr = random_problem(g1(32), seed, 0, &spec).unwrap();
        let ps = pr.with_scaled_data(s);
        let (u, us) = (solve(&pr), solve(&ps));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * a.abs().max(1e-300);
        prop_assert!(close(energy_estimate_ratio(&u, &pr).unwrap().ratio, energy_estimate_ratio(&us, &ps).unwrap().ratio));
        let cyl = IntrinsicCylinder::new(Point::normal(0.0), u.t_end(), 0.5, CylinderMode::Boundary, p).unwrap();
        let cut = Cutoff::standard(&cyl);
        let k = 0.25 * u.max_abs();
        let a = caccioppoli_sides(&u, &pr, &cyl, k, &cut).unwrap().ratio;
        let b = caccioppoli_sides(&us, &ps, &cyl, s.abs() * k, &cut).unwrap().ratio;
        if s > 0.0 {
            prop_assert!(close(a, b), "{a} {b}");
        }
        let a = local_boundedness_sides(&u, &pr, &cyl, 2.0).unwrap().ratio;
        let b = local_boundedness_sides(&us, &ps, &cyl, 2.0).unwrap().ratio;
        if s > 0.0 {
            prop_assert!(close(a, b), "{a} {b}");
        }
    }
}

#[test]
fn hardy_best_constant_never_exceeds_four() {
    for n in [8, 16, 64, 256, 1024] {
        let c = hardy_best_constant(&g1(n)).unwrap();
        assert!(c <= 4.0 + 1e-9, "{n}: {c}");
    }
}

#[test]
fn steklov_commutes_with_truncation_up_to_oscillation() {
    for seed in 0..10 {
        let u = random_time_field(&g1(32), 16, seed, 0);
        let h = 3.0 * u.dt();
        let k = 0.1;
        let a = truncate_plus_time(&steklov_average(&u, h).unwrap(), k);
        let b = steklov_average(&truncate_plus_time(&u, k), h).unwrap();
        // largest change of u over a window of length h
        let span = (h / u.dt()).round() as usize;
        let mut osc = 0.0f64;
        for m in span..u.slice_count() {
            for i in 0..u.grid().len() {
                let w: Vec<f64> = (m - span..=m).map(|j| u.slice(j)[i]).collect();
                let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                osc = osc.max(hi - lo);
            }
        }
        let diff = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= osc + 1e-12, "{diff} > {osc}");
    }
}
