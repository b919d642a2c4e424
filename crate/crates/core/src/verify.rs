//! A priori estimates as two-sided checks on computed solutions, oscillation
//! decay over intrinsic cylinders, and refinement studies.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, FieldFn, Point};
use crate::fmt::g17;
use crate::grid::{gradient_slice, CylinderMode, HalfDomainGrid, IntrinsicCylinder, TimeGridFunction, WeightedMeasure};
use crate::ineq::EstimateReport;
use crate::problem::{manufactured_problem, BoundaryMode, CoefficientField, DegenerateProblem, ExactSolution, SpecialStructureProblem};
use crate::solver::{solve_regularized, weak_residual, SolverSettings};

fn check_solution(u: &TimeGridFunction, problem: &DegenerateProblem) -> Result<()> {
    if **u.grid() != *problem.grid {
        return Err(Error::GridMismatch("solution and problem grids differ".into()));
    }
    Ok(())
}

/// `F_1` of the problem's sources with the solution's time quadrature.
fn f1_norm(u: &TimeGridFunction, problem: &DegenerateProblem) -> Result<f64> {
    if problem.sources.is_zero() {
        return Ok(0.0);
    }
    Ok(problem.source_norms(u.slice_count() - 1)?.f1_norm)
}

/// Spatial cutoff `xi` with its gradient and time derivative.
#[derive(Clone)]
pub struct Cutoff {
    pub xi: FieldFn,
    pub grad: [FieldFn; 2],
    pub dt: FieldFn,
}

impl std::fmt::Debug for Cutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Cutoff")
    }
}

impl Cutoff {
    /// Radial cutoff equal to 1 on the half-radius ball and decaying linearly
    /// to 0 on the sphere of the cylinder.
    pub fn standard(cyl: &IntrinsicCylinder) -> Self {
        let (c, r) = (cyl.center, cyl.radius);
        let s = move |x: Point| x.dist(&c) / r;
        let slope = move |x: Point| {
            let s = s(x);
            if s > 0.5 && s < 1.0 {
                -2.0 / (r * r * s)
            } else {
                0.0
            }
        };
        Self {
            xi: Arc::new(move |x, _| (2.0 * (1.0 - s(x))).clamp(0.0, 1.0)),
            grad: [
                Arc::new(move |x, _| slope(x) * (x.lateral - c.lateral)),
                Arc::new(move |x, _| slope(x) * (x.normal - c.normal)),
            ],
            dt: Arc::new(|_, _| 0.0),
        }
    }
}

/// Both sides of the Caccioppoli inequality (theorem parameter `eps = 1`):
/// `max(sup_t int x^p a [xi (u-k)^+]^2, lambda int int |D[xi (u-k)^+]|^2)`
/// against the initial-slice term, the cutoff-derivative term, the plain
/// and weighted `L^2` terms and `(k^2 + F_1^2)` times the level-set measures.
pub fn caccioppoli_sides(u: &TimeGridFunction, problem: &DegenerateProblem, cyl: &IntrinsicCylinder, k: f64, cutoff: &Cutoff) -> Result<EstimateReport> {
    check_solution(u, problem)?;
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("truncation level {k} must be >= 0")));
    }
    if cyl.mode != CylinderMode::Boundary {
        return Err(Error::InvalidArgument("Caccioppoli cylinders are boundary cylinders".into()));
    }
    cyl.validate(&problem.grid, u.t0(), u.t_end())?;
    let grid = &problem.grid;
    let p = problem.p;
    let q = problem.coeffs.q;
    let wp = WeightedMeasure::new(grid, p)?;
    let w = wp.weights();
    let vol = grid.cell_volume();
    let mask = cyl.spatial_mask(grid);
    let nodes: Vec<Point> = grid.nodes().collect();
    let closed = cyl.closed_slices(u);
    let quad = cyl.quadrature_slices(u);
    if closed.is_empty() {
        return Err(Error::CylinderOutside("no time slice inside the cylinder".into()));
    }
    let dt = u.dt();

    let truncated = |m: usize| -> Vec<f64> {
        let t = u.time(m);
        u.slice(m)
            .iter()
            .zip(&nodes)
            .map(|(&v, &x)| (cutoff.xi)(x, t) * (v - k).max(0.0))
            .collect()
    };
    let mass_energy = |m: usize, v: &[f64]| -> f64 {
        let t = u.time(m);
        (0..v.len()).filter(|&i| mask[i]).map(|i| problem.coeffs.a.eval(nodes[i], t) * w[i] * v[i] * v[i]).sum()
    };

    let mut sup_mass = 0.0f64;
    for &m in &closed {
        sup_mass = sup_mass.max(mass_energy(m, &truncated(m)));
    }
    let initial = 2.0 * mass_energy(closed[0], &truncated(closed[0]));

    let (mut grad_energy, mut cutoff_term, mut l2, mut l2p, mut level, mut level_p) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &m in &quad {
        let t = u.time(m);
        let v = truncated(m);
        let g = gradient_slice(grid, u.trace(), &v);
        let um = u.slice(m);
        for i in (0..v.len()).filter(|&i| mask[i]) {
            let x = nodes[i];
            grad_energy += dt * vol * g.norm_sq(i);
            let plus = (um[i] - k).max(0.0);
            let xi = (cutoff.xi)(x, t);
            let dxi = (cutoff.grad[0])(x, t).powi(2) + (cutoff.grad[1])(x, t).powi(2);
            cutoff_term += dt * plus * plus * (dxi * vol + (xi * (cutoff.dt)(x, t)).abs() * w[i]);
            l2 += dt * vol * (plus * xi).powi(2);
            l2p += dt * w[i] * (plus * xi).powi(2);
            if um[i] > k {
                level += dt * vol;
                level_p += dt * w[i];
            }
        }
    }
    let lhs = sup_mass.max(problem.coeffs.lambda * grad_energy);
    let f1 = f1_norm(u, problem)?;
    let e = 1.0 - 1.0 / q;
    let measure_term = (k * k + f1 * f1) * (level.powf(e) + level_p.powf(e));
    Ok(EstimateReport::new("caccioppoli", grid.dim(), p, &grid.label(), lhs, vec![initial, cutoff_term, l2, l2p, measure_term])
        .with_param("k", k)
        .with_param("radius", cyl.radius)
        .with_param("f1", f1))
}

/// `v2_norm(u)` against `F_0 = |f|_{r0, x^p} + |f_0|_{r0} + sum |f_j|_2`.
pub fn energy_estimate_ratio(u: &TimeGridFunction, problem: &DegenerateProblem) -> Result<EstimateReport> {
    check_solution(u, problem)?;
    if problem.mode != BoundaryMode::Full {
        return Err(Error::Precondition("the energy estimate needs the full boundary condition".into()));
    }
    let lhs = crate::grid::v2_norm(u, problem.p)?;
    let pieces = if problem.sources.is_zero() {
        vec![0.0]
    } else {
        problem.source_norms(u.slice_count() - 1)?.f0_pieces.to_vec()
    };
    Ok(EstimateReport::new("energy", problem.n(), problem.p, &problem.grid.label(), lhs, pieces))
}

/// `(sup_t int |grad u|^2 + int int x^p |u_t|^2)` against `int int x^p f^2`,
/// with backward differences in time.
pub fn w12_estimate_ratio(u: &TimeGridFunction, special: &SpecialStructureProblem) -> Result<EstimateReport> {
    let problem = &special.problem;
    check_solution(u, problem)?;
    if !(special.lambda_bar > 0.0) {
        return Err(Error::Precondition("missing coercivity certificate".into()));
    }
    let grid = &problem.grid;
    let wp = WeightedMeasure::new(grid, problem.p)?;
    let w = wp.weights();
    let dt = u.dt();
    let nodes: Vec<Point> = grid.nodes().collect();
    let (mut sup_grad, mut ut, mut rhs) = (0.0f64, 0.0, 0.0);
    for m in 0..u.slice_count() {
        sup_grad = sup_grad.max(crate::grid::dirichlet_energy_slice(grid, u.trace(), u.slice(m)));
        if m == 0 {
            continue;
        }
        let t = u.time(m);
        let (cur, prev) = (u.slice(m), u.slice(m - 1));
        for i in 0..cur.len() {
            let d = (cur[i] - prev[i]) / dt;
            ut += dt * w[i] * d * d;
            rhs += dt * w[i] * problem.sources.f.eval(nodes[i], t).powi(2);
        }
    }
    Ok(EstimateReport::new("w12", problem.n(), problem.p, &grid.label(), sup_grad + ut, vec![rhs])
        .with_param("sup_grad", sup_grad)
        .with_param("time_derivative", ut)
        .with_param("lambda_bar", special.lambda_bar))
}

/// Pieces of the weak maximum principle bound.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPrincipleGap {
    pub sup_norm: f64,
    pub boundary_sup: f64,
    pub f1: f64,
    /// `|Q|^{(1-1/q-1/chi)/2}`, with `|Q|_p` for `p < 0`.
    pub measure_factor: f64,
    pub min_value: f64,
}

impl MaxPrincipleGap {
    /// `|u|_inf - sup_boundary |u| - c F_1 |Q|^e`; nonpositive when the bound holds.
    pub fn gap(&self, c: f64) -> f64 {
        self.sup_norm - self.boundary_sup - c * self.f1 * self.measure_factor
    }

    /// Smallest constant making the bound hold (0 when the boundary term suffices).
    pub fn required_constant(&self) -> f64 {
        let excess = (self.sup_norm - self.boundary_sup).max(0.0);
        if excess == 0.0 {
            0.0
        } else if self.f1 * self.measure_factor == 0.0 {
            f64::INFINITY
        } else {
            excess / (self.f1 * self.measure_factor)
        }
    }

    pub fn to_report(&self, problem: &DegenerateProblem) -> EstimateReport {
        EstimateReport::new(
            "max_principle",
            problem.n(),
            problem.p,
            &problem.grid.label(),
            (self.sup_norm - self.boundary_sup).max(0.0),
            vec![self.f1 * self.measure_factor],
        )
        .with_param("sup_norm", self.sup_norm)
        .with_param("boundary_sup", self.boundary_sup)
        .with_param("min", self.min_value)
    }
}

pub fn max_principle_gap(u: &TimeGridFunction, problem: &DegenerateProblem) -> Result<MaxPrincipleGap> {
    check_solution(u, problem)?;
    let co = &problem.coeffs;
    if !co.d.iter().all(Field::is_zero) {
        return Err(Error::Precondition("the maximum principle needs d_j = 0".into()));
    }
    let grid = &problem.grid;
    let nodes: Vec<Point> = grid.nodes().collect();
    for m in 0..u.slice_count() {
        let t = u.time(m);
        if nodes.iter().any(|&x| co.c.eval(x, t) < 0.0) {
            return Err(Error::Precondition(format!("c < 0 at t = {t}")));
        }
    }
    // parabolic boundary: initial slice and the non-degenerate faces
    let mut boundary_sup = u.slice(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if problem.mode == BoundaryMode::Partial {
        let faces = boundary_face_points(grid);
        for m in 0..u.slice_count() {
            let t = u.time(m);
            for &x in &faces {
                boundary_sup = boundary_sup.max(problem.boundary.eval(x, t).abs());
            }
        }
    }
    let chi = problem.chi()?;
    let span = problem.t_end - problem.t_start;
    let measure = if problem.p < 0.0 { WeightedMeasure::new(grid, problem.p)?.total() * span } else { grid.domain_volume() * span };
    let exponent = 0.5 * (1.0 - 1.0 / co.q - 1.0 / chi);
    Ok(MaxPrincipleGap {
        sup_norm: u.max_abs(),
        boundary_sup,
        f1: f1_norm(u, problem)?,
        measure_factor: measure.powf(exponent),
        min_value: u.values().iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// Face centers of the top and (in 2D) lateral faces.
fn boundary_face_points(grid: &HalfDomainGrid) -> Vec<Point> {
    let mut out = Vec::new();
    let top = grid.normal_top();
    let w = grid.lateral_half_width();
    for j in 0..grid.lateral_cells() {
        out.push(Point::new(if grid.dim() == 1 { 0.0 } else { grid.lateral_center(j) }, top));
    }
    if grid.dim() == 2 {
        for i in 0..grid.normal_cells() {
            out.push(Point::new(-w, grid.normal_center(i)));
            out.push(Point::new(w, grid.normal_center(i)));
        }
    }
    out
}

/// `|u|_{L^inf(Q_{R/2})}` against `R^{-(n+p+2)/gamma} |u|_{L^gamma(Q_R)}`
/// and `F_1 R^{1-(n+p+2)/(2q)}`, `q` the problem's declared exponent.
pub fn local_boundedness_sides(u: &TimeGridFunction, problem: &DegenerateProblem, cyl: &IntrinsicCylinder, gamma: f64) -> Result<EstimateReport> {
    check_solution(u, problem)?;
    if cyl.mode != CylinderMode::Boundary {
        return Err(Error::InvalidArgument("local boundedness uses boundary cylinders".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be positive")));
    }
    cyl.validate(&problem.grid, u.t0(), u.t_end())?;
    let grid = &problem.grid;
    let half = cyl.with_radius(0.5 * cyl.radius);
    let half_mask = half.spatial_mask(grid);
    let mut lhs = 0.0f64;
    for m in half.closed_slices(u) {
        for (i, v) in u.slice(m).iter().enumerate() {
            if half_mask[i] {
                lhs = lhs.max(v.abs());
            }
        }
    }
    let mask = cyl.spatial_mask(grid);
    let vol = grid.cell_volume();
    let mut integral = 0.0;
    for m in cyl.quadrature_slices(u) {
        for (i, v) in u.slice(m).iter().enumerate() {
            if mask[i] {
                integral += u.dt() * vol * v.abs().powf(gamma);
            }
        }
    }
    let n = problem.n() as f64;
    let (p, r, q) = (problem.p, cyl.radius, problem.coeffs.q);
    let first = r.powf(-(n + p + 2.0) / gamma) * integral.powf(1.0 / gamma);
    let second = f1_norm(u, problem)? * r.powf(1.0 - (n + p + 2.0) / (2.0 * q));
    Ok(EstimateReport::new("local_boundedness", problem.n(), p, &grid.label(), lhs, vec![first, second])
        .with_param("gamma", gamma)
        .with_param("radius", r))
}

/// `omega(R) = sup - inf` of `u` over nested intrinsic cylinders.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillationProfile {
    pub center: Point,
    pub time: f64,
    pub mode: CylinderMode,
    pub p: f64,
    /// Increasing.
    pub radii: Vec<f64>,
    pub omega: Vec<f64>,
    /// `|u|_inf` over the largest cylinder.
    pub normalizer: f64,
}

impl OscillationProfile {
    /// Profile with prescribed values, for synthetic checks.
    pub fn synthetic(radii: Vec<f64>, omega: Vec<f64>) -> Self {
        Self { center: Point::normal(0.0), time: 0.0, mode: CylinderMode::Boundary, p: 0.0, radii, omega, normalizer: 1.0 }
    }

    /// CSV `R,omega`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("R,omega\n");
        for (r, w) in self.radii.iter().zip(&self.omega) {
            s.push_str(&format!("{},{}\n", g17(*r), g17(*w)));
        }
        s
    }
}

/// Points on the sphere of radius `r` around `c` inside the domain.
fn sphere_points(grid: &HalfDomainGrid, c: Point, r: f64) -> Vec<Point> {
    let top = grid.normal_top();
    let inside = |x: Point| x.normal >= 0.0 && x.normal <= top && x.lateral.abs() <= grid.lateral_half_width();
    if grid.dim() == 1 {
        return [c.normal - r, c.normal + r].into_iter().map(Point::normal).filter(|&x| inside(x)).collect();
    }
    (0..128)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / 128.0;
            Point::new(c.lateral + r * th.cos(), c.normal + r * th.sin())
        })
        .filter(|&x| inside(x))
        .collect()
}

/// Oscillation over the cylinders of the given radii (invalid radii are
/// skipped). Each cylinder is sampled at its nodes, its center and the
/// spheres of all profile radii it contains, so `omega` is monotone in `R`.
pub fn oscillation_profile(u: &TimeGridFunction, p: f64, center: Point, time: f64, mode: CylinderMode, radii: &[f64]) -> Result<OscillationProfile> {
    let grid = u.grid().clone();
    let mut rs: Vec<f64> = radii.to_vec();
    rs.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
    rs.dedup();
    let mut cyls = Vec::new();
    for &r in &rs {
        let c = IntrinsicCylinder::new(center, time, r, mode, p)?;
        if c.validate(&grid, u.t0(), u.t_end()).is_ok() {
            cyls.push(c);
        }
    }
    if cyls.len() < 4 {
        return Err(Error::InvalidArgument(format!("{} valid radii, at least 4 needed", cyls.len())));
    }
    let mut extra: Vec<Point> = vec![center];
    let mut omega = Vec::with_capacity(cyls.len());
    let mut normalizer = 0.0;
    for cyl in &cyls {
        extra.extend(sphere_points(&grid, center, cyl.radius));
        let mask = cyl.spatial_mask(&grid);
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut abs = 0.0f64;
        for m in cyl.closed_slices(u) {
            let s = u.slice(m);
            for (i, &v) in s.iter().enumerate() {
                if mask[i] {
                    hi = hi.max(v);
                    lo = lo.min(v);
                    abs = abs.max(v.abs());
                }
            }
            for &x in &extra {
                let v = u.eval_on_slice(m, x);
                hi = hi.max(v);
                lo = lo.min(v);
            }
        }
        omega.push(if hi >= lo { hi - lo } else { 0.0 });
        normalizer = abs;
    }
    Ok(OscillationProfile {
        center,
        time,
        mode,
        p,
        radii: cyls.iter().map(|c| c.radius).collect(),
        omega,
        normalizer,
    })
}

/// Least-squares fit `log omega = alpha log R + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderFit {
    pub alpha: f64,
    pub intercept: f64,
    /// Coefficient of determination.
    pub r_squared: f64,
    pub radii: Vec<f64>,
    /// Fewer than 4 positive oscillations: `alpha = 0` by convention.
    pub flat: bool,
}

/// Default window: drop the two largest radii, keeping at least four.
pub fn holder_exponent_fit(profile: &OscillationProfile) -> Result<HolderFit> {
    holder_exponent_fit_window(profile, 2)
}

pub fn holder_exponent_fit_window(profile: &OscillationProfile, drop_largest: usize) -> Result<HolderFit> {
    let mut pairs: Vec<(f64, f64)> = profile.radii.iter().cloned().zip(profile.omega.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite radii"));
    if pairs.len() >= 2 && pairs.first().map(|p| p.0) == pairs.last().map(|p| p.0) {
        return Err(Error::DegenerateFit("all radii are equal".into()));
    }
    let drop = drop_largest.min(pairs.len().saturating_sub(4));
    pairs.truncate(pairs.len() - drop);
    pairs.retain(|&(r, w)| w > 0.0 && r > 0.0);
    let radii: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    if pairs.len() < 4 {
        return Ok(HolderFit { alpha: 0.0, intercept: 0.0, r_squared: 0.0, radii, flat: true });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("fitted radii are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - alpha * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(HolderFit { alpha, intercept, r_squared, radii, flat: false })
}

/// Manufactured problems on a ladder of grids.
#[derive(Clone, Debug)]
pub struct ManufacturedFamily {
    pub dim: usize,
    pub p: f64,
    pub exact: ExactSolution,
    pub coeffs: CoefficientField,
    /// `dt = dt_scale * h^dt_power`.
    pub dt_scale: f64,
    pub dt_power: i32,
    pub eps: f64,
    pub basis: usize,
}

impl ManufacturedFamily {
    pub fn new(dim: usize, p: f64, exact: ExactSolution) -> Result<Self> {
        Ok(Self { dim, p, exact, coeffs: CoefficientField::heat(dim, p)?, dt_scale: 1.0, dt_power: 2, eps: 0.0, basis: 3 })
    }

    /// Square cells: `N` in 1D, `2N x N` in 2D.
    pub fn grid(&self, cells: usize) -> Result<Arc<HalfDomainGrid>> {
        Ok(Arc::new(if self.dim == 1 { HalfDomainGrid::new_1d(cells)? } else { HalfDomainGrid::new_2d(2 * cells, cells)? }))
    }

    pub fn problem(&self, cells: usize) -> Result<DegenerateProblem> {
        manufactured_problem(self.grid(cells)?, self.p, &self.exact, self.coeffs.clone())
    }

    pub fn dt(&self, cells: usize) -> f64 {
        self.dt_scale * (1.0 / cells as f64).powi(self.dt_power)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub dt: f64,
    /// Weighted `L^2` error at the final time.
    pub err_l2: f64,
    pub err_inf: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Between consecutive rows; `None` when undefined.
    pub order_l2: Vec<Option<f64>>,
    pub order_inf: Vec<Option<f64>>,
    pub order_residual: Vec<Option<f64>>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cells,h,dt,err_l2,err_inf,residual\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.cells, g17(r.h), g17(r.dt), g17(r.err_l2), g17(r.err_inf), g17(r.residual)));
        }
        s
    }
}

/// Errors below this are treated as solver noise.
const NOISE_FLOOR: f64 = 1e-12;

/// Observed orders `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; undefined when
/// the errors do not decrease or sit at the noise floor.
pub fn convergence_orders(h: &[f64], err: &[f64]) -> Vec<Option<f64>> {
    (0..h.len().saturating_sub(1))
        .map(|i| {
            let (e0, e1) = (err[i], err[i + 1]);
            if e0 <= NOISE_FLOOR || e1 <= NOISE_FLOOR || e1 >= e0 {
                None
            } else {
                Some((e0 / e1).ln() / (h[i] / h[i + 1]).ln())
            }
        })
        .collect()
}

/// Solves the family on each grid and tabulates final-time errors against
/// the exact solution and the weak residual.
pub fn grid_convergence_study(family: &ManufacturedFamily, ladder: &[usize]) -> Result<ConvergenceTable> {
    if ladder.len() < 3 {
        return Err(Error::InvalidArgument("a convergence study needs at least 3 grids".into()));
    }
    let rows: Result<Vec<ConvergenceRow>> = ladder
        .par_iter()
        .map(|&cells| {
            let problem = family.problem(cells)?;
            let dt = family.dt(cells);
            let u = solve_regularized(&problem, family.eps, &SolverSettings::with_dt(dt))?;
            let grid = &problem.grid;
            let wp = WeightedMeasure::new(grid, family.p)?;
            let last = u.slice(u.slice_count() - 1);
            let t = u.t_end();
            let (mut l2, mut inf) = (0.0, 0.0f64);
            for (i, x) in grid.nodes().enumerate() {
                let e = last[i] - family.exact.eval(x, t);
                l2 += wp.weights()[i] * e * e;
                inf = inf.max(e.abs());
            }
            let residual = weak_residual(&u, &problem, family.basis)?;
            Ok(ConvergenceRow { cells, h: grid.h(), dt, err_l2: l2.sqrt(), err_inf: inf, residual })
        })
        .collect();
    let rows = rows?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| convergence_orders(&h, &rows.iter().map(f).collect::<Vec<_>>());
    Ok(ConvergenceTable {
        order_l2: col(|r| r.err_l2),
        order_inf: col(|r| r.err_inf),
        order_residual: col(|r| r.residual),
        rows,
    })
}

/// Outcome of comparing a rescaled solve with the restricted reference.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceCheck {
    pub cells: usize,
    /// Spacing of the rescaled grid.
    pub h: f64,
    pub max_diff: f64,
    /// `|u|_inf` of the reference on the restricted cylinder.
    pub scale: f64,
}

/// Solves the problem rescaled to `Q_R^+(x0, t0)` with boundary and initial
/// data taken from `reference` and compares with `reference` restricted to
/// the cylinder. The rescaled time step is `dt_factor * dt_ref / R^{p+2}`,
/// so every rescaled time level is a reference level.
pub fn scaling_covariance(
    problem: &DegenerateProblem,
    reference: &TimeGridFunction,
    x0: Point,
    t0: f64,
    r: f64,
    cells: usize,
    dt_factor: usize,
) -> Result<CovarianceCheck> {
    check_solution(reference, problem)?;
    let grid = &problem.grid;
    if x0.normal != 0.0 || x0.lateral.abs() + r * grid.lateral_half_width() > grid.lateral_half_width() + 1e-12 || r > 1.0 {
        return Err(Error::CylinderOutside("rescaled cylinder must sit on the flat face inside the domain".into()));
    }
    let tau = r.powf(problem.p + 2.0);
    if t0 - tau < reference.t0() - 1e-12 || t0 > reference.t_end() + 1e-12 {
        return Err(Error::CylinderOutside("rescaled time window outside the reference range".into()));
    }
    let small = Arc::new(if grid.dim() == 1 {
        HalfDomainGrid::new_1d(cells)?
    } else {
        HalfDomainGrid::new_2d(2 * cells, cells)?
    });
    let ref_u = Arc::new(reference.clone());
    let to_phys = move |x: Point, t: f64| (Point::new(x0.lateral + r * x.lateral, x0.normal + r * x.normal), t0 + tau * t);
    let lookup = {
        let ref_u = ref_u.clone();
        move |x: Point, t: f64| -> f64 {
            let (y, s) = to_phys(x, t);
            let pos = (s - ref_u.t0()) / ref_u.dt();
            let m = pos.floor().max(0.0) as usize;
            let m = m.min(ref_u.slice_count() - 1);
            let frac = pos - m as f64;
            if frac.abs() < 1e-9 || m + 1 >= ref_u.slice_count() {
                ref_u.eval_on_slice(m, y)
            } else {
                (1.0 - frac) * ref_u.eval_on_slice(m, y) + frac * ref_u.eval_on_slice(m + 1, y)
            }
        }
    };
    let data = Field::custom(lookup.clone());
    let rescaled = problem.rescaled(small.clone(), x0, t0, r, data.clone(), data)?;
    let dt = dt_factor as f64 * reference.dt() / tau;
    let u = solve_regularized(&rescaled, 0.0, &SolverSettings::with_dt(dt))?;
    let (mut max_diff, mut scale) = (0.0f64, 0.0f64);
    for m in 0..u.slice_count() {
        let t = u.time(m);
        for (i, x) in small.nodes().enumerate() {
            let v = lookup(x, t);
            scale = scale.max(v.abs());
            max_diff = max_diff.max((u.slice(m)[i] - v).abs());
        }
    }
    Ok(CovarianceCheck { cells, h: small.h(), max_diff, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Trace;
    use crate::problem::SourceData;

    fn g1(n: usize) -> Arc<HalfDomainGrid> {
        Arc::new(HalfDomainGrid::new_1d(n).unwrap())
    }

    #[test]
    fn oscillation_of_powers() {
        let g = g1(64);
        let radii: Vec<f64> = (1..=6).map(|j| 0.5f64.powi(j)).collect();
        let u = TimeGridFunction::from_fn(g.clone(), -1.0, 0.25, 4, Trace::Partial, |x, _| x.normal).unwrap();
        let prof = oscillation_profile(&u, 1.0, Point::normal(0.0), 0.0, CylinderMode::Boundary, &radii).unwrap();
        for (r, w) in prof.radii.iter().zip(&prof.omega) {
            assert!((w - r).abs() < 1e-14, "{r}: {w}");
        }
        let s = TimeGridFunction::from_fn(g.clone(), -1.0, 0.25, 4, Trace::Partial, |x, _| x.normal.sqrt()).unwrap();
        // radii at cell centers, where the reconstruction is exact
        let centers: Vec<f64> = [31usize, 15, 7, 3].iter().map(|&i| (i as f64 + 0.5) / 64.0).collect();
        let prof = oscillation_profile(&s, 1.0, Point::normal(0.0), 0.0, CylinderMode::Boundary, &centers).unwrap();
        for (r, w) in prof.radii.iter().zip(&prof.omega) {
            assert!((w - r.sqrt()).abs() < 1e-14);
        }
        let c = TimeGridFunction::from_fn(g, -1.0, 0.25, 4, Trace::Full, |_, _| 0.0).unwrap();
        let prof = oscillation_profile(&c, 1.0, Point::normal(0.0), 0.0, CylinderMode::Boundary, &radii).unwrap();
        assert!(prof.omega.iter().all(|&w| w == 0.0));
        assert!(holder_exponent_fit(&prof).unwrap().flat);
    }

    #[test]
    fn modes_coincide_at_p_zero() {
        let g = Arc::new(HalfDomainGrid::new_2d(16, 8).unwrap());
        let u = TimeGridFunction::from_fn(g, -1.0, 1.0 / 16.0, 16, Trace::Full, |x, t| (x.normal * 3.0 + t).sin() * (1.0 + x.lateral)).unwrap();
        let radii = [0.125, 0.25, 0.5, 0.75];
        let b = oscillation_profile(&u, 0.0, Point::normal(0.0), 0.0, CylinderMode::Boundary, &radii).unwrap();
        let i = oscillation_profile(&u, 0.0, Point::normal(0.0), 0.0, CylinderMode::Interior, &radii).unwrap();
        assert_eq!(b.omega, i.omega);
        assert!(b.omega.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fit_recovers_powers() {
        let radii: Vec<f64> = (0..8).map(|j| 0.5 * 0.5f64.powi(j)).collect();
        let omega = radii.iter().map(|r: &f64| r.powf(0.7)).collect();
        let fit = holder_exponent_fit(&OscillationProfile::synthetic(radii.clone(), omega)).unwrap();
        assert!((fit.alpha - 0.7).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.radii.len(), 6);
        let same = OscillationProfile::synthetic(vec![0.1; 4], vec![1.0; 4]);
        assert!(matches!(holder_exponent_fit(&same), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn orders_flag_noise() {
        let h = [0.1, 0.05, 0.025];
        assert_eq!(convergence_orders(&h, &[1e-14, 1e-15, 1e-15]), vec![None, None]);
        let o = convergence_orders(&h, &[4.0, 1.0, 0.25]);
        assert!((o[0].unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(convergence_orders(&h, &[1.0, 2.0, 1.0])[0], None);
    }

    #[test]
    fn zero_problem_estimates() {
        let g = g1(16);
        let pr = DegenerateProblem::full(g.clone(), 1.0, CoefficientField::heat(1, 1.0).unwrap(), SourceData::zero()).unwrap();
        let u = solve_regularized(&pr, 0.0, &SolverSettings::with_dt(1.0 / 16.0)).unwrap();
        let e = energy_estimate_ratio(&u, &pr).unwrap();
        assert_eq!(e.ratio, 0.0);
        let cyl = IntrinsicCylinder::new(Point::normal(0.0), 0.0, 0.5, CylinderMode::Boundary, 1.0).unwrap();
        let c = caccioppoli_sides(&u, &pr, &cyl, 0.0, &Cutoff::standard(&cyl)).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        let l = local_boundedness_sides(&u, &pr, &cyl, 2.0).unwrap();
        assert_eq!((l.lhs, l.rhs), (0.0, 0.0));
        let m = max_principle_gap(&u, &pr).unwrap();
        assert_eq!(m.sup_norm, 0.0);
        assert!(m.gap(0.0) <= 0.0);
    }
}
