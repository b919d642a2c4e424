//! Finite-volume assembly of the regularized equation
//! `a (x_n+eps)^p u_t - D_j(a_ij D_i u + d_j u) + b_i D_i u + c (x_n+eps)^p u + c_0 u
//!  = (x_n+eps)^p f + f_0 - D_i f_i`,
//! backward-Euler marching, the eps-continuation to the degenerate limit and
//! the weak-form audit.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, Point};
use crate::grid::{gradient_slice, v2_norm, HalfDomainGrid, TimeGridFunction, WeightedMeasure};
use crate::linalg::{pcg, BandedLu, CsrMatrix, SolveStats, TripletBuilder};
use crate::problem::{BoundaryMode, DegenerateProblem, LAT, NOR};

/// Péclet number above which the convection term is upwinded.
const PECLET_LIMIT: f64 = 2.0;

/// Linear-solve and continuation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Time step; `None` selects `h^2`.
    pub dt: Option<f64>,
    /// Relative residual for conjugate gradients.
    pub tol: f64,
    pub max_iter: usize,
    pub eps0: f64,
    pub eps_ratio: f64,
    /// Stopping threshold on successive V2 distances.
    pub continuation_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { dt: None, tol: 1e-10, max_iter: 100_000, eps0: 0.1, eps_ratio: 0.5, continuation_tol: 1e-4 }
    }
}

impl SolverSettings {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt: Some(dt), ..Self::default() }
    }

    pub fn time_step(&self, grid: &HalfDomainGrid) -> f64 {
        self.dt.unwrap_or_else(|| grid.h() * grid.h())
    }
}

/// Spatial discretization at one time: `M u_t + L u = rhs`.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub eps: f64,
    pub t: f64,
    pub operator: CsrMatrix,
    /// Diagonal mass `a * int_cell (x_n + eps)^p`.
    pub mass: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Rows of cells with a face on the Dirichlet boundary.
    pub boundary_rows: Vec<bool>,
    /// True when `d = b = 0` and `A` is symmetric.
    pub symmetric: bool,
}

/// Affine expression `sum coef * u[idx] + constant`.
#[derive(Clone, Debug, Default)]
struct Affine {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn cell(k: usize) -> Self {
        Self { terms: vec![(k, 1.0)], constant: 0.0 }
    }

    /// `2 g - self`, the mirror ghost across a Dirichlet face with value `g`.
    fn mirrored(mut self, g: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 = -t.1);
        self.constant = 2.0 * g - self.constant;
        self
    }

    fn axpy(&mut self, s: f64, other: &Affine) {
        self.terms.extend(other.terms.iter().map(|&(k, c)| (k, s * c)));
        self.constant += s * other.constant;
    }
}

struct Assembler<'a> {
    pr: &'a DegenerateProblem,
    grid: &'a HalfDomainGrid,
    t: f64,
    full: bool,
}

impl Assembler<'_> {
    /// Dirichlet value on the non-degenerate faces.
    fn data(&self, x: Point) -> f64 {
        if self.full {
            0.0
        } else {
            self.pr.boundary.eval(x, self.t)
        }
    }

    /// Value of cell `(j, i)` or of its mirror ghost outside the grid.
    fn cell(&self, j: isize, i: isize) -> Affine {
        let g = self.grid;
        let (nl, nn) = (g.lateral_cells() as isize, g.normal_cells() as isize);
        let clamp_l = |j: isize| g.lateral_center(j.clamp(0, nl - 1) as usize);
        let clamp_n = |i: isize| g.normal_center(i.clamp(0, nn - 1) as usize);
        if i < 0 {
            return self.cell(j, -1 - i).mirrored(0.0);
        }
        if i >= nn {
            let face = Point::new(clamp_l(j), g.normal_top());
            return self.cell(j, 2 * nn - 1 - i).mirrored(self.data(face));
        }
        if j < 0 {
            let face = Point::new(-g.lateral_half_width(), clamp_n(i));
            return self.cell(-1 - j, i).mirrored(self.data(face));
        }
        if j >= nl {
            let face = Point::new(g.lateral_half_width(), clamp_n(i));
            return self.cell(2 * nl - 1 - j, i).mirrored(self.data(face));
        }
        Affine::cell(g.index(j as usize, i as usize))
    }
}

/// Assembles `L`, `M` and the right-hand side at time `t`.
pub fn assemble_system(problem: &DegenerateProblem, eps: f64, t: f64) -> Result<DiscreteSystem> {
    problem.coeffs.check_ellipticity(&problem.grid, &[t])?;
    assemble(problem, eps, t, true, None)
}

/// With `with_matrix = false` only the right-hand side is filled; the
/// coefficient-dependent parts of it are confined to boundary cells.
fn assemble(pr: &DegenerateProblem, eps: f64, t: f64, with_matrix: bool, weights: Option<&[f64]>) -> Result<DiscreteSystem> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("regularization {eps} must be >= 0")));
    }
    let grid: &HalfDomainGrid = &pr.grid;
    let co = &pr.coeffs;
    let src = &pr.sources;
    let p = pr.p;
    let n = grid.len();
    let (nl, nn) = (grid.lateral_cells(), grid.normal_cells());
    let (hl, hn) = (grid.h_lateral(), grid.h_normal());
    let vol = grid.cell_volume();
    let two_d = grid.dim() == 2;
    let full = pr.mode == BoundaryMode::Full;
    let asm = Assembler { pr, grid, t, full };
    let owned;
    let w = match weights {
        Some(w) => w,
        None => {
            owned = WeightedMeasure::shifted(grid, p, eps)?;
            owned.weights()
        }
    };

    let mut mat = TripletBuilder::new(if with_matrix { n } else { 0 });
    let mut add = |i: usize, j: usize, v: f64| {
        if with_matrix {
            mat.add(i, j, v);
        }
    };
    let mut mass = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut boundary_rows = vec![false; n];
    let damp = |xn: f64| co.drift_factor(xn, p, eps);

    // cell terms: mass, reaction, weighted and unweighted sources
    let mut fn_nodes = vec![0.0; n];
    let mut fl_nodes = vec![0.0; n];
    for k in 0..n {
        let x = grid.node(k);
        if with_matrix {
            mass[k] = co.a.eval(x, t) * w[k];
            add(k, k, co.c.eval(x, t) * w[k] + co.c0.eval(x, t) * vol);
        }
        rhs[k] += src.f.eval(x, t) * w[k] + src.f0.eval(x, t) * vol;
        fn_nodes[k] = src.fi[NOR].eval(x, t);
        if two_d {
            fl_nodes[k] = src.fi[LAT].eval(x, t);
        }
    }

    // normal faces
    for j in 0..nl {
        let xl = grid.lateral_center(j);
        for f in 0..=nn {
            let face = Point::new(xl, f as f64 * hn);
            let on_boundary = f == 0 || f == nn;
            let (a, d) = if with_matrix || on_boundary {
                (co.diffusion[NOR][NOR].eval(face, t), co.d[NOR].eval(face, t) * damp(face.normal))
            } else {
                (0.0, 0.0)
            };
            if on_boundary {
                let (k, sign, g) = if f == 0 {
                    (grid.index(j, 0), -1.0, 0.0)
                } else {
                    (grid.index(j, nn - 1), 1.0, asm.data(face))
                };
                boundary_rows[k] = true;
                let coef = 2.0 * a * hl / hn;
                add(k, k, coef);
                rhs[k] += coef * g - sign * d * g * hl;
                let (k0, k1) = if f == 0 {
                    (grid.index(j, 0), grid.index(j, 1))
                } else {
                    (grid.index(j, nn - 1), grid.index(j, nn - 2))
                };
                let fface = 1.5 * fn_nodes[k0] - 0.5 * fn_nodes[k1];
                rhs[k] -= sign * fface * hl;
            } else {
                let (km, kp) = (grid.index(j, f - 1), grid.index(j, f));
                let coef = a * hl / hn;
                add(km, km, coef);
                add(km, kp, -coef);
                add(kp, kp, coef);
                add(kp, km, -coef);
                let dd = 0.5 * d * hl;
                add(km, km, -dd);
                add(km, kp, -dd);
                add(kp, km, dd);
                add(kp, kp, dd);
                let fface = 0.5 * (fn_nodes[km] + fn_nodes[kp]) * hl;
                rhs[km] -= fface;
                rhs[kp] += fface;
            }
        }
    }

    if two_d {
        // lateral faces
        for i in 0..nn {
            let xn = grid.normal_center(i);
            for f in 0..=nl {
                let face = Point::new(-grid.lateral_half_width() + f as f64 * hl, xn);
                let on_boundary = f == 0 || f == nl;
                let (a, d) = if with_matrix || on_boundary {
                    (co.diffusion[LAT][LAT].eval(face, t), co.d[LAT].eval(face, t) * damp(xn))
                } else {
                    (0.0, 0.0)
                };
                if on_boundary {
                    let (k, sign) = if f == 0 { (grid.index(0, i), -1.0) } else { (grid.index(nl - 1, i), 1.0) };
                    let g = asm.data(face);
                    boundary_rows[k] = true;
                    let coef = 2.0 * a * hn / hl;
                    add(k, k, coef);
                    rhs[k] += coef * g - sign * d * g * hn;
                    let (k0, k1) = if f == 0 {
                        (grid.index(0, i), grid.index(1, i))
                    } else {
                        (grid.index(nl - 1, i), grid.index(nl - 2, i))
                    };
                    let fface = 1.5 * fl_nodes[k0] - 0.5 * fl_nodes[k1];
                    rhs[k] -= sign * fface * hn;
                } else {
                    let (km, kp) = (grid.index(f - 1, i), grid.index(f, i));
                    let coef = a * hn / hl;
                    add(km, km, coef);
                    add(km, kp, -coef);
                    add(kp, kp, coef);
                    add(kp, km, -coef);
                    let dd = 0.5 * d * hn;
                    add(km, km, -dd);
                    add(km, kp, -dd);
                    add(kp, km, dd);
                    add(kp, kp, dd);
                    let fface = 0.5 * (fl_nodes[km] + fl_nodes[kp]) * hn;
                    rhs[km] -= fface;
                    rhs[kp] += fface;
                }
            }
        }

        // cross terms a_ln, a_nl through vertex gradients of the four
        // surrounding cells (ghosts mirrored across Dirichlet faces)
        for jv in 0..=nl {
            for iv in 0..=nn {
                if !with_matrix && jv > 0 && jv < nl && iv > 0 && iv < nn {
                    continue;
                }
                let xv = Point::new(-grid.lateral_half_width() + jv as f64 * hl, iv as f64 * hn);
                let a_ln = co.diffusion[LAT][NOR].eval(xv, t);
                let a_nl = co.diffusion[NOR][LAT].eval(xv, t);
                if a_ln == 0.0 && a_nl == 0.0 {
                    continue;
                }
                let mut wv = hl * hn;
                if jv == 0 || jv == nl {
                    wv *= 0.5;
                }
                if iv == 0 || iv == nn {
                    wv *= 0.5;
                }
                let (j, i) = (jv as isize, iv as isize);
                let sw = asm.cell(j - 1, i - 1);
                let se = asm.cell(j, i - 1);
                let nw = asm.cell(j - 1, i);
                let ne = asm.cell(j, i);
                let mut gl = Affine::default();
                gl.axpy(0.5 / hl, &se);
                gl.axpy(0.5 / hl, &ne);
                gl.axpy(-0.5 / hl, &sw);
                gl.axpy(-0.5 / hl, &nw);
                let mut gn = Affine::default();
                gn.axpy(0.5 / hn, &nw);
                gn.axpy(0.5 / hn, &ne);
                gn.axpy(-0.5 / hn, &sw);
                gn.axpy(-0.5 / hn, &se);
                // row k (test e_k): a_ln g_l(u) g_n(e_k) + a_nl g_n(u) g_l(e_k)
                for &(k, cnk) in &gn.terms {
                    let s = wv * a_ln * cnk;
                    for &(m, clm) in &gl.terms {
                        add(k, m, s * clm);
                    }
                    rhs[k] -= s * gl.constant;
                }
                for &(k, clk) in &gl.terms {
                    let s = wv * a_nl * clk;
                    for &(m, cnm) in &gn.terms {
                        add(k, m, s * cnm);
                    }
                    rhs[k] -= s * gn.constant;
                }
            }
        }
    }

    // convection b_i D_i u, centered unless the cell Péclet number is large
    if co.b.iter().any(|b| !b.is_zero()) {
        for j in 0..nl {
            for i in 0..nn {
                if !with_matrix && i > 0 && i + 1 < nn && j > 0 && j + 1 < nl {
                    continue;
                }
                let k = grid.index(j, i);
                let x = grid.node(k);
                let axes: &[(usize, f64, (isize, isize))] =
                    if two_d { &[(NOR, hn, (0, 1)), (LAT, hl, (1, 0))] } else { &[(NOR, hn, (0, 1))] };
                for &(axis, h, (dj, di)) in axes {
                    let b = co.b[axis].eval(x, t) * damp(x.normal);
                    if b == 0.0 {
                        continue;
                    }
                    let aii = co.diffusion[axis][axis].eval(x, t);
                    let (j0, i0) = (j as isize, i as isize);
                    let minus = asm.cell(j0 - dj, i0 - di);
                    let plus = asm.cell(j0 + dj, i0 + di);
                    let here = Affine::cell(k);
                    let mut du = Affine::default();
                    if b.abs() * h / aii <= PECLET_LIMIT {
                        du.axpy(0.5 / h, &plus);
                        du.axpy(-0.5 / h, &minus);
                    } else if b > 0.0 {
                        du.axpy(1.0 / h, &here);
                        du.axpy(-1.0 / h, &minus);
                    } else {
                        du.axpy(1.0 / h, &plus);
                        du.axpy(-1.0 / h, &here);
                    }
                    for &(m, c) in &du.terms {
                        add(k, m, vol * b * c);
                    }
                    rhs[k] -= vol * b * du.constant;
                }
            }
        }
    }

    if two_d {
        for j in 0..nl {
            boundary_rows[grid.index(j, 0)] = true;
            boundary_rows[grid.index(j, nn - 1)] = true;
        }
        for i in 0..nn {
            boundary_rows[grid.index(0, i)] = true;
            boundary_rows[grid.index(nl - 1, i)] = true;
        }
    }

    if (with_matrix && mass.iter().any(|m| !(*m > 0.0))) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assembled mass or right-hand side".into()));
    }
    let symmetric = co.symmetric && !co.has_drift();
    Ok(DiscreteSystem { eps, t, operator: mat.build(), mass, rhs, boundary_rows, symmetric })
}

/// Factorized or iterative solver for `M/dt + L`.
enum StepSolver {
    Cg(CsrMatrix),
    Lu(BandedLu),
}

impl StepSolver {
    /// Direct factorization when it is reused or cheap (narrow band),
    /// conjugate gradients for symmetric systems refactored every step.
    fn new(sys: &DiscreteSystem, dt: f64, reused: bool) -> Result<Self> {
        let a = sys.operator.add_diagonal(&sys.mass, 1.0 / dt);
        let direct = reused || !sys.symmetric || a.bandwidth() <= 2;
        Ok(if direct { StepSolver::Lu(BandedLu::factor(&a)?) } else { StepSolver::Cg(a) })
    }

    fn solve(&self, b: &[f64], x: &mut Vec<f64>, settings: &SolverSettings) -> Result<SolveStats> {
        match self {
            StepSolver::Cg(a) => pcg(a, b, x, settings.tol, settings.max_iter),
            StepSolver::Lu(lu) => {
                *x = lu.solve(b);
                Ok(SolveStats { iterations: 1, relative_residual: 0.0 })
            }
        }
    }
}

/// One backward-Euler step `(M/dt + L) u+ = (M/dt) u + rhs` with the
/// system assembled at the new time.
pub fn step_implicit(state: &[f64], system: &DiscreteSystem, dt: f64, settings: &SolverSettings) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let solver = StepSolver::new(system, dt, false)?;
    let b: Vec<f64> = (0..state.len()).map(|k| system.mass[k] * state[k] / dt + system.rhs[k]).collect();
    let mut x = state.to_vec();
    solver.solve(&b, &mut x, settings)?;
    Ok(x)
}

/// Number of steps covering the problem's time range with `dt`.
pub fn step_count(problem: &DegenerateProblem, dt: f64) -> Result<usize> {
    let range = problem.t_end - problem.t_start;
    let steps = (range / dt).round();
    if !(dt > 0.0) || steps < 1.0 || (steps * dt - range).abs() > 1e-9 * range {
        return Err(Error::InvalidArgument(format!("time range {range} is not a multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

/// Marches the regularized problem from the initial slice and returns all
/// slices.
pub fn solve_regularized(problem: &DegenerateProblem, eps: f64, settings: &SolverSettings) -> Result<TimeGridFunction> {
    let grid = problem.grid.clone();
    let dt = settings.time_step(&grid);
    let steps = step_count(problem, dt)?;
    let n = grid.len();
    let mut values = Vec::with_capacity((steps + 1) * n);
    let mut u: Vec<f64> = grid.nodes().map(|x| problem.initial.eval(x, problem.t_start)).collect();
    if problem.mode == BoundaryMode::Full && u.iter().any(|&v| v != 0.0) {
        return Err(Error::Precondition("full boundary mode needs zero initial data".into()));
    }
    values.extend_from_slice(&u);
    let is_static = problem.coeffs.is_static();
    let weights = WeightedMeasure::shifted(&grid, problem.p, eps)?;
    let mut cached: Option<(StepSolver, Vec<f64>)> = None;
    for m in 1..=steps {
        let t = problem.t_start + m as f64 * dt;
        let rhs = if is_static && cached.is_some() {
            assemble(problem, eps, t, false, Some(weights.weights()))?.rhs
        } else {
            let sys = assemble_system(problem, eps, t)?;
            cached = Some((StepSolver::new(&sys, dt, is_static)?, sys.mass));
            sys.rhs
        };
        let (solver, mass) = cached.as_ref().expect("assembled above");
        let b: Vec<f64> = (0..n).map(|k| mass[k] * u[k] / dt + rhs[k]).collect();
        let mut x = u.clone();
        solver.solve(&b, &mut x, settings)?;
        u = x;
        values.extend_from_slice(&u);
    }
    TimeGridFunction::new(grid, problem.t_start, dt, values, problem.trace())
}

/// Evidence of the eps-continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuationReport {
    /// `eps_0 > eps_1 > ...`, one entry per solve.
    pub schedule: Vec<f64>,
    /// `delta_k = |u_{eps_k} - u_{eps_{k+1}}|_{V_2}`.
    pub deltas: Vec<f64>,
    pub converged: bool,
    pub final_eps: f64,
}

impl ContinuationReport {
    /// CSV `eps,delta` rows; `delta` of row `k` compares `eps_k` with `eps_{k+1}`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,delta\n");
        for (e, d) in self.schedule.iter().zip(&self.deltas) {
            s.push_str(&format!("{},{}\n", crate::fmt::g17(*e), crate::fmt::g17(*d)));
        }
        s
    }
}

/// Solves at `eps_0, eps_0 r, eps_0 r^2, ...` until successive V2
/// distances drop below the tolerance or `eps` would fall below `h^2`.
pub fn solve_degenerate(problem: &DegenerateProblem, settings: &SolverSettings) -> Result<(TimeGridFunction, ContinuationReport)> {
    let (eps0, ratio) = (settings.eps0, settings.eps_ratio);
    if !(eps0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("continuation needs eps0 > 0 and 0 < ratio < 1 (got {eps0}, {ratio})")));
    }
    let floor = problem.grid.h().powi(2);
    let mut eps = eps0;
    let mut current = solve_regularized(problem, eps, settings)?;
    let mut report = ContinuationReport { schedule: vec![eps], deltas: Vec::new(), converged: false, final_eps: eps };
    let mut rising = 0;
    loop {
        let next_eps = eps * ratio;
        if next_eps < floor {
            break;
        }
        let next = solve_regularized(problem, next_eps, settings)?;
        let delta = v2_norm(&current.combine(1.0, &next, -1.0)?, problem.p)?;
        if let Some(&prev) = report.deltas.last() {
            rising = if delta >= prev { rising + 1 } else { 0 };
        }
        report.deltas.push(delta);
        report.schedule.push(next_eps);
        report.final_eps = next_eps;
        eps = next_eps;
        current = next;
        if delta <= settings.continuation_tol {
            report.converged = true;
            break;
        }
        if rising >= 3 {
            return Err(Error::Divergence { steps: report.deltas.len(), eps, delta });
        }
    }
    Ok((current, report))
}

/// Smallest eigenvalue of `int A grad phi . grad phi + c_0 phi^2` against
/// `int phi^2` over zero-trace grid functions at time `t`.
pub fn coercivity_constant(problem: &DegenerateProblem, t: f64) -> Result<f64> {
    let mut pr = problem.clone();
    pr.coeffs.d = [Field::zero(), Field::zero()];
    pr.coeffs.b = [Field::zero(), Field::zero()];
    pr.coeffs.c = Field::zero();
    pr.sources = Default::default();
    pr.mode = BoundaryMode::Full;
    pr.boundary = Field::zero();
    pr.initial = Field::zero();
    let sys = assemble(&pr, 0.0, t, true, None)?;
    let vol = pr.grid.cell_volume();
    let a = &sys.operator;
    let n = a.n;
    let mut x: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * ((k * 37) % 11) as f64).collect();
    let mut rq = f64::INFINITY;
    for _ in 0..200 {
        let nx = crate::linalg::norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = a.matvec(&x);
        let new_rq = crate::linalg::dot(&x, &ax) / vol;
        let mut y = x.clone();
        pcg(a, &x, &mut y, 1e-12, 100_000)?;
        x = y;
        if (new_rq - rq).abs() <= 1e-12 * new_rq.abs() {
            rq = new_rq;
            break;
        }
        rq = new_rq;
    }
    Ok(rq)
}

/// Tensor test functions `sin(k pi x_n) [sin(l pi (x_l + 1) / 2)] sin(m pi (t - t_0) / (2 T))`,
/// vanishing on the spatial boundary and at the initial time.
struct TestFunction {
    k: usize,
    l: usize,
    m: usize,
    t0: f64,
    span: f64,
    two_d: bool,
}

impl TestFunction {
    fn space(&self, x: Point) -> (f64, f64, f64) {
        let kn = self.k as f64 * PI;
        let (sn, cn) = ((kn * x.normal).sin(), (kn * x.normal).cos());
        if !self.two_d {
            return (sn, 0.0, kn * cn);
        }
        let kl = self.l as f64 * PI / 2.0;
        let arg = kl * (x.lateral + 1.0);
        let (sl, cl) = (arg.sin(), arg.cos());
        (sn * sl, sn * kl * cl, kn * cn * sl)
    }

    fn time(&self, t: f64) -> (f64, f64) {
        let w = self.m as f64 * PI / (2.0 * self.span);
        let arg = w * (t - self.t0);
        (arg.sin(), w * arg.cos())
    }
}

/// Largest absolute defect of the weak identity over a tensor basis of
/// `basis_size` modes per axis, evaluated at the final time. Space integrals
/// use node values with exact weights, time integrals the right-endpoint
/// rule of the march.
pub fn weak_residual(u: &TimeGridFunction, problem: &DegenerateProblem, basis_size: usize) -> Result<f64> {
    if **u.grid() != *problem.grid {
        return Err(Error::GridMismatch("solution and problem grids differ".into()));
    }
    if basis_size == 0 {
        return Err(Error::InvalidArgument("empty test basis".into()));
    }
    let grid = problem.grid.clone();
    let p = problem.p;
    let co = &problem.coeffs;
    let src = &problem.sources;
    let n = grid.len();
    let two_d = grid.dim() == 2;
    let wp = WeightedMeasure::new(&grid, p)?;
    let vol = grid.cell_volume();
    let nodes: Vec<Point> = grid.nodes().collect();
    let damp = |xn: f64| co.drift_factor(xn, p, 0.0);
    let slices = u.slice_count();
    let s_end = u.t_end();
    let span = s_end - u.t0();
    if (s_end - problem.t_end).abs() > 1e-9 || (u.t0() - problem.t_start).abs() > 1e-9 {
        return Err(Error::GridMismatch("solution does not cover the problem's time range".into()));
    }

    // per slice m >= 1: the space integrands against the spatial factor
    // psi and its gradient, gathered once per mode pair.
    struct SliceTerms {
        t: f64,
        // coefficients multiplying theta(t): sum_k [ ... ] with psi, and with d_t theta
        mass_dt: Vec<f64>,
        // x^p a u, times theta'(t)
        rest: Vec<f64>,
        grad_coef: [Vec<f64>; 2],
    }
    let mut terms = Vec::with_capacity(slices);
    let a_static = co.a.is_time_independent();
    let dadt = |x: Point, t: f64| {
        let h = 1e-6;
        (co.a.eval(x, t + h) - co.a.eval(x, t - h)) / (2.0 * h)
    };
    for m in 1..slices {
        let t = u.time(m);
        let um = u.slice(m);
        let grad = gradient_slice(&grid, u.trace(), um);
        let mut mass_dt = vec![0.0; n];
        let mut rest = vec![0.0; n];
        let mut gc = [vec![0.0; n], vec![0.0; n]];
        for k in 0..n {
            let x = nodes[k];
            let a = co.a.eval(x, t);
            let wk = wp.weights()[k];
            let uk = um[k];
            let du = [grad.lateral[k], grad.normal[k]];
            // - x^p a u d_t phi  (psi theta')
            mass_dt[k] = -wk * a * uk;
            // - x^p phi d_t a u + b_j D_j u phi + c x^p u phi + c_0 u phi - x^p f phi - f_0 phi
            let mut r = if a_static { 0.0 } else { -wk * dadt(x, t) * uk };
            let axes: &[usize] = if two_d { &[LAT, NOR] } else { &[NOR] };
            for &j in axes {
                r += vol * co.b[j].eval(x, t) * damp(x.normal) * du[j];
            }
            r += co.c.eval(x, t) * wk * uk + co.c0.eval(x, t) * vol * uk;
            r -= src.f.eval(x, t) * wk + src.f0.eval(x, t) * vol;
            rest[k] = r;
            // a_ij D_i u D_j phi + d_j u D_j phi - f_j D_j phi
            for &j in axes {
                let mut g = 0.0;
                for &i in axes {
                    g += co.diffusion[i][j].eval(x, t) * du[i];
                }
                g += co.d[j].eval(x, t) * damp(x.normal) * uk;
                g -= src.fi[j].eval(x, t);
                gc[j][k] = vol * g;
            }
        }
        terms.push(SliceTerms { t, mass_dt, rest, grad_coef: gc });
    }
    let last = u.slice(slices - 1);
    let a_end: Vec<f64> = (0..n).map(|k| co.a.eval(nodes[k], s_end) * wp.weights()[k] * last[k]).collect();
    let dt = u.dt();

    let lateral_modes = if two_d { basis_size } else { 1 };
    let mut worst = 0.0f64;
    for k in 1..=basis_size {
        for l in 1..=lateral_modes {
            let tf = TestFunction { k, l, m: 1, t0: u.t0(), span, two_d };
            let space: Vec<(f64, f64, f64)> = nodes.iter().map(|&x| tf.space(x)).collect();
            // spatial pairings per slice
            let mut per_slice = Vec::with_capacity(terms.len());
            for st in &terms {
                let mut with_psi = 0.0;
                let mut with_dt = 0.0;
                for kk in 0..n {
                    let (psi, gl, gn) = space[kk];
                    with_dt += st.mass_dt[kk] * psi;
                    with_psi += st.rest[kk] * psi + st.grad_coef[LAT][kk] * gl + st.grad_coef[NOR][kk] * gn;
                }
                per_slice.push((st.t, with_psi, with_dt));
            }
            let end_pair: f64 = (0..n).map(|kk| a_end[kk] * space[kk].0).sum();
            for m in 1..=basis_size {
                let tf = TestFunction { m, ..tf };
                let mut r = end_pair * tf.time(s_end).0;
                for &(t, with_psi, with_dt) in &per_slice {
                    let (th, dth) = tf.time(t);
                    r += dt * (with_psi * th + with_dt * dth);
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// Solution of `problem` on every grid of a ladder, for convergence
/// studies and ensemble runs.
pub fn solve_on(problem: &DegenerateProblem, grid: Arc<HalfDomainGrid>, eps: f64, settings: &SolverSettings) -> Result<TimeGridFunction> {
    solve_regularized(&problem.with_grid(grid)?, eps, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CoefficientField, EnsembleSpec, SourceData};

    fn g1(n: usize) -> Arc<HalfDomainGrid> {
        Arc::new(HalfDomainGrid::new_1d(n).unwrap())
    }

    fn heat(grid: Arc<HalfDomainGrid>, p: f64) -> DegenerateProblem {
        let n = grid.dim();
        DegenerateProblem::full(grid, p, CoefficientField::heat(n, p).unwrap(), SourceData::zero()).unwrap()
    }

    #[test]
    fn symmetric_and_conservative() {
        for grid in [g1(16), Arc::new(HalfDomainGrid::new_2d(6, 8).unwrap())] {
            let pr = heat(grid.clone(), 1.0);
            let sys = assemble_system(&pr, 0.01, -0.5).unwrap();
            assert!(sys.operator.asymmetry() < 1e-12);
            let ones = vec![1.0; grid.len()];
            let l1 = sys.operator.matvec(&ones);
            for k in 0..grid.len() {
                if !sys.boundary_rows[k] {
                    assert!(l1[k].abs() < 1e-10, "row {k}: {}", l1[k]);
                }
            }
        }
    }

    #[test]
    fn cross_terms_stay_symmetric() {
        let grid = Arc::new(HalfDomainGrid::new_2d(6, 6).unwrap());
        let spec = EnsembleSpec { structure: crate::problem::Structure::Divergence, ..EnsembleSpec::new(2, 1.0) };
        let pr = crate::problem::random_problem(grid.clone(), 3, 0, &spec).unwrap();
        let sys = assemble_system(&pr, 0.0, -0.3).unwrap();
        assert!(sys.symmetric);
        assert!(sys.operator.asymmetry() < 1e-12);
        let ones = vec![1.0; grid.len()];
        let l1 = sys.operator.matvec(&ones);
        for k in 0..grid.len() {
            if !sys.boundary_rows[k] {
                assert!(l1[k].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p_zero_mass_ignores_eps() {
        let pr = heat(g1(12), 0.0);
        let a = assemble_system(&pr, 0.0, 0.0).unwrap();
        let b = assemble_system(&pr, 0.3, 0.0).unwrap();
        assert_eq!(a.mass, b.mass);
    }

    #[test]
    fn heat_step_damps_the_discrete_mode() {
        let n = 64;
        let grid = g1(n);
        let pr = heat(grid.clone(), 0.0);
        let h = 1.0 / n as f64;
        let dt = 1e-3;
        let sys = assemble_system(&pr, 0.0, 0.0).unwrap();
        let u: Vec<f64> = grid.nodes().map(|x| (PI * x.normal).sin()).collect();
        let mut st = SolverSettings::default();
        st.tol = 1e-14;
        let next = step_implicit(&u, &sys, dt, &st).unwrap();
        // the sine is an eigenvector of the cell-centered Laplacian only up to
        // the boundary rows; compare interior growth factor with the closed form
        let lam_h = 2.0 * (1.0 - (PI * h).cos()) / (h * h);
        let expect = 1.0 / (1.0 + lam_h * dt);
        let k = n / 2;
        assert!((next[k] / u[k] - expect).abs() < 1e-4, "{} vs {expect}", next[k] / u[k]);
        let zero = step_implicit(&vec![0.0; n], &sys, dt, &st).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero() {
        let pr = heat(g1(16), 1.0);
        let u = solve_regularized(&pr, 0.01, &SolverSettings::with_dt(1.0 / 16.0)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        let (u, rep) = solve_degenerate(&pr, &SolverSettings::with_dt(1.0 / 16.0)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.deltas, vec![0.0]);
        assert_eq!(u.max_abs(), 0.0);
        assert!(weak_residual(&u, &pr, 3).unwrap() <= 1e-12);
    }

    #[test]
    fn p_zero_is_eps_independent() {
        let grid = g1(16);
        let spec = EnsembleSpec::new(1, 0.0);
        let pr = crate::problem::random_problem(grid, 5, 0, &spec).unwrap();
        let st = SolverSettings::with_dt(1.0 / 32.0);
        let a = solve_regularized(&pr, 0.1, &st).unwrap();
        let b = solve_regularized(&pr, 0.0125, &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uneven_time_range_rejected() {
        let pr = heat(g1(8), 1.0);
        assert!(solve_regularized(&pr, 0.0, &SolverSettings::with_dt(0.3)).is_err());
    }

    #[test]
    fn coercivity_of_laplacian() {
        let pr = heat(g1(64), 1.0);
        let l = coercivity_constant(&pr, 0.0).unwrap();
        assert!((l - PI * PI).abs() < 1e-2, "{l}");
    }
}
