//! Cell-centered grids on half-domains, exact weighted cell measures,
//! grid functions and the norms the estimates are built from.
//!
//! Nodes sit at cell centers, so the normal coordinate of every node is
//! `(i + 1/2) h > 0` and `x_n^p` is finite there even for `p < 0`. Weighted
//! quadrature multiplies node values by the exact cell integral of the weight.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Field, Point};
use crate::fmt::g17;

const MIN_CELLS: usize = 4;

/// Uniform tensor grid on `(-L, L)^{n-1} x (0, top)` with `n` in `{1, 2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfDomainGrid {
    dim: usize,
    lateral_cells: usize,
    normal_cells: usize,
    lateral_half_width: f64,
    normal_top: f64,
}

/// Axis-aligned cell box. For `n = 1` the lateral extent is `(0, 1)` so that
/// lateral areas multiply as 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellBox {
    pub normal: (f64, f64),
    pub lateral: (f64, f64),
}

impl CellBox {
    pub fn normal_only(a: f64, b: f64) -> Self {
        Self { normal: (a, b), lateral: (0.0, 1.0) }
    }
}

impl HalfDomainGrid {
    /// `n = 1` grid on `(0, 1)`.
    pub fn new_1d(cells: usize) -> Result<Self> {
        Self::with_extents(1, &[cells], 1.0, 1.0)
    }

    /// `n = 2` grid on `(-1, 1) x (0, 1)`.
    pub fn new_2d(lateral_cells: usize, normal_cells: usize) -> Result<Self> {
        Self::with_extents(2, &[lateral_cells, normal_cells], 1.0, 1.0)
    }

    /// Builds from a cell list in axis order (`[normal]` or `[lateral, normal]`).
    pub fn from_cells(cells: &[usize]) -> Result<Self> {
        match cells.len() {
            1 => Self::new_1d(cells[0]),
            2 => Self::new_2d(cells[0], cells[1]),
            k => Err(Error::InvalidGrid(format!("expected 1 or 2 axes, got {k}"))),
        }
    }

    pub fn with_extents(dim: usize, cells: &[usize], lateral_half_width: f64, normal_top: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} unsupported (1 or 2)")));
        }
        if cells.len() != dim {
            return Err(Error::InvalidGrid(format!("{} cell counts for dimension {dim}", cells.len())));
        }
        if let Some(c) = cells.iter().find(|&&c| c < MIN_CELLS) {
            return Err(Error::InvalidGrid(format!("{c} cells on an axis, need at least {MIN_CELLS}")));
        }
        if !(normal_top > 0.0 && lateral_half_width > 0.0) || !normal_top.is_finite() || !lateral_half_width.is_finite() {
            return Err(Error::InvalidGrid("extents must be positive".into()));
        }
        let (lateral_cells, normal_cells) = if dim == 1 { (1, cells[0]) } else { (cells[0], cells[1]) };
        Ok(Self { dim, lateral_cells, normal_cells, lateral_half_width, normal_top })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn normal_cells(&self) -> usize {
        self.normal_cells
    }
    /// 1 for `n = 1`.
    pub fn lateral_cells(&self) -> usize {
        self.lateral_cells
    }
    pub fn len(&self) -> usize {
        self.lateral_cells * self.normal_cells
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn normal_top(&self) -> f64 {
        self.normal_top
    }
    pub fn lateral_half_width(&self) -> f64 {
        self.lateral_half_width
    }
    pub fn h_normal(&self) -> f64 {
        self.normal_top / self.normal_cells as f64
    }
    /// Lateral spacing; for `n = 1` this is the unit "width" 1.
    pub fn h_lateral(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            2.0 * self.lateral_half_width / self.lateral_cells as f64
        }
    }
    /// Largest spacing, used as "h" in error budgets.
    pub fn h(&self) -> f64 {
        if self.dim == 1 {
            self.h_normal()
        } else {
            self.h_normal().max(self.h_lateral())
        }
    }
    pub fn cell_volume(&self) -> f64 {
        self.h_normal() * self.h_lateral()
    }
    /// Lebesgue measure of the domain.
    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    #[inline]
    pub fn index(&self, lateral: usize, normal: usize) -> usize {
        lateral * self.normal_cells + normal
    }
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.normal_cells, idx % self.normal_cells)
    }
    #[inline]
    pub fn normal_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h_normal()
    }
    #[inline]
    pub fn lateral_center(&self, j: usize) -> f64 {
        if self.dim == 1 {
            0.0
        } else {
            -self.lateral_half_width + (j as f64 + 0.5) * self.h_lateral()
        }
    }
    #[inline]
    pub fn node(&self, idx: usize) -> Point {
        let (j, i) = self.coords(idx);
        Point::new(self.lateral_center(j), self.normal_center(i))
    }
    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub fn cell_box(&self, idx: usize) -> CellBox {
        let (j, i) = self.coords(idx);
        let hn = self.h_normal();
        let normal = (i as f64 * hn, (i + 1) as f64 * hn);
        let lateral = if self.dim == 1 {
            (0.0, 1.0)
        } else {
            let hl = self.h_lateral();
            let lo = -self.lateral_half_width + j as f64 * hl;
            (lo, lo + hl)
        };
        CellBox { normal, lateral }
    }

    /// Short label such as `64` or `32x64` (lateral x normal).
    pub fn label(&self) -> String {
        if self.dim == 1 {
            self.normal_cells.to_string()
        } else {
            format!("{}x{}", self.lateral_cells, self.normal_cells)
        }
    }

    /// Cell counts in axis order.
    pub fn cells(&self) -> Vec<usize> {
        if self.dim == 1 {
            vec![self.normal_cells]
        } else {
            vec![self.lateral_cells, self.normal_cells]
        }
    }

    /// Samples a field at the nodes.
    pub fn sample(&self, f: &Field, t: f64) -> Vec<f64> {
        self.nodes().map(|x| f.eval(x, t)).collect()
    }
}

/// `int_a^b (s + shift)^p ds` in closed form.
pub fn power_integral(a: f64, b: f64, p: f64, shift: f64) -> f64 {
    if p == 0.0 {
        return b - a;
    }
    let (a, b) = (a + shift, b + shift);
    if p == -1.0 {
        (b / a).ln()
    } else {
        (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0)
    }
}

/// Exact `int_cell x_n^p dx`.
pub fn weighted_cell_measure(cell: &CellBox, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let (a, b) = cell.normal;
    if !(a >= 0.0 && b > a) {
        return Err(Error::InvalidArgument(format!("cell normal extent [{a}, {b}] must satisfy 0 <= a < b")));
    }
    let lateral = cell.lateral.1 - cell.lateral.0;
    Ok(lateral * power_integral(a, b, p, 0.0))
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p > -1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::UnsupportedExponent(p))
    }
}

/// Per-cell weights `int_cell (x_n + shift)^p dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMeasure {
    p: f64,
    shift: f64,
    weights: Vec<f64>,
}

impl WeightedMeasure {
    pub fn new(grid: &HalfDomainGrid, p: f64) -> Result<Self> {
        Self::shifted(grid, p, 0.0)
    }

    /// Weights of the regularized weight `(x_n + shift)^p`, `shift >= 0`.
    pub fn shifted(grid: &HalfDomainGrid, p: f64, shift: f64) -> Result<Self> {
        if shift == 0.0 {
            check_exponent(p)?;
        } else if !(shift > 0.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("shift {shift} must be >= 0")));
        }
        let hn = grid.h_normal();
        let hl = grid.h_lateral();
        let column: Vec<f64> = (0..grid.normal_cells())
            .map(|i| hl * power_integral(i as f64 * hn, (i + 1) as f64 * hn, p, shift))
            .collect();
        let mut weights = Vec::with_capacity(grid.len());
        for _ in 0..grid.lateral_cells() {
            weights.extend_from_slice(&column);
        }
        Ok(Self { p, shift, weights })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Total measure of the domain.
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Which boundary faces carry a zero trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Trace {
    /// Zero on `{x_n = 0}` only (`H^1_{0,L}`); other faces are free.
    #[default]
    Partial,
    /// Zero on the whole boundary.
    Full,
}

/// Values at the nodes of one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Arc<HalfDomainGrid>,
    values: Vec<f64>,
    trace: Trace,
}

impl GridFunction {
    pub fn new(grid: Arc<HalfDomainGrid>, values: Vec<f64>, trace: Trace) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function values".into()));
        }
        Ok(Self { grid, values, trace })
    }

    pub fn zeros(grid: Arc<HalfDomainGrid>, trace: Trace) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], trace }
    }

    pub fn from_fn(grid: Arc<HalfDomainGrid>, trace: Trace, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Self::new(grid, values, trace)
    }

    pub fn grid(&self) -> &Arc<HalfDomainGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn trace(&self) -> Trace {
        self.trace
    }
    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.trace = trace;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        let values = self.values.iter().map(|&v| f(v)).collect();
        GridFunction { grid: self.grid.clone(), values, trace: self.trace }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Piecewise-linear reconstruction (per axis) honoring the trace
    /// convention: value 0 on Dirichlet faces, constant extension on free ones.
    pub fn eval(&self, x: Point) -> f64 {
        eval_slice(&self.grid, self.trace, &self.values, x)
    }

    /// Weighted L2 norm squared `int u^2 x_n^p`.
    pub fn weighted_l2_sq(&self, p: f64) -> Result<f64> {
        let m = WeightedMeasure::new(&self.grid, p)?;
        Ok(self.values.iter().zip(m.weights()).map(|(v, w)| v * v * w).sum())
    }

    /// `int |grad u|^2` of the piecewise-linear reconstruction.
    pub fn dirichlet_energy(&self) -> f64 {
        dirichlet_energy_slice(&self.grid, self.trace, &self.values)
    }

    pub fn write_csv<W: Write>(&self, out: W, t: f64) -> Result<()> {
        write_csv_rows(out, &self.grid, &[(t, &self.values[..])])
    }
}

/// Time-indexed grid function with slices at `t0 + m dt`, `m = 0..=M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGridFunction {
    grid: Arc<HalfDomainGrid>,
    t0: f64,
    dt: f64,
    slices: usize,
    values: Vec<f64>,
    trace: Trace,
}

impl TimeGridFunction {
    pub fn new(grid: Arc<HalfDomainGrid>, t0: f64, dt: f64, values: Vec<f64>, trace: Trace) -> Result<Self> {
        let n = grid.len();
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("time spacing {dt} must be positive")));
        }
        if values.is_empty() || values.len() % n != 0 {
            return Err(Error::GridMismatch(format!("{} values is not a multiple of {n} nodes", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time grid function values".into()));
        }
        let slices = values.len() / n;
        Ok(Self { grid, t0, dt, slices, values, trace })
    }

    pub fn from_slices(grid: Arc<HalfDomainGrid>, t0: f64, dt: f64, slices: Vec<Vec<f64>>, trace: Trace) -> Result<Self> {
        let mut values = Vec::with_capacity(slices.len() * grid.len());
        for s in &slices {
            if s.len() != grid.len() {
                return Err(Error::GridMismatch(format!("slice of {} values for {} nodes", s.len(), grid.len())));
            }
            values.extend_from_slice(s);
        }
        Self::new(grid, t0, dt, values, trace)
    }

    /// Samples `f(x, t)` on `steps + 1` slices covering `[t0, t0 + steps dt]`.
    pub fn from_fn(
        grid: Arc<HalfDomainGrid>,
        t0: f64,
        dt: f64,
        steps: usize,
        trace: Trace,
        f: impl Fn(Point, f64) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity((steps + 1) * grid.len());
        for m in 0..=steps {
            let t = t0 + m as f64 * dt;
            values.extend(grid.nodes().map(|x| f(x, t)));
        }
        Self::new(grid, t0, dt, values, trace)
    }

    pub fn grid(&self) -> &Arc<HalfDomainGrid> {
        &self.grid
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    /// Number of slices `M + 1`.
    pub fn slice_count(&self) -> usize {
        self.slices
    }
    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }
    pub fn t_end(&self) -> f64 {
        self.time(self.slices - 1)
    }
    pub fn trace(&self) -> Trace {
        self.trace
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn slice(&self, m: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[m * n..(m + 1) * n]
    }
    pub fn slice_function(&self, m: usize) -> GridFunction {
        GridFunction { grid: self.grid.clone(), values: self.slice(m).to_vec(), trace: self.trace }
    }
    pub fn last(&self) -> GridFunction {
        self.slice_function(self.slices - 1)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TimeGridFunction {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Pointwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &TimeGridFunction, b: f64) -> Result<TimeGridFunction> {
        self.check_same_layout(other)?;
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v = a * *v + b * w;
        }
        Ok(out)
    }

    pub fn check_same_layout(&self, other: &TimeGridFunction) -> Result<()> {
        if *self.grid != *other.grid {
            return Err(Error::GridMismatch("different grids".into()));
        }
        if self.slices != other.slices || (self.dt - other.dt).abs() > 1e-12 * self.dt || (self.t0 - other.t0).abs() > 1e-12 {
            return Err(Error::GridMismatch("different time layouts".into()));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Space evaluation on slice `m` (piecewise-linear reconstruction).
    pub fn eval_on_slice(&self, m: usize, x: Point) -> f64 {
        eval_slice(&self.grid, self.trace, self.slice(m), x)
    }

    /// Right-endpoint time weights `[0, dt, ..., dt]`, the rule consistent
    /// with the implicit march.
    pub fn time_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.slices];
        w[0] = 0.0;
        w
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<(f64, &[f64])> = (0..self.slices).map(|m| (self.time(m), self.slice(m))).collect();
        write_csv_rows(out, &self.grid, &rows)
    }

    /// Reads the CSV layout written by [`TimeGridFunction::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, grid: Arc<HalfDomainGrid>, trace: Trace) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.ok_or_else(|| Error::InvalidArgument("empty csv".into()))?;
        let expected = csv_header(grid.dim());
        if header.trim() != expected {
            return Err(Error::InvalidArgument(format!("csv header `{header}`, expected `{expected}`")));
        }
        let n = grid.len();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != grid.dim() + 2 {
                return Err(Error::InvalidArgument(format!("csv line {}: {} columns", k + 2, cols.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("csv line {}: bad number `{s}`", k + 2)))
            };
            let t = parse(cols[grid.dim()])?;
            if values.len() % n == 0 {
                times.push(t);
            }
            values.push(parse(cols[grid.dim() + 1])?);
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("need at least two time slices to recover dt".into()));
        }
        let dt = times[1] - times[0];
        Self::new(grid, times[0], dt, values, trace)
    }
}

fn csv_header(dim: usize) -> String {
    let mut h: Vec<String> = (0..dim).map(|a| format!("axis{a}")).collect();
    h.push("t".into());
    h.push("value".into());
    h.join(",")
}

fn write_csv_rows<W: Write>(mut out: W, grid: &HalfDomainGrid, rows: &[(f64, &[f64])]) -> Result<()> {
    writeln!(out, "{}", csv_header(grid.dim()))?;
    for &(t, vals) in rows {
        for (k, v) in vals.iter().enumerate() {
            let x = grid.node(k);
            if grid.dim() == 1 {
                writeln!(out, "{},{},{}", g17(x.normal), g17(t), g17(*v))?;
            } else {
                writeln!(out, "{},{},{},{}", g17(x.lateral), g17(x.normal), g17(t), g17(*v))?;
            }
        }
    }
    Ok(())
}

/// Interpolation stencil along one axis: up to two `(node, weight)` pairs;
/// a `None` node stands for the zero Dirichlet value on a face.
fn axis_stencil(x: f64, lo: f64, h: f64, cells: usize, lower_zero: bool, upper_zero: bool) -> [(Option<usize>, f64); 2] {
    let s = (x - lo) / h - 0.5;
    if s <= 0.0 {
        if lower_zero {
            // between the face (s = -1/2) and the first node
            let w = ((s + 0.5) / 0.5).clamp(0.0, 1.0);
            [(Some(0), w), (None, 1.0 - w)]
        } else {
            [(Some(0), 1.0), (None, 0.0)]
        }
    } else if s >= (cells - 1) as f64 {
        let last = cells - 1;
        if upper_zero {
            let w = (1.0 - (s - last as f64) / 0.5).clamp(0.0, 1.0);
            [(Some(last), w), (None, 1.0 - w)]
        } else {
            [(Some(last), 1.0), (None, 0.0)]
        }
    } else {
        let i = (s.floor() as usize).min(cells - 2);
        let w = s - i as f64;
        [(Some(i), 1.0 - w), (Some(i + 1), w)]
    }
}

pub(crate) fn eval_slice(grid: &HalfDomainGrid, trace: Trace, vals: &[f64], x: Point) -> f64 {
    let full = trace == Trace::Full;
    let ns = axis_stencil(x.normal, 0.0, grid.h_normal(), grid.normal_cells(), true, full);
    if grid.dim() == 1 {
        return ns.iter().map(|&(i, w)| i.map_or(0.0, |i| w * vals[i])).sum();
    }
    let ls = axis_stencil(
        x.lateral,
        -grid.lateral_half_width(),
        grid.h_lateral(),
        grid.lateral_cells(),
        full,
        full,
    );
    let mut v = 0.0;
    for &(j, wl) in &ls {
        for &(i, wn) in &ns {
            if let (Some(j), Some(i)) = (j, i) {
                v += wl * wn * vals[grid.index(j, i)];
            }
        }
    }
    v
}

/// One-dimensional energy `int (u')^2` along a line of cell values with
/// spacing `h`. Dirichlet ends use the zero face value at distance `h/2`;
/// free ends extend the neighbouring face difference over the half cell.
fn line_energy(line: impl Fn(usize) -> f64, cells: usize, h: f64, lower_zero: bool, upper_zero: bool) -> f64 {
    let mut e = 0.0;
    for i in 0..cells - 1 {
        let d = line(i + 1) - line(i);
        e += d * d / h;
    }
    let first = line(0);
    let last = line(cells - 1);
    e += if lower_zero {
        2.0 * first * first / h
    } else {
        let d = line(1) - line(0);
        0.5 * d * d / h
    };
    e += if upper_zero {
        2.0 * last * last / h
    } else {
        let d = line(cells - 1) - line(cells - 2);
        0.5 * d * d / h
    };
    e
}

pub(crate) fn dirichlet_energy_slice(grid: &HalfDomainGrid, trace: Trace, vals: &[f64]) -> f64 {
    let full = trace == Trace::Full;
    let nn = grid.normal_cells();
    let nl = grid.lateral_cells();
    let hn = grid.h_normal();
    let hl = grid.h_lateral();
    let mut e = 0.0;
    for j in 0..nl {
        e += hl * line_energy(|i| vals[grid.index(j, i)], nn, hn, true, full);
    }
    if grid.dim() == 2 {
        for i in 0..nn {
            e += hn * line_energy(|j| vals[grid.index(j, i)], nl, hl, full, full);
        }
    }
    e
}

/// Cell-valued gradient: `(lateral, normal)` components.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGridFunction {
    pub lateral: Vec<f64>,
    pub normal: Vec<f64>,
}

impl VectorGridFunction {
    pub fn norm_sq(&self, k: usize) -> f64 {
        self.lateral[k] * self.lateral[k] + self.normal[k] * self.normal[k]
    }
}

fn line_derivative(line: impl Fn(usize) -> f64, cells: usize, h: f64, i: usize, lower_zero: bool, upper_zero: bool) -> f64 {
    if i == 0 {
        if lower_zero {
            line(0) / (0.5 * h)
        } else {
            (line(1) - line(0)) / h
        }
    } else if i == cells - 1 {
        if upper_zero {
            -line(i) / (0.5 * h)
        } else {
            (line(i) - line(i - 1)) / h
        }
    } else {
        (line(i + 1) - line(i - 1)) / (2.0 * h)
    }
}

pub(crate) fn gradient_slice(grid: &HalfDomainGrid, trace: Trace, vals: &[f64]) -> VectorGridFunction {
    let full = trace == Trace::Full;
    let nn = grid.normal_cells();
    let nl = grid.lateral_cells();
    let mut normal = vec![0.0; grid.len()];
    let mut lateral = vec![0.0; grid.len()];
    for j in 0..nl {
        for i in 0..nn {
            let k = grid.index(j, i);
            normal[k] = line_derivative(|s| vals[grid.index(j, s)], nn, grid.h_normal(), i, true, full);
            if grid.dim() == 2 {
                lateral[k] = line_derivative(|s| vals[grid.index(s, i)], nl, grid.h_lateral(), j, full, full);
            }
        }
    }
    VectorGridFunction { lateral, normal }
}

/// Cell-centered gradient. The zero-trace face `{x_n = 0}` enters the first
/// cell as `(g_0 - 0) / (h/2)`; interior cells use central differences; the
/// far faces use the zero value under [`Trace::Full`] and a one-sided
/// difference otherwise.
pub fn gradient(g: &GridFunction) -> VectorGridFunction {
    gradient_slice(&g.grid, g.trace, &g.values)
}

/// `sum_k g(node_k) * int_{cell_k} x_n^p`.
pub fn integrate_weighted(g: &GridFunction, p: f64) -> Result<f64> {
    let m = WeightedMeasure::new(&g.grid, p)?;
    Ok(g.values.iter().zip(m.weights()).map(|(v, w)| v * w).sum())
}

/// Same as [`integrate_weighted`] but checks that the measure belongs to the
/// function's grid.
pub fn integrate_with(g: &GridFunction, m: &WeightedMeasure) -> Result<f64> {
    if m.weights().len() != g.values.len() {
        return Err(Error::GridMismatch("measure and function sizes differ".into()));
    }
    Ok(g.values.iter().zip(m.weights()).map(|(v, w)| v * w).sum())
}

/// `V_2` energy norm:
/// `sqrt( max_m int u_m^2 x_n^p + sum_{m>=1} dt int |grad u_m|^2 )`.
pub fn v2_norm(u: &TimeGridFunction, p: f64) -> Result<f64> {
    let m = WeightedMeasure::new(&u.grid, p)?;
    Ok(v2_norm_with(u, &m))
}

pub(crate) fn v2_norm_with(u: &TimeGridFunction, m: &WeightedMeasure) -> f64 {
    v2_parts(u, m).map(|(s, g)| (s + g).sqrt()).unwrap_or(0.0)
}

/// `(sup_t int u^2 w, int int |grad u|^2)`.
pub(crate) fn v2_parts(u: &TimeGridFunction, m: &WeightedMeasure) -> Option<(f64, f64)> {
    let mut sup = 0.0f64;
    let mut grad = 0.0;
    for s in 0..u.slices {
        let vals = u.slice(s);
        let l2: f64 = vals.iter().zip(m.weights()).map(|(v, w)| v * v * w).sum();
        sup = sup.max(l2);
        if s > 0 {
            grad += u.dt * dirichlet_energy_slice(&u.grid, u.trace, vals);
        }
    }
    Some((sup, grad))
}

/// Pointwise `max(g - k, 0)`.
pub fn truncate_plus(g: &GridFunction, k: f64) -> GridFunction {
    g.map(|v| (v - k).max(0.0))
}

/// Space-time `max(u - k, 0)`.
pub fn truncate_plus_time(u: &TimeGridFunction, k: f64) -> TimeGridFunction {
    u.map(|v| (v - k).max(0.0))
}

/// Backward Steklov average `u_h(t) = (1/h) int_{t-h}^t u(s) ds` of the
/// piecewise-linear-in-time interpolant. Output starts at the first slice
/// with `t_m >= t_0 + h`.
pub fn steklov_average(u: &TimeGridFunction, h: f64) -> Result<TimeGridFunction> {
    let range = u.t_end() - u.t0;
    if !(h > 0.0 && h < range) {
        return Err(Error::InvalidArgument(format!("window {h} outside (0, {range})")));
    }
    let tol = 1e-9 * u.dt;
    let first = ((h - tol) / u.dt).ceil().max(0.0) as usize;
    let n = u.grid.len();
    let mut values = Vec::with_capacity((u.slices - first) * n);
    for m in first..u.slices {
        let hi = u.time(m);
        let lo = hi - h;
        let mut acc = vec![0.0; n];
        // segments [t_s, t_{s+1}] intersecting [lo, hi]
        let mut s = (((lo - u.t0) / u.dt).floor().max(0.0) as usize).min(u.slices - 2);
        while s + 1 <= m {
            let a = u.time(s).max(lo);
            let b = u.time(s + 1).min(hi);
            if b > a {
                // linear interpolation weights at a and b within the segment
                let wa = (a - u.time(s)) / u.dt;
                let wb = (b - u.time(s)) / u.dt;
                let (u0, u1) = (u.slice(s), u.slice(s + 1));
                for k in 0..n {
                    let va = u0[k] + wa * (u1[k] - u0[k]);
                    let vb = u0[k] + wb * (u1[k] - u0[k]);
                    acc[k] += 0.5 * (b - a) * (va + vb);
                }
            }
            s += 1;
        }
        values.extend(acc.into_iter().map(|v| v / h));
    }
    TimeGridFunction::new(u.grid.clone(), u.time(first), u.dt, values, u.trace)
}

/// Location type of an intrinsic cylinder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CylinderMode {
    /// Centered on the degenerate face, time depth `R^{p+2}`.
    Boundary,
    /// Interior ball, time depth `R^2`.
    Interior,
    /// Boundary ball anchored at the initial time, going forward `R^{p+2}`.
    Initial,
    /// Arbitrary center with time depth `R^{p+2}`.
    Global,
}

impl CylinderMode {
    pub fn name(&self) -> &'static str {
        match self {
            CylinderMode::Boundary => "boundary",
            CylinderMode::Interior => "interior",
            CylinderMode::Initial => "initial",
            CylinderMode::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "boundary" => Some(CylinderMode::Boundary),
            "interior" => Some(CylinderMode::Interior),
            "initial" => Some(CylinderMode::Initial),
            "global" => Some(CylinderMode::Global),
            _ => None,
        }
    }
}

/// `B_R(center) ∩ domain` times an intrinsic time window.
///
/// For every mode except [`CylinderMode::Initial`], `time` is the top time
/// `t̄` and the window is `[t̄ - depth, t̄]`; for `Initial` it is the bottom
/// time and the window is `[time, time + depth]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntrinsicCylinder {
    pub center: Point,
    pub time: f64,
    pub radius: f64,
    pub mode: CylinderMode,
    pub p: f64,
}

impl IntrinsicCylinder {
    pub fn new(center: Point, time: f64, radius: f64, mode: CylinderMode, p: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius {radius} must be positive")));
        }
        if matches!(mode, CylinderMode::Boundary | CylinderMode::Initial) && center.normal != 0.0 {
            return Err(Error::InvalidArgument("boundary cylinders need a center on x_n = 0".into()));
        }
        Ok(Self { center, time, radius, mode, p })
    }

    pub fn depth(&self) -> f64 {
        match self.mode {
            CylinderMode::Interior => self.radius * self.radius,
            _ => self.radius.powf(self.p + 2.0),
        }
    }

    pub fn time_window(&self) -> (f64, f64) {
        match self.mode {
            CylinderMode::Initial => (self.time, self.time + self.depth()),
            _ => (self.time - self.depth(), self.time),
        }
    }

    /// Same cylinder with another radius.
    pub fn with_radius(&self, radius: f64) -> Self {
        Self { radius, ..*self }
    }

    pub fn contains_point(&self, x: Point) -> bool {
        x.dist(&self.center) <= self.radius * (1.0 + 1e-12)
    }

    /// Node mask of the spatial ball.
    pub fn spatial_mask(&self, grid: &HalfDomainGrid) -> Vec<bool> {
        grid.nodes().map(|x| self.contains_point(x)).collect()
    }

    /// Slices whose time lies in the closed window.
    pub fn closed_slices(&self, u: &TimeGridFunction) -> Vec<usize> {
        let (lo, hi) = self.time_window();
        let tol = 1e-9 * u.dt;
        (0..u.slices).filter(|&m| u.time(m) >= lo - tol && u.time(m) <= hi + tol).collect()
    }

    /// Slices `m >= 1` with `t_m` in the half-open window `(lo, hi]`, the
    /// right-endpoint quadrature nodes of the window.
    pub fn quadrature_slices(&self, u: &TimeGridFunction) -> Vec<usize> {
        let (lo, hi) = self.time_window();
        let tol = 1e-9 * u.dt;
        (1..u.slices).filter(|&m| u.time(m) > lo + tol && u.time(m) <= hi + tol).collect()
    }

    /// Checks `cylinder ⊂ domain × [t_start, t_end]`.
    pub fn validate(&self, grid: &HalfDomainGrid, t_start: f64, t_end: f64) -> Result<()> {
        let r = self.radius;
        let eps = 1e-12;
        let c = self.center;
        if c.normal < -eps || c.normal - eps > grid.normal_top() {
            return Err(Error::CylinderOutside(format!("center normal coordinate {}", c.normal)));
        }
        if c.normal + r > grid.normal_top() + eps {
            return Err(Error::CylinderOutside(format!("radius {r} exceeds the normal extent")));
        }
        // an interior ball centered on the flat face is the half-ball
        if self.mode == CylinderMode::Interior && c.normal > eps && c.normal - r < -eps {
            return Err(Error::CylinderOutside(format!("interior ball of radius {r} crosses x_n = 0")));
        }
        if grid.dim() == 2 && c.lateral.abs() + r > grid.lateral_half_width() + eps {
            return Err(Error::CylinderOutside(format!("radius {r} exceeds the lateral extent")));
        }
        let (lo, hi) = self.time_window();
        let tt = 1e-12 * (t_end - t_start).abs().max(1.0);
        if lo < t_start - tt || hi > t_end + tt {
            return Err(Error::CylinderOutside(format!("time window [{lo}, {hi}] outside [{t_start}, {t_end}]")));
        }
        Ok(())
    }
}

/// Region selector for level-set measures.
#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    Whole,
    Cylinder(&'a IntrinsicCylinder),
}

/// `|{g > k} ∩ region|_p` with cell-indicator quadrature; the optional
/// coefficient multiplies the weight (the `a x_n^p` measures).
pub fn superlevel_measure(g: &GridFunction, k: f64, p: f64, region: Region<'_>, coefficient: Option<(&Field, f64)>) -> Result<f64> {
    let m = WeightedMeasure::new(&g.grid, p)?;
    let mask = match region {
        Region::Whole => vec![true; g.grid.len()],
        Region::Cylinder(c) => {
            let mask = c.spatial_mask(&g.grid);
            if !mask.iter().any(|&b| b) {
                return Err(Error::InvalidArgument("region contains no cells".into()));
            }
            mask
        }
    };
    let mut total = 0.0;
    for (idx, (&v, &w)) in g.values.iter().zip(m.weights()).enumerate() {
        if mask[idx] && v > k {
            let a = coefficient.map_or(1.0, |(f, t)| f.eval(g.grid.node(idx), t));
            total += a * w;
        }
    }
    Ok(total)
}

/// Space-time version of [`superlevel_measure`] with right-endpoint time
/// weights.
pub fn superlevel_measure_time(u: &TimeGridFunction, k: f64, p: f64, region: Region<'_>, coefficient: Option<&Field>) -> Result<f64> {
    let m = WeightedMeasure::new(&u.grid, p)?;
    let (mask, slices) = match region {
        Region::Whole => (vec![true; u.grid.len()], (1..u.slices).collect::<Vec<_>>()),
        Region::Cylinder(c) => {
            let mask = c.spatial_mask(&u.grid);
            let slices = c.quadrature_slices(u);
            if !mask.iter().any(|&b| b) || slices.is_empty() {
                return Err(Error::InvalidArgument("region contains no space-time cells".into()));
            }
            (mask, slices)
        }
    };
    let mut total = 0.0;
    for s in slices {
        let t = u.time(s);
        for (idx, (&v, &w)) in u.slice(s).iter().zip(m.weights()).enumerate() {
            if mask[idx] && v > k {
                let a = coefficient.map_or(1.0, |f| f.eval(u.grid.node(idx), t));
                total += a * w * u.dt;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g1(n: usize) -> Arc<HalfDomainGrid> {
        Arc::new(HalfDomainGrid::new_1d(n).unwrap())
    }

    #[test]
    fn grid_invariants() {
        assert!(HalfDomainGrid::new_1d(3).is_err());
        assert!(HalfDomainGrid::new_2d(8, 2).is_err());
        let g = HalfDomainGrid::new_2d(8, 16).unwrap();
        assert!(g.nodes().all(|x| x.normal > 0.0));
        let hn = g.h_normal();
        assert!((g.normal_center(0) - hn / 2.0).abs() < 1e-15);
        assert!((g.normal_center(15) - (1.0 - hn / 2.0)).abs() < 1e-15);
        assert!((g.lateral_center(0) - (-1.0 + g.h_lateral() / 2.0)).abs() < 1e-15);
        assert!((g.lateral_center(7) - (1.0 - g.h_lateral() / 2.0)).abs() < 1e-15);
        assert_eq!(g.label(), "8x16");
    }

    #[test]
    fn cell_measure_examples() {
        let m = weighted_cell_measure(&CellBox::normal_only(0.0, 0.1), 1.0).unwrap();
        assert!((m - 0.005).abs() < 1e-15);
        let m = weighted_cell_measure(&CellBox::normal_only(0.3, 0.4), 0.0).unwrap();
        assert!((m - 0.1).abs() < 1e-15);
        let m = weighted_cell_measure(&CellBox::normal_only(0.0, 1.0), -0.5).unwrap();
        assert!((m - 2.0).abs() < 1e-15);
        assert!(matches!(
            weighted_cell_measure(&CellBox::normal_only(0.0, 1.0), -1.0),
            Err(Error::UnsupportedExponent(_))
        ));
    }

    #[test]
    fn column_sums_are_exact() {
        for &p in &[-0.9, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0] {
            let g = HalfDomainGrid::new_2d(6, 37).unwrap();
            let m = WeightedMeasure::new(&g, p).unwrap();
            assert!(m.weights().iter().all(|&w| w > 0.0 && w.is_finite()));
            let col: f64 = (0..37).map(|i| m.weights()[g.index(2, i)]).sum();
            let exact = g.h_lateral() / (p + 1.0);
            assert!(((col - exact) / exact).abs() < 1e-12, "p={p}: {col} vs {exact}");
        }
    }

    #[test]
    fn integrate_examples() {
        let g = g1(200);
        let one = GridFunction::from_fn(g.clone(), Trace::Partial, |_| 1.0).unwrap();
        assert!((integrate_weighted(&one, 3.0).unwrap() - 0.25).abs() < 1e-14);
        let x = GridFunction::from_fn(g.clone(), Trace::Partial, |x| x.normal).unwrap();
        assert!((integrate_weighted(&x, 0.0).unwrap() - 0.5).abs() < 1e-12);
        let h = 1.0 / 200.0;
        assert!((integrate_weighted(&x, 1.0).unwrap() - 1.0 / 3.0).abs() < h * h);
    }

    #[test]
    fn gradient_examples() {
        let g = g1(16);
        let h = 1.0 / 16.0;
        let x = GridFunction::from_fn(g.clone(), Trace::Partial, |x| x.normal).unwrap();
        let d = gradient(&x);
        assert!(d.normal.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let one = GridFunction::from_fn(g.clone(), Trace::Partial, |_| 1.0).unwrap();
        let d = gradient(&one);
        assert!((d.normal[0] - 2.0 / h).abs() < 1e-12);
        assert!(d.normal[1..].iter().all(|v| v.abs() < 1e-12));
        let zero = GridFunction::zeros(g, Trace::Full);
        assert!(gradient(&zero).normal.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v2_norm_examples() {
        let g = g1(256);
        let steps = 64;
        let zero = TimeGridFunction::from_fn(g.clone(), -1.0, 1.0 / steps as f64, steps, Trace::Full, |_, _| 0.0).unwrap();
        assert_eq!(v2_norm(&zero, 0.0).unwrap(), 0.0);
        let u = TimeGridFunction::from_fn(g.clone(), -1.0, 1.0 / steps as f64, steps, Trace::Full, |x, _| (PI * x.normal).sin()).unwrap();
        let exact = (0.5 + PI * PI / 2.0).sqrt();
        let got = v2_norm(&u, 0.0).unwrap();
        assert!((got - exact).abs() < 2.0 / (256.0 * 256.0) * 10.0, "{got} vs {exact}");
        let u2 = u.map(|v| 2.0 * v);
        assert!((v2_norm(&u2, 0.0).unwrap() - 2.0 * got).abs() < 1e-12);
        assert!((exact - 2.3313).abs() < 1e-4);
    }

    #[test]
    fn truncation_examples() {
        let g = Arc::new(HalfDomainGrid::new_1d(4).unwrap());
        let f = GridFunction::new(g.clone(), vec![-1.0, 0.5, 2.0, 0.0], Trace::Partial).unwrap();
        assert_eq!(truncate_plus(&f, 0.0).values(), &[0.0, 0.5, 2.0, 0.0]);
        assert!(truncate_plus(&f, 3.0).values().iter().all(|&v| v == 0.0));
        let once = truncate_plus(&f, 0.3);
        assert_eq!(truncate_plus(&once, 0.0), once);
    }

    #[test]
    fn steklov_examples() {
        let g = g1(4);
        let dt = 0.01;
        let c = TimeGridFunction::from_fn(g.clone(), -1.0, dt, 100, Trace::Partial, |_, _| 3.0).unwrap();
        let a = steklov_average(&c, 0.1).unwrap();
        assert!(a.values().iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!((a.t0() - (-0.9)).abs() < 1e-12);
        let lin = TimeGridFunction::from_fn(g.clone(), -1.0, dt, 100, Trace::Partial, |_, t| t).unwrap();
        let a = steklov_average(&lin, 0.1).unwrap();
        for m in 0..a.slice_count() {
            assert!((a.slice(m)[0] - (a.time(m) - 0.05)).abs() < 1e-12);
        }
        let quad = TimeGridFunction::from_fn(g.clone(), -1.0, dt, 100, Trace::Partial, |_, t| t * t).unwrap();
        let h = 0.1;
        let a = steklov_average(&quad, h).unwrap();
        for m in 0..a.slice_count() {
            let t = a.time(m);
            let exact = t * t - t * h + h * h / 3.0;
            // trapezoid error h^2/6 * dt^2 ... bounded by dt^2/6
            assert!((a.slice(m)[0] - exact).abs() <= dt * dt / 6.0 + 1e-12);
        }
        // non-multiple window
        let a = steklov_average(&lin, 0.105).unwrap();
        assert!((a.slice(0)[0] - (a.time(0) - 0.0525)).abs() < 1e-12);
        assert!(steklov_average(&lin, 0.0).is_err());
        assert!(steklov_average(&lin, 1.0).is_err());
    }

    #[test]
    fn superlevel_examples() {
        let g = g1(100);
        let x = GridFunction::from_fn(g.clone(), Trace::Partial, |x| x.normal).unwrap();
        let m0 = superlevel_measure(&x, 0.5, 0.0, Region::Whole, None).unwrap();
        assert!((m0 - 0.5).abs() <= 0.01);
        let m1 = superlevel_measure(&x, 0.5, 1.0, Region::Whole, None).unwrap();
        assert!((m1 - 0.375).abs() <= 0.01);
        assert_eq!(superlevel_measure(&x, 2.0, 1.0, Region::Whole, None).unwrap(), 0.0);
    }

    #[test]
    fn cylinder_depths_and_validation() {
        let g = HalfDomainGrid::new_1d(16).unwrap();
        let c = IntrinsicCylinder::new(Point::normal(0.0), 0.0, 0.5, CylinderMode::Boundary, 1.0).unwrap();
        assert!((c.depth() - 0.125).abs() < 1e-15);
        assert!(c.validate(&g, -1.0, 0.0).is_ok());
        let i = IntrinsicCylinder::new(Point::normal(0.5), 0.0, 0.25, CylinderMode::Interior, 1.0).unwrap();
        assert!((i.depth() - 0.0625).abs() < 1e-15);
        assert!(i.with_radius(0.6).validate(&g, -1.0, 0.0).is_err());
        assert!(IntrinsicCylinder::new(Point::normal(0.2), 0.0, 0.5, CylinderMode::Boundary, 1.0).is_err());
        let big = IntrinsicCylinder::new(Point::normal(0.0), 0.0, 1.5, CylinderMode::Boundary, 1.0).unwrap();
        assert!(big.validate(&g, -1.0, 0.0).is_err());
        let init = IntrinsicCylinder::new(Point::normal(0.0), -1.0, 0.5, CylinderMode::Initial, 0.0).unwrap();
        assert_eq!(init.time_window(), (-1.0, -0.75));
    }

    #[test]
    fn csv_round_trip() {
        let g = Arc::new(HalfDomainGrid::new_2d(4, 4).unwrap());
        let u = TimeGridFunction::from_fn(g.clone(), -1.0, 0.25, 4, Trace::Partial, |x, t| x.lateral * t + x.normal).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("axis0,axis1,t,value\n"));
        let back = TimeGridFunction::read_csv(&buf[..], g, Trace::Partial).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn reconstruction_honors_trace() {
        let g = g1(8);
        let x = GridFunction::from_fn(g.clone(), Trace::Partial, |x| x.normal).unwrap();
        assert!((x.eval(Point::normal(0.0))).abs() < 1e-15);
        assert!((x.eval(Point::normal(0.3)) - 0.3).abs() < 1e-14);
        // free top: constant extension
        assert!((x.eval(Point::normal(1.0)) - (1.0 - 1.0 / 16.0)).abs() < 1e-14);
        let full = x.clone().with_trace(Trace::Full);
        assert!(full.eval(Point::normal(1.0)).abs() < 1e-15);
    }
}
