//! Problem definitions: coefficients with ellipticity bookkeeping, source
//! norms, Sobolev exponents, manufactured solutions and seeded ensembles.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Field, FieldFn, Point, TrigPoly, TrigTerm};
use crate::grid::{HalfDomainGrid, Trace, WeightedMeasure};

/// Axis index of the lateral coordinate.
pub const LAT: usize = 0;
/// Axis index of the normal coordinate.
pub const NOR: usize = 1;

/// Sobolev gain exponent of the weighted parabolic embedding.
///
/// `p >= 0`: `(n+p+2)/(n+p)` for `n >= 3`, `(p+2)/(p+1)` for `n <= 2`.
/// `-2 < p < 0`: `(n+2p+2)/(n+p)` for `n >= 3`, `3/2` for `n <= 2`.
pub fn chi_exponent(n: usize, p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if !p.is_finite() || p <= -2.0 {
        return Err(Error::UnsupportedExponent(p));
    }
    let nf = n as f64;
    let chi = if p >= 0.0 {
        if n >= 3 {
            (nf + p + 2.0) / (nf + p)
        } else {
            (p + 2.0) / (p + 1.0)
        }
    } else if n >= 3 {
        (nf + 2.0 * p + 2.0) / (nf + p)
    } else {
        1.5
    };
    Ok(chi)
}

/// `max(chi/(chi-1), (n+p+2)/2, (n+2p+2)/(p+2))`, the strict lower bound
/// on the integrability exponent `q`.
pub fn q_threshold(n: usize, p: f64) -> Result<f64> {
    let chi = chi_exponent(n, p)?;
    let nf = n as f64;
    Ok((chi / (chi - 1.0)).max((nf + p + 2.0) / 2.0).max((nf + 2.0 * p + 2.0) / (p + 2.0)))
}

/// Default experiment `q`: twice the threshold.
pub fn default_q(n: usize, p: f64) -> Result<f64> {
    Ok(2.0 * q_threshold(n, p)?)
}

/// Where the homogeneous Dirichlet condition is imposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    /// `u = 0` on the flat face only; data on the rest of the boundary.
    #[default]
    Partial,
    /// `u = 0` on the whole parabolic boundary.
    Full,
}

impl BoundaryMode {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryMode::Partial => "partial",
            BoundaryMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "partial" => Some(BoundaryMode::Partial),
            "full" => Some(BoundaryMode::Full),
            _ => None,
        }
    }

    pub fn trace(&self) -> Trace {
        match self {
            BoundaryMode::Partial => Trace::Partial,
            BoundaryMode::Full => Trace::Full,
        }
    }
}

/// Coefficients `a, a_ij, d_j, b_i, c, c_0` with their declared bounds.
///
/// `diffusion[i][j]` is `a_ij`; the flux component `j` is `sum_i a_ij D_i u`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub a: Field,
    pub diffusion: [[Field; 2]; 2],
    pub d: [Field; 2],
    pub b: [Field; 2],
    pub c: Field,
    pub c0: Field,
    pub lambda: f64,
    pub big_lambda: f64,
    pub q: f64,
    pub symmetric: bool,
    /// Multiply `d_j` and `b_i` by `min(x_n^{p/2}, 1)`.
    pub damped_drifts: bool,
}

impl CoefficientField {
    /// `a = 1`, `A = I`, no lower-order terms.
    pub fn heat(n: usize, p: f64) -> Result<Self> {
        Ok(Self {
            a: Field::Const(1.0),
            diffusion: [[Field::Const(1.0), Field::zero()], [Field::zero(), Field::Const(1.0)]],
            d: [Field::zero(), Field::zero()],
            b: [Field::zero(), Field::zero()],
            c: Field::zero(),
            c0: Field::zero(),
            lambda: 0.5,
            big_lambda: 2.0,
            q: default_q(n, p)?,
            symmetric: true,
            damped_drifts: false,
        })
    }

    pub fn has_drift(&self) -> bool {
        !(self.d.iter().all(Field::is_zero) && self.b.iter().all(Field::is_zero))
    }

    /// True when the assembled operator does not change in time.
    pub fn is_static(&self) -> bool {
        let mut all = vec![&self.a, &self.c, &self.c0];
        all.extend(self.diffusion.iter().flatten());
        all.extend(self.d.iter());
        all.extend(self.b.iter());
        all.into_iter().all(Field::is_time_independent)
    }

    pub fn diffusion_at(&self, x: Point, t: f64) -> [[f64; 2]; 2] {
        let e = |i: usize, j: usize| self.diffusion[i][j].eval(x, t);
        [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
    }

    /// Drift damping factor at normal coordinate `x_n` for regularization `eps`.
    pub fn drift_factor(&self, xn: f64, p: f64, eps: f64) -> f64 {
        if self.damped_drifts {
            (xn + eps).powf(p / 2.0).min((1.0 + eps).powf(p / 2.0))
        } else {
            1.0
        }
    }

    /// Checks `lambda <= a <= Lambda` and the spectrum of `(a_ij)` at every
    /// node and sample time.
    pub fn check_ellipticity(&self, grid: &HalfDomainGrid, times: &[f64]) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= self.big_lambda) {
            return Err(Error::InvalidArgument(format!(
                "ellipticity bounds ({}, {}) must satisfy 0 < lambda <= Lambda",
                self.lambda, self.big_lambda
            )));
        }
        let tol = 1e-12 * self.big_lambda;
        let (lo, hi) = (self.lambda - tol, self.big_lambda + tol);
        for &t in times {
            for x in grid.nodes() {
                let a = self.a.eval(x, t);
                if !(a >= lo && a <= hi) {
                    return Err(ellipticity_error(x, t, format!("a = {a}")));
                }
                let m = self.diffusion_at(x, t);
                let (emin, emax) = if grid.dim() == 1 {
                    (m[1][1], m[1][1])
                } else {
                    let off = 0.5 * (m[0][1] + m[1][0]);
                    sym2_eigen(m[0][0], off, m[1][1])
                };
                if !(emin >= lo && emax <= hi) {
                    return Err(ellipticity_error(x, t, format!("eig(A) in [{emin}, {emax}]")));
                }
            }
        }
        Ok(())
    }
}

fn ellipticity_error(x: Point, t: f64, detail: String) -> Error {
    Error::Ellipticity { lateral: x.lateral, normal: x.normal, time: t, detail }
}

/// Eigenvalues of `[[a, b], [b, c]]`, ascending.
pub(crate) fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    (m - r, m + r)
}

/// Right-hand side data `x_n^p f + f_0 - D_i f_i`.
#[derive(Clone, Debug, Default)]
pub struct SourceData {
    pub f: Field,
    pub f0: Field,
    pub fi: [Field; 2],
}

impl SourceData {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn weighted(f: Field) -> Self {
        Self { f, ..Self::default() }
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_zero() && self.f0.is_zero() && self.fi.iter().all(Field::is_zero)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { f: self.f.scaled(s), f0: self.f0.scaled(s), fi: [self.fi[0].scaled(s), self.fi[1].scaled(s)] }
    }
}

/// Space-time quadrature layout for norms of closed-form fields: node
/// values times exact cell weights, right-endpoint rule in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeQuadrature {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeQuadrature {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > t_start) || steps == 0 {
            return Err(Error::InvalidArgument(format!("time quadrature [{t_start}, {t_end}] with {steps} steps")));
        }
        Ok(Self { t_start, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.dt();
        (1..=self.steps).map(move |m| self.t_start + m as f64 * dt)
    }
}

/// `(int int |g|^r w)^{1/r}` with `w = x_n^p` or Lebesgue.
pub fn space_time_norm(field: &Field, grid: &HalfDomainGrid, weight_p: Option<f64>, r: f64, tq: &TimeQuadrature) -> Result<f64> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("Lebesgue exponent {r} must be >= 1")));
    }
    if field.is_zero() {
        return Ok(0.0);
    }
    let m = WeightedMeasure::new(grid, weight_p.unwrap_or(0.0))?;
    let dt = tq.dt();
    let mut total = 0.0;
    for t in tq.times() {
        for (k, w) in m.weights().iter().enumerate() {
            let v = field.eval(grid.node(k), t);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("source value at t = {t}")));
            }
            total += v.abs().powf(r) * w * dt;
        }
    }
    Ok(total.powf(1.0 / r))
}

/// Source norms with their pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceNorms {
    pub f0_norm: f64,
    pub f1_norm: f64,
    /// `[f, f_0, f_lateral, f_normal]` contributions to `F_0`.
    pub f0_pieces: [f64; 4],
    /// Same for `F_1`.
    pub f1_pieces: [f64; 4],
}

/// `F_0 = |f|_{L^{2chi/(2chi-1)}(x^p)} + |f_0|_{L^{2chi/(2chi-1)}} + sum |f_j|_{L^2}` and
/// `F_1 = |f|_{L^{2q chi/(q chi + chi - q)}(x^p)} + |f_0|_{same} + sum |f_j|_{L^{2q}}`.
pub fn source_norms(s: &SourceData, grid: &HalfDomainGrid, p: f64, q: f64, chi: f64, tq: &TimeQuadrature) -> Result<SourceNorms> {
    if !(chi > 1.0) || !(q > 1.0) {
        return Err(Error::InvalidArgument(format!("exponents chi = {chi}, q = {q}")));
    }
    let r0 = 2.0 * chi / (2.0 * chi - 1.0);
    let den = q * chi + chi - q;
    if !(den > 0.0) {
        return Err(Error::InvalidArgument(format!("q = {q} too large for chi = {chi}")));
    }
    let r1 = 2.0 * q * chi / den;
    let lateral = grid.dim() == 2;
    let fl = |r: f64| -> Result<f64> {
        if lateral {
            space_time_norm(&s.fi[LAT], grid, None, r, tq)
        } else {
            Ok(0.0)
        }
    };
    let f0_pieces = [
        space_time_norm(&s.f, grid, Some(p), r0, tq)?,
        space_time_norm(&s.f0, grid, None, r0, tq)?,
        fl(2.0)?,
        space_time_norm(&s.fi[NOR], grid, None, 2.0, tq)?,
    ];
    let f1_pieces = [
        space_time_norm(&s.f, grid, Some(p), r1, tq)?,
        space_time_norm(&s.f0, grid, None, r1, tq)?,
        fl(2.0 * q)?,
        space_time_norm(&s.fi[NOR], grid, None, 2.0 * q, tq)?,
    ];
    Ok(SourceNorms { f0_norm: f0_pieces.iter().sum(), f1_norm: f1_pieces.iter().sum(), f0_pieces, f1_pieces })
}

/// How a problem was produced; used to serialize problems built from
/// runtime closures.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemOrigin {
    Explicit,
    Random { seed: u64, index: usize, spec: EnsembleSpec },
    Manufactured { exact: String },
}

/// `a x_n^p u_t - D_j(a_ij D_i u + d_j u) + b_i D_i u + c x_n^p u + c_0 u = x_n^p f + f_0 - D_i f_i`
/// on `grid x (t_start, t_end]`.
#[derive(Clone, Debug)]
pub struct DegenerateProblem {
    pub grid: Arc<HalfDomainGrid>,
    pub p: f64,
    pub coeffs: CoefficientField,
    pub sources: SourceData,
    pub mode: BoundaryMode,
    /// Dirichlet data on the faces other than `{x_n = 0}` (partial mode).
    pub boundary: Field,
    pub initial: Field,
    pub t_start: f64,
    pub t_end: f64,
    pub origin: ProblemOrigin,
}

impl DegenerateProblem {
    /// Full-boundary problem on `(-1, 0]`.
    pub fn full(grid: Arc<HalfDomainGrid>, p: f64, coeffs: CoefficientField, sources: SourceData) -> Result<Self> {
        let pr = Self {
            grid,
            p,
            coeffs,
            sources,
            mode: BoundaryMode::Full,
            boundary: Field::zero(),
            initial: Field::zero(),
            t_start: -1.0,
            t_end: 0.0,
            origin: ProblemOrigin::Explicit,
        };
        pr.validate()?;
        Ok(pr)
    }

    /// Partial-boundary problem with lateral/top data and initial data.
    pub fn partial(
        grid: Arc<HalfDomainGrid>,
        p: f64,
        coeffs: CoefficientField,
        sources: SourceData,
        boundary: Field,
        initial: Field,
    ) -> Result<Self> {
        let pr = Self {
            grid,
            p,
            coeffs,
            sources,
            mode: BoundaryMode::Partial,
            boundary,
            initial,
            t_start: -1.0,
            t_end: 0.0,
            origin: ProblemOrigin::Explicit,
        };
        pr.validate()?;
        Ok(pr)
    }

    pub fn validate(&self) -> Result<()> {
        crate::grid::check_exponent(self.p)?;
        if !(self.t_end > self.t_start) {
            return Err(Error::InvalidArgument("empty time range".into()));
        }
        if self.mode == BoundaryMode::Full && !(self.boundary.is_zero() && self.initial.is_zero()) {
            return Err(Error::Precondition("full boundary mode requires zero boundary and initial data".into()));
        }
        let tm = 0.5 * (self.t_start + self.t_end);
        self.coeffs.check_ellipticity(&self.grid, &[self.t_start, tm, self.t_end])
    }

    pub fn n(&self) -> usize {
        self.grid.dim()
    }

    pub fn chi(&self) -> Result<f64> {
        chi_exponent(self.n(), self.p)
    }

    pub fn trace(&self) -> Trace {
        self.mode.trace()
    }

    pub fn with_grid(&self, grid: Arc<HalfDomainGrid>) -> Result<Self> {
        let mut pr = self.clone();
        pr.grid = grid;
        pr.validate()?;
        Ok(pr)
    }

    /// Same coefficients, all data (sources, boundary, initial) scaled by `s`.
    pub fn with_scaled_data(&self, s: f64) -> Self {
        let mut pr = self.clone();
        pr.sources = self.sources.scaled(s);
        pr.boundary = self.boundary.scaled(s);
        pr.initial = self.initial.scaled(s);
        pr
    }

    pub fn source_norms(&self, steps: usize) -> Result<SourceNorms> {
        let tq = TimeQuadrature::new(self.t_start, self.t_end, steps)?;
        source_norms(&self.sources, &self.grid, self.p, self.coeffs.q, self.chi()?, &tq)
    }

    /// Problem solved by `u~(x, t) = u(x0 + R x, t0 + R^{p+2} t)` on the unit
    /// half-cylinder: drifts scale by `R`, `c` and `f` by `R^{p+2}`, `c_0` and
    /// `f_0` by `R^2`, `f_i` by `R`. Boundary and initial data of the rescaled
    /// problem are supplied by the caller in rescaled coordinates.
    pub fn rescaled(&self, grid: Arc<HalfDomainGrid>, x0: Point, t0: f64, r: f64, boundary: Field, initial: Field) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArgument(format!("rescaling radius {r} must be in (0, 1]")));
        }
        let tau = r.powf(self.p + 2.0);
        let map = move |f: &Field, s: f64| -> Field {
            if let Field::Const(c) = f {
                return Field::Const(c * s);
            }
            let f = f.clone();
            Field::custom(move |x, t| s * f.eval(Point::new(x0.lateral + r * x.lateral, x0.normal + r * x.normal), t0 + tau * t))
        };
        let c = &self.coeffs;
        let coeffs = CoefficientField {
            a: map(&c.a, 1.0),
            diffusion: [
                [map(&c.diffusion[0][0], 1.0), map(&c.diffusion[0][1], 1.0)],
                [map(&c.diffusion[1][0], 1.0), map(&c.diffusion[1][1], 1.0)],
            ],
            d: [map(&c.d[0], r), map(&c.d[1], r)],
            b: [map(&c.b[0], r), map(&c.b[1], r)],
            c: map(&c.c, tau),
            c0: map(&c.c0, r * r),
            ..c.clone()
        };
        let s = &self.sources;
        let sources = SourceData {
            f: map(&s.f, tau),
            f0: map(&s.f0, r * r),
            fi: [map(&s.fi[0], r), map(&s.fi[1], r)],
        };
        let pr = Self {
            grid,
            p: self.p,
            coeffs,
            sources,
            mode: BoundaryMode::Partial,
            boundary,
            initial,
            t_start: -1.0,
            t_end: 0.0,
            origin: ProblemOrigin::Explicit,
        };
        pr.validate()?;
        Ok(pr)
    }
}

/// Closed-form solution with its derivatives.
#[derive(Clone)]
pub struct ExactSolution {
    pub name: String,
    pub u: FieldFn,
    pub u_t: Option<FieldFn>,
    /// `(D_lateral u, D_normal u)`.
    pub grad: Option<[FieldFn; 2]>,
}

impl std::fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSolution({})", self.name)
    }
}

impl ExactSolution {
    /// `u = t sin(pi x_n)`.
    pub fn t_sin() -> Self {
        Self {
            name: "t_sin".into(),
            u: Arc::new(|x, t| t * (PI * x.normal).sin()),
            u_t: Some(Arc::new(|x, _| (PI * x.normal).sin())),
            grad: Some([Arc::new(|_, _| 0.0), Arc::new(|x, t| t * PI * (PI * x.normal).cos())]),
        }
    }

    /// `u = t sin(pi x_n) cos(pi x_l / 2)`.
    pub fn t_sin_cos() -> Self {
        Self {
            name: "t_sin_cos".into(),
            u: Arc::new(|x, t| t * (PI * x.normal).sin() * (0.5 * PI * x.lateral).cos()),
            u_t: Some(Arc::new(|x, _| (PI * x.normal).sin() * (0.5 * PI * x.lateral).cos())),
            grad: Some([
                Arc::new(|x, t| -0.5 * PI * t * (PI * x.normal).sin() * (0.5 * PI * x.lateral).sin()),
                Arc::new(|x, t| PI * t * (PI * x.normal).cos() * (0.5 * PI * x.lateral).cos()),
            ]),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "t_sin" => Some(Self::t_sin()),
            "t_sin_cos" => Some(Self::t_sin_cos()),
            _ => None,
        }
    }

    pub fn eval(&self, x: Point, t: f64) -> f64 {
        (self.u)(x, t)
    }

    pub fn field(&self) -> Field {
        Field::Custom(self.u.clone())
    }
}

/// Builds sources so that `exact` solves the equation with `coeffs`:
/// `f = a u_t + c u`, `f_0 = b_i D_i u + c_0 u`, `f_i = sum_j a_ji D_j u + d_i u`.
/// Boundary and initial data are sampled from `exact` (partial mode).
pub fn manufactured_problem(
    grid: Arc<HalfDomainGrid>,
    p: f64,
    exact: &ExactSolution,
    coeffs: CoefficientField,
) -> Result<DegenerateProblem> {
    let u_t = exact.u_t.clone().ok_or_else(|| Error::Precondition(format!("{}: missing time derivative", exact.name)))?;
    let grad = exact.grad.clone().ok_or_else(|| Error::Precondition(format!("{}: missing gradient", exact.name)))?;
    if coeffs.damped_drifts {
        return Err(Error::Precondition("manufactured problems use undamped drifts".into()));
    }
    let u = exact.u.clone();
    let c = coeffs.clone();
    let f = {
        let (a, cc, u, u_t) = (c.a.clone(), c.c.clone(), u.clone(), u_t.clone());
        Field::custom(move |x, t| a.eval(x, t) * u_t(x, t) + cc.eval(x, t) * u(x, t))
    };
    let f0 = {
        let (b, c0, u, grad) = (c.b.clone(), c.c0.clone(), u.clone(), grad.clone());
        Field::custom(move |x, t| b[0].eval(x, t) * grad[0](x, t) + b[1].eval(x, t) * grad[1](x, t) + c0.eval(x, t) * u(x, t))
    };
    let flux = |i: usize| {
        let (diff, d, u, grad) = (c.diffusion.clone(), c.d[i].clone(), u.clone(), grad.clone());
        Field::custom(move |x, t| diff[0][i].eval(x, t) * grad[0](x, t) + diff[1][i].eval(x, t) * grad[1](x, t) + d.eval(x, t) * u(x, t))
    };
    let sources = SourceData { f, f0, fi: [flux(LAT), flux(NOR)] };
    let mut pr = DegenerateProblem::partial(grid, p, coeffs, sources, exact.field(), exact.field())?;
    pr.origin = ProblemOrigin::Manufactured { exact: exact.name.clone() };
    Ok(pr)
}

/// Lower-order structure of random ensemble members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// Only `a` and `A`; symmetric.
    Divergence,
    /// `d = 0`, `b` and `c, c_0 >= 0`: the maximum-principle class.
    MaxPrinciple,
    /// All coefficients present, `c, c_0 >= 0`.
    General,
}

impl Structure {
    pub fn name(&self) -> &'static str {
        match self {
            Structure::Divergence => "divergence",
            Structure::MaxPrinciple => "max_principle",
            Structure::General => "general",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "divergence" => Some(Structure::Divergence),
            "max_principle" => Some(Structure::MaxPrinciple),
            "general" => Some(Structure::General),
            _ => None,
        }
    }
}

/// Which source terms random members carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    /// `f` only.
    Weighted,
    /// `f`, `f_0` and `f_i`.
    All,
    /// `f >= 0` only.
    NonNegative,
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Weighted => "weighted",
            SourceKind::All => "all",
            SourceKind::NonNegative => "nonnegative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weighted" => Some(SourceKind::Weighted),
            "all" => Some(SourceKind::All),
            "nonnegative" => Some(SourceKind::NonNegative),
            _ => None,
        }
    }
}

/// Parameters of a seeded random ensemble. Members are full-boundary
/// problems with low-degree trigonometric coefficients clipped into the
/// ellipticity bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub n: usize,
    pub p: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    /// `None` selects [`default_q`].
    pub q: Option<f64>,
    pub structure: Structure,
    pub sources: SourceKind,
    pub time_dependent: bool,
}

impl EnsembleSpec {
    pub fn new(n: usize, p: f64) -> Self {
        Self {
            n,
            p,
            lambda: 0.5,
            big_lambda: 2.0,
            q: None,
            structure: Structure::General,
            sources: SourceKind::All,
            time_dependent: true,
        }
    }
}

const MAX_DEGREE: i32 = 4;
const TERMS: usize = 4;

fn random_trig(rng: &mut ChaCha8Rng, n: usize, time: bool, offset: f64, amp: f64, clip: Option<(f64, f64)>) -> Field {
    let mut terms = Vec::with_capacity(TERMS);
    for _ in 0..TERMS {
        let kt = if time { rng.gen_range(0..=1) } else { 0 };
        let kl = if n == 2 { rng.gen_range(-2..=2) } else { 0 };
        let rest = MAX_DEGREE - kt - (kl as i32).abs();
        let kn = rng.gen_range(0..=rest.max(0));
        terms.push(TrigTerm { kn, kl, kt, amp: rng.gen_range(-amp..=amp), phase: rng.gen_range(0.0..2.0 * PI) });
    }
    Field::Trig(TrigPoly { offset, clip, terms })
}

fn bounded(rng: &mut ChaCha8Rng, n: usize, time: bool, lo: f64, hi: f64) -> Field {
    let mid = 0.5 * (lo + hi);
    // amplitudes sum to 0.6 of the full range so that clipping is active
    // on a fraction of the domain
    let amp = 0.6 * (hi - lo) / TERMS as f64;
    random_trig(rng, n, time, mid, amp, Some((lo, hi)))
}

/// Member `index` of the ensemble with the given seed; `random_ensemble`
/// returns members `0..count` of the same stream.
pub fn random_problem(grid: Arc<HalfDomainGrid>, seed: u64, index: usize, spec: &EnsembleSpec) -> Result<DegenerateProblem> {
    if !(spec.lambda > 0.0 && spec.lambda < spec.big_lambda) {
        return Err(Error::InvalidArgument(format!("need 0 < lambda < Lambda, got ({}, {})", spec.lambda, spec.big_lambda)));
    }
    if grid.dim() != spec.n {
        return Err(Error::GridMismatch(format!("grid dimension {} for an n = {} ensemble", grid.dim(), spec.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = spec.n;
    let time = spec.time_dependent;
    let (lam, big) = (spec.lambda, spec.big_lambda);
    let delta = (big - lam) / 8.0;
    let a = bounded(&mut rng, n, time, lam, big);
    let diffusion = if n == 1 {
        [[Field::Const(1.0), Field::zero()], [Field::zero(), bounded(&mut rng, n, time, lam, big)]]
    } else {
        let ll = bounded(&mut rng, n, time, lam + delta, big - delta);
        let nn = bounded(&mut rng, n, time, lam + delta, big - delta);
        let ln = bounded(&mut rng, n, time, -delta, delta);
        [[ll, ln.clone()], [ln, nn]]
    };
    let zero2 = || [Field::zero(), Field::zero()];
    let lower = |rng: &mut ChaCha8Rng| bounded(rng, n, time, -1.0, 1.0);
    let nonneg = |rng: &mut ChaCha8Rng| bounded(rng, n, time, 0.0, 1.0);
    let (d, b, c, c0) = match spec.structure {
        Structure::Divergence => (zero2(), zero2(), Field::zero(), Field::zero()),
        Structure::MaxPrinciple => {
            let b = if n == 1 { [Field::zero(), lower(&mut rng)] } else { [lower(&mut rng), lower(&mut rng)] };
            (zero2(), b, nonneg(&mut rng), nonneg(&mut rng))
        }
        Structure::General => {
            let d = if n == 1 { [Field::zero(), lower(&mut rng)] } else { [lower(&mut rng), lower(&mut rng)] };
            let b = if n == 1 { [Field::zero(), lower(&mut rng)] } else { [lower(&mut rng), lower(&mut rng)] };
            (d, b, nonneg(&mut rng), nonneg(&mut rng))
        }
    };
    let q = match spec.q {
        Some(q) => q,
        None => default_q(n, spec.p)?,
    };
    let coeffs = CoefficientField {
        a,
        diffusion,
        d,
        b,
        c,
        c0,
        lambda: lam,
        big_lambda: big,
        q,
        symmetric: true,
        damped_drifts: false,
    };
    let src = |rng: &mut ChaCha8Rng| {
        let offset = rng.gen_range(-1.0..=1.0);
        random_trig(rng, n, time, offset, 0.5, None)
    };
    let sources = match spec.sources {
        SourceKind::Weighted => SourceData::weighted(src(&mut rng)),
        SourceKind::NonNegative => SourceData::weighted(bounded(&mut rng, n, time, 0.0, 2.0)),
        SourceKind::All => {
            let f = src(&mut rng);
            let f0 = src(&mut rng);
            let fl = if n == 2 { src(&mut rng) } else { Field::zero() };
            let fnn = src(&mut rng);
            SourceData { f, f0, fi: [fl, fnn] }
        }
    };
    let mut pr = DegenerateProblem::full(grid, spec.p, coeffs, sources)?;
    pr.origin = ProblemOrigin::Random { seed, index, spec: spec.clone() };
    Ok(pr)
}

pub fn random_ensemble(grid: Arc<HalfDomainGrid>, seed: u64, count: usize, spec: &EnsembleSpec) -> Result<Vec<DegenerateProblem>> {
    (0..count).map(|k| random_problem(grid.clone(), seed, k, spec)).collect()
}

/// Problem restricted to the structure under which the `W^{1,1}_2`
/// estimate holds: symmetric `A`, damped drifts, only the weighted source
/// `f`, full boundary, and a certified coercivity constant.
#[derive(Clone, Debug)]
pub struct SpecialStructureProblem {
    pub problem: DegenerateProblem,
    /// Smallest eigenvalue of `int A grad phi . grad phi + c_0 phi^2` against `int phi^2`.
    pub lambda_bar: f64,
}

impl SpecialStructureProblem {
    pub fn new(mut problem: DegenerateProblem) -> Result<Self> {
        if !problem.coeffs.symmetric {
            return Err(Error::Precondition("special structure needs a symmetric diffusion matrix".into()));
        }
        if problem.mode != BoundaryMode::Full {
            return Err(Error::Precondition("special structure needs the full boundary condition".into()));
        }
        if !(problem.sources.f0.is_zero() && problem.sources.fi.iter().all(Field::is_zero)) {
            return Err(Error::Precondition("special structure allows only the weighted source f".into()));
        }
        problem.coeffs.damped_drifts = true;
        let tm = 0.5 * (problem.t_start + problem.t_end);
        let mut lambda_bar = f64::INFINITY;
        for t in [problem.t_start, tm, problem.t_end] {
            lambda_bar = lambda_bar.min(crate::solver::coercivity_constant(&problem, t)?);
        }
        if !(lambda_bar > 0.0) {
            return Err(Error::Precondition(format!("coercivity constant {lambda_bar} is not positive")));
        }
        Ok(Self { problem, lambda_bar })
    }
}

/// `k`-th eigenpair (`k >= 1`) of `-phi'' = lambda x^p phi` on `(0, 1)` with
/// `phi(0) = phi(1) = 0`, discretized on `cells` cells: finite-volume
/// stiffness against the exact weighted cell masses. The eigenvector is
/// normalized to `int phi^2 x^p = 1` with a positive first entry.
pub fn weighted_eigenpair(k: usize, p: f64, cells: usize) -> Result<(f64, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode index starts at 1".into()));
    }
    let grid = HalfDomainGrid::new_1d(cells)?;
    if k > cells {
        return Err(Error::InvalidArgument(format!("mode {k} exceeds {cells} cells")));
    }
    let m = WeightedMeasure::new(&grid, p)?;
    let stiff = crate::linalg::dirichlet_stiffness(cells, grid.h_normal());
    let mass = crate::linalg::SymTridiagonal::diagonal(m.weights().to_vec());
    let lam = crate::linalg::pencil_eigenvalue(&stiff, &mass, k - 1)?;
    let mut phi = crate::linalg::pencil_eigenvector(&stiff, &mass, lam)?;
    let norm: f64 = phi.iter().zip(m.weights()).map(|(v, w)| v * v * w).sum::<f64>().sqrt();
    let sign = if phi[0] < 0.0 { -1.0 } else { 1.0 };
    phi.iter_mut().for_each(|v| *v *= sign / norm);
    Ok((lam, phi))
}
