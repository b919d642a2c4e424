//! Closed-form space-time fields used for coefficients, sources and data.
//!
//! Serializable variants (`Const`, `Trig`, `Formula`) have a one-line text
//! form used by the configuration files; `Custom` closures are runtime-only.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::fmt::g17;

/// A point of the half-domain. For `n = 1` the lateral coordinate is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub lateral: f64,
    pub normal: f64,
}

impl Point {
    pub fn new(lateral: f64, normal: f64) -> Self {
        Self { lateral, normal }
    }

    pub fn normal(normal: f64) -> Self {
        Self { lateral: 0.0, normal }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.lateral - other.lateral).hypot(self.normal - other.normal)
    }
}

pub type FieldFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// One term `amp * cos(pi * (kn x_n + kl x_l + kt t) + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub kn: i32,
    pub kl: i32,
    pub kt: i32,
    pub amp: f64,
    pub phase: f64,
}

/// Low-degree trigonometric polynomial, optionally clipped into `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    pub offset: f64,
    pub clip: Option<(f64, f64)>,
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn eval(&self, x: Point, t: f64) -> f64 {
        let mut v = self.offset;
        for term in &self.terms {
            let arg = PI * (term.kn as f64 * x.normal + term.kl as f64 * x.lateral + term.kt as f64 * t);
            v += term.amp * (arg + term.phase).cos();
        }
        match self.clip {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    /// Largest total degree `|kn| + |kl| + |kt|` over the terms.
    pub fn degree(&self) -> i32 {
        self.terms
            .iter()
            .map(|t| t.kn.abs() + t.kl.abs() + t.kt.abs())
            .max()
            .unwrap_or(0)
    }
}

/// Registered closed-form formulas referenced by name in configuration files.
#[derive(Clone, Debug, PartialEq)]
pub enum Formula {
    /// `c * x_n^s`
    XPower { s: f64, c: f64 },
    /// `c * sin(k pi x_n)`
    SinNormal { k: f64, c: f64 },
    /// `c * t * sin(k pi x_n)`
    TSinNormal { k: f64, c: f64 },
    /// `c * sin(k pi x_n) * cos(pi x_l / 2)`
    SinCos { k: f64, c: f64 },
}

impl Formula {
    fn eval(&self, x: Point, t: f64) -> f64 {
        match *self {
            Formula::XPower { s, c } => c * x.normal.powf(s),
            Formula::SinNormal { k, c } => c * (k * PI * x.normal).sin(),
            Formula::TSinNormal { k, c } => c * t * (k * PI * x.normal).sin(),
            Formula::SinCos { k, c } => c * (k * PI * x.normal).sin() * (0.5 * PI * x.lateral).cos(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Formula::XPower { .. } => "x_power",
            Formula::SinNormal { .. } => "sin_normal",
            Formula::TSinNormal { .. } => "t_sin_normal",
            Formula::SinCos { .. } => "sin_cos",
        }
    }

    fn params(&self) -> [f64; 2] {
        match *self {
            Formula::XPower { s, c } => [s, c],
            Formula::SinNormal { k, c } | Formula::TSinNormal { k, c } | Formula::SinCos { k, c } => [k, c],
        }
    }
}

/// A scalar field `(x, t) -> value`.
#[derive(Clone)]
pub enum Field {
    Const(f64),
    Trig(TrigPoly),
    Formula(Formula),
    Custom(FieldFn),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Const(c) => write!(f, "Const({c})"),
            Field::Trig(tp) => write!(f, "Trig({tp:?})"),
            Field::Formula(fm) => write!(f, "Formula({fm:?})"),
            Field::Custom(_) => write!(f, "Custom(<fn>)"),
        }
    }
}

impl Default for Field {
    fn default() -> Self {
        Field::Const(0.0)
    }
}

impl Field {
    pub fn zero() -> Self {
        Field::Const(0.0)
    }

    pub fn custom(f: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Field::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: Point, t: f64) -> f64 {
        match self {
            Field::Const(c) => *c,
            Field::Trig(tp) => tp.eval(x, t),
            Field::Formula(fm) => fm.eval(x, t),
            Field::Custom(f) => f(x, t),
        }
    }

    /// True only for the literal zero constant; used to skip work.
    pub fn is_zero(&self) -> bool {
        matches!(self, Field::Const(c) if *c == 0.0)
    }

    /// Conservative: runtime closures count as time-dependent.
    pub fn is_time_independent(&self) -> bool {
        match self {
            Field::Const(_) => true,
            Field::Trig(tp) => tp.terms.iter().all(|t| t.kt == 0),
            Field::Formula(Formula::TSinNormal { .. }) => false,
            Field::Formula(_) => true,
            Field::Custom(_) => false,
        }
    }

    /// Pointwise scaling. Constant and trig fields stay serializable.
    pub fn scaled(&self, s: f64) -> Field {
        match self {
            Field::Const(c) => Field::Const(c * s),
            Field::Trig(tp) if tp.clip.is_none() => {
                let mut tp = tp.clone();
                tp.offset *= s;
                for term in &mut tp.terms {
                    term.amp *= s;
                }
                Field::Trig(tp)
            }
            other => {
                let inner = other.clone();
                Field::custom(move |x, t| s * inner.eval(x, t))
            }
        }
    }

    /// One-line text form, `None` for runtime closures.
    pub fn to_spec(&self) -> Option<String> {
        match self {
            Field::Const(c) => Some(format!("const {}", g17(*c))),
            Field::Formula(fm) => {
                let [a, b] = fm.params();
                Some(format!("{} {} {}", fm.name(), g17(a), g17(b)))
            }
            Field::Trig(tp) => {
                let mut s = format!("trig {}", g17(tp.offset));
                match tp.clip {
                    Some((lo, hi)) => s.push_str(&format!(" clip {} {}", g17(lo), g17(hi))),
                    None => s.push_str(" noclip"),
                }
                for t in &tp.terms {
                    s.push_str(&format!(" {}:{}:{}:{}:{}", t.kn, t.kl, t.kt, g17(t.amp), g17(t.phase)));
                }
                Some(s)
            }
            Field::Custom(_) => None,
        }
    }

    /// Parses the text form produced by [`Field::to_spec`].
    pub fn parse(spec: &str) -> std::result::Result<Field, String> {
        let mut tok = spec.split_whitespace();
        let head = tok.next().ok_or_else(|| "empty field spec".to_string())?;
        let num = |s: Option<&str>| -> std::result::Result<f64, String> {
            let s = s.ok_or_else(|| format!("missing parameter in `{spec}`"))?;
            s.parse::<f64>().map_err(|_| format!("bad number `{s}` in `{spec}`"))
        };
        let field = match head {
            "zero" => Field::Const(0.0),
            "const" => Field::Const(num(tok.next())?),
            "x_power" => Field::Formula(Formula::XPower { s: num(tok.next())?, c: num(tok.next())? }),
            "sin_normal" => Field::Formula(Formula::SinNormal { k: num(tok.next())?, c: num(tok.next())? }),
            "t_sin_normal" => Field::Formula(Formula::TSinNormal { k: num(tok.next())?, c: num(tok.next())? }),
            "sin_cos" => Field::Formula(Formula::SinCos { k: num(tok.next())?, c: num(tok.next())? }),
            "trig" => {
                let offset = num(tok.next())?;
                let clip = match tok.next() {
                    Some("clip") => Some((num(tok.next())?, num(tok.next())?)),
                    Some("noclip") => None,
                    other => return Err(format!("expected `clip` or `noclip`, found {other:?}")),
                };
                let mut terms = Vec::new();
                for t in tok.by_ref() {
                    let parts: Vec<&str> = t.split(':').collect();
                    if parts.len() != 5 {
                        return Err(format!("bad trig term `{t}`"));
                    }
                    let int = |s: &str| s.parse::<i32>().map_err(|_| format!("bad integer `{s}`"));
                    terms.push(TrigTerm {
                        kn: int(parts[0])?,
                        kl: int(parts[1])?,
                        kt: int(parts[2])?,
                        amp: num(Some(parts[3]))?,
                        phase: num(Some(parts[4]))?,
                    });
                }
                return Ok(Field::Trig(TrigPoly { offset, clip, terms }));
            }
            other => return Err(format!("unknown field formula `{other}`")),
        };
        if let Some(extra) = tok.next() {
            return Err(format!("unexpected token `{extra}` in `{spec}`"));
        }
        Ok(field)
    }
}
