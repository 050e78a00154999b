//! Drivers `f(t, y, z)`, their continuity moduli and terminal conditions.
//!
//! `z` is always passed as a row-major `d x m` slice. The Lipschitz
//! constant carried by a [`Driver`] is with respect to the sum norm
//! `|dy| + ||dz||` (Euclidean on `y`, Frobenius on `z`).

mod catalog;
mod checks;
mod mollify;
mod regularize;

pub use catalog::{builtin_catalog, CatalogParams, CATALOG};
pub use checks::{
    osgood_check, sup_distance, verify_lipschitz, verify_moduli, verify_moduli_in, LipschitzReport, ModuliReport,
    OsgoodCurve, ProbeBox,
};
pub use mollify::{mollify, MollifierKernel};
pub use regularize::{lipschitz_regularize, ProbeRange};

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::stochastic::PathEnsemble;

#[derive(Clone)]
enum ModulusKind {
    Zero,
    Linear(f64),
    /// `x (1 - ln x)` on `(0, 1]`, constant `1` above.
    Osgood,
    Sqrt,
    /// `min(slope x, cap)`.
    CappedLinear {
        slope: f64,
        cap: f64,
    },
    Table(Arc<regularize::SupTable>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// Non-decreasing `Phi: R+ -> R+` with `Phi(0) = 0` and `Phi(x) <= K (1 + x)`.
#[derive(Clone)]
pub struct Modulus {
    name: String,
    kind: ModulusKind,
    growth_k: f64,
    osgood_declared: bool,
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Modulus")
            .field("name", &self.name)
            .field("growth_k", &self.growth_k)
            .field("osgood_declared", &self.osgood_declared)
            .finish()
    }
}

impl Modulus {
    pub fn zero() -> Self {
        Modulus {
            name: "zero".into(),
            kind: ModulusKind::Zero,
            growth_k: 0.0,
            osgood_declared: true,
        }
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn linear(slope: f64) -> Self {
        assert!(slope >= 0.0, "modulus slope must be non-negative");
        if slope == 0.0 {
            return Self::zero();
        }
        Modulus {
            name: alloc::format!("linear({slope})"),
            kind: ModulusKind::Linear(slope),
            growth_k: slope,
            osgood_declared: true,
        }
    }

    /// `x (1 - ln x)` for `x <= 1`, continued by its value and slope
    /// (both match the constant `1`) above.
    pub fn osgood() -> Self {
        Modulus {
            name: "osgood".into(),
            kind: ModulusKind::Osgood,
            growth_k: 1.0,
            osgood_declared: true,
        }
    }

    /// `sqrt(x)`: continuous, but not Osgood.
    pub fn sqrt() -> Self {
        Modulus {
            name: "sqrt".into(),
            kind: ModulusKind::Sqrt,
            growth_k: 0.5,
            osgood_declared: false,
        }
    }

    pub fn capped_linear(slope: f64, cap: f64) -> Self {
        assert!(slope > 0.0 && cap > 0.0);
        // sup_x min(slope x, cap) / (1 + x) is attained at x = cap / slope
        let growth_k = cap / (1.0 + cap / slope);
        Modulus {
            name: alloc::format!("min({slope}x,{cap})"),
            kind: ModulusKind::CappedLinear { slope, cap },
            growth_k,
            osgood_declared: true,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        growth_k: f64,
        osgood_declared: bool,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Modulus {
            name: name.into(),
            kind: ModulusKind::Custom(Arc::new(f)),
            growth_k,
            osgood_declared,
        }
    }

    pub(crate) fn from_table(name: String, growth_k: f64, table: regularize::SupTable) -> Self {
        Modulus {
            name,
            kind: ModulusKind::Table(Arc::new(table)),
            growth_k,
            osgood_declared: true,
        }
    }

    /// Looks up a named modulus: `zero`, `identity`, `osgood`, `sqrt`,
    /// `linear:<slope>`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero()),
            "identity" | "id" => Ok(Self::identity()),
            "osgood" => Ok(Self::osgood()),
            "sqrt" => Ok(Self::sqrt()),
            other => match other.strip_prefix("linear:").map(str::parse::<f64>) {
                Some(Ok(s)) if s >= 0.0 => Ok(Self::linear(s)),
                _ => Err(Error::UnknownCatalogEntry(other.to_string())),
            },
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match &self.kind {
            ModulusKind::Zero => 0.0,
            ModulusKind::Linear(a) => a * x,
            ModulusKind::Osgood => {
                if x == 0.0 {
                    0.0
                } else if x <= 1.0 {
                    x * (1.0 - x.ln())
                } else {
                    1.0
                }
            }
            ModulusKind::Sqrt => x.sqrt(),
            ModulusKind::CappedLinear { slope, cap } => (slope * x).min(*cap),
            ModulusKind::Table(t) => t.eval(x),
            ModulusKind::Custom(f) => f(x),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth_k(&self) -> f64 {
        self.growth_k
    }

    pub fn osgood_declared(&self) -> bool {
        self.osgood_declared
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ModulusKind::Zero)
    }

    /// `Some(a)` when the modulus is `x -> a x`.
    pub fn linear_slope(&self) -> Option<f64> {
        match self.kind {
            ModulusKind::Zero => Some(0.0),
            ModulusKind::Linear(a) => Some(a),
            _ => None,
        }
    }
}

/// Pure, reentrant driver body.
pub trait DriverFn: Send + Sync {
    fn eval(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]);
}

impl<F> DriverFn for F
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        self(t, y, z, out)
    }
}

/// A driver with its moduli `Phi` (in `y`) and `Psi` (in `z`).
#[derive(Clone)]
pub struct Driver {
    name: String,
    d: usize,
    m: usize,
    body: Arc<dyn DriverFn>,
    modulus_y: Modulus,
    modulus_z: Modulus,
    lipschitz: Option<f64>,
    closeness_bound: Option<f64>,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("modulus_y", &self.modulus_y)
            .field("modulus_z", &self.modulus_z)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Driver {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        m: usize,
        modulus_y: Modulus,
        modulus_z: Modulus,
        lipschitz: Option<f64>,
        body: impl DriverFn + 'static,
    ) -> Self {
        assert!(d >= 1 && m >= 1, "driver dimensions must be positive");
        Driver {
            name: name.into(),
            d,
            m,
            body: Arc::new(body),
            modulus_y,
            modulus_z,
            lipschitz,
            closeness_bound: None,
        }
    }

    /// The scalar driver `f(t, y, z) = phi(|y|) + eps` of the deterministic
    /// comparison equation.
    pub fn deterministic(phi: Modulus, epsilon: f64) -> Self {
        let lip = phi.linear_slope();
        let body_phi = phi.clone();
        Driver::new(
            alloc::format!("{}+{epsilon}", phi.name()),
            1,
            1,
            phi,
            Modulus::zero(),
            lip,
            move |_t: f64, y: &[f64], _z: &[f64], out: &mut [f64]| out[0] = body_phi.eval(y[0].abs()) + epsilon,
        )
    }

    pub fn eval(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.d);
        debug_assert_eq!(z.len(), self.d * self.m);
        self.body.eval(t, y, z, out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `(d, m)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.m)
    }

    pub fn modulus_y(&self) -> &Modulus {
        &self.modulus_y
    }

    pub fn modulus_z(&self) -> &Modulus {
        &self.modulus_z
    }

    pub fn lipschitz_constant(&self) -> Option<f64> {
        self.lipschitz
    }

    /// For mollified drivers: the recorded bound on `sup |f_n - f|`.
    pub fn closeness_bound(&self) -> Option<f64> {
        self.closeness_bound
    }

    /// Linear-growth constant `K` shared by both moduli.
    pub fn growth_k(&self) -> f64 {
        self.modulus_y.growth_k().max(self.modulus_z.growth_k())
    }

    pub fn depends_on_y(&self) -> bool {
        !self.modulus_y.is_zero()
    }

    pub fn depends_on_z(&self) -> bool {
        !self.modulus_z.is_zero()
    }
}

#[derive(Clone)]
enum TerminalKind {
    Markovian(Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>),
    PathDependent(Arc<dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync>),
}

/// Terminal value `xi`, a function of the Brownian path.
#[derive(Clone)]
pub struct TerminalCondition {
    name: String,
    d: usize,
    kind: TerminalKind,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("markovian", &self.is_markovian())
            .finish()
    }
}

impl TerminalCondition {
    /// `xi = g(B(1))`.
    pub fn markovian(
        name: impl Into<String>,
        d: usize,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        TerminalCondition {
            name: name.into(),
            d,
            kind: TerminalKind::Markovian(Arc::new(g)),
        }
    }

    /// `xi = g(path)`, with the path passed time-major with `m` coordinates
    /// per grid point.
    pub fn path_dependent(
        name: impl Into<String>,
        d: usize,
        g: impl Fn(&[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        TerminalCondition {
            name: name.into(),
            d,
            kind: TerminalKind::PathDependent(Arc::new(g)),
        }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self::markovian(alloc::format!("constant({c})"), d, move |_b, out| out.fill(c))
    }

    /// `xi^i = scale * B^{i mod m}(1)`.
    pub fn brownian(d: usize, scale: f64) -> Self {
        Self::markovian(alloc::format!("brownian({scale})"), d, move |b, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = scale * b[i % b.len()];
            }
        })
    }

    /// `xi^i = sin(B^{i mod m}(1))`.
    pub fn sine(d: usize) -> Self {
        Self::markovian("sine", d, |b, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = b[i % b.len()].sin();
            }
        })
    }

    /// `xi^i = |B^{i mod m}(1)|`.
    pub fn abs(d: usize) -> Self {
        Self::markovian("abs", d, |b, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = b[i % b.len()].abs();
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn is_markovian(&self) -> bool {
        matches!(self.kind, TerminalKind::Markovian(_))
    }

    pub fn eval(&self, ensemble: &PathEnsemble, path: usize, out: &mut [f64]) {
        match &self.kind {
            TerminalKind::Markovian(g) => g(ensemble.value(path, ensemble.grid().steps()), out),
            TerminalKind::PathDependent(g) => g(ensemble.path(path), ensemble.dims(), out),
        }
    }
}
