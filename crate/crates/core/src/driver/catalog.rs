use alloc::string::ToString;

#[allow(unused_imports)]
use num_traits::Float;

use super::{Driver, Modulus};
use crate::error::{Error, Result};
use crate::stats::norm;

/// Names accepted by [`builtin_catalog`].
pub const CATALOG: &[&str] = &["zero", "linear", "sine", "osgood", "abs", "sqrt"];

/// Parameters of the affine catalog driver `f = a y + b (row sums of z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogParams {
    pub a: f64,
    pub b: f64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        CatalogParams { a: 0.5, b: 0.3 }
    }
}

/// Builds a catalog driver for `d`-dimensional `y` and `m`-dimensional noise.
///
/// * `zero`   - `f = 0`.
/// * `linear` - `f^i = a y^i + b sum_k z^{ik}`; Lipschitz `max(|a|, |b| sqrt(m))`.
/// * `sine`   - `f^i = sin(y^i)`, `Phi = id`.
/// * `osgood` - `f = Phi(|y|) u` with `Phi(x) = x (1 - ln x)` capped at 1 and
///   `u = (1, ..., 1) / sqrt(d)`; not Lipschitz.
/// * `abs`    - `f = |y| u`.
/// * `sqrt`   - `f = sqrt(|y|) u`; continuous but fails the Osgood condition.
pub fn builtin_catalog(name: &str, d: usize, m: usize, params: &CatalogParams) -> Result<Driver> {
    if d == 0 || m == 0 {
        return Err(Error::invalid("dims", "d and m must be positive"));
    }
    let unit = 1.0 / (d as f64).sqrt();
    let driver = match name {
        "zero" => Driver::new(
            "zero",
            d,
            m,
            Modulus::zero(),
            Modulus::zero(),
            Some(0.0),
            |_t: f64, _y: &[f64], _z: &[f64], out: &mut [f64]| out.fill(0.0),
        ),
        "linear" => {
            let CatalogParams { a, b } = *params;
            let psi_slope = b.abs() * (m as f64).sqrt();
            Driver::new(
                "linear",
                d,
                m,
                Modulus::linear(a.abs()),
                Modulus::linear(psi_slope),
                Some(a.abs().max(psi_slope)),
                move |_t: f64, y: &[f64], z: &[f64], out: &mut [f64]| {
                    for (i, o) in out.iter_mut().enumerate() {
                        let row: f64 = z[i * m..(i + 1) * m].iter().sum();
                        *o = a * y[i] + b * row;
                    }
                },
            )
        }
        "sine" => Driver::new(
            "sine",
            d,
            m,
            Modulus::identity(),
            Modulus::zero(),
            Some(1.0),
            |_t: f64, y: &[f64], _z: &[f64], out: &mut [f64]| {
                for (o, yi) in out.iter_mut().zip(y) {
                    *o = yi.sin();
                }
            },
        ),
        "osgood" | "abs" | "sqrt" => {
            let phi = match name {
                "osgood" => Modulus::osgood(),
                "abs" => Modulus::identity(),
                _ => Modulus::sqrt(),
            };
            let lip = (name == "abs").then_some(1.0);
            let body_phi = phi.clone();
            Driver::new(
                name,
                d,
                m,
                phi,
                Modulus::zero(),
                lip,
                move |_t: f64, y: &[f64], _z: &[f64], out: &mut [f64]| {
                    out.fill(body_phi.eval(norm(y)) * unit);
                },
            )
        }
        other => return Err(Error::UnknownCatalogEntry(other.to_string())),
    };
    Ok(driver)
}
