//! Mollification `f_n = f * psi_n` by a fixed tensor midpoint rule.
//!
//! The bump is `psi(w) = c exp(-1 / (1 - |w|^2))` on the unit ball of the
//! `(y, z)`-space, `D = d + d m` axes, rescaled to radius `r / n`. The
//! scaled kernel is `n^D psi(n w / r) / r^D`, which keeps unit mass in every
//! dimension. Axes along which the driver is constant (zero modulus) are
//! summed out of the weights once, so the rule evaluates `f` only at nodes
//! that differ in the coordinates it actually reads. This is the same
//! finite sum as the full tensor rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::{Driver, DriverFn};
use crate::error::{Error, Result};

const MAX_ACTIVE_NODES: usize = 20_000_000;

/// Smooth compactly supported bump used for mollification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierKernel {
    pub support_radius: f64,
    pub nodes_per_axis: usize,
}

impl Default for MollifierKernel {
    fn default() -> Self {
        MollifierKernel {
            support_radius: 1.0,
            nodes_per_axis: 9,
        }
    }
}

/// Unnormalized bump profile as a function of `|w|^2`.
fn profile(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

impl MollifierKernel {
    pub fn new(support_radius: f64, nodes_per_axis: usize) -> Result<Self> {
        if !(support_radius > 0.0) {
            return Err(Error::invalid("support_radius", "must be positive"));
        }
        if nodes_per_axis < 2 {
            return Err(Error::invalid(
                "nodes_per_axis",
                "quadrature needs at least 2 nodes per axis",
            ));
        }
        Ok(MollifierKernel {
            support_radius,
            nodes_per_axis,
        })
    }

    /// Normalization constant `c` of the unit bump in `dims` dimensions,
    /// computed from the tensor midpoint rule so the discrete mass is one.
    pub fn normalization(&self, dims: usize) -> f64 {
        let q = self.nodes_per_axis;
        let cell = (2.0 / q as f64).powi(dims as i32);
        let counts = squared_norm_counts(q, dims);
        let total: f64 = counts
            .iter()
            .enumerate()
            .map(|(s, &c)| c * profile(s as f64 / (q * q) as f64))
            .sum();
        1.0 / (total * cell)
    }

    /// Discrete mass `c * sum(psi(node)) * cell`; one up to rounding.
    pub fn mass(&self, dims: usize) -> f64 {
        let q = self.nodes_per_axis;
        let cell = (2.0 / q as f64).powi(dims as i32);
        let c = self.normalization(dims);
        squared_norm_counts(q, dims)
            .iter()
            .enumerate()
            .map(|(s, &n)| n * c * profile(s as f64 / (q * q) as f64) * cell)
            .sum()
    }

    /// `int |grad psi| / int psi` for the unit bump in `dims` dimensions,
    /// by a fine radial Simpson rule (the sphere area cancels).
    pub fn gradient_mass(&self, dims: usize) -> f64 {
        let panels = 20_000;
        let h = 1.0 / panels as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=panels {
            let rho = i as f64 * h;
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let r2 = rho * rho;
            let p = profile(r2);
            let jac = rho.powi(dims as i32 - 1);
            let dp = if r2 < 1.0 {
                2.0 * rho / ((1.0 - r2) * (1.0 - r2)) * p
            } else {
                0.0
            };
            num += w * dp * jac;
            den += w * p * jac;
        }
        num / den
    }
}

/// Number of points of the `q^dims` midpoint lattice on `[-1, 1]^dims` per
/// value of `sum (2 i + 1 - q)^2`, i.e. of `|w|^2 q^2`.
fn squared_norm_counts(q: usize, dims: usize) -> Vec<f64> {
    let max1 = (q - 1) * (q - 1);
    let mut counts = vec![1.0];
    for _ in 0..dims {
        let mut next = vec![0.0; counts.len() + max1];
        for (s, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for i in 0..q {
                let k = (2 * i + 1) as isize - q as isize;
                next[s + (k * k) as usize] += c;
            }
        }
        counts = next;
    }
    counts
}

struct Mollified {
    base: Driver,
    d: usize,
    m: usize,
    y_active: bool,
    z_active: bool,
    /// Node offsets (already scaled by `r / n`) for the active axes.
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

impl DriverFn for Mollified {
    fn eval(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        let (d, dm) = (self.d, self.d * self.m);
        let width = self.y_active as usize * d + self.z_active as usize * dm;
        let mut ys = y.to_vec();
        let mut zs = z.to_vec();
        let mut tmp = vec![0.0; d];
        out.fill(0.0);
        for (w, off) in self.weights.iter().zip(self.offsets.chunks_exact(width.max(1))) {
            let mut at = 0;
            if self.y_active {
                for i in 0..d {
                    ys[i] = y[i] - off[i];
                }
                at = d;
            }
            if self.z_active {
                for k in 0..dm {
                    zs[k] = z[k] - off[at + k];
                }
            }
            self.base.eval(t, &ys, &zs, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o += w * v;
            }
        }
    }
}

/// Returns the Lipschitz approximant `f_n`.
///
/// The result keeps the moduli of `f` (it is a convex combination of
/// translates), records `Phi(r/n) + Psi(r/n)` as its closeness bound to
/// `f`, and carries the Lipschitz estimate
/// `(Phi(h) + Psi(h)) * int|grad psi| / h` with `h = r/n`, i.e. the bound
/// for the exact convolution, capped by the Lipschitz constant of `f`
/// when it has one.
pub fn mollify(driver: &Driver, kernel: &MollifierKernel, n: u32) -> Result<Driver> {
    if n == 0 {
        return Err(Error::invalid("n", "mollification index must be at least 1"));
    }
    let kernel = MollifierKernel::new(kernel.support_radius, kernel.nodes_per_axis)?;
    let (d, m) = driver.dims();
    let full_dims = d + d * m;
    let y_active = driver.depends_on_y();
    let z_active = driver.depends_on_z();
    let active = y_active as usize * d + z_active as usize * d * m;
    let q = kernel.nodes_per_axis;
    let h = kernel.support_radius / n as f64;

    let (offsets, weights) = if active == 0 {
        (Vec::new(), vec![1.0])
    } else {
        let total_nodes = (q as f64).powi(active as i32);
        if total_nodes > MAX_ACTIVE_NODES as f64 {
            return Err(Error::invalid(
                "nodes_per_axis",
                format!("{q}^{active} quadrature nodes exceed the limit of {MAX_ACTIVE_NODES}"),
            ));
        }
        let inactive = squared_norm_counts(q, full_dims - active);
        let q2 = (q * q) as f64;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; active];
        loop {
            let s_active: usize = idx
                .iter()
                .map(|&i| {
                    let k = (2 * i + 1) as isize - q as isize;
                    (k * k) as usize
                })
                .sum();
            let w: f64 = inactive
                .iter()
                .enumerate()
                .map(|(s, &c)| c * profile((s_active + s) as f64 / q2))
                .sum();
            if w > 0.0 {
                weights.push(w);
                offsets.extend(idx.iter().map(|&i| h * (-1.0 + (2 * i + 1) as f64 / q as f64)));
            }
            // odometer
            let mut axis = 0;
            while axis < active {
                idx[axis] += 1;
                if idx[axis] < q {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == active {
                break;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        (offsets, weights)
    };

    let oscillation = driver.modulus_y().eval(h) + driver.modulus_z().eval(h);
    let smooth_bound = oscillation * kernel.gradient_mass(full_dims) / h;
    let lipschitz = match driver.lipschitz_constant() {
        Some(l) => l.min(smooth_bound),
        None => smooth_bound,
    };
    let body = Mollified {
        base: driver.clone(),
        d,
        m,
        y_active,
        z_active,
        offsets,
        weights,
    };
    let mut out = Driver::new(
        format!("{}*psi_{n}", driver.name()),
        d,
        m,
        driver.modulus_y().clone(),
        driver.modulus_z().clone(),
        Some(lipschitz),
        body,
    );
    out.closeness_bound = Some(oscillation);
    Ok(out)
}
