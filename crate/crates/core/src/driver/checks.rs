use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Driver, Modulus};
use crate::error::{Error, Result};
use crate::stats::norm;

/// Region sampled by the probe checks: `t` in `[0, 1]`, every coordinate
/// of `y` and `z` in `[-radius, radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeBox {
    pub radius: f64,
    /// Smallest probed separation, as a power of ten.
    pub min_log10_gap: f64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        ProbeBox {
            radius: 2.0,
            min_log10_gap: -6.0,
        }
    }
}

/// Worst observed ratios `|f(y1) - f(y2)| / Phi(|y1 - y2|)` and the
/// analogous `z` quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuliReport {
    pub probes: usize,
    pub y_violations: usize,
    pub z_violations: usize,
    pub worst_ratio_y: f64,
    pub worst_ratio_z: f64,
}

impl ModuliReport {
    pub fn passed(&self) -> bool {
        self.y_violations == 0 && self.z_violations == 0
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    bx: ProbeBox,
}

impl Sampler {
    fn point(&mut self, out: &mut [f64]) {
        let r = self.bx.radius;
        for v in out.iter_mut() {
            *v = self.rng.random_range(-r..=r);
        }
    }

    /// Fills `b` with `a + gap * direction`, gap log-uniform.
    fn neighbour(&mut self, a: &[f64], b: &mut [f64]) {
        let hi = (2.0 * self.bx.radius).log10();
        let gap = 10f64.powf(self.rng.random_range(self.bx.min_log10_gap..=hi));
        let mut dir: Vec<f64> = (0..a.len()).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        let n = norm(&dir).max(1e-300);
        dir.iter_mut().for_each(|v| *v /= n);
        for ((bi, ai), di) in b.iter_mut().zip(a).zip(&dir) {
            *bi = ai + gap * di;
        }
    }
}

fn violates(lhs: f64, rhs: f64) -> bool {
    lhs > rhs * (1.0 + 1e-9) + 1e-12
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Samples `probes` tuples `(t, y1, y2, z)` and `(t, y, z1, z2)` and checks
/// `|f(t,y1,z) - f(t,y2,z)| <= Phi(|y1 - y2|)` and the `Psi` counterpart.
/// One probe in ten pins the base point at the origin, where the catalog
/// moduli are least regular.
pub fn verify_moduli(driver: &Driver, probes: usize, seed: u64) -> Result<ModuliReport> {
    verify_moduli_in(driver, probes, seed, ProbeBox::default())
}

pub fn verify_moduli_in(driver: &Driver, probes: usize, seed: u64, bx: ProbeBox) -> Result<ModuliReport> {
    if probes == 0 {
        return Err(Error::invalid("probes", "need at least one probe"));
    }
    let (d, m) = driver.dims();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        bx,
    };
    let (mut y1, mut y2) = (vec![0.0; d], vec![0.0; d]);
    let (mut z1, mut z2) = (vec![0.0; d * m], vec![0.0; d * m]);
    let (mut f1, mut f2) = (vec![0.0; d], vec![0.0; d]);
    let mut diff = vec![0.0; d];
    let mut report = ModuliReport {
        probes,
        y_violations: 0,
        z_violations: 0,
        worst_ratio_y: 0.0,
        worst_ratio_z: 0.0,
    };
    let gap = |f1: &[f64], f2: &[f64], diff: &mut [f64]| {
        for ((o, a), b) in diff.iter_mut().zip(f1).zip(f2) {
            *o = a - b;
        }
        norm(diff)
    };
    for i in 0..probes {
        let t: f64 = s.rng.random_range(0.0..=1.0);
        let at_origin = i % 10 == 0;

        // y direction
        if at_origin {
            y1.fill(0.0);
        } else {
            s.point(&mut y1);
        }
        s.neighbour(&y1, &mut y2);
        s.point(&mut z1);
        driver.eval(t, &y1, &z1, &mut f1);
        driver.eval(t, &y2, &z1, &mut f2);
        let lhs = gap(&f1, &f2, &mut diff);
        let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
        let rhs = driver.modulus_y().eval(norm(&dy));
        if violates(lhs, rhs) {
            report.y_violations += 1;
        }
        report.worst_ratio_y = report.worst_ratio_y.max(ratio(lhs, rhs));

        // z direction
        s.point(&mut y1);
        if at_origin {
            z1.fill(0.0);
        } else {
            s.point(&mut z1);
        }
        s.neighbour(&z1, &mut z2);
        driver.eval(t, &y1, &z1, &mut f1);
        driver.eval(t, &y1, &z2, &mut f2);
        let lhs = gap(&f1, &f2, &mut diff);
        let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
        let rhs = driver.modulus_z().eval(norm(&dz));
        if violates(lhs, rhs) {
            report.z_violations += 1;
        }
        report.worst_ratio_z = report.worst_ratio_z.max(ratio(lhs, rhs));
    }
    Ok(report)
}

/// Worst sampled joint difference quotient `|df| / (|dy| + ||dz||)` against
/// the driver's declared Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub declared: Option<f64>,
    pub worst_quotient: f64,
    pub violations: usize,
}

pub fn verify_lipschitz(driver: &Driver, probes: usize, seed: u64, bx: ProbeBox) -> LipschitzReport {
    let (d, m) = driver.dims();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        bx,
    };
    let (mut a, mut b) = (vec![0.0; d + d * m], vec![0.0; d + d * m]);
    let (mut fa, mut fb) = (vec![0.0; d], vec![0.0; d]);
    let bound = driver.lipschitz_constant();
    let mut report = LipschitzReport {
        declared: bound,
        worst_quotient: 0.0,
        violations: 0,
    };
    for _ in 0..probes {
        let t: f64 = s.rng.random_range(0.0..=1.0);
        s.point(&mut a);
        s.neighbour(&a, &mut b);
        driver.eval(t, &a[..d], &a[d..], &mut fa);
        driver.eval(t, &b[..d], &b[d..], &mut fb);
        let df: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
        let dy: Vec<f64> = a[..d].iter().zip(&b[..d]).map(|(x, y)| x - y).collect();
        let dz: Vec<f64> = a[d..].iter().zip(&b[d..]).map(|(x, y)| x - y).collect();
        let sep = norm(&dy) + norm(&dz);
        if sep == 0.0 {
            continue;
        }
        let q = norm(&df) / sep;
        report.worst_quotient = report.worst_quotient.max(q);
        if let Some(l) = bound {
            if q > l * (1.0 + 1e-9) + 1e-12 {
                report.violations += 1;
            }
        }
    }
    report
}

/// `max |f(t,y,z) - g(t,y,z)|` over sampled points of the probe box; one
/// probe in ten puts `y` at the origin.
pub fn sup_distance(f: &Driver, g: &Driver, probes: usize, seed: u64, bx: ProbeBox) -> Result<f64> {
    if f.dims() != g.dims() {
        return Err(Error::ShapeMismatch("drivers differ in (d, m)".into()));
    }
    let (d, m) = f.dims();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        bx,
    };
    let mut a = vec![0.0; d + d * m];
    let (mut fa, mut ga) = (vec![0.0; d], vec![0.0; d]);
    let mut worst: f64 = 0.0;
    for i in 0..probes {
        let t: f64 = s.rng.random_range(0.0..=1.0);
        s.point(&mut a);
        if i % 10 == 0 {
            a[..d].fill(0.0);
        }
        f.eval(t, &a[..d], &a[d..], &mut fa);
        g.eval(t, &a[..d], &a[d..], &mut ga);
        for (x, y) in fa.iter_mut().zip(&ga) {
            *x -= y;
        }
        worst = worst.max(norm(&fa));
    }
    Ok(worst)
}

/// `I(delta) = int_delta^1 dx / Phi(x)` sampled at `delta = 10^-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OsgoodCurve {
    pub deltas: Vec<f64>,
    pub integrals: Vec<f64>,
    /// Ratio of the last two per-decade increments of `I`.
    pub final_increment_ratio: f64,
    pub diverges: bool,
}

/// Numerical divergence heuristic for `int_{0+} dx / Phi(x)`.
///
/// Integrates decade by decade down to `delta_floor` (adaptive Simpson in
/// the variable `s = ln x`). The verdict is `true` when the integral has
/// passed `tolerance_growth` and its per-decade increments are not
/// shrinking geometrically (last increment ratio at least one half). A
/// convergent power-law tail such as `sqrt` has ratio `10^-(1/2)`.
pub fn osgood_check(phi: &Modulus, delta_floor: f64, tolerance_growth: f64) -> Result<OsgoodCurve> {
    if !(delta_floor > 0.0 && delta_floor < 1.0) {
        return Err(Error::invalid("delta_floor", "must lie in (0, 1)"));
    }
    let integrand = |s: f64| -> Result<f64> {
        let x = s.exp();
        let v = phi.eval(x);
        if v <= 0.0 {
            return Err(Error::DegenerateModulus { x });
        }
        Ok(x / v)
    };
    let decades = (-delta_floor.log10()).ceil().max(1.0) as usize;
    let mut deltas = Vec::with_capacity(decades);
    let mut integrals = Vec::with_capacity(decades);
    let mut increments = Vec::with_capacity(decades);
    let mut total = 0.0;
    let mut upper = 0.0f64; // ln 1
    for k in 1..=decades {
        let delta = 10f64.powi(-(k as i32)).max(delta_floor);
        let lower = delta.ln();
        let piece = adaptive_simpson(&integrand, lower, upper, 1e-12, 40)?;
        total += piece;
        increments.push(piece);
        deltas.push(delta);
        integrals.push(total);
        upper = lower;
    }
    let final_increment_ratio = match increments.len() {
        0 | 1 => 1.0,
        n => increments[n - 1] / increments[n - 2],
    };
    let diverges = total > tolerance_growth && final_increment_ratio >= 0.5;
    Ok(OsgoodCurve {
        deltas,
        integrals,
        final_increment_ratio,
        diverges,
    })
}

fn adaptive_simpson(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (fa, fb) = (f(a)?, f(b)?);
    let c = 0.5 * (a + b);
    let fc = f(c)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let c = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + c), 0.5 * (c + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (c - a) / 6.0 * (fa + 4.0 * flm + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, c, fa, fc, flm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, c, b, fc, fb, frm, right, 0.5 * tol, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{builtin_catalog, CatalogParams};

    #[test]
    fn osgood_verdicts() {
        // I(delta) = ln(1/delta)
        let id = osgood_check(&Modulus::identity(), 1e-8, 1.0).unwrap();
        assert!((id.integrals.last().unwrap() - 1e8f64.ln()).abs() < 1e-8);
        assert!(id.diverges);

        // I(delta) = 2 (1 - sqrt(delta)) -> 2
        let sq = osgood_check(&Modulus::sqrt(), 1e-8, 1.0).unwrap();
        assert!((sq.integrals.last().unwrap() - 2.0 * (1.0 - 1e-4)).abs() < 1e-8);
        assert!(!sq.diverges);

        // I(delta) = ln(1 - ln delta)
        let og = osgood_check(&Modulus::osgood(), 1e-8, 1.0).unwrap();
        let exact = (1.0 - 1e-8f64.ln()).ln();
        assert!((og.integrals.last().unwrap() - exact).abs() < 1e-8);
        assert!(og.diverges);

        assert!(matches!(
            osgood_check(&Modulus::zero(), 1e-3, 1.0),
            Err(Error::DegenerateModulus { .. })
        ));
        assert!(osgood_check(&Modulus::identity(), 1.5, 1.0).is_err());
    }

    #[test]
    fn moduli_probe_examples() {
        let p = CatalogParams::default();
        let zero = builtin_catalog("zero", 1, 1, &p).unwrap();
        assert!(verify_moduli(&zero, 1000, 1).unwrap().passed());

        let sine = builtin_catalog("sine", 1, 1, &p).unwrap();
        assert!(verify_moduli(&sine, 10_000, 2).unwrap().passed());

        let twice = Driver::new(
            "2y",
            1,
            1,
            Modulus::identity(),
            Modulus::zero(),
            Some(2.0),
            |_t: f64, y: &[f64], _z: &[f64], out: &mut [f64]| out[0] = 2.0 * y[0],
        );
        let r = verify_moduli(&twice, 1000, 3).unwrap();
        assert!(r.y_violations > 0);
        assert!((r.worst_ratio_y - 2.0).abs() < 1e-6, "{r:?}");
        assert!(verify_moduli(&twice, 0, 3).is_err());
    }

    #[test]
    fn lipschitz_probe() {
        let p = CatalogParams::default();
        let lin = builtin_catalog("linear", 2, 2, &p).unwrap();
        let r = verify_lipschitz(&lin, 10_000, 5, ProbeBox::default());
        assert_eq!(r.violations, 0);
        assert!(r.worst_quotient <= lin.lipschitz_constant().unwrap());
    }
}
