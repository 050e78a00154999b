//! Signed `z`-combinations, Novikov windows, bounded drifts, exponential
//! densities and pathwise domination checks.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::driver::Modulus;
use crate::error::{Error, Result};
use crate::ode::OdeSolution;
use crate::solver::SolutionPair;
use crate::stats::{mean_and_stderr, norm, sgn};
use crate::stochastic::{integrate_abs, AdaptedProcess, PathEnsemble, Shape, StoppingTime};

#[derive(Debug, Clone, PartialEq)]
pub struct SignedCombination {
    /// `z_mn = sum_i sgn(dY^i) dZ^i`, an `m`-vector on the `N` left points.
    pub z_mn: AdaptedProcess,
    /// `|z_mn|` on the `N` left points.
    pub magnitude: AdaptedProcess,
    /// `int_0^t |z_mn| ds` on all `N + 1` points.
    pub cumulative: AdaptedProcess,
    /// `||Z_a - Z_b||` (Frobenius) on the `N` left points.
    pub z_norm_diff: AdaptedProcess,
}

pub fn signed_z_combination(a: &SolutionPair, b: &SolutionPair) -> Result<SignedCombination> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch("solutions differ in (d, m)".into()));
    }
    if a.meta.ensemble != b.meta.ensemble || a.paths() != b.paths() || a.grid() != b.grid() {
        return Err(Error::EnsembleMismatch);
    }
    let (d, m) = a.dims();
    let grid = a.grid();
    let n = grid.steps();
    let mut z_mn = AdaptedProcess::zeros(grid, Shape::Vector(m), a.paths(), n);
    let mut z_norm_diff = AdaptedProcess::zeros(grid, Shape::Scalar, a.paths(), n);
    let mut diff = vec![0.0; d * m];
    for p in 0..a.paths() {
        for j in 0..n {
            let (ya, yb) = (a.y.at(p, j), b.y.at(p, j));
            let (za, zb) = (a.z.at(p, j), b.z.at(p, j));
            for ((dv, x), y) in diff.iter_mut().zip(za).zip(zb) {
                *dv = x - y;
            }
            z_norm_diff.at_mut(p, j)[0] = norm(&diff);
            let out = z_mn.at_mut(p, j);
            for i in 0..d {
                let s = sgn(ya[i] - yb[i]);
                if s != 0.0 {
                    for k in 0..m {
                        out[k] += s * diff[i * m + k];
                    }
                }
            }
        }
    }
    let magnitude = z_mn.map_scalar(norm);
    let cumulative = integrate_abs(&magnitude, grid)?;
    Ok(SignedCombination {
        z_mn,
        magnitude,
        cumulative,
        z_norm_diff,
    })
}

/// Per-path window `[left, right)` on which `eps0 <= |z_mn|` and
/// `||Z_a - Z_b|| < 1 / eps0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovWindow {
    pub left: StoppingTime,
    pub right: StoppingTime,
    pub eps0: f64,
}

impl GirsanovWindow {
    /// `[0, N)` on every path, with no sandwich constraint.
    pub fn full(paths: usize, steps: usize) -> Self {
        GirsanovWindow {
            left: StoppingTime::constant(paths, 0),
            right: StoppingTime::constant(paths, steps),
            eps0: 0.0,
        }
    }

    pub fn paths(&self) -> usize {
        self.left.paths()
    }

    pub fn contains(&self, path: usize, j: usize) -> bool {
        self.left.index(path) <= j && j < self.right.index(path)
    }

    /// Fraction of paths with `left < right`.
    pub fn nondegenerate_fraction(&self) -> f64 {
        let open = (0..self.paths())
            .filter(|&p| self.left.index(p) < self.right.index(p))
            .count();
        open as f64 / self.paths().max(1) as f64
    }

    /// Checks the sandwich at every in-window point.
    pub fn check_sandwich(&self, magnitude: &AdaptedProcess, z_norm_diff: &AdaptedProcess) -> Result<()> {
        for p in 0..self.paths() {
            for j in self.left.index(p)..self.right.index(p) {
                let z = magnitude.scalar(p, j);
                if !(z >= self.eps0) || z_norm_diff.scalar(p, j) * self.eps0 >= 1.0 {
                    return Err(Error::WindowInvariant {
                        path: p,
                        index: j,
                        norm: z,
                        eps0: self.eps0,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Entry is the first index in `[from, to)` with `|z_mn| >= eps0`; the
/// exit is the earlier of the first later index with `|z_mn| < eps0` and
/// the first index with `||dZ|| >= 1 / eps0`. Everything is clipped to
/// `to` and `left = min(entry, right)`.
pub fn novikov_window(
    magnitude: &AdaptedProcess,
    z_norm_diff: &AdaptedProcess,
    interval: (&StoppingTime, &StoppingTime),
    eps0: f64,
) -> Result<GirsanovWindow> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::invalid("eps0", "must lie in (0, 1)"));
    }
    if magnitude.shape() != Shape::Scalar || z_norm_diff.shape() != Shape::Scalar {
        return Err(Error::ShapeMismatch("window inputs must be scalar".into()));
    }
    let (from, to) = interval;
    let paths = magnitude.paths();
    if z_norm_diff.paths() != paths || from.paths() != paths || to.paths() != paths {
        return Err(Error::ShapeMismatch("window inputs cover different ensembles".into()));
    }
    let n = magnitude.times();
    let big = 1.0 / eps0;
    let mut left = Vec::with_capacity(paths);
    let mut right = Vec::with_capacity(paths);
    for p in 0..paths {
        let (a, b) = (from.index(p), to.index(p));
        if a > b || b > n {
            return Err(Error::WindowInverted {
                path: p,
                from: a,
                to: b,
            });
        }
        let entry = (a..b).find(|&j| magnitude.scalar(p, j) >= eps0).unwrap_or(b);
        let blowup = (a..b).find(|&j| z_norm_diff.scalar(p, j) >= big).unwrap_or(b);
        let exit = (entry + 1..b).find(|&j| magnitude.scalar(p, j) < eps0).unwrap_or(b);
        let r = exit.min(blowup);
        left.push(entry.min(r));
        right.push(r);
    }
    Ok(GirsanovWindow {
        left: StoppingTime::new(left),
        right: StoppingTime::new(right),
        eps0,
    })
}

/// `Psi(||Z_a - Z_b||)` pointwise.
pub fn psi_values(psi: &Modulus, z_norm_diff: &AdaptedProcess) -> AdaptedProcess {
    z_norm_diff.map_scalar(|v| psi.eval(v[0]))
}

/// `sup |eta| = multiplier Psi(1 / eps0) / eps0`.
pub fn eta_bound(psi: &Modulus, eps0: f64, multiplier: f64) -> f64 {
    multiplier * psi.eval(1.0 / eps0) / eps0
}

/// `eta = multiplier Psi / |z_mn|^2 z_mn` inside the window, `0` outside.
pub fn drift_eta(
    psi_value: &AdaptedProcess,
    z_mn: &AdaptedProcess,
    window: &GirsanovWindow,
    multiplier: f64,
) -> Result<AdaptedProcess> {
    if psi_value.shape() != Shape::Scalar || psi_value.paths() != z_mn.paths() || window.paths() != z_mn.paths() {
        return Err(Error::ShapeMismatch("drift inputs disagree".into()));
    }
    let mut eta = AdaptedProcess::zeros(z_mn.grid(), z_mn.shape(), z_mn.paths(), z_mn.times());
    for p in 0..z_mn.paths() {
        for j in window.left.index(p)..window.right.index(p) {
            let z = z_mn.at(p, j);
            let mag = norm(z);
            if !(mag >= window.eps0) || mag == 0.0 {
                return Err(Error::WindowInvariant {
                    path: p,
                    index: j,
                    norm: mag,
                    eps0: window.eps0,
                });
            }
            let c = multiplier * psi_value.scalar(p, j) / (mag * mag);
            for (e, zk) in eta.at_mut(p, j).iter_mut().zip(z) {
                *e = c * zk;
            }
        }
    }
    Ok(eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub log_density: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// Density-weighted mean of `sum_window (dB - eta h)` per coordinate.
    pub corrected_drift: Vec<f64>,
    pub corrected_drift_stderr: Vec<f64>,
    /// Every density positive and finite.
    pub positive: bool,
}

impl DensityReport {
    /// Density-weighted mean of `values` and its standard error.
    pub fn weighted_mean(&self, values: &[f64]) -> (f64, f64) {
        let w: Vec<f64> = self.density.iter().zip(values).map(|(d, v)| d * v).collect();
        mean_and_stderr(&w)
    }
}

/// `exp(sum eta dB - 1/2 sum |eta|^2 h)` over each path's window.
pub fn density(eta: &AdaptedProcess, ensemble: &PathEnsemble, window: &GirsanovWindow) -> Result<DensityReport> {
    let m = ensemble.dims();
    if eta.width() != m || eta.paths() != ensemble.count() || window.paths() != ensemble.count() {
        return Err(Error::ShapeMismatch("drift does not match the ensemble".into()));
    }
    let h = ensemble.grid().step();
    let count = ensemble.count();
    let mut log_density = Vec::with_capacity(count);
    let mut corrected = vec![Vec::with_capacity(count); m];
    for p in 0..count {
        let mut ld = 0.0;
        let mut acc = vec![0.0; m];
        for j in window.left.index(p)..window.right.index(p) {
            let e = eta.at(p, j);
            let mut sq = 0.0;
            for k in 0..m {
                let db = ensemble.increment(p, j, k);
                ld += e[k] * db;
                sq += e[k] * e[k];
                acc[k] += db - e[k] * h;
            }
            ld -= 0.5 * sq * h;
        }
        log_density.push(ld);
        for (c, a) in corrected.iter_mut().zip(acc) {
            c.push(a);
        }
    }
    let density: Vec<f64> = log_density.iter().map(|l| l.exp()).collect();
    let positive = density.iter().all(|d| *d > 0.0 && d.is_finite());
    let (mean, stderr) = mean_and_stderr(&density);
    let mut report = DensityReport {
        log_density,
        density,
        mean,
        stderr,
        corrected_drift: Vec::with_capacity(m),
        corrected_drift_stderr: Vec::with_capacity(m),
        positive,
    };
    for c in &corrected {
        let (mu, se) = report.weighted_mean(c);
        report.corrected_drift.push(mu);
        report.corrected_drift_stderr.push(se);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    /// `max (sum_i w_i |dY^i| - u)` over checked points; `-inf` when none.
    pub worst_exceedance: f64,
    /// `(path, grid index)` of the worst point.
    pub worst_at: Option<(usize, usize)>,
    pub violations: usize,
    pub checked_points: usize,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `sum_i w_i |Y_a^i - Y_b^i| <= u + slack` on `[left, right]`.
pub fn domination_check(
    a: &SolutionPair,
    b: &SolutionPair,
    u: &OdeSolution,
    window: &GirsanovWindow,
    weights: &[f64],
    slack: f64,
) -> Result<DominationReport> {
    let (d, _) = a.dims();
    if a.dims() != b.dims() || a.paths() != b.paths() || a.grid() != b.grid() {
        return Err(Error::EnsembleMismatch);
    }
    if weights.len() != d {
        return Err(Error::ShapeMismatch("one weight per component is required".into()));
    }
    if window.paths() != a.paths() {
        return Err(Error::ShapeMismatch("window covers a different ensemble".into()));
    }
    if !(slack >= 0.0) {
        return Err(Error::invalid("slack", "must be non-negative"));
    }
    let grid = a.grid();
    let n = grid.steps();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = None;
    let mut violations = 0;
    let mut checked = 0;
    for p in 0..a.paths() {
        let (l, r) = (window.left.index(p), window.right.index(p));
        if l >= r {
            continue;
        }
        for j in l..=r.min(n) {
            let gap: f64 =
                a.y.at(p, j)
                    .iter()
                    .zip(b.y.at(p, j))
                    .zip(weights)
                    .map(|((x, y), w)| w * (x - y).abs())
                    .sum();
            let ex = gap - u.at(grid.time(j));
            checked += 1;
            if ex > slack {
                violations += 1;
            }
            if ex > worst {
                worst = ex;
                worst_at = Some((p, j));
            }
        }
    }
    Ok(DominationReport {
        worst_exceedance: worst,
        worst_at,
        violations,
        checked_points: checked,
        slack,
        holds: violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{solve_backward, BackwardOdeProblem};
    use crate::solver::solve_deterministic;
    use crate::stochastic::TimeGrid;

    fn scalar(values: &[f64]) -> AdaptedProcess {
        let grid = TimeGrid::new(values.len()).unwrap();
        AdaptedProcess::from_fn(&grid, Shape::Scalar, 1, values.len(), |_, j, v| v[0] = values[j])
    }

    fn whole(n: usize) -> (StoppingTime, StoppingTime) {
        (StoppingTime::constant(1, 0), StoppingTime::constant(1, n))
    }

    #[test]
    fn constant_window_is_full() {
        let z = scalar(&[0.5; 10]);
        let (a, b) = whole(10);
        let w = novikov_window(&z, &z, (&a, &b), 0.1).unwrap();
        assert_eq!((w.left.index(0), w.right.index(0)), (0, 10));
        let zero = scalar(&[0.0; 10]);
        let w = novikov_window(&zero, &zero, (&a, &b), 0.1).unwrap();
        assert_eq!((w.left.index(0), w.right.index(0)), (10, 10));
        assert_eq!(w.nondegenerate_fraction(), 0.0);
        assert!(novikov_window(&z, &z, (&a, &b), 1.0).is_err());
    }

    #[test]
    fn blowup_closes_the_window() {
        let z = scalar(&[0.5; 8]);
        let dz = scalar(&[0.5, 0.5, 0.5, 20.0, 0.5, 0.5, 0.5, 0.5]);
        let (a, b) = whole(8);
        let w = novikov_window(&z, &dz, (&a, &b), 0.1).unwrap();
        assert_eq!((w.left.index(0), w.right.index(0)), (0, 3));
        w.check_sandwich(&z, &dz).unwrap();
    }

    #[test]
    fn windows_need_not_be_nested_in_eps0() {
        // a smaller threshold can enter earlier and leave earlier
        let z = scalar(&[0.06, 0.01, 0.5, 0.5]);
        let (a, b) = whole(4);
        let w1 = novikov_window(&z, &z, (&a, &b), 0.1).unwrap();
        let w2 = novikov_window(&z, &z, (&a, &b), 0.05).unwrap();
        assert_eq!((w1.left.index(0), w1.right.index(0)), (2, 4));
        assert_eq!((w2.left.index(0), w2.right.index(0)), (0, 1));
    }

    #[test]
    fn eta_magnitude_and_support() {
        let grid = TimeGrid::new(6).unwrap();
        let zmn = AdaptedProcess::from_fn(&grid, Shape::Vector(1), 1, 6, |_, _, v| v[0] = 0.5);
        let dz = scalar(&[0.5; 6]);
        let psi = psi_values(&Modulus::identity(), &dz);
        let window = GirsanovWindow {
            left: StoppingTime::constant(1, 2),
            right: StoppingTime::constant(1, 5),
            eps0: 0.1,
        };
        let eta = drift_eta(&psi, &zmn, &window, 2.0).unwrap();
        for j in 0..6 {
            let e = eta.scalar(0, j);
            if window.contains(0, j) {
                assert!((e - 2.0).abs() < 1e-15);
            } else {
                assert_eq!(e.to_bits(), 0f64.to_bits());
            }
        }
        assert!(eta.scalar(0, 3).abs() <= eta_bound(&Modulus::identity(), 0.1, 2.0));
        let zero_psi = psi_values(&Modulus::zero(), &dz);
        assert!(drift_eta(&zero_psi, &zmn, &window, 2.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let small = AdaptedProcess::from_fn(&grid, Shape::Vector(1), 1, 6, |_, _, v| v[0] = 0.01);
        assert!(matches!(
            drift_eta(&psi, &small, &window, 2.0),
            Err(Error::WindowInvariant { .. })
        ));
    }

    #[test]
    fn zero_drift_has_unit_density() {
        let grid = TimeGrid::new(10).unwrap();
        let ens = PathEnsemble::sample(&grid, 2, 100, 3).unwrap();
        let eta = AdaptedProcess::zeros(&grid, Shape::Vector(2), 100, 10);
        let r = density(&eta, &ens, &GirsanovWindow::full(100, 10)).unwrap();
        assert!(r.density.iter().all(|&d| d == 1.0));
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn deterministic_comparison() {
        let grid = TimeGrid::new(200).unwrap();
        // for a linear modulus the difference and u agree up to rounding
        for (phi, slack) in [(Modulus::osgood(), 0.0), (Modulus::identity(), 1e-12)] {
            let a = solve_deterministic(&phi, 0.0, 0.6, &grid).unwrap();
            let b = solve_deterministic(&phi, 0.0, 0.2, &grid).unwrap();
            let u = solve_backward(&BackwardOdeProblem::unit(phi.clone(), 0.0, 0.4).unwrap(), 200).unwrap();
            let r = domination_check(&a, &b, &u, &GirsanovWindow::full(1, 200), &[1.0], slack).unwrap();
            assert!(r.holds, "{}: {r:?}", phi.name());
            let same = domination_check(&a, &a, &u, &GirsanovWindow::full(1, 200), &[1.0], 0.0).unwrap();
            assert!(same.holds && same.worst_exceedance <= 0.0);
        }
    }
}
