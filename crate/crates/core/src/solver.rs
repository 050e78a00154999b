//! Backward regression solver for Lipschitz BSDEs, the deterministic
//! special case, the discrete residual identity and the uniform a priori bound.
//!
//! For `j = N-1, ..., 0` the solver fits, on the basis at `B(t_j)`,
//!
//! * `E_j ~ E[Y_{j+1} | B(t_j)]`,
//! * `Z_j ~ E[(Y_{j+1} - E_j) dB_j^T | B(t_j)] / h`,
//!
//! and sets `Y_j = E_j + h f(t_j, Y_j, Z_j)` by Picard sweeps started at
//! `E_j`. The fitted coefficients are kept, so the solution can be replayed
//! on another ensemble: `Y_j` and `Z_j` then depend on `B(t_j)` only.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::driver::{Driver, Modulus, TerminalCondition};
use crate::error::{Error, Result};
use crate::ode::{solve_backward, BackwardOdeProblem};
use crate::regression::{fit, predict, HermiteBasis, RegressionConfig};
use crate::stats::norm;
use crate::stochastic::{AdaptedProcess, EnsembleId, PathEnsemble, Shape, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveMeta {
    pub driver: String,
    pub terminal: String,
    pub regression: RegressionConfig,
    pub picard_iters: usize,
    pub lipschitz: Option<f64>,
    /// `h L`; the Picard map contracts when this is below one.
    pub contraction: f64,
    pub contraction_warning: bool,
    pub ridge_fallbacks: usize,
    /// `max |Y|` over paths and times.
    pub sup_bound: f64,
    pub ensemble: Option<EnsembleId>,
}

impl SolveMeta {
    /// Metadata for processes that did not come out of [`solve_bsde`].
    pub fn external(label: &str, ensemble: Option<EnsembleId>) -> Self {
        SolveMeta {
            driver: label.to_string(),
            terminal: label.to_string(),
            regression: RegressionConfig { degree: 0, ridge: 0.0 },
            picard_iters: 0,
            lipschitz: None,
            contraction: 0.0,
            contraction_warning: false,
            ridge_fallbacks: 0,
            sup_bound: 0.0,
            ensemble,
        }
    }
}

struct Policy {
    basis: HermiteBasis,
    intercept: HermiteBasis,
    /// Per time index: `k x d` coefficients of `E_j`.
    coef_e: Vec<Vec<f64>>,
    /// Per time index: `k x (d m)` coefficients of `Z_j`.
    coef_z: Vec<Vec<f64>>,
    driver: Driver,
    terminal: TerminalCondition,
}

/// Discrete `(Y, Z)`: `Y` on `N + 1` points as a `d`-vector, `Z` on the
/// `N` left endpoints as a `d x m` matrix.
#[derive(Clone)]
pub struct SolutionPair {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    pub meta: SolveMeta,
    policy: Option<Arc<Policy>>,
}

impl core::fmt::Debug for SolutionPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SolutionPair")
            .field("paths", &self.paths())
            .field("steps", &self.grid().steps())
            .field("meta", &self.meta)
            .finish()
    }
}

impl SolutionPair {
    /// Wraps externally computed processes; the result has no policy to
    /// replay.
    pub fn from_parts(y: AdaptedProcess, z: AdaptedProcess, meta: SolveMeta) -> Result<Self> {
        let (d, paths, n) = (y.width(), y.paths(), y.grid().steps());
        let ok = matches!(y.shape(), Shape::Vector(_))
            && matches!(z.shape(), Shape::Matrix(zd, _) if zd == d)
            && y.times() == n + 1
            && z.times() == n
            && z.paths() == paths
            && z.grid() == y.grid();
        if !ok {
            return Err(Error::ShapeMismatch(
                "Y must be a d-vector on N + 1 points and Z a d x m matrix on N".into(),
            ));
        }
        Ok(SolutionPair {
            y,
            z,
            meta,
            policy: None,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.y.grid()
    }

    pub fn paths(&self) -> usize {
        self.y.paths()
    }

    /// `(d, m)`.
    pub fn dims(&self) -> (usize, usize) {
        match self.z.shape() {
            Shape::Matrix(d, m) => (d, m),
            _ => (self.y.width(), 1),
        }
    }

    /// Ensemble mean of `Y(0)` in each component.
    pub fn y0(&self) -> Vec<f64> {
        let d = self.y.width();
        let mut acc = vec![0.0; d];
        for p in 0..self.paths() {
            for (a, v) in acc.iter_mut().zip(self.y.at(p, 0)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.paths() as f64);
        acc
    }

    /// Replays the fitted policy on `ensemble`.
    pub fn evaluate(&self, ensemble: &PathEnsemble) -> Result<SolutionPair> {
        let policy = self
            .policy
            .as_ref()
            .ok_or_else(|| Error::invalid("solution", "no regression policy to replay"))?;
        let (d, m) = self.dims();
        if ensemble.dims() != m || ensemble.grid() != self.grid() {
            return Err(Error::ShapeMismatch(
                "replay ensemble has a different grid or dimension".into(),
            ));
        }
        let grid = ensemble.grid();
        let count = ensemble.count();
        let n = grid.steps();
        let h = grid.step();
        let mut y = AdaptedProcess::zeros(grid, Shape::Vector(d), count, n + 1);
        let mut z = AdaptedProcess::zeros(grid, Shape::Matrix(d, m), count, n);
        for p in 0..count {
            policy.terminal.eval(ensemble, p, y.at_mut(p, n));
        }
        let mut scratch = Scratch::new(d, m, policy.basis.len());
        for j in 0..n {
            let basis = if j == 0 { &policy.intercept } else { &policy.basis };
            let k = basis.len();
            let t = grid.time(j);
            for p in 0..count {
                state(ensemble, p, j, &mut scratch.x);
                basis.eval(&scratch.x, &mut scratch.row[..k]);
                predict(&scratch.row[..k], &policy.coef_e[j], d, &mut scratch.e);
                predict(&scratch.row[..k], &policy.coef_z[j], d * m, z.at_mut(p, j));
                picard(
                    &policy.driver,
                    t,
                    h,
                    &scratch.e,
                    z.at(p, j),
                    self.meta.picard_iters,
                    &mut scratch.tmp,
                    y.at_mut(p, j),
                );
            }
        }
        let mut meta = self.meta.clone();
        meta.ensemble = Some(ensemble.id());
        meta.sup_bound = sup_norm(&y);
        Ok(SolutionPair {
            y,
            z,
            meta,
            policy: self.policy.clone(),
        })
    }
}

struct Scratch {
    x: Vec<f64>,
    row: Vec<f64>,
    e: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize, k: usize) -> Self {
        Scratch {
            x: vec![0.0; m],
            row: vec![0.0; k],
            e: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }
}

/// Standardized state `B(t_j) / sqrt(t_j)`; zero at `t = 0`.
fn state(ensemble: &PathEnsemble, p: usize, j: usize, out: &mut [f64]) {
    let t = ensemble.grid().time(j);
    let b = ensemble.value(p, j);
    if t == 0.0 {
        out.fill(0.0);
    } else {
        let s = 1.0 / t.sqrt();
        for (o, v) in out.iter_mut().zip(b) {
            *o = v * s;
        }
    }
}

/// `y = e + h f(t, y, z)` by `iters` sweeps from `y = e`.
#[allow(clippy::too_many_arguments)]
fn picard(driver: &Driver, t: f64, h: f64, e: &[f64], z: &[f64], iters: usize, tmp: &mut [f64], y: &mut [f64]) {
    y.copy_from_slice(e);
    for _ in 0..iters {
        driver.eval(t, y, z, tmp);
        for ((yi, ei), fi) in y.iter_mut().zip(e).zip(tmp.iter()) {
            *yi = ei + h * fi;
        }
    }
}

fn sup_norm(y: &AdaptedProcess) -> f64 {
    y.values().chunks_exact(y.width()).map(norm).fold(0.0, f64::max)
}

/// Solves the BSDE with a Lipschitz driver on `ensemble`.
pub fn solve_bsde(
    driver: &Driver,
    xi: &TerminalCondition,
    ensemble: &PathEnsemble,
    reg: &RegressionConfig,
    picard_iters: usize,
) -> Result<SolutionPair> {
    reg.validate()?;
    let lipschitz = driver
        .lipschitz_constant()
        .filter(|l| l.is_finite())
        .ok_or_else(|| Error::NonLipschitzDriver(driver.name().to_string()))?;
    if !xi.is_markovian() {
        return Err(Error::NonMarkovianTerminal);
    }
    let (d, m) = driver.dims();
    if xi.dims() != d {
        return Err(Error::ShapeMismatch("terminal condition and driver differ in d".into()));
    }
    if ensemble.dims() != m {
        return Err(Error::ShapeMismatch("driver and ensemble differ in m".into()));
    }
    if picard_iters == 0 {
        return Err(Error::invalid("picard_iters", "need at least one sweep"));
    }
    let grid = ensemble.grid();
    let count = ensemble.count();
    let n = grid.steps();
    let h = grid.step();
    let dm = d * m;
    let basis = HermiteBasis::new(m, reg.degree);
    let intercept = HermiteBasis::new(m, 0);

    let mut y = AdaptedProcess::zeros(grid, Shape::Vector(d), count, n + 1);
    let mut z = AdaptedProcess::zeros(grid, Shape::Matrix(d, m), count, n);
    for p in 0..count {
        xi.eval(ensemble, p, y.at_mut(p, n));
    }
    let mut coef_e = vec![Vec::new(); n];
    let mut coef_z = vec![Vec::new(); n];
    let mut fallbacks = 0;
    let mut scratch = Scratch::new(d, m, basis.len());
    let mut design = Vec::with_capacity(count * basis.len());
    let mut targets = vec![0.0; count * d];
    let mut z_targets = vec![0.0; count * dm];
    let mut ehat = vec![0.0; count * d];

    for j in (0..n).rev() {
        let b = if j == 0 { &intercept } else { &basis };
        let k = b.len();
        let t = grid.time(j);
        design.clear();
        for p in 0..count {
            state(ensemble, p, j, &mut scratch.x);
            b.eval(&scratch.x, &mut scratch.row[..k]);
            design.extend_from_slice(&scratch.row[..k]);
            targets[p * d..(p + 1) * d].copy_from_slice(y.at(p, j + 1));
        }
        let (ce, fe) = fit(&design, k, &targets, d, reg.ridge)?;
        for p in 0..count {
            predict(&design[p * k..(p + 1) * k], &ce, d, &mut ehat[p * d..(p + 1) * d]);
            let next = y.at(p, j + 1);
            for i in 0..d {
                let r = (next[i] - ehat[p * d + i]) / h;
                for q in 0..m {
                    z_targets[p * dm + i * m + q] = r * ensemble.increment(p, j, q);
                }
            }
        }
        let (cz, fz) = fit(&design, k, &z_targets, dm, reg.ridge)?;
        fallbacks += fe.fallbacks + fz.fallbacks;
        for p in 0..count {
            predict(&design[p * k..(p + 1) * k], &cz, dm, z.at_mut(p, j));
        }
        for p in 0..count {
            picard(
                driver,
                t,
                h,
                &ehat[p * d..(p + 1) * d],
                z.at(p, j),
                picard_iters,
                &mut scratch.tmp,
                y.at_mut(p, j),
            );
        }
        coef_e[j] = ce;
        coef_z[j] = cz;
    }
    let contraction = h * lipschitz;
    let meta = SolveMeta {
        driver: driver.name().to_string(),
        terminal: xi.name().to_string(),
        regression: *reg,
        picard_iters,
        lipschitz: Some(lipschitz),
        contraction,
        contraction_warning: contraction >= 1.0,
        ridge_fallbacks: fallbacks,
        sup_bound: sup_norm(&y),
        ensemble: Some(ensemble.id()),
    };
    Ok(SolutionPair {
        y,
        z,
        meta,
        policy: Some(Arc::new(Policy {
            basis,
            intercept,
            coef_e,
            coef_z,
            driver: driver.clone(),
            terminal: xi.clone(),
        })),
    })
}

/// `Y = x(t)` with `x(t) = a + int_t^1 (phi(x) + eps) ds`, `Z = 0`, on a
/// single path.
pub fn solve_deterministic(phi: &Modulus, epsilon: f64, a: f64, grid: &TimeGrid) -> Result<SolutionPair> {
    if !(a >= 0.0) {
        return Err(Error::invalid("a", "terminal value must be non-negative"));
    }
    let problem = BackwardOdeProblem::unit(phi.clone(), epsilon, a)?;
    let ode = solve_backward(&problem, grid.steps())?;
    let n = grid.steps();
    let y = AdaptedProcess::from_fn(grid, Shape::Vector(1), 1, n + 1, |_, j, v| v[0] = ode.values[j]);
    let z = AdaptedProcess::zeros(grid, Shape::Matrix(1, 1), 1, n);
    let meta = SolveMeta {
        driver: alloc::format!("{}+{epsilon}", phi.name()),
        terminal: alloc::format!("constant({a})"),
        regression: RegressionConfig { degree: 0, ridge: 0.0 },
        picard_iters: 0,
        lipschitz: phi.linear_slope(),
        contraction: 0.0,
        contraction_warning: false,
        ridge_fallbacks: 0,
        sup_bound: sup_norm(&y),
        ensemble: None,
    };
    Ok(SolutionPair {
        y,
        z,
        meta,
        policy: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Root mean square of the defect over paths and grid points.
    pub rms: f64,
    pub max_abs: f64,
    /// RMS over paths at each grid point.
    pub per_time_rms: Vec<f64>,
}

/// Defect `Y(t_j) - [xi + sum_{i>=j} f(t_i, Y_i, Z_i) h - sum_{i>=j} Z_i dB_i]`
/// per path and grid point, measured in the Euclidean norm.
pub fn residual_check(
    sol: &SolutionPair,
    driver: &Driver,
    xi: &TerminalCondition,
    ensemble: &PathEnsemble,
) -> Result<ResidualReport> {
    let (d, m) = sol.dims();
    if driver.dims() != (d, m) || xi.dims() != d || ensemble.dims() != m {
        return Err(Error::ShapeMismatch("residual inputs disagree on (d, m)".into()));
    }
    if ensemble.count() != sol.paths() || ensemble.grid() != sol.grid() {
        return Err(Error::EnsembleMismatch);
    }
    if let Some(id) = sol.meta.ensemble {
        if id != ensemble.id() {
            return Err(Error::EnsembleMismatch);
        }
    }
    let grid = sol.grid();
    let n = grid.steps();
    let h = grid.step();
    let mut sq = vec![0.0; n + 1];
    let mut max_abs: f64 = 0.0;
    let mut defect = vec![0.0; d];
    let mut f = vec![0.0; d];
    for p in 0..sol.paths() {
        xi.eval(ensemble, p, &mut f);
        for (dv, (yv, xv)) in defect.iter_mut().zip(sol.y.at(p, n).iter().zip(&f)) {
            *dv = yv - xv;
        }
        let nd = norm(&defect);
        sq[n] += nd * nd;
        max_abs = max_abs.max(nd);
        for j in (0..n).rev() {
            let (yj, yn, zj) = (sol.y.at(p, j), sol.y.at(p, j + 1), sol.z.at(p, j));
            driver.eval(grid.time(j), yj, zj, &mut f);
            for i in 0..d {
                let mut zdb = 0.0;
                for q in 0..m {
                    zdb += zj[i * m + q] * ensemble.increment(p, j, q);
                }
                defect[i] += (yj[i] - yn[i]) - f[i] * h + zdb;
            }
            let nd = norm(&defect);
            sq[j] += nd * nd;
            max_abs = max_abs.max(nd);
        }
    }
    let paths = sol.paths() as f64;
    let total: f64 = sq.iter().sum();
    Ok(ResidualReport {
        rms: (total / (paths * (n + 1) as f64)).sqrt(),
        max_abs,
        per_time_rms: sq.iter().map(|s| (s / paths).sqrt()).collect(),
    })
}

fn ensure_same_ensemble(a: &SolutionPair, b: &SolutionPair) -> Result<()> {
    if a.meta.ensemble != b.meta.ensemble || a.paths() != b.paths() || a.grid() != b.grid() || a.dims() != b.dims() {
        return Err(Error::EnsembleMismatch);
    }
    Ok(())
}

/// `D_y = max over paths and grid points of |Y_a - Y_b|`.
pub fn distance_y(a: &SolutionPair, b: &SolutionPair) -> Result<f64> {
    ensure_same_ensemble(a, b)?;
    let w = a.y.width();
    let mut diff = vec![0.0; w];
    let mut worst: f64 = 0.0;
    for (ya, yb) in a.y.values().chunks_exact(w).zip(b.y.values().chunks_exact(w)) {
        for ((dv, x), y) in diff.iter_mut().zip(ya).zip(yb) {
            *dv = x - y;
        }
        worst = worst.max(norm(&diff));
    }
    Ok(worst)
}

/// `D_z = mean over paths of sum_j ||Z_a - Z_b||^2 h`.
pub fn distance_z(a: &SolutionPair, b: &SolutionPair) -> Result<f64> {
    ensure_same_ensemble(a, b)?;
    let h = a.grid().step();
    let mut total = 0.0;
    for p in 0..a.paths() {
        let mut acc = 0.0;
        for (x, y) in a.z.path(p).iter().zip(b.z.path(p)) {
            acc += (x - y) * (x - y);
        }
        total += acc * h;
    }
    Ok(total / a.paths() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Report {
    /// `max |Y_a - Y_b|^2`.
    pub sup_y_sq: f64,
    /// `mean sum ||Z_a - Z_b||^2 h`.
    pub z_energy: f64,
    /// `(eps^2 + 4 K^2) exp(K^2 + 2K + 2)`.
    pub bound: f64,
    pub holds: bool,
    /// `bound / max(sup_y_sq, z_energy)`; infinite when both vanish.
    pub slack_factor: f64,
}

pub fn step1_bound_value(eps_pair: f64, k: f64) -> f64 {
    (eps_pair * eps_pair + 4.0 * k * k) * (k * k + 2.0 * k + 2.0).exp()
}

/// Uniform a-priori bound for two solutions on the same ensemble.
pub fn step1_uniform_bound(a: &SolutionPair, b: &SolutionPair, eps_pair: f64, k: f64) -> Result<Step1Report> {
    let dy = distance_y(a, b)?;
    let sup_y_sq = dy * dy;
    let z_energy = distance_z(a, b)?;
    let bound = step1_bound_value(eps_pair, k);
    let worst = sup_y_sq.max(z_energy);
    Ok(Step1Report {
        sup_y_sq,
        z_energy,
        bound,
        holds: sup_y_sq <= bound && z_energy <= bound,
        slack_factor: if worst > 0.0 { bound / worst } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{builtin_catalog, CatalogParams};
    use crate::stats::mean_and_stderr;

    #[test]
    fn constant_terminal_value_is_reproduced() {
        let grid = TimeGrid::new(10).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 2000, 3).unwrap();
        let zero = builtin_catalog("zero", 1, 1, &CatalogParams::default()).unwrap();
        let sol = solve_bsde(
            &zero,
            &TerminalCondition::constant(1, 0.7),
            &ens,
            &RegressionConfig::default(),
            3,
        )
        .unwrap();
        assert!(sol.y.values().iter().all(|v| (v - 0.7).abs() < 1e-10));
        assert!(sol.z.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_contract_violations() {
        let grid = TimeGrid::new(4).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 10, 1).unwrap();
        let p = CatalogParams::default();
        let osgood = builtin_catalog("osgood", 1, 1, &p).unwrap();
        let xi = TerminalCondition::brownian(1, 1.0);
        let reg = RegressionConfig::default();
        assert!(matches!(
            solve_bsde(&osgood, &xi, &ens, &reg, 3),
            Err(Error::NonLipschitzDriver(_))
        ));
        let path_xi = TerminalCondition::path_dependent("max", 1, |path, _m, out| {
            out[0] = path.iter().cloned().fold(f64::MIN, f64::max)
        });
        let zero = builtin_catalog("zero", 1, 1, &p).unwrap();
        assert!(matches!(
            solve_bsde(&zero, &path_xi, &ens, &reg, 3),
            Err(Error::NonMarkovianTerminal)
        ));
        let zero2 = builtin_catalog("zero", 1, 2, &p).unwrap();
        assert!(solve_bsde(&zero2, &xi, &ens, &reg, 3).is_err());
    }

    #[test]
    fn brownian_terminal_value() {
        let grid = TimeGrid::new(20).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 20_000, 11).unwrap();
        let zero = builtin_catalog("zero", 1, 1, &CatalogParams::default()).unwrap();
        let xi = TerminalCondition::brownian(1, 1.0);
        let sol = solve_bsde(&zero, &xi, &ens, &RegressionConfig::default(), 3).unwrap();
        let (_, se) = mean_and_stderr(&(0..ens.count()).map(|p| ens.value(p, 20)[0]).collect::<Vec<_>>());
        assert!(sol.y0()[0].abs() <= 3.0 * se);
        let zmean = sol.z.values().iter().sum::<f64>() / sol.z.values().len() as f64;
        assert!((zmean - 1.0).abs() < 0.05);
        for p in 0..ens.count() {
            assert_eq!(sol.y.at(p, 20)[0], ens.value(p, 20)[0]);
        }
    }

    #[test]
    fn replay_matches_and_is_adapted() {
        let grid = TimeGrid::new(8).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 3000, 5).unwrap();
        let lin = builtin_catalog("linear", 1, 1, &CatalogParams::default()).unwrap();
        let xi = TerminalCondition::sine(1);
        let sol = solve_bsde(&lin, &xi, &ens, &RegressionConfig::default(), 3).unwrap();
        let again = sol.evaluate(&ens).unwrap();
        assert_eq!(again.y, sol.y);
        assert_eq!(again.z, sol.z);
        for at in [0, 3, 7] {
            let ry = crate::stochastic::check_adapted(&ens, at, 99, |e| Ok(sol.evaluate(e)?.y)).unwrap();
            let rz = crate::stochastic::check_adapted(&ens, at, 99, |e| Ok(sol.evaluate(e)?.z)).unwrap();
            assert!(ry.adapted && rz.adapted);
        }
    }

    #[test]
    fn deterministic_closed_forms() {
        let grid = TimeGrid::new(1000).unwrap();
        let s = solve_deterministic(&Modulus::identity(), 0.1, 1.0, &grid).unwrap();
        assert!((s.y.scalar(0, 0) - (1.1 * core::f64::consts::E - 0.1)).abs() < 1e-6);
        assert!(s.z.values().iter().all(|&v| v == 0.0));
        let s = solve_deterministic(&Modulus::osgood(), 0.0, 0.0, &grid).unwrap();
        assert!(s.y.values().iter().all(|&v| v == 0.0));
        let s = solve_deterministic(&Modulus::zero(), 1.0, 0.0, &TimeGrid::new(10).unwrap()).unwrap();
        for j in 0..=10 {
            assert!((s.y.scalar(0, j) - (1.0 - j as f64 / 10.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_of_exact_pairs() {
        let grid = TimeGrid::new(16).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 50, 8).unwrap();
        let zero = builtin_catalog("zero", 1, 1, &CatalogParams::default()).unwrap();
        let xi = TerminalCondition::brownian(1, 1.0);
        let mut sol = solve_bsde(&zero, &xi, &ens, &RegressionConfig::default(), 1).unwrap();
        sol.y = AdaptedProcess::from_fn(&grid, Shape::Vector(1), 50, 17, |p, j, v| v[0] = ens.value(p, j)[0]);
        sol.z = AdaptedProcess::from_fn(&grid, Shape::Matrix(1, 1), 50, 16, |_, _, v| v[0] = 1.0);
        let r = residual_check(&sol, &zero, &xi, &ens).unwrap();
        assert_eq!(r.rms, 0.0);

        let det = solve_deterministic(&Modulus::identity(), 0.1, 1.0, &grid).unwrap();
        let one = PathEnsemble::sample(&grid, 1, 1, 0).unwrap();
        let f = Driver::deterministic(Modulus::identity(), 0.1);
        let r = residual_check(&det, &f, &TerminalCondition::constant(1, 1.0), &one).unwrap();
        assert!(r.rms <= 1e-6 + 3.0 * grid.step(), "{r:?}");
    }

    #[test]
    fn step1_on_identical_and_foreign_solutions() {
        let grid = TimeGrid::new(5).unwrap();
        let zero = builtin_catalog("zero", 1, 1, &CatalogParams::default()).unwrap();
        let xi = TerminalCondition::brownian(1, 1.0);
        let reg = RegressionConfig::default();
        let e1 = PathEnsemble::sample(&grid, 1, 100, 1).unwrap();
        let e2 = PathEnsemble::sample(&grid, 1, 100, 2).unwrap();
        let a = solve_bsde(&zero, &xi, &e1, &reg, 1).unwrap();
        let b = solve_bsde(&zero, &xi, &e2, &reg, 1).unwrap();
        let r = step1_uniform_bound(&a, &a, 0.0, 1.0).unwrap();
        assert!(r.holds && r.sup_y_sq == 0.0 && r.z_energy == 0.0);
        assert!(matches!(
            step1_uniform_bound(&a, &b, 0.0, 1.0),
            Err(Error::EnsembleMismatch)
        ));
    }
}
