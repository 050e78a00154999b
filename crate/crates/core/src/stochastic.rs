//! Time grids, Brownian ensembles, adapted processes and pathwise integrals.
//!
//! Every ensemble is generated with ChaCha8 (counter based, portable): the
//! seed selects the key and the path index selects the stream, so path `p`
//! of an ensemble does not depend on how many paths were requested.
//! Increments are rounded to the lattice `2^-40`, which keeps every partial
//! sum and difference of Brownian values exact in `f64` (for `|B| < 2^12`).
//! Telescoping identities such as `sum of increments over [0, 1] = B(1)`
//! therefore hold bit for bit.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LATTICE: f64 = 1_099_511_627_776.0; // 2^40
const MASK_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Uniform grid on `[0, 1]` with `steps + 1` points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    step: f64,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "a grid needs at least one step"));
        }
        let n = steps as f64;
        let points = (0..=steps).map(|j| j as f64 / n).collect();
        Ok(TimeGrid { points, step: 1.0 / n })
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn time(&self, index: usize) -> f64 {
        self.points[index]
    }

    /// Index of the grid point equal to `t` (to within a quarter step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let j = (t / self.step).round() as usize;
        ((self.points[j] - t).abs() <= 0.25 * self.step).then_some(j)
    }

    /// Index of the last grid point not after `t`.
    pub fn floor_index(&self, t: f64) -> usize {
        let j = (t.clamp(0.0, 1.0) / self.step + 1e-9).floor() as usize;
        j.min(self.steps())
    }
}

/// `count` Brownian paths in `dims` dimensions sampled on a shared grid.
///
/// Values are stored path-major, time-minor, coordinate-fastest:
/// `values[(p * (N + 1) + j) * dims + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dims: usize,
    count: usize,
    seed: u64,
    tag: u64,
    values: Vec<f64>,
}

impl PathEnsemble {
    pub fn sample(grid: &TimeGrid, dims: usize, count: usize, seed: u64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("dims", "Brownian dimension must be positive"));
        }
        if count == 0 {
            return Err(Error::invalid("count", "ensemble needs at least one path"));
        }
        let stride = grid.len() * dims;
        let mut values = vec![0.0; count * stride];
        let scale = grid.step().sqrt();
        for (p, path) in values.chunks_exact_mut(stride).enumerate() {
            let mut rng = path_rng(seed, p);
            fill_increments(path, dims, 0, scale, &mut rng);
        }
        Ok(PathEnsemble {
            grid: grid.clone(),
            dims,
            count,
            seed,
            tag: seed,
            values,
        })
    }

    /// Copy of the ensemble whose increments after grid index `after` are
    /// redrawn from an independent stream. Values at indices `<= after` are
    /// untouched.
    pub fn mask_future(&self, after: usize, mask_seed: u64) -> PathEnsemble {
        let mut out = self.clone();
        let stride = self.grid.len() * self.dims;
        let scale = self.grid.step().sqrt();
        let salted = mask_seed ^ MASK_SALT;
        for (p, path) in out.values.chunks_exact_mut(stride).enumerate() {
            let mut rng = path_rng(salted, p);
            fill_increments(path, self.dims, after, scale, &mut rng);
        }
        out.tag = self.tag ^ salted.rotate_left(17) ^ (after as u64);
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `B(t_j)` on path `p`.
    pub fn value(&self, path: usize, index: usize) -> &[f64] {
        let at = (path * self.grid.len() + index) * self.dims;
        &self.values[at..at + self.dims]
    }

    /// `B(t_{j+1}) - B(t_j)` in coordinate `k`; exact by construction.
    pub fn increment(&self, path: usize, index: usize, k: usize) -> f64 {
        self.value(path, index + 1)[k] - self.value(path, index)[k]
    }

    /// All values of one path, time-major.
    pub fn path(&self, path: usize) -> &[f64] {
        let stride = self.grid.len() * self.dims;
        &self.values[path * stride..(path + 1) * stride]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn id(&self) -> EnsembleId {
        EnsembleId {
            seed: self.seed,
            tag: self.tag,
            dims: self.dims,
            count: self.count,
            steps: self.grid.steps(),
        }
    }

    /// True when both ensembles are the same draw (same grid, sizes, seed
    /// and masking history).
    pub fn same_draw(&self, other: &PathEnsemble) -> bool {
        self.tag == other.tag && self.dims == other.dims && self.count == other.count && self.grid == other.grid
    }
}

/// Identity of a draw: equal ids mean equal ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnsembleId {
    pub seed: u64,
    pub tag: u64,
    pub dims: usize,
    pub count: usize,
    pub steps: usize,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn fill_increments(path: &mut [f64], dims: usize, after: usize, scale: f64, rng: &mut ChaCha8Rng) {
    let points = path.len() / dims;
    for j in after..points - 1 {
        for k in 0..dims {
            let z: f64 = rng.sample(StandardNormal);
            let dw = (z * scale * LATTICE).round() / LATTICE;
            path[(j + 1) * dims + k] = path[j * dims + k] + dw;
        }
    }
}

/// Dimensionality of the value carried by an adapted process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    /// Row-major `rows x cols` matrix.
    Matrix(usize, usize),
}

impl Shape {
    pub fn width(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(d) => d,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

/// Discrete process indexed by (path, grid index).
///
/// `times` is the number of stored grid points, counted from index 0; it is
/// `N + 1` for state processes and `N` for integrands such as `Z`, which
/// live on left endpoints only.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    grid: TimeGrid,
    shape: Shape,
    paths: usize,
    times: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(grid: &TimeGrid, shape: Shape, paths: usize, times: usize) -> Self {
        assert!(times <= grid.len(), "process longer than its grid");
        AdaptedProcess {
            grid: grid.clone(),
            shape,
            paths,
            times,
            values: vec![0.0; paths * times * shape.width()],
        }
    }

    pub fn from_fn(
        grid: &TimeGrid,
        shape: Shape,
        paths: usize,
        times: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(grid, shape, paths, times);
        for p in 0..paths {
            for j in 0..times {
                f(p, j, out.at_mut(p, j));
            }
        }
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width()
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn at(&self, path: usize, index: usize) -> &[f64] {
        let w = self.shape.width();
        let at = (path * self.times + index) * w;
        &self.values[at..at + w]
    }

    pub fn at_mut(&mut self, path: usize, index: usize) -> &mut [f64] {
        let w = self.shape.width();
        let at = (path * self.times + index) * w;
        &mut self.values[at..at + w]
    }

    pub fn scalar(&self, path: usize, index: usize) -> f64 {
        self.values[path * self.times + index]
    }

    /// One path as a `times x width` row-major slice.
    pub fn path(&self, path: usize) -> &[f64] {
        let stride = self.times * self.shape.width();
        &self.values[path * stride..(path + 1) * stride]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map_scalar(&self, f: impl Fn(&[f64]) -> f64) -> AdaptedProcess {
        let mut out = AdaptedProcess::zeros(&self.grid, Shape::Scalar, self.paths, self.times);
        for (dst, src) in out.values.iter_mut().zip(self.values.chunks_exact(self.width())) {
            *dst = f(src);
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> AdaptedProcess {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub(crate) fn ensure_matches(&self, paths: usize, grid: &TimeGrid, what: &str) -> Result<()> {
        if self.paths != paths || self.grid != *grid {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{what}: process has {} paths on a {}-step grid, expected {} paths on {} steps",
                self.paths,
                self.grid.steps(),
                paths,
                grid.steps()
            )));
        }
        Ok(())
    }
}

/// Per-path grid index. The right end of the horizon is index `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    indices: Vec<usize>,
}

impl StoppingTime {
    pub fn new(indices: Vec<usize>) -> Self {
        StoppingTime { indices }
    }

    pub fn constant(paths: usize, index: usize) -> Self {
        StoppingTime {
            indices: vec![index; paths],
        }
    }

    pub fn index(&self, path: usize) -> usize {
        self.indices[path]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn paths(&self) -> usize {
        self.indices.len()
    }

    pub fn time(&self, path: usize, grid: &TimeGrid) -> f64 {
        grid.time(self.indices[path])
    }
}

/// Left-endpoint Riemann sum `H(t_j) = sum_{i<j} |h(t_i)| dt`.
///
/// Accepts `h` stored on `N` or `N + 1` points; the output has `N + 1`.
pub fn integrate_abs(h: &AdaptedProcess, grid: &TimeGrid) -> Result<AdaptedProcess> {
    if h.shape() != Shape::Scalar {
        return Err(Error::ShapeMismatch("integrate_abs expects a scalar process".into()));
    }
    if h.grid() != grid || h.times() < grid.steps() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "integrand covers {} points, grid needs {}",
            h.times(),
            grid.steps()
        )));
    }
    let dt = grid.step();
    let mut out = AdaptedProcess::zeros(grid, Shape::Scalar, h.paths(), grid.len());
    for p in 0..h.paths() {
        let mut acc = 0.0;
        for j in 0..grid.steps() {
            acc += h.scalar(p, j).abs() * dt;
            out.at_mut(p, j + 1)[0] = acc;
        }
    }
    Ok(out)
}

/// `sum_{j in [from, to)} Z(t_j) dB_j` per path, with `Z` a `d x m` matrix
/// process evaluated at left endpoints. Returns one `d`-vector per path.
pub fn ito_sum(
    integrand: &AdaptedProcess,
    ensemble: &PathEnsemble,
    from: &StoppingTime,
    to: &StoppingTime,
) -> Result<Vec<Vec<f64>>> {
    let m = ensemble.dims();
    let d = match integrand.shape() {
        Shape::Matrix(d, cols) if cols == m => d,
        Shape::Scalar if m == 1 => 1,
        Shape::Vector(cols) if cols == m => 1,
        other => {
            return Err(Error::ShapeMismatch(alloc::format!(
                "integrand shape {other:?} incompatible with {m}-dimensional noise"
            )))
        }
    };
    integrand.ensure_matches(ensemble.count(), ensemble.grid(), "ito_sum")?;
    if from.paths() != ensemble.count() || to.paths() != ensemble.count() {
        return Err(Error::ShapeMismatch("stopping times cover a different ensemble".into()));
    }
    let mut out = Vec::with_capacity(ensemble.count());
    for p in 0..ensemble.count() {
        let (a, b) = (from.index(p), to.index(p));
        if a > b {
            return Err(Error::WindowInverted {
                path: p,
                from: a,
                to: b,
            });
        }
        if b > integrand.times() {
            return Err(Error::ShapeMismatch("window extends past the integrand".into()));
        }
        let mut acc = vec![0.0; d];
        for j in a..b {
            let z = integrand.at(p, j);
            for k in 0..m {
                let db = ensemble.increment(p, j, k);
                for (i, slot) in acc.iter_mut().enumerate() {
                    *slot += z[i * m + k] * db;
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Outcome of an adaptedness audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptednessReport {
    pub masked_after: usize,
    pub max_deviation: f64,
    pub adapted: bool,
}

/// Re-runs `producer` on a copy of `ensemble` whose increments after
/// index `at` were redrawn, and checks that every output value at grid
/// indices `<= at` is unchanged.
pub fn check_adapted<F>(ensemble: &PathEnsemble, at: usize, mask_seed: u64, producer: F) -> Result<AdaptednessReport>
where
    F: Fn(&PathEnsemble) -> Result<AdaptedProcess>,
{
    let reference = producer(ensemble)?;
    let masked = producer(&ensemble.mask_future(at, mask_seed))?;
    if reference.shape() != masked.shape() || reference.times() != masked.times() {
        return Err(Error::ShapeMismatch(
            "producer changed output shape under masking".into(),
        ));
    }
    let last = at.min(reference.times() - 1);
    let mut max_deviation: f64 = 0.0;
    for p in 0..reference.paths() {
        for j in 0..=last {
            for (a, b) in reference.at(p, j).iter().zip(masked.at(p, j)) {
                max_deviation = max_deviation.max((a - b).abs());
            }
        }
    }
    Ok(AdaptednessReport {
        masked_after: at,
        max_deviation,
        adapted: max_deviation == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_and_stderr;

    #[test]
    fn grid_points() {
        assert!(TimeGrid::new(0).is_err());
        assert_eq!(TimeGrid::new(1).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(TimeGrid::new(4).unwrap().points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::new(1000).unwrap();
        assert_eq!(g.len(), 1001);
        assert!((g.step() - 0.001).abs() < 1e-15);
        for w in g.points().windows(2) {
            assert!(((w[1] - w[0]) - g.step()).abs() <= 1e-12 * g.step().max(1.0));
        }
        assert_eq!(g.index_of(0.5), Some(500));
        assert_eq!(TimeGrid::new(3).unwrap().index_of(0.5), None);
    }

    #[test]
    fn paths_start_at_zero_and_reproduce() {
        let g = TimeGrid::new(16).unwrap();
        let a = PathEnsemble::sample(&g, 2, 50, 7).unwrap();
        let b = PathEnsemble::sample(&g, 2, 50, 7).unwrap();
        assert_eq!(a, b);
        for p in 0..50 {
            assert_eq!(a.value(p, 0), &[0.0, 0.0]);
        }
        let c = PathEnsemble::sample(&g, 2, 50, 8).unwrap();
        assert_ne!(a.values(), c.values());
        // path p does not depend on the ensemble size
        let small = PathEnsemble::sample(&g, 2, 10, 7).unwrap();
        assert_eq!(small.path(9), a.path(9));
    }

    #[test]
    fn terminal_moments() {
        let g = TimeGrid::new(4).unwrap();
        let m = 100_000;
        let e = PathEnsemble::sample(&g, 1, m, 2024).unwrap();
        let finals: Vec<f64> = (0..m).map(|p| e.value(p, 4)[0]).collect();
        let (mean, _) = mean_and_stderr(&finals);
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m as f64 - 1.0);
        let sm = (m as f64).sqrt();
        assert!(mean.abs() <= 3.0 / sm, "mean {mean}");
        assert!((var - 1.0).abs() <= 3.0 * 2f64.sqrt() / sm, "var {var}");
    }

    #[test]
    fn integrate_abs_cases() {
        let g = TimeGrid::new(4).unwrap();
        let zero = AdaptedProcess::zeros(&g, Shape::Scalar, 2, 5);
        let h0 = integrate_abs(&zero, &g).unwrap();
        assert!(h0.values().iter().all(|&v| v == 0.0));

        let ones = AdaptedProcess::from_fn(&g, Shape::Scalar, 1, 5, |_, _, v| v[0] = -1.0);
        let h1 = integrate_abs(&ones, &g).unwrap();
        assert_eq!(h1.path(0), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let g = TimeGrid::new(1000).unwrap();
        let lin = AdaptedProcess::from_fn(&g, Shape::Scalar, 1, 1001, |_, j, v| v[0] = g.time(j));
        let h = integrate_abs(&lin, &g).unwrap();
        assert!((h.scalar(0, 1000) - 0.5).abs() <= 1e-3);

        let vec = AdaptedProcess::zeros(&g, Shape::Vector(2), 1, 1001);
        assert!(integrate_abs(&vec, &g).is_err());
    }

    #[test]
    fn ito_sum_telescopes_exactly() {
        let g = TimeGrid::new(64).unwrap();
        let e = PathEnsemble::sample(&g, 1, 200, 3).unwrap();
        let ones = AdaptedProcess::from_fn(&g, Shape::Matrix(1, 1), 200, 64, |_, _, v| v[0] = 1.0);
        let from = StoppingTime::constant(200, 0);
        let to = StoppingTime::constant(200, 64);
        let s = ito_sum(&ones, &e, &from, &to).unwrap();
        for p in 0..200 {
            assert_eq!(s[p][0], e.value(p, 64)[0]);
        }
        // arbitrary windows telescope too
        let a = StoppingTime::new((0..200).map(|p| p % 30).collect());
        let b = StoppingTime::new((0..200).map(|p| 30 + p % 34).collect());
        let s = ito_sum(&ones, &e, &a, &b).unwrap();
        for p in 0..200 {
            assert_eq!(s[p][0], e.value(p, b.index(p))[0] - e.value(p, a.index(p))[0]);
        }
        let zeros = AdaptedProcess::zeros(&g, Shape::Matrix(1, 1), 200, 64);
        assert!(ito_sum(&zeros, &e, &from, &to).unwrap().iter().all(|v| v[0] == 0.0));
        assert!(matches!(
            ito_sum(&ones, &e, &to, &from),
            Err(Error::WindowInverted { .. })
        ));
    }

    #[test]
    fn ito_sum_is_centered() {
        let g = TimeGrid::new(8).unwrap();
        let m = 100_000;
        let e = PathEnsemble::sample(&g, 1, m, 11).unwrap();
        let ones = AdaptedProcess::from_fn(&g, Shape::Matrix(1, 1), m, 8, |_, _, v| v[0] = 1.0);
        let s = ito_sum(&ones, &e, &StoppingTime::constant(m, 0), &StoppingTime::constant(m, 8)).unwrap();
        let flat: Vec<f64> = s.iter().map(|v| v[0]).collect();
        let (mean, _) = mean_and_stderr(&flat);
        assert!(mean.abs() <= 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn masking_keeps_the_past() {
        let g = TimeGrid::new(10).unwrap();
        let e = PathEnsemble::sample(&g, 2, 5, 1).unwrap();
        let masked = e.mask_future(4, 99);
        assert!(!e.same_draw(&masked));
        for p in 0..5 {
            for j in 0..=4 {
                assert_eq!(e.value(p, j), masked.value(p, j));
            }
            assert_ne!(e.value(p, 10), masked.value(p, 10));
        }
        let report = check_adapted(&e, 4, 99, |ens| {
            let g = ens.grid().clone();
            Ok(AdaptedProcess::from_fn(
                &g,
                Shape::Scalar,
                ens.count(),
                g.len(),
                |p, j, v| v[0] = ens.value(p, j)[0].abs(),
            ))
        })
        .unwrap();
        assert!(report.adapted);
        let peeking = check_adapted(&e, 4, 99, |ens| {
            let g = ens.grid().clone();
            Ok(AdaptedProcess::from_fn(
                &g,
                Shape::Scalar,
                ens.count(),
                g.len(),
                |p, _, v| v[0] = ens.value(p, 10)[0],
            ))
        })
        .unwrap();
        assert!(!peeking.adapted);
    }
}
