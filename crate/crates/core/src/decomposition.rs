//! Level hitting times and the flat / strictly increasing partition of a
//! non-decreasing clock `H(t) = int_0^t |h| ds`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::stats::norm;
use crate::stochastic::{AdaptedProcess, PathEnsemble, Shape, StoppingTime};

/// First grid index with `H >= r` per path, or `N` when never reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelHit {
    pub level: f64,
    pub time: StoppingTime,
}

fn ensure_clock(h_cum: &AdaptedProcess) -> Result<()> {
    if h_cum.shape() != Shape::Scalar || h_cum.times() != h_cum.grid().len() {
        return Err(Error::ShapeMismatch("clock must be scalar on every grid point".into()));
    }
    for p in 0..h_cum.paths() {
        let path = h_cum.path(p);
        if let Some(j) = path.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NotMonotone { path: p, index: j + 1 });
        }
    }
    Ok(())
}

pub fn level_hitting(h_cum: &AdaptedProcess, r: f64) -> Result<LevelHit> {
    ensure_clock(h_cum)?;
    let n = h_cum.grid().steps();
    let indices = (0..h_cum.paths())
        .map(|p| h_cum.path(p).iter().position(|&v| v >= r).unwrap_or(n))
        .collect();
    Ok(LevelHit {
        level: r,
        time: StoppingTime::new(indices),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Flat,
    Increasing,
}

/// Flat threshold on a single-step increment of `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlatTolerance {
    /// `tol * step * H(1)` on each path.
    Relative(f64),
    /// `tol * step` on every path.
    Absolute(f64),
}

impl Default for FlatTolerance {
    fn default() -> Self {
        FlatTolerance::Relative(1e-12)
    }
}

impl FlatTolerance {
    fn value(self) -> f64 {
        match self {
            FlatTolerance::Relative(v) | FlatTolerance::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub label: Label,
    /// Grid indices `left < right`.
    pub left: usize,
    pub right: usize,
    pub increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathDecomposition {
    /// Merged segments tiling `[start, end]`.
    pub segments: Vec<Segment>,
    /// Alternating list: `pi[0]` is the start, odd entries close increasing
    /// stretches, even entries close flat ones.
    pub pi: Vec<usize>,
    /// Absolute threshold on single-step increments.
    pub threshold: f64,
    /// Runs of at least two consecutive one-step segments, `(left, right)`.
    pub unresolved: Vec<(usize, usize)>,
    /// First grid index of the first unresolved run.
    pub accumulation: Option<usize>,
    pub start: usize,
    pub end: usize,
}

impl PathDecomposition {
    pub fn labeled_steps(&self) -> usize {
        let total = self.end - self.start;
        total - self.unresolved.iter().map(|(a, b)| b - a).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub level: Option<f64>,
    pub paths: Vec<PathDecomposition>,
    /// Mean over paths of labeled measure over scanned measure (one for
    /// empty windows).
    pub coverage_fraction: f64,
}

/// Decomposes `[start, N]` on every path.
pub fn decompose(h_cum: &AdaptedProcess, start: &StoppingTime, tol: FlatTolerance) -> Result<DecompositionReport> {
    let end = StoppingTime::constant(h_cum.paths(), h_cum.grid().steps());
    decompose_window(h_cum, start, &end, tol)
}

/// Hits level `r`, then decomposes from there.
pub fn decompose_at_level(h_cum: &AdaptedProcess, r: f64, tol: FlatTolerance) -> Result<DecompositionReport> {
    let hit = level_hitting(h_cum, r)?;
    let mut rep = decompose(h_cum, &hit.time, tol)?;
    rep.level = Some(r);
    Ok(rep)
}

pub fn decompose_window(
    h_cum: &AdaptedProcess,
    start: &StoppingTime,
    end: &StoppingTime,
    tol: FlatTolerance,
) -> Result<DecompositionReport> {
    if !(tol.value() > 0.0) {
        return Err(Error::invalid("flat_tol", "must be positive"));
    }
    ensure_clock(h_cum)?;
    if start.paths() != h_cum.paths() || end.paths() != h_cum.paths() {
        return Err(Error::ShapeMismatch("stopping times cover a different ensemble".into()));
    }
    let n = h_cum.grid().steps();
    let step = h_cum.grid().step();
    let mut paths = Vec::with_capacity(h_cum.paths());
    let mut coverage = 0.0;
    for p in 0..h_cum.paths() {
        let (a, b) = (start.index(p), end.index(p));
        if a > b || b > n {
            return Err(Error::WindowInverted {
                path: p,
                from: a,
                to: b,
            });
        }
        let hp = h_cum.path(p);
        let threshold = match tol {
            FlatTolerance::Relative(t) => t * step * (hp[n] - hp[0]),
            FlatTolerance::Absolute(t) => t * step,
        };
        let dec = scan(hp, a, b, threshold);
        coverage += if b > a {
            dec.labeled_steps() as f64 / (b - a) as f64
        } else {
            1.0
        };
        paths.push(dec);
    }
    let count = h_cum.paths().max(1) as f64;
    let report = DecompositionReport {
        level: None,
        paths,
        coverage_fraction: coverage / count,
    };
    check_labels(h_cum, &report)?;
    Ok(report)
}

fn scan(hp: &[f64], a: usize, b: usize, threshold: f64) -> PathDecomposition {
    let mut segments: Vec<Segment> = Vec::new();
    for j in a..b {
        let inc = hp[j + 1] - hp[j];
        let label = if inc <= threshold {
            Label::Flat
        } else {
            Label::Increasing
        };
        match segments.last_mut() {
            Some(s) if s.label == label => {
                s.right = j + 1;
                s.increment = hp[j + 1] - hp[s.left];
            }
            _ => segments.push(Segment {
                label,
                left: j,
                right: j + 1,
                increment: inc,
            }),
        }
    }
    let mut pi = vec![a];
    if segments.first().map(|s| s.label) == Some(Label::Flat) {
        pi.push(a);
    }
    pi.extend(segments.iter().map(|s| s.right));

    let mut unresolved = Vec::new();
    let mut i = 0;
    while i < segments.len() {
        let mut k = i;
        while k < segments.len() && segments[k].right - segments[k].left == 1 {
            k += 1;
        }
        if k - i >= 2 {
            unresolved.push((segments[i].left, segments[k - 1].right));
        }
        i = k.max(i + 1);
    }
    PathDecomposition {
        accumulation: unresolved.first().map(|u| u.0),
        segments,
        pi,
        threshold,
        unresolved,
        start: a,
        end: b,
    }
}

/// Every flat step has increment `<= threshold`, every increasing step
/// `> threshold`, and the segments tile the window.
fn check_labels(h_cum: &AdaptedProcess, report: &DecompositionReport) -> Result<()> {
    for (p, dec) in report.paths.iter().enumerate() {
        let hp = h_cum.path(p);
        let mut at = dec.start;
        for s in &dec.segments {
            if s.left != at || s.right <= s.left {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "segments do not tile the window on path {p}"
                )));
            }
            for j in s.left..s.right {
                let inc = hp[j + 1] - hp[j];
                let ok = match s.label {
                    Label::Flat => inc <= dec.threshold,
                    Label::Increasing => inc > dec.threshold,
                };
                if !ok {
                    return Err(Error::ShapeMismatch(alloc::format!(
                        "label broken on path {p} at index {j}"
                    )));
                }
            }
            at = s.right;
        }
        if at != dec.end {
            return Err(Error::ShapeMismatch(alloc::format!("segments stop short on path {p}")));
        }
    }
    Ok(())
}

/// Checks the labels against the integrand itself: on flat steps
/// `|h| step <= threshold`, on increasing steps `|h| step > threshold`.
pub fn version_consistency(h: &AdaptedProcess, report: &DecompositionReport) -> Result<bool> {
    if h.shape() != Shape::Scalar || h.paths() != report.paths.len() {
        return Err(Error::ShapeMismatch("integrand does not match the report".into()));
    }
    let step = h.grid().step();
    for (p, dec) in report.paths.iter().enumerate() {
        for s in &dec.segments {
            for j in s.left..s.right {
                let inc = h.scalar(p, j).abs() * step;
                let ok = match s.label {
                    Label::Flat => inc <= dec.threshold,
                    Label::Increasing => inc > dec.threshold,
                };
                if !ok {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// `h = sum_{n <= depth} (|B| + 1) 1_{[2^{1-2n}, 2^{2-2n}]}` on every
/// grid point (bands closed).
pub fn pathological_h(ensemble: &PathEnsemble, depth: usize) -> Result<AdaptedProcess> {
    if depth == 0 || depth > 26 {
        return Err(Error::invalid("depth", "must lie in 1..=26"));
    }
    let grid = ensemble.grid();
    let n = grid.steps();
    let min_steps = 1usize << (2 * depth);
    if n < min_steps {
        return Err(Error::UnresolvedDepth {
            depth,
            steps: n,
            min_steps,
        });
    }
    let bands: Vec<(f64, f64)> = (1..=depth)
        .map(|k| {
            let lo = 0.5f64.powi(2 * k as i32 - 1);
            (lo, 2.0 * lo)
        })
        .collect();
    Ok(AdaptedProcess::from_fn(
        grid,
        Shape::Scalar,
        ensemble.count(),
        n + 1,
        |p, j, v| {
            let t = grid.time(j);
            v[0] = if bands.iter().any(|&(lo, hi)| lo <= t && t <= hi) {
                norm(ensemble.value(p, j)) + 1.0
            } else {
                0.0
            };
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Uncovered measure per path.
    pub residual: Vec<f64>,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Union over levels of the labeled intervals, per path.
pub fn coverage_check(reports: &[DecompositionReport], steps: usize, tolerance: f64) -> Result<CoverageReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("reports", "need at least one level"))?;
    let paths = first.paths.len();
    if reports.iter().any(|r| r.paths.len() != paths) {
        return Err(Error::EnsembleMismatch);
    }
    let step = 1.0 / steps as f64;
    let mut residual = Vec::with_capacity(paths);
    let mut covered = vec![false; steps];
    for p in 0..paths {
        covered.iter_mut().for_each(|c| *c = false);
        for r in reports {
            let dec = &r.paths[p];
            if dec.end > steps {
                return Err(Error::ShapeMismatch("report longer than the grid".into()));
            }
            let mut holes = dec.unresolved.iter().peekable();
            for j in dec.start..dec.end {
                while holes.peek().is_some_and(|h| h.1 <= j) {
                    holes.next();
                }
                if !holes.peek().is_some_and(|h| h.0 <= j && j < h.1) {
                    covered[j] = true;
                }
            }
        }
        residual.push(covered.iter().filter(|c| !**c).count() as f64 * step);
    }
    let worst_residual = residual.iter().cloned().fold(0.0, f64::max);
    Ok(CoverageReport {
        residual,
        worst_residual,
        tolerance,
        holds: worst_residual <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{integrate_abs, TimeGrid};

    fn clock(steps: usize, h: impl Fn(f64) -> f64) -> (AdaptedProcess, AdaptedProcess) {
        let grid = TimeGrid::new(steps).unwrap();
        let hp = AdaptedProcess::from_fn(&grid, Shape::Scalar, 1, steps + 1, |_, j, v| v[0] = h(grid.time(j)));
        let hc = integrate_abs(&hp, &grid).unwrap();
        (hp, hc)
    }

    #[test]
    fn hitting_times() {
        let (_, hc) = clock(100, |_| 1.0);
        assert_eq!(level_hitting(&hc, 0.5).unwrap().time.index(0), 50);
        let (_, hc) = clock(100, |_| 0.0);
        assert_eq!(level_hitting(&hc, 0.1).unwrap().time.index(0), 100);
        let (_, hc) = clock(1000, |t| 2.0 * t);
        let j = level_hitting(&hc, 0.25).unwrap().time.index(0);
        assert!((j as f64 / 1000.0 - 0.5).abs() <= 1e-3 + 1e-12);
    }

    #[test]
    fn decreasing_clock_is_rejected() {
        let grid = TimeGrid::new(3).unwrap();
        let bad = AdaptedProcess::from_fn(&grid, Shape::Scalar, 1, 4, |_, j, v| v[0] = [0.0, 1.0, 0.5, 2.0][j]);
        assert!(matches!(
            level_hitting(&bad, 0.2),
            Err(Error::NotMonotone { path: 0, index: 2 })
        ));
    }

    #[test]
    fn basic_fixtures() {
        let start = StoppingTime::constant(1, 0);
        let (_, hc) = clock(64, |_| 1.0);
        let r = decompose(&hc, &start, FlatTolerance::default()).unwrap();
        assert_eq!(r.paths[0].pi, vec![0, 64]);
        assert_eq!(r.paths[0].segments.len(), 1);

        let (hp, hc) = clock(64, |t| if t < 0.5 { 1.0 } else { 0.0 });
        let r = decompose(&hc, &start, FlatTolerance::default()).unwrap();
        assert_eq!(r.paths[0].pi, vec![0, 32, 64]);
        assert_eq!(r.paths[0].segments[1].label, Label::Flat);
        assert!(version_consistency(&hp, &r).unwrap());
        assert_eq!(r.coverage_fraction, 1.0);

        let (_, hc) = clock(64, |_| 0.0);
        let r = decompose(&hc, &start, FlatTolerance::default()).unwrap();
        assert_eq!(r.paths[0].pi, vec![0, 0, 64]);
        assert_eq!(r.paths[0].segments[0].label, Label::Flat);
    }

    #[test]
    fn alternating_single_steps_are_unresolved() {
        let (_, hc) = clock(16, |t| {
            if t >= 0.5 && ((t * 16.0).round() as usize).is_multiple_of(2) {
                1.0
            } else {
                0.0
            }
        });
        let r = decompose(&hc, &StoppingTime::constant(1, 0), FlatTolerance::default()).unwrap();
        assert_eq!(r.paths[0].accumulation, Some(8));
        assert!(r.coverage_fraction < 1.0);
    }

    #[test]
    fn pathological_bands() {
        let grid = TimeGrid::new(64).unwrap();
        let ens = PathEnsemble::sample(&grid, 1, 3, 0).unwrap();
        let h = pathological_h(&ens, 1).unwrap();
        assert_eq!(h.scalar(1, 48), ens.value(1, 48)[0].abs() + 1.0);
        assert_eq!(h.scalar(1, 16), 0.0);
        assert!(matches!(
            pathological_h(&ens, 4),
            Err(Error::UnresolvedDepth { min_steps: 256, .. })
        ));
    }
}
