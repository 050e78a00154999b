//! Envelopes `theta(tau) = u^{gamma0}(tau)` with `gamma0` the smallest
//! terminal value whose solution dominates `X(tau)` on every path.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::ode::{solve_backward, BackwardOdeProblem, OdeSolution};
use crate::stochastic::{AdaptedProcess, Shape, StoppingTime};

/// Absolute bisection tolerance on `gamma0`.
pub const GAMMA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Envelope {
    pub gamma0: f64,
    /// `theta` per path.
    pub theta: Vec<f64>,
    /// `X(tau)` per path.
    pub x_at_tau: Vec<f64>,
    pub tau: StoppingTime,
    pub problem: BackwardOdeProblem,
    /// `u^{gamma0}` on the grid of `X`.
    pub solution: OdeSolution,
}

fn feasible(u: &OdeSolution, tau: &StoppingTime, x: &[f64]) -> bool {
    tau.indices().iter().zip(x).all(|(&j, &xv)| u.at_index(j) >= xv)
}

/// Bisection on `gamma` over `[0, bound_c]`.
///
/// `problem.gamma` is ignored; the ODE runs on `[0, 1]` with the grid of
/// `x`. Feasibility is the finite-ensemble reading of the essential
/// infimum: `u^gamma(tau) >= X(tau)` on all paths.
pub fn envelope_at(
    x: &AdaptedProcess,
    tau: &StoppingTime,
    problem: &BackwardOdeProblem,
    bound_c: f64,
) -> Result<Envelope> {
    if x.shape() != Shape::Scalar {
        return Err(Error::ShapeMismatch("envelope expects a scalar process".into()));
    }
    if tau.paths() != x.paths() {
        return Err(Error::ShapeMismatch("stopping time covers a different ensemble".into()));
    }
    if problem.terminal_time != 1.0 {
        return Err(Error::invalid("terminal_time", "envelopes use the full horizon"));
    }
    let steps = x.grid().steps();
    let mut x_at_tau = Vec::with_capacity(x.paths());
    for p in 0..x.paths() {
        let j = tau.index(p);
        if j >= x.times() {
            return Err(Error::ShapeMismatch("stopping time beyond the process".into()));
        }
        let v = x.scalar(p, j);
        if !(v <= bound_c) {
            return Err(Error::BoundExceeded {
                bound: bound_c,
                path: p,
                value: v,
            });
        }
        x_at_tau.push(v);
    }
    let solve = |g: f64| solve_backward(&problem.with_gamma(g), steps);

    let mut lo = 0.0;
    let mut hi = bound_c.max(0.0);
    let mut best = solve(0.0)?;
    if !feasible(&best, tau, &x_at_tau) {
        best = solve(hi)?;
        while hi - lo > GAMMA_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let u = solve(mid)?;
            if feasible(&u, tau, &x_at_tau) {
                hi = mid;
                best = u;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = 0.0;
    }
    let theta: Vec<f64> = tau.indices().iter().map(|&j| best.at_index(j)).collect();
    debug_assert!(theta.iter().zip(&x_at_tau).all(|(t, x)| t >= x));
    Ok(Envelope {
        gamma0: hi,
        theta,
        x_at_tau,
        tau: tau.clone(),
        problem: best.problem.clone(),
        solution: best,
    })
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub alpha: f64,
    pub theta: Vec<f64>,
    pub theta_alpha: Vec<f64>,
    /// `max_p |theta_alpha - alpha theta|`.
    pub homogeneity_gap: f64,
    /// `phi = id` and `eps = 0`.
    pub homogeneous: bool,
    /// Only meaningful when `homogeneous`.
    pub homogeneity_holds: bool,
    /// `(alpha_i, max_p |theta_{alpha_i} - theta|)` for `alpha_i -> 1`.
    pub continuity: Vec<(f64, f64)>,
    pub continuity_holds: bool,
}

pub const HOMOGENEITY_TOLERANCE: f64 = 1e-8;

/// Compares the envelopes of `X` and `alpha X`, and of `alpha_i X` with
/// `alpha_i = 1 + (alpha - 1) 10^-i` approaching one.
pub fn envelope_scaling_probe(
    x: &AdaptedProcess,
    tau: &StoppingTime,
    problem: &BackwardOdeProblem,
    alpha: f64,
    bound_c: f64,
) -> Result<ScalingReport> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    let c_for = |a: f64| bound_c * a.max(1.0);
    let base = envelope_at(x, tau, problem, bound_c)?;
    let scaled = envelope_at(&x.scale(alpha), tau, problem, c_for(alpha))?;
    let homogeneity_gap = base
        .theta
        .iter()
        .zip(&scaled.theta)
        .map(|(t, ta)| (ta - alpha * t).abs())
        .fold(0.0, f64::max);
    let homogeneous = problem.epsilon == 0.0 && problem.phi.linear_slope().is_some();

    let mut continuity = Vec::new();
    for i in 0..4 {
        let a = 1.0 + (alpha - 1.0) / 10f64.powi(i);
        let e = envelope_at(&x.scale(a), tau, problem, c_for(a))?;
        let gap = e
            .theta
            .iter()
            .zip(&base.theta)
            .map(|(ta, t)| (ta - t).abs())
            .fold(0.0, f64::max);
        continuity.push((a, gap));
    }
    let continuity_holds = continuity.windows(2).all(|w| w[1].1 <= w[0].1)
        && continuity.last().is_none_or(|c| c.1 <= continuity[0].1 * 1e-2 + 1e-9);
    Ok(ScalingReport {
        alpha,
        theta: base.theta,
        theta_alpha: scaled.theta,
        homogeneity_gap,
        homogeneous,
        homogeneity_holds: homogeneity_gap <= HOMOGENEITY_TOLERANCE,
        continuity,
        continuity_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::Modulus;
    use crate::stochastic::TimeGrid;

    fn constant_x(paths: usize, steps: usize, c: f64) -> AdaptedProcess {
        let grid = TimeGrid::new(steps).unwrap();
        AdaptedProcess::from_fn(&grid, Shape::Scalar, paths, steps + 1, |_, _, v| v[0] = c)
    }

    fn unit(phi: Modulus, eps: f64) -> BackwardOdeProblem {
        BackwardOdeProblem::unit(phi, eps, 0.0).unwrap()
    }

    #[test]
    fn zero_process_has_zero_envelope() {
        let x = constant_x(5, 100, 0.0);
        let e = envelope_at(&x, &StoppingTime::constant(5, 30), &unit(Modulus::osgood(), 0.0), 1.0).unwrap();
        assert_eq!(e.gamma0, 0.0);
        assert!(e.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn constant_process_at_half() {
        let x = constant_x(3, 1000, 1.0);
        let e = envelope_at(
            &x,
            &StoppingTime::constant(3, 500),
            &unit(Modulus::identity(), 0.0),
            2.0,
        )
        .unwrap();
        assert!((e.gamma0 - (-0.5f64).exp()).abs() < 1e-8);
        assert!(e.theta.iter().all(|&t| (t - 1.0).abs() < 1e-8 && t >= 1.0));
    }

    #[test]
    fn vanishing_terminal_value() {
        let grid = TimeGrid::new(50).unwrap();
        let x = AdaptedProcess::from_fn(&grid, Shape::Scalar, 4, 51, |p, j, v| {
            v[0] = if j == 50 { 0.0 } else { 0.1 * (p + 1) as f64 }
        });
        let e = envelope_at(&x, &StoppingTime::constant(4, 50), &unit(Modulus::osgood(), 0.0), 1.0).unwrap();
        assert!(e.theta.iter().all(|&t| t.abs() <= 1e-10));
    }

    #[test]
    fn bound_is_enforced() {
        let x = constant_x(2, 10, 3.0);
        let r = envelope_at(&x, &StoppingTime::constant(2, 5), &unit(Modulus::identity(), 0.0), 2.0);
        assert!(matches!(r, Err(Error::BoundExceeded { .. })));
    }

    #[test]
    fn scaling_in_the_homogeneous_case() {
        let x = constant_x(2, 1000, 1.0);
        let tau = StoppingTime::constant(2, 500);
        let r = envelope_scaling_probe(&x, &tau, &unit(Modulus::identity(), 0.0), 2.0, 2.0).unwrap();
        assert!(r.homogeneous && r.homogeneity_holds, "{r:?}");
        let r1 = envelope_scaling_probe(&x, &tau, &unit(Modulus::identity(), 0.0), 1.0, 2.0).unwrap();
        assert_eq!(r1.theta, r1.theta_alpha);
    }

    #[test]
    fn scaling_continuity_without_homogeneity() {
        let x = constant_x(2, 200, 1.0);
        let tau = StoppingTime::constant(2, 100);
        let r = envelope_scaling_probe(&x, &tau, &unit(Modulus::osgood(), 0.1), 1.1, 2.0).unwrap();
        assert!(!r.homogeneous);
        assert!(r.continuity_holds, "{r:?}");
    }
}
