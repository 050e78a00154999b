//! Backward dominator ODE `u' = -c (Phi(u) + eps)`, `u(T) = gamma`.

use alloc::vec;
use alloc::vec::Vec;

use crate::driver::Modulus;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BackwardOdeProblem {
    pub phi: Modulus,
    pub epsilon: f64,
    pub gamma: f64,
    pub terminal_time: f64,
    /// Factor `c` in front of `Phi + eps`.
    pub multiplier: f64,
}

impl BackwardOdeProblem {
    pub fn new(phi: Modulus, epsilon: f64, gamma: f64, terminal_time: f64, multiplier: f64) -> Result<Self> {
        let p = BackwardOdeProblem {
            phi,
            epsilon,
            gamma,
            terminal_time,
            multiplier,
        };
        p.validate()?;
        Ok(p)
    }

    /// `u(1) = gamma` with multiplier one.
    pub fn unit(phi: Modulus, epsilon: f64, gamma: f64) -> Result<Self> {
        Self::new(phi, epsilon, gamma, 1.0, 1.0)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        BackwardOdeProblem { gamma, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon", "must be non-negative"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.terminal_time) {
            return Err(Error::invalid("terminal_time", "must lie in [0, 1]"));
        }
        if !(self.multiplier >= 1.0) {
            return Err(Error::invalid("multiplier", "must be at least 1"));
        }
        Ok(())
    }

    fn rhs(&self, u: f64) -> f64 {
        self.multiplier * (self.phi.eval(u) + self.epsilon)
    }
}

/// `u` on the uniform grid `t_j = j T / steps`, `j = 0..=steps`.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub problem: BackwardOdeProblem,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl OdeSolution {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn at_index(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Linear interpolation; constant `u(T)` past the terminal time.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.steps();
        let tt = self.problem.terminal_time;
        if t >= tt || n == 0 {
            return self.values[n];
        }
        let s = (t.max(0.0) / tt) * n as f64;
        let j = (s as usize).min(n - 1);
        let w = s - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Classical RK4, marching from `terminal_time` back to `0`.
pub fn solve_backward(problem: &BackwardOdeProblem, steps: usize) -> Result<OdeSolution> {
    problem.validate()?;
    if steps == 0 {
        return Err(Error::invalid("steps", "need at least one step"));
    }
    let tt = problem.terminal_time;
    let h = tt / steps as f64;
    let mut values = vec![0.0; steps + 1];
    values[steps] = problem.gamma;
    // in reversed time s = T - t the equation reads du/ds = g(u)
    for j in (0..steps).rev() {
        let u = values[j + 1];
        let k1 = problem.rhs(u);
        let k2 = problem.rhs(u + 0.5 * h * k1);
        let k3 = problem.rhs(u + 0.5 * h * k2);
        let k4 = problem.rhs(u + h * k3);
        values[j] = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let times = (0..=steps).map(|j| tt * j as f64 / steps as f64).collect();
    Ok(OdeSolution {
        problem: problem.clone(),
        times,
        values,
    })
}

/// `V^eps`: `gamma = 0`, `T = 1`, multiplier `d + 1`.
pub fn global_dominator(phi: &Modulus, epsilon: f64, d: usize, steps: usize) -> Result<OdeSolution> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "global dominator needs epsilon > 0"));
    }
    let p = BackwardOdeProblem::new(phi.clone(), epsilon, 0.0, 1.0, (d + 1) as f64)?;
    solve_backward(&p, steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishCell {
    pub gamma: f64,
    pub epsilon: f64,
    pub u0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishReport {
    /// Row-major over `(gamma_i, eps_j)`.
    pub table: Vec<VanishCell>,
    /// `u(0)` is non-increasing along both sequences.
    pub monotone: bool,
    /// `u(0)` at the last `(gamma, eps)` pair.
    pub final_value: f64,
    pub threshold: f64,
    pub vanished: bool,
}

/// Tabulates `u^{gamma,eps}(0)` over both sequences.
pub fn vanish_limit_check(
    phi: &Modulus,
    multiplier: f64,
    gammas: &[f64],
    epsilons: &[f64],
    steps: usize,
    threshold: f64,
) -> Result<VanishReport> {
    if gammas.is_empty() || epsilons.is_empty() {
        return Err(Error::invalid("sequences", "need at least one gamma and one epsilon"));
    }
    for seq in [gammas, epsilons] {
        if seq.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("sequences", "must be strictly decreasing"));
        }
    }
    let mut table = Vec::with_capacity(gammas.len() * epsilons.len());
    for &gamma in gammas {
        for &epsilon in epsilons {
            let p = BackwardOdeProblem::new(phi.clone(), epsilon, gamma, 1.0, multiplier)?;
            let u0 = solve_backward(&p, steps)?.initial();
            table.push(VanishCell { gamma, epsilon, u0 });
        }
    }
    let ne = epsilons.len();
    let at = |i: usize, j: usize| table[i * ne + j].u0;
    let mut monotone = true;
    for i in 0..gammas.len() {
        for j in 0..ne {
            if i > 0 && at(i, j) > at(i - 1, j) {
                monotone = false;
            }
            if j > 0 && at(i, j) > at(i, j - 1) {
                monotone = false;
            }
        }
    }
    let final_value = table.last().map(|c| c.u0).unwrap_or(0.0);
    Ok(VanishReport {
        table,
        monotone,
        final_value,
        threshold,
        vanished: final_value < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::E;

    #[test]
    fn linear_closed_forms() {
        let id = Modulus::identity();
        let zero = solve_backward(&BackwardOdeProblem::unit(id.clone(), 0.0, 0.0).unwrap(), 100).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let u = solve_backward(&BackwardOdeProblem::unit(id.clone(), 0.0, 1.0).unwrap(), 1000).unwrap();
        assert!((u.initial() - E).abs() < 1e-6);
        let u = solve_backward(&BackwardOdeProblem::unit(id, 1.0, 0.0).unwrap(), 1000).unwrap();
        assert!((u.initial() - (E - 1.0)).abs() < 1e-6);
        assert_eq!(u.at_index(1000), 0.0);
    }

    #[test]
    fn global_dominator_closed_forms() {
        let v = global_dominator(&Modulus::zero(), 0.1, 2, 200).unwrap();
        assert!((v.initial() - 0.3).abs() < 1e-12);
        assert!((v.at(0.5) - 0.15).abs() < 1e-12);
        let v = global_dominator(&Modulus::identity(), 0.1, 2, 1000).unwrap();
        assert!((v.initial() - 0.1 * (3f64.exp() - 1.0)).abs() < 1e-6);
        assert_eq!(v.at_index(1000), 0.0);
        assert!(global_dominator(&Modulus::identity(), 0.0, 2, 10).is_err());
    }

    #[test]
    fn rejects_bad_problems() {
        let id = Modulus::identity();
        assert!(BackwardOdeProblem::new(id.clone(), -1.0, 0.0, 1.0, 1.0).is_err());
        assert!(BackwardOdeProblem::new(id.clone(), 0.0, -1.0, 1.0, 1.0).is_err());
        assert!(BackwardOdeProblem::new(id.clone(), 0.0, 0.0, 1.5, 1.0).is_err());
        assert!(BackwardOdeProblem::new(id.clone(), 0.0, 0.0, 1.0, 0.5).is_err());
        assert!(solve_backward(&BackwardOdeProblem::unit(id, 0.0, 0.0).unwrap(), 0).is_err());
    }

    #[test]
    fn shorter_horizon() {
        let p = BackwardOdeProblem::new(Modulus::identity(), 0.0, 1.0, 0.5, 1.0).unwrap();
        let u = solve_backward(&p, 500).unwrap();
        assert!((u.initial() - 0.5f64.exp()).abs() < 1e-9);
        assert_eq!(u.at(0.9), 1.0);
    }

    #[test]
    fn vanishing_limits() {
        let seq = [1e-2, 1e-4, 1e-6];
        let r = vanish_limit_check(&Modulus::identity(), 1.0, &seq, &seq, 1000, 1e-5).unwrap();
        assert!(r.monotone && r.vanished);
        assert!((r.final_value - (2e-6 * E - 1e-6)).abs() < 1e-10);

        let r = vanish_limit_check(&Modulus::sqrt(), 1.0, &[1e-4, 1e-8], &[1e-4, 1e-8], 1000, 1e-3).unwrap();
        assert!(!r.vanished);
        assert!(r.final_value > 0.2);
        assert!(vanish_limit_check(&Modulus::sqrt(), 1.0, &[1e-8, 1e-4], &[1e-4], 10, 1.0).is_err());
    }
}
