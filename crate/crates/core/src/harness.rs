//! The mollification-ladder experiment: solve every rung on one ensemble,
//! measure Cauchy distances, and check the a-priori bounds, the window
//! dominations, the global dominator and the limit residual.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::decomposition::{decompose_at_level, FlatTolerance, Label};
use crate::driver::{
    builtin_catalog, mollify, sup_distance, verify_moduli_in, CatalogParams, Driver, MollifierKernel, ProbeBox,
    TerminalCondition,
};
use crate::envelope::envelope_at;
use crate::error::{Error, Result};
use crate::girsanov::{
    density, domination_check, drift_eta, eta_bound, novikov_window, psi_values, signed_z_combination, DensityReport,
    DominationReport, GirsanovWindow,
};
use crate::ode::{global_dominator, BackwardOdeProblem, OdeSolution};
use crate::regression::RegressionConfig;
use crate::solver::{distance_y, distance_z, residual_check, solve_bsde, ResidualReport, SolutionPair, Step1Report};
use crate::stochastic::{AdaptedProcess, PathEnsemble, Shape, StoppingTime, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalSpec {
    Constant(f64),
    Brownian(f64),
    Sine,
    Abs,
}

impl TerminalSpec {
    pub fn build(self, d: usize) -> TerminalCondition {
        match self {
            TerminalSpec::Constant(c) => TerminalCondition::constant(d, c),
            TerminalSpec::Brownian(s) => TerminalCondition::brownian(d, s),
            TerminalSpec::Sine => TerminalCondition::sine(d),
            TerminalSpec::Abs => TerminalCondition::abs(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackBudget {
    /// Added to the dominating ODE in window checks.
    pub domination: f64,
    /// Added to `V^eps(0)` in the global bound.
    pub global: f64,
    /// Allowed ratio of the limit residual against `f` to the one against `f_n`.
    pub residual_factor: f64,
    /// Width, in standard errors, of the density mean checks.
    pub sigmas: f64,
    /// Increases of `D_y(n, n_max)` below this are not counted as inversions.
    pub monotone_floor: f64,
    /// Triangle inequality slack on the ladder distances.
    pub triangle: f64,
    /// `D_y` budget for the uniqueness probe.
    pub uniqueness: f64,
}

impl Default for SlackBudget {
    fn default() -> Self {
        SlackBudget {
            domination: 1e-2,
            global: 1e-2,
            residual_factor: 2.0,
            sigmas: 3.0,
            monotone_floor: 1e-9,
            triangle: 1e-12,
            uniqueness: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub driver: String,
    pub params: CatalogParams,
    pub terminal: TerminalSpec,
    /// `N`.
    pub steps: usize,
    /// `M`.
    pub paths: usize,
    /// `d`.
    pub dims: usize,
    /// `m`.
    pub noise_dims: usize,
    pub seed: u64,
    pub ladder: Vec<u32>,
    pub kernel: MollifierKernel,
    pub regression: RegressionConfig,
    pub picard_iters: usize,
    /// Strictly decreasing.
    pub eps_ladder: Vec<f64>,
    pub eps0: f64,
    pub slack: SlackBudget,
    /// Per-component weights in the window domination; empty means ones.
    pub weights: Vec<f64>,
    pub probes: usize,
    pub probe_box: ProbeBox,
    pub flat_tolerance: FlatTolerance,
    /// `V^eps(0)` below this counts as collapsed.
    pub collapse_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            driver: "osgood".into(),
            params: CatalogParams::default(),
            terminal: TerminalSpec::Brownian(1.0),
            steps: 200,
            paths: 20_000,
            dims: 2,
            noise_dims: 2,
            seed: 20240501,
            ladder: vec![4, 8, 16, 32, 64],
            kernel: MollifierKernel::default(),
            regression: RegressionConfig::default(),
            picard_iters: 3,
            eps_ladder: vec![0.5, 0.2, 0.1, 0.05],
            eps0: 1e-3,
            slack: SlackBudget::default(),
            weights: Vec::new(),
            probes: 20_000,
            probe_box: ProbeBox::default(),
            flat_tolerance: FlatTolerance::default(),
            collapse_threshold: 1e-3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.paths < 2 || self.dims == 0 || self.noise_dims == 0 {
            return Err(Error::invalid(
                "ensemble",
                "need steps >= 1, paths >= 2, d >= 1, m >= 1",
            ));
        }
        if self.ladder.is_empty() || self.ladder[0] == 0 || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "ladder",
                "must be non-empty, positive and strictly increasing",
            ));
        }
        if self.eps_ladder.iter().any(|e| !(*e > 0.0)) || self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("eps_ladder", "must be positive and strictly decreasing"));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::invalid("eps0", "must lie in (0, 1)"));
        }
        let s = &self.slack;
        for (name, v) in [
            ("slack.domination", s.domination),
            ("slack.global", s.global),
            ("slack.residual_factor", s.residual_factor),
            ("slack.sigmas", s.sigmas),
            ("slack.monotone_floor", s.monotone_floor),
            ("slack.triangle", s.triangle),
            ("slack.uniqueness", s.uniqueness),
            ("collapse_threshold", self.collapse_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !self.weights.is_empty() && (self.weights.len() != self.dims || self.weights.iter().any(|w| !(*w > 0.0))) {
            return Err(Error::invalid("weights", "need one positive weight per component"));
        }
        if self.picard_iters == 0 || self.probes == 0 {
            return Err(Error::invalid(
                "picard_iters",
                "picard_iters and probes must be positive",
            ));
        }
        self.regression.validate()?;
        MollifierKernel::new(self.kernel.support_radius, self.kernel.nodes_per_axis)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps)
    }

    pub fn ensemble(&self) -> Result<PathEnsemble> {
        PathEnsemble::sample(&self.grid()?, self.noise_dims, self.paths, self.seed)
    }

    pub fn base_driver(&self) -> Result<Driver> {
        builtin_catalog(&self.driver, self.dims, self.noise_dims, &self.params)
    }

    fn weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0; self.dims]
        } else {
            self.weights.clone()
        }
    }

    fn probe_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rung {
    pub n: u32,
    /// Sampled `sup |f_n - f|`.
    pub probe_distance: f64,
    /// `Phi(r/n) + Psi(r/n)`.
    pub closeness_bound: f64,
    pub lipschitz: f64,
    pub moduli_passed: bool,
    pub y0: Vec<f64>,
    pub ridge_fallbacks: usize,
    pub contraction_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub a: usize,
    pub b: usize,
    pub eps_pair: f64,
    pub step1: Step1Report,
}

#[derive(Debug, Clone)]
pub struct Dominator {
    pub epsilon: f64,
    /// Index of the first rung with `probe_distance <= epsilon`.
    pub n_eps: Option<usize>,
    pub v0: f64,
    pub solution: OdeSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBound {
    pub a: usize,
    pub b: usize,
    pub epsilon: f64,
    pub d_y: f64,
    pub v0: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovStage {
    pub pair: (usize, usize),
    /// First increasing stretch of `int |z_mn|` per path.
    pub interval: (StoppingTime, StoppingTime),
    pub window: GirsanovWindow,
    pub window_fraction: f64,
    /// `max |z_mn|` and its mean over paths and times.
    pub z_max: f64,
    pub z_mean: f64,
    pub eta_bound: f64,
    pub density: DensityReport,
    pub density_ok: bool,
    pub envelope_gamma0: f64,
    pub eps_pair: f64,
    pub domination: DominationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitStage {
    pub against_original: ResidualReport,
    pub against_mollified: ResidualReport,
    pub ratio: f64,
    pub holds: bool,
}

/// `D_z ~ c1 sqrt(D_y) + c2`: least-squares slope, then the smallest `c2`
/// making the bound hold on every pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step2Fit {
    pub c1: f64,
    pub c2: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCheck {
    /// `D_y(n, n_max)` for every rung but the last.
    pub sequence: Vec<f64>,
    /// Rungs `i` with `sequence[i + 1] > sequence[i] + floor`.
    pub inversions: Vec<usize>,
    pub asserted: bool,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub driver: String,
    pub osgood: bool,
    pub rungs: Vec<Rung>,
    /// Row-major `L x L`.
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
    pub pairs: Vec<PairCheck>,
    pub dominators: Vec<Dominator>,
    /// `V^{eps(n)}` per rung.
    pub rung_dominators: Vec<f64>,
    pub global: Vec<GlobalBound>,
    pub v_collapses: bool,
    pub girsanov: Option<GirsanovStage>,
    pub limit: LimitStage,
    pub step2: Option<Step2Fit>,
    pub monotone: MonotoneCheck,
    pub checks: Vec<StageCheck>,
}

impl ConvergenceReport {
    pub fn rungs_len(&self) -> usize {
        self.rungs.len()
    }

    pub fn dy(&self, a: usize, b: usize) -> f64 {
        self.d_y[a * self.rungs.len() + b]
    }

    pub fn dz(&self, a: usize, b: usize) -> f64 {
        self.d_z[a * self.rungs.len() + b]
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&StageCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Ladder {
    drivers: Vec<Driver>,
    rungs: Vec<Rung>,
    solutions: Vec<SolutionPair>,
}

fn build_ladder(cfg: &ExperimentConfig, f: &Driver, xi: &TerminalCondition, ens: &PathEnsemble) -> Result<Ladder> {
    let seed = cfg.probe_seed();
    let base = verify_moduli_in(f, cfg.probes, seed, cfg.probe_box).map_err(|e| e.at_stage("moduli"))?;
    if !base.passed() {
        return Err(Error::invalid("driver", format!("{} violates its declared moduli", f.name())).at_stage("moduli"));
    }
    let mut ladder = Ladder {
        drivers: Vec::new(),
        rungs: Vec::new(),
        solutions: Vec::new(),
    };
    for &n in &cfg.ladder {
        let fnn = mollify(f, &cfg.kernel, n).map_err(|e| e.at_stage("mollify"))?;
        let moduli = verify_moduli_in(&fnn, cfg.probes, seed, cfg.probe_box).map_err(|e| e.at_stage("moduli"))?;
        if !moduli.passed() {
            return Err(
                Error::invalid("driver", format!("mollified rung n = {n} violates the moduli")).at_stage("moduli"),
            );
        }
        let probe_distance =
            sup_distance(f, &fnn, cfg.probes, seed, cfg.probe_box).map_err(|e| e.at_stage("mollify"))?;
        let sol = solve_bsde(&fnn, xi, ens, &cfg.regression, cfg.picard_iters).map_err(|e| e.at_stage("solve"))?;
        ladder.rungs.push(Rung {
            n,
            probe_distance,
            closeness_bound: fnn.closeness_bound().unwrap_or(0.0),
            lipschitz: fnn.lipschitz_constant().unwrap_or(f64::INFINITY),
            moduli_passed: moduli.passed(),
            y0: sol.y0(),
            ridge_fallbacks: sol.meta.ridge_fallbacks,
            contraction_warning: sol.meta.contraction_warning,
        });
        ladder.drivers.push(fnn);
        ladder.solutions.push(sol);
    }
    Ok(ladder)
}

fn triangle_gap(table: &[f64], l: usize, transform: impl Fn(f64) -> f64) -> f64 {
    let at = |a: usize, b: usize| transform(table[a * l + b]);
    let mut worst = f64::NEG_INFINITY;
    for a in 0..l {
        for b in 0..l {
            for c in 0..l {
                worst = worst.max(at(a, c) - at(a, b) - at(b, c));
            }
        }
    }
    worst
}

fn step2_fit(d_y: &[f64], d_z: &[f64], l: usize) -> Option<Step2Fit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in 0..l {
        for b in a + 1..l {
            xs.push(d_y[a * l + b].sqrt());
            ys.push(d_z[a * l + b]);
        }
    }
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let c1 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let c2 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - c1 * x)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Some(Step2Fit {
        c1,
        c2,
        pairs: xs.len(),
    })
}

fn girsanov_stage(
    cfg: &ExperimentConfig,
    f: &Driver,
    ladder: &Ladder,
    ens: &PathEnsemble,
    pair: (usize, usize),
) -> Result<GirsanovStage> {
    let (a, b) = pair;
    let (sa, sb) = (&ladder.solutions[a], &ladder.solutions[b]);
    let comb = signed_z_combination(sa, sb)?;
    let dec = decompose_at_level(&comb.cumulative, 0.0, cfg.flat_tolerance)?;
    let n = cfg.steps;
    let mut from = Vec::with_capacity(cfg.paths);
    let mut to = Vec::with_capacity(cfg.paths);
    for p in &dec.paths {
        match p.segments.iter().find(|s| s.label == Label::Increasing) {
            Some(s) => {
                from.push(s.left);
                to.push(s.right);
            }
            None => {
                from.push(n);
                to.push(n);
            }
        }
    }
    let interval = (StoppingTime::new(from), StoppingTime::new(to));
    let window = novikov_window(&comb.magnitude, &comb.z_norm_diff, (&interval.0, &interval.1), cfg.eps0)?;
    window.check_sandwich(&comb.magnitude, &comb.z_norm_diff)?;

    let mult = cfg.dims as f64;
    let psi = f.modulus_z();
    let eta = drift_eta(&psi_values(psi, &comb.z_norm_diff), &comb.z_mn, &window, mult)?;
    let dens = density(&eta, ens, &window)?;
    let sig = cfg.slack.sigmas;
    let density_ok = dens.positive
        && (dens.mean - 1.0).abs() <= sig * dens.stderr
        && dens
            .corrected_drift
            .iter()
            .zip(&dens.corrected_drift_stderr)
            .all(|(m, s)| m.abs() <= sig * s);

    let weights = cfg.weights();
    let grid = sa.grid().clone();
    let x = AdaptedProcess::from_fn(&grid, Shape::Scalar, cfg.paths, n + 1, |p, j, v| {
        v[0] =
            sa.y.at(p, j)
                .iter()
                .zip(sb.y.at(p, j))
                .zip(&weights)
                .map(|((u, w), c)| c * (u - w).abs())
                .sum();
    });
    let bound_c = x.values().iter().fold(0.0, |m: f64, v| m.max(*v));
    let eps_pair = ladder.rungs[a].probe_distance + ladder.rungs[b].probe_distance;
    let problem = BackwardOdeProblem::new(f.modulus_y().clone(), eps_pair, 0.0, 1.0, (cfg.dims + 1) as f64)?;
    let env = envelope_at(&x, &window.right, &problem, bound_c)?;
    let domination = domination_check(sa, sb, &env.solution, &window, &weights, cfg.slack.domination)?;
    Ok(GirsanovStage {
        pair,
        window_fraction: window.nondegenerate_fraction(),
        z_max: comb.magnitude.values().iter().fold(0.0, |m: f64, v| m.max(*v)),
        z_mean: crate::stats::mean(comb.magnitude.values()),
        interval,
        window,
        eta_bound: eta_bound(psi, cfg.eps0, mult),
        density: dens,
        density_ok,
        envelope_gamma0: env.gamma0,
        eps_pair,
        domination,
    })
}

/// Solves rungs `n_a < n_b` of the ladder and runs the window, density and
/// domination stage on that pair alone.
pub fn run_girsanov_pair(cfg: &ExperimentConfig, n_a: u32, n_b: u32) -> Result<GirsanovStage> {
    let mut cfg = cfg.clone();
    cfg.ladder = vec![n_a, n_b];
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let f = cfg.base_driver().map_err(|e| e.at_stage("config"))?;
    let xi = cfg.terminal.build(cfg.dims);
    let ens = cfg.ensemble().map_err(|e| e.at_stage("ensemble"))?;
    let ladder = build_ladder(&cfg, &f, &xi, &ens)?;
    girsanov_stage(&cfg, &f, &ladder, &ens, (0, 1)).map_err(|e| e.at_stage("girsanov"))
}

/// Runs the full ladder experiment.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let f = cfg.base_driver().map_err(|e| e.at_stage("config"))?;
    let xi = cfg.terminal.build(cfg.dims);
    let ens = cfg.ensemble().map_err(|e| e.at_stage("ensemble"))?;
    let ladder = build_ladder(cfg, &f, &xi, &ens)?;
    let l = ladder.rungs.len();
    let mut checks = Vec::new();

    let mut d_y = vec![0.0; l * l];
    let mut d_z = vec![0.0; l * l];
    for a in 0..l {
        for b in a + 1..l {
            let dy = distance_y(&ladder.solutions[a], &ladder.solutions[b]).map_err(|e| e.at_stage("distances"))?;
            let dz = distance_z(&ladder.solutions[a], &ladder.solutions[b]).map_err(|e| e.at_stage("distances"))?;
            d_y[a * l + b] = dy;
            d_y[b * l + a] = dy;
            d_z[a * l + b] = dz;
            d_z[b * l + a] = dz;
        }
    }
    let tri_y = triangle_gap(&d_y, l, |v| v);
    let tri_z = triangle_gap(&d_z, l, |v| v.sqrt());
    checks.push(StageCheck {
        name: "triangle",
        passed: tri_y <= cfg.slack.triangle && tri_z <= cfg.slack.triangle,
        detail: format!("worst triangle excess D_y {tri_y:e}, sqrt(D_z) {tri_z:e}"),
    });

    let k = f.growth_k();
    let mut pairs = Vec::new();
    for a in 0..l {
        for b in a + 1..l {
            let eps_pair = ladder.rungs[a].probe_distance.max(ladder.rungs[b].probe_distance);
            let step1 = crate::solver::step1_uniform_bound(&ladder.solutions[a], &ladder.solutions[b], eps_pair, k)
                .map_err(|e| e.at_stage("step1"))?;
            pairs.push(PairCheck { a, b, eps_pair, step1 });
        }
    }
    let step1_ok = pairs.iter().all(|p| p.step1.holds && p.step1.slack_factor > 1.0);
    let min_slack = pairs.iter().map(|p| p.step1.slack_factor).fold(f64::INFINITY, f64::min);
    checks.push(StageCheck {
        name: "step1",
        passed: step1_ok,
        detail: format!("{} pairs, smallest slack factor {min_slack:e}", pairs.len()),
    });

    let girsanov = if l >= 2 {
        let mut best = (0, l - 1);
        let mut gap = f64::NEG_INFINITY;
        for a in 0..l {
            for b in a + 1..l {
                if d_y[a * l + b] > gap {
                    gap = d_y[a * l + b];
                    best = (a, b);
                }
            }
        }
        let stage = girsanov_stage(cfg, &f, &ladder, &ens, best).map_err(|e| e.at_stage("girsanov"))?;
        checks.push(StageCheck {
            name: "density",
            passed: stage.density_ok,
            detail: format!(
                "mean {:.6} +- {:.2e}, corrected drift {:?}",
                stage.density.mean, stage.density.stderr, stage.density.corrected_drift
            ),
        });
        checks.push(StageCheck {
            name: "domination",
            passed: stage.domination.holds,
            detail: format!(
                "pair ({}, {}), {} points, worst exceedance {:e}, slack {:e}",
                cfg.ladder[best.0],
                cfg.ladder[best.1],
                stage.domination.checked_points,
                stage.domination.worst_exceedance,
                cfg.slack.domination
            ),
        });
        Some(stage)
    } else {
        None
    };

    let phi = f.modulus_y().clone();
    let mut dominators = Vec::new();
    for &eps in &cfg.eps_ladder {
        let v = global_dominator(&phi, eps, cfg.dims, cfg.steps).map_err(|e| e.at_stage("dominator"))?;
        dominators.push(Dominator {
            epsilon: eps,
            n_eps: ladder.rungs.iter().position(|r| r.probe_distance <= eps),
            v0: v.initial(),
            solution: v,
        });
    }
    let mut rung_dominators = Vec::with_capacity(l);
    for r in &ladder.rungs {
        let eps = r.probe_distance.max(f64::MIN_POSITIVE);
        rung_dominators.push(
            global_dominator(&phi, eps, cfg.dims, cfg.steps)
                .map_err(|e| e.at_stage("dominator"))?
                .initial(),
        );
    }
    let mut global = Vec::new();
    for a in 0..l {
        for b in a + 1..l {
            let dy = d_y[a * l + b];
            let v0 = rung_dominators[a];
            global.push(GlobalBound {
                a,
                b,
                epsilon: ladder.rungs[a].probe_distance,
                d_y: dy,
                v0,
                holds: dy <= v0 + cfg.slack.global,
            });
            for dom in &dominators {
                if dom.n_eps.is_some_and(|i| a >= i) {
                    global.push(GlobalBound {
                        a,
                        b,
                        epsilon: dom.epsilon,
                        d_y: dy,
                        v0: dom.v0,
                        holds: dy <= dom.v0 + cfg.slack.global,
                    });
                }
            }
        }
    }
    let v_monotone = dominators.windows(2).all(|w| w[1].v0 <= w[0].v0);
    let v_collapses = dominators.last().is_some_and(|d| d.v0 <= cfg.collapse_threshold);
    checks.push(StageCheck {
        name: "global_bound",
        passed: global.iter().all(|g| g.holds) && v_monotone,
        detail: format!(
            "{} bounds, {} violated; V^eps(0) non-increasing: {v_monotone}; collapses: {v_collapses}",
            global.len(),
            global.iter().filter(|g| !g.holds).count()
        ),
    });

    let last = l - 1;
    let limit_sol = &ladder.solutions[last];
    let against_original = residual_check(limit_sol, &f, &xi, &ens).map_err(|e| e.at_stage("residual"))?;
    let against_mollified =
        residual_check(limit_sol, &ladder.drivers[last], &xi, &ens).map_err(|e| e.at_stage("residual"))?;
    let ratio = if against_mollified.rms > 0.0 {
        against_original.rms / against_mollified.rms
    } else if against_original.rms == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let limit = LimitStage {
        holds: against_original.rms <= cfg.slack.residual_factor * against_mollified.rms,
        against_original,
        against_mollified,
        ratio,
    };
    checks.push(StageCheck {
        name: "limit_residual",
        passed: limit.holds,
        detail: format!(
            "rms against f {:e}, against f_{} {:e}, ratio {ratio:.4}",
            limit.against_original.rms, cfg.ladder[last], limit.against_mollified.rms
        ),
    });

    let sequence: Vec<f64> = (0..last).map(|a| d_y[a * l + last]).collect();
    let inversions: Vec<usize> = sequence
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0] + cfg.slack.monotone_floor)
        .map(|(i, _)| i)
        .collect();
    let osgood = phi.osgood_declared();
    let monotone = MonotoneCheck {
        holds: !osgood || inversions.len() <= 1,
        asserted: osgood,
        sequence,
        inversions,
    };
    checks.push(StageCheck {
        name: "monotone",
        passed: monotone.holds,
        detail: format!(
            "D_y(n, n_max) = {:?}, inversions at {:?}{}",
            monotone.sequence,
            monotone.inversions,
            if monotone.asserted { "" } else { " (not asserted)" }
        ),
    });

    Ok(ConvergenceReport {
        driver: f.name().to_string(),
        osgood,
        rungs: ladder.rungs,
        step2: step2_fit(&d_y, &d_z, l),
        d_y,
        d_z,
        pairs,
        dominators,
        rung_dominators,
        global,
        v_collapses,
        girsanov,
        limit,
        monotone,
        checks,
    })
}

/// Re-solves the limit candidate with the ridge scaled by `10^s` and the
/// Picard count scaled by `1 + s`. A stability proxy for uniqueness, not a
/// proof of it.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub perturbation_scale: f64,
    pub n: u32,
    pub ridge: (f64, f64),
    pub picard: (usize, usize),
    pub d_y: f64,
    pub d_z: f64,
    pub y0_gap: f64,
    pub budget: f64,
    pub within_budget: bool,
}

pub fn run_uniqueness_probe(cfg: &ExperimentConfig, perturbation_scale: f64) -> Result<UniquenessReport> {
    if !(perturbation_scale >= 0.0) {
        return Err(Error::invalid("perturbation_scale", "must be non-negative"));
    }
    cfg.validate()?;
    let f = cfg.base_driver()?;
    let xi = cfg.terminal.build(cfg.dims);
    let ens = cfg.ensemble()?;
    let n = *cfg.ladder.last().expect("validated ladder");
    let fnn = mollify(&f, &cfg.kernel, n)?;
    let base = solve_bsde(&fnn, &xi, &ens, &cfg.regression, cfg.picard_iters)?;
    let mut reg = cfg.regression;
    reg.ridge *= 10f64.powf(perturbation_scale);
    let picard = cfg.picard_iters + (perturbation_scale * cfg.picard_iters as f64).round() as usize;
    let other = solve_bsde(&fnn, &xi, &ens, &reg, picard)?;
    let d_y = distance_y(&base, &other)?;
    let d_z = distance_z(&base, &other)?;
    let y0_gap = base
        .y0()
        .iter()
        .zip(other.y0())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(UniquenessReport {
        perturbation_scale,
        n,
        ridge: (cfg.regression.ridge, reg.ridge),
        picard: (cfg.picard_iters, picard),
        d_y,
        d_z,
        y0_gap,
        budget: cfg.slack.uniqueness,
        within_budget: d_y <= cfg.slack.uniqueness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(driver: &str) -> ExperimentConfig {
        ExperimentConfig {
            driver: driver.into(),
            steps: 20,
            paths: 400,
            dims: 1,
            noise_dims: 1,
            ladder: vec![2, 4, 8],
            probes: 2000,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let mut c = small("osgood");
        c.ladder = vec![4, 4];
        assert!(c.validate().is_err());
        let mut c = small("osgood");
        c.eps_ladder = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        let mut c = small("osgood");
        c.slack.global = 0.0;
        assert!(c.validate().is_err());
        let mut c = small("nope");
        c.ladder = vec![1];
        assert!(matches!(run_convergence(&c), Err(Error::Stage { stage: "config", .. })));
    }

    #[test]
    fn zero_driver_ladder_is_exact() {
        let r = run_convergence(&small("zero")).unwrap();
        assert!(r.d_y.iter().all(|&v| v == 0.0));
        assert!(r.d_z.iter().all(|&v| v == 0.0));
        assert!(r.passed(), "{:?}", r.checks);
    }

    #[test]
    fn single_rung_gives_a_unit_table() {
        let mut c = small("osgood");
        c.ladder = vec![8];
        let r = run_convergence(&c).unwrap();
        assert_eq!(r.d_y, vec![0.0]);
        assert!(r.girsanov.is_none());
    }

    #[test]
    fn small_osgood_ladder_runs() {
        let r = run_convergence(&small("osgood")).unwrap();
        let l = r.rungs_len();
        for a in 0..l {
            assert_eq!(r.dy(a, a), 0.0);
            for b in 0..l {
                assert_eq!(r.dy(a, b), r.dy(b, a));
                assert!(r.dz(a, b) >= 0.0);
            }
        }
        assert!(r.check("step1").unwrap().passed);
    }

    #[test]
    fn uniqueness_probe_at_zero_is_exact() {
        let u = run_uniqueness_probe(&small("osgood"), 0.0).unwrap();
        assert_eq!(u.d_y, 0.0);
        assert_eq!(u.d_z, 0.0);
        assert!(run_uniqueness_probe(&small("osgood"), -1.0).is_err());
    }
}
