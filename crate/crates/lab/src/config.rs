//! TOML experiment configuration. Every section and key is optional; the
//! defaults reproduce the reference convergence run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bsdelab_core::decomposition::FlatTolerance;
use bsdelab_core::driver::{CatalogParams, MollifierKernel, ProbeBox};
use bsdelab_core::harness::{ExperimentConfig, SlackBudget, TerminalSpec};
use bsdelab_core::regression::RegressionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub ensemble: Ensemble,
    pub driver: DriverSection,
    pub terminal: Terminal,
    pub mollifier: Mollifier,
    pub regression: Regression,
    pub dominator: Dominator,
    pub girsanov: Girsanov,
    pub slack: Slack,
    pub decompose: Decompose,
    pub envelope: Envelope,
    pub probes: Probes,
    pub uniqueness: Uniqueness,
    pub output: Output,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 20240501,
            ensemble: Ensemble::default(),
            driver: DriverSection::default(),
            terminal: Terminal::default(),
            mollifier: Mollifier::default(),
            regression: Regression::default(),
            dominator: Dominator::default(),
            girsanov: Girsanov::default(),
            slack: Slack::default(),
            decompose: Decompose::default(),
            envelope: Envelope::default(),
            probes: Probes::default(),
            uniqueness: Uniqueness::default(),
            output: Output::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ensemble {
    /// Time steps `N` on `[0, 1]`.
    pub steps: usize,
    /// Paths `M`.
    pub paths: usize,
    /// Dimension `d` of `Y`.
    pub dims: usize,
    /// Dimension `m` of the Brownian motion.
    pub noise_dims: usize,
}

impl Default for Ensemble {
    fn default() -> Self {
        Ensemble {
            steps: 200,
            paths: 20_000,
            dims: 2,
            noise_dims: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverSection {
    /// Catalog entry: zero, linear, sine, osgood, abs, sqrt.
    pub name: String,
    pub a: f64,
    pub b: f64,
}

impl Default for DriverSection {
    fn default() -> Self {
        DriverSection {
            name: "osgood".into(),
            a: 0.5,
            b: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Terminal {
    /// constant, brownian, sine or abs.
    pub kind: String,
    /// The constant, or the scale of `B(1)`.
    pub value: f64,
}

impl Default for Terminal {
    fn default() -> Self {
        Terminal {
            kind: "brownian".into(),
            value: 1.0,
        }
    }
}

impl Terminal {
    pub fn spec(&self) -> Result<TerminalSpec> {
        Ok(match self.kind.as_str() {
            "constant" => TerminalSpec::Constant(self.value),
            "brownian" => TerminalSpec::Brownian(self.value),
            "sine" => TerminalSpec::Sine,
            "abs" => TerminalSpec::Abs,
            other => bail!("unknown terminal kind `{other}`"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mollifier {
    pub support_radius: f64,
    pub nodes_per_axis: usize,
    pub ladder: Vec<u32>,
    /// Mollification index for `solve`; 0 solves Lipschitz drivers as they
    /// are and mollifies the others at the top of the ladder.
    pub solve_n: u32,
}

impl Default for Mollifier {
    fn default() -> Self {
        Mollifier {
            support_radius: 1.0,
            nodes_per_axis: 9,
            ladder: vec![4, 8, 16, 32, 64],
            solve_n: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regression {
    pub degree: usize,
    pub ridge: f64,
    pub picard_iters: usize,
}

impl Default for Regression {
    fn default() -> Self {
        Regression {
            degree: 3,
            ridge: 1e-10,
            picard_iters: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dominator {
    pub eps_ladder: Vec<f64>,
    pub collapse_threshold: f64,
}

impl Default for Dominator {
    fn default() -> Self {
        Dominator {
            eps_ladder: vec![0.5, 0.2, 0.1, 0.05],
            collapse_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Girsanov {
    pub eps0: f64,
    /// Per-component weights of `|dY|`; empty means all ones.
    pub weights: Vec<f64>,
    /// Constant drift of the density fixture.
    pub eta: f64,
    /// Two ladder indices `n` whose solutions get windows and a
    /// domination check; empty skips that stage.
    pub pair: Vec<u32>,
}

impl Default for Girsanov {
    fn default() -> Self {
        Girsanov {
            eps0: 1e-3,
            weights: Vec::new(),
            eta: 1.0,
            pair: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Slack {
    pub domination: f64,
    pub global: f64,
    pub residual_factor: f64,
    pub sigmas: f64,
    pub monotone_floor: f64,
    pub triangle: f64,
    pub uniqueness: f64,
}

impl Default for Slack {
    fn default() -> Self {
        let s = SlackBudget::default();
        Slack {
            domination: s.domination,
            global: s.global,
            residual_factor: s.residual_factor,
            sigmas: s.sigmas,
            monotone_floor: s.monotone_floor,
            triangle: s.triangle,
            uniqueness: s.uniqueness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decompose {
    /// pathological, brownian or step.
    pub source: String,
    pub depth: usize,
    pub levels: Vec<f64>,
    pub flat_tolerance: f64,
    /// Scale the flat tolerance by each path's `H(1)`.
    pub relative: bool,
    /// Allowed uncovered measure; 0 means three grid steps.
    pub coverage_tolerance: f64,
}

impl Default for Decompose {
    fn default() -> Self {
        Decompose {
            source: "pathological".into(),
            depth: 3,
            levels: vec![0.0],
            flat_tolerance: 1e-12,
            relative: true,
            coverage_tolerance: 0.0,
        }
    }
}

impl Decompose {
    pub fn tolerance(&self) -> FlatTolerance {
        if self.relative {
            FlatTolerance::Relative(self.flat_tolerance)
        } else {
            FlatTolerance::Absolute(self.flat_tolerance)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Envelope {
    /// Modulus name: zero, identity, osgood, sqrt.
    pub phi: String,
    pub epsilon: f64,
    pub gamma: f64,
    pub multiplier: f64,
    /// constant or abs_brownian.
    pub process: String,
    /// Value of the constant process.
    pub level: f64,
    pub tau: f64,
    pub bound_c: f64,
    pub alpha: f64,
    /// Decreasing `gamma = eps` sequence for the vanishing-limit table.
    pub vanish: Vec<f64>,
    pub vanish_threshold: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Envelope {
            phi: "identity".into(),
            epsilon: 0.0,
            gamma: 1.0,
            multiplier: 1.0,
            process: "constant".into(),
            level: 1.0,
            tau: 0.5,
            bound_c: 2.0,
            alpha: 2.0,
            vanish: vec![1e-2, 1e-4, 1e-6, 1e-8],
            vanish_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Probes {
    pub count: usize,
    pub radius: f64,
    pub min_log10_gap: f64,
}

impl Default for Probes {
    fn default() -> Self {
        let b = ProbeBox::default();
        Probes {
            count: 20_000,
            radius: b.radius,
            min_log10_gap: b.min_log10_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Uniqueness {
    pub enabled: bool,
    pub scale: f64,
}

impl Default for Uniqueness {
    fn default() -> Self {
        Uniqueness {
            enabled: false,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
    /// Paths written to the per-path tables.
    pub max_paths: usize,
}

impl Default for Output {
    fn default() -> Self {
        Output {
            dir: PathBuf::from("out"),
            max_paths: 50,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let s = &self.slack;
        Ok(ExperimentConfig {
            driver: self.driver.name.clone(),
            params: CatalogParams {
                a: self.driver.a,
                b: self.driver.b,
            },
            terminal: self.terminal.spec()?,
            steps: self.ensemble.steps,
            paths: self.ensemble.paths,
            dims: self.ensemble.dims,
            noise_dims: self.ensemble.noise_dims,
            seed: self.seed,
            ladder: self.mollifier.ladder.clone(),
            kernel: MollifierKernel {
                support_radius: self.mollifier.support_radius,
                nodes_per_axis: self.mollifier.nodes_per_axis,
            },
            regression: RegressionConfig {
                degree: self.regression.degree,
                ridge: self.regression.ridge,
            },
            picard_iters: self.regression.picard_iters,
            eps_ladder: self.dominator.eps_ladder.clone(),
            eps0: self.girsanov.eps0,
            slack: SlackBudget {
                domination: s.domination,
                global: s.global,
                residual_factor: s.residual_factor,
                sigmas: s.sigmas,
                monotone_floor: s.monotone_floor,
                triangle: s.triangle,
                uniqueness: s.uniqueness,
            },
            weights: self.girsanov.weights.clone(),
            probes: self.probes.count,
            probe_box: ProbeBox {
                radius: self.probes.radius,
                min_log10_gap: self.probes.min_log10_gap,
            },
            flat_tolerance: self.decompose.tolerance(),
            collapse_threshold: self.dominator.collapse_threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip() {
        let mut c = Config {
            seed: 7,
            ..Config::default()
        };
        c.girsanov.pair = vec![8, 16];
        let text = c.to_toml().unwrap();
        assert_eq!(Config::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[ensemble]\nsteps = 10\nwidth = 3\n").is_err());
        assert!(Config::parse("[terminal]\nkind = \"cubic\"\n")
            .unwrap()
            .experiment()
            .is_err());
    }

    #[test]
    fn experiment_mirrors_sections() {
        let c = Config::parse("seed = 3\n[ensemble]\nsteps = 10\npaths = 50\n[driver]\nname = \"sqrt\"\n").unwrap();
        let e = c.experiment().unwrap();
        assert_eq!((e.seed, e.steps, e.paths, e.driver.as_str()), (3, 10, 50, "sqrt"));
        assert!(e.validate().is_ok());
    }
}
