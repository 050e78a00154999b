use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde_json::{json, Value};

use bsdelab_core::decomposition::{
    coverage_check, decompose_at_level, pathological_h, version_consistency, DecompositionReport, Label,
};
use bsdelab_core::driver::mollify;
use bsdelab_core::envelope::{envelope_at, envelope_scaling_probe};
use bsdelab_core::girsanov::{density, DensityReport, GirsanovWindow};
use bsdelab_core::harness::{run_girsanov_pair, GirsanovStage, UniquenessReport};
use bsdelab_core::ode::{solve_backward, vanish_limit_check, BackwardOdeProblem};
use bsdelab_core::solver::residual_check;
use bsdelab_core::stats::mean_and_stderr;
use bsdelab_core::stochastic::{check_adapted, integrate_abs};
use bsdelab_core::{
    run_convergence, run_uniqueness_probe, solve_bsde, AdaptedProcess, Driver, ExperimentConfig, Modulus, PathEnsemble,
    Shape, SolutionPair, StoppingTime, TerminalCondition,
};

use crate::config::Config;
use crate::export::{ensemble_table, matrix_table, num, process_table, Check, Export, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Converge,
    Envelope,
    Decompose,
    Girsanov,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Converge => "converge",
            Command::Envelope => "envelope",
            Command::Decompose => "decompose",
            Command::Girsanov => "girsanov",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs `command` and writes its files into `out`.
pub fn run(command: Command, cfg: &Config, out: &Path) -> Result<Outcome> {
    let exp = cfg.experiment()?;
    exp.validate()?;
    let mut export = Export::create(out)?;
    let mut checks = Vec::new();
    let results = match command {
        Command::Solve => solve(cfg, &exp, &mut export, &mut checks)?,
        Command::Converge => converge(cfg, &exp, &mut export, &mut checks)?,
        Command::Envelope => envelope(cfg, &exp, &mut export, &mut checks)?,
        Command::Decompose => decompose(cfg, &exp, &mut export, &mut checks)?,
        Command::Girsanov => girsanov(cfg, &exp, &mut export, &mut checks)?,
    };
    export.finish(command.name(), cfg, &checks, results)?;
    Ok(Outcome {
        dir: out.to_path_buf(),
        files: export.files().to_vec(),
        checks,
    })
}

fn uniqueness(cfg: &Config, exp: &ExperimentConfig, checks: &mut Vec<Check>) -> Result<Value> {
    if !cfg.uniqueness.enabled {
        return Ok(Value::Null);
    }
    let u: UniquenessReport = run_uniqueness_probe(exp, cfg.uniqueness.scale)?;
    checks.push(Check::new(
        "uniqueness_proxy",
        u.within_budget,
        format!("n = {}, D_y = {:e}, budget {:e}", u.n, u.d_y, u.budget),
    ));
    Ok(json!({
        "scale": u.perturbation_scale,
        "n": u.n,
        "ridge": [u.ridge.0, u.ridge.1],
        "picard": [u.picard.0, u.picard.1],
        "d_y": u.d_y,
        "d_z": u.d_z,
        "y0_gap": u.y0_gap,
        "budget": u.budget,
        "within_budget": u.within_budget,
    }))
}

/// Per component, the pathwise values `xi + sum_j f(t_j, Y_j, Z_j) h`
/// whose ensemble mean estimates `Y(0)`.
pub fn pathwise_y0(sol: &SolutionPair, driver: &Driver, xi: &TerminalCondition, ens: &PathEnsemble) -> Vec<Vec<f64>> {
    let (d, _) = sol.dims();
    let grid = ens.grid();
    let h = grid.step();
    let mut out = vec![Vec::with_capacity(ens.count()); d];
    let mut xv = vec![0.0; d];
    let mut fv = vec![0.0; d];
    for p in 0..ens.count() {
        xi.eval(ens, p, &mut xv);
        for j in 0..grid.steps() {
            driver.eval(grid.time(j), sol.y.at(p, j), sol.z.at(p, j), &mut fv);
            for (x, f) in xv.iter_mut().zip(&fv) {
                *x += f * h;
            }
        }
        for (o, x) in out.iter_mut().zip(&xv) {
            o.push(*x);
        }
    }
    out
}

fn solve(cfg: &Config, exp: &ExperimentConfig, export: &mut Export, checks: &mut Vec<Check>) -> Result<Value> {
    let ens = exp.ensemble()?;
    let f = exp.base_driver()?;
    let xi = exp.terminal.build(exp.dims);
    let n = match cfg.mollifier.solve_n {
        0 if f.lipschitz_constant().is_some() => 0,
        0 => *exp.ladder.last().expect("validated ladder"),
        n => n,
    };
    let g = if n == 0 {
        f.clone()
    } else {
        mollify(&f, &exp.kernel, n)?
    };
    let sol = solve_bsde(&g, &xi, &ens, &exp.regression, exp.picard_iters)?;
    let (d, m) = sol.dims();
    let steps = exp.steps;

    let naive = pathwise_y0(&sol, &g, &xi, &ens);
    let y0 = sol.y0();
    let mut t = Table::new(&["component", "y0", "stderr"]);
    let mut stderr = Vec::with_capacity(d);
    for k in 0..d {
        let (_, se) = mean_and_stderr(&naive[k]);
        stderr.push(se);
        t.row(vec![k.to_string(), num(y0[k]), num(se)]);
    }
    export.csv("y0.csv", &t)?;
    let z_mean: Vec<f64> = (0..d * m)
        .map(|c| sol.z.values().iter().skip(c).step_by(d * m).sum::<f64>() / (exp.paths * steps) as f64)
        .collect();

    let residual = residual_check(&sol, &g, &xi, &ens)?;
    let mut t = Table::new(&["index", "t", "rms"]);
    for (j, r) in residual.per_time_rms.iter().enumerate() {
        t.row(vec![j.to_string(), num(ens.grid().time(j)), num(*r)]);
    }
    export.csv("residual.csv", &t)?;
    export.csv("y.csv", &process_table(&sol.y, cfg.output.max_paths, "y"))?;
    export.csv("z.csv", &process_table(&sol.z, cfg.output.max_paths, "z"))?;
    export.csv("ensemble.csv", &ensemble_table(&ens, cfg.output.max_paths))?;

    let finite = sol.y.values().iter().chain(sol.z.values()).all(|v| v.is_finite());
    checks.push(Check::new("finite", finite, "Y and Z finite on every path"));
    let at = steps / 2;
    let ya = check_adapted(&ens, at, exp.seed ^ 1, |e| Ok(sol.evaluate(e)?.y))?;
    let za = check_adapted(&ens, at, exp.seed ^ 1, |e| Ok(sol.evaluate(e)?.z))?;
    checks.push(Check::new(
        "adapted",
        ya.adapted && za.adapted,
        format!(
            "future redrawn after index {at}: max deviation {:e}",
            ya.max_deviation.max(za.max_deviation)
        ),
    ));
    checks.push(Check::new(
        "residual_finite",
        residual.rms.is_finite(),
        format!("rms {:e}, max {:e}", residual.rms, residual.max_abs),
    ));
    let uniq = uniqueness(cfg, exp, checks)?;
    Ok(json!({
        "driver": g.name(),
        "mollified_at": n,
        "lipschitz": g.lipschitz_constant(),
        "y0": y0,
        "y0_stderr": stderr,
        "z_mean": z_mean,
        "residual_rms": residual.rms,
        "residual_max": residual.max_abs,
        "ridge_fallbacks": sol.meta.ridge_fallbacks,
        "contraction": sol.meta.contraction,
        "contraction_warning": sol.meta.contraction_warning,
        "uniqueness": uniq,
    }))
}

fn density_table(dens: &DensityReport, window: &GirsanovWindow, max_paths: usize) -> Table {
    let mut t = Table::new(&["path", "left", "right", "log_density", "density"]);
    for p in 0..dens.density.len().min(max_paths) {
        t.row(vec![
            p.to_string(),
            window.left.index(p).to_string(),
            window.right.index(p).to_string(),
            num(dens.log_density[p]),
            num(dens.density[p]),
        ]);
    }
    t
}

fn stage_json(stage: &GirsanovStage, ladder: &[u32]) -> Value {
    json!({
        "pair": [ladder[stage.pair.0], ladder[stage.pair.1]],
        "window_fraction": stage.window_fraction,
        "z_max": stage.z_max,
        "z_mean": stage.z_mean,
        "eta_bound": stage.eta_bound,
        "density_mean": stage.density.mean,
        "density_stderr": stage.density.stderr,
        "corrected_drift": stage.density.corrected_drift,
        "corrected_drift_stderr": stage.density.corrected_drift_stderr,
        "density_ok": stage.density_ok,
        "envelope_gamma0": stage.envelope_gamma0,
        "eps_pair": stage.eps_pair,
        "domination": {
            "worst_exceedance": stage.domination.worst_exceedance,
            "worst_at": stage.domination.worst_at.map(|(p, j)| [p, j]),
            "violations": stage.domination.violations,
            "checked_points": stage.domination.checked_points,
            "slack": stage.domination.slack,
            "holds": stage.domination.holds,
        },
    })
}

fn stage_exports(stage: &GirsanovStage, export: &mut Export, max_paths: usize) -> Result<()> {
    let mut t = Table::new(&["path", "interval_from", "interval_to", "left", "right"]);
    for p in 0..stage.window.paths().min(max_paths) {
        t.row(vec![
            p.to_string(),
            stage.interval.0.index(p).to_string(),
            stage.interval.1.index(p).to_string(),
            stage.window.left.index(p).to_string(),
            stage.window.right.index(p).to_string(),
        ]);
    }
    export.csv("windows.csv", &t)?;
    export.csv("density.csv", &density_table(&stage.density, &stage.window, max_paths))
}

fn converge(cfg: &Config, exp: &ExperimentConfig, export: &mut Export, checks: &mut Vec<Check>) -> Result<Value> {
    let r = run_convergence(exp)?;
    let l = r.rungs_len();
    let labels: Vec<String> = r.rungs.iter().map(|g| g.n.to_string()).collect();

    let mut t = Table::new(&[
        "n",
        "probe_distance",
        "closeness_bound",
        "lipschitz",
        "moduli_passed",
        "v_eps_n_0",
        "ridge_fallbacks",
        "contraction_warning",
        "y0",
    ]);
    for (g, v) in r.rungs.iter().zip(&r.rung_dominators) {
        t.row(vec![
            g.n.to_string(),
            num(g.probe_distance),
            num(g.closeness_bound),
            num(g.lipschitz),
            g.moduli_passed.to_string(),
            num(*v),
            g.ridge_fallbacks.to_string(),
            g.contraction_warning.to_string(),
            g.y0.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "),
        ]);
    }
    export.csv("rungs.csv", &t)?;
    export.csv("d_y.csv", &matrix_table(&labels, &r.d_y))?;
    export.csv("d_z.csv", &matrix_table(&labels, &r.d_z))?;

    let mut t = Table::new(&[
        "n_a",
        "n_b",
        "eps_pair",
        "sup_y_sq",
        "z_energy",
        "bound",
        "slack_factor",
        "holds",
    ]);
    for p in &r.pairs {
        t.row(vec![
            labels[p.a].clone(),
            labels[p.b].clone(),
            num(p.eps_pair),
            num(p.step1.sup_y_sq),
            num(p.step1.z_energy),
            num(p.step1.bound),
            num(p.step1.slack_factor),
            p.step1.holds.to_string(),
        ]);
    }
    export.csv("step1.csv", &t)?;

    let mut t = Table::new(&["epsilon", "n_eps", "v0"]);
    for d in &r.dominators {
        t.row(vec![
            num(d.epsilon),
            d.n_eps.map(|i| labels[i].clone()).unwrap_or_default(),
            num(d.v0),
        ]);
    }
    export.csv("dominators.csv", &t)?;
    if let Some(first) = r.dominators.first() {
        let mut header = vec!["t".to_string()];
        header.extend(r.dominators.iter().map(|d| format!("v_{}", num(d.epsilon))));
        let mut t = Table::new(&header);
        for (j, time) in first.solution.times.iter().enumerate() {
            let mut row = vec![num(*time)];
            row.extend(r.dominators.iter().map(|d| num(d.solution.values[j])));
            t.row(row);
        }
        export.csv("dominator_paths.csv", &t)?;
    }

    let mut t = Table::new(&["n_a", "n_b", "epsilon", "d_y", "v0", "holds"]);
    for g in &r.global {
        t.row(vec![
            labels[g.a].clone(),
            labels[g.b].clone(),
            num(g.epsilon),
            num(g.d_y),
            num(g.v0),
            g.holds.to_string(),
        ]);
    }
    export.csv("global.csv", &t)?;

    let mut t = Table::new(&["index", "t", "rms_original", "rms_mollified"]);
    let grid = exp.grid()?;
    for (j, (a, b)) in r
        .limit
        .against_original
        .per_time_rms
        .iter()
        .zip(&r.limit.against_mollified.per_time_rms)
        .enumerate()
    {
        t.row(vec![j.to_string(), num(grid.time(j)), num(*a), num(*b)]);
    }
    export.csv("residual.csv", &t)?;
    if let Some(stage) = &r.girsanov {
        stage_exports(stage, export, cfg.output.max_paths)?;
    }

    let symmetric = (0..l).all(|a| {
        r.dy(a, a) == 0.0
            && r.dz(a, a) == 0.0
            && (0..l).all(|b| r.dy(a, b) == r.dy(b, a) && r.dz(a, b) == r.dz(b, a) && r.dy(a, b) >= 0.0)
    });
    checks.push(Check::new(
        "tables",
        symmetric,
        "D_y, D_z symmetric, zero diagonal, non-negative",
    ));
    for c in &r.checks {
        checks.push(Check::new(c.name, c.passed, c.detail.clone()));
    }
    let uniq = uniqueness(cfg, exp, checks)?;
    Ok(json!({
        "driver": r.driver,
        "osgood": r.osgood,
        "ladder": r.rungs.iter().map(|g| g.n).collect::<Vec<_>>(),
        "probe_distance": r.rungs.iter().map(|g| g.probe_distance).collect::<Vec<_>>(),
        "d_y": r.d_y,
        "d_z": r.d_z,
        "v_eps_n": r.rung_dominators,
        "v_collapses": r.v_collapses,
        "monotone": {
            "sequence": r.monotone.sequence,
            "inversions": r.monotone.inversions,
            "asserted": r.monotone.asserted,
        },
        "step2": r.step2.map(|s| json!({"c1": s.c1, "c2": s.c2, "pairs": s.pairs})),
        "limit": {
            "rms_original": r.limit.against_original.rms,
            "rms_mollified": r.limit.against_mollified.rms,
            "ratio": r.limit.ratio,
        },
        "girsanov": r.girsanov.as_ref().map(|s| stage_json(s, &exp.ladder)),
        "uniqueness": uniq,
    }))
}

fn envelope_process(cfg: &Config, exp: &ExperimentConfig) -> Result<AdaptedProcess> {
    let grid = exp.grid()?;
    let n = grid.len();
    Ok(match cfg.envelope.process.as_str() {
        "constant" => {
            let level = cfg.envelope.level;
            AdaptedProcess::from_fn(&grid, Shape::Scalar, exp.paths, n, |_, _, v| v[0] = level)
        }
        "abs_brownian" => {
            let ens = exp.ensemble()?;
            AdaptedProcess::from_fn(&grid, Shape::Scalar, exp.paths, n, |p, j, v| {
                v[0] = ens.value(p, j)[0].abs()
            })
        }
        other => bail!("unknown envelope process `{other}`"),
    })
}

fn envelope(cfg: &Config, exp: &ExperimentConfig, export: &mut Export, checks: &mut Vec<Check>) -> Result<Value> {
    let e = &cfg.envelope;
    let phi = Modulus::by_name(&e.phi)?;
    let problem = BackwardOdeProblem::new(phi.clone(), e.epsilon, e.gamma, 1.0, e.multiplier)?;
    let ode = solve_backward(&problem, exp.steps)?;
    let mut t = Table::new(&["t", "u"]);
    for (time, u) in ode.times.iter().zip(&ode.values) {
        t.row(vec![num(*time), num(*u)]);
    }
    export.csv("ode.csv", &t)?;
    let ode_ok = ode.values.iter().all(|v| v.is_finite() && *v >= 0.0) && ode.values.windows(2).all(|w| w[1] <= w[0]);
    checks.push(Check::new(
        "ode_monotone",
        ode_ok,
        format!("u(0) = {}, u(1) = {}", num(ode.initial()), num(e.gamma)),
    ));

    let x = envelope_process(cfg, exp)?;
    let grid = x.grid().clone();
    if !(0.0..=1.0).contains(&e.tau) {
        bail!("envelope tau must lie in [0, 1]");
    }
    let tau = StoppingTime::constant(exp.paths, grid.floor_index(e.tau));
    let env = envelope_at(&x, &tau, &problem, e.bound_c)?;
    let mut t = Table::new(&["path", "tau_index", "x_at_tau", "theta"]);
    for p in 0..exp.paths.min(cfg.output.max_paths) {
        t.row(vec![
            p.to_string(),
            tau.index(p).to_string(),
            num(env.x_at_tau[p]),
            num(env.theta[p]),
        ]);
    }
    export.csv("envelope.csv", &t)?;
    let dominated = env.theta.iter().zip(&env.x_at_tau).all(|(th, xv)| th >= xv);
    checks.push(Check::new(
        "envelope_dominates",
        dominated,
        format!("gamma0 = {}", num(env.gamma0)),
    ));

    let scale_c = e.bound_c * e.alpha.max(1.0);
    let s = envelope_scaling_probe(&x, &tau, &problem, e.alpha, scale_c)?;
    checks.push(Check::new(
        "envelope_continuity",
        s.continuity_holds,
        format!("{:?}", s.continuity),
    ));
    if s.homogeneous {
        checks.push(Check::new(
            "envelope_homogeneity",
            s.homogeneity_holds,
            format!("alpha {}, gap {:e}", num(s.alpha), s.homogeneity_gap),
        ));
    }

    let v = vanish_limit_check(&phi, e.multiplier, &e.vanish, &e.vanish, exp.steps, e.vanish_threshold)?;
    let mut t = Table::new(&["gamma", "epsilon", "u0"]);
    for c in &v.table {
        t.row(vec![num(c.gamma), num(c.epsilon), num(c.u0)]);
    }
    export.csv("vanish.csv", &t)?;
    let osgood = phi.osgood_declared();
    checks.push(Check::new(
        "vanish_monotone",
        v.monotone,
        "u(0) non-increasing along both sequences",
    ));
    if osgood {
        checks.push(Check::new(
            "vanish_limit",
            v.vanished,
            format!(
                "u(0) = {:e} at the last pair, threshold {:e}",
                v.final_value, v.threshold
            ),
        ));
    }
    Ok(json!({
        "phi": phi.name(),
        "osgood": osgood,
        "u0": ode.initial(),
        "gamma0": env.gamma0,
        "theta_min": env.theta.iter().cloned().fold(f64::INFINITY, f64::min),
        "theta_max": env.theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "homogeneous": s.homogeneous,
        "homogeneity_gap": s.homogeneity_gap,
        "continuity": s.continuity.iter().map(|(a, g)| [*a, *g]).collect::<Vec<_>>(),
        "vanish_final": v.final_value,
        "vanished": v.vanished,
    }))
}

/// The integrand named by `decompose.source`, on `N + 1` points.
pub fn decompose_source(cfg: &Config, ens: &PathEnsemble) -> Result<AdaptedProcess> {
    let grid = ens.grid().clone();
    let n = grid.len();
    Ok(match cfg.decompose.source.as_str() {
        "pathological" => pathological_h(ens, cfg.decompose.depth)?,
        "brownian" => AdaptedProcess::from_fn(&grid, Shape::Scalar, ens.count(), n, |p, j, v| {
            v[0] = ens.value(p, j)[0]
        }),
        "step" => AdaptedProcess::from_fn(&grid, Shape::Scalar, ens.count(), n, |_, j, v| {
            v[0] = if grid.time(j) < 0.5 { 1.0 } else { 0.0 }
        }),
        other => bail!("unknown decomposition source `{other}`"),
    })
}

fn label(l: Label) -> &'static str {
    match l {
        Label::Flat => "flat",
        Label::Increasing => "increasing",
    }
}

fn decompose(cfg: &Config, exp: &ExperimentConfig, export: &mut Export, checks: &mut Vec<Check>) -> Result<Value> {
    let ens = exp.ensemble()?;
    let h = decompose_source(cfg, &ens)?;
    let grid = ens.grid();
    let cum = integrate_abs(&h, grid)?;
    let tol = cfg.decompose.tolerance();
    let mut reports: Vec<DecompositionReport> = Vec::new();
    for &r in &cfg.decompose.levels {
        reports.push(decompose_at_level(&cum, r, tol)?);
    }
    if reports.is_empty() {
        bail!("decompose needs at least one level");
    }
    let coverage_tol = if cfg.decompose.coverage_tolerance > 0.0 {
        cfg.decompose.coverage_tolerance
    } else {
        3.0 * grid.step()
    };
    let cov = coverage_check(&reports, exp.steps, coverage_tol)?;

    let mut seg = Table::new(&[
        "level",
        "path",
        "label",
        "left",
        "right",
        "t_left",
        "t_right",
        "increment",
    ]);
    let mut pi = Table::new(&["level", "path", "k", "index", "t"]);
    let mut consistent = true;
    let mut alternating = true;
    let mut tiled = true;
    for rep in &reports {
        let level = num(rep.level.unwrap_or(0.0));
        consistent &= version_consistency(&h, rep)?;
        for (p, dec) in rep.paths.iter().enumerate() {
            alternating &= dec.segments.windows(2).all(|w| w[0].label != w[1].label);
            tiled &= dec.segments.windows(2).all(|w| w[0].right == w[1].left)
                && dec.segments.first().is_none_or(|s| s.left == dec.start)
                && dec.segments.last().is_none_or(|s| s.right == dec.end);
            if p >= cfg.output.max_paths {
                continue;
            }
            for s in &dec.segments {
                seg.row(vec![
                    level.clone(),
                    p.to_string(),
                    label(s.label).into(),
                    s.left.to_string(),
                    s.right.to_string(),
                    num(grid.time(s.left)),
                    num(grid.time(s.right)),
                    num(s.increment),
                ]);
            }
            for (k, &i) in dec.pi.iter().enumerate() {
                pi.row(vec![
                    level.clone(),
                    p.to_string(),
                    k.to_string(),
                    i.to_string(),
                    num(grid.time(i)),
                ]);
            }
        }
    }
    export.csv("segments.csv", &seg)?;
    export.csv("pi.csv", &pi)?;
    let mut t = Table::new(&["path", "uncovered"]);
    for (p, r) in cov.residual.iter().enumerate().take(cfg.output.max_paths) {
        t.row(vec![p.to_string(), num(*r)]);
    }
    export.csv("coverage.csv", &t)?;

    checks.push(Check::new("tiling", tiled, "segments tile [start, end] on every path"));
    checks.push(Check::new(
        "alternation",
        alternating,
        "adjacent segments carry different labels",
    ));
    checks.push(Check::new(
        "labels_consistent",
        consistent,
        "labels agree with the increments of the integrand",
    ));
    checks.push(Check::new(
        "coverage",
        cov.holds,
        format!(
            "worst uncovered measure {:e}, tolerance {:e}",
            cov.worst_residual, cov.tolerance
        ),
    ));
    let first = &reports[0].paths[0];
    Ok(json!({
        "source": cfg.decompose.source,
        "levels": cfg.decompose.levels,
        "coverage_fraction": reports.iter().map(|r| r.coverage_fraction).collect::<Vec<_>>(),
        "worst_uncovered": cov.worst_residual,
        "path0_pi": first.pi.iter().map(|&i| grid.time(i)).collect::<Vec<_>>(),
        "path0_accumulation": first.accumulation.map(|i| grid.time(i)),
    }))
}

/// Density of a constant drift `eta` over `[0, 1]`.
pub fn constant_eta_density(ens: &PathEnsemble, eta: f64) -> Result<DensityReport> {
    let grid = ens.grid();
    let m = ens.dims();
    let drift = AdaptedProcess::from_fn(grid, Shape::Vector(m), ens.count(), grid.steps(), |_, _, v| v.fill(eta));
    Ok(density(&drift, ens, &GirsanovWindow::full(ens.count(), grid.steps()))?)
}

fn girsanov(cfg: &Config, exp: &ExperimentConfig, export: &mut Export, checks: &mut Vec<Check>) -> Result<Value> {
    let ens = exp.ensemble()?;
    let eta = cfg.girsanov.eta;
    let n = exp.steps;
    let sig = exp.slack.sigmas;
    let dens = constant_eta_density(&ens, eta)?;
    let mut shifted = Vec::with_capacity(ens.dims());
    for k in 0..ens.dims() {
        let b1: Vec<f64> = (0..ens.count()).map(|p| ens.value(p, n)[k]).collect();
        shifted.push(dens.weighted_mean(&b1));
    }
    checks.push(Check::new(
        "density_positive",
        dens.positive,
        "every density positive and finite",
    ));
    checks.push(Check::new(
        "density_mean_one",
        (dens.mean - 1.0).abs() <= sig * dens.stderr,
        format!("mean {} +- {:e}", num(dens.mean), dens.stderr),
    ));
    checks.push(Check::new(
        "shifted_mean",
        shifted.iter().all(|(mu, se)| (mu - eta).abs() <= sig * se),
        format!("weighted B(1) means {shifted:?}, drift {}", num(eta)),
    ));
    export.csv(
        "fixture_density.csv",
        &density_table(&dens, &GirsanovWindow::full(ens.count(), n), cfg.output.max_paths),
    )?;

    let stage = match cfg.girsanov.pair.as_slice() {
        [] => None,
        [a, b] => {
            let s = run_girsanov_pair(exp, *a, *b)?;
            checks.push(Check::new(
                "pair_density",
                s.density_ok,
                format!("mean {} +- {:e}", num(s.density.mean), s.density.stderr),
            ));
            checks.push(Check::new(
                "domination",
                s.domination.holds,
                format!(
                    "{} points, worst exceedance {:e}, slack {:e}",
                    s.domination.checked_points, s.domination.worst_exceedance, s.domination.slack
                ),
            ));
            stage_exports(&s, export, cfg.output.max_paths)?;
            Some(stage_json(&s, &[*a, *b]))
        }
        _ => bail!("girsanov.pair needs exactly two ladder indices"),
    };
    Ok(json!({
        "fixture": {
            "eta": eta,
            "density_mean": dens.mean,
            "density_stderr": dens.stderr,
            "weighted_b1": shifted.iter().map(|(m, s)| [*m, *s]).collect::<Vec<_>>(),
            "corrected_drift": dens.corrected_drift,
        },
        "pair": stage,
    }))
}
