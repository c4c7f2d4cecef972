//! Experiment orchestration: strict JSON configs, dispatch to the solvers,
//! checks, manifests and atomic artifact output.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, FieldSpec, GridConfig, OutputConfig, ProblemConfig, RunConfig, Slot, SpeciesConfig};
pub use output::{csv, fmt_f64, write_atomic};

use crate::dual::{duality_residual, solve_dual, verify_apriori, DualProblem, LINF_L2_CONSTANT};
use crate::error::{Error, Result};
use crate::kolmo::{cfl_grid, comparison_check, duality_estimate_ratio, solve_forward, Forcing, KolmogorovProblem};
use crate::mollify::{make_kernel, KernelSequence};
use crate::skt::{comparison_defects, converge_study, solve_system, ReactionFamily, SktSpec, Smoother};
use crate::torus::{encode_dump, integrate, norm, FieldDump, Grid, Norm, Trajectory};
use crate::weights::{a2_constant, domination_check, maximal_boundedness, maximal_function, Weight};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sign checks tolerate this much round-off below zero.
pub const SIGN_TOL: f64 = 1e-13;
pub const MASS_TOL: f64 = 1e-11;
pub const DUALITY_TOL: f64 = 1e-11;
pub const COMPARISON_TOL: f64 = 1e-10;
/// Slack on monotone-trend checks of convergence tables.
pub const TREND_SLACK: f64 = 0.1;
/// Final stability distance relative to the reference norm.
pub const STABILITY_FINAL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured value; `None` when not finite.
    pub value: Option<f64>,
    pub bound: Option<f64>,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= bound,
            value: finite(value),
            bound: Some(bound),
        }
    }

    fn flag(name: &str, passed: bool) -> Self {
        Check {
            name: name.into(),
            passed,
            value: None,
            bound: None,
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub grid: Grid,
    pub tau: f64,
    pub wall_time_s: f64,
    pub checks: Vec<Check>,
    /// Measured constants; non-finite values are reported as failing checks.
    pub constants: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
    pub passed: bool,
}

struct Outcome {
    grid: Grid,
    checks: Vec<Check>,
    constants: BTreeMap<String, f64>,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(grid: Grid) -> Self {
        Outcome {
            grid,
            checks: Vec::new(),
            constants: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    fn constant(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.constants.insert(name.into(), value);
        } else {
            self.checks.push(Check::flag(&format!("{name} finite"), false));
        }
    }

    fn artifact(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.artifacts.push((name.into(), bytes.into()));
    }
}

fn space_grid(config: &RunConfig) -> Result<Grid> {
    let g = &config.grid;
    Grid::new(g.dim, g.n, g.t_final, 1)
}

/// Final grid: explicit step count, or the CFL-tight one for `mu_sup`.
fn time_grid(config: &RunConfig, mu_sup: f64) -> Result<Grid> {
    let g = &config.grid;
    match g.steps {
        Some(steps) => Grid::new(g.dim, g.n, g.t_final, steps),
        None => cfl_grid(g.dim, g.n, g.t_final, mu_sup),
    }
}

fn series_csv(names: &[&str], grid: &Grid, trajs: &[&Trajectory]) -> String {
    let mut header = vec!["t"];
    header.extend_from_slice(names);
    let rows = (0..=grid.steps()).map(|k| {
        let mut row = vec![grid.time(k)];
        for t in trajs {
            let s = t.slice(k);
            row.extend([s.min(), s.max(), integrate(s), norm(s, Norm::L2)]);
        }
        row
    });
    csv(&header, rows)
}

fn stats_names(prefix: &str) -> Vec<String> {
    ["min", "max", "mass", "l2"].iter().map(|s| format!("{s}_{prefix}")).collect()
}

fn as_strs(names: &[String]) -> Vec<&str> {
    names.iter().map(String::as_str).collect()
}

/// Runs a validated config and writes its artifacts (when an output
/// directory is configured) plus `manifest.json`.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let outcome = execute(config)?;
    let mut outputs = Vec::new();
    let dir = config.output.as_ref().map(|o| o.dir.clone());
    if let Some(dir) = &dir {
        for (name, bytes) in &outcome.artifacts {
            outputs.push(write_atomic(dir, name, bytes)?);
        }
    }
    let passed = outcome.checks.iter().all(|c| c.passed);
    let mut manifest = RunManifest {
        tool: "cdl".into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        grid: outcome.grid,
        tau: outcome.grid.tau(),
        wall_time_s: 0.0,
        checks: outcome.checks,
        constants: outcome.constants,
        outputs,
        passed,
    };
    if let Some(dir) = &dir {
        manifest.outputs.push(dir.join("manifest.json"));
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        write_atomic(dir, "manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    } else {
        manifest.wall_time_s = start.elapsed().as_secs_f64();
    }
    Ok(manifest)
}

fn execute(config: &RunConfig) -> Result<Outcome> {
    let seed = config.seed;
    let dumps = config.output.as_ref().is_some_and(|o| o.dump_trajectories);
    let space = space_grid(config)?;
    match &config.problem {
        ProblemConfig::Kolmogorov {
            mu,
            z0,
            g,
            reaction,
            r_bar,
        } => {
            let mu = mu.field(space, seed, Slot::Mu)?;
            let grid = time_grid(config, mu.max())?;
            let mu = Trajectory::constant(grid, &mu.with_grid(grid)?);
            let z0 = z0.field(grid, seed, Slot::Z0)?;
            let forcing = match (g, reaction) {
                (_, Some(r)) => Forcing::Reaction(r.trajectory(grid, seed, Slot::Reaction)?),
                (Some(g), None) => Forcing::Source(g.trajectory(grid, seed, Slot::Source)?),
                (None, None) => Forcing::Source(Trajectory::zeros(grid)),
            };
            let p = KolmogorovProblem::new(mu, forcing, z0)?;
            let report = solve_forward(&p)?;
            let z = &report.trajectory;
            let mut out = Outcome::new(grid);
            out.constant("min_value", report.min_value);
            out.constant("cfl_used", report.cfl_used);
            let data_nonneg = p.z0().min() >= 0.0 && p.source().map_or(true, |g| g.min() >= 0.0);
            if data_nonneg {
                out.checks.push(Check::at_most("nonnegativity", -report.min_value, SIGN_TOL));
            }
            if let Some(g) = p.source() {
                if let Some(drift) = report.mass_drift {
                    let scale = norm(p.z0(), Norm::L1) + (0..grid.steps()).map(|k| grid.tau() * norm(g.slice(k), Norm::L1)).sum::<f64>();
                    out.checks.push(Check::at_most(
                        "mass_drift_relative",
                        drift / scale.max(f64::MIN_POSITIVE),
                        MASS_TOL,
                    ));
                }
                out.constant("duality_constant", duality_estimate_ratio(&p, z)?);
            }
            if let Some(r_bar) = r_bar {
                let cmp = comparison_check(&p, *r_bar)?;
                out.checks
                    .push(Check::at_most("comparison_defect_relative", cmp.relative_defect, COMPARISON_TOL));
            }
            out.artifact("series.csv", series_csv(&as_strs(&stats_names("z")), &grid, &[z]));
            if dumps {
                out.artifact("z.cdl", FieldDump::from_trajectory(z).encode());
            }
            Ok(out)
        }
        ProblemConfig::Dual { mu, s } => {
            let mu = mu.field(space, seed, Slot::Mu)?;
            let grid = time_grid(config, mu.max())?;
            let mu = Trajectory::constant(grid, &mu.with_grid(grid)?);
            let s = s.trajectory(grid, seed, Slot::DualSource)?;
            let p = DualProblem::new(mu, s)?;
            let phi = solve_dual(&p)?;
            let [first, second] = verify_apriori(&p, &phi)?;
            let mut out = Outcome::new(grid);
            out.checks.push(Check {
                name: "apriori_energy".into(),
                passed: first.passed,
                value: finite(first.ratio),
                bound: Some(1.0 + first.slack),
            });
            out.checks.push(Check {
                name: "apriori_linf_l2".into(),
                passed: second.passed,
                value: finite(second.ratio),
                bound: Some(1.0 + second.slack),
            });
            out.constant("apriori_energy_ratio", first.ratio);
            out.constant("linf_l2_constant", second.ratio * LINF_L2_CONSTANT);
            if p.s().min() >= 0.0 {
                out.checks.push(Check::at_most("dual_sign", phi.max(), SIGN_TOL));
            }
            out.artifact("series.csv", series_csv(&as_strs(&stats_names("phi")), &grid, &[&phi]));
            if dumps {
                out.artifact("phi.cdl", FieldDump::from_trajectory(&phi).encode());
            }
            Ok(out)
        }
        ProblemConfig::Duality { mu, z0, g, s } => {
            let mu = mu.field(space, seed, Slot::Mu)?;
            let grid = time_grid(config, mu.max())?;
            let mu = Trajectory::constant(grid, &mu.with_grid(grid)?);
            let z0 = z0.field(grid, seed, Slot::Z0)?;
            let g = match g {
                Some(g) => g.trajectory(grid, seed, Slot::Source)?,
                None => Trajectory::zeros(grid),
            };
            let s = s.trajectory(grid, seed, Slot::DualSource)?;
            let p = KolmogorovProblem::new(mu, Forcing::Source(g), z0)?;
            let z = solve_forward(&p)?.trajectory;
            let residual = duality_residual(&z, &p, &s)?;
            let mut out = Outcome::new(grid);
            out.checks.push(Check::at_most("duality_residual", residual, DUALITY_TOL));
            out.constant("duality_residual", residual);
            out.constant("duality_constant", duality_estimate_ratio(&p, &z)?);
            Ok(out)
        }
        ProblemConfig::Stability { mu, z0, g, eps } => {
            let mu = mu.field(space, seed, Slot::Mu)?;
            let grid = time_grid(config, mu.max())?;
            let mu = Trajectory::constant(grid, &mu.with_grid(grid)?);
            let z0 = z0.field(grid, seed, Slot::Z0)?;
            let g = match g {
                Some(g) => g.trajectory(grid, seed, Slot::Source)?,
                None => Trajectory::zeros(grid),
            };
            let table = crate::dual::stability_study(&mu, eps, &z0, &g)?;
            let mut out = Outcome::new(grid);
            out.checks
                .push(Check::flag("z_distance_non_increasing", table.non_increasing(TREND_SLACK)));
            out.checks
                .push(Check::at_most("z_distance_final_relative", table.final_relative(), STABILITY_FINAL));
            out.constant("reference_l2q", table.reference_norm);
            out.artifact("stability.csv", table.to_csv());
            Ok(out)
        }
        ProblemConfig::Skt { species, eps } => {
            let spec = build_skt(config, species, space)?;
            let kernels = species
                .iter()
                .map(|s| match s.eps.or(*eps) {
                    Some(e) => Ok(Smoother::Mollifier(make_kernel(spec.grid(), e)?)),
                    None => Ok(Smoother::Identity),
                })
                .collect::<Result<Vec<_>>>()?;
            let spec = spec.with_kernels(kernels)?;
            let grid = *spec.grid();
            let sol = solve_system(&spec)?;
            let mut out = Outcome::new(grid);
            if spec.init().iter().all(|f| f.min() >= 0.0) {
                out.checks.push(Check::at_most("nonnegativity", -sol.min_value(), SIGN_TOL));
            }
            for (i, d) in sol.diffusion_mass_drift.iter().enumerate() {
                out.checks
                    .push(Check::at_most(&format!("diffusion_mass_drift_u{}", i + 1), *d, MASS_TOL));
            }
            for (i, d) in comparison_defects(&spec)?.iter().enumerate() {
                out.checks
                    .push(Check::at_most(&format!("comparison_defect_u{}", i + 1), *d, COMPARISON_TOL));
            }
            for (i, n) in sol.l2q_norms().iter().enumerate() {
                out.constant(&format!("l2q_u{}", i + 1), *n);
            }
            let names: Vec<String> = (1..=spec.species()).flat_map(|i| stats_names(&format!("u{i}"))).collect();
            let trajs: Vec<&Trajectory> = sol.species.iter().collect();
            out.artifact("series.csv", series_csv(&as_strs(&names), &grid, &trajs));
            if dumps {
                for (i, u) in sol.species.iter().enumerate() {
                    out.artifact(&format!("u{}.cdl", i + 1), FieldDump::from_trajectory(u).encode());
                }
            }
            Ok(out)
        }
        ProblemConfig::Converge { species, eps } => {
            let spec = build_skt(config, species, space)?;
            let table = converge_study(&spec, eps)?;
            let mut out = Outcome::new(*spec.grid());
            out.checks
                .push(Check::flag("distances_non_increasing", table.non_increasing(TREND_SLACK)));
            for (i, n) in table.reference_norms.iter().enumerate() {
                out.constant(&format!("reference_l2q_u{}", i + 1), *n);
            }
            out.artifact("converge.csv", table.to_csv());
            Ok(out)
        }
        ProblemConfig::Weights {
            weight,
            field,
            eps,
            trials,
        } => {
            let w = Weight::new(weight.field(space, seed, Slot::Weight)?)?;
            let mut out = Outcome::new(space);
            out.constant("a2_constant", a2_constant(&w));
            out.constant("maximal_ratio", maximal_boundedness(&w, *trials, seed).ratio);
            if let Some(f) = field {
                let f = f.field(space, seed, Slot::Probe)?;
                let mf = maximal_function(&f);
                let dominates = mf.values().iter().zip(f.values()).all(|(m, v)| *m >= v.abs());
                out.checks.push(Check::flag("maximal_dominates", dominates));
                if !eps.is_empty() {
                    let ks = KernelSequence::from_eps(&space, eps)?;
                    out.constant("domination_constant", domination_check(&f, &ks)?.ratio);
                }
                out.artifact("maximal.cdl", encode_dump(&[f, mf]));
            }
            Ok(out)
        }
    }
}

fn build_skt(config: &RunConfig, species: &[SpeciesConfig], space: Grid) -> Result<SktSpec> {
    let count = species.len();
    let coeffs: Vec<_> = species.iter().map(|s| s.coeff.clone()).collect();
    let reactions: Vec<_> = species
        .iter()
        .map(|s| s.reaction.clone().unwrap_or_else(|| ReactionFamily::zero(count)))
        .collect();
    // the CFL bound reads the clamp ceilings only
    let probe = SktSpec::new(
        space,
        coeffs.clone(),
        reactions.clone(),
        vec![Smoother::Identity; count],
        species
            .iter()
            .enumerate()
            .map(|(i, s)| s.init.field(space, config.seed, Slot::Species(i)))
            .collect::<Result<_>>()?,
    )?;
    let grid = time_grid(config, probe.hi_max())?;
    let init = probe.init().iter().map(|f| f.with_grid(grid)).collect::<Result<_>>()?;
    SktSpec::new(grid, coeffs, reactions, vec![Smoother::Identity; count], init)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub manifest: Option<RunManifest>,
    pub error: Option<String>,
}

fn axis_slot<'a>(root: &'a mut serde_json::Value, axis: &str) -> Option<&'a mut serde_json::Value> {
    axis.split('.').try_fold(root, |v, seg| match v {
        serde_json::Value::Object(m) => m.get_mut(seg),
        serde_json::Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
        _ => None,
    })
}

/// Runs `config` once per value of the numeric field at dotted path `axis`
/// (array entries by index, e.g. `problem.eps.0`). Points run concurrently
/// and come back in input order; a failing point records its error and the
/// sweep continues. Each point writes to `<dir>/point_<i>`.
pub fn sweep(config: &RunConfig, axis: &str, values: &[f64]) -> Result<Vec<SweepPoint>> {
    let mut base = serde_json::to_value(config)?;
    let integral = match axis_slot(&mut base, axis) {
        Some(serde_json::Value::Number(n)) => !n.is_f64(),
        _ => {
            return Err(Error::Config {
                path: axis.into(),
                message: "sweep axis must name a numeric config entry".into(),
            })
        }
    };
    let points = values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let attempt = || -> Result<RunManifest> {
                let mut v = base.clone();
                let slot = axis_slot(&mut v, axis).expect("axis checked above");
                *slot = if integral && value.fract() == 0.0 && value >= 0.0 {
                    serde_json::Value::from(value as u64)
                } else {
                    serde_json::Value::from(value)
                };
                let mut point = config::from_value(v)?;
                if let Some(out) = &mut point.output {
                    out.dir = out.dir.join(format!("point_{i:03}"));
                }
                run(&point)
            };
            match attempt() {
                Ok(m) => SweepPoint {
                    value,
                    manifest: Some(m),
                    error: None,
                },
                Err(e) => SweepPoint {
                    value,
                    manifest: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(points)
}

/// Process exit status for a finished run: 0 pass, 1 check failure.
pub fn exit_code(manifest: &RunManifest) -> i32 {
    if manifest.passed {
        0
    } else {
        1
    }
}

/// Process exit status for an error: 3 numerical abort, 2 otherwise.
pub fn error_exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
