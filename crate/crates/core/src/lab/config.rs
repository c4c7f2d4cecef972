use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample;
use crate::skt::{CoeffFamily, ReactionFamily};
use crate::torus::{decode_dump, Field, Grid, Trajectory};
use crate::weights::Weight;

/// Top-level run description. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    /// Global seed; every random field without its own seed draws from the
    /// stream of its slot.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    pub problem: ProblemConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub n: usize,
    pub t_final: f64,
    /// Number of time steps. Defaults to the fewest steps the CFL bound
    /// admits for the problem's largest diffusion coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write binary dumps of full trajectories.
    #[serde(default)]
    pub dump_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Forward problem with either a source `g` (default 0) or a reaction
    /// rate; `r_bar` enables the comparison check in reaction mode.
    Kolmogorov {
        mu: FieldSpec,
        z0: FieldSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<FieldSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reaction: Option<FieldSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_bar: Option<f64>,
    },
    Dual {
        mu: FieldSpec,
        s: FieldSpec,
    },
    Duality {
        mu: FieldSpec,
        z0: FieldSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<FieldSpec>,
        s: FieldSpec,
    },
    Stability {
        mu: FieldSpec,
        z0: FieldSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<FieldSpec>,
        eps: Vec<f64>,
    },
    /// Single SKT run; local system when `eps` is absent.
    Skt {
        species: Vec<SpeciesConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
    Converge {
        species: Vec<SpeciesConfig>,
        eps: Vec<f64>,
    },
    Weights {
        weight: FieldSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field: Option<FieldSpec>,
        #[serde(default)]
        eps: Vec<f64>,
        #[serde(default = "default_trials")]
        trials: usize,
    },
}

fn default_trials() -> usize {
    16
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Kolmogorov { .. } => "kolmogorov",
            ProblemConfig::Dual { .. } => "dual",
            ProblemConfig::Duality { .. } => "duality",
            ProblemConfig::Stability { .. } => "stability",
            ProblemConfig::Skt { .. } => "skt",
            ProblemConfig::Converge { .. } => "converge",
            ProblemConfig::Weights { .. } => "weights",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub coeff: CoeffFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction: Option<ReactionFamily>,
    pub init: FieldSpec,
    /// Kernel width for this species in `skt` runs; overrides `problem.eps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

/// Named analytic and random field families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `offset + amp cos(2 pi k.x + phase)`.
    FourierMode {
        k: Vec<i64>,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Equal bands along the first axis.
    Piecewise {
        levels: Vec<f64>,
    },
    /// I.i.d. uniform per cell.
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        lo: f64,
        hi: f64,
    },
    /// I.i.d. uniform levels on a `blocks^N` partition.
    RandomBlocks {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        blocks: usize,
        lo: f64,
        hi: f64,
    },
    /// Random trigonometric polynomial. `floor` shifts it to that minimum;
    /// `time_modulated` makes each term oscillate in time (trajectories only).
    RandomSmooth {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        modes: usize,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
        #[serde(default)]
        time_modulated: bool,
    },
    /// `(|x| + h)^{-alpha}`.
    Power {
        alpha: f64,
    },
    /// Slice of a binary dump. For trajectories with no `slice`, a dump with
    /// one slice per time level is used as-is.
    Dump {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slice: Option<usize>,
    },
}

fn one() -> f64 {
    1.0
}

/// Random-stream slot of each field role, so that adding a field to a
/// config never changes the draws of the others.
#[derive(Debug, Clone, Copy)]
pub enum Slot {
    Mu,
    Z0,
    Source,
    Reaction,
    DualSource,
    Weight,
    Probe,
    Species(usize),
}

impl Slot {
    fn stream(self) -> u64 {
        match self {
            Slot::Mu => 1,
            Slot::Z0 => 2,
            Slot::Source => 3,
            Slot::Reaction => 4,
            Slot::DualSource => 5,
            Slot::Weight => 6,
            Slot::Probe => 7,
            Slot::Species(i) => 100 + i as u64,
        }
    }
}

impl FieldSpec {
    fn rng(&self, global: u64, slot: Slot) -> rand_chacha::ChaCha8Rng {
        let own = match self {
            FieldSpec::Random { seed, .. } | FieldSpec::RandomBlocks { seed, .. } | FieldSpec::RandomSmooth { seed, .. } => *seed,
            _ => None,
        };
        match own {
            Some(s) => sample::rng(s, 0),
            None => sample::rng(global, slot.stream()),
        }
    }

    pub fn field(&self, grid: Grid, seed: u64, slot: Slot) -> Result<Field> {
        let mut rng = self.rng(seed, slot);
        Ok(match self {
            FieldSpec::Constant { value } => Field::constant(grid, *value),
            FieldSpec::FourierMode { k, amp, offset, phase } => {
                let (k0, k1) = (k[0] as f64, k.get(1).copied().unwrap_or(0) as f64);
                Field::from_fn(grid, |x| offset + amp * (2.0 * PI * (k0 * x[0] + k1 * x[1]) + phase).cos())
            }
            FieldSpec::Piecewise { levels } => {
                let m = levels.len();
                Field::from_fn(grid, |x| levels[((x[0] * m as f64) as usize).min(m - 1)])
            }
            FieldSpec::Random { lo, hi, .. } => sample::uniform_cells(grid, &mut rng, *lo, *hi),
            FieldSpec::RandomBlocks { blocks, lo, hi, .. } => sample::uniform_blocks(grid, &mut rng, *blocks, *lo, *hi),
            FieldSpec::RandomSmooth {
                modes,
                amp,
                offset,
                floor,
                time_modulated,
                ..
            } => {
                if *time_modulated {
                    return Err(Error::problem("time_modulated fields can only be used as trajectories"));
                }
                match floor {
                    Some(f) => sample::smooth_positive(grid, &mut rng, *modes, *amp, *f),
                    None => sample::smooth(grid, &mut rng, *modes, *amp, *offset),
                }
            }
            FieldSpec::Power { alpha } => Weight::power(grid, *alpha).values().clone(),
            FieldSpec::Dump { path, slice } => {
                let dump = decode_dump(&std::fs::read(path)?)?;
                dump.field(grid, slice.unwrap_or(0))?
            }
        })
    }

    pub fn trajectory(&self, grid: Grid, seed: u64, slot: Slot) -> Result<Trajectory> {
        match self {
            FieldSpec::RandomSmooth {
                modes,
                amp,
                offset,
                time_modulated: true,
                ..
            } => Ok(sample::smooth_trajectory(grid, &mut self.rng(seed, slot), *modes, *amp, *offset)),
            FieldSpec::Dump { path, slice: None } => {
                let dump = decode_dump(&std::fs::read(path)?)?;
                if dump.slices.len() == grid.steps() + 1 {
                    let slices = (0..=grid.steps()).map(|k| dump.field(grid, k)).collect::<Result<_>>()?;
                    Trajectory::new(grid, slices)
                } else {
                    Ok(Trajectory::constant(grid, &dump.field(grid, 0)?))
                }
            }
            _ => Ok(Trajectory::constant(grid, &self.field(grid, seed, slot)?)),
        }
    }

    fn validate(&self, dim: usize, path: &str) -> Result<()> {
        let bad = |message: String| {
            Err(Error::Config {
                path: path.to_string(),
                message,
            })
        };
        match self {
            FieldSpec::FourierMode { k, .. } if k.len() != dim => bad(format!("wavevector needs {dim} component(s), got {}", k.len())),
            FieldSpec::Piecewise { levels } if levels.is_empty() => bad("levels must not be empty".into()),
            FieldSpec::Random { lo, hi, .. } | FieldSpec::RandomBlocks { lo, hi, .. } if !(lo <= hi) => {
                bad(format!("needs lo <= hi, got [{lo}, {hi}]"))
            }
            FieldSpec::RandomBlocks { blocks: 0, .. } => bad("blocks must be >= 1".into()),
            FieldSpec::RandomSmooth {
                floor: Some(_),
                time_modulated: true,
                ..
            } => bad("floor and time_modulated are exclusive".into()),
            _ => Ok(()),
        }
    }
}

/// Parses and validates a config. Unknown keys fail with the offending path
/// and the closest valid key name.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = with_suggestion(&e.inner().to_string());
        Error::Config { path, message }
    })?;
    validate(&config)?;
    Ok(config)
}

pub(crate) fn from_value(value: serde_json::Value) -> Result<RunConfig> {
    parse_config(&value.to_string())
}

/// Appends "did you mean" to serde's unknown-field messages.
fn with_suggestion(message: &str) -> String {
    let Some(rest) = message.strip_prefix("unknown field `") else {
        return message.to_string();
    };
    let Some((unknown, tail)) = rest.split_once('`') else {
        return message.to_string();
    };
    let expected: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
    let best = expected
        .iter()
        .map(|cand| (strsim::jaro_winkler(unknown, cand), *cand))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((score, cand)) if score >= 0.6 => format!("{message}; did you mean `{cand}`?"),
        _ => message.to_string(),
    }
}

fn validate(config: &RunConfig) -> Result<()> {
    let g = &config.grid;
    let grid = Grid::new(g.dim, g.n, g.t_final, g.steps.unwrap_or(1)).map_err(|e| Error::Config {
        path: "grid".into(),
        message: e.to_string(),
    })?;
    if g.steps == Some(0) {
        return Err(Error::Config {
            path: "grid.steps".into(),
            message: "needs at least one step".into(),
        });
    }
    let dim = g.dim;
    let check_eps = |eps: &[f64], path: &str, decreasing: bool| -> Result<()> {
        let min = 2.0 * grid.h();
        for (i, &e) in eps.iter().enumerate() {
            let message = if !(e >= min) {
                Error::UnderResolvedKernel { eps: e, min }.to_string()
            } else if !(e <= 0.5) {
                Error::KernelTooWide { eps: e, max: 0.5 }.to_string()
            } else {
                continue;
            };
            return Err(Error::Config {
                path: format!("{path}[{i}]"),
                message,
            });
        }
        if decreasing && eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config {
                path: path.to_string(),
                message: "kernel widths must be strictly decreasing".into(),
            });
        }
        Ok(())
    };
    let fields: Vec<(&FieldSpec, String)> = match &config.problem {
        ProblemConfig::Kolmogorov { mu, z0, g, reaction, .. } => {
            if g.is_some() && reaction.is_some() {
                return Err(Error::Config {
                    path: "problem".into(),
                    message: "`g` and `reaction` are exclusive".into(),
                });
            }
            let mut v = vec![(mu, "problem.mu".to_string()), (z0, "problem.z0".to_string())];
            v.extend(g.iter().map(|f| (f, "problem.g".to_string())));
            v.extend(reaction.iter().map(|f| (f, "problem.reaction".to_string())));
            v
        }
        ProblemConfig::Dual { mu, s } => vec![(mu, "problem.mu".into()), (s, "problem.s".into())],
        ProblemConfig::Duality { mu, z0, g, s } => {
            let mut v = vec![(mu, "problem.mu".into()), (z0, "problem.z0".into()), (s, "problem.s".into())];
            v.extend(g.iter().map(|f| (f, "problem.g".to_string())));
            v
        }
        ProblemConfig::Stability { mu, z0, g, eps } => {
            if eps.is_empty() {
                return Err(Error::Config {
                    path: "problem.eps".into(),
                    message: "needs at least one width".into(),
                });
            }
            check_eps(eps, "problem.eps", true)?;
            let mut v = vec![(mu, "problem.mu".into()), (z0, "problem.z0".into())];
            v.extend(g.iter().map(|f| (f, "problem.g".to_string())));
            v
        }
        ProblemConfig::Skt { species, eps } => {
            if let Some(e) = eps {
                check_eps(&[*e], "problem.eps", false)?;
            }
            for (i, s) in species.iter().enumerate() {
                if let Some(e) = s.eps {
                    check_eps(&[e], &format!("problem.species[{i}].eps"), false)?;
                }
            }
            species_fields(species)?
        }
        ProblemConfig::Converge { species, eps } => {
            if eps.is_empty() {
                return Err(Error::Config {
                    path: "problem.eps".into(),
                    message: "needs at least one width".into(),
                });
            }
            check_eps(eps, "problem.eps", true)?;
            if let Some(i) = species.iter().position(|s| s.eps.is_some()) {
                return Err(Error::Config {
                    path: format!("problem.species[{i}].eps"),
                    message: "convergence studies take their widths from `problem.eps`".into(),
                });
            }
            species_fields(species)?
        }
        ProblemConfig::Weights {
            weight,
            field,
            eps,
            trials,
        } => {
            check_eps(eps, "problem.eps", true)?;
            if *trials == 0 {
                return Err(Error::Config {
                    path: "problem.trials".into(),
                    message: "needs at least one trial".into(),
                });
            }
            let mut v = vec![(weight, "problem.weight".to_string())];
            v.extend(field.iter().map(|f| (f, "problem.field".to_string())));
            v
        }
    };
    for (f, path) in fields {
        f.validate(dim, &path)?;
    }
    Ok(())
}

fn species_fields(species: &[SpeciesConfig]) -> Result<Vec<(&FieldSpec, String)>> {
    if species.is_empty() {
        return Err(Error::Config {
            path: "problem.species".into(),
            message: "needs at least one species".into(),
        });
    }
    Ok(species
        .iter()
        .enumerate()
        .map(|(i, s)| (&s.init, format!("problem.species[{i}].init")))
        .collect())
}
