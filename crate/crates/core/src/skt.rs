//! Triangular non-local SKT systems
//!
//! ```text
//! du_i/dt - Lap[a_i(u_{i+1} * rho_{i+1}, ..., u_I * rho_I) u_i] = r_i(u_1 * rho_1, ..., u_I * rho_I) u_i
//! ```
//!
//! Species `i` reads only species `i+1..I` through its diffusion coefficient
//! (strict triangularity), so the last species solves a scalar problem with
//! a coefficient that does not depend on the state. Replacing every kernel by
//! the identity gives the local (limit) system.
//!
//! Each step freezes coefficients and rates at the current state, applies the
//! M-matrix diffusion update of [`crate::kolmo`] and then the exact
//! exponential reaction update `u <- u exp(tau r)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kolmo::{cfl_timestep, check_cfl, diffusion_update, guard};
use crate::mollify::{convolve_unchecked, dirac_defect, make_kernel, Kernel};
use crate::torus::{integrate, spacetime_norm, Field, Grid, SpaceTimeNorm, Trajectory};

/// Bounded, continuous diffusion coefficient of one species. `couplings[j]`
/// multiplies the smoothed density of species `i + 1 + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoeffFamily {
    Constant {
        value: f64,
    },
    /// `clamp(base + sum_j c_j v_j, lo, hi)`. With `arg_smoothing = sigma > 0`
    /// the clamp is replaced by its convolution with a uniform window of
    /// half-width `sigma` in the argument (a C^1 function, equal to the
    /// affine map at distance >= sigma from the kinks).
    ClampedAffine {
        base: f64,
        couplings: Vec<f64>,
        lo: f64,
        #[serde(with = "ceiling")]
        hi: f64,
        #[serde(default)]
        arg_smoothing: f64,
    },
    /// `clamp(base + s / (1 + |s|), lo, hi)` with `s = sum_j c_j v_j`.
    RationalSaturating {
        base: f64,
        couplings: Vec<f64>,
        lo: f64,
        #[serde(with = "ceiling")]
        hi: f64,
    },
}

/// A missing upper clamp (`hi = +inf`) round-trips through JSON as `null`.
mod ceiling {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl CoeffFamily {
    pub fn couplings(&self) -> &[f64] {
        match self {
            CoeffFamily::Constant { .. } => &[],
            CoeffFamily::ClampedAffine { couplings, .. } | CoeffFamily::RationalSaturating { couplings, .. } => couplings,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            CoeffFamily::Constant { value } => (value, value),
            CoeffFamily::ClampedAffine { lo, hi, .. } | CoeffFamily::RationalSaturating { lo, hi, .. } => (lo, hi),
        }
    }

    /// Evaluates the family at the smoothed densities of the species it reads.
    pub fn eval(&self, args: &[f64]) -> f64 {
        let linear = |c: &[f64]| c.iter().zip(args).map(|(c, v)| c * v).sum::<f64>();
        match self {
            CoeffFamily::Constant { value } => *value,
            CoeffFamily::ClampedAffine {
                base,
                couplings,
                lo,
                hi,
                arg_smoothing,
            } => {
                let x = base + linear(couplings);
                if *arg_smoothing > 0.0 {
                    smooth_clamp(x, *lo, *hi, *arg_smoothing)
                } else {
                    x.clamp(*lo, *hi)
                }
            }
            CoeffFamily::RationalSaturating { base, couplings, lo, hi } => {
                let s = linear(couplings);
                (base + s / (1.0 + s.abs())).clamp(*lo, *hi)
            }
        }
    }
}

/// `max(x, 0)` convolved with the uniform density on `[-sigma, sigma]`.
fn smooth_ramp(x: f64, sigma: f64) -> f64 {
    if x <= -sigma {
        0.0
    } else if x >= sigma {
        x
    } else {
        (x + sigma) * (x + sigma) / (4.0 * sigma)
    }
}

pub(crate) fn smooth_clamp(x: f64, lo: f64, hi: f64, sigma: f64) -> f64 {
    if x - lo >= sigma && hi - x >= sigma {
        return x;
    }
    let upper = if hi.is_finite() { smooth_ramp(x - hi, sigma) } else { 0.0 };
    (lo + smooth_ramp(x - lo, sigma) - upper).clamp(lo, hi)
}

/// Reaction rate of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionFamily {
    /// `growth - sum_j competition[j] v_j`, competition `>= 0`.
    LotkaVolterra { growth: f64, competition: Vec<f64> },
}

impl ReactionFamily {
    pub fn zero(species: usize) -> Self {
        ReactionFamily::LotkaVolterra {
            growth: 0.0,
            competition: vec![0.0; species],
        }
    }

    /// Upper bound of the rate on non-negative arguments.
    pub fn growth(&self) -> f64 {
        match self {
            ReactionFamily::LotkaVolterra { growth, .. } => *growth,
        }
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        match self {
            ReactionFamily::LotkaVolterra { growth, competition } => {
                let mut r = *growth;
                for (s, v) in competition.iter().zip(args) {
                    if *s != 0.0 {
                        r -= s * v;
                    }
                }
                r
            }
        }
    }
}

/// Spatial smoothing applied to one species before it enters coefficients
/// and reactions.
#[derive(Debug, Clone)]
pub enum Smoother {
    Identity,
    Mollifier(Kernel),
}

impl Smoother {
    pub fn apply(&self, f: &Field) -> Field {
        match self {
            Smoother::Identity => f.clone(),
            Smoother::Mollifier(k) => convolve_unchecked(f, k),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SktSpec {
    grid: Grid,
    coeffs: Vec<CoeffFamily>,
    reactions: Vec<ReactionFamily>,
    kernels: Vec<Smoother>,
    init: Vec<Field>,
}

impl SktSpec {
    pub fn new(
        grid: Grid,
        coeffs: Vec<CoeffFamily>,
        reactions: Vec<ReactionFamily>,
        kernels: Vec<Smoother>,
        init: Vec<Field>,
    ) -> Result<Self> {
        let species = coeffs.len();
        if species == 0 {
            return Err(Error::problem("at least one species is required"));
        }
        if reactions.len() != species || kernels.len() != species || init.len() != species {
            return Err(Error::problem(format!(
                "species count mismatch: {} coeffs, {} reactions, {} kernels, {} initial fields",
                species,
                reactions.len(),
                kernels.len(),
                init.len()
            )));
        }
        for (i, c) in coeffs.iter().enumerate() {
            let expected = species - i - 1;
            if !matches!(c, CoeffFamily::Constant { .. }) && c.couplings().len() != expected {
                return Err(Error::problem(format!(
                    "coefficient of species {} must couple to exactly the {expected} species after it, got {}",
                    i + 1,
                    c.couplings().len()
                )));
            }
            let (lo, hi) = c.bounds();
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::problem(format!(
                    "coefficient of species {} needs 0 < lo <= hi, got [{lo}, {hi}]",
                    i + 1
                )));
            }
            if hi.is_infinite() && !(species == 2 && i == 0) {
                return Err(Error::problem(
                    "a coefficient without upper clamp is only allowed for species 1 of a two-species system",
                ));
            }
            if let CoeffFamily::ClampedAffine { arg_smoothing, .. } = c {
                if !(*arg_smoothing >= 0.0) {
                    return Err(Error::problem("arg_smoothing must be >= 0"));
                }
            }
        }
        for (i, r) in reactions.iter().enumerate() {
            let ReactionFamily::LotkaVolterra { competition, .. } = r;
            if competition.len() != species {
                return Err(Error::problem(format!(
                    "reaction of species {} needs {species} competition entries",
                    i + 1
                )));
            }
            if competition.iter().any(|&s| !(s >= 0.0)) {
                return Err(Error::problem("competition coefficients must be >= 0"));
            }
        }
        for (i, f) in init.iter().enumerate() {
            if !f.grid().same_space(&grid) {
                return Err(Error::GridMismatch("initial density on a different grid"));
            }
            if f.min() < 0.0 {
                return Err(Error::problem(format!("initial density of species {} is negative", i + 1)));
            }
        }
        for k in &kernels {
            if let Smoother::Mollifier(k) = k {
                if !k.grid().same_space(&grid) {
                    return Err(Error::GridMismatch("kernel on a different grid"));
                }
            }
        }
        Ok(SktSpec {
            grid,
            coeffs,
            reactions,
            kernels,
            init,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn species(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[CoeffFamily] {
        &self.coeffs
    }

    pub fn reactions(&self) -> &[ReactionFamily] {
        &self.reactions
    }

    pub fn kernels(&self) -> &[Smoother] {
        &self.kernels
    }

    pub fn init(&self) -> &[Field] {
        &self.init
    }

    /// Largest finite clamp ceiling, used for the shared CFL bound.
    pub fn hi_max(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.bounds())
            .map(|(lo, hi)| if hi.is_finite() { hi } else { lo })
            .fold(0.0, f64::max)
    }

    fn has_unbounded(&self) -> bool {
        self.coeffs.iter().any(|c| c.bounds().1.is_infinite())
    }

    pub fn with_kernels(&self, kernels: Vec<Smoother>) -> Result<SktSpec> {
        SktSpec::new(self.grid, self.coeffs.clone(), self.reactions.clone(), kernels, self.init.clone())
    }

    /// Same system with every kernel replaced by the identity.
    pub fn local(&self) -> SktSpec {
        self.with_kernels(vec![Smoother::Identity; self.species()])
            .expect("identity kernels are always valid")
    }

    pub fn with_coeffs(&self, coeffs: Vec<CoeffFamily>) -> Result<SktSpec> {
        SktSpec::new(self.grid, coeffs, self.reactions.clone(), self.kernels.clone(), self.init.clone())
    }

    pub fn with_grid_and_init(&self, grid: Grid, init: Vec<Field>, kernels: Vec<Smoother>) -> Result<SktSpec> {
        SktSpec::new(grid, self.coeffs.clone(), self.reactions.clone(), kernels, init)
    }

    fn smoothed(&self, state: &[Field]) -> Vec<Field> {
        state.iter().zip(&self.kernels).map(|(u, k)| k.apply(u)).collect()
    }

    fn coeff_from_smoothed(&self, i: usize, smoothed: &[Field]) -> Field {
        let family = &self.coeffs[i];
        let args = &smoothed[i + 1..];
        let mut buf = vec![0.0; args.len()];
        let values = (0..self.grid.len())
            .map(|j| {
                for (b, a) in buf.iter_mut().zip(args) {
                    *b = a.values()[j];
                }
                family.eval(&buf)
            })
            .collect();
        Field::from_raw(self.grid, values)
    }

    fn rate_from_smoothed(&self, i: usize, smoothed: &[Field]) -> Vec<f64> {
        let family = &self.reactions[i];
        let mut buf = vec![0.0; smoothed.len()];
        (0..self.grid.len())
            .map(|j| {
                for (b, a) in buf.iter_mut().zip(smoothed) {
                    *b = a.values()[j];
                }
                family.eval(&buf)
            })
            .collect()
    }

    fn check_cfl(&self) -> Result<()> {
        check_cfl(&self.grid, self.hi_max())
    }
}

/// Diffusion coefficient `a_i` (0-based `i`) evaluated on the current state.
pub fn evaluate_coeff(spec: &SktSpec, i: usize, state: &[Field]) -> Result<Field> {
    if i >= spec.species() || state.len() != spec.species() {
        return Err(Error::problem("species index or state size out of range"));
    }
    Ok(spec.coeff_from_smoothed(i, &spec.smoothed(state)))
}

struct StepOutput {
    state: Vec<Field>,
    coeffs: Vec<Field>,
    /// `int (diffused u_i) - int u_i` per species.
    diffusion_mass_change: Vec<f64>,
}

fn advance(spec: &SktSpec, state: &[Field], step: usize) -> Result<StepOutput> {
    let grid = spec.grid;
    let smoothed = spec.smoothed(state);
    let coeffs: Vec<Field> = (0..spec.species()).map(|i| spec.coeff_from_smoothed(i, &smoothed)).collect();
    if spec.has_unbounded() {
        let sup = coeffs.iter().map(Field::max).fold(0.0, f64::max);
        let bound = cfl_timestep(&grid, sup);
        if grid.tau() > bound {
            return Err(Error::CflViolation { tau: grid.tau(), bound });
        }
    }
    let tau = grid.tau();
    let mut next = Vec::with_capacity(spec.species());
    let mut diffusion_mass_change = Vec::with_capacity(spec.species());
    for (i, u) in state.iter().enumerate() {
        let mut v = diffusion_update(&grid, u.values(), coeffs[i].values());
        diffusion_mass_change.push(grid.cell_volume() * (v.iter().sum::<f64>() - u.values().iter().sum::<f64>()));
        let rate = spec.rate_from_smoothed(i, &smoothed);
        for (x, r) in v.iter_mut().zip(&rate) {
            *x *= (tau * r).exp();
        }
        guard(step + 1, &v)?;
        next.push(Field::from_raw(grid, v));
    }
    Ok(StepOutput {
        state: next,
        coeffs,
        diffusion_mass_change,
    })
}

/// One time step from level `step` to `step + 1`.
pub fn step(spec: &SktSpec, state: &[Field], step: usize) -> Result<Vec<Field>> {
    spec.check_cfl()?;
    if state.len() != spec.species() {
        return Err(Error::problem("state size does not match the species count"));
    }
    Ok(advance(spec, state, step)?.state)
}

#[derive(Debug, Clone)]
pub struct SktSolution {
    pub species: Vec<Trajectory>,
    /// `max_k |sum_{j<k} (mass change of diffusion substep j)|`, relative to
    /// the initial mass of each species.
    pub diffusion_mass_drift: Vec<f64>,
}

impl SktSolution {
    pub fn min_value(&self) -> f64 {
        self.species.iter().map(Trajectory::min).fold(f64::INFINITY, f64::min)
    }

    pub fn l2q_norms(&self) -> Vec<f64> {
        self.species.iter().map(|t| spacetime_norm(t, SpaceTimeNorm::L2Q)).collect()
    }
}

pub fn solve_system(spec: &SktSpec) -> Result<SktSolution> {
    spec.check_cfl()?;
    let grid = spec.grid;
    let species = spec.species();
    let mut slices: Vec<Vec<Field>> = spec.init.iter().map(|f| vec![f.clone()]).collect();
    let mut net = vec![0.0f64; species];
    let mut drift = vec![0.0f64; species];
    let mut state = spec.init.clone();
    for k in 0..grid.steps() {
        let out = advance(spec, &state, k)?;
        for ((n, d), c) in net.iter_mut().zip(drift.iter_mut()).zip(&out.diffusion_mass_change) {
            *n += c;
            *d = d.max(n.abs());
        }
        state = out.state;
        for (s, u) in slices.iter_mut().zip(&state) {
            s.push(u.clone());
        }
    }
    let diffusion_mass_drift = drift
        .iter()
        .zip(&spec.init)
        .map(|(d, u0)| {
            let m = integrate(u0);
            if m > 0.0 {
                d / m
            } else {
                *d
            }
        })
        .collect();
    Ok(SktSolution {
        species: slices.into_iter().map(|s| Trajectory::new(grid, s)).collect::<Result<_>>()?,
        diffusion_mass_drift,
    })
}

/// Marches the system alongside the reaction-free problems
/// `dv_i/dt - Lap[a_i v_i] = 0` (same frozen coefficients, same initial
/// data) and returns, per species, `max (u_i - v_i e^{growth_i t})` relative
/// to `sup v_i`.
pub fn comparison_defects(spec: &SktSpec) -> Result<Vec<f64>> {
    spec.check_cfl()?;
    let grid = spec.grid;
    let mut state = spec.init.clone();
    let mut free: Vec<Vec<f64>> = spec.init.iter().map(Field::to_vec).collect();
    let species = spec.species();
    let mut defect = vec![f64::NEG_INFINITY; species];
    let mut scale = vec![0.0f64; species];
    for k in 0..grid.steps() {
        let out = advance(spec, &state, k)?;
        let t = grid.time(k + 1);
        for i in 0..species {
            free[i] = diffusion_update(&grid, &free[i], out.coeffs[i].values());
            let growth = (spec.reactions[i].growth() * t).exp();
            for (u, v) in out.state[i].values().iter().zip(&free[i]) {
                defect[i] = defect[i].max(u - v * growth);
                scale[i] = scale[i].max(*v);
            }
        }
        state = out.state;
    }
    Ok(defect
        .into_iter()
        .zip(scale)
        .map(|(d, s)| if s > 0.0 { d / s } else { d })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub defect: f64,
    /// `||u_i^eps - u_i^0||_{L2Q}` per species.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `||u_i^0||_{L2Q}` of the local reference run.
    pub reference_norms: Vec<f64>,
}

impl ConvergenceTable {
    pub fn species(&self) -> usize {
        self.reference_norms.len()
    }

    /// Every per-species column is non-increasing down the rows within `slack`.
    pub fn non_increasing(&self, slack: f64) -> bool {
        (0..self.species()).all(|i| self.rows.windows(2).all(|w| w[1].distances[i] <= w[0].distances[i] * (1.0 + slack)))
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("eps,defect");
        for i in 1..=self.species() {
            h.push_str(&format!(",dist_u{i}"));
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e}", r.eps, r.defect));
            for d in &r.distances {
                out.push_str(&format!(",{d:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn distances(a: &SktSolution, b: &SktSolution) -> Vec<f64> {
    a.species
        .iter()
        .zip(&b.species)
        .map(|(x, y)| spacetime_norm(&x.sub(y), SpaceTimeNorm::L2Q))
        .collect()
}

/// Runs the local system once and the non-local one with `rho_eps` on every
/// species for each `eps`, recording the `L2Q` distance to the local run.
pub fn converge_study(spec_template: &SktSpec, eps_list: &[f64]) -> Result<ConvergenceTable> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::problem("eps list must be strictly decreasing"));
    }
    let grid = spec_template.grid;
    let kernels = eps_list.iter().map(|&e| make_kernel(&grid, e)).collect::<Result<Vec<_>>>()?;
    let reference = solve_system(&spec_template.local())?;
    let rows = kernels
        .par_iter()
        .map(|k| {
            let spec = spec_template.with_kernels(vec![Smoother::Mollifier(k.clone()); spec_template.species()])?;
            let run = solve_system(&spec)?;
            Ok(ConvergenceRow {
                eps: k.eps(),
                defect: dirac_defect(k),
                distances: distances(&run, &reference),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        rows,
        reference_norms: reference.l2q_norms(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizationRow {
    pub sigma: f64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizationReport {
    pub kink_strength: f64,
    pub rows: Vec<RegularizationRow>,
    pub reference_norms: Vec<f64>,
}

impl RegularizationReport {
    pub fn decreasing(&self) -> bool {
        let species = self.reference_norms.len();
        (0..species).all(|i| self.rows.windows(2).all(|w| w[1].distances[i] <= w[0].distances[i]))
    }

    /// Largest final distance relative to the reference norm of its species.
    pub fn final_relative(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| {
            r.distances
                .iter()
                .zip(&self.reference_norms)
                .map(|(d, n)| if *n > 0.0 { d / n } else { *d })
                .fold(0.0, f64::max)
        })
    }
}

/// Scales the couplings of every clamped-affine coefficient by
/// `kink_strength`, solves with the merely continuous clamp, then with
/// argument-mollified clamps of half-width `sigma` for each entry of `sigmas`.
pub fn regularization_study(spec: &SktSpec, kink_strength: f64, sigmas: &[f64]) -> Result<RegularizationReport> {
    if sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::problem("argument smoothing widths must be positive"));
    }
    let family = |sigma: f64| -> Vec<CoeffFamily> {
        spec.coeffs
            .iter()
            .map(|c| match c {
                CoeffFamily::ClampedAffine {
                    base, couplings, lo, hi, ..
                } => CoeffFamily::ClampedAffine {
                    base: *base,
                    couplings: couplings.iter().map(|x| x * kink_strength).collect(),
                    lo: *lo,
                    hi: *hi,
                    arg_smoothing: sigma,
                },
                other => other.clone(),
            })
            .collect()
    };
    let reference = solve_system(&spec.with_coeffs(family(0.0))?)?;
    let rows = sigmas
        .par_iter()
        .map(|&sigma| {
            let run = solve_system(&spec.with_coeffs(family(sigma))?)?;
            Ok(RegularizationRow {
                sigma,
                distances: distances(&run, &reference),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularizationReport {
        kink_strength,
        rows,
        reference_norms: reference.l2q_norms(),
    })
}
