//! Explicit forward solver for `dz/dt - Lap(mu z) = G`, or `= R z` in
//! reaction mode.
//!
//! The diffusion update is written in M-matrix form
//!
//! ```text
//! z_j <- z_j (1 - 2N c mu_j) + c * sum_{m ~ j} mu_m z_m,     c = tau / h^2
//! ```
//!
//! which equals `z + tau Lap_h(mu z)` and, under the CFL bound, is a
//! combination of non-negative terms. Non-negative data therefore stay
//! non-negative in floating point, not just up to round-off.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::torus::{integrate, norm, spacetime_norm, stencil_apply, Field, Grid, Norm, SpaceTimeNorm, Trajectory};

pub const CFL_SAFETY: f64 = 0.9;

/// Abort threshold on `||z||_inf`.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Largest admissible explicit time step for diffusion bounded by `mu_sup`.
pub fn cfl_timestep(grid: &Grid, mu_sup: f64) -> f64 {
    let h = grid.h();
    CFL_SAFETY * h * h / (2.0 * grid.dim() as f64 * mu_sup)
}

/// Grid with the fewest time steps that satisfy the CFL bound for `mu_sup`.
pub fn cfl_grid(dim: usize, n: usize, t_final: f64, mu_sup: f64) -> Result<Grid> {
    let probe = Grid::new(dim, n, t_final, 1)?;
    let bound = cfl_timestep(&probe, mu_sup);
    let mut steps = (t_final / bound).ceil().max(1.0) as usize;
    while t_final / steps as f64 > bound {
        steps += 1;
    }
    Grid::new(dim, n, t_final, steps)
}

pub(crate) fn check_cfl(grid: &Grid, mu_sup: f64) -> Result<()> {
    let bound = cfl_timestep(grid, mu_sup);
    if grid.tau() > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { tau: grid.tau(), bound });
    }
    Ok(())
}

/// `z + tau Lap_h(mu z)` in M-matrix form.
pub(crate) fn diffusion_update(grid: &Grid, z: &[f64], mu: &[f64]) -> Vec<f64> {
    let c = grid.tau() / (grid.h() * grid.h());
    let diag = 2.0 * grid.dim() as f64 * c;
    let flux: Vec<f64> = mu.iter().zip(z).map(|(m, v)| m * v).collect();
    let mut out = vec![0.0; z.len()];
    stencil_apply(grid, &flux, |j, _, nb| {
        out[j] = z[j] * (1.0 - diag * mu[j]) + c * nb;
    });
    out
}

pub(crate) fn guard(step: usize, values: &[f64]) -> Result<()> {
    for &v in values {
        if !v.is_finite() {
            return Err(Error::BlowUp {
                step,
                reason: "non-finite value".into(),
            });
        }
        if v.abs() > BLOW_UP_LIMIT {
            return Err(Error::BlowUp {
                step,
                reason: format!("|z| exceeded {BLOW_UP_LIMIT:e}"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    /// Additive source `G`.
    Source(Trajectory),
    /// Linear reaction rate `R`, applied as `z <- z exp(tau R)`.
    Reaction(Trajectory),
}

impl Forcing {
    pub fn trajectory(&self) -> &Trajectory {
        match self {
            Forcing::Source(t) | Forcing::Reaction(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KolmogorovProblem {
    grid: Grid,
    mu: Trajectory,
    forcing: Forcing,
    z0: Field,
}

impl KolmogorovProblem {
    pub fn new(mu: Trajectory, forcing: Forcing, z0: Field) -> Result<Self> {
        let grid = *mu.grid();
        if !forcing.trajectory().grid().same_spacetime(&grid) {
            return Err(Error::GridMismatch("forcing and mu live on different grids"));
        }
        if !z0.grid().same_space(&grid) {
            return Err(Error::GridMismatch("z0 and mu live on different grids"));
        }
        let mu_min = mu.min();
        if !(mu_min > 0.0) {
            return Err(Error::problem(format!("mu must be positively lower-bounded, min is {mu_min}")));
        }
        if matches!(forcing, Forcing::Reaction(_)) && z0.min() < 0.0 {
            return Err(Error::problem("reaction mode requires z0 >= 0"));
        }
        Ok(KolmogorovProblem { grid, mu, forcing, z0 })
    }

    /// Source-mode problem with `G = 0`.
    pub fn homogeneous(mu: Trajectory, z0: Field) -> Result<Self> {
        let g = Trajectory::zeros(*mu.grid());
        KolmogorovProblem::new(mu, Forcing::Source(g), z0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mu(&self) -> &Trajectory {
        &self.mu
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    pub fn z0(&self) -> &Field {
        &self.z0
    }

    pub fn source(&self) -> Option<&Trajectory> {
        match &self.forcing {
            Forcing::Source(g) => Some(g),
            Forcing::Reaction(_) => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub trajectory: Trajectory,
    pub min_value: f64,
    /// Mass ledger defect; `None` in reaction mode.
    pub mass_drift: Option<f64>,
    /// `2N tau sup(mu) / h^2`, at most `CFL_SAFETY`.
    pub cfl_used: f64,
    pub steps_taken: usize,
}

pub fn solve_forward(p: &KolmogorovProblem) -> Result<SolveReport> {
    let grid = p.grid;
    let mu_sup = p.mu.max();
    check_cfl(&grid, mu_sup)?;

    let mut slices = Vec::with_capacity(grid.steps() + 1);
    slices.push(p.z0.clone());
    let mut z = p.z0.to_vec();
    for k in 0..grid.steps() {
        let mu = p.mu.slice(k).values();
        z = diffusion_update(&grid, &z, mu);
        match &p.forcing {
            Forcing::Source(g) => {
                let tau = grid.tau();
                for (v, s) in z.iter_mut().zip(g.slice(k).values()) {
                    *v += tau * s;
                }
            }
            Forcing::Reaction(r) => {
                let tau = grid.tau();
                for (v, rate) in z.iter_mut().zip(r.slice(k).values()) {
                    *v *= (tau * rate).exp();
                }
            }
        }
        guard(k + 1, &z)?;
        slices.push(Field::from_raw(grid, z.clone()));
    }
    let trajectory = Trajectory::new(grid, slices)?;
    let h = grid.h();
    let mut report = SolveReport {
        min_value: trajectory.min(),
        mass_drift: None,
        cfl_used: 2.0 * grid.dim() as f64 * grid.tau() * mu_sup / (h * h),
        steps_taken: grid.steps(),
        trajectory,
    };
    if p.source().is_some() {
        report.mass_drift = Some(check_mass(&report, p)?);
    }
    Ok(report)
}

/// `max_k |int z^k - int z^0 - sum_{j<k} tau int G^j|`.
pub fn check_mass(report: &SolveReport, p: &KolmogorovProblem) -> Result<f64> {
    let g = p
        .source()
        .ok_or_else(|| Error::problem("mass ledger is defined in source mode only"))?;
    let tau = p.grid.tau();
    let m0 = integrate(report.trajectory.slice(0));
    let mut injected = 0.0;
    let mut drift: f64 = 0.0;
    for (k, slice) in report.trajectory.slices().iter().enumerate() {
        drift = drift.max((integrate(slice) - m0 - injected).abs());
        if k < p.grid.steps() {
            injected += tau * integrate(g.slice(k));
        }
    }
    Ok(drift)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// `max of z - z_tilde e^{r_bar t}` over all slices after the initial one
    /// (at `t = 0` both sides coincide).
    pub max_defect: f64,
    /// `||z_tilde||_inf` over `Q_T`.
    pub scale: f64,
    pub relative_defect: f64,
}

/// Solves the reaction problem and its reaction-free counterpart (same `mu`,
/// same `z0`) and measures how far `z` exceeds `z_tilde e^{r_bar t}`.
pub fn comparison_check(p: &KolmogorovProblem, r_bar: f64) -> Result<ComparisonReport> {
    let Forcing::Reaction(r) = &p.forcing else {
        return Err(Error::problem("comparison check needs a reaction-mode problem"));
    };
    let r_max = r.max();
    if r_max > r_bar {
        return Err(Error::problem(format!("reaction rate {r_max} exceeds the bound r_bar = {r_bar}")));
    }
    let z = solve_forward(p)?.trajectory;
    let free = KolmogorovProblem::new(p.mu.clone(), Forcing::Reaction(Trajectory::zeros(p.grid)), p.z0.clone())?;
    let z_tilde = solve_forward(&free)?.trajectory;

    let mut max_defect = f64::NEG_INFINITY;
    for (k, (a, b)) in z.slices().iter().zip(z_tilde.slices()).enumerate().skip(1) {
        let growth = (r_bar * p.grid.time(k)).exp();
        for (x, y) in a.values().iter().zip(b.values()) {
            max_defect = max_defect.max(x - y * growth);
        }
    }
    let scale = z_tilde.slices().iter().map(|s| norm(s, Norm::Linf)).fold(0.0, f64::max);
    Ok(ComparisonReport {
        max_defect,
        scale,
        relative_defect: if scale > 0.0 { max_defect / scale } else { max_defect },
    })
}

/// Measured surrogate of the duality-estimate constant:
/// `||mu^{1/2} z||_{L2Q} / ((||mu||_{L1Q}^{1/2} + 1)(||z0||_{L2} + ||G||_{L1 H^-1}))`.
pub fn duality_estimate_ratio(p: &KolmogorovProblem, z: &Trajectory) -> Result<f64> {
    let g = p
        .source()
        .ok_or_else(|| Error::problem("duality estimate is stated in source mode"))?;
    let weighted = z.zip_map(&p.mu, |zs, ms| zs.zip_map(ms, |a, m| m.sqrt() * a));
    let lhs = spacetime_norm(&weighted, SpaceTimeNorm::L2Q);
    let mu_l1 = spacetime_norm(&p.mu, SpaceTimeNorm::L1Q);
    let data = norm(&p.z0, Norm::L2) + spacetime_norm(g, SpaceTimeNorm::L1Hminus1);
    Ok(lhs / ((mu_l1.sqrt() + 1.0) * data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cfl_examples() {
        let g = Grid::new(1, 64, 1.0, 1).unwrap();
        let t = cfl_timestep(&g, 1.0);
        assert!((t - 0.9 / (64.0 * 64.0) / 2.0).abs() < 1e-18);
        assert!((t - 1.0986e-4).abs() < 1e-8);
        let g2 = Grid::new(2, 64, 1.0, 1).unwrap();
        assert!((cfl_timestep(&g2, 1.0) - t / 2.0).abs() < 1e-18);
        assert!((cfl_timestep(&g, 4.0) - t / 4.0).abs() < 1e-18);
    }

    #[test]
    fn cfl_grid_is_admissible_and_tight() {
        for mu_sup in [0.7, 1.0, 3.0] {
            let g = cfl_grid(1, 64, 0.25, mu_sup).unwrap();
            assert!(g.tau() <= cfl_timestep(&g, mu_sup));
            let coarser = Grid::new(1, 64, 0.25, g.steps() - 1).unwrap();
            assert!(coarser.tau() > cfl_timestep(&coarser, mu_sup));
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = Grid::new(1, 64, 1.0, 10).unwrap();
        let p = KolmogorovProblem::homogeneous(Trajectory::constant(g, &Field::constant(g, 1.0)), Field::constant(g, 1.0)).unwrap();
        assert!(matches!(solve_forward(&p), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let g = Grid::new(1, 16, 0.01, 100).unwrap();
        let mu0 = Trajectory::constant(g, &Field::constant(g, 0.0));
        assert!(KolmogorovProblem::homogeneous(mu0, Field::zeros(g)).is_err());
        let mu = Trajectory::constant(g, &Field::constant(g, 1.0));
        let neg = Field::constant(g, -1.0);
        assert!(KolmogorovProblem::new(mu, Forcing::Reaction(Trajectory::zeros(g)), neg).is_err());
    }

    #[test]
    fn constants_are_steady() {
        let g = cfl_grid(1, 32, 0.1, 1.0).unwrap();
        let p = KolmogorovProblem::homogeneous(Trajectory::constant(g, &Field::constant(g, 1.0)), Field::constant(g, 3.0)).unwrap();
        let r = solve_forward(&p).unwrap();
        assert!(r.trajectory.slices().iter().all(|s| s.values().iter().all(|&v| v == 3.0)));
        assert_eq!(r.steps_taken, g.steps());
        assert!(r.cfl_used <= CFL_SAFETY * (1.0 + 1e-12));
    }

    #[test]
    fn constant_reaction_is_exact_exponential() {
        let g = cfl_grid(1, 32, 0.1, 1.0).unwrap();
        let rate = 0.7;
        let p = KolmogorovProblem::new(
            Trajectory::constant(g, &Field::constant(g, 1.0)),
            Forcing::Reaction(Trajectory::constant(g, &Field::constant(g, rate))),
            Field::constant(g, 2.0),
        )
        .unwrap();
        let r = solve_forward(&p).unwrap();
        let step = (g.tau() * rate).exp();
        let mut expected = 2.0;
        for s in r.trajectory.slices() {
            assert!(s.values().iter().all(|&v| v == expected));
            expected *= step;
        }
        let last = r.trajectory.last().values()[0];
        assert!((last - 2.0 * (rate * g.t_final()).exp()).abs() < 1e-12 * last);
        assert!(r.mass_drift.is_none());
    }

    #[test]
    fn heat_mode_decays_with_discrete_symbol() {
        let n = 128;
        let g = cfl_grid(1, n, 0.05, 1.0).unwrap();
        let p = KolmogorovProblem::homogeneous(
            Trajectory::constant(g, &Field::constant(g, 1.0)),
            Field::from_fn(g, |x| 2.0 + (2.0 * PI * x[0]).cos()),
        )
        .unwrap();
        let r = solve_forward(&p).unwrap();
        let h = g.h();
        let lambda = 4.0 * (PI * h).sin().powi(2) / (h * h);
        let amp = 1.0 - g.tau() * lambda;
        for (k, s) in r.trajectory.slices().iter().enumerate().step_by(97) {
            let a = amp.powi(k as i32);
            for (i, v) in s.values().iter().enumerate() {
                let exact = 2.0 + a * (2.0 * PI * g.coords(i)[0]).cos();
                assert!((v - exact).abs() <= 1e-8 * exact.abs());
            }
        }
    }

    #[test]
    fn mass_ledger() {
        let g = cfl_grid(1, 64, 0.05, 2.0).unwrap();
        let mu = Trajectory::constant(g, &Field::from_fn(g, |x| 1.0 + 0.9 * (2.0 * PI * x[0]).sin()));
        let z0 = Field::from_fn(g, |x| 1.0 + x[0]);
        let p = KolmogorovProblem::homogeneous(mu.clone(), z0.clone()).unwrap();
        let r = solve_forward(&p).unwrap();
        let tol = 1e-12 * norm(&z0, Norm::L1) * g.steps() as f64;
        assert!(r.mass_drift.unwrap() <= tol);

        let ones = Trajectory::constant(g, &Field::constant(g, 1.0));
        let p = KolmogorovProblem::new(mu, Forcing::Source(ones), z0.clone()).unwrap();
        let r = solve_forward(&p).unwrap();
        let m0 = integrate(&z0);
        for (k, s) in r.trajectory.slices().iter().enumerate() {
            assert!((integrate(s) - (m0 + k as f64 * g.tau())).abs() <= tol);
        }
    }

    #[test]
    fn comparison_with_constant_bound_is_equality() {
        let g = cfl_grid(1, 32, 0.1, 2.0).unwrap();
        let mu = Trajectory::constant(g, &Field::from_fn(g, |x| 1.0 + (6.0 * x[0]).sin().abs()));
        let z0 = Field::from_fn(g, |x| 1.0 + (2.0 * PI * x[0]).cos());
        let r_bar = 1.3;
        let p = KolmogorovProblem::new(
            mu.clone(),
            Forcing::Reaction(Trajectory::constant(g, &Field::constant(g, r_bar))),
            z0.clone(),
        )
        .unwrap();
        let rep = comparison_check(&p, r_bar).unwrap();
        assert!(rep.relative_defect.abs() <= 1e-12, "{rep:?}");

        let p = KolmogorovProblem::new(mu, Forcing::Reaction(Trajectory::constant(g, &Field::constant(g, r_bar - 1.0))), z0).unwrap();
        assert!(comparison_check(&p, r_bar).unwrap().max_defect < 0.0);
        assert!(comparison_check(&p, r_bar - 1.5).is_err());
    }
}
