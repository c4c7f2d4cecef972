//! Backward dual problem `dPhi/dt + mu Lap(Phi) = S`, `Phi(T) = 0`.
//!
//! The backward march is the exact transpose of the forward update in
//! [`crate::kolmo`]. Writing the forward step as `z^{k+1} = A_k z^k + tau G^k`
//! with `A_k = I + tau Lap_h diag(mu^k)`, the dual step is
//! `Phi^k = A_k^T Phi^{k+1} - tau S^k`. Summation by parts then gives, for
//! every `(z0, G, S)`,
//!
//! ```text
//! sum_{k<K} tau <z^k, S^k> + <z^0, Phi^0> + sum_{k<K} tau <G^k, Phi^{k+1}> = 0
//! ```
//!
//! The source pairing uses `Phi` at the end of each step, which is where the
//! explicit scheme injects `G`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kolmo::{check_cfl, guard, solve_forward, Forcing, KolmogorovProblem};
use crate::mollify::{convolve_unchecked, make_kernel};
use crate::torus::{gradient_norm_sq, laplacian, norm, spacetime_norm, stencil_apply, Field, Grid, Norm, SpaceTimeNorm, Trajectory};

#[derive(Debug, Clone)]
pub struct DualProblem {
    grid: Grid,
    mu: Trajectory,
    s: Trajectory,
}

impl DualProblem {
    pub fn new(mu: Trajectory, s: Trajectory) -> Result<Self> {
        let grid = *mu.grid();
        if !s.grid().same_spacetime(&grid) {
            return Err(Error::GridMismatch("S and mu live on different grids"));
        }
        let mu_min = mu.min();
        if !(mu_min > 0.0) {
            return Err(Error::problem(format!("mu must be positively lower-bounded, min is {mu_min}")));
        }
        Ok(DualProblem { grid, mu, s })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mu(&self) -> &Trajectory {
        &self.mu
    }

    pub fn s(&self) -> &Trajectory {
        &self.s
    }
}

pub fn solve_dual(p: &DualProblem) -> Result<Trajectory> {
    let grid = p.grid;
    check_cfl(&grid, p.mu.max())?;
    let k_max = grid.steps();
    let tau = grid.tau();
    let c = tau / (grid.h() * grid.h());
    let diag = 2.0 * grid.dim() as f64 * c;

    let mut slices = vec![Field::zeros(grid); k_max + 1];
    let mut phi = vec![0.0; grid.len()];
    for k in (0..k_max).rev() {
        let mu = p.mu.slice(k).values();
        let s = p.s.slice(k).values();
        let mut next = vec![0.0; grid.len()];
        stencil_apply(&grid, &phi, |j, center, nb| {
            next[j] = center * (1.0 - diag * mu[j]) + c * mu[j] * nb - tau * s[j];
        });
        guard(k, &next)?;
        phi = next;
        slices[k] = Field::from_raw(grid, phi.clone());
    }
    Trajectory::new(grid, slices)
}

/// Slices `k -> Phi^{k+1}`, with a zero last slice.
pub(crate) fn advanced(phi: &Trajectory) -> Trajectory {
    let grid = *phi.grid();
    Trajectory::from_fn(grid, |k| {
        if k < grid.steps() {
            phi.slice(k + 1).clone()
        } else {
            Field::zeros(grid)
        }
    })
}

/// Relative defect of the discrete duality identity for the forward solution
/// `z` of `p_forward` and the dual solution driven by `s`.
pub fn duality_residual(z: &Trajectory, p_forward: &KolmogorovProblem, s: &Trajectory) -> Result<f64> {
    let grid = *p_forward.grid();
    if !z.grid().same_spacetime(&grid) || !s.grid().same_spacetime(&grid) {
        return Err(Error::GridMismatch("z, S and the forward problem must share one grid"));
    }
    let g = p_forward
        .source()
        .ok_or_else(|| Error::problem("duality identity is stated for source-mode problems"))?;
    let phi = solve_dual(&DualProblem::new(p_forward.mu().clone(), s.clone())?)?;
    let phi_next = advanced(&phi);

    let zs = z.dot(s);
    let initial = z.slice(0).dot(phi.slice(0));
    let source = g.dot(&phi_next);
    let defect = (zs + initial + source).abs();

    let l2q = |t: &Trajectory| spacetime_norm(t, SpaceTimeNorm::L2Q);
    let normalizer = l2q(z) * l2q(s) + norm(z.slice(0), Norm::L2) * norm(phi.slice(0), Norm::L2) + l2q(g) * l2q(&phi_next);
    Ok(if normalizer > 0.0 { defect / normalizer } else { defect })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub passed: bool,
    pub slack: f64,
    pub label: String,
}

impl EstimateReport {
    pub fn new(label: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        EstimateReport {
            lhs,
            rhs,
            ratio: if rhs > 0.0 {
                lhs / rhs
            } else if lhs > 0.0 {
                f64::INFINITY
            } else {
                0.0
            },
            passed: lhs <= rhs * (1.0 + slack),
            slack,
            label: format!("{label} (slack {slack})"),
        }
    }

    /// Two-sided check `|lhs - rhs| <= slack * max(|lhs|, |rhs|)`.
    pub fn identity(label: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs());
        EstimateReport {
            lhs,
            rhs,
            ratio: if rhs != 0.0 {
                lhs / rhs
            } else if lhs == 0.0 {
                1.0
            } else {
                f64::INFINITY
            },
            passed: (lhs - rhs).abs() <= slack * scale,
            slack,
            label: format!("{label} (slack {slack})"),
        }
    }

    /// A measured constant; passes when finite.
    pub fn measured(label: &str, value: f64) -> Self {
        EstimateReport {
            lhs: value,
            rhs: 1.0,
            ratio: value,
            passed: value.is_finite(),
            slack: 0.0,
            label: label.to_string(),
        }
    }
}

/// Slack allowed on the energy-type estimates for time discretization.
pub const APRIORI_SLACK: f64 = 0.05;

/// Constant for the `L^inf L^2` bound on the unit torus: the mean of `Phi`
/// is bounded through `||mu||_{L1}` and the zero-mean part through the
/// Poincare-Wirtinger constant `1/(2 pi)`, giving
/// `||Phi||^2 <= 4 (||mu||_{L1} + 1) ||mu^{-1/2} S||^2`.
pub const LINF_L2_CONSTANT: f64 = 4.0;

/// Checks both energy bounds on a dual solution:
///
/// 1. `sup_t ||grad Phi||^2 + ||mu^{1/2} Lap Phi||_{L2Q}^2 <= ||mu^{-1/2} S||_{L2Q}^2`
/// 2. `||Phi||_{L^inf L^2}^2 <= C (||mu||_{L1Q} + 1) ||mu^{-1/2} S||_{L2Q}^2`
///
/// The second report's `ratio` divided by [`LINF_L2_CONSTANT`] is the measured
/// constant.
pub fn verify_apriori(p: &DualProblem, phi: &Trajectory) -> Result<[EstimateReport; 2]> {
    if !phi.grid().same_spacetime(&p.grid) {
        return Err(Error::GridMismatch("Phi and the dual problem must share one grid"));
    }
    let sup_grad = phi.slices().iter().map(gradient_norm_sq).fold(0.0, f64::max);
    // mu^k pairs with Lap Phi^{k+1}, the term the backward step actually uses
    let lap_next = advanced(phi).map(laplacian);
    let weighted_lap = lap_next.zip_map(&p.mu, |l, m| l.zip_map(m, |a, b| b.sqrt() * a));
    let dissipation = spacetime_norm(&weighted_lap, SpaceTimeNorm::L2Q).powi(2);
    let scaled_s = p.s.zip_map(&p.mu, |s, m| s.zip_map(m, |a, b| a / b.sqrt()));
    let data = spacetime_norm(&scaled_s, SpaceTimeNorm::L2Q).powi(2);

    let first = EstimateReport::new(
        "sup|grad Phi|^2 + |mu^1/2 Lap Phi|^2 <= |mu^-1/2 S|^2",
        sup_grad + dissipation,
        data,
        APRIORI_SLACK,
    );
    let mu_l1 = spacetime_norm(&p.mu, SpaceTimeNorm::L1Q);
    let second = EstimateReport::new(
        "|Phi|_{Linf L2}^2 <= 4 (|mu|_L1 + 1) |mu^-1/2 S|^2",
        spacetime_norm(phi, SpaceTimeNorm::LinfL2).powi(2),
        LINF_L2_CONSTANT * (mu_l1 + 1.0) * data,
        APRIORI_SLACK,
    );
    Ok([first, second])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub eps: f64,
    /// `||mu_n - mu||_{L1Q}`.
    pub mu_distance: f64,
    /// `||z_n - z||_{L2Q}`.
    pub z_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    /// `||z||_{L2Q}` of the rough-coefficient solution.
    pub reference_norm: f64,
}

impl StabilityTable {
    /// Each distance column entry is at most `(1 + slack)` times the previous one.
    pub fn non_increasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].z_distance <= w[0].z_distance * (1.0 + slack))
    }

    pub fn final_relative(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.z_distance / self.reference_norm)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,mu_dist_l1q,z_dist_l2q\n");
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", r.eps, r.mu_distance, r.z_distance));
        }
        out
    }
}

/// Forward solves with `mu_n = mu_rough * rho_{eps_n}` (per time slice)
/// against the solve with `mu_rough` itself.
pub fn stability_study(mu_rough: &Trajectory, smoothing_eps: &[f64], z0: &Field, g: &Trajectory) -> Result<StabilityTable> {
    let grid = *mu_rough.grid();
    let lo = mu_rough.min();
    let hi = mu_rough.max();
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(Error::problem("rough mu must be bounded in [lo, hi] with lo > 0"));
    }
    if smoothing_eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::problem("smoothing widths must be strictly decreasing"));
    }
    let kernels = smoothing_eps.iter().map(|&e| make_kernel(&grid, e)).collect::<Result<Vec<_>>>()?;

    let solve = |mu: Trajectory| -> Result<Trajectory> {
        let p = KolmogorovProblem::new(mu, Forcing::Source(g.clone()), z0.clone())?;
        Ok(solve_forward(&p)?.trajectory)
    };
    let z = solve(mu_rough.clone())?;
    let reference_norm = spacetime_norm(&z, SpaceTimeNorm::L2Q);

    let rows = kernels
        .par_iter()
        .map(|k| {
            let mu_n = map_shared(mu_rough, |s| convolve_unchecked(s, k).map(|v| v.clamp(lo, hi)));
            let mu_distance = spacetime_norm(&mu_n.sub(mu_rough), SpaceTimeNorm::L1Q);
            let z_n = solve(mu_n)?;
            Ok(StabilityRow {
                eps: k.eps(),
                mu_distance,
                z_distance: spacetime_norm(&z_n.sub(&z), SpaceTimeNorm::L2Q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityTable { rows, reference_norm })
}

/// Maps slices, reusing the result for consecutive slices that share storage.
pub(crate) fn map_shared(traj: &Trajectory, f: impl Fn(&Field) -> Field) -> Trajectory {
    let mut prev: Option<(*const f64, Field)> = None;
    let slices = traj
        .slices()
        .iter()
        .map(|s| {
            let ptr = s.values().as_ptr();
            match &prev {
                Some((p, out)) if *p == ptr => out.clone(),
                _ => {
                    let out = f(s);
                    prev = Some((ptr, out.clone()));
                    out
                }
            }
        })
        .collect();
    Trajectory::new(*traj.grid(), slices).expect("same slice count")
}
