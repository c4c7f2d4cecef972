//! Weighted-space toolkit: discrete maximal function, A2 constants,
//! convolution domination and the energy identities of the dual problem.
//!
//! Balls are periodic l^inf cubes of `2r + 1` cells per axis around a center
//! cell, `r = 0..=n/2`. At `r = n/2` the cube wraps onto itself and is taken
//! as the whole axis (`n` distinct cells), so every average is over distinct
//! cells.

use rand::Rng;
use rayon::prelude::*;

use crate::dual::{solve_dual, DualProblem, EstimateReport, APRIORI_SLACK};
use crate::error::{Error, Result};
use crate::mollify::{convolve_unchecked, KernelSequence};
use crate::sample;
use crate::torus::{gradient_norm_sq, laplacian, Field, Grid, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    values: Field,
}

impl Weight {
    pub fn new(values: Field) -> Result<Self> {
        if let Some(i) = values.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::problem(format!(
                "weight must be positive, cell {i} is {}",
                values.values()[i]
            )));
        }
        Ok(Weight { values })
    }

    pub fn uniform(grid: Grid) -> Self {
        Weight {
            values: Field::constant(grid, 1.0),
        }
    }

    /// `(|x| + h)^{-alpha}` with `|x|` the periodic distance to the origin.
    pub fn power(grid: Grid, alpha: f64) -> Self {
        let values = (0..grid.len())
            .map(|i| (grid.dist_sq_to_origin(i).sqrt() + grid.h()).powf(-alpha))
            .collect();
        Weight {
            values: Field::from_raw(grid, values),
        }
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn scale(&self, c: f64) -> Result<Weight> {
        Weight::new(self.values.scale(c))
    }
}

/// Periodic box sums over l^inf cubes, from a prefix table on the doubled
/// torus.
struct BoxSums {
    dim: usize,
    n: usize,
    prefix: Vec<f64>,
}

impl BoxSums {
    fn new(grid: &Grid, values: &[f64]) -> Self {
        let n = grid.n();
        let m = 2 * n;
        if grid.dim() == 1 {
            let mut prefix = vec![0.0; m + 1];
            for i in 0..m {
                prefix[i + 1] = prefix[i] + values[i % n];
            }
            BoxSums { dim: 1, n, prefix }
        } else {
            let w = m + 1;
            let mut prefix = vec![0.0; w * w];
            for i in 0..m {
                let mut row = 0.0;
                for j in 0..m {
                    row += values[(i % n) * n + j % n];
                    prefix[(i + 1) * w + j + 1] = prefix[i * w + j + 1] + row;
                }
            }
            BoxSums { dim: 2, n, prefix }
        }
    }

    fn width(&self, r: usize) -> usize {
        (2 * r + 1).min(self.n)
    }

    fn start(&self, c: usize, r: usize) -> usize {
        if 2 * r + 1 >= self.n {
            0
        } else {
            (c + self.n - r) % self.n
        }
    }

    fn cells(&self, r: usize) -> f64 {
        (self.width(r) as f64).powi(self.dim as i32)
    }

    fn sum(&self, cell: [usize; 2], r: usize) -> f64 {
        let w = self.width(r);
        let a = self.start(cell[0], r);
        if self.dim == 1 {
            self.prefix[a + w] - self.prefix[a]
        } else {
            let b = self.start(cell[1], r);
            let stride = 2 * self.n + 1;
            let p = |i: usize, j: usize| self.prefix[i * stride + j];
            p(a + w, b + w) - p(a, b + w) - p(a + w, b) + p(a, b)
        }
    }
}

/// Largest admissible radius in cells.
pub fn max_radius(grid: &Grid) -> usize {
    grid.n() / 2
}

/// `(Mf)(x) = max_r` average of `|f|` over the cube of radius `r` at `x`.
pub fn maximal_function(f: &Field) -> Field {
    let grid = *f.grid();
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let sums = BoxSums::new(&grid, &abs);
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let cell = grid.cell(i);
            (0..=max_radius(&grid))
                .map(|r| sums.sum(cell, r) / sums.cells(r))
                .fold(abs[i], f64::max)
        })
        .collect();
    Field::from_raw(grid, values)
}

/// `sup` over all cubes of `mean(w) * mean(1/w)`.
pub fn a2_constant(w: &Weight) -> f64 {
    let grid = *w.grid();
    let inv: Vec<f64> = w.values.values().iter().map(|v| 1.0 / v).collect();
    let direct = BoxSums::new(&grid, w.values.values());
    let dual = BoxSums::new(&grid, &inv);
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let cell = grid.cell(i);
            (0..=max_radius(&grid))
                .map(|r| {
                    let c = direct.cells(r);
                    (direct.sum(cell, r) / c) * (dual.sum(cell, r) / c)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// `A* = max_{eps, x} |f * rho_eps|(x) / (M|f|(x) + tiny)`.
pub fn domination_check(f: &Field, ks: &KernelSequence) -> Result<EstimateReport> {
    if let Some(k) = ks.kernels().first() {
        if !k.grid().same_space(f.grid()) {
            return Err(Error::GridMismatch("field and kernels live on different grids"));
        }
    }
    let mf = maximal_function(f);
    let a = ks
        .kernels()
        .par_iter()
        .map(|k| {
            convolve_unchecked(f, k)
                .values()
                .iter()
                .zip(mf.values())
                .map(|(c, m)| c.abs() / (m + f64::MIN_POSITIVE))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(EstimateReport::measured("A* = max |f * rho_eps| / M|f|", a))
}

fn weighted_l2(f: &Field, w: &Field) -> f64 {
    f.values().iter().zip(w.values()).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
}

/// Trial field `t` of the boundedness probe: even trials are i.i.d. uniform
/// cells, odd trials are indicators of a random cube.
pub fn trial_field(grid: Grid, seed: u64, t: usize) -> Field {
    let mut rng = sample::rng(seed, t as u64);
    if t % 2 == 0 {
        return sample::uniform_cells(grid, &mut rng, 0.0, 1.0);
    }
    let n = grid.n();
    let center = [rng.random_range(0..n), rng.random_range(0..n)];
    let r = rng.random_range(0..n / 4) as i64;
    let inside = |c: usize, a: usize| {
        let d = crate::torus::periodic_offset((c + n - a) % n, n);
        d.abs() <= r
    };
    let values = (0..grid.len())
        .map(|i| {
            let cell = grid.cell(i);
            let hit = inside(cell[0], center[0]) && (grid.dim() == 1 || inside(cell[1], center[1]));
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Field::from_raw(grid, values)
}

/// `R(w) = max` over `trials` seeded fields of `||Mf||_{L2_w} / ||f||_{L2_w}`.
pub fn maximal_boundedness(w: &Weight, trials: usize, seed: u64) -> EstimateReport {
    let grid = *w.grid();
    let r = (0..trials)
        .into_par_iter()
        .map(|t| {
            let f = trial_field(grid, seed, t);
            let denom = weighted_l2(&f, &w.values);
            if denom > 0.0 {
                weighted_l2(&maximal_function(&f), &w.values) / denom
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max);
    EstimateReport::measured("R = max ||Mf||_w / ||f||_w", r)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                out[k] = rank;
            }
            i = j + 1;
        }
        out
    }
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Energy identity for `mu = mu(x)`:
/// `1/2 ||mu^{-1/2} Phi(0)||^2 + ||grad Phi||_{L2Q}^2 = -<mu^{-1} Phi, S>`,
/// with time sums taken over `Phi^{k+1}`, `k < K`.
pub fn energy_identity_case_ii(mu_x: &Field, s: &Trajectory) -> Result<EstimateReport> {
    let grid = *s.grid();
    if !mu_x.grid().same_space(&grid) {
        return Err(Error::GridMismatch("mu and S live on different grids"));
    }
    let p = DualProblem::new(Trajectory::constant(grid, mu_x), s.clone())?;
    let phi = solve_dual(&p)?;
    let inv_mu = mu_x.map(|m| 1.0 / m);
    let tau = grid.tau();
    let phi0 = phi.slice(0);
    let mut lhs = 0.5 * phi0.dot(&phi0.mul(&inv_mu));
    let mut rhs = 0.0;
    for k in 0..grid.steps() {
        let next = phi.slice(k + 1);
        lhs += tau * gradient_norm_sq(next);
        rhs -= tau * next.dot(&s.slice(k).mul(&inv_mu));
    }
    Ok(EstimateReport::identity(
        "1/2|mu^-1/2 Phi(0)|^2 + |grad Phi|^2 = -<Phi/mu, S>",
        lhs,
        rhs,
        APRIORI_SLACK,
    ))
}

/// Energy identity for `mu = mu(t)` (one value per time level):
/// `1/2 ||grad Phi(0)||^2 + ||mu^{1/2} Lap Phi||_{L2Q}^2 = <Lap Phi, S>`.
pub fn energy_identity_case_iii(mu_t: &[f64], s: &Trajectory) -> Result<EstimateReport> {
    let grid = *s.grid();
    if mu_t.len() != grid.steps() + 1 {
        return Err(Error::Length {
            expected: grid.steps() + 1,
            got: mu_t.len(),
        });
    }
    let mu = Trajectory::from_fn(grid, |k| Field::constant(grid, mu_t[k]));
    let p = DualProblem::new(mu, s.clone())?;
    let phi = solve_dual(&p)?;
    let tau = grid.tau();
    let mut lhs = 0.5 * gradient_norm_sq(phi.slice(0));
    let mut rhs = 0.0;
    for k in 0..grid.steps() {
        let lap = laplacian(phi.slice(k + 1));
        lhs += tau * mu_t[k] * lap.dot(&lap);
        rhs += tau * lap.dot(s.slice(k));
    }
    Ok(EstimateReport::identity(
        "1/2|grad Phi(0)|^2 + |mu^1/2 Lap Phi|^2 = <Lap Phi, S>",
        lhs,
        rhs,
        APRIORI_SLACK,
    ))
}
