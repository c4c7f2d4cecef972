//! Periodic grids on the unit torus, grid functions, discrete operators and
//! the norms used by every estimate in the crate.
//!
//! Fields are stored row-major: in two dimensions the flat index of cell
//! `(i, j)` is `i * n + j`, with `i` running along axis 0.

mod dump;
mod spectral;

pub use dump::{decode_dump, encode_dump, FieldDump, DUMP_MAGIC};
pub use spectral::{wavenumber, FourierPlan};

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Space-time discretization of `[0, T] x T^N` with unit torus side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
    t_final: f64,
    steps: usize,
    tau: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, t_final: f64, steps: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("n must be a power of two >= 8, got {n}")));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!("t_final must be positive, got {t_final}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be >= 1".into()));
        }
        let tau = t_final / steps as f64;
        Ok(Grid {
            dim,
            n,
            h: 1.0 / n as f64,
            // stored horizon is tau * steps so the two never disagree
            t_final: tau * steps as f64,
            steps,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of cells, `n^N`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Quadrature weight `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }

    /// Same spatial discretization (time data may differ).
    pub fn same_space(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n
    }

    /// Same grid in space and time.
    pub fn same_spacetime(&self, other: &Grid) -> bool {
        self.same_space(other) && self.steps == other.steps && self.tau == other.tau
    }

    /// Per-axis cell indices of a flat index (axis 1 is zero in 1D).
    pub fn cell(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n, idx % self.n]
        }
    }

    /// Cell coordinates in `[0, 1)^N` (second entry unused in 1D).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.cell(idx);
        [i as f64 * self.h, j as f64 * self.h]
    }

    /// Squared periodic distance from the cell to the origin.
    pub fn dist_sq_to_origin(&self, idx: usize) -> f64 {
        let cell = self.cell(idx);
        cell[..self.dim]
            .iter()
            .map(|&c| {
                let d = periodic_offset(c, self.n) as f64 * self.h;
                d * d
            })
            .sum()
    }
}

/// Signed offset of `c` from 0 on a ring of `n` cells, in `(-n/2, n/2]`.
pub(crate) fn periodic_offset(c: usize, n: usize) -> i64 {
    let c = c as i64;
    let n = n as i64;
    if c > n / 2 {
        c - n
    } else {
        c
    }
}

/// A scalar grid function at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Arc<[f64]>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Field {
            grid,
            values: values.into(),
        })
    }

    /// Builds a field without the finiteness scan. Length is still checked.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "field length mismatch");
        Field {
            grid,
            values: values.into(),
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Field::from_raw(grid, vec![value; grid.len()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::constant(grid, 0.0)
    }

    /// Samples `f` at cell coordinates.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Field::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values.to_vec()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(self.grid.same_space(&other.grid), "field grid mismatch");
        Field::from_raw(
            self.grid,
            self.values.iter().zip(other.values.iter()).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `L^2(T^N)` inner product.
    pub fn dot(&self, other: &Field) -> f64 {
        assert!(self.grid.same_space(&other.grid), "field grid mismatch");
        self.grid.cell_volume() * self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Re-labels the field with a grid of identical space discretization.
    pub fn with_grid(&self, grid: Grid) -> Result<Field> {
        if !self.grid.same_space(&grid) {
            return Err(Error::GridMismatch("field re-labelled onto a different space grid"));
        }
        Ok(Field {
            grid,
            values: Arc::clone(&self.values),
        })
    }
}

/// A grid function on every time level `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    slices: Vec<Field>,
}

impl Trajectory {
    pub fn new(grid: Grid, slices: Vec<Field>) -> Result<Self> {
        if slices.len() != grid.steps() + 1 {
            return Err(Error::Length {
                expected: grid.steps() + 1,
                got: slices.len(),
            });
        }
        if slices.iter().any(|s| !s.grid().same_space(&grid)) {
            return Err(Error::GridMismatch("trajectory slice on a different space grid"));
        }
        Ok(Trajectory { grid, slices })
    }

    /// Time-independent trajectory sharing one allocation across slices.
    pub fn constant(grid: Grid, field: &Field) -> Self {
        Trajectory {
            grid,
            slices: vec![field.clone(); grid.steps() + 1],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize) -> Field) -> Self {
        let slices = (0..=grid.steps()).map(f).collect();
        Trajectory { grid, slices }
    }

    pub fn zeros(grid: Grid) -> Self {
        Trajectory::constant(grid, &Field::zeros(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &Field {
        &self.slices[k]
    }

    pub fn last(&self) -> &Field {
        self.slices.last().expect("trajectory has at least one slice")
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field) -> Trajectory {
        Trajectory {
            grid: self.grid,
            slices: self.slices.iter().map(f).collect(),
        }
    }

    pub fn zip_map(&self, other: &Trajectory, f: impl Fn(&Field, &Field) -> Field) -> Trajectory {
        assert_eq!(self.slices.len(), other.slices.len(), "trajectory length mismatch");
        Trajectory {
            grid: self.grid,
            slices: self.slices.iter().zip(other.slices.iter()).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn sub(&self, other: &Trajectory) -> Trajectory {
        self.zip_map(other, Field::sub)
    }

    pub fn min(&self) -> f64 {
        self.slices.iter().map(Field::min).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.slices.iter().map(Field::max).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Space-time inner product with left-endpoint time weights.
    pub fn dot(&self, other: &Trajectory) -> f64 {
        let k = self.grid.steps();
        self.grid.tau()
            * self.slices[..k]
                .iter()
                .zip(other.slices[..k].iter())
                .map(|(a, b)| a.dot(b))
                .sum::<f64>()
    }
}

/// Second-order centered periodic Laplacian, `2N` neighbors.
pub fn laplacian(f: &Field) -> Field {
    let grid = *f.grid();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; grid.len()];
    stencil_apply(&grid, f.values(), |idx, center, nb_sum| {
        out[idx] = inv_h2 * (nb_sum - 2.0 * grid.dim() as f64 * center);
    });
    Field::from_raw(grid, out)
}

/// Visits every cell with its value and the sum of its `2N` periodic neighbors.
pub(crate) fn stencil_apply(grid: &Grid, v: &[f64], mut visit: impl FnMut(usize, f64, f64)) {
    let n = grid.n();
    match grid.dim() {
        1 => {
            for j in 0..n {
                let left = v[(j + n - 1) % n];
                let right = v[(j + 1) % n];
                visit(j, v[j], left + right);
            }
        }
        _ => {
            for i in 0..n {
                let up = ((i + n - 1) % n) * n;
                let down = ((i + 1) % n) * n;
                let row = i * n;
                for j in 0..n {
                    let left = row + (j + n - 1) % n;
                    let right = row + (j + 1) % n;
                    let s = (v[left] + v[right]) + (v[up + j] + v[down + j]);
                    visit(row + j, v[row + j], s);
                }
            }
        }
    }
}

/// `h^N` times the sum of values.
pub fn integrate(f: &Field) -> f64 {
    f.grid().cell_volume() * f.values().iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
    Linf,
    H1,
    Hminus1,
}

pub fn norm(f: &Field, kind: Norm) -> f64 {
    let vol = f.grid().cell_volume();
    match kind {
        Norm::L1 => vol * f.values().iter().map(|v| v.abs()).sum::<f64>(),
        Norm::L2 => (vol * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt(),
        Norm::Linf => f.values().iter().fold(0.0, |m, v| m.max(v.abs())),
        Norm::H1 => {
            let l2 = norm(f, Norm::L2);
            (l2 * l2 + gradient_norm_sq(f)).sqrt()
        }
        Norm::Hminus1 => hminus1_sq(f).sqrt(),
    }
}

/// Normalized discrete Fourier coefficients: `f_hat = DFT(f) / n^N`, so that
/// `sum |f_hat|^2 = ||f||_{L^2}^2`.
pub fn fourier_coefficients(f: &Field) -> Vec<Complex64> {
    let plan = FourierPlan::new(f.grid());
    let scale = 1.0 / f.grid().len() as f64;
    plan.forward(f.values()).into_iter().map(|c| c * scale).collect()
}

fn hminus1_sq(f: &Field) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let coeffs = fourier_coefficients(f);
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    coeffs
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let [a, b] = grid.cell(idx);
            let mut k2 = (wavenumber(a, n) as f64).powi(2);
            if grid.dim() == 2 {
                k2 += (wavenumber(b, n) as f64).powi(2);
            }
            c.norm_sqr() / (1.0 + four_pi2 * k2)
        })
        .sum()
}

/// `sum over axes of h^N * sum_j ((f_{j+e} - f_j) / h)^2` with forward differences.
pub fn gradient_norm_sq(f: &Field) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let v = f.values();
    let mut acc = 0.0;
    match grid.dim() {
        1 => {
            for j in 0..n {
                let d = v[(j + 1) % n] - v[j];
                acc += d * d;
            }
        }
        _ => {
            for i in 0..n {
                for j in 0..n {
                    let c = v[i * n + j];
                    let dx = v[i * n + (j + 1) % n] - c;
                    let dy = v[((i + 1) % n) * n + j] - c;
                    acc += dx * dx + dy * dy;
                }
            }
        }
    }
    acc * grid.cell_volume() / (grid.h() * grid.h())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTimeNorm {
    /// `L^2(Q_T)`.
    L2Q,
    /// `L^1(Q_T)`.
    L1Q,
    /// `L^inf(0,T; L^2)`.
    LinfL2,
    /// `L^1(0,T; H^-1)`.
    L1Hminus1,
}

/// Space-time norms; time integrals use left-endpoint weights `tau` on
/// slices `0..K`, the sup runs over all `K + 1` slices.
pub fn spacetime_norm(traj: &Trajectory, kind: SpaceTimeNorm) -> f64 {
    let grid = traj.grid();
    let tau = grid.tau();
    let left = &traj.slices()[..grid.steps()];
    match kind {
        SpaceTimeNorm::L2Q => left
            .iter()
            .map(|s| {
                let v = norm(s, Norm::L2);
                tau * v * v
            })
            .sum::<f64>()
            .sqrt(),
        SpaceTimeNorm::L1Q => left.iter().map(|s| tau * norm(s, Norm::L1)).sum(),
        SpaceTimeNorm::LinfL2 => traj.slices().iter().map(|s| norm(s, Norm::L2)).fold(0.0, f64::max),
        SpaceTimeNorm::L1Hminus1 => {
            // constant-in-time trajectories share slices; skip repeated FFTs
            let mut total = 0.0;
            let mut cached: Option<(*const f64, f64)> = None;
            for s in left {
                let ptr = s.values().as_ptr();
                let v = match cached {
                    Some((p, v)) if p == ptr => v,
                    _ => {
                        let v = norm(s, Norm::Hminus1);
                        cached = Some((ptr, v));
                        v
                    }
                };
                total += tau * v;
            }
            total
        }
    }
}
