//! Normalized periodic mollifiers and FFT convolution on the torus.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::torus::{integrate, periodic_offset, Field, FourierPlan, Grid};

/// Image terms per axis on each side of the wrapped Gaussian.
const IMAGES: i32 = 3;

/// Wrapped Gaussian of width `eps`, renormalized to unit discrete integral.
#[derive(Debug, Clone)]
pub struct Kernel {
    eps: f64,
    values: Field,
    plan: FourierPlan,
    /// DFT of the samples times `h^N / n^N`, ready for pointwise products.
    spectrum: Arc<[Complex64]>,
}

impl Kernel {
    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn values(&self) -> &Field {
        &self.values
    }

    /// JSON sidecar written next to a kernel dump.
    pub fn sidecar(&self) -> KernelSidecar {
        KernelSidecar {
            eps: self.eps,
            n: self.grid().n(),
            dim: self.grid().dim(),
            family: "wrapped_gaussian",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSidecar {
    pub eps: f64,
    pub n: usize,
    pub dim: usize,
    pub family: &'static str,
}

fn wrapped_gaussian_1d(offset: f64, eps: f64) -> f64 {
    let two_var = 2.0 * eps * eps;
    (-IMAGES..=IMAGES)
        .map(|m| {
            let x = offset + m as f64;
            (-x * x / two_var).exp()
        })
        .sum()
}

pub fn make_kernel(grid: &Grid, eps: f64) -> Result<Kernel> {
    let min = 2.0 * grid.h();
    if !(eps >= min) {
        return Err(Error::UnderResolvedKernel { eps, min });
    }
    if eps > 0.5 {
        return Err(Error::KernelTooWide { eps, max: 0.5 });
    }
    let n = grid.n();
    let h = grid.h();
    let profile: Vec<f64> = (0..n).map(|j| wrapped_gaussian_1d(periodic_offset(j, n) as f64 * h, eps)).collect();
    let raw: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let [a, b] = grid.cell(idx);
            if grid.dim() == 1 {
                profile[a]
            } else {
                profile[a] * profile[b]
            }
        })
        .collect();
    let mass = grid.cell_volume() * raw.iter().sum::<f64>();
    let values = Field::new(*grid, raw.into_iter().map(|v| v / mass).collect())?;

    let plan = FourierPlan::new(grid);
    let scale = grid.cell_volume() / grid.len() as f64;
    let spectrum: Arc<[Complex64]> = plan.forward(values.values()).into_iter().map(|c| c * scale).collect();
    Ok(Kernel {
        eps,
        values,
        plan,
        spectrum,
    })
}

/// Circular convolution `(f * rho)_j = h^N sum_m f_m rho_{j-m}` via FFT.
pub fn convolve(f: &Field, k: &Kernel) -> Result<Field> {
    if !f.grid().same_space(k.grid()) {
        return Err(Error::GridMismatch("convolution operands live on different grids"));
    }
    Ok(convolve_unchecked(f, k))
}

pub(crate) fn convolve_unchecked(f: &Field, k: &Kernel) -> Field {
    let mut spec = k.plan.forward(f.values());
    for (s, w) in spec.iter_mut().zip(k.spectrum.iter()) {
        *s *= w;
    }
    Field::from_raw(*f.grid(), k.plan.inverse_real(spec))
}

/// Kernels with strictly decreasing widths, approaching the Dirac mass.
#[derive(Debug, Clone)]
pub struct KernelSequence {
    kernels: Vec<Kernel>,
}

impl KernelSequence {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.windows(2).any(|w| !(w[1].eps < w[0].eps)) {
            return Err(Error::problem("kernel widths must be strictly decreasing"));
        }
        Ok(KernelSequence { kernels })
    }

    pub fn from_eps(grid: &Grid, eps: &[f64]) -> Result<Self> {
        KernelSequence::new(eps.iter().map(|&e| make_kernel(grid, e)).collect::<Result<_>>()?)
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn eps(&self) -> Vec<f64> {
        self.kernels.iter().map(Kernel::eps).collect()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Geometric sequence `eps_j = eps0 * factor^j`, `j < count`.
pub fn kernel_sequence(grid: &Grid, eps0: f64, factor: f64, count: usize) -> Result<KernelSequence> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::problem(format!("factor must lie in (0, 1), got {factor}")));
    }
    if count == 0 {
        return Err(Error::problem("kernel sequence needs at least one kernel"));
    }
    let eps: Vec<f64> = (0..count).map(|j| eps0 * factor.powi(j as i32)).collect();
    let finest = *eps.last().expect("count >= 1");
    if finest < 2.0 * grid.h() {
        return Err(Error::UnderResolvedKernel {
            eps: finest,
            min: 2.0 * grid.h(),
        });
    }
    KernelSequence::from_eps(grid, &eps)
}

/// Second moment `int dist(x, 0)^2 rho(x) dx` of the kernel.
pub fn dirac_defect(k: &Kernel) -> f64 {
    let grid = k.grid();
    let weighted = Field::from_raw(
        *grid,
        k.values()
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| grid.dist_sq_to_origin(i) * v)
            .collect(),
    );
    integrate(&weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{gradient_norm_sq, norm, Norm};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn g1(n: usize) -> Grid {
        Grid::new(1, n, 1.0, 1).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_non_negative() {
        for grid in [g1(128), Grid::new(2, 32, 1.0, 1).unwrap()] {
            let k = make_kernel(&grid, 0.1).unwrap();
            assert!((integrate(k.values()) - 1.0).abs() < 1e-12);
            assert!(k.values().min() >= 0.0);
        }
    }

    #[test]
    fn width_preconditions() {
        let g = g1(64);
        assert!(matches!(make_kernel(&g, 0.03), Err(Error::UnderResolvedKernel { .. })));
        assert!(make_kernel(&g, 2.0 / 64.0).is_ok());
        assert!(matches!(make_kernel(&g, 0.6), Err(Error::KernelTooWide { .. })));
    }

    #[test]
    fn second_moment_matches_gaussian() {
        // direct quadrature of |x|^2 against the sampled kernel, compared with N eps^2
        for (grid, eps) in [(g1(256), 0.1), (g1(256), 0.05), (Grid::new(2, 64, 1.0, 1).unwrap(), 0.1)] {
            let k = make_kernel(&grid, eps).unwrap();
            let n = grid.n();
            let mut moment = 0.0;
            for (idx, v) in k.values().values().iter().enumerate() {
                let [a, b] = grid.cell(idx);
                let xa = periodic_offset(a, n) as f64 / n as f64;
                let xb = if grid.dim() == 2 {
                    periodic_offset(b, n) as f64 / n as f64
                } else {
                    0.0
                };
                moment += (xa * xa + xb * xb) * v * grid.cell_volume();
            }
            let target = grid.dim() as f64 * eps * eps;
            assert!((moment - target).abs() < 0.05 * target, "{moment} vs {target}");
            assert!((dirac_defect(&k) - moment).abs() < 1e-14);
        }
    }

    #[test]
    fn wrapped_profile_is_symmetric() {
        let g = g1(64);
        let k = make_kernel(&g, 0.5).unwrap();
        let v = k.values().values();
        for j in 1..64 {
            assert!((v[j] - v[64 - j]).abs() < 1e-14 * v[0]);
        }
    }

    #[test]
    fn convolving_constants_and_mass() {
        let g = g1(64);
        let k = make_kernel(&g, 0.1).unwrap();
        let c = convolve(&Field::constant(g, 2.5), &k).unwrap();
        assert!(c.values().iter().all(|v| (v - 2.5).abs() < 1e-12));

        let f = Field::from_fn(g, |x| (x[0] * 13.0).sin() + 0.3 * (x[0] * 40.0).cos());
        let cf = convolve(&f, &k).unwrap();
        let m = integrate(&f);
        assert!((integrate(&cf) - m).abs() <= 1e-12 * norm(&f, Norm::L1));
    }

    #[test]
    fn convolving_discrete_delta_recovers_kernel() {
        // direct-sum oracle at n = 16
        for grid in [g1(16), Grid::new(2, 16, 1.0, 1).unwrap()] {
            let k = make_kernel(&grid, 0.125).unwrap();
            let mut delta = vec![0.0; grid.len()];
            delta[0] = 1.0 / grid.cell_volume();
            let delta = Field::new(grid, delta).unwrap();
            let fast = convolve(&delta, &k).unwrap();

            let kv = k.values().values();
            let dv = delta.values();
            let n = grid.n();
            for j in 0..grid.len() {
                let [ja, jb] = grid.cell(j);
                let mut acc = 0.0;
                for m in 0..grid.len() {
                    let [ma, mb] = grid.cell(m);
                    let da = (ja + n - ma) % n;
                    let db = (jb + n - mb) % n;
                    let idx = if grid.dim() == 1 { da } else { da * n + db };
                    acc += dv[m] * kv[idx] * grid.cell_volume();
                }
                assert!((fast.values()[j] - acc).abs() < 1e-12 * kv[0]);
                assert!((fast.values()[j] - kv[j]).abs() < 1e-12 * kv[0]);
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let k = make_kernel(&g1(64), 0.1).unwrap();
        assert!(matches!(convolve(&Field::zeros(g1(32)), &k), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn sequence_examples() {
        let g = g1(64);
        let seq = kernel_sequence(&g, 0.4, 0.5, 4).unwrap();
        assert_eq!(seq.eps(), vec![0.4, 0.2, 0.1, 0.05]);
        assert_eq!(kernel_sequence(&g, 0.4, 0.5, 1).unwrap().len(), 1);
        // 0.4 * 0.5^4 = 0.025 < 2/64
        assert!(matches!(kernel_sequence(&g, 0.4, 0.5, 5), Err(Error::UnderResolvedKernel { .. })));
    }

    #[test]
    fn defect_decreases_along_sequence() {
        let g = g1(256);
        let seq = kernel_sequence(&g, 0.4, 0.5, 5).unwrap();
        let d: Vec<f64> = seq.kernels().iter().map(dirac_defect).collect();
        assert!(d.iter().all(|&x| x >= 0.0));
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        let k05 = make_kernel(&g, 0.05).unwrap();
        let k10 = make_kernel(&g, 0.1).unwrap();
        assert!(dirac_defect(&k05) < dirac_defect(&k10));
    }

    #[test]
    fn approach_to_identity_is_monotone_for_cosine() {
        let g = g1(256);
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let seq = kernel_sequence(&g, 0.4, 0.5, 5).unwrap();
        let dist: Vec<f64> = seq
            .kernels()
            .iter()
            .map(|k| norm(&convolve(&f, k).unwrap().sub(&f), Norm::L2))
            .collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
        assert!(*dist.last().unwrap() < 0.01);
    }

    fn random_field(grid: Grid, seed: u64, non_negative: bool) -> Field {
        let mut s = seed | 1;
        Field::from_raw(
            grid,
            (0..grid.len())
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    let u = (s >> 11) as f64 / (1u64 << 53) as f64;
                    if non_negative {
                        u
                    } else {
                        2.0 * u - 1.0
                    }
                })
                .collect(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn convolution_invariants(seed in any::<u64>(), eps in 0.04f64..0.5, dim in 1usize..=2) {
            let n = if dim == 1 { 64 } else { 32 };
            let grid = Grid::new(dim, n, 1.0, 1).unwrap();
            let eps = eps.max(2.0 * grid.h());
            let k = make_kernel(&grid, eps).unwrap();

            let pos = random_field(grid, seed, true);
            let cp = convolve(&pos, &k).unwrap();
            prop_assert!(cp.min() >= -1e-12 * norm(&pos, Norm::Linf));

            let f = random_field(grid, seed.wrapping_add(7), false);
            let cf = convolve(&f, &k).unwrap();
            prop_assert!(norm(&cf, Norm::L2) <= norm(&f, Norm::L2) * (1.0 + 1e-10));
            prop_assert!((integrate(&cf) - integrate(&f)).abs() <= 1e-12 * norm(&f, Norm::L1).max(1e-300));
        }

        #[test]
        fn smoothing_grows_with_width(seed in any::<u64>()) {
            let grid = g1(128);
            let f = random_field(grid, seed, false);
            let widths = [0.02, 0.05, 0.1, 0.2, 0.4];
            let grads: Vec<f64> = widths
                .iter()
                .map(|&e| gradient_norm_sq(&convolve(&f, &make_kernel(&grid, e).unwrap()).unwrap()))
                .collect();
            for w in grads.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }
}
