use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;

/// Signed frequency of DFT bin `j` on a ring of `n` points.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Cached forward/inverse transforms for one grid. Both directions are
/// unnormalized; callers divide by `n^N` where needed.
#[derive(Clone)]
pub struct FourierPlan {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierPlan").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

impl FourierPlan {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        FourierPlan {
            dim: grid.dim(),
            n: grid.n(),
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Unnormalized inverse; returns the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inverse);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        // rustfft processes every contiguous length-n chunk
        fft.process(buf);
        if self.dim == 2 {
            transpose(buf, self.n);
            fft.process(buf);
            transpose(buf, self.n);
        }
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}
