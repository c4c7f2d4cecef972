//! Seeded random field families. Every generator draws from a ChaCha stream
//! selected by `(seed, stream)`, so a field is reproducible regardless of
//! how many other fields were drawn before it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::torus::{Field, Grid, Trajectory};

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. uniform values in `[lo, hi]`, one per cell.
pub fn uniform_cells(grid: Grid, rng: &mut impl Rng, lo: f64, hi: f64) -> Field {
    let values = (0..grid.len()).map(|_| rng.random_range(lo..=hi)).collect();
    Field::new(grid, values).expect("finite samples")
}

/// Piecewise-constant field on a `blocks^N` coarse partition with i.i.d.
/// uniform levels in `[lo, hi]`. Independent of `n` for a fixed seed, so the
/// same function can be sampled on refined grids.
pub fn uniform_blocks(grid: Grid, rng: &mut impl Rng, blocks: usize, lo: f64, hi: f64) -> Field {
    let count = blocks.pow(grid.dim() as u32);
    let levels: Vec<f64> = (0..count).map(|_| rng.random_range(lo..=hi)).collect();
    Field::from_fn(grid, |x| {
        let a = ((x[0] * blocks as f64) as usize).min(blocks - 1);
        if grid.dim() == 1 {
            levels[a]
        } else {
            let b = ((x[1] * blocks as f64) as usize).min(blocks - 1);
            levels[a * blocks + b]
        }
    })
}

/// Random trigonometric polynomial with frequencies up to `modes` per axis,
/// coefficients uniform in `[-amp, amp]`, plus `offset`.
pub fn smooth(grid: Grid, rng: &mut impl Rng, modes: usize, amp: f64, offset: f64) -> Field {
    let terms = random_terms(grid.dim(), rng, modes, amp);
    Field::from_fn(grid, |x| offset + eval_terms(&terms, x))
}

/// Like [`smooth`], shifted so the minimum sampled value equals `floor`.
pub fn smooth_positive(grid: Grid, rng: &mut impl Rng, modes: usize, amp: f64, floor: f64) -> Field {
    let f = smooth(grid, rng, modes, amp, 0.0);
    let shift = floor - f.min();
    f.map(|v| v + shift)
}

/// Space-time random trigonometric polynomial: each spatial term is modulated
/// by `1 + a sin(2 pi t / T + phase)` with random `a in [-1/2, 1/2]`.
pub fn smooth_trajectory(grid: Grid, rng: &mut impl Rng, modes: usize, amp: f64, offset: f64) -> Trajectory {
    let terms = random_terms(grid.dim(), rng, modes, amp);
    let modulation: Vec<(f64, f64)> = terms
        .iter()
        .map(|_| (rng.random_range(-0.5..=0.5), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let t_final = grid.t_final();
    Trajectory::from_fn(grid, |k| {
        let t = grid.time(k);
        let factors: Vec<f64> = modulation
            .iter()
            .map(|(a, ph)| 1.0 + a * (2.0 * PI * t / t_final + ph).sin())
            .collect();
        Field::from_fn(grid, |x| {
            offset + terms.iter().zip(&factors).map(|(term, f)| f * term.eval(x)).sum::<f64>()
        })
    })
}

struct Term {
    k: [f64; 2],
    cos: f64,
    sin: f64,
}

impl Term {
    fn eval(&self, x: [f64; 2]) -> f64 {
        let phase = 2.0 * PI * (self.k[0] * x[0] + self.k[1] * x[1]);
        self.cos * phase.cos() + self.sin * phase.sin()
    }
}

fn random_terms(dim: usize, rng: &mut impl Rng, modes: usize, amp: f64) -> Vec<Term> {
    let m = modes as i64;
    let mut terms = Vec::new();
    let k1_range = if dim == 1 { 0..=0 } else { -m..=m };
    for k0 in 0..=m {
        for k1 in k1_range.clone() {
            if (k0, k1) == (0, 0) || (k0 == 0 && k1 < 0) {
                continue;
            }
            terms.push(Term {
                k: [k0 as f64, k1 as f64],
                cos: rng.random_range(-amp..=amp),
                sin: rng.random_range(-amp..=amp),
            });
        }
    }
    terms
}

fn eval_terms(terms: &[Term], x: [f64; 2]) -> f64 {
    terms.iter().map(|t| t.eval(x)).sum()
}
