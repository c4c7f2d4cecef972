//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --test acceptance`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use cdl_core::dual::{duality_residual, solve_dual, stability_study, verify_apriori, DualProblem};
use cdl_core::kolmo::{cfl_grid, comparison_check, duality_estimate_ratio, solve_forward, Forcing, KolmogorovProblem};
use cdl_core::lab::{self, parse_config};
use cdl_core::mollify::make_kernel;
use cdl_core::sample::{self, rng};
use cdl_core::skt::{converge_study, solve_system, CoeffFamily, ReactionFamily, SktSpec, Smoother};
use cdl_core::torus::{fourier_coefficients, integrate, Field, Grid, Trajectory};
use cdl_core::weights::{a2_constant, maximal_boundedness, maximal_function, spearman, Weight};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Random rough coefficient in `[0.3, 3]`: i.i.d. per cell, either frozen in
/// time or redrawn every time level.
fn rough_mu(grid: Grid, seed: u64, time_varying: bool) -> Trajectory {
    if time_varying {
        Trajectory::from_fn(grid, |k| sample::uniform_cells(grid, &mut rng(seed, 1000 + k as u64), 0.3, 3.0))
    } else {
        Trajectory::constant(grid, &sample::uniform_cells(grid, &mut rng(seed, 1), 0.3, 3.0))
    }
}

// 1. discrete duality identity
fn duality_identity() -> Outcome {
    let start = Instant::now();
    let grid = cfl_grid(1, 64, 0.25, 3.0).unwrap();
    let worst = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mu = rough_mu(grid, seed, seed % 2 == 1);
            let mut r = rng(seed, 2);
            let z0 = if seed % 3 == 0 {
                sample::uniform_cells(grid, &mut r, -1.0, 1.0)
            } else {
                sample::smooth(grid, &mut r, 6, 1.0, 0.0)
            };
            let g = sample::smooth_trajectory(grid, &mut rng(seed, 3), 6, 1.0, 0.2);
            let s = sample::smooth_trajectory(grid, &mut rng(seed, 4), 6, 1.0, -0.1);
            let p = KolmogorovProblem::new(mu, Forcing::Source(g), z0).unwrap();
            let z = solve_forward(&p).unwrap().trajectory;
            duality_residual(&z, &p, &s).unwrap()
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-11 && elapsed <= Duration::from_secs(60),
        format!(
            "max relative residual {worst:.3e} (<= 1e-11) over 100 problems, n=64, K={}, {:.1}s (<= 60s)",
            grid.steps(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Amplitude of the `cos(2 pi x)` mode.
fn cos_amplitude(f: &Field) -> f64 {
    2.0 * fourier_coefficients(f)[1].re
}

// 2. heat oracle
fn heat_oracle() -> Outcome {
    let mode = |g: Grid| Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
    let lambda = |g: &Grid| 4.0 * (PI * g.h()).sin().powi(2) / (g.h() * g.h());

    // semi-discrete decay e^{-lambda_h t}: resolve the O(tau) time error
    let fine = Grid::new(1, 32, 1e-3, 200_000).unwrap();
    let z = solve_forward(&KolmogorovProblem::homogeneous(Trajectory::constant(fine, &Field::constant(fine, 1.0)), mode(fine)).unwrap())
        .unwrap()
        .trajectory;
    let lam = lambda(&fine);
    let semi = z
        .slices()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let exact = (-lam * fine.time(k)).exp();
            (cos_amplitude(s) / exact - 1.0).abs()
        })
        .fold(0.0, f64::max);

    // at the CFL step: fully discrete factor and the continuum rate
    let grid = cfl_grid(1, 128, 0.05, 1.0).unwrap();
    let z = solve_forward(&KolmogorovProblem::homogeneous(Trajectory::constant(grid, &Field::constant(grid, 1.0)), mode(grid)).unwrap())
        .unwrap()
        .trajectory;
    let lam = lambda(&grid);
    let factor = 1.0 - grid.tau() * lam;
    let discrete = z
        .slices()
        .iter()
        .enumerate()
        .map(|(k, s)| (cos_amplitude(s) / factor.powi(k as i32) - 1.0).abs())
        .fold(0.0, f64::max);
    let rate = -cos_amplitude(z.last()).ln() / grid.t_final();
    let continuum = (rate / (4.0 * PI * PI) - 1.0).abs();
    let semi_gap_cfl = (cos_amplitude(z.last()) / (-lam * grid.t_final()).exp() - 1.0).abs();
    outcome(
        semi <= 1e-8 && discrete <= 1e-8 && continuum <= 0.01,
        format!(
            "vs e^(-lambda_h t): {semi:.2e} (tau=5e-9, n=32); vs (1-tau lambda_h)^k: {discrete:.2e} (CFL tau, n=128); \
             rate vs (2pi)^2: {:.3}% (<= 1%); e^(-lambda_h t) gap at CFL tau {semi_gap_cfl:.2e}",
            100.0 * continuum
        ),
    )
}

// 3. sign properties
fn sign_properties() -> Outcome {
    let forward_min = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let dim = 1 + (seed % 2) as usize;
            let n = if dim == 1 { 64 } else { 16 };
            let grid = cfl_grid(dim, n, 0.1, 3.0).unwrap();
            let mu = rough_mu(grid, seed, seed % 4 < 2);
            let z0 = sample::uniform_cells(grid, &mut rng(seed, 2), 0.0, 1.0);
            let g = Trajectory::from_fn(grid, |k| sample::uniform_cells(grid, &mut rng(seed, 5000 + k as u64), 0.0, 1.0));
            let p = KolmogorovProblem::new(mu, Forcing::Source(g), z0).unwrap();
            solve_forward(&p).unwrap().min_value
        })
        .reduce(|| f64::INFINITY, f64::min);
    let dual_min = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let dim = 1 + (seed % 2) as usize;
            let n = if dim == 1 { 64 } else { 16 };
            let grid = cfl_grid(dim, n, 0.1, 3.0).unwrap();
            let mu = rough_mu(grid, seed, seed % 4 < 2);
            let s = Trajectory::from_fn(grid, |k| sample::uniform_cells(grid, &mut rng(seed, 7000 + k as u64), 0.0, 1.0));
            let phi = solve_dual(&DualProblem::new(mu, s).unwrap()).unwrap();
            -phi.max()
        })
        .reduce(|| f64::INFINITY, f64::min);
    outcome(
        forward_min >= -1e-13 && dual_min >= -1e-13,
        format!("min z = {forward_min:.3e}, min(-Phi) = {dual_min:.3e} (both >= -1e-13) over 50 problems each"),
    )
}

// 4. comparison principle
fn comparison() -> Outcome {
    let worst = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            let grid = cfl_grid(1, 64, 0.2, 3.0).unwrap();
            let mu = rough_mu(grid, seed, false);
            let z0 = sample::uniform_cells(grid, &mut rng(seed, 2), 0.0, 1.0);
            let r = Trajectory::from_fn(grid, |k| sample::uniform_cells(grid, &mut rng(seed, 3000 + k as u64), -2.0, 1.5));
            let r_bar = r.max();
            let p = KolmogorovProblem::new(mu, Forcing::Reaction(r), z0).unwrap();
            comparison_check(&p, r_bar).unwrap().relative_defect
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);

    // R = r_bar: z = z_tilde e^{r_bar t}
    let grid = cfl_grid(1, 32, 0.1, 3.0).unwrap();
    let r_bar = 0.7;
    let mu = rough_mu(grid, 99, false);
    let z0 = sample::uniform_cells(grid, &mut rng(99, 2), 0.0, 1.0);
    let solve = |rate: f64| {
        let p = KolmogorovProblem::new(
            mu.clone(),
            Forcing::Reaction(Trajectory::constant(grid, &Field::constant(grid, rate))),
            z0.clone(),
        )
        .unwrap();
        solve_forward(&p).unwrap().trajectory
    };
    let (z, free) = (solve(r_bar), solve(0.0));
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (k, (a, b)) in z.slices().iter().zip(free.slices()).enumerate() {
        let growth = (r_bar * grid.time(k)).exp();
        for (x, y) in a.values().iter().zip(b.values()) {
            gap = gap.max((x - y * growth).abs());
            scale = scale.max(y * growth);
        }
    }
    let equality = gap / scale;
    outcome(
        worst <= 1e-10 && equality <= 1e-12,
        format!("max relative defect {worst:.3e} (<= 1e-10) over 30 problems; |z - z~ e^(rt)| at R = r_bar: {equality:.2e} (<= 1e-12)"),
    )
}

// 5. a-priori estimate
fn apriori() -> Outcome {
    let grid = cfl_grid(1, 64, 0.25, 3.0).unwrap();
    let ratios: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mu = match seed % 4 {
                0 => Trajectory::constant(grid, &Field::constant(grid, 1.0)),
                1 => rough_mu(grid, seed, true),
                _ => rough_mu(grid, seed, false),
            };
            let s = if seed % 4 == 3 {
                Trajectory::constant(grid, &sample::uniform_cells(grid, &mut rng(seed, 4), -1.0, 1.0))
            } else {
                sample::smooth_trajectory(grid, &mut rng(seed, 4), 4, 1.0, 0.0)
            };
            let p = DualProblem::new(mu, s).unwrap();
            let phi = solve_dual(&p).unwrap();
            verify_apriori(&p, &phi).unwrap()[0].ratio
        })
        .collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1.05,
        format!("max lhs/rhs {worst:.4} (<= 1.05) over 100 problems, 75 with rough i.i.d. mu"),
    )
}

// 6. duality estimate constant
fn duality_constant() -> Outcome {
    let measure = |n: usize| {
        let grid = cfl_grid(1, n, 0.25, 3.0).unwrap();
        (0..40u64)
            .into_par_iter()
            .map(|seed| {
                let mu = Trajectory::constant(grid, &sample::uniform_blocks(grid, &mut rng(seed, 1), 8, 0.3, 3.0));
                let z0 = sample::smooth(grid, &mut rng(seed, 2), 4, 1.0, 0.0);
                let g = sample::smooth_trajectory(grid, &mut rng(seed, 3), 4, 1.0, 0.0);
                let p = KolmogorovProblem::new(mu, Forcing::Source(g), z0).unwrap();
                let z = solve_forward(&p).unwrap().trajectory;
                duality_estimate_ratio(&p, &z).unwrap()
            })
            .reduce(|| 0.0, f64::max)
    };
    let (c64, c128) = (measure(64), measure(128));
    let drift = (c128 / c64 - 1.0).abs();
    outcome(
        c64.is_finite() && c128.is_finite() && drift <= 0.2,
        format!(
            "C*(64) = {c64:.5}, C*(128) = {c128:.5}, relative change {:.2}% (<= 20%)",
            100.0 * drift
        ),
    )
}

// 7. stability transfer
fn stability() -> Outcome {
    let grid = cfl_grid(1, 128, 0.25, 1.5).unwrap();
    let mu = Trajectory::constant(grid, &Field::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos().signum()));
    let z0 = Field::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
    let table = stability_study(&mu, &[0.2, 0.1, 0.05], &z0, &Trajectory::zeros(grid)).unwrap();
    let monotone = table.non_increasing(0.1);
    let last = table.final_relative();
    let column: Vec<String> = table.rows.iter().map(|r| format!("{:.4e}", r.z_distance)).collect();
    outcome(
        monotone && last <= 0.05,
        format!(
            "|z_n - z| = [{}] non-increasing: {monotone}; final / |z| = {last:.4} (<= 0.05)",
            column.join(", ")
        ),
    )
}

fn reference_skt(grid: Grid) -> SktSpec {
    SktSpec::new(
        grid,
        vec![
            CoeffFamily::ClampedAffine {
                base: 1.0,
                couplings: vec![1.0],
                lo: 0.5,
                hi: 2.0,
                arg_smoothing: 0.0,
            },
            CoeffFamily::Constant { value: 1.0 },
        ],
        vec![
            ReactionFamily::LotkaVolterra {
                growth: 1.0,
                competition: vec![1.0, 1.0],
            },
            ReactionFamily::LotkaVolterra {
                growth: 1.0,
                competition: vec![0.0, 1.0],
            },
        ],
        vec![Smoother::Identity, Smoother::Identity],
        vec![
            Field::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos()),
            Field::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin()),
        ],
    )
    .unwrap()
}

// 8. SKT kernel-to-Dirac convergence
fn skt_convergence() -> Outcome {
    let start = Instant::now();
    let grid = cfl_grid(1, 128, 0.25, 2.0).unwrap();
    let table = converge_study(&reference_skt(grid), &[0.4, 0.2, 0.1, 0.05]).unwrap();
    let elapsed = start.elapsed();
    let cols: Vec<String> = (0..2)
        .map(|i| {
            let c: Vec<String> = table.rows.iter().map(|r| format!("{:.3e}", r.distances[i])).collect();
            format!("u{}: [{}]", i + 1, c.join(", "))
        })
        .collect();
    outcome(
        table.non_increasing(0.1) && elapsed <= Duration::from_secs(600),
        format!(
            "{} non-increasing within 10%; {:.1}s (<= 600s)",
            cols.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

// 9. triangular decoupling
fn decoupling() -> Outcome {
    let grid = cfl_grid(1, 64, 0.1, 2.5).unwrap();
    let k = make_kernel(&grid, 0.1).unwrap();
    let build = |u1: Field| {
        SktSpec::new(
            grid,
            vec![
                CoeffFamily::ClampedAffine {
                    base: 1.0,
                    couplings: vec![0.5, 0.5],
                    lo: 0.5,
                    hi: 2.5,
                    arg_smoothing: 0.0,
                },
                CoeffFamily::RationalSaturating {
                    base: 1.0,
                    couplings: vec![1.0],
                    lo: 0.5,
                    hi: 2.0,
                },
                CoeffFamily::Constant { value: 0.8 },
            ],
            vec![
                ReactionFamily::LotkaVolterra {
                    growth: 1.0,
                    competition: vec![1.0, 0.5, 0.5],
                },
                ReactionFamily::LotkaVolterra {
                    growth: 1.0,
                    competition: vec![0.7, 1.0, 0.3],
                },
                ReactionFamily::LotkaVolterra {
                    growth: 0.5,
                    competition: vec![0.0, 0.0, 1.0],
                },
            ],
            vec![Smoother::Mollifier(k.clone()); 3],
            vec![
                u1,
                sample::smooth_positive(grid, &mut rng(2, 0), 3, 1.0, 0.2),
                sample::smooth_positive(grid, &mut rng(3, 0), 3, 1.0, 0.2),
            ],
        )
        .unwrap()
    };
    let a = solve_system(&build(sample::smooth_positive(grid, &mut rng(1, 0), 3, 1.0, 0.2))).unwrap();
    let b = solve_system(&build(sample::uniform_cells(grid, &mut rng(1, 1), 0.0, 3.0))).unwrap();
    let last_identical = a.species[2]
        .slices()
        .iter()
        .zip(b.species[2].slices())
        .all(|(x, y)| x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let others_moved = a.species[0] != b.species[0] && a.species[1] != b.species[1];
    outcome(
        last_identical && others_moved,
        format!("I=3: u3 bit-identical under a u1 perturbation: {last_identical}; u1, u2 respond: {others_moved}"),
    )
}

fn relative_mass_drift(traj: &Trajectory) -> f64 {
    let m0 = integrate(traj.slice(0));
    traj.slices().iter().map(|s| (integrate(s) - m0).abs()).fold(0.0, f64::max) / m0.abs()
}

// 10. mass conservation
fn mass() -> Outcome {
    let mut drifts = Vec::new();
    for (dim, n) in [(1, 128), (2, 32)] {
        let grid = cfl_grid(dim, n, 0.1, 3.0).unwrap();
        let mu = rough_mu(grid, 5, true);
        let z0 = sample::uniform_cells(grid, &mut rng(5, 2), 0.0, 1.0);
        let source = KolmogorovProblem::homogeneous(mu.clone(), z0.clone()).unwrap();
        drifts.push(relative_mass_drift(&solve_forward(&source).unwrap().trajectory));
        let reaction = KolmogorovProblem::new(mu, Forcing::Reaction(Trajectory::zeros(grid)), z0).unwrap();
        drifts.push(relative_mass_drift(&solve_forward(&reaction).unwrap().trajectory));
    }
    let grid = cfl_grid(1, 128, 0.25, 2.0).unwrap();
    let spec = reference_skt(grid);
    let k = make_kernel(&grid, 0.05).unwrap();
    let spec = SktSpec::new(
        grid,
        spec.coeffs().to_vec(),
        vec![ReactionFamily::zero(2); 2],
        vec![Smoother::Mollifier(k); 2],
        spec.init().to_vec(),
    )
    .unwrap();
    let sol = solve_system(&spec).unwrap();
    drifts.extend(sol.species.iter().map(relative_mass_drift));
    let worst = drifts.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-11,
        format!("max relative drift {worst:.2e} (<= 1e-11): forward 1D/2D source and reaction modes, SKT both species"),
    )
}

// 11. weights toolkit
fn weights() -> Outcome {
    let unit = [Grid::new(1, 64, 1.0, 1).unwrap(), Grid::new(2, 32, 1.0, 1).unwrap()]
        .iter()
        .all(|g| a2_constant(&Weight::uniform(*g)) == 1.0);
    let dominates = (0..20u64).all(|seed| {
        let g = Grid::new(1 + (seed % 2) as usize, 32, 1.0, 1).unwrap();
        let f = sample::uniform_cells(g, &mut rng(seed, 0), -5.0, 5.0);
        let mf = maximal_function(&f);
        mf.values().iter().zip(f.values()).all(|(m, v)| *m >= v.abs())
    });
    let g = Grid::new(1, 128, 1.0, 1).unwrap();
    let (a2s, rs): (Vec<f64>, Vec<f64>) = [0.0, 0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&alpha| {
            let w = Weight::power(g, alpha);
            (a2_constant(&w), maximal_boundedness(&w, 16, 0).ratio)
        })
        .unzip();
    let rho = spearman(&a2s, &rs);
    outcome(
        unit && dominates && rho > 0.8,
        format!("a2(1) == 1: {unit}; Mf >= |f| on 20 fields: {dominates}; Spearman(a2, R) = {rho:.3} (> 0.8) over 5 power weights"),
    )
}

// 12. determinism
fn determinism() -> Outcome {
    let config = |dir: &std::path::Path| {
        parse_config(&format!(
            r#"{{"grid": {{"n": 64, "t_final": 0.1}}, "seed": 17,
                "output": {{"dir": {:?}, "dump_trajectories": true}},
                "problem": {{"kind": "skt", "eps": 0.1, "species": [
                  {{"coeff": {{"kind": "clamped_affine", "base": 1.0, "couplings": [1.0], "lo": 0.5, "hi": 2.0}},
                    "reaction": {{"kind": "lotka_volterra", "growth": 1.0, "competition": [1.0, 1.0]}},
                    "init": {{"family": "random_smooth", "modes": 3, "floor": 0.1}}}},
                  {{"coeff": {{"kind": "constant", "value": 1.0}},
                    "init": {{"family": "random", "lo": 0.0, "hi": 2.0}}}}]}}}}"#,
            dir
        ))
        .unwrap()
    };
    let root = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = (0..3).map(|i| root.path().join(format!("run{i}"))).collect();
    lab::run(&config(&dirs[0])).unwrap();
    lab::run(&config(&dirs[1])).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| lab::run(&config(&dirs[2])).unwrap());
    let files = ["series.csv", "u1.cdl", "u2.cdl"];
    let identical = files.iter().all(|f| {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        dirs[1..].iter().all(|d| std::fs::read(d.join(f)).unwrap() == a)
    });
    outcome(
        identical,
        format!(
            "{} artifacts byte-identical across 3 seeded runs (one single-threaded): {identical}",
            files.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("discrete duality identity", duality_identity),
        ("heat oracle", heat_oracle),
        ("sign properties", sign_properties),
        ("comparison principle", comparison),
        ("a-priori energy estimate", apriori),
        ("duality estimate constant", duality_constant),
        ("stability transfer", stability),
        ("SKT kernel-to-Dirac convergence", skt_convergence),
        ("triangular decoupling", decoupling),
        ("mass conservation", mass),
        ("weights toolkit", weights),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2}. {name}: {}", i + 1, result.detail);
        if !result.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
