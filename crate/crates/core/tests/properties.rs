use monodiff::graph::{AffineBranch, GraphKind, MonotoneGraph, Regularization};
use monodiff::noise::{self, HsTarget, NoiseSpec};
use monodiff::solver::{self, SolverConfig};
use monodiff::spatial::{Field, SpatialOperator};
use monodiff::verifier::{self, EnsembleSettings};
use proptest::prelude::*;

fn graph_by_index(i: usize) -> MonotoneGraph {
    match i % 9 {
        0 => MonotoneGraph::linear(),
        1 => MonotoneGraph::power_law(2.0).unwrap(),
        2 => MonotoneGraph::power_law(0.4).unwrap(),
        3 => MonotoneGraph::fast_diffusion(),
        4 => MonotoneGraph::logarithmic(1.0).unwrap(),
        5 => MonotoneGraph::exponential_power(1.0, 1.0).unwrap(),
        6 => MonotoneGraph::step(),
        7 => MonotoneGraph::shifted_identity_jump(),
        _ => MonotoneGraph::piecewise(
            vec![-0.5, 1.0],
            vec![
                AffineBranch { offset: -1.0, slope: 1.0 },
                AffineBranch { offset: 0.0, slope: 0.2 },
                AffineBranch { offset: 0.7, slope: 2.0 },
            ],
        )
        .unwrap(),
    }
}

fn bound(g: &MonotoneGraph) -> f64 {
    if matches!(g.kind(), GraphKind::ExponentialPower { .. }) {
        3.0
    } else {
        6.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn yosida_lies_in_graph_at_resolvent(i in 0usize..9, t in -1.0f64..1.0, le in -3.0f64..0.5) {
        let g = graph_by_index(i);
        let u = t * bound(&g);
        let reg = Regularization::new(10f64.powf(le)).unwrap();
        let p = g.yosida_with_slope(&reg, u).unwrap();
        prop_assert!(g.contains(p.resolvent, p.value, 1e-9 * (1.0 + p.value.abs())));
        prop_assert!((p.resolvent + reg.lambda * p.value - u).abs() <= 1e-12 * (1.0 + u.abs()));
        prop_assert!(p.slope >= 0.0 && p.slope <= 1.0 / reg.lambda * (1.0 + 1e-12));
    }

    #[test]
    fn resolvent_is_monotone_and_nonexpansive(i in 0usize..9, a in -1.0f64..1.0, b in -1.0f64..1.0, le in -3.0f64..0.5) {
        let g = graph_by_index(i);
        let (u, v) = (a * bound(&g), b * bound(&g));
        let reg = Regularization::new(10f64.powf(le)).unwrap();
        let (ju, jv) = (g.resolvent(&reg, u).unwrap(), g.resolvent(&reg, v).unwrap());
        prop_assert!((ju - jv) * (u - v) >= -1e-14);
        prop_assert!((ju - jv).abs() <= (u - v).abs() * (1.0 + 1e-12) + 1e-14);
        let (yu, yv) = (g.yosida(&reg, u).unwrap(), g.yosida(&reg, v).unwrap());
        prop_assert!((yu - yv) * (u - v) >= -1e-10);
    }

    #[test]
    fn moreau_envelope_derivative_is_yosida(i in 0usize..9, t in -0.9f64..0.9, le in -2.0f64..0.0) {
        let g = graph_by_index(i);
        let u = t * bound(&g);
        let reg = Regularization::new(10f64.powf(le)).unwrap();
        let h = 1e-6 * (1.0 + u.abs());
        let fd = (g.moreau_envelope(&reg, u + h).unwrap() - g.moreau_envelope(&reg, u - h).unwrap()) / (2.0 * h);
        let y = g.yosida(&reg, u).unwrap();
        prop_assert!((fd - y).abs() <= 1e-5 * (1.0 + y.abs()), "fd {} vs {}", fd, y);
    }

    #[test]
    fn fenchel_young_nonnegative(i in 0usize..9, a in -1.0f64..1.0, p in -4.0f64..4.0) {
        let g = graph_by_index(i);
        let y = a * bound(&g);
        let gap = g.fenchel_gap(y, p).unwrap();
        prop_assert!(gap >= -1e-9 * (1.0 + (p * y).abs()));
    }

    #[test]
    fn smoother_is_sub_markov(n in 3usize..24, eps in 1e-4f64..1.0, m in 1u32..4, seed in 0u64..1000) {
        let op = SpatialOperator::new(1, n).unwrap();
        let u = Field::from_fn(op.grid(), |x, _| (x * 37.0 + seed as f64).sin() * 0.5 + 0.5);
        let s = op.smoothing_resolvent(eps, m, &u).unwrap();
        prop_assert!(s.values().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        // Semigroup: m single applications equal the m-th power.
        let mut it = u.clone();
        for _ in 0..m {
            it = op.smoothing_resolvent(eps, 1, &it).unwrap();
        }
        let d = it.sub(&s).unwrap();
        prop_assert!(d.max_abs() <= 1e-12);
    }

    #[test]
    fn norm_ordering(dim in 1usize..3, n in 3usize..10, seed in 0u64..1000) {
        let op = SpatialOperator::new(dim, n).unwrap();
        let u = Field::from_fn(op.grid(), |x, y| (x * 11.0 + y * 5.0 + seed as f64).cos());
        let hm1 = op.norm_h_minus1(&u).unwrap();
        let l2 = op.norm_l2(&u);
        prop_assert!(hm1 <= l2 / op.eigenvalues()[0].sqrt() * (1.0 + 1e-12));
        let back = op.from_modes(&op.to_modes(u.values()));
        for (a, b) in back.iter().zip(u.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn ito_isometry_for_convolution() {
    let op = SpatialOperator::new(1, 8).unwrap();
    let coeffs: Vec<f64> = op.eigenvalues().iter().map(|mu| mu.powf(-0.5)).collect();
    let spec = NoiseSpec::additive(coeffs, 0.75);
    let hs = spec.hs_norm(&op, HsTarget::H).unwrap().powi(2);
    let (dt, steps, paths) = (0.01, 20, 4000);
    let samples: Vec<f64> = (0..paths)
        .map(|i| {
            let w = noise::sample_wiener(8, dt, steps, noise::path_seed(99, i)).unwrap();
            let c = noise::convolution_path(&spec, &op, &w).unwrap();
            op.norm_h_minus1_values(c.values.last().unwrap()).powi(2)
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / paths as f64;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64).sqrt();
    let expected = dt * steps as f64 * hs;
    assert!((mean - expected).abs() <= 4.0 * sd / (paths as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn convolution_sup_stable_under_mode_doubling() {
    let op = SpatialOperator::new(1, 32).unwrap();
    let coeffs = |k: usize| -> Vec<f64> { op.eigenvalues()[..k].iter().map(|mu| mu.powf(-1.5)).collect() };
    let w = noise::sample_wiener(32, 1e-3, 200, 4).unwrap();
    let d16 = noise::convolution_path(&NoiseSpec::additive(coeffs(16), 1.0), &op, &w.truncate(16)).unwrap().delta;
    let d32 = noise::convolution_path(&NoiseSpec::additive(coeffs(32), 1.0), &op, &w).unwrap().delta;
    assert!((d16 - d32).abs() <= 0.01 * d32, "{d16} vs {d32}");
}

#[test]
fn multiplicative_lipschitz_bound_holds() {
    for (dim, n, modes) in [(1, 12, 12), (1, 12, 5), (2, 4, 16)] {
        let op = SpatialOperator::new(dim, n).unwrap();
        for target in [HsTarget::H, HsTarget::Smooth] {
            let spec = NoiseSpec::multiplicative(0.7, 0.05, 1.5, 1.2, modes);
            let lip = spec.lipschitz_constant(&op, target).unwrap();
            assert!(lip > 0.0);
            let mut worst: f64 = 0.0;
            for s in 0..40 {
                let x = Field::from_fn(op.grid(), |a, b| ((a + 0.3 * b) * (s as f64 + 1.0) * 3.1).sin());
                let y = Field::from_fn(op.grid(), |a, b| ((a - b) * (s as f64 + 2.0) * 1.7).cos() * 0.4);
                let bx = spec.apply_b(&op, x.values()).unwrap();
                let by = spec.apply_b(&op, y.values()).unwrap();
                let (sx, sy) = match (bx, by) {
                    (noise::NoiseOperator::Multiplier(a), noise::NoiseOperator::Multiplier(b)) => (a, b),
                    _ => unreachable!(),
                };
                let diffop = noise::NoiseOperator::Multiplier(sx.iter().zip(&sy).map(|(a, b)| a - b).collect());
                let num = diffop.hs_norm_sq(&op, target, spec.gamma, modes).sqrt();
                let den = op.norm_h_minus1(&x.sub(&y).unwrap()).unwrap();
                worst = worst.max(num / den);
            }
            assert!(worst <= lip * (1.0 + 1e-6), "{worst} > {lip}");
            // The bound is attained up to sampling, not wildly loose.
            assert!(worst >= 0.05 * lip);
        }
    }
}

#[test]
fn deterministic_energy_decays_for_every_graph() {
    let op = SpatialOperator::new(1, 12).unwrap();
    let x = Field::from_fn(op.grid(), |s, _| (std::f64::consts::PI * s).sin() - 0.3 * (4.0 * s).cos());
    for i in 0..9 {
        let g = graph_by_index(i);
        let cfg = SolverConfig::new(2e-3, 0.04).with_schedule(vec![0.05, 0.02]);
        let p = solver::solve_deterministic(&g, &op, &x, &cfg).unwrap();
        let e = &p.diagnostics.energies;
        assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10) + 1e-14), "{}", g.name());
        assert!(p.diagnostics.balance_residual <= 1e-8, "{}", g.name());
    }
}

#[test]
fn deterministic_paths_contract() {
    let op = SpatialOperator::new(1, 12).unwrap();
    let g = MonotoneGraph::power_law(3.0).unwrap();
    let x = Field::from_fn(op.grid(), |s, _| (std::f64::consts::PI * s).sin());
    let y = Field::from_fn(op.grid(), |s, _| (2.0 * std::f64::consts::PI * s).sin() * 0.8);
    let cfg = SolverConfig::new(1e-3, 0.05).with_schedule(vec![0.01]);
    let a = solver::solve_deterministic(&g, &op, &x, &cfg).unwrap();
    let b = solver::solve_deterministic(&g, &op, &y, &cfg).unwrap();
    let d: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(u, v)| op.norm_h_minus1(&u.sub(v).unwrap()).unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn solves_are_reproducible_and_thread_independent() {
    let op = SpatialOperator::new(1, 10).unwrap();
    let g = MonotoneGraph::fast_diffusion();
    let spec = NoiseSpec::additive(op.eigenvalues().iter().map(|m| m.powf(-1.5)).collect(), 1.0);
    let x = Field::from_fn(op.grid(), |s, _| s * (1.0 - s));
    let cfg = SolverConfig::new(1e-2, 0.2).with_schedule(vec![0.05, 0.025]);
    let ensemble = EnsembleSettings { paths: 8, base_seed: 17 };
    let run = || {
        verifier::check_energy_identity(&g, &op, &x, &spec, &cfg, &ensemble, false).unwrap()
    };
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(serial, parallel);
}

#[test]
fn apriori_bound_linear_and_exponential() {
    let op = SpatialOperator::new(1, 10).unwrap();
    let x = Field::from_fn(op.grid(), |s, _| (std::f64::consts::PI * s).sin());
    for (g, noisy) in [
        (MonotoneGraph::linear(), false),
        (MonotoneGraph::exponential_power(1.0, 1.0).unwrap(), true),
    ] {
        let spec = NoiseSpec::additive(op.eigenvalues().iter().map(|m| m.powf(-1.5)).collect(), 1.0);
        let mut ratios = Vec::new();
        for dt in [2e-3, 1e-3] {
            let cfg = SolverConfig::new(dt, 0.1).with_schedule(vec![0.05]);
            let p = if noisy {
                let w = noise::sample_wiener(10, dt, cfg.steps().unwrap(), 3).unwrap();
                solver::solve_additive(&g, &op, &x, &spec, &w, &cfg).unwrap()
            } else {
                solver::solve_deterministic(&g, &op, &x, &cfg).unwrap()
            };
            let r = verifier::check_apriori(&p, &g, &op).unwrap();
            assert!(r.passed, "{}", r.summary_line());
            assert!(r.measured["max_ratio"] < 1.0);
            ratios.push(r.measured["max_ratio"]);
        }
        if !noisy {
            assert!((ratios[0] - ratios[1]).abs() < 0.05 * ratios[0]);
        }
    }
}

#[test]
fn lipschitz_solution_map_pairs() {
    let op = SpatialOperator::new(1, 8).unwrap();
    let g = MonotoneGraph::power_law(2.0).unwrap();
    let unit = NoiseSpec::multiplicative(1.0, 0.05, 1.0, 1.0, 8);
    let l1 = unit.lipschitz_constant(&op, HsTarget::H).unwrap();
    let spec = NoiseSpec::multiplicative(0.5 / l1, 0.05, 1.0, 1.0, 8);
    let base = Field::from_fn(op.grid(), |s, _| (std::f64::consts::PI * s).sin());
    let pairs: Vec<(Field, Field)> = (0..3)
        .map(|k| {
            let y = Field::from_fn(op.grid(), |s, _| {
                (std::f64::consts::PI * s).sin() + 0.2 * ((k + 2) as f64 * std::f64::consts::PI * s).sin()
            });
            (base.clone(), y)
        })
        .chain(std::iter::once((base.clone(), base.clone())))
        .collect();
    let mut cfg = SolverConfig::new(1.0 / 64.0, 0.5).with_schedule(vec![0.01]);
    cfg.picard.alpha = 1.0;
    let r = verifier::check_lipschitz_solution_map(&g, &op, &spec, &pairs, &cfg, &EnsembleSettings { paths: 16, base_seed: 5 })
        .unwrap();
    assert!(r.passed, "{}", r.summary_line());
    assert!(r.measured.contains_key("pair2_sup_ratio"));
    assert!(!r.measured.contains_key("pair3_sup_ratio"));

    let zero = NoiseSpec::multiplicative(0.0, 0.05, 1.0, 1.0, 8);
    let r = verifier::check_lipschitz_solution_map(&g, &op, &zero, &pairs[..1], &cfg, &EnsembleSettings { paths: 2, base_seed: 5 })
        .unwrap();
    assert!(r.rows.windows(2).all(|w| w[1].measured <= w[0].measured * (1.0 + 1e-9)));
}

#[test]
fn picard_zero_scale_is_deterministic() {
    let op = SpatialOperator::new(1, 8).unwrap();
    let g = MonotoneGraph::linear();
    let x = op.eigenvector(0);
    let spec = NoiseSpec::multiplicative(0.0, 0.05, 1.0, 1.0, 8);
    let cfg = SolverConfig::new(0.01, 0.1).with_schedule(vec![0.01]);
    let w = solver::ensemble_wieners(8, 0.01, 10, 1, 3).unwrap();
    let out = solver::picard_solve(&g, &op, &x, &spec, &w, &cfg).unwrap();
    assert!(out.converged);
    assert_eq!(out.ratios, vec![0.0]);
    let det = solver::solve_deterministic(&g, &op, &x, &cfg).unwrap();
    assert!(out.paths[0].terminal().sub(det.terminal()).unwrap().max_abs() < 1e-14);
}
