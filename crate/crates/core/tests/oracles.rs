use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fp_precoding::fp::{initial_precoders, run_algorithm1};
use fp_precoding::linalg::{c64, CMat};
use fp_precoding::network::{instantaneous_rate, weighted_sum_rate};
use fp_precoding::{
    monte_carlo_weighted_sum_rate, run_algorithm2, structured_moments, ChannelMoments, ChannelRealization, Dims,
    FadingModel, GaussianFadingModel, NetworkConfig, PrecoderSet, StopRule,
};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `E_1(x)` by its power series, fine for `0 < x < 5`.
fn exp_integral_e1(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..200 {
        term *= -x / k as f64;
        sum += term / k as f64;
    }
    -EULER_GAMMA - x.ln() - sum
}

/// Capacity of parallel channels with gains `g` under total power `p`.
fn parallel_capacity(gains: &[f64], power: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, power + gains.iter().map(|g| 1.0 / g).sum::<f64>());
    for _ in 0..200 {
        let mu = 0.5 * (lo + hi);
        let used: f64 = gains.iter().map(|g| (mu - 1.0 / g).max(0.0)).sum();
        if used > power {
            hi = mu;
        } else {
            lo = mu;
        }
    }
    gains.iter().map(|g| (lo * g).max(1.0).ln()).sum()
}

fn random_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

#[test]
fn diagonal_channel_reaches_water_filling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..8 {
        let n = rng.random_range(2..=4);
        let amplitudes: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let h = CMat::from_fn(n, n, |r, c| if r == c { c64(amplitudes[r], 0.0) } else { c64(0.0, 0.0) });
        let (power, sigma2) = (rng.random_range(0.5..5.0), rng.random_range(0.2..1.0));
        let dims = Dims::new(1, 1, n, n);
        let cfg = NetworkConfig::new(dims, power, sigma2).unwrap();
        let moments = ChannelMoments::deterministic(dims, &[h]).unwrap();
        let sol = run_algorithm1(&moments, &cfg, &initial_precoders(&moments, &cfg), &StopRule::default()).unwrap();
        let gains: Vec<f64> = amplitudes.iter().map(|a| a * a / sigma2).collect();
        let capacity = parallel_capacity(&gains, power);
        let rel = (sol.trace.final_fhat() - capacity).abs() / capacity;
        assert!(rel < 1e-3, "fhat {} vs capacity {capacity}", sol.trace.final_fhat());
    }
}

#[test]
fn rayleigh_scalar_rate_matches_closed_form() {
    let dims = Dims::new(1, 1, 1, 1);
    let rho: f64 = 0.5;
    let model = FadingModel::Gaussian(
        GaussianFadingModel::new(
            dims,
            vec![CMat::zeros(1, 1)],
            vec![DMatrix::from_element(1, 1, 1.0 / (1.0 - rho * rho).sqrt())],
            vec![rho],
        )
        .unwrap(),
    );
    let snr = 2.0;
    let cfg = NetworkConfig::new(dims, snr, 1.0).unwrap();
    let v = PrecoderSet::new(dims, vec![CMat::from_element(1, 1, c64(snr.sqrt(), 0.0))]).unwrap();
    let est = monte_carlo_weighted_sum_rate(&model, &cfg, &v, 200_000, 3).unwrap();
    let exact = (1.0 / snr).exp() * exp_integral_e1(1.0 / snr);
    assert!(
        (est.mean - exact).abs() < est.half_width_99,
        "MC {} ± {} vs {exact}",
        est.mean,
        est.half_width_99
    );
}

#[test]
fn series_matches_tabulated_e1() {
    assert!((exp_integral_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-14);
    assert!((exp_integral_e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
}

fn fading_instance(seed: u64, dims: Dims) -> fp_precoding::StructuredMoments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hbar: Vec<CMat> = (0..dims.links()).map(|_| random_cmat(&mut rng, dims.mr, dims.mt)).collect();
    let scale = vec![DMatrix::from_element(dims.mr, dims.mt, 0.7); dims.links()];
    let model = FadingModel::Gaussian(GaussianFadingModel::new(dims, hbar, scale, vec![0.7; dims.users()]).unwrap());
    structured_moments(&model)
}

#[test]
fn multi_cell_solvers_improve_and_stay_feasible() {
    let dims = Dims::new(2, 2, 4, 2);
    let moments = fading_instance(21, dims);
    let cfg = NetworkConfig::new(dims, 4.0, 0.5).unwrap();
    let init = initial_precoders(&moments, &cfg);
    let stop = StopRule { tol: 1e-9, max_iters: 5000 };
    let slow = run_algorithm1(&moments, &cfg, &init, &stop).unwrap();
    let fast = run_algorithm2(&moments, &cfg, &init, &stop, false).unwrap();
    assert!(slow.precoders.is_feasible(cfg.power));
    assert!(fast.precoders.is_feasible(cfg.power));
    assert!(slow.trace.final_fhat() > slow.trace.fhat[0]);
    assert!(fast.trace.final_fhat() > fast.trace.fhat[0]);
}

#[test]
fn single_cell_solvers_agree_under_fading() {
    for seed in 0..5 {
        let dims = Dims::new(1, 3, 6, 2);
        let moments = fading_instance(seed, dims);
        let cfg = NetworkConfig::new(dims, 4.0, 0.5).unwrap();
        let init = initial_precoders(&moments, &cfg);
        let stop = StopRule { tol: 1e-9, max_iters: 5000 };
        let slow = run_algorithm1(&moments, &cfg, &init, &stop).unwrap().trace.final_fhat();
        let fast = run_algorithm2(&moments, &cfg, &init, &stop, false).unwrap().trace.final_fhat();
        assert!((slow - fast).abs() <= 0.01 * slow, "seed {seed}: {slow} vs {fast}");
    }
}

fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    random_cmat(rng, n, n).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rate_is_invariant_to_transmit_rotation(seed in any::<u64>(), l in 1usize..3, k in 1usize..3, mt in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mr = rng.random_range(1..=mt);
        let dims = Dims::new(l, k, mt, mr);
        let links: Vec<CMat> = (0..dims.links()).map(|_| random_cmat(&mut rng, mr, mt)).collect();
        let v: Vec<CMat> = (0..dims.users()).map(|_| random_cmat(&mut rng, mt, mr)).collect();
        let cfg = NetworkConfig::new(dims, 1.0, rng.random_range(0.1..2.0)).unwrap();
        let rotations: Vec<CMat> = (0..l).map(|_| random_unitary(&mut rng, mt)).collect();
        let rotated_links = (0..dims.links())
            .map(|i| &links[i] * &rotations[i % l])
            .collect();
        let rotated_v = (0..dims.users())
            .map(|u| rotations[dims.cell_of(u)].adjoint() * &v[u])
            .collect();
        let before = weighted_sum_rate(
            &ChannelRealization::new(dims, links).unwrap(),
            &PrecoderSet::new(dims, v).unwrap(),
            &cfg,
        ).unwrap();
        let after = weighted_sum_rate(
            &ChannelRealization::new(dims, rotated_links).unwrap(),
            &PrecoderSet::new(dims, rotated_v).unwrap(),
            &cfg,
        ).unwrap();
        prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0));
    }

    #[test]
    fn block_rate_equals_per_user_sum(seed in any::<u64>(), l in 1usize..4, k in 1usize..4, mt in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mr = rng.random_range(1..=mt);
        let dims = Dims::new(l, k, mt, mr);
        let links: Vec<CMat> = (0..dims.links()).map(|_| random_cmat(&mut rng, mr, mt)).collect();
        let v = PrecoderSet::new(dims, (0..dims.users()).map(|_| random_cmat(&mut rng, mt, mr)).collect()).unwrap();
        let weights: Vec<f64> = (0..dims.users()).map(|_| rng.random_range(0.0..2.0)).collect();
        let cfg = NetworkConfig::new(dims, 1.0, rng.random_range(0.01..2.0)).unwrap().with_weights(weights).unwrap();
        let block = ChannelRealization::new(dims, links).unwrap();
        let expected: f64 = (0..dims.users())
            .map(|u| cfg.weights[u] * instantaneous_rate(block.user_links(u), &v, u, cfg.sigma2).unwrap())
            .sum();
        let got = weighted_sum_rate(&block, &v, &cfg).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * expected.max(1.0));
    }

    #[test]
    fn solver_output_is_feasible_and_monotone(seed in any::<u64>(), l in 1usize..3, k in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mt = rng.random_range(1..=4);
        let mr = rng.random_range(1..=mt);
        let dims = Dims::new(l, k, mt, mr);
        let links: Vec<CMat> = (0..dims.links()).map(|_| random_cmat(&mut rng, mr, mt)).collect();
        let power = rng.random_range(0.1..10.0);
        let cfg = NetworkConfig::new(dims, power, rng.random_range(0.05..2.0)).unwrap();
        let moments = ChannelMoments::deterministic(dims, &links).unwrap();
        let stop = StopRule { tol: 1e-8, max_iters: 300 };
        let sol = run_algorithm1(&moments, &cfg, &initial_precoders(&moments, &cfg), &stop).unwrap();
        prop_assert!(sol.precoders.is_feasible(power));
        prop_assert!(sol.trace.worst_relative_decrease() <= 1e-8);
        let rate = weighted_sum_rate(&ChannelRealization::new(dims, links).unwrap(), &sol.precoders, &cfg).unwrap();
        prop_assert!((rate - sol.trace.final_fhat()).abs() <= 1e-6 * rate.max(1.0));
    }
}
