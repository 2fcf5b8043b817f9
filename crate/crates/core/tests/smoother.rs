mod common;

use enso_core::assimilation::{
    conditional_sample_with, enks_recover_with, smooth, InitialEnsemble, ObservationSet, SmootherConfig,
};
use enso_core::model::{integrate, ModelSpec, NoiseSpec, SeasonalBasis, SimConfig, StateVarSet, Term, Var, VariantId};
use nalgebra::{DMatrix, DVector};

const A: [[f64; 2]; 2] = [[-0.5, 1.0], [-1.0, -0.5]];
const SIGMA: [f64; 2] = [0.3, 0.05];
const OBS_NOISE: f64 = 0.1;

fn linear_model() -> ModelSpec {
    let vars = StateVarSet::new(vec![Var::TC, Var::TE]).unwrap();
    let term = |c, v| Term::new(c, &[(v, 1)], SeasonalBasis::Constant);
    ModelSpec::new(
        VariantId::Custom,
        vars,
        vec![vec![term(A[0][0], Var::TC), term(A[0][1], Var::TE)], vec![term(A[1][0], Var::TC), term(A[1][1], Var::TE)]],
        vec![NoiseSpec::Additive { sigma: SIGMA[0] }, NoiseSpec::Additive { sigma: SIGMA[1] }],
    )
    .unwrap()
}

fn observations(seed: u64, n_obs: usize, noise: f64) -> (ObservationSet, Vec<f64>) {
    let cfg = SimConfig {
        dt: 0.01,
        duration: 0.5 * (n_obs - 1) as f64,
        burn_in: 0.0,
        output_stride: 50,
        seed,
        initial_state: vec![0.0, 0.0],
        calendar_offset_months: 0,
    };
    let tr = integrate(&linear_model(), &cfg).unwrap();
    let mut obs = ObservationSet::from_trajectory(&tr, &[Var::TC], Some(vec![noise])).unwrap();
    // Observation error drawn independently of the path.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed + 1000);
    for k in 0..obs.len() {
        let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        obs.values[(k, 0)] += noise * e;
    }
    (obs, tr.column(Var::TE).unwrap())
}

fn config(members: usize, seed: u64) -> SmootherConfig {
    SmootherConfig {
        ensemble_size: members,
        seed,
        inflation: 1.0,
        dt: 0.01,
        initial: InitialEnsemble::Gaussian { mean: vec![0.0, 0.0], std: vec![0.3, 0.3] },
    }
}

fn oracle(obs: &ObservationSet, noise: f64) -> common::LinearSmoother {
    let a = DMatrix::from_row_slice(2, 2, &[A[0][0], A[0][1], A[1][0], A[1][1]]);
    let (f, q) = common::euler_transition(&a, &SIGMA, 0.01, 50);
    let ys: Vec<f64> = obs.values.column(0).iter().copied().collect();
    common::exact_smoother(&f, &q, 0, noise, DVector::zeros(2), DMatrix::identity(2, 2) * 0.09, &ys)
}

#[test]
fn ensemble_mean_matches_exact_smoother() {
    let (obs, _) = observations(1, 200, OBS_NOISE);
    let rel = mean_error(&obs, 500, 7);
    assert!(rel < 0.05, "relative RMS {rel}");
}

#[test]
fn sample_spread_matches_exact_smoother() {
    let (obs, _) = observations(2, 200, OBS_NOISE);
    let exact = oracle(&obs, OBS_NOISE);
    let samples = conditional_sample_with(&linear_model(), &obs, &[Var::TE], 500, &config(500, 9)).unwrap();
    let t = obs.len();
    let mut ratio = 0.0;
    for k in 0..t {
        let v: Vec<f64> = samples.iter().map(|s| s.values[k]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        ratio += var / exact.covs[k][(1, 1)];
    }
    ratio /= t as f64;
    assert!((ratio - 1.0).abs() < 0.10, "variance ratio {ratio}");
}

#[test]
fn posterior_tracks_truth() {
    let (obs, truth) = observations(3, 300, OBS_NOISE);
    let post = enks_recover_with(&linear_model(), &obs, &config(100, 1)).unwrap();
    let c = enso_core::assimilation::correlation_score(&post.mean_of(Var::TE).unwrap(), &truth).unwrap();
    assert!(c > 0.7, "{c}");
}

#[test]
fn larger_observation_noise_widens_posterior() {
    let mut wins = 0;
    for seed in 0..5 {
        let (obs, _) = observations(10 + seed, 100, 0.05);
        let mut noisy = obs.clone();
        noisy.noise_std = vec![0.5];
        let tight = enks_recover_with(&linear_model(), &obs, &config(200, seed)).unwrap();
        let loose = enks_recover_with(&linear_model(), &noisy, &config(200, seed)).unwrap();
        let mean_std = |p: &enso_core::assimilation::PosteriorSeries| p.std.iter().sum::<f64>() / p.std.len() as f64;
        if mean_std(&loose) >= mean_std(&tight) {
            wins += 1;
        }
    }
    assert_eq!(wins, 5);
}

#[test]
fn deterministic_given_seed() {
    let (obs, _) = observations(4, 50, OBS_NOISE);
    let a = smooth(&linear_model(), &obs, &config(30, 5)).unwrap();
    let b = smooth(&linear_model(), &obs, &config(30, 5)).unwrap();
    assert_eq!(a.smoothed, b.smoothed);
}

fn mean_error(obs: &ObservationSet, members: usize, seed: u64) -> f64 {
    let exact = oracle(obs, OBS_NOISE);
    let post = enks_recover_with(&linear_model(), obs, &config(members, seed)).unwrap();
    let ens = post.mean_of(Var::TE).unwrap();
    let ex: Vec<f64> = exact.means.iter().map(|m| m[1]).collect();
    let diff: Vec<f64> = ens.iter().zip(&ex).map(|(a, b)| a - b).collect();
    common::rms(&diff) / common::rms(&ex)
}

#[test]
fn ensemble_error_shrinks_like_monte_carlo() {
    let (obs, _) = observations(1, 200, OBS_NOISE);
    let small: f64 = (0..2).map(|s| mean_error(&obs, 125, 20 + s)).sum::<f64>() / 2.0;
    let large: f64 = (0..2).map(|s| mean_error(&obs, 2000, 30 + s)).sum::<f64>() / 2.0;
    // Sixteen times the members: about a quarter of the error.
    assert!(large < 0.4 * small, "{small} -> {large}");
}
