#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unibasis::losses::*;
use unibasis::orthobasis::{param_count, SkewParams};

pub const FD_STEP: f64 = 1e-6;

/// Central finite differences of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Below this max-norm a gradient counts as zero (a single detector's entropy is
/// constant, for one) and the error is measured in absolute terms instead.
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-3;

/// Worst-case relative error between two gradient vectors, measured against
/// the larger of the two gradients' max-norms (floored at `GRADIENT_SCALE_FLOOR`).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(GRADIENT_SCALE_FLOOR, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub struct Case {
    pub x: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub d: usize,
    pub i: usize,
    pub b: f64,
    pub t: f64,
    pub state: StandardizationState,
    pub nu: Vec<f64>,
    pub gamma: f64,
}

pub fn random_case(seed: u64, d: usize, batch: usize, running: bool) -> Case {
    let mut r = rng(seed);
    let i = r.random_range(1..=d);
    let x = random_matrix(&mut r, batch, d, 2.0);
    let theta = random_vec(&mut r, param_count(d), 0.7);
    let mut state = StandardizationState::new(i);
    if running {
        state.mode = StatsMode::Running;
        state.running_mean = random_vec(&mut r, i, 0.5);
        state.running_var = (0..i).map(|_| r.random_range(0.5..2.0)).collect();
        state.updates = 1;
    }
    let n_part = r.random_range(1..=i.min(3));
    let cfg = PartitionConfig::uniform(n_part, r.random_range(0.3..0.95), r.random_range(1.5..3.0));
    let nu = partition_thresholds(i, &cfg).unwrap();
    Case {
        x,
        theta,
        d,
        i,
        b: r.random_range(-0.5..1.0),
        t: r.random_range(0.3..1.2),
        state,
        nu,
        gamma: cfg.gamma,
    }
}

pub fn eval(case: &Case, weights: &LossWeights, params: &[f64]) -> f64 {
    let n = param_count(case.d);
    let theta = SkewParams::new(case.d, params[..n].to_vec()).unwrap();
    total_loss_and_grads(
        &case.x,
        &theta,
        case.i,
        ClassifierParams {
            b: params[n],
            t: params[n + 1],
        },
        weights,
        &case.state,
        &case.nu,
        case.gamma,
    )
    .unwrap()
    .loss
    .total
}

/// Max relative error of the analytic gradient against central differences.
pub fn check(case: &Case, weights: &LossWeights) -> f64 {
    let mut params = case.theta.clone();
    params.push(case.b);
    params.push(case.t);
    let n = param_count(case.d);
    let theta = SkewParams::new(case.d, case.theta.clone()).unwrap();
    let out = total_loss_and_grads(
        &case.x,
        &theta,
        case.i,
        ClassifierParams {
            b: case.b,
            t: case.t,
        },
        weights,
        &case.state,
        &case.nu,
        case.gamma,
    )
    .unwrap();
    let mut analytic = out.grads.theta.clone();
    analytic.push(out.grads.b);
    analytic.push(out.grads.t);
    assert_eq!(analytic.len(), n + 2);
    let numeric = central_difference(&params, FD_STEP, |p| eval(case, weights, p));
    max_relative_error(&analytic, &numeric)
}

pub fn single(term: usize) -> LossWeights {
    let mut w = LossWeights::zero();
    match term {
        0 => w.sparsity = 1.0,
        1 => w.max_activation = 1.0,
        2 => w.inactive = 1.0,
        _ => w.max_margin = 1.0,
    }
    w
}
