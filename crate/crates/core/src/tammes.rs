//! Spreading `I` unit vectors in `R^D` to maximize the smallest pairwise angle.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TammesConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    /// Log-sum-exp sharpness, annealed geometrically from start to end.
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Follow the single closest pair instead of the smoothed maximum.
    pub hard_min: bool,
}

impl Default for TammesConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            restarts: 5,
            learning_rate: 0.05,
            temperature_start: 10.0,
            temperature_end: 1000.0,
            hard_min: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TammesResult {
    /// `I x D` unit rows.
    pub vectors: DMatrix<f64>,
    pub stats: AngleStats,
    /// Restart that produced `vectors`.
    pub restart: usize,
    /// Best min angle (degrees) reached by each restart.
    pub restart_min_angles: Vec<f64>,
    /// Min angle of the winning restart's iterate every 100 iterations.
    pub trace: Vec<f64>,
}

/// Min/max/mean/population-std of all pairwise angles in degrees.
pub fn pairwise_angle_stats(vectors: &DMatrix<f64>) -> Result<AngleStats> {
    let n = vectors.nrows();
    if n < 2 {
        return Err(Error::Shape("need at least two vectors".into()));
    }
    for (i, r) in vectors.row_iter().enumerate() {
        if (r.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!(
                "row {} has norm {}, expected unit length",
                i,
                r.norm()
            )));
        }
    }
    let mut angles = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let c = vectors.row(i).dot(&vectors.row(j)).clamp(-1.0, 1.0);
            angles.push(c.acos().to_degrees());
        }
    }
    let count = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / count;
    let var = angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / count;
    Ok(AngleStats {
        min: angles.iter().copied().fold(f64::INFINITY, f64::min),
        max: angles.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    })
}

fn max_cosine(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    let mut m = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            m = m.max(gram[(i, j)]);
        }
    }
    m
}

fn normalize_rows(v: &mut DMatrix<f64>) {
    for mut r in v.row_iter_mut() {
        let n = r.norm();
        if n > 0.0 {
            r /= n;
        }
    }
}

fn min_angle_deg(max_cos: f64) -> f64 {
    max_cos.clamp(-1.0, 1.0).acos().to_degrees()
}

struct Run {
    vectors: DMatrix<f64>,
    best_angle: f64,
    trace: Vec<f64>,
}

fn run_restart(count: usize, dim: usize, seed: u64, cfg: &TammesConfig) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DMatrix::from_fn(count, dim, |_, _| StandardNormal.sample(&mut rng));
    normalize_rows(&mut v);

    let mut best = v.clone();
    let mut best_cos = max_cosine(&(&v * v.transpose()));
    let mut trace = Vec::new();
    let (b0, b1) = (cfg.temperature_start, cfg.temperature_end);
    let steps = cfg.iterations.max(1);
    for it in 0..cfg.iterations {
        let frac = it as f64 / steps as f64;
        let beta = b0 * (b1 / b0).powf(frac);
        let lr = cfg.learning_rate * (1.0 - frac).max(0.01);
        let gram = &v * v.transpose();
        let cur = max_cosine(&gram);
        if cur < best_cos {
            best_cos = cur;
            best.copy_from(&v);
        }
        if it % 100 == 0 {
            trace.push(min_angle_deg(cur));
        }

        // weights of the smoothed max over pairwise cosines
        let mut weights = DMatrix::zeros(count, count);
        if cfg.hard_min {
            'outer: for i in 0..count {
                for j in i + 1..count {
                    if gram[(i, j)] == cur {
                        weights[(i, j)] = 1.0;
                        weights[(j, i)] = 1.0;
                        break 'outer;
                    }
                }
            }
        } else {
            let mut total = 0.0;
            for i in 0..count {
                for j in i + 1..count {
                    let w = (beta * (gram[(i, j)] - cur)).exp();
                    weights[(i, j)] = w;
                    weights[(j, i)] = w;
                    total += w;
                }
            }
            weights /= total;
        }
        // d/dv_i of sum_{i<j} w_ij v_i . v_j, projected onto each row's tangent space
        let mut grad = &weights * &v;
        for i in 0..count {
            let radial = grad.row(i).dot(&v.row(i));
            let vi = v.row(i).into_owned();
            let mut g = grad.row_mut(i);
            g -= vi * radial;
        }
        let gmax = grad.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        if gmax > 0.0 {
            v -= grad * (lr / gmax);
        }
        normalize_rows(&mut v);
    }
    let final_cos = max_cosine(&(&v * v.transpose()));
    if final_cos < best_cos {
        best_cos = final_cos;
        best = v;
    }
    Run {
        vectors: best,
        best_angle: min_angle_deg(best_cos),
        trace,
    }
}

/// Best of `cfg.restarts` independent runs seeded from `seed`.
pub fn solve_min_angle(
    count: usize,
    dim: usize,
    seed: u64,
    cfg: &TammesConfig,
) -> Result<TammesResult> {
    if count < 2 || dim < 1 {
        return Err(Error::InvalidConfig(format!(
            "need I >= 2 and D >= 1, got I = {}, D = {}",
            count, dim
        )));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.temperature_start > 0.0 && cfg.temperature_end > 0.0) {
        return Err(Error::InvalidConfig(
            "learning_rate and temperatures must be positive".into(),
        ));
    }
    if dim == 1 {
        // the sphere is {-1, 1}: alternate signs
        let v = DMatrix::from_fn(count, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let stats = pairwise_angle_stats(&v)?;
        return Ok(TammesResult {
            vectors: v,
            stats,
            restart: 0,
            restart_min_angles: vec![stats.min],
            trace: Vec::new(),
        });
    }
    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(count, dim, restart_seed(seed, r), cfg))
        .collect();
    let mut winner = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.best_angle > runs[winner].best_angle {
            winner = r;
        }
    }
    let restart_min_angles = runs.iter().map(|r| r.best_angle).collect();
    let run = runs.into_iter().nth(winner).expect("at least one restart");
    Ok(TammesResult {
        stats: pairwise_angle_stats(&run.vectors)?,
        vectors: run.vectors,
        restart: winner,
        restart_min_angles,
        trace: run.trace,
    })
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (restart as u64)
            .wrapping_add(1)
            .wrapping_mul(0xD1B5_4A32_D192_ED03)
}
