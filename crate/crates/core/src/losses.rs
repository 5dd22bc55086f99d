//! Detector confidences and the four sparsity-driven loss terms.
//!
//! Pipeline for a batch `X` (`B x D`) and detector rows `W_I` (`I x D`):
//!
//! ```text
//! P = X W_I^T                      projections
//! z = (P - mu) / sqrt(var + eps)   per-direction standardization, no affine
//! y = sigmoid((z - b) / M)         M = 1 / t^2
//! q = y / sum_i y                  row-normalized confidences
//! ```
//!
//! Every loss returns its value and `dL/dy`; [`backward`] carries `dL/dy`
//! through the sigmoid and standardization to `dL/dW_I`, `dL/db`, `dL/dt`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orthobasis::{grad_pullback, BasisMatrix, SkewParams};

pub const Y_CLAMP: f64 = 1e-7;
pub const Q_GUARD: f64 = 1e-12;
const LN_2: f64 = std::f64::consts::LN_2;

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub sparsity: f64,
    pub max_activation: f64,
    pub inactive: f64,
    pub max_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sparsity: 2.0,
            max_activation: 5.0,
            inactive: 5.0,
            max_margin: 0.5,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            sparsity: 0.0,
            max_activation: 0.0,
            inactive: 0.0,
            max_margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sparsity,
            self.max_activation,
            self.inactive,
            self.max_margin,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and nonnegative, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Shared bias `b` and margin parameter `t` (margin `M = 1/t^2`) in standardized space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    pub b: f64,
    pub t: f64,
}

impl ClassifierParams {
    pub fn margin(&self) -> f64 {
        1.0 / (self.t * self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    /// Standardize with the current batch's mean and (biased) variance.
    Batch,
    /// Standardize with the exponential running averages.
    Running,
}

/// Per-direction standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: StatsMode,
    /// Number of batches folded into the running averages.
    pub updates: u64,
}

impl StandardizationState {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(directions: usize) -> Self {
        Self {
            running_mean: vec![0.0; directions],
            running_var: vec![1.0; directions],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            mode: StatsMode::Batch,
            updates: 0,
        }
    }

    pub fn directions(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds the batch statistics of `act` into the running averages.
    ///
    /// The running variance uses the unbiased batch estimate.
    pub fn absorb(&mut self, act: &ActivationBatch) {
        let Some(cache) = &act.cache else { return };
        let Some(stats) = &cache.batch_stats else {
            return;
        };
        let n = cache.x.nrows() as f64;
        let m = self.momentum;
        for i in 0..self.directions() {
            let unbiased = if n > 1.0 {
                stats.var[i] * n / (n - 1.0)
            } else {
                stats.var[i]
            };
            self.running_mean[i] = (1.0 - m) * self.running_mean[i] + m * stats.mean[i];
            self.running_var[i] = (1.0 - m) * self.running_var[i] + m * unbiased;
        }
        self.updates += 1;
    }
}

/// Inactive-classifier partition scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub alpha: Vec<f64>,
    pub omega: Vec<f64>,
    pub tau: f64,
    pub gamma: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            alpha: vec![1.0],
            omega: vec![1.0],
            tau: 0.7,
            gamma: 2.5,
        }
    }
}

impl PartitionConfig {
    /// `N` partitions with `alpha = 1/N` and `omega = mu + 1`.
    pub fn uniform(partitions: usize, tau: f64, gamma: f64) -> Self {
        Self {
            alpha: vec![1.0 / partitions as f64; partitions],
            omega: (1..=partitions).map(|m| m as f64).collect(),
            tau,
            gamma,
        }
    }

    pub fn partitions(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.len();
        if n == 0 {
            return Err(Error::InvalidConfig(
                "partition count must be positive".into(),
            ));
        }
        if self.omega.len() != n {
            return Err(Error::InvalidConfig(format!(
                "alpha has {} entries, omega has {}",
                n,
                self.omega.len()
            )));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidConfig(
                "alpha entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "alpha sums to {}, not 1",
                sum
            )));
        }
        if self.alpha.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("alpha must be non-increasing".into()));
        }
        if self.omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidConfig(
                "omega entries must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!(
                "tau {} outside [0, 1]",
                self.tau
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} must exceed 1",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Partition sizes `n_mu`: floors of `alpha_mu * I`, with the remainder `R` handed
/// one each to the last `R` partitions so the sizes sum to `I`.
pub fn partition_sizes(detectors: usize, cfg: &PartitionConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = cfg.partitions();
    if detectors < n {
        return Err(Error::InvalidConfig(format!(
            "{} detectors cannot fill {} partitions",
            detectors, n
        )));
    }
    // The small offset keeps e.g. (1/3) * 3 from flooring to 0.
    let floors: Vec<usize> = cfg
        .alpha
        .iter()
        .map(|a| (a * detectors as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = floors.iter().sum();
    if assigned > detectors {
        return Err(Error::InvalidConfig(
            "alpha floors exceed detector count".into(),
        ));
    }
    let remainder = detectors - assigned;
    if remainder > n {
        return Err(Error::InvalidConfig(format!(
            "remainder {} exceeds partition count {}",
            remainder, n
        )));
    }
    Ok(floors
        .iter()
        .enumerate()
        .map(|(mu, &f)| if mu >= n - remainder { f + 1 } else { f })
        .collect())
}

/// Per-detector activity thresholds `nu_i = omega_mu * tau / sum_mu(omega_mu * n_mu)`.
///
/// Detectors are assigned to partitions in contiguous blocks, partition 0 first.
pub fn partition_thresholds(detectors: usize, cfg: &PartitionConfig) -> Result<Vec<f64>> {
    let sizes = partition_sizes(detectors, cfg)?;
    let denom: f64 = sizes
        .iter()
        .zip(&cfg.omega)
        .map(|(&n, &w)| w * n as f64)
        .sum();
    let mut nu = Vec::with_capacity(detectors);
    for (mu, &n) in sizes.iter().enumerate() {
        let v = cfg.omega[mu] * cfg.tau / denom;
        nu.extend(std::iter::repeat_n(v, n));
    }
    Ok(nu)
}

#[derive(Debug, Clone, PartialEq)]
struct BatchStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardCache {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    /// `1 / sqrt(var + eps)` per direction, from whichever statistics were used.
    inv_std: Vec<f64>,
    /// Present in batch mode; gradients then flow through the batch statistics.
    batch_stats: Option<BatchStats>,
    /// Sigmoid derivative, zero where the clamp is active.
    dy_da: DMatrix<f64>,
    params: ClassifierParams,
}

/// Confidences `y` (`B x I`), row-normalized `q`, and the forward cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    y: DMatrix<f64>,
    q: DMatrix<f64>,
    row_sums: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl ActivationBatch {
    /// Wraps raw confidences (clamped into `[1e-7, 1 - 1e-7]`) without a backward cache.
    pub fn from_confidences(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::Shape("activation batch must be non-empty".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "confidences contain non-finite values".into(),
            ));
        }
        let y = y.map(|v| v.clamp(Y_CLAMP, 1.0 - Y_CLAMP));
        Ok(Self::normalize(y, None))
    }

    fn normalize(y: DMatrix<f64>, cache: Option<ForwardCache>) -> Self {
        let (b, i) = y.shape();
        let mut q = DMatrix::zeros(b, i);
        let mut row_sums = Vec::with_capacity(b);
        for p in 0..b {
            let s: f64 = y.row(p).iter().sum();
            let denom = s + Q_GUARD;
            for k in 0..i {
                q[(p, k)] = y[(p, k)] / denom;
            }
            row_sums.push(s);
        }
        Self {
            y,
            q,
            row_sums,
            cache,
        }
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn batch_size(&self) -> usize {
        self.y.nrows()
    }

    pub fn detectors(&self) -> usize {
        self.y.ncols()
    }

    /// Standardized projections, when produced by [`forward`].
    pub fn standardized(&self) -> Option<&DMatrix<f64>> {
        self.cache.as_ref().map(|c| &c.z)
    }

    /// Maps an upstream gradient on `q` to one on `y`.
    fn q_to_y(&self, dl_dq: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for p in 0..self.batch_size() {
            let denom = self.row_sums[p] + Q_GUARD;
            let dot: f64 = (0..self.detectors())
                .map(|k| dl_dq[(p, k)] * self.q[(p, k)])
                .sum();
            for k in 0..self.detectors() {
                out[(p, k)] += (dl_dq[(p, k)] - dot) / denom;
            }
        }
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Projects, standardizes, and applies the shared sigmoid classifier.
///
/// Does not touch `std_state`; call [`StandardizationState::absorb`] afterwards
/// to fold batch statistics into the running averages.
pub fn forward(
    x: &DMatrix<f64>,
    detectors: &DMatrix<f64>,
    params: ClassifierParams,
    std_state: &StandardizationState,
) -> Result<ActivationBatch> {
    let (b, d) = x.shape();
    let i = detectors.nrows();
    if detectors.ncols() != d {
        return Err(Error::Shape(format!(
            "batch has D = {}, detectors have D = {}",
            d,
            detectors.ncols()
        )));
    }
    if std_state.directions() != i {
        return Err(Error::Shape(format!(
            "standardization tracks {} directions, basis has {}",
            std_state.directions(),
            i
        )));
    }
    if b == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "batch contains non-finite features".into(),
        ));
    }
    if params.t == 0.0 || !params.t.is_finite() || !params.b.is_finite() {
        return Err(Error::Numerical(format!(
            "classifier parameters b = {}, t = {} are unusable",
            params.b, params.t
        )));
    }

    let proj = x * detectors.transpose();
    let (mean, var, batch_stats) = match std_state.mode {
        StatsMode::Batch => {
            if b < 2 {
                return Err(Error::Shape("batch statistics need at least 2 rows".into()));
            }
            let mut mean = vec![0.0; i];
            let mut var = vec![0.0; i];
            for k in 0..i {
                let col = proj.column(k);
                let m = col.iter().sum::<f64>() / b as f64;
                let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b as f64;
                mean[k] = m;
                var[k] = v;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        StatsMode::Running => (
            std_state.running_mean.clone(),
            std_state.running_var.clone(),
            None,
        ),
    };
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v + std_state.eps).sqrt())
        .collect();

    let scale = params.t * params.t;
    let mut z = DMatrix::zeros(b, i);
    let mut y = DMatrix::zeros(b, i);
    let mut dy_da = DMatrix::zeros(b, i);
    for k in 0..i {
        for p in 0..b {
            let zv = (proj[(p, k)] - mean[k]) * inv_std[k];
            let s = sigmoid((zv - params.b) * scale);
            z[(p, k)] = zv;
            if s < Y_CLAMP {
                y[(p, k)] = Y_CLAMP;
            } else if s > 1.0 - Y_CLAMP {
                y[(p, k)] = 1.0 - Y_CLAMP;
            } else {
                y[(p, k)] = s;
                dy_da[(p, k)] = s * (1.0 - s);
            }
        }
    }
    let cache = ForwardCache {
        x: x.clone(),
        z,
        inv_std,
        batch_stats,
        dy_da,
        params,
    };
    Ok(ActivationBatch::normalize(y, Some(cache)))
}

/// Mean row entropy (bits) of `q`.
pub fn sparsity_loss(act: &ActivationBatch) -> (f64, DMatrix<f64>) {
    let (b, i) = act.y.shape();
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut dl_dq = DMatrix::zeros(b, i);
    for p in 0..b {
        let mut row = 0.0;
        for k in 0..i {
            let q = act.q[(p, k)];
            let l2 = q.log2();
            row -= q * l2;
            dl_dq[(p, k)] = -(l2 + 1.0 / LN_2) * inv_b;
        }
        total += row;
    }
    let mut grad = DMatrix::zeros(b, i);
    act.q_to_y(&dl_dq, &mut grad);
    (total * inv_b, grad)
}

/// Mean over rows of `-sum_i q log2 y`.
pub fn max_activation_loss(act: &ActivationBatch) -> (f64, DMatrix<f64>) {
    let (b, i) = act.y.shape();
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut dl_dq = DMatrix::zeros(b, i);
    let mut grad = DMatrix::zeros(b, i);
    for p in 0..b {
        let mut row = 0.0;
        for k in 0..i {
            let y = act.y[(p, k)];
            let q = act.q[(p, k)];
            let l2 = y.log2();
            row -= q * l2;
            dl_dq[(p, k)] = -l2 * inv_b;
            grad[(p, k)] = -q / (y * LN_2) * inv_b;
        }
        total += row;
    }
    act.q_to_y(&dl_dq, &mut grad);
    (total * inv_b, grad)
}

/// `mean_i (1/nu_i) ReLU(nu_i - mean_p y^gamma)`.
pub fn inactive_classifier_loss(
    act: &ActivationBatch,
    nu: &[f64],
    gamma: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let (b, i) = act.y.shape();
    if nu.len() != i {
        return Err(Error::Shape(format!(
            "{} thresholds for {} detectors",
            nu.len(),
            i
        )));
    }
    let inv_b = 1.0 / b as f64;
    let inv_i = 1.0 / i as f64;
    let mut total = 0.0;
    let mut grad = DMatrix::zeros(b, i);
    for k in 0..i {
        let col = act.y.column(k);
        let activity = col.iter().map(|y| y.powf(gamma)).sum::<f64>() * inv_b;
        let gap = nu[k] - activity;
        if gap > 0.0 {
            total += gap / nu[k];
            let coef = -inv_i / nu[k] * gamma * inv_b;
            for p in 0..b {
                grad[(p, k)] = coef * act.y[(p, k)].powf(gamma - 1.0);
            }
        }
    }
    Ok((total * inv_i, grad))
}

/// `L = t^2`, `dL/dt = 2t`.
pub fn max_margin_loss(t: f64) -> (f64, f64) {
    (t * t, 2.0 * t)
}

/// Gradients with respect to the detector rows and the shared classifier scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGrads {
    /// `dL/dW_I`, `I x D`.
    pub detectors: DMatrix<f64>,
    pub b: f64,
    pub t: f64,
}

/// Back-propagates `dL/dy` through the sigmoid and standardization.
pub fn backward(act: &ActivationBatch, dl_dy: &DMatrix<f64>) -> Result<DetectorGrads> {
    let cache = act
        .cache
        .as_ref()
        .ok_or_else(|| Error::Shape("activation batch has no forward cache".into()))?;
    let (b, i) = act.y.shape();
    if dl_dy.shape() != (b, i) {
        return Err(Error::Shape(format!(
            "dL/dy is {:?}, activations are {:?}",
            dl_dy.shape(),
            (b, i)
        )));
    }
    let params = cache.params;
    let scale = params.t * params.t;
    let mut dz = DMatrix::zeros(b, i);
    let mut db = 0.0;
    let mut dt = 0.0;
    for k in 0..i {
        for p in 0..b {
            let da = dl_dy[(p, k)] * cache.dy_da[(p, k)];
            let shifted = cache.z[(p, k)] - params.b;
            dz[(p, k)] = da * scale;
            db -= da * scale;
            dt += da * 2.0 * params.t * shifted;
        }
    }
    let mut dproj = DMatrix::zeros(b, i);
    let inv_b = 1.0 / b as f64;
    for k in 0..i {
        let s = cache.inv_std[k];
        if cache.batch_stats.is_some() {
            let mean_dz = dz.column(k).iter().sum::<f64>() * inv_b;
            let mean_dz_z = (0..b).map(|p| dz[(p, k)] * cache.z[(p, k)]).sum::<f64>() * inv_b;
            for p in 0..b {
                dproj[(p, k)] = s * (dz[(p, k)] - mean_dz - cache.z[(p, k)] * mean_dz_z);
            }
        } else {
            for p in 0..b {
                dproj[(p, k)] = s * dz[(p, k)];
            }
        }
    }
    Ok(DetectorGrads {
        detectors: dproj.transpose() * &cache.x,
        b: db,
        t: dt,
    })
}

/// Values of the four loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub sparsity: f64,
    pub max_activation: f64,
    pub inactive: f64,
    pub max_margin: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.sparsity,
            self.max_activation,
            self.inactive,
            self.max_margin,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<f64>,
    pub b: f64,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub loss: LossBreakdown,
    pub grads: Gradients,
    pub activations: ActivationBatch,
    pub basis: BasisMatrix,
}

/// Full objective and its gradients with respect to `theta`, `b`, and `t`.
///
/// `std_state` is read but not updated.
pub fn total_loss_and_grads(
    x: &DMatrix<f64>,
    theta: &SkewParams,
    detectors: usize,
    params: ClassifierParams,
    weights: &LossWeights,
    std_state: &StandardizationState,
    nu: &[f64],
    gamma: f64,
) -> Result<LossEvaluation> {
    let basis = theta.basis(detectors)?;
    loss_and_grads_for_basis(x, basis, params, weights, std_state, nu, gamma)
}

/// Same as [`total_loss_and_grads`] for an already computed basis.
pub fn loss_and_grads_for_basis(
    x: &DMatrix<f64>,
    basis: BasisMatrix,
    params: ClassifierParams,
    weights: &LossWeights,
    std_state: &StandardizationState,
    nu: &[f64],
    gamma: f64,
) -> Result<LossEvaluation> {
    let detectors = basis.detectors();
    let rows = basis.detector_rows();
    let act = forward(x, &rows, params, std_state)?;
    let (b, i) = act.y.shape();

    let mut dl_dy = DMatrix::zeros(b, i);
    let mut loss = LossBreakdown::default();
    if weights.sparsity != 0.0 {
        let (v, g) = sparsity_loss(&act);
        loss.sparsity = v;
        dl_dy += g * weights.sparsity;
    } else {
        loss.sparsity = sparsity_loss(&act).0;
    }
    if weights.max_activation != 0.0 {
        let (v, g) = max_activation_loss(&act);
        loss.max_activation = v;
        dl_dy += g * weights.max_activation;
    } else {
        loss.max_activation = max_activation_loss(&act).0;
    }
    let (ic, ic_grad) = inactive_classifier_loss(&act, nu, gamma)?;
    loss.inactive = ic;
    if weights.inactive != 0.0 {
        dl_dy += ic_grad * weights.inactive;
    }
    let (mm, mm_grad) = max_margin_loss(params.t);
    loss.max_margin = mm;
    loss.total = weights.sparsity * loss.sparsity
        + weights.max_activation * loss.max_activation
        + weights.inactive * loss.inactive
        + weights.max_margin * loss.max_margin;

    let det = backward(&act, &dl_dy)?;
    let dim = basis.dim();
    let mut dl_dw = DMatrix::zeros(dim, dim);
    dl_dw.rows_mut(0, detectors).copy_from(&det.detectors);
    let theta_grad = grad_pullback(&dl_dw, &basis)?;
    Ok(LossEvaluation {
        loss,
        grads: Gradients {
            theta: theta_grad,
            b: det.b,
            t: det.t + weights.max_margin * mm_grad,
        },
        activations: act,
        basis,
    })
}

/// Detector bias and margin in raw projection space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawClassifier {
    pub bias: f64,
    pub margin: f64,
}

/// Inverts standardization: `b_i = mu_i + sigma_i b`, `M_i = sigma_i M`.
pub fn recover_from_stats(
    mean: &[f64],
    sigma: &[f64],
    params: ClassifierParams,
) -> Vec<RawClassifier> {
    let m = params.margin();
    mean.iter()
        .zip(sigma)
        .map(|(&mu, &s)| RawClassifier {
            bias: mu + s * params.b,
            margin: s * m,
        })
        .collect()
}

/// Per-direction raw-space classifiers from populated running statistics.
pub fn recover_classifier_params(
    std_state: &StandardizationState,
    params: ClassifierParams,
) -> Result<Vec<RawClassifier>> {
    if std_state.updates == 0 {
        return Err(Error::Numerical(
            "running statistics were never populated; train for at least one batch".into(),
        ));
    }
    let sigma: Vec<f64> = std_state
        .running_var
        .iter()
        .map(|v| (v + std_state.eps).sqrt())
        .collect();
    Ok(recover_from_stats(&std_state.running_mean, &sigma, params))
}
