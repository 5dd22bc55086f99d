//! Adam optimization of the rotation, shared bias, and margin parameter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    self, partition_thresholds, recover_classifier_params, ClassifierParams, LossBreakdown,
    LossWeights, PartitionConfig, RawClassifier, StandardizationState, StatsMode,
};
use crate::orthobasis::{param_count, BasisMatrix, SkewParams};
use crate::tensorstore::{read_json, write_json, FeatureDataset, PixelPool, Split, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of detectors `I`; `None` means `I = D`.
    pub detectors: Option<usize>,
    pub init_b: f64,
    pub init_t: f64,
    pub stats_momentum: f64,
    pub stats_eps: f64,
    pub partition: PartitionConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 1024,
            seed: 0,
            detectors: None,
            init_b: 0.5,
            init_t: 0.5,
            stats_momentum: StandardizationState::DEFAULT_MOMENTUM,
            stats_eps: StandardizationState::DEFAULT_EPS,
            partition: PartitionConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, layer_dim: usize) -> Result<()> {
        if layer_dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "layer dimension {} is too small to rotate",
                layer_dim
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        let i = self.detectors.unwrap_or(layer_dim);
        if i == 0 || i > layer_dim {
            return Err(Error::InvalidConfig(format!(
                "detector count {} must lie in 1..={}",
                i, layer_dim
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidConfig("adam_epsilon must be positive".into()));
        }
        if self.init_t == 0.0 || !self.init_t.is_finite() || !self.init_b.is_finite() {
            return Err(Error::InvalidConfig(
                "init_t must be finite and nonzero".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stats_momentum) || !(self.stats_eps > 0.0) {
            return Err(Error::InvalidConfig(
                "stats_momentum must lie in [0, 1] and stats_eps be positive".into(),
            ));
        }
        self.weights.validate()?;
        partition_thresholds(i, &self.partition)?;
        Ok(())
    }
}

/// Bias-corrected Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        betas: (f64, f64),
        eps: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let (b1, b2) = betas;
        self.step += 1;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Mean loss components over one epoch's batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub b: f64,
    pub t: f64,
    pub orthogonality_error: f64,
    pub batches: usize,
}

/// Reported to an observer after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    /// `max |W^T W - I|` of the basis after the update.
    pub orthogonality_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisModel {
    pub theta: SkewParams,
    pub b: f64,
    pub t: f64,
    pub stats: StandardizationState,
    pub detectors: usize,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

impl BasisModel {
    pub fn initial(layer_dim: usize, cfg: &TrainConfig) -> Self {
        let detectors = cfg.detectors.unwrap_or(layer_dim);
        let mut stats = StandardizationState::new(detectors);
        stats.momentum = cfg.stats_momentum;
        stats.eps = cfg.stats_eps;
        Self {
            theta: SkewParams::zeros(layer_dim),
            b: cfg.init_b,
            t: cfg.init_t,
            stats,
            detectors,
            history: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn layer_dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn basis(&self) -> Result<BasisMatrix> {
        self.theta.basis(self.detectors)
    }

    /// `I x D` detector directions.
    pub fn detector_rows(&self) -> Result<DMatrix<f64>> {
        Ok(self.basis()?.detector_rows())
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            b: self.b,
            t: self.t,
        }
    }

    /// Raw-space biases and margins, inverting the running standardization.
    pub fn raw_classifiers(&self) -> Result<Vec<RawClassifier>> {
        recover_classifier_params(&self.stats, self.classifier_params())
    }
}

/// Trains on the train split of `ds`.
pub fn train_basis(ds: &FeatureDataset, cfg: &TrainConfig) -> Result<BasisModel> {
    train_basis_observed(ds, cfg, |_| {})
}

pub fn train_basis_observed(
    ds: &FeatureDataset,
    cfg: &TrainConfig,
    observer: impl FnMut(&StepInfo),
) -> Result<BasisModel> {
    let train = ds.split(Split::Train);
    if train.pixel_count() == 0 {
        return Err(Error::Empty(
            "feature dataset has no train-split pixels".into(),
        ));
    }
    cfg.validate(ds.layer_dim())?;
    let pool = PixelPool::from_dataset(&train)?;
    train_on_pool(&pool, cfg, observer)
}

/// Core optimization loop over an in-memory pixel pool.
pub fn train_on_pool(
    pool: &PixelPool,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepInfo),
) -> Result<BasisModel> {
    let dim = pool.dim();
    cfg.validate(dim)?;
    let mut model = BasisModel::initial(dim, cfg);
    let detectors = model.detectors;
    let nu = partition_thresholds(detectors, &cfg.partition)?;
    let n_theta = param_count(dim);

    let mut params: Vec<f64> = model.theta.theta().to_vec();
    params.push(model.b);
    params.push(model.t);
    let mut adam = AdamState::new(params.len());
    let mut basis = model.basis()?;

    for epoch in 0..cfg.epochs {
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for x in pool.batches(cfg.batch_size, epoch_seed(cfg.seed, epoch))? {
            if x.nrows() < 2 {
                continue;
            }
            let params_now = ClassifierParams {
                b: params[n_theta],
                t: params[n_theta + 1],
            };
            let eval = losses::loss_and_grads_for_basis(
                &x,
                basis.clone(),
                params_now,
                &cfg.weights,
                &model.stats,
                &nu,
                cfg.partition.gamma,
            )?;
            if !eval.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {} step {}: {:?} (b = {}, t = {})",
                    epoch, adam.step, eval.loss, params_now.b, params_now.t
                )));
            }
            model.stats.absorb(&eval.activations);

            let mut grads = eval.grads.theta;
            grads.push(eval.grads.b);
            grads.push(eval.grads.t);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at epoch {} step {}",
                    epoch, adam.step
                )));
            }
            adam.update(
                &mut params,
                &grads,
                cfg.learning_rate,
                (cfg.beta1, cfg.beta2),
                cfg.adam_epsilon,
            )?;
            model.theta = SkewParams::new(dim, params[..n_theta].to_vec())?;
            basis = model.theta.basis(detectors)?;
            observer(&StepInfo {
                epoch,
                step: adam.step,
                loss: eval.loss,
                orthogonality_error: basis.orthogonality_error(),
            });

            sum.total += eval.loss.total;
            sum.sparsity += eval.loss.sparsity;
            sum.max_activation += eval.loss.max_activation;
            sum.inactive += eval.loss.inactive;
            sum.max_margin += eval.loss.max_margin;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        model.b = params[n_theta];
        model.t = params[n_theta + 1];
        model.history.push(EpochRecord {
            epoch,
            loss: LossBreakdown {
                total: sum.total / n,
                sparsity: sum.sparsity / n,
                max_activation: sum.max_activation / n,
                inactive: sum.inactive / n,
                max_margin: sum.max_margin / n,
            },
            b: model.b,
            t: model.t,
            orthogonality_error: basis.orthogonality_error(),
            batches,
        });
        log::debug!(
            "epoch {} loss {:.6} (s {:.4} ma {:.4} ic {:.4} mm {:.4})",
            epoch,
            sum.total / n,
            sum.sparsity / n,
            sum.max_activation / n,
            sum.inactive / n,
            sum.max_margin / n
        );
    }
    model.stats.mode = StatsMode::Running;
    Ok(model)
}

/// SplitMix64 of `(seed, epoch)`, so each epoch gets its own shuffle.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const MODEL_FORMAT: &str = "unibasis-model";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    layer_dim: usize,
    detectors: usize,
    b: f64,
    t: f64,
    stats_momentum: f64,
    stats_eps: f64,
    stats_updates: u64,
    epochs_trained: usize,
    config: TrainConfig,
}

/// Writes `model.json`, `theta.uibf`, `mu.uibf`, `var.uibf`, and `history.csv` into `dir`.
pub fn save_model(model: &BasisModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: 1,
        layer_dim: model.layer_dim(),
        detectors: model.detectors,
        b: model.b,
        t: model.t,
        stats_momentum: model.stats.momentum,
        stats_eps: model.stats.eps,
        stats_updates: model.stats.updates,
        epochs_trained: model.history.len(),
        config: model.config.clone(),
    };
    write_json(&dir.join("model.json"), &file)?;
    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    Tensor::new(vec![model.theta.theta().len()], to_f32(model.theta.theta()))?
        .write(dir.join("theta.uibf"))?;
    Tensor::new(vec![model.detectors], to_f32(&model.stats.running_mean))?
        .write(dir.join("mu.uibf"))?;
    Tensor::new(vec![model.detectors], to_f32(&model.stats.running_var))?
        .write(dir.join("var.uibf"))?;
    let path = dir.join("history.csv");
    fs::write(&path, history_csv(&model.history)).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<BasisModel> {
    let dir = dir.as_ref();
    let manifest = dir.join("model.json");
    let file: ModelFile = read_json(&manifest)?;
    if file.format != MODEL_FORMAT || file.version != 1 {
        return Err(Error::manifest(
            &manifest,
            format!(
                "unsupported model format {:?} v{}",
                file.format, file.version
            ),
        ));
    }
    let to_f64 = |t: Tensor| t.data().iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let theta = to_f64(Tensor::read(dir.join("theta.uibf"))?);
    let theta = SkewParams::new(file.layer_dim, theta)?;
    let mean = to_f64(Tensor::read(dir.join("mu.uibf"))?);
    let var = to_f64(Tensor::read(dir.join("var.uibf"))?);
    if mean.len() != file.detectors || var.len() != file.detectors {
        return Err(Error::DimensionMismatch(format!(
            "model declares {} detectors, statistics hold {} / {}",
            file.detectors,
            mean.len(),
            var.len()
        )));
    }
    if var.iter().any(|&v| v < 0.0) {
        return Err(Error::Format(
            "negative running variance in var.uibf".into(),
        ));
    }
    Ok(BasisModel {
        theta,
        b: file.b,
        t: file.t,
        stats: StandardizationState {
            running_mean: mean,
            running_var: var,
            momentum: file.stats_momentum,
            eps: file.stats_eps,
            mode: StatsMode::Running,
            updates: file.stats_updates,
        },
        detectors: file.detectors,
        history: Vec::new(),
        config: file.config,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,total,sparsity,max_activation,inactive,max_margin,b,t,orthogonality_error,batches\n",
    );
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.loss.total,
            r.loss.sparsity,
            r.loss.max_activation,
            r.loss.inactive,
            r.loss.max_margin,
            r.b,
            r.t,
            r.orthogonality_error,
            r.batches
        );
    }
    out
}
