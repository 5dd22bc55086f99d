//! Command-line front end: config-file-first runs with flag overrides.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::dissect::{self, DetectorSet};
use crate::error::{Error, ErrorKind, Result};
use crate::metrics::{self, InterpReport};
use crate::synth::{self, SynthConfig};
use crate::tammes::{self, TammesConfig};
use crate::tensorstore::{ConceptDataset, FeatureDataset, Split};
use crate::trainer::{self, TrainConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

/// Everything a run reads; every section is optional in the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    /// Run all parallel sections on one thread.
    pub deterministic: bool,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub topk: TopkConfig,
    pub tammes: TammesRun,
}

/// Paths are taken relative to the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub features: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    /// Model bundle directory written by `train`.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Fraction of projections left above each natural-basis threshold.
    pub baseline_quantile: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            baseline_quantile: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopkConfig {
    pub k: usize,
    pub split: Split,
}

impl Default for TopkConfig {
    fn default() -> Self {
        Self {
            k: 4,
            split: Split::Val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TammesRun {
    /// `[I, D]` pairs.
    pub pairs: Vec<[usize; 2]>,
    pub seed: u64,
    pub solver: TammesConfig,
}

impl Default for TammesRun {
    fn default() -> Self {
        let mut pairs = Vec::new();
        for d in [4usize, 8, 16, 32, 64] {
            pairs.push([d / 2, d]);
            pairs.push([d, d]);
        }
        Self {
            pairs,
            seed: 0,
            solver: TammesConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `--seed` drives every seeded stage; the synthetic data seed is offset by one
    /// so data and rotation never share a stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.tammes.seed = seed;
        self.synth.rotation_seed = seed;
        self.synth.data_seed = seed.wrapping_add(1);
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "unibasis",
    version,
    about = "Learn, label and score interpretable bases of CNN feature spaces"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for training, synthesis and the Tammes solver.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a hidden rotation.
    Synth,
    /// Learn a basis from a feature dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Label a learned basis on the train split.
    Label {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Label on train, score on val, and write a report.
    Score {
        #[command(flatten)]
        data: DataArgs,
        /// Evaluate the natural basis with quantile thresholds instead of a model.
        #[arg(long)]
        baseline: bool,
    },
    /// Same as `score --baseline`.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Solve the min-angle embedding problem over `(I, D)` pairs.
    Tammes {
        /// `I:D` pair; repeatable. Overrides the configured grid.
        #[arg(long = "pair", value_parser = parse_pair)]
        pairs: Vec<[usize; 2]>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        hard_min: bool,
    },
    /// Report comparing a learned basis with the natural baseline.
    Report {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Highest-projection pixels per detector.
    Topk {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected I:D, got {:?}", s))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("{:?}: {}", v, e))
    };
    Ok([parse(a)?, parse(b)?])
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Parses `args` (including the program name), runs the command, and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(e.kind())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.apply_seed(s);
    }
    if cli.global.deterministic {
        cfg.deterministic = true;
    }
    if let Some(o) = &cli.global.out {
        cfg.out = Some(o.clone());
    }
    apply_command_overrides(&mut cfg, &cli.command)?;

    let threads = if cfg.deterministic { 1 } else { 0 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {}", e)))?;
    pool.install(|| dispatch(&cfg, &cli.command))
}

fn apply_command_overrides(cfg: &mut RunConfig, cmd: &Command) -> Result<()> {
    let data = match cmd {
        Command::Train { data, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            Some(data)
        }
        Command::Label { data }
        | Command::Score { data, .. }
        | Command::Baseline { data }
        | Command::Report { data } => Some(data),
        Command::Topk { data, k, split } => {
            if let Some(k) = k {
                cfg.topk.k = *k;
            }
            if let Some(s) = split {
                cfg.topk.split = match s.as_str() {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "split must be train or val, got {:?}",
                            other
                        )))
                    }
                };
            }
            Some(data)
        }
        Command::Tammes {
            pairs,
            iterations,
            hard_min,
        } => {
            if !pairs.is_empty() {
                cfg.tammes.pairs = pairs.clone();
            }
            if let Some(i) = iterations {
                cfg.tammes.solver.iterations = *i;
            }
            if *hard_min {
                cfg.tammes.solver.hard_min = true;
            }
            None
        }
        Command::Synth => None,
    };
    if let Some(d) = data {
        if let Some(p) = &d.features {
            cfg.data.features = Some(p.clone());
        }
        if let Some(p) = &d.concepts {
            cfg.data.concepts = Some(p.clone());
        }
        if let Some(p) = &d.model {
            cfg.data.model = Some(p.clone());
        }
    }
    Ok(())
}

fn dispatch(cfg: &RunConfig, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth => cmd_synth(cfg),
        Command::Train { .. } => cmd_train(cfg),
        Command::Label { .. } => cmd_label(cfg),
        Command::Score { baseline, .. } => cmd_score(cfg, *baseline),
        Command::Baseline { .. } => cmd_score(cfg, true),
        Command::Tammes { .. } => cmd_tammes(cfg),
        Command::Report { .. } => cmd_report(cfg),
        Command::Topk { .. } => cmd_topk(cfg),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "missing {} (set it in the config or pass --{})",
            what, what
        ))
    })
}

/// Creates the output directory and drops the resolved config into it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = required(&cfg.out, "out")?.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn load_features(cfg: &RunConfig) -> Result<FeatureDataset> {
    FeatureDataset::load(required(&cfg.data.features, "features")?)
}

fn load_concepts(cfg: &RunConfig, features: &FeatureDataset) -> Result<ConceptDataset> {
    ConceptDataset::load(required(&cfg.data.concepts, "concepts")?, features)
}

fn learned_detectors(cfg: &RunConfig) -> Result<(trainer::BasisModel, DetectorSet)> {
    let model = trainer::load_model(required(&cfg.data.model, "model")?)?;
    let det = DetectorSet::from_model(&model)?;
    Ok((model, det))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.synth.validate()?;
    let out = prepare_out(cfg)?;
    let o = synth::generate(&cfg.synth, &out)?;
    info!(
        "wrote {} images, {} concepts to {}",
        o.features.len(),
        o.concepts.concepts().len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_features(cfg)?;
    cfg.train.validate(ds.layer_dim())?;
    let out = prepare_out(cfg)?;
    let mut worst = 0.0f64;
    let model = trainer::train_basis_observed(&ds, &cfg.train, |s| {
        worst = worst.max(s.orthogonality_error);
    })?;
    let final_err = model.basis()?.orthogonality_error();
    info!(
        "trained {} epochs: b = {:.6}, t = {:.6}; orthonormality error max over steps {:.3e}, final {:.3e}",
        model.history.len(),
        model.b,
        model.t,
        worst,
        final_err
    );
    trainer::save_model(&model, &out)
}

pub fn cmd_label(cfg: &RunConfig) -> Result<()> {
    let (_, det) = learned_detectors(cfg)?;
    let features = load_features(cfg)?;
    let concepts = load_concepts(cfg, &features)?;
    let out = prepare_out(cfg)?;
    let table = dissect::compute_iou_table(&det, &features, Split::Train, &concepts)?;
    let labels = dissect::assign_labels(&table)?;
    let cs = concepts.concepts();
    write_text(
        out.join("iou_train.csv"),
        &dissect::iou_table_csv(&table, cs),
    )?;
    let mut csv = String::from("detector,concept_id,concept_name,bias,train_iou,degenerate\n");
    for (i, l) in labels.iter().enumerate() {
        let c = &cs[l.concept];
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            i,
            c.id,
            dissect::csv_field(&c.name),
            det.biases[i],
            l.train_score,
            l.degenerate
        );
    }
    write_text(out.join("labels.csv"), &csv)
}

fn evaluate(
    name: &str,
    det: DetectorSet,
    features: &FeatureDataset,
    concepts: &ConceptDataset,
) -> Result<(dissect::LabeledBasis, InterpReport)> {
    let lb = dissect::label_and_score(det, features, concepts)?;
    let report = InterpReport::from_labeled(name, &lb, concepts.concepts())?;
    info!(
        "{}: score1 {:.6}, score2 {:.6}, {} unique labels",
        name, report.score1, report.score2, report.unique_labels
    );
    Ok((lb, report))
}

fn baseline_detectors(cfg: &RunConfig, features: &FeatureDataset) -> Result<DetectorSet> {
    DetectorSet::natural_baseline(
        &features.split(Split::Train),
        cfg.evaluation.baseline_quantile,
    )
}

pub fn cmd_score(cfg: &RunConfig, baseline: bool) -> Result<()> {
    let features = load_features(cfg)?;
    let concepts = load_concepts(cfg, &features)?;
    let (name, det) = if baseline {
        ("baseline", baseline_detectors(cfg, &features)?)
    } else {
        ("learned", learned_detectors(cfg)?.1)
    };
    let out = prepare_out(cfg)?;
    let (lb, report) = evaluate(name, det, &features, &concepts)?;
    write_text(
        out.join("labels.csv"),
        &dissect::labels_csv(&lb, concepts.concepts()),
    )?;
    metrics::emit_report(&[report], &out)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let features = load_features(cfg)?;
    let concepts = load_concepts(cfg, &features)?;
    let det = learned_detectors(cfg)?.1;
    let base = baseline_detectors(cfg, &features)?;
    let out = prepare_out(cfg)?;
    let (_, learned) = evaluate("learned", det, &features, &concepts)?;
    let (_, natural) = evaluate("baseline", base, &features, &concepts)?;
    metrics::emit_report(&[learned, natural], &out)
}

pub fn cmd_topk(cfg: &RunConfig) -> Result<()> {
    let (model, det) = learned_detectors(cfg)?;
    let features = load_features(cfg)?.split(cfg.topk.split);
    let out = prepare_out(cfg)?;
    let s = &model.stats;
    let sigma: Vec<f64> = s.running_var.iter().map(|v| (v + s.eps).sqrt()).collect();
    let top = metrics::topk_activations(
        &det.directions,
        &features,
        cfg.topk.k,
        Some((&s.running_mean, &sigma)),
    )?;
    if top.truncated {
        info!(
            "k = {} exceeds the pixel count; every pixel listed",
            cfg.topk.k
        );
    }
    write_text(out.join("topk.csv"), &metrics::topk_csv(&top))
}

pub fn tammes_csv(rows: &[(usize, usize, tammes::TammesResult)]) -> String {
    let mut csv = String::from("count,dim,min_deg,max_deg,mean_deg,std_deg,restart\n");
    for (i, d, r) in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            i, d, r.stats.min, r.stats.max, r.stats.mean, r.stats.std, r.restart
        );
    }
    csv
}

pub fn cmd_tammes(cfg: &RunConfig) -> Result<()> {
    if cfg.tammes.pairs.is_empty() {
        return Err(Error::InvalidConfig("no (I, D) pairs given".into()));
    }
    let out = prepare_out(cfg)?;
    let mut rows = Vec::new();
    for &[i, d] in &cfg.tammes.pairs {
        let r = tammes::solve_min_angle(i, d, cfg.tammes.seed, &cfg.tammes.solver)?;
        info!(
            "I = {}, D = {}: min {:.4} deg, mean {:.4} deg",
            i, d, r.stats.min, r.stats.mean
        );
        rows.push((i, d, r));
    }
    write_text(out.join("tammes.csv"), &tammes_csv(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml("[train]\nepoch = 3\n").unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Usage);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 7\n[train.weights]\nmax_margin = 1.5\n")
            .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.train.weights.max_margin, 1.5);
        assert_eq!(cfg.train.weights.sparsity, 2.0);
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(11);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.tammes.seed, 11);
        assert_eq!((cfg.synth.rotation_seed, cfg.synth.data_seed), (11, 12));
    }

    #[test]
    fn pair_parser() {
        assert_eq!(parse_pair("4:3").unwrap(), [4, 3]);
        assert!(parse_pair("4x3").is_err());
        assert!(parse_pair("a:3").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(ErrorKind::Usage), 1);
        assert_eq!(exit_code(ErrorKind::Data), 2);
        assert_eq!(exit_code(ErrorKind::Numerical), 3);
        assert_eq!(run_from_args(["unibasis", "no-such-command"]), 1);
        assert_eq!(run_from_args(["unibasis", "--help"]), 0);
    }
}
