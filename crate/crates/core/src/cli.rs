//! The `kog` command line: train, eval, gradcheck, inspect, synth, ablate.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a
//! verification (gradient check) failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{
    generate_mesh_synthetic, generate_synthetic, load_dataset, write_dataset, Camera, PoseSample, SampleSchema,
};
use crate::error::{KogError, Result};
use crate::gradcheck::{run_suite, GradCheckSettings};
use crate::graph::{build_order_masks, build_relative_index_map, build_signed_distance, table_size, SkeletonGraph};
use crate::metrics::MetricReport;
use crate::models::{KogTransformerConfig, Model, ModelConfig};
use crate::tensor::{FaultKind, Scalar};
use crate::train::{evaluate, train, RunOutput, TrainSettings};

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_VERIFICATION: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "kog", version, about = "K-order graph attention models for pose lifting and mesh estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// 2D keypoints to root-relative 3D joints.
    Pose,
    /// 3D joints to mesh vertices.
    Mesh,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Skeleton JSON file.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Run configuration JSON (`model`, `train`, `camera`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics.jsonl, last.kogt, best.kogt and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes report.json and report.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
    },
    /// Finite-difference check of every adjoint, layer and small model (64-bit).
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Only cases whose name contains this string.
        #[arg(long)]
        only: Option<String>,
        /// Corrupt one adjoint (matmul, softmax, layer-norm, gelu, gather-rows).
        #[arg(long, value_parser = parse_fault)]
        fault: Option<FaultKind>,
    },
    /// Dump distance, index-map and mask matrices and fusion weights as CSV.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic train/eval dataset pair.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SynthKind::Pose)]
        kind: SynthKind,
        #[arg(long, default_value_t = 1024)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        eval_count: usize,
        /// Mesh vertex count (mesh kind only).
        #[arg(long, default_value_t = 778)]
        vertices: usize,
    },
    /// Sweep the relative-distance threshold and neighbor order; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
}

fn parse_fault(s: &str) -> std::result::Result<FaultKind, String> {
    FaultKind::parse(s).ok_or_else(|| format!("unknown fault {s:?}"))
}

/// Contents of `--config`. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainSettings,
    pub camera: Camera,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| KogError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| KogError::Config(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        cfg.camera.validate()?;
        if let Some(ModelConfig::KogTransformer(c)) = &cfg.model {
            c.validate()?;
        }
        if let Some(ModelConfig::GaseNet(c)) = &cfg.model {
            c.validate()?;
        }
        Ok(cfg)
    }

    /// Model configuration, defaulting to the pose transformer sized to
    /// the skeleton.
    pub fn model_for(&self, skeleton: &SkeletonGraph) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| {
            ModelConfig::KogTransformer(KogTransformerConfig {
                joints: skeleton.num_nodes(),
                ..KogTransformerConfig::default()
            })
        })
    }
}

/// Loader parallelism: `KOG_THREADS` if set, else the available cores.
pub fn loader_threads() -> usize {
    std::env::var("KOG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(KogError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn load_skeleton(common: &Common) -> Result<SkeletonGraph> {
    let path = common
        .skeleton
        .as_deref()
        .ok_or_else(|| KogError::Config("--skeleton is required".into()))?;
    require_file(path, "skeleton")?;
    SkeletonGraph::load(path)
}

fn out_dir(common: &Common) -> Result<RunOutput> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| KogError::Config("--out is required".into()))?;
    RunOutput::new(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| KogError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> KogError {
    KogError::io(path, std::io::Error::other(e.to_string()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| KogError::io(path, e))
}

/// Square matrix with a leading `node` column.
fn write_matrix<V: ToString>(path: &Path, n: usize, at: impl Fn(usize, usize) -> V) -> Result<()> {
    let header: Vec<String> = std::iter::once("node".to_string()).chain((0..n).map(|j| j.to_string())).collect();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| std::iter::once(i.to_string()).chain((0..n).map(|j| at(i, j).to_string())).collect())
        .collect();
    write_rows(path, &header, &rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_report_csv(path: &Path, r: &MetricReport) -> Result<()> {
    let header = ["samples", "mpjpe_mm", "mpve_mm", "pck_percent", "auc"].map(String::from);
    let row = vec![
        r.samples.to_string(),
        opt(r.mpjpe_mm),
        opt(r.mpve_mm),
        opt(r.pck_percent),
        opt(r.auc),
    ];
    write_rows(path, &header, &[row])
}

fn schema(config: &ModelConfig) -> SampleSchema {
    SampleSchema::new(config.input_shape(), config.output_shape())
}

fn check_skeleton(config: &ModelConfig, skeleton: &SkeletonGraph) -> Result<()> {
    let joints = config.input_shape().0;
    if joints != skeleton.num_nodes() {
        return Err(KogError::Config(format!(
            "model expects {joints} joints but the skeleton has {}",
            skeleton.num_nodes()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    model: &'a ModelConfig,
    precision: &'static str,
    seed: u64,
    steps: u64,
    final_loss: f64,
    train_error_mm: Option<f64>,
    final_eval: &'a Option<MetricReport>,
    best_eval: &'a Option<MetricReport>,
}

fn run_train<T: Scalar>(common: &Common, train_path: &Path, eval_path: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let skeleton = load_skeleton(common)?;
    let model = cfg.model_for(&skeleton);
    check_skeleton(&model, &skeleton)?;
    require_file(train_path, "training data")?;
    if let Some(p) = eval_path {
        require_file(p, "evaluation data")?;
    }
    let out = out_dir(common)?;
    let threads = loader_threads();
    let train_set = load_dataset(train_path, schema(&model), threads)?;
    if train_set.is_empty() {
        return Err(KogError::Config(format!("{} holds no samples", train_path.display())));
    }
    let eval_set = eval_path.map(|p| load_dataset(p, schema(&model), threads)).transpose()?;
    let outcome = train::<T>(
        &skeleton,
        &model,
        &cfg.train,
        &train_set,
        eval_set.as_deref(),
        common.seed,
        Some(&out),
    )?;
    let summary = TrainSummary {
        model: &model,
        precision: T::NAME,
        seed: common.seed,
        steps: outcome.steps,
        final_loss: outcome.final_loss,
        train_error_mm: outcome.train_error_mm,
        final_eval: &outcome.final_eval,
        best_eval: &outcome.best_eval,
    };
    write_json(&out.dir.join("summary.json"), &summary)?;
    let eval = outcome.final_eval.as_ref().map_or("-".to_string(), |r| format!("{:.3} mm", r.primary_error()));
    println!("steps {} final loss {:.6} eval error {eval}", outcome.steps, outcome.final_loss);
    eprintln!("trained {} steps in {:.1}s", outcome.steps, outcome.elapsed.as_secs_f64());
    Ok(())
}

fn run_eval<T: Scalar>(common: &Common, checkpoint: &Path, data: &Path) -> Result<()> {
    require_file(checkpoint, "checkpoint")?;
    require_file(data, "evaluation data")?;
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let (model, skeleton) = ck.into_model()?;
    if let Some(path) = &common.skeleton {
        require_file(path, "skeleton")?;
        if SkeletonGraph::load(path)? != skeleton {
            return Err(KogError::Config("--skeleton differs from the checkpoint's skeleton".into()));
        }
    }
    let stats = ck
        .meta
        .stats
        .clone()
        .ok_or_else(|| KogError::Checkpoint("checkpoint has no normalization statistics".into()))?;
    let samples = load_dataset(data, schema(&ck.meta.config), loader_threads())?;
    let report = evaluate(&model, &stats, &samples, 64)?;
    report.validate()?;
    if let Some(dir) = &common.out {
        let out = RunOutput::new(dir)?;
        write_json(&out.dir.join("report.json"), &report)?;
        write_report_csv(&out.dir.join("report.csv"), &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// Returns whether every case passed.
fn run_gradcheck(common: &Common, instances: usize, only: Option<&str>, fault: Option<FaultKind>) -> Result<bool> {
    if instances == 0 {
        return Err(KogError::Config("--instances must be >= 1".into()));
    }
    let settings = GradCheckSettings {
        instances,
        seed: common.seed,
        ..GradCheckSettings::default()
    };
    let report = run_suite(&settings, fault, |n| only.is_none_or(|o| n.contains(o)))?;
    if report.cases.is_empty() {
        return Err(KogError::Config(format!("no gradient-check case matches {only:?}")));
    }
    for c in &report.cases {
        println!(
            "{:<20} {:>3} instances  worst {:.3e}  {}",
            c.name,
            c.instances,
            c.worst_error,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    eprintln!("gradient suite finished in {:.1}s", report.elapsed_secs);
    if let Some(dir) = &common.out {
        let out = RunOutput::new(dir)?;
        let header = ["case", "instances", "worst_error", "passed"].map(String::from);
        let rows: Vec<Vec<String>> = report
            .cases
            .iter()
            .map(|c| vec![c.name.clone(), c.instances.to_string(), c.worst_error.to_string(), c.passed.to_string()])
            .collect();
        write_rows(&out.dir.join("gradcheck.csv"), &header, &rows)?;
    }
    Ok(report.all_passed())
}

fn run_inspect<T: Scalar>(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let (model, skeleton) = match checkpoint {
        Some(path) => {
            require_file(path, "checkpoint")?;
            Checkpoint::<T>::load(path)?.into_model()?
        }
        None => {
            let cfg = RunConfig::load(common.config.as_deref())?;
            let skeleton = load_skeleton(common)?;
            let config = cfg.model_for(&skeleton);
            check_skeleton(&config, &skeleton)?;
            (Model::<T>::build(&skeleton, &config, common.seed)?, skeleton)
        }
    };
    let out = out_dir(common)?;
    let n = skeleton.num_nodes();
    let h = build_signed_distance(&skeleton);
    write_matrix(&out.dir.join("distance.csv"), n, |i, j| h.get(i, j))?;
    let Model::Kog(kog) = &model else {
        eprintln!("mesh model: wrote the distance matrix only");
        return Ok(());
    };
    let c = kog.config();
    let idx = build_relative_index_map(&h, c.delta, c.directed)?;
    write_matrix(&out.dir.join("index_map.csv"), n, |i, j| idx.get(i, j))?;
    let masks = build_order_masks(&skeleton, c.order);
    for order in 0..=c.order {
        write_matrix(&out.dir.join(format!("mask_order_{order}.csv")), n, |i, j| {
            u8::from(masks.is_admitted(order, i, j))
        })?;
    }
    let fusion = kog.fusion_weights();
    let header: Vec<String> = std::iter::once("module".to_string())
        .chain((0..=c.order).map(|i| format!("c_{i}")))
        .collect();
    let rows: Vec<Vec<String>> = fusion
        .iter()
        .map(|(label, w)| std::iter::once(label.clone()).chain(w.iter().map(|v| v.to_string())).collect())
        .collect();
    write_rows(&out.dir.join("fusion.csv"), &header, &rows)?;
    println!("wrote {} fusion rows of {} weights to {}", rows.len(), c.order + 1, out.dir.display());
    Ok(())
}

fn run_synth(common: &Common, kind: SynthKind, count: usize, eval_count: usize, vertices: usize) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let skeleton = load_skeleton(common)?;
    let out = out_dir(common)?;
    // the evaluation split draws from an independent stream
    let eval_seed = common.seed ^ 0x9e37_79b9_7f4a_7c15;
    let (train_set, eval_set) = match kind {
        SynthKind::Pose => (
            generate_synthetic(&skeleton, count, common.seed, &cfg.camera)?,
            generate_synthetic(&skeleton, eval_count, eval_seed, &cfg.camera)?,
        ),
        SynthKind::Mesh => (
            generate_mesh_synthetic(&skeleton, vertices, count, common.seed)?,
            generate_mesh_synthetic(&skeleton, vertices, eval_count, eval_seed)?,
        ),
    };
    write_dataset(out.dir.join("train.jsonl"), &train_set)?;
    write_dataset(out.dir.join("eval.jsonl"), &eval_set)?;
    println!("wrote {count} training and {eval_count} evaluation samples to {}", out.dir.display());
    Ok(())
}

/// One sweep point of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub directed: bool,
    pub delta: usize,
    pub order: usize,
    pub table_rows: usize,
    pub parameters: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub eval_mpjpe_mm: f64,
    pub eval_pck_percent: f64,
    pub eval_auc: f64,
}

pub const DIRECTED_DELTAS: [usize; 4] = [1, 2, 3, 4];
pub const UNDIRECTED_DELTAS: [usize; 4] = [2, 4, 6, 8];
pub const ORDERS: [usize; 4] = [2, 3, 4, 5];

/// Every variant of the threshold and order sweeps, labelled by axis.
pub fn ablation_grid(base: &KogTransformerConfig) -> Vec<(&'static str, KogTransformerConfig)> {
    let mut out = Vec::new();
    for d in DIRECTED_DELTAS {
        out.push(("delta-directed", KogTransformerConfig { delta: d, directed: true, ..base.clone() }));
    }
    for d in UNDIRECTED_DELTAS {
        out.push(("delta-undirected", KogTransformerConfig { delta: d, directed: false, ..base.clone() }));
    }
    for k in ORDERS {
        out.push(("order", KogTransformerConfig { order: k, ..base.clone() }));
    }
    out
}

fn run_ablate<T: Scalar>(common: &Common, train_path: Option<&Path>, eval_path: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let skeleton = load_skeleton(common)?;
    let base = match cfg.model_for(&skeleton) {
        ModelConfig::KogTransformer(c) => c,
        ModelConfig::GaseNet(_) => {
            return Err(KogError::Config("ablation sweeps the pose transformer only".into()));
        }
    };
    let model = ModelConfig::KogTransformer(base.clone());
    check_skeleton(&model, &skeleton)?;
    let out = out_dir(common)?;
    let threads = loader_threads();
    let load = |p: &Path, what: &str| -> Result<Vec<PoseSample>> {
        require_file(p, what)?;
        load_dataset(p, schema(&model), threads)
    };
    let train_set = match train_path {
        Some(p) => load(p, "training data")?,
        None => generate_synthetic(&skeleton, 256, common.seed, &cfg.camera)?,
    };
    let eval_set = match eval_path {
        Some(p) => load(p, "evaluation data")?,
        None => generate_synthetic(&skeleton, 64, common.seed ^ 0x9e37_79b9_7f4a_7c15, &cfg.camera)?,
    };
    let mut rows = Vec::new();
    for (axis, variant) in ablation_grid(&base) {
        let config = ModelConfig::KogTransformer(variant.clone());
        let o = train::<T>(&skeleton, &config, &cfg.train, &train_set, Some(&eval_set), common.seed, None)?;
        let report = evaluate(&o.model, &o.stats, &eval_set, cfg.train.batch_size)?;
        eprintln!(
            "{axis:<17} delta {} order {}: {:.2} mm",
            variant.delta,
            variant.order,
            report.primary_error()
        );
        rows.push(AblationRow {
            axis: axis.to_string(),
            directed: variant.directed,
            delta: variant.delta,
            order: variant.order,
            table_rows: table_size(variant.delta, variant.directed),
            parameters: variant.parameter_count(),
            steps: o.steps,
            final_loss: o.final_loss,
            eval_mpjpe_mm: report.mpjpe_mm.unwrap_or(f64::NAN),
            eval_pck_percent: report.pck_percent.unwrap_or(f64::NAN),
            eval_auc: report.auc.unwrap_or(f64::NAN),
        });
    }
    let path = out.dir.join("ablation.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| KogError::io(&path, e))?;
    println!("wrote {} ablation rows to {}", rows.len(), path.display());
    Ok(())
}

macro_rules! with_precision {
    ($p:expr, $f:ident ( $($arg:expr),* )) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

/// Runs one parsed command and maps the outcome to an exit code.
pub fn execute(cli: Cli) -> ExitCode {
    let result: Result<bool> = match &cli.command {
        Command::Train { common, train_data, eval_data } => {
            with_precision!(common.precision, run_train(common, train_data, eval_data.as_deref())).map(|_| true)
        }
        Command::Eval { common, checkpoint, eval_data } => {
            with_precision!(common.precision, run_eval(common, checkpoint, eval_data)).map(|_| true)
        }
        Command::Gradcheck { common, instances, only, fault } => {
            run_gradcheck(common, *instances, only.as_deref(), *fault)
        }
        Command::Inspect { common, checkpoint } => {
            with_precision!(common.precision, run_inspect(common, checkpoint.as_deref())).map(|_| true)
        }
        Command::Synth { common, kind, count, eval_count, vertices } => {
            run_synth(common, *kind, *count, *eval_count, *vertices).map(|_| true)
        }
        Command::Ablate { common, train_data, eval_data } => {
            with_precision!(common.precision, run_ablate(common, train_data.as_deref(), eval_data.as_deref()))
                .map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors exit with 1; `--help` and `--version` exit with 0.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": {"kind": "kog-transformer", "dim": 32, "layers": 2}}"#).unwrap();
        let err = RunConfig::load(Some(&p)).unwrap_err().to_string();
        assert!(err.contains("layers"), "{err}");
        std::fs::write(&p, r#"{"train": {"max_steps": "many"}}"#).unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
        std::fs::write(&p, r#"{"model": {"kind": "kog-transformer", "dim": 32, "heads": 4}, "train": {"max_steps": 3}}"#)
            .unwrap();
        let cfg = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(cfg.train.max_steps, 3);
        match cfg.model.unwrap() {
            ModelConfig::KogTransformer(c) => assert_eq!((c.dim, c.num_layers), (32, 5)),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, r#"{"model": {"kind": "kog-transformer", "dim": 30, "heads": 4}}"#).unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }

    #[test]
    fn ablation_grid_covers_both_axes() {
        let grid = ablation_grid(&KogTransformerConfig::default());
        assert_eq!(grid.len(), 12);
        let rows: Vec<usize> = grid[..8].iter().map(|(_, c)| table_size(c.delta, c.directed)).collect();
        assert_eq!(rows, vec![3, 5, 7, 9, 3, 5, 7, 9]);
        assert_eq!(grid[8..].iter().map(|(_, c)| c.order).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["kog", "frobnicate"]), ExitCode::from(EXIT_INVALID));
        assert_eq!(main_with_args(["kog", "train"]), ExitCode::from(EXIT_INVALID));
        assert_eq!(main_with_args(["kog", "--help"]), ExitCode::SUCCESS);
    }
}
