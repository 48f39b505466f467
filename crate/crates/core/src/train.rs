//! Minibatch training loop, evaluation and run logging.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{batch_tensors, NormalizationStats, PoseSample};
use crate::error::{KogError, Result};
use crate::graph::SkeletonGraph;
use crate::metrics::MetricReport;
use crate::models::{Model, ModelConfig};
use crate::nn::{AdamState, LrSchedule, ScheduleKind};
use crate::tensor::{seeded_rng, Scalar, Tape};

/// Optimization settings. Every field has a default; `schedule` defaults to
/// the model kind's own schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_steps: u64,
    pub schedule: Option<LrSchedule>,
    /// Steps between evaluations (and train-error checks).
    pub eval_every: u64,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Stop once the train-set error (mm) drops below this.
    pub stop_below_mm: Option<f64>,
    /// Wall-clock budget; the run stops after the step that exceeds it.
    pub time_limit_secs: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_steps: 5000,
            schedule: None,
            eval_every: 500,
            checkpoint_every: 1000,
            stop_below_mm: None,
            time_limit_secs: None,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(KogError::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(KogError::Config("eval_every must be >= 1".into()));
        }
        if let Some(s) = &self.schedule {
            LrSchedule::new(s.kind, s.base, s.factor, s.interval)?;
            if !(s.base > 0.0) {
                return Err(KogError::Config(format!("learning rate {} must be positive", s.base)));
            }
        }
        Ok(())
    }

    pub fn schedule_for(&self, config: &ModelConfig) -> LrSchedule {
        self.schedule.unwrap_or(match config {
            ModelConfig::KogTransformer(_) => LrSchedule::pose_default(),
            ModelConfig::GaseNet(_) => LrSchedule::shape_default(),
        })
    }
}

/// One line of the JSON-lines metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_error_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub stats: NormalizationStats,
    pub steps: u64,
    pub elapsed: Duration,
    pub final_loss: f64,
    /// Train-set error at the last check, if any check ran.
    pub train_error_mm: Option<f64>,
    pub final_eval: Option<MetricReport>,
    pub best_eval: Option<MetricReport>,
    pub log: Vec<LogRecord>,
}

/// Root joint used for target alignment: the skeleton root for pose models,
/// none for mesh models.
pub fn target_root(config: &ModelConfig, skeleton: &SkeletonGraph) -> Option<usize> {
    match config {
        ModelConfig::KogTransformer(_) => Some(skeleton.root()),
        ModelConfig::GaseNet(_) => None,
    }
}

/// Evaluation-mode metrics on `samples` (raw millimeter samples).
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    stats: &NormalizationStats,
    samples: &[PoseSample],
    batch_size: usize,
) -> Result<MetricReport> {
    let normalized: Vec<PoseSample> = samples.iter().map(|s| stats.normalize(s)).collect();
    evaluate_normalized(model, stats, &normalized, batch_size)
}

fn evaluate_normalized<T: Scalar>(
    model: &Model<T>,
    stats: &NormalizationStats,
    normalized: &[PoseSample],
    batch_size: usize,
) -> Result<MetricReport> {
    if normalized.is_empty() {
        return Err(KogError::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for chunk in normalized.chunks(batch_size.max(1)) {
        let refs: Vec<&PoseSample> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        let out = model.predict(&x)?;
        pred.extend(out.data().iter().map(|v| v.as_f64() * stats.target_scale));
        gt.extend(y.data().iter().map(|v| v.as_f64() * stats.target_scale));
    }
    let nodes = normalized[0].target.len();
    match model {
        Model::Kog(_) => MetricReport::pose(&pred, &gt, nodes, stats.root.unwrap_or(0)),
        Model::Gase(_) => MetricReport::mesh(&pred, &gt, nodes),
    }
}

/// Where a run writes its log and checkpoints.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| KogError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.kogt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.kogt")
    }
}

/// Trains a freshly initialized model on `train`; `eval` defaults to the
/// training set. Everything is determined by `seed`.
pub fn train<T: Scalar>(
    skeleton: &SkeletonGraph,
    config: &ModelConfig,
    settings: &TrainSettings,
    train: &[PoseSample],
    eval: Option<&[PoseSample]>,
    seed: u64,
    output: Option<&RunOutput>,
) -> Result<TrainOutcome<T>> {
    settings.validate()?;
    let mut model = Model::<T>::build(skeleton, config, seed)?;
    let stats = NormalizationStats::fit(train, target_root(config, skeleton))?;
    let schedule = settings.schedule_for(config);
    let norm_train: Vec<PoseSample> = train.iter().map(|s| stats.normalize(s)).collect();
    let norm_eval: Option<Vec<PoseSample>> = eval.map(|e| e.iter().map(|s| stats.normalize(s)).collect());
    let eval_set = norm_eval.as_deref().unwrap_or(&norm_train);

    let mut log_file = match output {
        Some(o) => {
            let p = o.log_path();
            Some((BufWriter::new(File::create(&p).map_err(|e| KogError::io(&p, e))?), p))
        }
        None => None,
    };

    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..norm_train.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;
    let mut adam = AdamState::default();
    let start = Instant::now();
    let mut log = Vec::new();
    let mut best: Option<MetricReport> = None;
    let mut final_eval = None;
    let mut train_error = None;
    let mut loss_value = f64::NAN;
    let mut step = 0u64;

    while step < settings.max_steps {
        if cursor >= order.len() {
            if step > 0 {
                epoch += 1;
            }
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + settings.batch_size).min(order.len());
        let batch: Vec<&PoseSample> = order[cursor..end].iter().map(|&i| &norm_train[i]).collect();
        cursor = end;

        let lr = schedule.lr(match schedule.kind {
            ScheduleKind::Step => step,
            ScheduleKind::Epoch => epoch,
        });
        let (x, y) = batch_tensors::<T>(&batch)?;
        let tape = Tape::training(rng.gen());
        let bound = model.store().bind(&tape);
        let pred = model.forward(&bound, tape.constant(&x))?;
        let loss = pred.squared_error(tape.constant(&y))?;
        loss_value = loss.value().data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(KogError::Contract(format!("loss became {loss_value} at step {step}")));
        }
        tape.backward(loss)?;
        model.store_mut().harvest_grads(&tape, &bound);
        drop(bound);
        drop(tape);
        adam.step(model.store_mut(), lr)?;
        step += 1;

        let out_of_time = settings
            .time_limit_secs
            .is_some_and(|limit| start.elapsed().as_secs_f64() > limit);
        let check = step.is_multiple_of(settings.eval_every) || step == settings.max_steps || out_of_time;
        let mut record = LogRecord {
            step,
            epoch,
            lr,
            loss: loss_value,
            train_error_mm: None,
            eval: None,
        };
        let mut stop = out_of_time;
        if check {
            let report = evaluate_normalized(&model, &stats, eval_set, settings.batch_size)?;
            if settings.stop_below_mm.is_some() {
                let err = if norm_eval.is_some() {
                    evaluate_normalized(&model, &stats, &norm_train, settings.batch_size)?.primary_error()
                } else {
                    report.primary_error()
                };
                record.train_error_mm = Some(err);
                train_error = Some(err);
                stop |= settings.stop_below_mm.is_some_and(|t| err < t);
            }
            if best.as_ref().is_none_or(|b| report.primary_error() < b.primary_error()) {
                if let Some(o) = output {
                    Checkpoint::capture(&model, skeleton, Some(&stats), seed, step)?.save(o.best_checkpoint())?;
                }
                best = Some(report.clone());
            }
            final_eval = Some(report.clone());
            record.eval = Some(report);
        }
        if let Some(o) = output {
            let periodic = settings.checkpoint_every > 0 && step.is_multiple_of(settings.checkpoint_every);
            if periodic || stop || step == settings.max_steps {
                Checkpoint::capture(&model, skeleton, Some(&stats), seed, step)?.save(o.last_checkpoint())?;
            }
        }
        if let Some((w, p)) = log_file.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").map_err(|e| KogError::io(&*p, e))?;
            if record.eval.is_some() {
                w.flush().map_err(|e| KogError::io(&*p, e))?;
            }
        }
        log.push(record);
        if stop {
            break;
        }
    }
    if let Some((mut w, p)) = log_file {
        w.flush().map_err(|e| KogError::io(&p, e))?;
    }
    Ok(TrainOutcome {
        model,
        stats,
        steps: step,
        elapsed: start.elapsed(),
        final_loss: loss_value,
        train_error_mm: train_error,
        final_eval,
        best_eval: best,
        log,
    })
}

/// Reads a JSON-lines training log back.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KogError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(KogError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Camera};
    use crate::models::KogTransformerConfig;

    fn tiny() -> ModelConfig {
        ModelConfig::KogTransformer(KogTransformerConfig {
            num_layers: 1,
            dim: 16,
            heads: 2,
            order: 2,
            ..KogTransformerConfig::default()
        })
    }

    fn settings(steps: u64) -> TrainSettings {
        TrainSettings {
            batch_size: 8,
            max_steps: steps,
            eval_every: 5,
            checkpoint_every: 10,
            ..TrainSettings::default()
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let skel = SkeletonGraph::human36m_16();
        let data = generate_synthetic(&skel, 20, 1, &Camera::default()).unwrap();
        let run = || train::<f64>(&skel, &tiny(), &settings(12), &data, None, 4, None).unwrap();
        let (a, b) = (run(), run());
        let losses = |o: &TrainOutcome<f64>| o.log.iter().map(|r| r.loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert!(a.log[11].loss < a.log[0].loss);
        let c = train::<f64>(&skel, &tiny(), &settings(12), &data, None, 5, None).unwrap();
        assert_ne!(losses(&a), losses(&c));
    }

    #[test]
    fn writes_log_and_checkpoints_matching_in_run_eval() {
        let skel = SkeletonGraph::human36m_16();
        let data = generate_synthetic(&skel, 16, 2, &Camera::default()).unwrap();
        let held_out = generate_synthetic(&skel, 8, 3, &Camera::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = RunOutput::new(dir.path()).unwrap();
        let outcome = train::<f32>(&skel, &tiny(), &settings(10), &data, Some(&held_out), 0, Some(&out)).unwrap();
        let log = read_log(out.log_path()).unwrap();
        assert_eq!(log, outcome.log);
        assert_eq!(log.len(), 10);
        assert!(log[4].eval.is_some() && log[3].eval.is_none());

        let ck = Checkpoint::<f32>::load(out.last_checkpoint()).unwrap();
        assert_eq!(ck.meta.step, 10);
        let (model, _) = ck.into_model().unwrap();
        let stats = ck.meta.stats.clone().unwrap();
        let report = evaluate(&model, &stats, &held_out, 8).unwrap();
        assert_eq!(Some(report), outcome.final_eval);
        assert!(out.best_checkpoint().exists());
    }

    #[test]
    fn early_stop_and_settings_validation() {
        let skel = SkeletonGraph::human36m_16();
        let data = generate_synthetic(&skel, 8, 2, &Camera::default()).unwrap();
        let s = TrainSettings {
            stop_below_mm: Some(1e9),
            ..settings(50)
        };
        let outcome = train::<f32>(&skel, &tiny(), &s, &data, None, 0, None).unwrap();
        assert_eq!(outcome.steps, 5);
        assert!(TrainSettings { batch_size: 0, ..TrainSettings::default() }.validate().is_err());
        let parsed: std::result::Result<TrainSettings, _> = serde_json::from_str(r#"{"batch_sz": 3}"#);
        assert!(parsed.is_err());
    }
}
