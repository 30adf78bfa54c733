use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use cbm_core::optim::LrSchedule;
use cbm_core::rng::{stream_rng, RngState, Stream};
use cbm_core::scheme::{EpochMetrics, Sequence, Trainer};
use cbm_core::tasks::{evaluate_classification, evaluate_distance, gen_catdog, gen_moving_shapes, TaskMetrics};
use cbm_core::Model64;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TaskName};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// One epoch of training followed by evaluation on the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train: EpochMetrics,
    pub eval: TaskMetrics,
    pub lr: f64,
    pub td_rate: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub const HEADER: &'static str = "epoch,task_loss,coherence_loss,overlap_discrepancy,grad_norm,peak_unroll,longest_clip,eval_accuracy,eval_exact_match,eval_mae,lr,td_rate";

    pub fn to_csv(&self) -> String {
        let t = &self.train;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            t.task_loss,
            t.coherence_loss,
            t.overlap_discrepancy,
            t.grad_norm,
            t.peak_unroll,
            t.longest_clip,
            opt(self.eval.accuracy),
            opt(self.eval.exact_match),
            opt(self.eval.mae),
            self.lr,
            self.td_rate
        )
    }
}

/// Train and test splits, fixed by the seed alone.
pub fn make_datasets(cfg: &RunConfig) -> Result<(Vec<Sequence<f64>>, Vec<Sequence<f64>>)> {
    let mut train_rng = stream_rng(cfg.seed, Stream::Data);
    let mut test_rng = stream_rng(cfg.seed, Stream::TestData);
    Ok(match cfg.task {
        TaskName::MovingShapes => {
            let c = cfg.shapes_config();
            let conv = |v: Vec<cbm_core::tasks::MovingShapeSample<f64>>| v.into_iter().map(|s| s.into_sequence()).collect();
            (
                conv(gen_moving_shapes(cfg.data.train, &c, &mut train_rng)?),
                conv(gen_moving_shapes(cfg.data.test, &c, &mut test_rng)?),
            )
        }
        TaskName::Catdog => {
            let c = cfg.catdog_config();
            let conv = |v: Vec<cbm_core::tasks::CatDogSequence<f64>>| v.into_iter().map(|s| s.into_sequence()).collect();
            (
                conv(gen_catdog(cfg.data.train, &c, &mut train_rng)?),
                conv(gen_catdog(cfg.data.test, &c, &mut test_rng)?),
            )
        }
    })
}

pub fn evaluate(cfg: &RunConfig, model: &Model64, data: &[Sequence<f64>]) -> Result<TaskMetrics> {
    Ok(match cfg.task {
        TaskName::MovingShapes => evaluate_classification(model, data)?,
        TaskName::Catdog => evaluate_distance(model, data, cfg.data.target_scale)?,
    })
}

/// A training run that can be stepped epoch by epoch and checkpointed.
pub struct Run {
    pub config: RunConfig,
    pub trainer: Trainer<f64>,
    pub lr: LrSchedule,
    /// Epochs completed.
    pub epoch: usize,
    pub train: Vec<Sequence<f64>>,
    pub test: Vec<Sequence<f64>>,
    clip_rng: ChaCha8Rng,
    gate_rng: ChaCha8Rng,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = make_datasets(&config)?;
        let (h, w) = config.frame_size();
        let model = Model64::new(config.stack(), h, w, config.head_outputs(), &mut stream_rng(config.seed, Stream::Init))?;
        Ok(Self {
            trainer: Trainer::new(model, config.train_config()),
            lr: LrSchedule::new(config.optim.lr, config.optim.lr_decay, config.optim.patience),
            epoch: 0,
            train,
            test,
            clip_rng: stream_rng(config.seed, Stream::Clips),
            gate_rng: stream_rng(config.seed, Stream::Gates),
            config,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let (train, test) = make_datasets(&ck.config)?;
        let mut trainer = Trainer::new(ck.model, ck.config.train_config());
        trainer.adam = ck.adam;
        trainer.store = ck.store;
        Ok(Self {
            trainer,
            lr: ck.lr,
            epoch: ck.epoch,
            train,
            test,
            clip_rng: ck.clip_rng.restore(),
            gate_rng: ck.gate_rng.restore(),
            config: ck.config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            model: self.trainer.model.clone(),
            adam: self.trainer.adam.clone(),
            lr: self.lr.clone(),
            clip_rng: RngState::capture(&self.clip_rng),
            gate_rng: RngState::capture(&self.gate_rng),
            store: self.trainer.store.clone(),
        }
    }

    pub fn step(&mut self) -> Result<MetricsRow> {
        let td_rate = self.config.td_schedule()?.rate_at(self.epoch);
        let lr = self.lr.rate;
        let train = self
            .trainer
            .train_epoch(&self.train, td_rate, lr, &mut self.clip_rng, &mut self.gate_rng)
            .with_context(|| format!("epoch {}", self.epoch))?;
        self.lr.observe(train.task_loss);
        let eval = evaluate(&self.config, &self.trainer.model, &self.test)?;
        let row = MetricsRow {
            epoch: self.epoch,
            train,
            eval,
            lr,
            td_rate,
        };
        self.epoch += 1;
        Ok(row)
    }
}

/// Keep the header and the first `rows` data lines of a CSV, or start one.
fn reset_csv(path: &Path, header: &str, rows: usize) -> Result<()> {
    let kept: Vec<String> = match fs::read_to_string(path) {
        Ok(text) if text.lines().next() == Some(header) => text.lines().skip(1).take(rows).map(String::from).collect(),
        _ => Vec::new(),
    };
    let mut out = String::from(header);
    out.push('\n');
    for l in kept {
        out.push_str(&l);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().append(true).create(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Run until `config.epochs`, writing metrics, timings and a checkpoint after
/// every epoch. Resumed runs keep the metrics rows of completed epochs.
pub fn train_to_dir(run: &mut Run, out: &Path, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), run.config.to_toml())?;
    let metrics = out.join(METRICS_FILE);
    let timing = out.join(TIMING_FILE);
    reset_csv(&metrics, MetricsRow::HEADER, run.epoch)?;
    reset_csv(&timing, "epoch,seconds", run.epoch)?;
    let mut rows = Vec::new();
    while run.epoch < run.config.epochs {
        let started = Instant::now();
        let row = run.step()?;
        append_line(&metrics, &row.to_csv())?;
        append_line(&timing, &format!("{},{:.3}", row.epoch, started.elapsed().as_secs_f64()))?;
        run.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}
