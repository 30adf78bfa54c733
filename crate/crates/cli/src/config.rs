//! Run configuration: TOML with one section per component.
//!
//! Values are layered as task defaults, then the config file, then
//! `--set section.key=value` overrides. Unknown keys are errors.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cbm_core::cbm::{MergeKind, StackConfig, TdSchedule};
use cbm_core::scheme::{CoherenceConfig, TrainConfig};
use cbm_core::tasks::{CatDogConfig, MovingShapesConfig, Task};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    MovingShapes,
    Catdog,
}

impl TaskName {
    pub fn task(self) -> Task {
        match self {
            TaskName::MovingShapes => Task::MovingShapes,
            TaskName::Catdog => Task::CatDog,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moving-shapes" => Ok(TaskName::MovingShapes),
            "catdog" => Ok(TaskName::Catdog),
            other => bail!("unknown task {other:?} (expected moving-shapes or catdog)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Merge {
    Production,
    Addition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub merge: Merge,
    pub shortcuts: bool,
    pub constant_bridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceSection {
    pub lambda: f64,
    pub overlap_rate: f64,
    pub clip_len_min: usize,
    pub clip_len_max: usize,
}

/// Temporal dropout: 1.0, then 0.8 after `every` epochs, then `final_rate`
/// after another `every`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdSection {
    pub final_rate: f64,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: usize,
    pub test: usize,
    pub seq_len: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    /// Moving shapes only.
    pub speed: usize,
    /// Cat & dog only.
    pub max_gap: usize,
    /// Cat & dog only: distances are regressed as `label / target_scale`.
    pub target_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskName,
    pub seed: u64,
    pub epochs: usize,
    pub out: String,
    pub model: ModelSection,
    pub coherence: CoherenceSection,
    pub td: TdSection,
    pub optim: OptimSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn defaults(task: TaskName) -> Self {
        let shared = |lr, batch_size| OptimSection {
            lr,
            weight_decay: 1e-5,
            lr_decay: 0.5,
            patience: 3,
            batch_size,
        };
        match task {
            TaskName::MovingShapes => Self {
                task,
                seed: 1,
                epochs: 10,
                out: "runs/moving-shapes".into(),
                model: ModelSection {
                    layers: 3,
                    channels: 3,
                    kernel_size: 3,
                    merge: Merge::Production,
                    shortcuts: false,
                    constant_bridge: false,
                },
                coherence: CoherenceSection {
                    lambda: 0.8,
                    overlap_rate: 0.25,
                    clip_len_min: 4,
                    clip_len_max: 8,
                },
                td: TdSection { final_rate: 0.5, every: 2 },
                optim: shared(1e-2, 8),
                data: DataSection {
                    train: 400,
                    test: 200,
                    seq_len: 12,
                    height: 16,
                    width: 16,
                    noise: 0.1,
                    speed: 1,
                    max_gap: 0,
                    target_scale: 1.0,
                },
            },
            TaskName::Catdog => Self {
                task,
                seed: 1,
                epochs: 60,
                out: "runs/catdog".into(),
                model: ModelSection {
                    layers: 3,
                    channels: 4,
                    kernel_size: 3,
                    merge: Merge::Production,
                    shortcuts: false,
                    constant_bridge: false,
                },
                coherence: CoherenceSection {
                    lambda: 0.8,
                    overlap_rate: 0.25,
                    clip_len_min: 6,
                    clip_len_max: 10,
                },
                td: TdSection { final_rate: 0.5, every: 2 },
                optim: shared(3e-3, 16),
                data: DataSection {
                    train: 256,
                    test: 100,
                    seq_len: 60,
                    height: 8,
                    width: 8,
                    noise: 0.1,
                    speed: 0,
                    max_gap: 50,
                    target_scale: 25.0,
                },
            },
        }
    }

    /// Task defaults, then `file` (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<Table>().map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            }
            None => Table::new(),
        };
        let mut pairs = Vec::with_capacity(overrides.len());
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override {o:?} is not key=value"))?;
            pairs.push((k.trim().to_string(), parse_value(v.trim())));
        }
        let task = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "task")
            .map(|(_, v)| v.clone())
            .or_else(|| file_table.get("task").cloned());
        let task = match task {
            Some(Value::String(s)) => TaskName::parse(&s)?,
            Some(other) => bail!("task must be a string, got {other}"),
            None => TaskName::Catdog,
        };
        let mut table = Table::try_from(Self::defaults(task))?;
        merge(&mut table, file_table);
        for (k, v) in pairs {
            set_path(&mut table, &k, v)?;
        }
        let cfg: RunConfig = table.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stack().validate()?;
        self.coherence().validate()?;
        self.td_schedule()?;
        if self.optim.batch_size == 0 {
            bail!("optim.batch_size must be positive");
        }
        if !(self.optim.lr > 0.0) {
            bail!("optim.lr must be positive");
        }
        if !(self.optim.lr_decay > 0.0 && self.optim.lr_decay <= 1.0) {
            bail!("optim.lr_decay must be in (0, 1]");
        }
        if self.task == TaskName::Catdog && !(self.data.target_scale > 0.0) {
            bail!("data.target_scale must be positive");
        }
        Ok(())
    }

    pub fn stack(&self) -> StackConfig {
        let mut s = StackConfig::uniform(1, self.model.channels, self.model.layers);
        s.kernel_size = self.model.kernel_size;
        s.merge = match self.model.merge {
            Merge::Production => MergeKind::Production,
            Merge::Addition => MergeKind::Addition,
        };
        s.shortcuts = self.model.shortcuts;
        s.constant_bridge = self.model.constant_bridge;
        s
    }

    pub fn coherence(&self) -> CoherenceConfig {
        CoherenceConfig {
            lambda: self.coherence.lambda,
            overlap_rate: self.coherence.overlap_rate,
            clip_len_min: self.coherence.clip_len_min,
            clip_len_max: self.coherence.clip_len_max,
        }
    }

    pub fn td_schedule(&self) -> Result<TdSchedule> {
        Ok(TdSchedule::decaying_to(self.td.final_rate, self.td.every)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            coherence: self.coherence(),
            batch_size: self.optim.batch_size,
            weight_decay: self.optim.weight_decay,
            target_scale: match self.task {
                TaskName::MovingShapes => 1.0,
                TaskName::Catdog => self.data.target_scale,
            },
        }
    }

    pub fn head_outputs(&self) -> usize {
        match self.task {
            TaskName::MovingShapes => 4,
            TaskName::Catdog => 1,
        }
    }

    pub fn frame_size(&self) -> (usize, usize) {
        match self.task {
            TaskName::MovingShapes => (self.data.height, self.data.height),
            TaskName::Catdog => (self.data.height, self.data.width),
        }
    }

    pub fn shapes_config(&self) -> MovingShapesConfig {
        MovingShapesConfig {
            seq_len: self.data.seq_len,
            image_size: self.data.height,
            speed: self.data.speed,
            noise: self.data.noise,
        }
    }

    pub fn catdog_config(&self) -> CatDogConfig {
        CatDogConfig {
            seq_len: self.data.seq_len,
            max_gap: self.data.max_gap,
            height: self.data.height,
            width: self.data.width,
            noise: self.data.noise,
        }
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).with_context(|| format!("empty override key {key:?}"))?;
    let mut cur = table;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => bail!("unknown config section {p:?} in override {key:?}"),
        };
    }
    if !cur.contains_key(last) {
        bail!("unknown config key {key:?}");
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for task in [TaskName::Catdog, TaskName::MovingShapes] {
            let cfg = RunConfig::defaults(task);
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn override_beats_file_and_picks_task_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "task = \"moving-shapes\"\n[coherence]\nlambda = 0.3\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.coherence.lambda, 0.3);
        assert_eq!(cfg.model.channels, 3);
        let cfg = RunConfig::load(Some(&path), &["coherence.lambda=0".into(), "out=x/y".into()]).unwrap();
        assert_eq!(cfg.coherence.lambda, 0.0);
        assert_eq!(cfg.out, "x/y");
    }

    #[test]
    fn unknown_and_malformed_fields_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[coherence]\nlamda = 0.3\n").unwrap();
        let err = format!("{:#}", RunConfig::load(Some(&path), &[]).unwrap_err());
        assert!(err.contains("lamda"), "{err}");

        std::fs::write(&path, "[coherence]\nlambda = \n").unwrap();
        let err = format!("{:#}", RunConfig::load(Some(&path), &[]).unwrap_err());
        assert!(err.contains("line 2"), "{err}");

        assert!(RunConfig::load(None, &["coherence.nope=1".into()]).is_err());
        assert!(RunConfig::load(None, &["coherence.clip_len_min=1".into()]).is_err());
    }
}
