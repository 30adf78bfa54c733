//! One-factor-at-a-time sweeps around a base configuration.

use std::collections::HashMap;

use anyhow::Result;
use cbm_core::rng::{stream_rng, Stream};
use cbm_core::scheme::measure_overlap_discrepancy;
use cbm_core::tasks::TaskMetrics;

use crate::config::{Merge, RunConfig};
use crate::run::Run;

pub const TD_GRID: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 1.0];
pub const LAMBDA_GRID: [f64; 2] = [0.0, 0.8];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub factor: &'static str,
    pub value: String,
    pub eval: TaskMetrics,
    pub overlap_discrepancy: f64,
    pub final_task_loss: f64,
}

impl AblationRow {
    pub const HEADER: &'static str = "factor,value,eval_accuracy,eval_exact_match,eval_mae,overlap_discrepancy,final_task_loss";

    pub fn to_csv(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.factor,
            self.value,
            o(self.eval.accuracy),
            o(self.eval.exact_match),
            o(self.eval.mae),
            self.overlap_discrepancy,
            self.final_task_loss
        )
    }
}

/// Metrics of one finished run: held-out task metrics and the boundary
/// discrepancy of the clip scheme on the held-out split.
pub struct RunSummary {
    pub eval: TaskMetrics,
    pub overlap_discrepancy: f64,
    pub final_task_loss: f64,
}

pub fn train_and_summarize(cfg: &RunConfig) -> Result<RunSummary> {
    let mut run = Run::new(cfg.clone())?;
    let mut last = None;
    while run.epoch < cfg.epochs {
        last = Some(run.step()?);
    }
    let eval = crate::run::evaluate(cfg, &run.trainer.model, &run.test)?;
    let mut rng = stream_rng(cfg.seed, Stream::Clips);
    let overlap_discrepancy = measure_overlap_discrepancy(&run.trainer.model, &run.test, &cfg.coherence(), &mut rng)?;
    Ok(RunSummary {
        eval,
        overlap_discrepancy,
        final_task_loss: last.map_or(f64::NAN, |r| r.train.task_loss),
    })
}

/// The variants, each differing from `base` in one factor.
pub fn variants(base: &RunConfig) -> Vec<(&'static str, String, RunConfig)> {
    let mut out = Vec::new();
    for merge in [Merge::Production, Merge::Addition] {
        let mut c = base.clone();
        c.model.merge = merge;
        let name = match merge {
            Merge::Production => "production",
            Merge::Addition => "addition",
        };
        out.push(("merge", name.to_string(), c));
    }
    for rate in TD_GRID {
        let mut c = base.clone();
        c.td.final_rate = rate;
        out.push(("td_final_rate", rate.to_string(), c));
    }
    for lambda in LAMBDA_GRID {
        let mut c = base.clone();
        c.coherence.lambda = lambda;
        out.push(("lambda", lambda.to_string(), c));
    }
    out
}

/// Run every variant with the base seed; identical configurations are
/// trained once.
pub fn ablate(base: &RunConfig, mut on_row: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    let mut cache: HashMap<String, (TaskMetrics, f64, f64)> = HashMap::new();
    let mut rows = Vec::new();
    for (factor, value, cfg) in variants(base) {
        let key = cfg.to_toml();
        let (eval, disc, loss) = match cache.get(&key) {
            Some(&hit) => hit,
            None => {
                let s = train_and_summarize(&cfg)?;
                let v = (s.eval, s.overlap_discrepancy, s.final_task_loss);
                cache.insert(key, v);
                v
            }
        };
        let row = AblationRow {
            factor,
            value,
            eval,
            overlap_discrepancy: disc,
            final_task_loss: loss,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskName;

    #[test]
    fn grid_shape() {
        let v = variants(&RunConfig::defaults(TaskName::MovingShapes));
        assert_eq!(v.iter().filter(|(f, _, _)| *f == "td_final_rate").count(), 5);
        assert_eq!(v.iter().filter(|(f, _, _)| *f == "merge").count(), 2);
        assert_eq!(v.iter().filter(|(f, _, _)| *f == "lambda").count(), 2);
    }
}
