use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cbm_cli::ablate::{ablate, AblationRow};
use cbm_cli::config::{RunConfig, TaskName};
use cbm_cli::gradcheck::{run_suite, GradcheckOptions};
use cbm_cli::run::{evaluate, make_datasets, train_to_dir, Run};
use cbm_cli::Checkpoint;
use cbm_core::tasks::{Dataset, TaskMetrics};

#[derive(Parser)]
#[command(name = "cbm", version, about = "Train and evaluate context-bridge recurrent models on toy video tasks")]
struct Cli {
    /// Print the default configuration for --task and exit.
    #[arg(long)]
    print_defaults: bool,
    /// Task whose defaults --print-defaults shows.
    #[arg(long, default_value = "catdog")]
    task: String,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set coherence.lambda=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out={:?}", o.display().to_string()));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train for the configured number of epochs.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with whole-sequence inference.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; defaults to the checkpoint's held-out split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for eval.csv; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the full cell.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0.0)]
        td_rate: f64,
        #[arg(long, default_value_t = 0)]
        gate_seed: u64,
        #[cfg(feature = "fault-injection")]
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Sweep merge mode, final TD rate and coherence weight one at a time.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a generated split to a dataset file.
    Dataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        output: PathBuf,
    },
}

fn print_metrics(m: &TaskMetrics) {
    if let Some(a) = m.accuracy {
        println!("accuracy={a}");
    }
    if let Some(e) = m.exact_match {
        println!("exact_match={e}");
    }
    if let Some(e) = m.mae {
        println!("mae={e}");
    }
}

fn cmd_train(cfg: &ConfigArgs, resume: Option<&Path>) -> Result<()> {
    let mut run = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut run = Run::from_checkpoint(ck)?;
            // only the stopping point and output location may change on resume
            let fresh = cfg.load()?;
            run.config.epochs = fresh.epochs;
            run.config.out = fresh.out;
            run
        }
        None => Run::new(cfg.load()?)?,
    };
    let out = PathBuf::from(&run.config.out);
    train_to_dir(&mut run, &out, |r| {
        println!(
            "epoch {:>3}  task {:.5}  coherence {:.6}  lr {:.2e}  td {:.1}  acc {}  exact {}  mae {}",
            r.epoch,
            r.train.task_loss,
            r.train.coherence_loss,
            r.lr,
            r.td_rate,
            r.eval.accuracy.map_or("-".into(), |v| format!("{v:.3}")),
            r.eval.exact_match.map_or("-".into(), |v| format!("{v:.3}")),
            r.eval.mae.map_or("-".into(), |v| format!("{v:.3}")),
        );
    })?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let sequences = match data {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let ds = Dataset::<f64>::read_from(&mut std::io::BufReader::new(f))?;
            if ds.task != ck.config.task.task() {
                anyhow::bail!("dataset task {:?} does not match the checkpoint's {:?}", ds.task, ck.config.task);
            }
            ds.sequences
        }
        None => make_datasets(&ck.config)?.1,
    };
    let m = evaluate(&ck.config, &ck.model, &sequences)?;
    println!("epoch={}", ck.epoch);
    print_metrics(&m);
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    fs::create_dir_all(&dir)?;
    let path = dir.join("eval.csv");
    let new = !path.exists();
    let mut f = fs::OpenOptions::new().append(true).create(true).open(&path)?;
    if new {
        writeln!(f, "checkpoint_epoch,eval_accuracy,eval_exact_match,eval_mae")?;
    }
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(f, "{},{},{},{}", ck.epoch, o(m.accuracy), o(m.exact_match), o(m.mae))?;
    Ok(())
}

fn cmd_gradcheck(cfg: &ConfigArgs, opts: GradcheckOptions) -> Result<bool> {
    let run_cfg = cfg.load()?;
    let opts = GradcheckOptions { seed: run_cfg.seed, ..opts };
    let lines = run_suite(&opts)?;
    let mut all = true;
    for l in &lines {
        println!(
            "{:<22} {:>4} instances  max rel err {:.3e}  {}",
            l.name,
            l.instances,
            l.max_rel_error,
            if l.passed { "ok" } else { "FAIL" }
        );
        all &= l.passed;
    }
    let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    println!("max relative error {worst:.3e} (tolerance {:.0e})", opts.config.tolerance);
    Ok(all)
}

fn cmd_ablate(cfg: &ConfigArgs) -> Result<()> {
    let base = cfg.load()?;
    let out = PathBuf::from(&base.out);
    fs::create_dir_all(&out)?;
    println!("{}", AblationRow::HEADER);
    let rows = ablate(&base, |r| println!("{}", r.to_csv()))?;
    let mut text = String::from(AblationRow::HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(out.join("ablation.csv"), text)?;
    Ok(())
}

fn cmd_dataset(cfg: &ConfigArgs, split: &str, output: &Path) -> Result<()> {
    let c = cfg.load()?;
    let (train, test) = make_datasets(&c)?;
    let sequences = match split {
        "train" => train,
        "test" => test,
        other => anyhow::bail!("unknown split {other:?} (train or test)"),
    };
    let (h, w) = c.frame_size();
    let ds = Dataset {
        task: c.task.task(),
        frame_shape: [1, h, w],
        sequences,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(output)?);
    ds.write_to(&mut f)?;
    f.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<ExitCode> {
        if cli.print_defaults {
            print!("{}", RunConfig::defaults(TaskName::parse(&cli.task)?).to_toml());
            return Ok(ExitCode::SUCCESS);
        }
        let Some(command) = &cli.command else {
            anyhow::bail!("no subcommand given (train, eval, gradcheck, ablate, dataset)");
        };
        match command {
            Command::Train { cfg, resume } => cmd_train(cfg, resume.as_deref())?,
            Command::Eval { checkpoint, data, out } => cmd_eval(checkpoint, data.as_deref(), out.as_deref())?,
            Command::Gradcheck {
                cfg,
                instances,
                td_rate,
                gate_seed,
                #[cfg(feature = "fault-injection")]
                inject_fault,
            } => {
                #[allow(unused_mut)]
                let mut opts = GradcheckOptions {
                    instances: *instances,
                    td_rate: *td_rate,
                    gate_seed: *gate_seed,
                    ..Default::default()
                };
                #[cfg(feature = "fault-injection")]
                {
                    opts.inject_fault = *inject_fault;
                }
                if !cmd_gradcheck(cfg, opts)? {
                    return Ok(ExitCode::from(2));
                }
            }
            Command::Ablate { cfg } => cmd_ablate(cfg)?,
            Command::Dataset { cfg, split, output } => cmd_dataset(cfg, split, output)?,
        }
        Ok(ExitCode::SUCCESS)
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
