use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slicescale::agents::PolicyCheckpoint;
use slicescale::env::ConditionMode;
use slicescale::harness::report::{CurveSeries, NamedSweep};
use slicescale::harness::{
    emit_report, evaluate, finetune, pred_alloc_checkpoint, sweep_conditions, sweep_noise, train_with_model,
    EvalSpec, Execution, ExperimentConfig, Summary, TrafficSpec,
};
use slicescale::network_model::{
    default_bandwidth_axis, default_traffic_axis, load_samples, save_samples, QoSModel, SyntheticTruthConfig,
};
use slicescale::traffic::{synthetic_diurnal_series, write_series};

#[derive(Parser)]
#[command(name = "slicescale", version, about = "Risk-aware RAN slice resource scaling experiments")]
struct Cli {
    /// Experiment config (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run evaluation episodes on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the calibrated synthetic QoS model (and optionally noisy grid samples).
    GenModel {
        /// Measurements per grid node; the exact model is written when 0.
        #[arg(long, default_value_t = 0)]
        samples_per_node: usize,
    },
    /// Fit a QoS model from `traffic,bandwidth,qos` samples.
    FitModel {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Write the bundled synthetic diurnal trace as CSV.
    GenTrace {
        #[arg(long, default_value_t = 2024)]
        trace_seed: u64,
    },
    /// Train the configured agent; writes best/last checkpoints and the learning curve.
    Train,
    /// Evaluate a checkpoint.
    Evaluate {
        #[command(flatten)]
        target: Target,
        /// Row label in the summary; derived from the traffic when absent.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Evaluate a checkpoint across deterministic network conditions.
    SweepConditions {
        #[command(flatten)]
        target: Target,
    },
    /// Evaluate a checkpoint across prediction noise levels.
    SweepNoise {
        #[command(flatten)]
        target: Target,
    },
    /// Fine-tune a WCSAC checkpoint under the configured fixed condition.
    Finetune {
        /// WCSAC checkpoint to start from.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Re-emit CSVs and plots from a summary.
    Report {
        /// Defaults to `<out>/summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Target {
    /// Checkpoint file; `pred-alloc` evaluates the heuristic.
    #[arg(long)]
    checkpoint: String,
    /// Shift the configured trace by this many users/s.
    #[arg(long)]
    offset: Option<f64>,
    /// `stochastic` or a deterministic condition value `d`.
    #[arg(long)]
    condition: Option<String>,
    /// Number of episodes; the config's `eval_episodes` when absent.
    #[arg(long)]
    episodes: Option<usize>,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Execution,
}

impl Ctx {
    fn model(&self) -> Result<Arc<QoSModel>> {
        Ok(self.cfg.load_model()?)
    }

    fn summary_path(&self) -> PathBuf {
        self.out.join("summary.json")
    }

    fn load_summary(&self) -> Result<Summary> {
        let p = self.summary_path();
        if p.exists() {
            Ok(Summary::load(&p)?)
        } else {
            Ok(Summary::default())
        }
    }

    /// Merge into the stored summary and re-emit the report.
    fn publish(&self, update: Summary) -> Result<()> {
        let mut summary = self.load_summary()?;
        summary.merge(update);
        emit_report(&summary, &self.out)?;
        Ok(())
    }

    fn checkpoint(&self, name: &str, model: &QoSModel) -> Result<PolicyCheckpoint> {
        if name == "pred-alloc" {
            return Ok(pred_alloc_checkpoint(&self.cfg, model)?);
        }
        PolicyCheckpoint::load(name).with_context(|| format!("loading checkpoint {name}"))
    }

    fn eval_spec(&self, target: &Target) -> Result<EvalSpec> {
        let cfg = &self.cfg;
        let mut traffic = cfg.traffic.clone();
        if let Some(off) = target.offset {
            traffic = match traffic {
                TrafficSpec::Trace(t) => TrafficSpec::Trace(t.with_offset(off)),
                _ => bail!("--offset needs trace traffic in the config"),
            };
        }
        let condition = match target.condition.as_deref() {
            None => cfg.episode.condition,
            Some(s) => parse_condition(s)?,
        };
        Ok(EvalSpec {
            episode: cfg.episode.clone(),
            traffic,
            predictor: cfg.predictor,
            condition,
            episodes: target.episodes.unwrap_or(cfg.eval_episodes),
            seed: cfg.seed,
        })
    }
}

fn parse_condition(s: &str) -> Result<ConditionMode> {
    if s == "stochastic" {
        return Ok(ConditionMode::Stochastic);
    }
    let d: f64 = s
        .parse()
        .with_context(|| format!("condition must be `stochastic` or a number, got {s:?}"))?;
    Ok(ConditionMode::Deterministic(d))
}

fn checkpoint_label(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
}

fn condition_label(c: ConditionMode) -> String {
    match c {
        ConditionMode::Stochastic => "stochastic".into(),
        ConditionMode::Deterministic(d) => format!("d{d:+}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let ctx = Ctx { cfg, out, exec };
    let cfg = &ctx.cfg;

    match cli.command {
        Command::GenModel { samples_per_node } => {
            let truth = SyntheticTruthConfig::default();
            let (ta, ba) = (default_traffic_axis(), default_bandwidth_axis());
            let model = if samples_per_node == 0 {
                truth.exact_model(&ta, &ba)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let samples = truth.generate_grid(&ta, &ba, samples_per_node, &mut rng)?;
                save_samples(&samples, ctx.out.join("samples.csv"))?;
                QoSModel::fit_from_samples(&samples, &ta, &ba)?
            };
            let path = ctx.out.join("model.csv");
            model.save(&path)?;
            println!("{}", path.display());
        }
        Command::FitModel { samples } => {
            let samples = load_samples(&samples)?;
            let mut ta: Vec<f64> = samples.iter().map(|s| s.traffic).collect();
            let mut ba: Vec<f64> = samples.iter().map(|s| s.bandwidth).collect();
            for axis in [&mut ta, &mut ba] {
                axis.sort_by(f64::total_cmp);
                axis.dedup();
            }
            let model = QoSModel::fit_from_samples(&samples, &ta, &ba)?;
            let path = ctx.out.join("model.csv");
            model.save(&path)?;
            println!("{}", path.display());
        }
        Command::GenTrace { trace_seed } => {
            let path = ctx.out.join("diurnal_trace.csv");
            write_series(&synthetic_diurnal_series(trace_seed), &path)?;
            println!("{}", path.display());
        }
        Command::Train => {
            let model = ctx.model()?;
            let outcome = train_with_model(cfg, model)?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            let dir = ctx.out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            let name = cfg.agent.name();
            let best = dir.join(format!("{name}-best.json"));
            outcome.best.save(&best)?;
            outcome.last.save(dir.join(format!("{name}-last.json")))?;
            fs::write(
                ctx.out.join(format!("{name}-diagnostics.json")),
                serde_json::to_string_pretty(&outcome.diagnostics)?,
            )?;
            ctx.publish(Summary {
                curves: vec![CurveSeries {
                    name: name.to_string(),
                    points: outcome.curve,
                }],
                ..Summary::default()
            })?;
            match outcome.best_epoch {
                Some(e) => println!("{} (epoch {e})", best.display()),
                None => println!("{}", best.display()),
            }
        }
        Command::Evaluate { target, scenario } => {
            let model = ctx.model()?;
            let ck = ctx.checkpoint(&target.checkpoint, &model)?;
            let spec = ctx.eval_spec(&target)?;
            let scenario =
                scenario.unwrap_or_else(|| format!("{}/{}", spec.traffic.label(), condition_label(spec.condition)));
            let m = evaluate(&ck, model, &spec, ctx.exec)?;
            println!(
                "{} {scenario}: bandwidth {:.2}% degradation {:.2}% over {} episodes",
                ck.kind, m.mean_bandwidth_pct, m.mean_qos_degradation_pct, m.episodes
            );
            let mut update = Summary::default();
            update.set_row(&checkpoint_label(&target.checkpoint), &scenario, m);
            ctx.publish(update)?;
        }
        Command::SweepConditions { target } => {
            let model = ctx.model()?;
            let ck = ctx.checkpoint(&target.checkpoint, &model)?;
            let spec = ctx.eval_spec(&target)?;
            let res = sweep_conditions(&ck, model, &spec, &cfg.sweep.d_values, ctx.exec)?;
            for (d, m) in res.values.iter().zip(&res.records) {
                println!("d={d:+.2}: bandwidth {:.2}% degradation {:.2}%", m.mean_bandwidth_pct, m.mean_qos_degradation_pct);
            }
            ctx.publish(Summary {
                sweeps: vec![NamedSweep {
                    name: format!("conditions-{}", checkpoint_label(&target.checkpoint)),
                    result: res,
                }],
                ..Summary::default()
            })?;
        }
        Command::SweepNoise { target } => {
            let model = ctx.model()?;
            let ck = ctx.checkpoint(&target.checkpoint, &model)?;
            let spec = ctx.eval_spec(&target)?;
            let res = sweep_noise(&ck, model, &spec, &cfg.sweep.noise_sigmas, ctx.exec)?;
            for (s, m) in res.values.iter().zip(&res.records) {
                println!("sigma={s:.2}: bandwidth {:.2}% degradation {:.2}%", m.mean_bandwidth_pct, m.mean_qos_degradation_pct);
            }
            println!(
                "random predictor: bandwidth {:.2}% degradation {:.2}%",
                res.reference.mean_bandwidth_pct, res.reference.mean_qos_degradation_pct
            );
            ctx.publish(Summary {
                sweeps: vec![NamedSweep {
                    name: format!("noise-{}", checkpoint_label(&target.checkpoint)),
                    result: res,
                }],
                ..Summary::default()
            })?;
        }
        Command::Finetune { checkpoint } => {
            let model = ctx.model()?;
            let ck = PolicyCheckpoint::load(&checkpoint)?;
            let outcome = finetune(&ck, cfg, model, ctx.exec)?;
            let dir = ctx.out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            let path = dir.join("wcsac-finetuned.json");
            outcome.checkpoint.save(&path)?;
            let label = condition_label(cfg.finetune.condition);
            println!(
                "before: bandwidth {:.2}% degradation {:.2}%",
                outcome.pre.mean_bandwidth_pct, outcome.pre.mean_qos_degradation_pct
            );
            println!(
                "after:  bandwidth {:.2}% degradation {:.2}%",
                outcome.post.mean_bandwidth_pct, outcome.post.mean_qos_degradation_pct
            );
            let mut update = Summary {
                curves: vec![CurveSeries {
                    name: "wcsac-finetune".into(),
                    points: outcome.training.curve,
                }],
                ..Summary::default()
            };
            update.set_row(&checkpoint_label(&checkpoint.to_string_lossy()), &label, outcome.pre);
            update.set_row("wcsac-finetuned", &label, outcome.post);
            ctx.publish(update)?;
            println!("{}", path.display());
        }
        Command::Report { summary } => {
            let path = summary.unwrap_or_else(|| ctx.summary_path());
            let summary = Summary::load(&path)?;
            let files = emit_report(&summary, &ctx.out)?;
            println!("{}", files.metrics_csv.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
