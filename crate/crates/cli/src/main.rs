//! `latplan` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use latplan::config::{load_config, ExperimentConfig};
use latplan::diagnostics::{
    correlate_energy_quality, landscape_slice, median_drift_series, output_path, pca_project, per_step_decode,
    per_step_energy_correlation, spearman, write_drift_csv, write_energy_trace_csv, write_grad_csv, write_pca_csv,
    DiagnosticsError,
};
use latplan::experiments::{build_ablation, build_baseline, evaluate_endpoint, full_parameter_count, run_ablation, AblationRun, AblationSet};
use latplan::model::Checkpoint;
use latplan::nn::Parameters;
use latplan::planner::{read_traces, write_traces, PlannerTrace};
use latplan::rng;
use latplan::tasks::{generate_dataset, load_dataset, save_dataset, Dataset, TaskKind};
use latplan::training::{contrastive_success, direct_metric, train_baseline, train_with};

/// Environment variable that overrides the seed when `--seed` is not given.
const SEED_ENV: &str = "LATPLAN_SEED";

const TAG_EVAL: u64 = 0xe7a1;
const TAG_SLICE: u64 = 0x511ce;

#[derive(Parser)]
#[command(name = "latplan", version, about = "Energy-based latent planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; unspecified keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// graph, arithmetic or logic (overrides the config).
    #[arg(long)]
    task: Option<TaskKind>,
    /// Seed (overrides the config and the LATPLAN_SEED environment variable).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; every output path is relative to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset file written by `generate`; generated from the config when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the full model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Direct and planner endpoint metrics on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the planner on the test split and write its traces.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only plan the first N test instances.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Diagnostic CSV/JSON outputs from a checkpoint and planner traces.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Traces written by `plan`; planned afresh when omitted.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        /// Half-width of the energy landscape slice.
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[arg(long, default_value_t = 21)]
        resolution: usize,
    },
    /// Run one ablation set at reduced scale.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// A, B, C1, C2, C3, D, E or F.
        #[arg(long)]
        set: String,
        /// Comma-separated seeds; defaults to three consecutive seeds from --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Training groups run at once.
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Train the parameter-matched encoder/decoder baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
}

/// Failures are split into usage errors (exit 1) and runtime failures (exit 2).
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("latplan: error[usage]: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("latplan: error[usage]: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("latplan: error[runtime]: {e:#}");
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    inputs: serde_json::Map<String, serde_json::Value>,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut inputs = serde_json::Map::new();
        let mut cfg = match &common.config {
            Some(p) => {
                inputs.insert("config".into(), json!(file_hash(p).map_err(usage)?));
                load_config(p).map_err(usage)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(t) = common.task {
            cfg.task = t;
        }
        if let Some(s) = common.seed {
            cfg.seed = s;
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| usage(anyhow::anyhow!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        cfg.output_dir = out.display().to_string();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out, inputs })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(name.into(), json!(file_hash(path)?));
        Ok(())
    }

    fn dataset(&mut self, data: &DataArg) -> Result<Dataset, Failure> {
        match &data.dataset {
            Some(p) => {
                self.input("dataset", p)?;
                let d = load_dataset(p, Some(self.cfg.task)).with_context(|| format!("loading {}", p.display()))?;
                Ok(d)
            }
            None => Ok(generate_dataset(self.cfg.task, &self.cfg.task_params(), self.cfg.split_sizes(), self.cfg.seed)
                .context("generating dataset")?),
        }
    }

    fn checkpoint(&mut self, path: &Path) -> Result<Checkpoint, Failure> {
        self.input("checkpoint", path)?;
        let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        if ck.manifest.task != self.cfg.task {
            return Err(usage(anyhow::anyhow!(
                "checkpoint is for task `{}` but the run is for `{}` (pass --task {})",
                ck.manifest.task,
                self.cfg.task,
                ck.manifest.task
            )));
        }
        Ok(ck)
    }

    fn write_manifest(&self, command: &str, outputs: &[PathBuf]) -> anyhow::Result<()> {
        let outputs: Vec<String> = outputs
            .iter()
            .map(|p| p.strip_prefix(&self.out).unwrap_or(p).display().to_string())
            .collect();
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.cfg.seed,
            "config_hash": self.cfg.hash(),
            "config": self.cfg.to_toml_string(),
            "inputs": self.inputs,
            "outputs": outputs,
        });
        write_json(&self.path("manifest.json"), &manifest)
    }
}

fn file_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { common } => {
            let ctx = Ctx::new(&common)?;
            let c = &ctx.cfg;
            let ds = generate_dataset(c.task, &c.task_params(), c.split_sizes(), c.seed).context("generating dataset")?;
            let path = ctx.path(&format!("{}_seed{}.jsonl", c.task, c.seed));
            save_dataset(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
            ctx.write_manifest("generate", &[path.clone()])?;
            println!("{}", path.display());
        }
        Command::Train { common, data } => {
            let mut ctx = Ctx::new(&common)?;
            let ds = ctx.dataset(&data)?;
            let (ck, history) = train_with(&ctx.cfg, &ds, |r| {
                eprintln!(
                    "epoch {:>3}  dec {:.5}  contr {:.5}  smooth {:.5}  val {:.3}  ({:.1}s)",
                    r.epoch, r.decoder_loss, r.contrastive_loss, r.smoothness_loss, r.val_metric, r.wall_seconds
                )
            })
            .context("training")?;
            let ck_path = ctx.path("checkpoint.json");
            let hist_path = ctx.path("history.csv");
            ck.save(&ck_path).context("saving checkpoint")?;
            history.write_csv(&hist_path).map_err(anyhow::Error::from)?;
            ctx.write_manifest("train", &[ck_path.clone(), hist_path])?;
            println!("{}", ck_path.display());
        }
        Command::Eval { common, data, checkpoint } => {
            let mut ctx = Ctx::new(&common)?;
            let ck = ctx.checkpoint(&checkpoint)?;
            let ds = ctx.dataset(&data)?;
            let seed = rng::derive_seed(ctx.cfg.seed, &[TAG_EVAL]);
            let ev = evaluate_endpoint(&ck, &ds.test, &ctx.cfg.planner(), seed).context("evaluating")?;
            let success = contrastive_success(&ck, &ds.test, &ctx.cfg, seed).context("scoring contrastive pairs")?;
            let path = ctx.path("eval.json");
            let value = json!({
                "contrastive_success": success,
                "contrastive_success_pass": success >= ctx.cfg.contrastive_success_threshold,
                "task": ctx.cfg.task,
                "planner_steps": ctx.cfg.planner_steps,
                "direct": ev.direct,
                "planner": ev.planner,
                "drift_median": ev.drift_median,
                "planner_failures": ev.failures,
            });
            write_json(&path, &value)?;
            ctx.write_manifest("eval", &[path.clone()])?;
            println!("direct {:.4}  planner {:.4}", ev.direct.value, ev.planner.value);
        }
        Command::Plan {
            common,
            data,
            checkpoint,
            limit,
        } => {
            let mut ctx = Ctx::new(&common)?;
            let ck = ctx.checkpoint(&checkpoint)?;
            let ds = ctx.dataset(&data)?;
            let test = &ds.test[..limit.unwrap_or(ds.test.len()).min(ds.test.len())];
            let traces = plan_traces(&ctx.cfg, &ck, test)?;
            let path = ctx.path("traces.jsonl");
            write_traces(&path, &traces).context("writing traces")?;
            ctx.write_manifest("plan", &[path.clone()])?;
            println!("{}", path.display());
        }
        Command::Diagnose {
            common,
            data,
            checkpoint,
            traces,
            limit,
            extent,
            resolution,
        } => {
            let mut ctx = Ctx::new(&common)?;
            let ck = ctx.checkpoint(&checkpoint)?;
            let ck_hash = file_hash(&checkpoint)?;
            let ds = ctx.dataset(&data)?;
            let traces = match &traces {
                Some(p) => {
                    ctx.input("traces", p)?;
                    read_traces(p).with_context(|| format!("reading {}", p.display()))?
                }
                None => {
                    let n = limit.unwrap_or(ds.test.len()).min(ds.test.len());
                    plan_traces(&ctx.cfg, &ck, &ds.test[..n])?
                }
            };
            if traces.len() > ds.test.len() {
                return Err(usage(anyhow::anyhow!("{} traces for {} test instances", traces.len(), ds.test.len())));
            }
            let outputs = diagnose(&ctx, &ck, &ck_hash, &ds, &traces, extent, resolution)?;
            ctx.write_manifest("diagnose", &outputs)?;
            for p in outputs {
                println!("{}", p.display());
            }
        }
        Command::Ablate {
            common,
            set,
            seeds,
            parallelism,
        } => {
            let ctx = Ctx::new(&common)?;
            let set: AblationSet = set.parse().map_err(usage)?;
            let seeds = seeds.unwrap_or_else(|| (0..3).map(|i| ctx.cfg.seed + i).collect());
            let spec = build_ablation(set);
            let run = AblationRun {
                out_dir: ctx.out.clone(),
                parallelism,
            };
            let table = run_ablation(&spec, &ctx.cfg, ctx.cfg.task, &seeds, &run).context("running ablation")?;
            let results = run.results_path(set, ctx.cfg.task);
            let mut outputs = vec![results.clone()];
            if !table.failures.is_empty() {
                let fpath = ctx.path(&format!("ablation_{}_{}_failures.json", set, ctx.cfg.task));
                write_json(&fpath, &serde_json::to_value(&table.failures).map_err(anyhow::Error::from)?)?;
                outputs.push(fpath);
            }
            ctx.write_manifest("ablate", &outputs)?;
            for r in &table.rows {
                println!(
                    "{:<16} seed {:<4} direct {:>10.4}  planner {:>10.4}  drift {:.4}",
                    r.arm, r.seed, r.direct_metric, r.planner_metric, r.drift_median
                );
            }
            if !table.failures.is_empty() {
                bail_runtime(format!("{} arm(s) failed; see the failures file", table.failures.len()))?;
            }
        }
        Command::Baseline { common, data } => {
            let mut ctx = Ctx::new(&common)?;
            let ds = ctx.dataset(&data)?;
            let (heads, width) = build_baseline(ctx.cfg.task, &ctx.cfg).context("sizing baseline")?;
            let params = heads.param_count();
            let full = full_parameter_count(ctx.cfg.task, &ctx.cfg).context("counting parameters")?;
            let (ck, history) = train_baseline(&ctx.cfg, &ds, heads).context("training baseline")?;
            let test = direct_metric(&ck.heads, &ds.test, ck.manifest.target_scale).context("evaluating baseline")?;
            let ck_path = ctx.path("baseline_checkpoint.json");
            let hist_path = ctx.path("baseline_history.csv");
            let eval_path = ctx.path("baseline_eval.json");
            ck.save(&ck_path).context("saving checkpoint")?;
            history.write_csv(&hist_path).map_err(anyhow::Error::from)?;
            write_json(
                &eval_path,
                &json!({
                    "task": ctx.cfg.task,
                    "hidden_width": width,
                    "parameters": params,
                    "full_system_parameters": full,
                    "direct": test,
                }),
            )?;
            ctx.write_manifest("baseline", &[ck_path, hist_path, eval_path])?;
            println!("direct {:.4}  ({} parameters, hidden {})", test.value, params, width);
        }
    }
    Ok(())
}

fn bail_runtime(msg: String) -> Result<(), Failure> {
    Err(Failure::Runtime(anyhow::anyhow!(msg)))
}

fn plan_traces(cfg: &ExperimentConfig, ck: &Checkpoint, test: &[latplan::tasks::Instance]) -> Result<Vec<PlannerTrace>, Failure> {
    let seed = rng::derive_seed(cfg.seed, &[TAG_EVAL]);
    let ev = evaluate_endpoint(ck, test, &cfg.planner(), seed).context("planning")?;
    if let Some((i, e)) = ev.failures.first() {
        return Err(Failure::Runtime(anyhow::anyhow!("planner failed on test instance {i}: {e}")));
    }
    Ok(ev.traces)
}

fn diagnose(
    ctx: &Ctx,
    ck: &Checkpoint,
    ck_hash: &str,
    ds: &Dataset,
    traces: &[PlannerTrace],
    extent: f64,
    resolution: usize,
) -> Result<Vec<PathBuf>, Failure> {
    let task = ctx.cfg.task.as_str();
    let name = |n: &str, ext: &str| output_path(&ctx.out, task, ck_hash, n, ext);
    let test = &ds.test[..traces.len()];
    let scale = ck.manifest.target_scale;
    let mut outputs = Vec::new();

    let grid = match per_step_decode(traces, &ck.heads, test, scale) {
        Ok(g) => g,
        Err(e @ DiagnosticsError::MissingSnapshots { .. }) => return Err(usage(e)),
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    let grid_path = name("step_grid", "csv");
    grid.write_csv(&grid_path).map_err(anyhow::Error::from)?;
    outputs.push(grid_path);

    let drift_path = name("drift", "csv");
    write_drift_csv(&drift_path, traces).map_err(anyhow::Error::from)?;
    outputs.push(drift_path);
    let energy_path = name("energy_trace", "csv");
    write_energy_trace_csv(&energy_path, traces).map_err(anyhow::Error::from)?;
    outputs.push(energy_path);
    let grad_path = name("grad_decomposition", "csv");
    write_grad_csv(&grad_path, traces).map_err(anyhow::Error::from)?;
    outputs.push(grad_path);

    // final energy against answer quality (absolute error for arithmetic)
    let final_energies: Vec<f64> = traces.iter().map(|t| t.records.last().map_or(f64::NAN, |r| r.energy.total)).collect();
    let quality: Vec<f64> = traces
        .iter()
        .zip(test)
        .map(|(t, inst)| {
            let z = t.final_matrix();
            let s = latplan::metrics::score_latent(&ck.heads, inst, &z.column(z.cols() - 1), scale)?;
            Ok(s.abs_error.unwrap_or(s.primary))
        })
        .collect::<Result<_, latplan::model::ModelError>>()
        .map_err(anyhow::Error::from)?;
    let corr_path = name("energy_quality", "csv");
    let correlation = match correlate_energy_quality(&final_energies, &quality, &corr_path) {
        Ok(r) => Some(r),
        Err(DiagnosticsError::UndefinedCorrelation(_)) | Err(DiagnosticsError::Input(_)) => None,
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    outputs.push(corr_path);

    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (i, t) in traces.iter().enumerate().take(20) {
        for k in 0..t.records.len() {
            if let Some(z) = t.snapshot(k) {
                points.push(z.column(z.cols() - 1));
                colors.push(grid.values[i][k]);
            }
        }
    }
    let pca = if points.len() >= 3 {
        let pca = pca_project(&points, 2).map_err(anyhow::Error::from)?;
        let pca_path = name("pca", "csv");
        write_pca_csv(&pca_path, &pca, Some(&colors)).map_err(anyhow::Error::from)?;
        outputs.push(pca_path);
        Some(pca)
    } else {
        None
    };

    let slice = match traces.first() {
        Some(t) => {
            let energy = ck.energy().map_err(anyhow::Error::from)?;
            let mut r = rng::derived(ctx.cfg.seed, &[TAG_SLICE]);
            let s = landscape_slice(energy, &t.h_x, &t.final_matrix(), extent, resolution, &mut r).map_err(usage)?;
            let slice_path = name("landscape", "json");
            s.write_json(&slice_path).map_err(anyhow::Error::from)?;
            outputs.push(slice_path);
            Some(s)
        }
        None => None,
    };

    let drift = median_drift_series(traces);
    let steps: Vec<f64> = (0..drift.len()).map(|k| k as f64).collect();
    let summary = json!({
        "task": task,
        "checkpoint_sha256": ck_hash,
        "instances": traces.len(),
        "step_metric_means": grid.column_means(),
        "median_drift": drift,
        "drift_spearman": spearman(&steps, &drift).ok(),
        "energy_quality_pearson": correlation,
        "per_step_energy_metric_pearson": per_step_energy_correlation(traces, &grid),
        "pca_explained": pca.as_ref().map(|p| p.explained.clone()),
        "pca_degenerate": pca.as_ref().map(|p| p.degenerate),
        "landscape_range": slice.as_ref().map(|s| s.range()),
    });
    let summary_path = name("summary", "json");
    write_json(&summary_path, &summary)?;
    outputs.push(summary_path);
    Ok(outputs)
}
