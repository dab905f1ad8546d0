//! Command-line front end: meta-training, evaluation, baselines, reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fewshot_tsc::data::{split_meta_sets, ClassSplitSampler, MetaSetSampler, ParseOptions, Partition, UcrDataset};
use fewshot_tsc::embedder::{checkpoint, ResNetModel};
use fewshot_tsc::eval::{
    aggregate, emit_report, evaluate_tasks, run_protocol, ExperimentConfig, Method, MethodRun, ProtocolOutput,
    RankTable, ReportConfig, Runner, TaskResult,
};
use fewshot_tsc::gradcheck;
use fewshot_tsc::jsonl::{read_jsonl, write_jsonl};
use fewshot_tsc::meta::{fs1_train, fs2_train, TrainHooks, TrainOutcome};
use fewshot_tsc::seed::{derive_seed, rng_from_seed};
use fewshot_tsc::{Error, Result};

const RECORDS_FILE: &str = "records.jsonl";
const TASK_LOG_FILE: &str = "task_log.jsonl";

#[derive(Parser)]
#[command(name = "fewshot-tsc", version, about = "Few-shot time-series classification experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train an initialization on the training meta-set.
    MetaTrain {
        #[arg(long, value_enum, default_value_t = Variant::Fs1)]
        variant: Variant,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the few-shot protocol on every test-meta-set dataset.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the ED and DTW nearest-neighbor baselines under the same protocol.
    Baseline {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Aggregate record files (or a ready accuracy table) into a report.
    Report {
        /// Record files written by `evaluate` or `baseline`.
        #[arg(long = "records", num_args = 1..)]
        records: Vec<PathBuf>,
        /// CSV table with a dataset column and one column per method.
        #[arg(long, conflicts_with = "records")]
        table: Option<PathBuf>,
        /// Table columns to leave out.
        #[arg(long = "skip-column")]
        skip: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        reference: Option<String>,
    },
    /// Meta-train and evaluate on disjoint class partitions of one dataset.
    ClassSplit {
        #[arg(long, value_enum, default_value_t = Variant::Fs1)]
        variant: Variant,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare analytic gradients with finite differences on the tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Fs1,
    Fs2,
}

impl Variant {
    fn method(self) -> Method {
        match self {
            Variant::Fs1 => Method::Fs1,
            Variant::Fs2 => Method::Fs2,
        }
    }
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Training shots per class.
    #[arg(long)]
    k: Option<usize>,
    /// Test shots per class.
    #[arg(long)]
    k_query: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    /// Evaluate the original train/test split once instead of sampling tasks.
    #[arg(long)]
    full_split: bool,
    /// Methods to run (fs1, fs2, scratch, ed, dtw); repeatable.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
    /// Checkpoint for the fs1 or fs2 method, whichever is requested.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Restrict evaluation to these datasets.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            report_error("usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

/// One line on stderr: `error kind=<kind> message="<escaped>"`.
fn report_error(kind: &str, message: &str) {
    eprintln!("error kind={kind} message={message:?}");
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gradcheck { seed } => return gradcheck_cmd(seed),
        Command::Report {
            records,
            table,
            skip,
            output,
            alpha,
            reference,
        } => {
            let cfg = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
            let mut report = cfg.as_ref().map(|c| c.report.clone()).unwrap_or_default();
            report.alpha = alpha.unwrap_or(report.alpha);
            report.reference = reference.unwrap_or(report.reference);
            let out = output
                .or_else(|| cfg.as_ref().map(|c| c.output_dir.clone()))
                .ok_or_else(|| Error::Usage("report needs --output or a config with output_dir".into()))?;
            let table = match table {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                    let skip: Vec<&str> = skip.iter().map(String::as_str).collect();
                    RankTable::from_csv(&text, &skip)?
                }
                None => {
                    if records.is_empty() {
                        return Err(Error::Usage("report needs --records or --table".into()));
                    }
                    let mut all = Vec::new();
                    for path in &records {
                        all.extend(read_jsonl::<TaskResult>(path)?);
                    }
                    aggregate(&all)?
                }
            };
            emit_report(&table, &out, &report, cfg.map(|c| c.seed))?;
            println!("report {}", out.display());
            return Ok(ExitCode::SUCCESS);
        }
        _ => {}
    }

    let path = cli
        .config
        .ok_or_else(|| Error::Usage("--config is required for this subcommand".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    match cli.command {
        Command::MetaTrain {
            variant,
            iterations,
            overrides,
        } => {
            overrides.apply(&mut cfg)?;
            if let Some(m) = iterations {
                cfg.meta.meta_iterations = m;
            }
            meta_train_cmd(&cfg, variant)
        }
        Command::Evaluate { overrides } => {
            overrides.apply(&mut cfg)?;
            evaluate_cmd(&cfg, &overrides.datasets)
        }
        Command::Baseline { mut overrides } => {
            if overrides.methods.is_empty() {
                overrides.methods = vec![Method::Ed, Method::Dtw];
            }
            if let Some(m) = overrides.methods.iter().find(|m| !matches!(m, Method::Ed | Method::Dtw)) {
                return Err(Error::Usage(format!("{m} is not a baseline; use evaluate")));
            }
            overrides.apply(&mut cfg)?;
            evaluate_cmd(&cfg, &overrides.datasets)
        }
        Command::ClassSplit {
            variant,
            iterations,
            overrides,
        } => {
            overrides.apply(&mut cfg)?;
            if let Some(m) = iterations {
                cfg.meta.meta_iterations = m;
            }
            class_split_cmd(&cfg, variant)
        }
        Command::Report { .. } | Command::Gradcheck { .. } => unreachable!("handled above"),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.data_root {
            cfg.data_root = p.clone();
        }
        if let Some(p) = &self.manifest {
            cfg.manifest = Some(p.clone());
        }
        if let Some(p) = &self.output {
            cfg.output_dir = p.clone();
        }
        if let Some(k) = self.k {
            cfg.protocol.k = k;
        }
        if let Some(k) = self.k_query {
            cfg.protocol.k_query = k;
        }
        if let Some(n) = self.tasks {
            cfg.protocol.tasks_per_dataset = n;
        }
        if self.full_split {
            cfg.protocol.full_split = true;
        }
        if !self.methods.is_empty() {
            cfg.protocol.methods = self.methods.clone();
        }
        if let Some(p) = &self.checkpoint {
            let targets: Vec<Method> = cfg.protocol.methods.iter().copied().filter(|m| m.needs_checkpoint()).collect();
            match targets.as_slice() {
                [Method::Fs2] => cfg.fs2_checkpoint = Some(p.clone()),
                [_] | [] => cfg.fs1_checkpoint = Some(p.clone()),
                _ => return Err(Error::Usage("--checkpoint is ambiguous with both fs1 and fs2 requested".into())),
            }
        }
        cfg.validate()
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_datasets(cfg: &ExperimentConfig, names: &[String]) -> Result<Vec<Arc<UcrDataset>>> {
    let opts = ParseOptions::default();
    names
        .iter()
        .map(|n| UcrDataset::load(&cfg.data_root, n, &opts).map(Arc::new))
        .collect()
}

fn manifest(cfg: &ExperimentConfig) -> Result<fewshot_tsc::data::MetaSetSplit> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("the config names no split manifest".into()))?;
    let split = split_meta_sets(path)?;
    split.resolve(&cfg.data_root)?;
    Ok(split)
}

fn initial_model(cfg: &ExperimentConfig) -> Result<ResNetModel> {
    let mut rng = rng_from_seed(derive_seed(cfg.meta.seed, "init", 0));
    ResNetModel::build(cfg.arch.clone(), &mut rng)
}

fn train(
    cfg: &ExperimentConfig,
    variant: Variant,
    source: &dyn fewshot_tsc::data::TaskSource,
    validation: Option<&dyn fewshot_tsc::data::TaskSource>,
    out: &Path,
) -> Result<TrainOutcome> {
    let init = initial_model(cfg)?;
    let hooks = TrainHooks {
        validation,
        output_dir: Some(out),
        on_iteration: Some(Box::new(|r| {
            if let Some(v) = r.validation_loss {
                log::info!("iteration {} task loss {:.4} validation loss {v:.4}", r.iteration, r.mean_task_loss);
            } else {
                log::debug!("iteration {} task loss {:.4}", r.iteration, r.mean_task_loss);
            }
        })),
    };
    match variant {
        Variant::Fs1 => fs1_train(&init, &cfg.meta, source, hooks),
        Variant::Fs2 => fs2_train(&init, &cfg.meta, source, hooks),
    }
}

/// The checkpoint chosen by validation, else the final one.
fn selected_checkpoint(out: &Path, outcome: &TrainOutcome, iterations: usize) -> PathBuf {
    outcome
        .best
        .as_ref()
        .and_then(|(s, _)| s.checkpoint.clone())
        .unwrap_or_else(|| out.join(format!("checkpoint-{iterations:06}.ckpt")))
}

fn meta_train_cmd(cfg: &ExperimentConfig, variant: Variant) -> Result<ExitCode> {
    let split = manifest(cfg)?;
    let train_sets = load_datasets(cfg, &split.train)?;
    let source = MetaSetSampler::new(train_sets, cfg.meta.k_train, derive_seed(cfg.meta.seed, "meta-train", 0))?;
    let validation = if split.validation.is_empty() {
        None
    } else {
        let sets = load_datasets(cfg, &split.validation)?;
        Some(MetaSetSampler::new(sets, cfg.meta.k_train, derive_seed(cfg.meta.seed, "meta-validation", 0))?)
    };
    let out = cfg.output_dir.join(variant.method().label());
    let outcome = train(cfg, variant, &source, validation.as_ref().map(|v| v as _), &out)?;
    println!("checkpoint {}", selected_checkpoint(&out, &outcome, cfg.meta.meta_iterations).display());
    Ok(ExitCode::SUCCESS)
}

fn method_runs(cfg: &ExperimentConfig, trained: Option<(Method, &Path)>) -> Result<Vec<MethodRun>> {
    cfg.protocol
        .methods
        .iter()
        .map(|&m| {
            let runner = match m {
                Method::Fs1 | Method::Fs2 => {
                    let path = match trained {
                        Some((t, p)) if t == m => p.to_path_buf(),
                        _ => cfg
                            .checkpoint_for(m)
                            .ok_or_else(|| Error::Usage(format!("{m} needs a trained checkpoint")))?
                            .to_path_buf(),
                    };
                    let finetune = if m == Method::Fs1 { &cfg.finetune } else { &cfg.finetune_fs2 };
                    Runner::Meta {
                        model: checkpoint::load(&path)?,
                        finetune: finetune.clone(),
                    }
                }
                Method::Scratch => Runner::Scratch {
                    spec: cfg.arch.clone(),
                    finetune: cfg.scratch.clone(),
                },
                Method::Ed => Runner::Ed,
                Method::Dtw => Runner::Dtw(cfg.dtw.clone()),
            };
            Ok(MethodRun::new(m.label(), runner))
        })
        .collect()
}

fn write_outputs(cfg: &ExperimentConfig, out: &Path, output: &ProtocolOutput) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_jsonl(out.join(RECORDS_FILE), &output.results)?;
    write_jsonl(out.join(TASK_LOG_FILE), &output.tasks)?;
    let table = aggregate(&output.results)?;
    let report = ReportConfig {
        reference: if table.method_index(&cfg.report.reference).is_some() {
            cfg.report.reference.clone()
        } else {
            table.methods[0].clone()
        },
        ..cfg.report.clone()
    };
    emit_report(&table, out, &report, Some(cfg.seed))?;
    for (m, r) in table.methods.iter().zip(&table.mean_ranks) {
        let mean = table.column(table.method_index(m).unwrap_or(0)).iter().sum::<f64>() / table.datasets.len() as f64;
        println!("{m} mean_accuracy={mean:.4} mean_rank={r:.3}");
    }
    println!("output {}", out.display());
    Ok(())
}

fn evaluate_cmd(cfg: &ExperimentConfig, only: &[String]) -> Result<ExitCode> {
    let names = if only.is_empty() { manifest(cfg)?.test } else { only.to_vec() };
    let runs = method_runs(cfg, None)?;
    let datasets = load_datasets(cfg, &names)?;
    let output = run_protocol(&datasets, &cfg.protocol, cfg.seed, &runs)?;
    write_outputs(cfg, &cfg.output_dir, &output)?;
    Ok(ExitCode::SUCCESS)
}

fn class_split_cmd(cfg: &ExperimentConfig, variant: Variant) -> Result<ExitCode> {
    let cs = &cfg.class_split;
    let ds = Arc::new(UcrDataset::load(&cfg.data_root, &cs.dataset, &ParseOptions::default())?);
    let seed = derive_seed(cfg.seed, "class-split", 0);
    let train_sampler = ClassSplitSampler::new(ds.clone(), cfg.meta.k_train, cs.n_way, seed)?;
    let eval_sampler = ClassSplitSampler::new(ds, cfg.protocol.k, cs.n_way, seed)?;
    let p = train_sampler.partition();
    log::info!(
        "{}: {} train, {} validation, {} test classes",
        cs.dataset,
        p.train.len(),
        p.validation.len(),
        p.test.len()
    );

    let out = cfg.output_dir.join(variant.method().label());
    let validation = train_sampler.source(Partition::Validation);
    let outcome = train(cfg, variant, &train_sampler.source(Partition::Train), Some(&validation), &out)?;
    let ckpt = selected_checkpoint(&out, &outcome, cfg.meta.meta_iterations);

    let runs = method_runs(cfg, Some((variant.method(), &ckpt)))?;
    let output = evaluate_tasks(
        cfg.protocol.tasks_per_dataset,
        |i| eval_sampler.task(Partition::Test, i as u64, cfg.protocol.k_query),
        &runs,
    )?;
    write_outputs(cfg, &cfg.output_dir, &output)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(seed: u64) -> Result<ExitCode> {
    let spec = fewshot_tsc::embedder::ArchSpec::tiny();
    let r = gradcheck::run_all(&spec, seed)?;
    println!("conv {:.3e}", r.conv);
    println!("batchnorm {:.3e}", r.batchnorm);
    println!("relu_gap {:.3e}", r.relu_gap);
    println!("triplet {:.3e}", r.triplet);
    println!("end_to_end {:.3e}", r.end_to_end);
    let ok = r.max_kernel() < 1e-5 && r.end_to_end < 1e-4;
    println!("max_relative_error {:.3e} {}", r.max_kernel().max(r.end_to_end), if ok { "ok" } else { "FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
