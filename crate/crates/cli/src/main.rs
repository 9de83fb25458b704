//! `fragroup`: synthetic data, training, prediction, regrouping and evaluation.

mod config;
mod pretty;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fragroup_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use fragroup_core::data::{load_example, read_prototype, split_paths, Example};
use fragroup_core::embedding::{EmbedConfig, Modalities};
use fragroup_core::grouping::{decode_groups, GroupSource};
use fragroup_core::model::Model;
use fragroup_core::proto::{regroup_hierarchy, serialize_prototype, Label, UiNode};
use fragroup_core::synth::{generate_dataset, save_manifest, split_dataset};
use fragroup_core::trainer::{evaluate_with, train, EvalReport, TrainConfig};
use fragroup_core::Error;
use serde_json::{json, Value};

use config::{RunConfig, TrainFlags};

#[derive(Parser, Debug)]
#[command(name = "fragroup", version, about = "Group fragmented layers in UI design prototypes")]
struct Cli {
    /// Print human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    /// Worker threads for loading and per-prototype prediction.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset with a file-wise split.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of prototypes to generate.
        #[arg(long)]
        prototypes: Option<usize>,
    },
    /// Train a model on the train split, keeping the best validation epoch.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path to write.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines epoch log; defaults to the checkpoint path with `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Label every element of one prototype and decode the groups.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        prototype: PathBuf,
    },
    /// Predict groups and write the prototype with `#merge#` containers.
    Regroup {
        #[arg(long)]
        checkpoint: PathBuf,
        prototype: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classification and grouping metrics on one split.
    Evaluate {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the ground-truth labels as predictions.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the full model and each single-modality removal.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: 2, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: 3, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::TrainingDiverged { .. } => 4,
            Error::CheckpointFormat(_) | Error::Integrity(_) => 5,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::config("--threads must be at least 1".into()));
    }
    let out = match &cli.command {
        Command::Synth { config, out, seed, prototypes } => synth(config.as_deref(), out, *seed, *prototypes)?,
        Command::Train { config, manifest, out, log, flags } => {
            cmd_train(cli, config.as_deref(), manifest, out, log.as_deref(), flags)?
        }
        Command::Predict { checkpoint, prototype } => predict(checkpoint, prototype, None)?,
        Command::Regroup { checkpoint, prototype, out } => predict(checkpoint, prototype, Some(out))?,
        Command::Evaluate { checkpoint, oracle, manifest, split, out } => {
            let report = cmd_evaluate(cli, checkpoint.as_deref(), *oracle, manifest, split)?;
            if let Some(path) = out {
                write_json(path, &report)?;
            }
            report
        }
        Command::Ablate { config, manifest, split, flags } => ablate(cli, config.as_deref(), manifest, split, flags)?,
    };
    let text = if cli.pretty {
        pretty::render(&out)
    } else {
        serde_json::to_string_pretty(&out).expect("JSON values serialize")
    };
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("JSON values serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping order.
fn par_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> CliResult<U> + Sync) -> CliResult<Vec<U>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<CliResult<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn load_examples(cli: &Cli, manifest: &Path, split: &str, cfg: &EmbedConfig) -> CliResult<Vec<Example>> {
    let paths = split_paths(manifest, split)?;
    par_map(&paths, cli.threads, |p| Ok(load_example(p, cfg)?))
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>, prototypes: Option<usize>) -> CliResult<Value> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    if let Some(n) = prototypes {
        cfg.synth.n_prototypes = n;
    }
    cfg.synth.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let all = generate_dataset(&cfg.synth, out)?;
    let manifest = split_dataset(&all, cfg.split, cfg.synth.seed)?;
    let path = out.join("manifest.json");
    save_manifest(&path, &manifest)?;
    let ratios: Value = manifest.counts.iter().map(|(k, c)| (k.clone(), json!(c.merge_ratio()))).collect();
    Ok(json!({
        "config": { "synth": cfg.synth, "split": cfg.split },
        "manifest": path,
        "counts": manifest.counts,
        "merge_ratio": ratios,
    }))
}

fn resolve_train(config: Option<&Path>, flags: &TrainFlags) -> CliResult<TrainConfig> {
    let mut cfg = RunConfig::load(config)?.train;
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(
    cli: &Cli,
    config: Option<&Path>,
    manifest: &Path,
    out: &Path,
    log: Option<&Path>,
    flags: &TrainFlags,
) -> CliResult<Value> {
    let cfg = resolve_train(config, flags)?;
    let train_set = load_examples(cli, manifest, "train", &cfg.model.embed)?;
    let val_set = load_examples(cli, manifest, "val", &cfg.model.embed)?;

    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log_file = fs::File::create(&log_path).map_err(|e| CliError::io(format!("{}: {e}", log_path.display())))?;
    let mut write_err = None;
    let outcome = train(&train_set, &val_set, &cfg, &mut |entry| {
        let line = serde_json::to_string(entry).expect("epoch log serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CliError::io(format!("{}: {e}", log_path.display())));
    }
    save_checkpoint(&outcome.checkpoint, out)?;
    Ok(json!({
        "config": cfg,
        "checkpoint": out,
        "log": log_path,
        "best_epoch": outcome.checkpoint.meta.epoch,
        "epochs": outcome.log,
    }))
}

fn strip_labels(node: &mut UiNode) {
    node.label = None;
    node.children.iter_mut().for_each(strip_labels);
}

fn predict(checkpoint: &Path, prototype: &Path, regroup_to: Option<&Path>) -> CliResult<Value> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ex = load_example(prototype, &ckpt.model.config.embed)?;
    let labels = ckpt.model.predict(&ex.features)?;
    let groups = decode_groups(&labels, &ex.uuids, GroupSource::Predicted)?;
    let by_uuid: serde_json::Map<String, Value> =
        ex.uuids.iter().zip(&labels).map(|(u, l)| (u.clone(), json!(l.as_str()))).collect();
    let mut out = json!({
        "config": ckpt.model.config,
        "prototype": ex.id,
        "labels": by_uuid,
        "groups": groups.iter().map(|g| &g.members).collect::<Vec<_>>(),
    });
    if let Some(path) = regroup_to {
        let mut proto = read_prototype(prototype)?;
        strip_labels(&mut proto.root);
        let grouped = regroup_hierarchy(&proto, &groups)?;
        fs::write(path, serialize_prototype(&grouped)).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        out["output"] = json!(path);
    }
    Ok(out)
}

fn evaluate_model(cli: &Cli, model: &Model<f32>, examples: &[Example]) -> CliResult<EvalReport> {
    let predictions: Vec<Vec<Label>> = par_map(examples, cli.threads, |ex| Ok(model.predict(&ex.features)?))?;
    let mut next = predictions.into_iter();
    Ok(evaluate_with(examples, |_| Ok(next.next().expect("one prediction per example")))?)
}

fn cmd_evaluate(cli: &Cli, checkpoint: Option<&Path>, oracle: bool, manifest: &Path, split: &str) -> CliResult<Value> {
    let ckpt: Option<Checkpoint> = checkpoint.map(load_checkpoint).transpose()?;
    let embed = ckpt.as_ref().map(|c| c.model.config.embed.clone()).unwrap_or_default();
    let examples = load_examples(cli, manifest, split, &embed)?;
    let report = match &ckpt {
        Some(c) if !oracle => evaluate_model(cli, &c.model, &examples)?,
        _ => evaluate_with(&examples, |ex| Ok(ex.labels()?.to_vec()))?,
    };
    let config = match &ckpt {
        Some(c) => json!({ "model": c.model.config, "meta": c.meta }),
        None => json!({ "oracle": true }),
    };
    Ok(json!({
        "config": config,
        "split": split,
        "prototypes": examples.len(),
        "classification": report.classification,
        "grouping": report.grouping,
    }))
}

fn ablate(cli: &Cli, config: Option<&Path>, manifest: &Path, split: &str, flags: &TrainFlags) -> CliResult<Value> {
    let cfg = resolve_train(config, flags)?;
    let train_set = load_examples(cli, manifest, "train", &cfg.model.embed)?;
    let val_set = load_examples(cli, manifest, "val", &cfg.model.embed)?;
    let test_set = load_examples(cli, manifest, split, &cfg.model.embed)?;

    let mut variants: Vec<(String, Modalities)> = vec![("full".into(), cfg.model.embed.modalities)];
    for name in Modalities::NAMES {
        variants.push((format!("w/o {name}"), cfg.model.embed.modalities.without(name)));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (variant, modalities) in variants {
        let mut run = cfg.clone();
        run.model.embed.modalities = modalities;
        let outcome = train(&train_set, &val_set, &run, &mut |_| {})?;
        let report = evaluate_model(cli, &outcome.checkpoint.model, &test_set)?;
        let c = &report.classification;
        rows.push(json!({
            "variant": variant,
            "macro": c.macro_avg,
            "weighted": c.weighted_avg,
            "grouping_f1": report.grouping.at(4).map(|m| m.f1),
            "best_epoch": outcome.checkpoint.meta.epoch,
        }));
    }
    Ok(json!({ "config": cfg, "split": split, "rows": rows }))
}
