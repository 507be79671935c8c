//! Command implementations behind the `crfcnn` binary.
//!
//! Config files are JSON. Any `--a.b.c VALUE` (or `--a.b.c=VALUE`) argument
//! overrides key `a.b.c` of the command's config document; values parse as
//! JSON when they can and as strings otherwise. `CRFCNN_SEED` supplies the
//! seed when neither the config nor an override sets one. Every output
//! directory receives `effective_config.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{load_params, save_params, save_tensors, Dtype};
use crate::error::{Error, Result};
use crate::message::Trace;
use crate::model::{
    evaluate, predict_joints, resolve_loopy, score_predictions, train, LoopySpec, ModelConfig, PoseModel, TrainConfig,
    PCK_THRESHOLD, PCP_THRESHOLD,
};
use crate::synth::{generate, load_dataset, pcp_groups, save_dataset, DatasetSpec, PckReport, PcpReport};
use crate::tape::Tape;
use crate::verify;

pub const SEED_ENV: &str = "CRFCNN_SEED";
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;
/// Returned by `verify` when a checked property fails.
pub const EXIT_PROPERTY: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "crfcnn", version, about = "CRF over feature maps and joint score maps with convolutional message passing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset from a spec file (document root: `data`).
    Gen {
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write PGM previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Train a model; writes checkpoint, metrics log and effective config.
    Train {
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        eval_dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report PCP/PCK of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Run config; defaults to the effective config next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score the ground truth against itself instead of running the model.
        #[arg(long)]
        ground_truth_predictions: bool,
    },
    /// Run a built-in property suite.
    Verify {
        #[arg(value_enum)]
        mode: VerifyMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write messages and beliefs of one sample to a tensor container.
    Dump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VerifyMode {
    Gradcheck,
    Oracle,
    Reachability,
}

/// Everything `train`, `eval` and `dump` read from a config document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Optional graph spec file replacing `model.graph`.
    pub graph_file: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Build a loopy graph from training-set distances.
    pub loopy: Option<LoopySpec>,
}

/// Splits `--a.b VALUE` / `--a.b=VALUE` overrides from the remaining arguments.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Sets `path` (dot separated) in `doc`, creating objects along the way.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::Config(format!("bad override key {path:?}")));
        }
        if !cur.is_object() {
            if cur.is_null() {
                *cur = json!({});
            } else {
                return Err(Error::Config(format!("override {path:?}: {} is not an object", parts[..i].join("."))));
            }
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

fn read_doc(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(json!({})),
    }
}

/// Fills `section.seed` from the environment when unset.
fn default_seed(doc: &mut Value, section: &str) -> Result<()> {
    let Ok(raw) = std::env::var(SEED_ENV) else { return Ok(()) };
    let seed: u64 = raw.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
    if doc.get(section).and_then(|s| s.get("seed")).is_none() {
        apply_override(doc, &format!("{section}.seed"), &seed.to_string())?;
    }
    Ok(())
}

fn build_doc(path: Option<&Path>, overrides: &[(String, String)], seed_section: &str) -> Result<Value> {
    let mut doc = read_doc(path)?;
    if !doc.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    default_seed(&mut doc, seed_section)?;
    Ok(doc)
}

fn parse<T: for<'de> Deserialize<'de>>(doc: Value) -> Result<T> {
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// Maps an error onto the exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Incompatible(_) => EXIT_INCOMPATIBLE,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (without the program name) and runs the command, printing
/// diagnostics. Returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once("crfcnn".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, overrides: &[(String, String)]) -> Result<i32> {
    match cmd {
        Command::Gen { spec, out, pgm } => cmd_gen(spec.as_deref(), &out, pgm, overrides),
        Command::Train { config, dataset, eval_dataset, out } => {
            cmd_train(config.as_deref(), dataset, eval_dataset, out, overrides)
        }
        Command::Eval { checkpoint, dataset, config, out, ground_truth_predictions } => {
            cmd_eval(&checkpoint, &dataset, config.as_deref(), out.as_deref(), ground_truth_predictions, overrides)
        }
        Command::Verify { mode, seed } => cmd_verify(mode, seed),
        Command::Dump { checkpoint, dataset, index, out, config } => {
            cmd_dump(&checkpoint, &dataset, index, &out, config.as_deref(), overrides)
        }
    }
}

/// The spec file is either a bare dataset spec or `{"data": spec}`.
pub fn cmd_gen(spec: Option<&Path>, out: &Path, pgm: bool, overrides: &[(String, String)]) -> Result<i32> {
    let file = read_doc(spec)?;
    let mut doc = if file.get("data").is_some() { file } else { json!({ "data": file }) };
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    default_seed(&mut doc, "data")?;
    let spec: DatasetSpec = parse(doc["data"].clone())?;
    let samples = generate(&spec)?;
    save_dataset(out, &spec, &samples, pgm)?;
    write_json(&out.join(EFFECTIVE_CONFIG), &json!({ "data": spec }))?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    println!("{}", json!({ "command": "gen", "samples": samples.len(), "out": out }));
    Ok(EXIT_OK)
}

fn load_run_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg: RunConfig = parse(build_doc(path, overrides, "train")?)?;
    if let Some(g) = cfg.graph_file.take() {
        let text = fs::read_to_string(&g).map_err(|e| Error::Config(format!("{}: {e}", g.display())))?;
        cfg.model.graph = crate::graph::GraphSpec::from_json(&text).map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(cfg)
}

pub fn cmd_train(
    config: Option<&Path>,
    dataset: Option<PathBuf>,
    eval_dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    overrides: &[(String, String)],
) -> Result<i32> {
    let mut cfg = load_run_config(config, overrides)?;
    cfg.dataset = dataset.or(cfg.dataset);
    cfg.eval_dataset = eval_dataset.or(cfg.eval_dataset);
    cfg.output = out.or(cfg.output);
    let data_dir = cfg.dataset.clone().ok_or_else(|| Error::Config("no dataset given".into()))?;
    let out = cfg.output.clone().ok_or_else(|| Error::Config("no output directory given".into()))?;
    cfg.train.validate()?;
    let (_, samples) = load_dataset(&data_dir)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eval = match &cfg.eval_dataset {
        Some(d) => Some(load_dataset(d)?.1),
        None => None,
    };
    if let Some(l) = cfg.loopy.take() {
        resolve_loopy(&mut cfg.model, &samples, l)?;
    }
    let model = PoseModel::new(cfg.model.clone())?;
    fs::create_dir_all(&out)?;
    write_json(&out.join(EFFECTIVE_CONFIG), &cfg)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut params = model.init_params(cfg.train.seed);
    save_params(&ckpt, &params, Dtype::F64)?;
    let mut metrics = fs::File::create(out.join(METRICS_FILE))?;
    let result = train(&model, &mut params, &samples, eval.as_deref(), &cfg.train, |m, p| {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        save_params(&ckpt, p, Dtype::F64)?;
        println!("epoch {:>4}  loss {:.5}  PCK {:.4}  PCP {:.4}", m.epoch, m.loss, m.pck, m.pcp);
        Ok(())
    });
    match result {
        Ok(log) => {
            let last = log.last();
            println!(
                "{}",
                json!({ "command": "train", "epochs": log.len(), "checkpoint": ckpt,
                        "loss": last.map(|m| m.loss), "pck": last.map(|m| m.pck), "pcp": last.map(|m| m.pcp) })
            );
            Ok(EXIT_OK)
        }
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}; last good checkpoint kept at {}", ckpt.display());
            Ok(EXIT_DIVERGED)
        }
        Err(e) => Err(e),
    }
}

/// Model and parameters for a checkpoint, checked for compatibility.
fn load_model(checkpoint: &Path, config: Option<&Path>, overrides: &[(String, String)]) -> Result<(PoseModel, crate::params::ModelParams)> {
    let default_cfg = checkpoint.parent().map(|d| d.join(EFFECTIVE_CONFIG)).filter(|p| p.exists());
    let cfg = load_run_config(config.or(default_cfg.as_deref()), overrides)?;
    let model = PoseModel::new(cfg.model)?;
    let params = load_params(checkpoint)?;
    model.check_params(&params)?;
    Ok((model, params))
}

#[derive(Clone, Debug, Serialize)]
struct EvalOutput {
    samples: usize,
    loss: Option<f64>,
    pck: PckReport,
    pcp: PcpReport,
    pcp_groups: Vec<(String, f64)>,
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    ground_truth: bool,
    overrides: &[(String, String)],
) -> Result<i32> {
    let (model, params) = load_model(checkpoint, config, overrides)?;
    let (_, samples) = load_dataset(dataset)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (pck, pcp, loss) = if ground_truth {
        let preds: Vec<Vec<(f64, f64)>> = samples.iter().map(|s| s.positions()).collect();
        let (k, p) = score_predictions(&model, &preds, &samples, PCK_THRESHOLD, PCP_THRESHOLD)?;
        (k, p, None)
    } else {
        let r = evaluate(&model, &params, &samples)?;
        (r.pck, r.pcp, Some(r.loss))
    };
    let groups = if pcp.per_limb.len() == crate::skeleton::limbs().len() {
        pcp_groups(&pcp.per_limb).into_iter().map(|(n, r)| (n.to_string(), r)).collect()
    } else {
        Vec::new()
    };
    let report = EvalOutput { samples: samples.len(), loss, pck, pcp, pcp_groups: groups };

    let mut header = String::new();
    let mut row = String::new();
    for (n, r) in &report.pcp_groups {
        header += &format!("{n:>8}");
        row += &format!("{:>8.1}", 100.0 * r);
    }
    println!("PCP@{PCP_THRESHOLD} {header}{:>8}", "Mean");
    println!("         {row}{:>8.1}", 100.0 * report.pcp.mean);
    println!("PCK@{PCK_THRESHOLD} mean {:.1}", 100.0 * report.pck.mean);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        write_json(
            &dir.join(EFFECTIVE_CONFIG),
            &json!({ "checkpoint": checkpoint, "dataset": dataset, "model": model.config() }),
        )?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(EXIT_OK)
}

pub fn cmd_verify(mode: VerifyMode, seed: u64) -> Result<i32> {
    let mut ok = true;
    let mut line = |name: &str, passed: bool, detail: String| {
        ok &= passed;
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    };
    match mode {
        VerifyMode::Oracle => {
            let r = verify::oracle_check(100, 6, 4, seed)?;
            line(
                "tree sum-product vs enumeration",
                r.max_deviation < 1e-10,
                format!("{} instances, max deviation {:e}", r.instances, r.max_deviation),
            );
        }
        VerifyMode::Gradcheck => {
            for (name, cfg) in gradcheck_variants() {
                let r = verify::gradcheck(&cfg, 16, seed)?;
                line(
                    &format!("gradients ({name})"),
                    r.max_rel_error < 1e-4,
                    format!("{} parameters, max relative error {:e} at {}", r.checked, r.max_rel_error, r.worst),
                );
            }
        }
        VerifyMode::Reachability => {
            for c in verify::reachability_check(seed)? {
                line(&c.name, c.passed, String::new());
            }
        }
    }
    println!("{}", json!({ "command": "verify", "passed": ok }));
    Ok(if ok { EXIT_OK } else { EXIT_PROPERTY })
}

/// The gradient-check model under each schedule and nonlinearity.
pub fn gradcheck_variants() -> Vec<(&'static str, ModelConfig)> {
    use crate::graph::ScheduleKind;
    use crate::model::TauKind;
    let base = verify::gradcheck_config();
    vec![
        ("serial, scaled softmax", base.clone()),
        ("serial, relu", ModelConfig { tau: TauKind::Relu, ..base.clone() }),
        (
            "flooding M=2, unshared kernels",
            ModelConfig { schedule: ScheduleKind::Flooding, iterations: 2, share_weights: false, ..base },
        ),
    ]
}

pub fn cmd_dump(
    checkpoint: &Path,
    dataset: &Path,
    index: usize,
    out: &Path,
    config: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<i32> {
    let (model, params) = load_model(checkpoint, config, overrides)?;
    let (_, samples) = load_dataset(dataset)?;
    let sample = samples
        .get(index)
        .ok_or_else(|| Error::Config(format!("sample {index} out of range ({} samples)", samples.len())))?;
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let x = tape.constant(sample.image.clone());
    let mut trace = Trace::default();
    let logits = model.forward(&mut tape, &p, x, Some(&mut trace))?;
    let mut entries: Vec<(String, crate::Tensor)> =
        trace.entries.iter().map(|(n, v)| (n.clone(), tape.value(*v).clone())).collect();
    for (v, &l) in logits.iter().enumerate() {
        entries.push((format!("logits/{}", model.graph().name(v)), tape.value(l).clone()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(EFFECTIVE_CONFIG), &json!({ "checkpoint": checkpoint, "dataset": dataset, "index": index, "model": model.config() }))?;
    }
    save_tensors(out, &entries, Dtype::F64)?;
    let maps: Vec<crate::Tensor> = logits.iter().map(|&l| tape.value(l).clone()).collect();
    let preds = predict_joints(&maps, model.stride())?;
    println!("wrote {} tensors to {}", entries.len(), out.display());
    println!("{}", json!({ "command": "dump", "tensors": entries.len(), "predictions": preds }));
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) = split_overrides(s(&["train", "cfg.json", "--train.lr", "0.1", "--out", "x", "--model.schedule=flooding"])).unwrap();
        assert_eq!(rest, s(&["train", "cfg.json", "--out", "x"]));
        assert_eq!(ov, vec![("train.lr".into(), "0.1".into()), ("model.schedule".into(), "flooding".into())]);
        assert!(split_overrides(s(&["--train.lr"])).is_err());
    }

    #[test]
    fn override_paths() {
        let mut doc = json!({"train": {"lr": 1.0}});
        apply_override(&mut doc, "train.lr", "0.25").unwrap();
        apply_override(&mut doc, "model.extractor.pool", "2").unwrap();
        apply_override(&mut doc, "model.schedule", "flooding").unwrap();
        assert_eq!(doc, json!({"train": {"lr": 0.25}, "model": {"extractor": {"pool": 2}, "schedule": "flooding"}}));
        assert!(apply_override(&mut doc, "train.lr.x", "1").is_err());
        let cfg: RunConfig = parse(doc).unwrap();
        assert_eq!(cfg.train.lr, 0.25);
        assert_eq!(cfg.model.extractor.pool, 2);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(parse::<RunConfig>(json!({"trian": {}})).is_err());
        assert!(parse::<RunConfig>(json!({"train": {"lr": "fast"}})).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Divergence { epoch: 0, step: 0, loss: f64::NAN }), 3);
        assert_eq!(exit_code(&Error::Incompatible("x".into())), 4);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(run(s(&["frobnicate"])), 2);
    }
}
