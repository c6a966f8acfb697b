//! The `masklab` command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or index error,
//! 3 I/O error, 4 non-finite loss during training, 5 missing checkpoint.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::baselines::{Baseline, BlurParams, RiseParams};
use crate::error::Error;
use crate::evalkit::{
    self, counterfactual, emit_report, evaluate_method, overlay_ppm, BaselineProvider, CounterfactualRow, CurveSettings,
    EvalResults, MaskProvider, OverlayImage, RunResult,
};
use crate::explainer::{Explainer, ExplainerConfig};
use crate::numeric::{io, Tensor};
use crate::trainer::{train, LossWeights, TrainConfig};
use crate::worlds::{
    collect_demonstrations, reference_value_for, train_tiny_cnn, BeaconPolicy, BeaconWorld, Dataset, Policy,
    PolicyKind, PolicyModel, TinyCnnConfig,
};
use config::{parse_list, ConfigFile, Resolver};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_NO_CHECKPOINT: i32 = 5;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Dimension(_)
            | Error::Domain(_)
            | Error::Unsupported(_)
            | Error::Contract(_) => EXIT_CONFIG,
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            Error::Diverged { .. } | Error::Numeric(_) => EXIT_DIVERGED,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: msg.into(),
    }
}

#[derive(Parser, Debug)]
#[command(name = "masklab", version, about = "Train and evaluate per-action saliency masks for frozen policies")]
pub struct Cli {
    /// Configuration file with `key = value` lines grouped in `[command]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate states and record the expert's actions.
    Collect(CollectArgs),
    /// Train explainers on a dataset.
    Train(TrainArgs),
    /// Fidelity and insertion/deletion metrics on the test split.
    Evaluate(EvaluateArgs),
    /// Per-action mask overlays for one state.
    Explain(StateArgs),
    /// Remove strong mask regions from one state and re-run the expert.
    Counterfactual(CounterfactualArgs),
    /// Perturbation saliency for one state.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `analytic` or `tiny-cnn`.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub beacons: Option<usize>,
    #[arg(long)]
    pub beacon_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds; one checkpoint per seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lambda_e: Option<f32>,
    #[arg(long)]
    pub lambda_avg: Option<f32>,
    #[arg(long)]
    pub lambda_smooth: Option<f32>,
    #[arg(long)]
    pub lambda_l2: Option<f32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Comma-separated checkpoint files or directories containing them.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub fractions: Option<String>,
    /// Re-run the expert after every single pixel.
    #[arg(long)]
    pub per_pixel_steps: bool,
    /// Also evaluate every perturbation baseline.
    #[arg(long)]
    pub baselines: bool,
    /// Masks per state for the randomized baseline.
    #[arg(long)]
    pub rise_masks: Option<usize>,
    /// Evaluate at most this many test states.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Number of test states rendered as overlays.
    #[arg(long)]
    pub overlays: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Record index in the dataset.
    #[arg(long)]
    pub index: Option<usize>,
    /// A `[C,H,W]` tensor file used instead of a dataset record.
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CounterfactualArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    /// `rise`, `blur`, `occlusion`, `normalized_delta` or `all`.
    #[arg(long)]
    pub method: Option<String>,
    /// Target action; defaults to the expert's action.
    #[arg(long)]
    pub action: Option<usize>,
    #[arg(long)]
    pub n_masks: Option<usize>,
    #[arg(long)]
    pub cell_grid: Option<usize>,
    #[arg(long)]
    pub p_keep: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f32>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Output root: `MASKLAB_OUT` if set, else `masklab-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os("MASKLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("masklab-out"))
}

fn resolve_out(r: &mut Resolver, flag: Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let out = r.get("out", flag.map(|p| p.display().to_string()), output_root().join(name).display().to_string())?;
    Ok(PathBuf::from(out))
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(|e| match e {
            Error::Io(io) => config_err(format!("cannot read config {}: {io}", p.display())),
            other => other.into(),
        })?,
        None => ConfigFile::default(),
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file
            .get("common", "threads")
            .map(|v| v.parse().map_err(|e| config_err(format!("threads = {v:?}: {e}"))))
            .transpose()?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(config_err("threads must be at least 1"));
        }
        // a pool may already exist when embedded; the cap is best effort then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Collect(a) => cmd_collect(&file, a),
        Command::Train(a) => cmd_train(&file, a),
        Command::Evaluate(a) => cmd_evaluate(&file, a),
        Command::Explain(a) => cmd_explain(&file, a),
        Command::Counterfactual(a) => cmd_counterfactual(&file, a),
        Command::Baseline(a) => cmd_baseline(&file, a),
    }
}

fn dir_has_entries(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn cmd_collect(file: &ConfigFile, a: CollectArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "collect");
    let env = r.get("env", a.env, "beacon".to_string())?;
    if env != "beacon" {
        return Err(config_err(format!("unknown env {env:?}; available: beacon")));
    }
    let d = BeaconWorld::default();
    let world = BeaconWorld {
        height: r.get("height", a.height, d.height)?,
        width: r.get("width", a.width, d.width)?,
        actions: r.get("actions", a.actions, d.actions)?,
        beacons_per_state: r.get("beacons", a.beacons, d.beacons_per_state)?,
        beacon_size: r.get("beacon_size", a.beacon_size, d.beacon_size)?,
        gamma: d.gamma,
    };
    r.note("gamma", world.gamma);
    world.validate()?;
    let n = r.get("n", a.n, 2000usize)?;
    let seed = r.get("seed", a.seed, 42u64)?;
    let policy_name = r.get("policy", a.policy, "analytic".to_string())?;
    let out = resolve_out(&mut r, a.out, "data")?;
    let force = r.flag("force", a.force)?;
    if dir_has_entries(&out) {
        if !force {
            return Err(config_err(format!("{} exists; pass --force to overwrite", out.display())));
        }
        std::fs::remove_dir_all(&out).map_err(Error::from)?;
    }
    let analytic = BeaconPolicy::new(&world)?;
    let ds = match policy_name.as_str() {
        "analytic" => collect_demonstrations(&analytic, &world, n, seed)?,
        "tiny-cnn" | "tiny_cnn" => {
            // the network imitates the analytic expert on a separate draw, then acts as the expert
            let teacher = collect_demonstrations(&analytic, &world, n, seed ^ 0xC0FFEE)?;
            let pick = |idx: &[usize]| -> (Vec<&Tensor>, Vec<usize>) {
                (
                    idx.iter().map(|&i| &teacher.records[i].state).collect(),
                    idx.iter().map(|&i| teacher.records[i].action).collect(),
                )
            };
            let mut train_idx = teacher.split.train.clone();
            train_idx.extend(&teacher.split.test);
            let (tx, ty) = pick(&train_idx);
            let (vx, vy) = pick(&teacher.split.valid);
            let cfg = TinyCnnConfig { seed, ..Default::default() };
            let (cnn, agree) = train_tiny_cnn((&tx, &ty), (&vx, &vy), world.actions, &cfg)?;
            println!("tiny-cnn expert agrees with the analytic expert on {:.1}% of held-out states", agree * 100.0);
            let mut ds = collect_demonstrations(&cnn, &world, n, seed)?;
            ds.policy_kind = PolicyKind::TinyCnn;
            ds.extra.insert("teacher_agreement".into(), format!("{agree:.6}"));
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            cnn.save(&out.join("policy.vmc"))?;
            ds
        }
        other => return Err(config_err(format!("unknown policy {other:?}; expected analytic or tiny-cnn"))),
    };
    ds.save(&out)?;
    r.write_echo(&out)?;
    println!(
        "collected {} records into {} (train {}, valid {}, test {})",
        ds.len(),
        out.display(),
        ds.split.train.len(),
        ds.split.valid.len(),
        ds.split.test.len()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> CliResult<(Dataset, PolicyModel)> {
    let ds = Dataset::load(path)?;
    let policy = PolicyModel::for_dataset(&ds, path)?;
    Ok((ds, policy))
}

fn cmd_train(file: &ConfigFile, a: TrainArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "train");
    let dataset: String = r.require("dataset", a.dataset.map(|p| p.display().to_string()))?;
    let d = TrainConfig::default();
    let w = LossWeights::default();
    let weights = LossWeights {
        lambda_e: r.get("lambda_e", a.lambda_e, w.lambda_e)?,
        lambda_avg: r.get("lambda_avg", a.lambda_avg, w.lambda_avg)?,
        lambda_smooth: r.get("lambda_smooth", a.lambda_smooth, w.lambda_smooth)?,
        lambda_l2: r.get("lambda_l2", a.lambda_l2, w.lambda_l2)?,
    };
    let epochs = r.get("epochs", a.epochs, d.epochs)?;
    let lr = r.get("lr", a.lr, d.learning_rate)?;
    let batch_size = r.get("batch_size", a.batch_size, d.batch_size)?;
    let hidden = r.get("hidden", a.hidden, 8usize)?;
    let seed = r.get_opt("seed", a.seed)?;
    let seeds_raw = r.get_opt::<String>("seeds", a.seeds)?;
    let seeds: Vec<u64> = match (seeds_raw, seed) {
        (Some(list), _) => parse_list(&list)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![d.seed],
    };
    if seeds.is_empty() {
        return Err(config_err("no seeds given"));
    }
    let out = resolve_out(&mut r, a.out, "train")?;
    let (ds, policy) = load_dataset(Path::new(&dataset))?;
    let reference = reference_value_for(&ds.world);
    let shape = policy.state_shape();
    r.write_echo(&out)?;
    for s in seeds {
        let cfg = TrainConfig {
            learning_rate: lr,
            batch_size,
            epochs,
            seed: s,
            weights,
        };
        cfg.validate()?;
        let model = Explainer::init(ExplainerConfig::new(shape, ds.num_actions()).with_hidden(hidden), s)?;
        let outcome = train(model, &policy, &ds, &reference, &cfg)?;
        let dir = out.join(format!("seed{s}"));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        outcome.best.save(&dir.join("checkpoint.vmc"), s, outcome.best_epoch)?;
        outcome.write_log(&dir.join("train_log.csv"))?;
        println!(
            "seed {s}: best valid loss {:.6} at epoch {} -> {}",
            outcome.best_valid,
            outcome.best_epoch,
            dir.join("checkpoint.vmc").display()
        );
    }
    Ok(())
}

/// Expands a checkpoint argument into files: a file as is, a directory to its
/// `checkpoint.vmc` or to every `*/checkpoint.vmc` below it.
fn checkpoint_files(arg: &str) -> CliResult<Vec<PathBuf>> {
    let missing = |p: &Path| CliError {
        code: EXIT_NO_CHECKPOINT,
        message: format!("checkpoint not found: {}", p.display()),
    };
    let mut out = Vec::new();
    for item in parse_list::<String>(arg)? {
        let p = PathBuf::from(item);
        if p.is_file() {
            out.push(p);
        } else if p.join("checkpoint.vmc").is_file() {
            out.push(p.join("checkpoint.vmc"));
        } else if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path().join("checkpoint.vmc")))
                .filter(|c| c.is_file())
                .collect();
            if found.is_empty() {
                return Err(missing(&p));
            }
            found.sort();
            out.extend(found);
        } else {
            return Err(missing(&p));
        }
    }
    if out.is_empty() {
        return Err(CliError {
            code: EXIT_NO_CHECKPOINT,
            message: "no checkpoint given".into(),
        });
    }
    Ok(out)
}

fn load_explainer(path: &Path, ds: &Dataset, policy: &dyn Policy) -> CliResult<Explainer> {
    if !path.is_file() {
        return Err(CliError {
            code: EXIT_NO_CHECKPOINT,
            message: format!("checkpoint not found: {}", path.display()),
        });
    }
    let (ex, _) = Explainer::load(path)?;
    let c = ex.config();
    if [c.channels, c.height, c.width] != policy.state_shape() || c.actions != ds.num_actions() {
        return Err(config_err(format!("checkpoint {} does not match the dataset", path.display())));
    }
    Ok(ex)
}

fn run_label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_evaluate(file: &ConfigFile, a: EvaluateArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "evaluate");
    let checkpoint_arg = r.get_opt::<String>("checkpoint", a.checkpoint)?;
    let dataset: String = r.require("dataset", a.dataset.map(|p| p.display().to_string()))?;
    let fractions: Vec<f64> = parse_list(&r.get("fractions", a.fractions, "0.25,0.5,1".to_string())?)?;
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(config_err("fractions must lie in (0,1]"));
    }
    let per_pixel = r.flag("per_pixel_steps", a.per_pixel_steps)?;
    let with_baselines = r.flag("baselines", a.baselines)?;
    let rise_masks = r.get("rise_masks", a.rise_masks, RiseParams::default().n_masks)?;
    let limit = r.get_opt("limit", a.limit)?;
    let n_overlays = r.get("overlays", a.overlays, 8usize)?;
    let top_r = r.get("regions", a.regions, 3usize)?;
    let theta = r.get("theta", a.theta, 0.5f64)?;
    let out = resolve_out(&mut r, a.out, "eval")?;
    let checkpoints = checkpoint_files(&checkpoint_arg.ok_or_else(|| CliError {
        code: EXIT_NO_CHECKPOINT,
        message: "no checkpoint given".into(),
    })?)?;
    r.note("checkpoint_files", checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));

    let (ds, policy) = load_dataset(Path::new(&dataset))?;
    let reference = reference_value_for(&ds.world);
    let mut test = ds.split.test.clone();
    if let Some(l) = limit {
        test.truncate(l);
    }
    if test.is_empty() {
        return Err(config_err("test split is empty"));
    }
    let samples: Vec<(usize, &Tensor, usize)> =
        test.iter().map(|&i| (i, &ds.records[i].state, ds.records[i].action)).collect();
    let settings = CurveSettings {
        fractions,
        step: per_pixel.then_some(1),
    };
    let mut results = EvalResults {
        config: r.resolved().clone(),
        settings: settings.clone(),
        ..Default::default()
    };
    for path in &checkpoints {
        let ex = load_explainer(path, &ds, &policy)?;
        let label = run_label(path);
        let method = evaluate_method(&policy, &ex, &samples, &reference, &settings)?;
        println!(
            "{label}: fidelity accuracy {:.4}, macro F1 {:.4}",
            method.fidelity.accuracy, method.fidelity.f1
        );
        for &(index, s, action) in &samples {
            let m = ex.mask(s, action)?;
            for (rank, cf) in counterfactual(&policy, s, &m, &reference, theta, top_r)?.into_iter().enumerate() {
                results.counterfactuals.push(CounterfactualRow {
                    run: label.clone(),
                    index,
                    rank,
                    size: cf.region.pixels.len(),
                    mass: cf.region.mass,
                    original_action: cf.original_action,
                    new_action: cf.new_action,
                    changed: cf.changed,
                });
            }
        }
        if results.overlays.is_empty() {
            for &(index, s, action) in samples.iter().take(n_overlays) {
                results.overlays.push(OverlayImage {
                    index,
                    action,
                    state: s.clone(),
                    mask: ex.mask(s, action)?,
                });
            }
        }
        results.runs.push(RunResult {
            label,
            methods: vec![method],
        });
    }
    if with_baselines {
        let mut methods = Vec::new();
        for mut b in Baseline::all_default() {
            if let Baseline::Rise(p) = &mut b {
                p.n_masks = rise_masks;
            }
            let provider = BaselineProvider {
                method: b,
                policy: &policy,
                reference: reference.clone(),
            };
            let m = evaluate_method(&policy, &provider, &samples, &reference, &settings)?;
            println!("{}: fidelity accuracy {:.4}, macro F1 {:.4}", m.name, m.fidelity.accuracy, m.fidelity.f1);
            methods.push(m);
        }
        results.runs.push(RunResult {
            label: "baselines".into(),
            methods,
        });
    }
    r.write_echo(&out)?;
    emit_report(&results, &out)?;
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

/// State, expert action and label for `--index` or `--state`.
fn pick_state(r: &mut Resolver, a: StateArgs) -> CliResult<(Dataset, PolicyModel, Tensor, String, PathBuf, Option<PathBuf>)> {
    let dataset: String = r.require("dataset", a.dataset.map(|p| p.display().to_string()))?;
    let checkpoint = r.get_opt::<String>("checkpoint", a.checkpoint.map(|p| p.display().to_string()))?;
    let index = r.get_opt("index", a.index)?;
    let state_file = r.get_opt::<String>("state", a.state.map(|p| p.display().to_string()))?;
    let name = r.section();
    let out = resolve_out(r, a.out, name)?;
    let (ds, policy) = load_dataset(Path::new(&dataset))?;
    let (state, label) = match (index, state_file) {
        (Some(_), Some(_)) => return Err(config_err("give either --index or --state, not both")),
        (Some(i), None) => {
            let rec = ds
                .records
                .get(i)
                .ok_or_else(|| config_err(format!("index {i} out of range for {} records", ds.len())))?;
            (rec.state.clone(), i.to_string())
        }
        (None, Some(f)) => {
            let t = io::load_tensor(Path::new(&f))?;
            if t.shape() != policy.state_shape() {
                return Err(config_err(format!("state {:?} does not match {:?}", t.shape(), policy.state_shape())));
            }
            let stem = Path::new(&f).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "state".into());
            (t, stem)
        }
        (None, None) => return Err(config_err("missing --index or --state")),
    };
    Ok((ds, policy, state, label, out, checkpoint.map(PathBuf::from)))
}

fn require_checkpoint(p: Option<PathBuf>) -> CliResult<PathBuf> {
    p.ok_or_else(|| CliError {
        code: EXIT_NO_CHECKPOINT,
        message: "no checkpoint given".into(),
    })
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| Error::from(e).into())
}

fn cmd_explain(file: &ConfigFile, a: StateArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "explain");
    let (ds, policy, state, label, out, ck) = pick_state(&mut r, a)?;
    let ex = load_explainer(&require_checkpoint(ck)?, &ds, &policy)?;
    r.write_echo(&out)?;
    let masks = ex.explain(&state)?;
    let probs = policy.probs(&state)?;
    let action = crate::numeric::argmax(&probs);
    let mut per_action = Vec::new();
    for k in 0..masks.num_actions() {
        let m = masks.mask(k)?;
        write(&out.join(format!("{label}_action{k}.ppm")), &overlay_ppm(&state, &m, 4)?)?;
        let d = m.data();
        per_action.push(json!({
            "action": k,
            "probability": evalkit::sig9(probs[k] as f64),
            "mask_mean": evalkit::sig9(d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64),
            "mask_max": evalkit::sig9(d.iter().copied().fold(0.0f32, f32::max) as f64),
        }));
    }
    io::save_tensor(&out.join(format!("{label}_masks.vmt")), masks.tensor())?;
    let doc = json!({ "state": label, "action": action, "actions": per_action });
    write(&out.join(format!("{label}_explain.json")), format!("{}\n", serde_json::to_string_pretty(&doc).unwrap_or_default()).as_bytes())?;
    println!("expert action {action}; wrote {} overlays to {}", masks.num_actions(), out.display());
    Ok(())
}

fn cmd_counterfactual(file: &ConfigFile, a: CounterfactualArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "counterfactual");
    let top_r = r.get("regions", a.regions, 3usize)?;
    let theta = r.get("theta", a.theta, 0.5f64)?;
    let (ds, policy, state, label, out, ck) = pick_state(&mut r, a.state)?;
    let ex = load_explainer(&require_checkpoint(ck)?, &ds, &policy)?;
    r.write_echo(&out)?;
    let reference = reference_value_for(&ds.world);
    let action = policy.act(&state)?;
    let mask = ex.mask(&state, action)?;
    let cfs = counterfactual(&policy, &state, &mask, &reference, theta, top_r)?;
    let w = state.shape()[2];
    let mut rows = Vec::new();
    for (rank, cf) in cfs.iter().enumerate() {
        let ys = cf.region.pixels.iter().map(|p| p / w);
        let xs = cf.region.pixels.iter().map(|p| p % w);
        let bbox = [ys.clone().min(), xs.clone().min(), ys.max(), xs.max()];
        write(&out.join(format!("{label}_cf{rank}.ppm")), &overlay_ppm(&cf.modified, &mask, 4)?)?;
        rows.push(json!({
            "rank": rank,
            "size": cf.region.pixels.len(),
            "mass": evalkit::sig9(cf.region.mass),
            "bbox_top_left_bottom_right": bbox,
            "original_action": cf.original_action,
            "new_action": cf.new_action,
            "changed": cf.changed,
        }));
        println!(
            "region {rank}: {} pixels, mass {:.3}: action {} -> {}",
            cf.region.pixels.len(),
            cf.region.mass,
            cf.original_action,
            cf.new_action
        );
    }
    if cfs.is_empty() {
        println!("no region passes the threshold");
    }
    let doc = json!({ "state": label, "action": action, "theta": theta, "regions": rows });
    write(
        &out.join(format!("{label}_counterfactual.json")),
        format!("{}\n", serde_json::to_string_pretty(&doc).unwrap_or_default()).as_bytes(),
    )?;
    Ok(())
}

fn cmd_baseline(file: &ConfigFile, a: BaselineArgs) -> CliResult<()> {
    let mut r = Resolver::new(file, "baseline");
    let dataset: String = r.require("dataset", a.dataset.map(|p| p.display().to_string()))?;
    let index: usize = r.require("index", a.index)?;
    let method = r.get("method", a.method, "all".to_string())?;
    let rd = RiseParams::default();
    let rise = RiseParams {
        n_masks: r.get("n_masks", a.n_masks, rd.n_masks)?,
        cell_grid: r.get("cell_grid", a.cell_grid, rd.cell_grid)?,
        p_keep: r.get("p_keep", a.p_keep, rd.p_keep)?,
        seed: r.get("seed", a.seed, rd.seed)?,
    };
    let bd = BlurParams::default();
    let blur = BlurParams {
        stride: r.get("stride", a.stride, bd.stride)?,
        sigma: r.get("sigma", a.sigma, bd.sigma)?,
    };
    let patch = r.get("patch", a.patch, 5usize)?;
    let action_flag = r.get_opt("action", a.action)?;
    let out = resolve_out(&mut r, a.out, "baseline")?;
    let all = [
        Baseline::Rise(rise),
        Baseline::Blur(blur),
        Baseline::Occlusion { patch },
        Baseline::NormalizedDelta { patch },
    ];
    let chosen: Vec<Baseline> = if method == "all" {
        all.to_vec()
    } else {
        let m = all
            .iter()
            .find(|b| b.name() == method)
            .ok_or_else(|| config_err(format!("unknown method {method:?}")))?;
        vec![*m]
    };
    let (ds, policy) = load_dataset(Path::new(&dataset))?;
    let rec = ds
        .records
        .get(index)
        .ok_or_else(|| config_err(format!("index {index} out of range for {} records", ds.len())))?;
    let action = action_flag.unwrap_or(rec.action);
    if action >= ds.num_actions() {
        return Err(config_err(format!("action {action} out of range")));
    }
    r.write_echo(&out)?;
    let reference = reference_value_for(&ds.world);
    for b in chosen {
        let map = b.run(&policy, &rec.state, action, &reference)?;
        let base = out.join(format!("{index}_{}", b.name()));
        map.save(&base.with_extension("vmt"))?;
        write(&base.with_extension("ppm"), &overlay_ppm(&rec.state, &map.values, 4)?)?;
        println!("{}: max raw score {:.6} -> {}", b.name(), map.scale, base.with_extension("vmt").display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).code, EXIT_CONFIG);
        assert_eq!(CliError::from(Error::Dimension("x".into())).code, EXIT_CONFIG);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(Error::Io(io)).code, EXIT_IO);
        let d = Error::Diverged { epoch: 1, step: 2, term: "loss_bc" };
        assert_eq!(CliError::from(d).code, EXIT_DIVERGED);
    }

    #[test]
    fn unknown_flag_is_config_error() {
        assert_eq!(run(["masklab", "collect", "--bogus"]), EXIT_CONFIG);
    }
}
