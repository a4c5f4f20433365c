//! Command-line front end: `synth`, `ingest`, `train`, `eval`, `gradcheck`,
//! `profile` and `errmap`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 IO or file
//! format error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    ingest::{ingest, Layout},
    load_dataset, save_dataset, synth_traffic, Prepared, Split, SynthSpec, DEFAULT_SPLIT,
};
use crate::error::Error;
use crate::metrics::{compute_metrics, error_map, write_error_map, MetricsReport};
use crate::model::{Ddcn, ModelConfig};
use crate::profile::{profile_model, search, SearchSpace};
use crate::train::{model_suite, ops_suite, predict_windows, train_loop, GradCheckConfig, SuiteReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Everything a run needs, as read from `--config` and echoed to the run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: Option<[usize; 3]>,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: invalid config: {e}", path.display())))
    }

    pub fn ratios(&self) -> [usize; 3] {
        self.split.unwrap_or(DEFAULT_SPLIT)
    }
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format(_) => EXIT_IO,
            Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "ddcn", version, about = "Grid traffic forecasting with deformable dynamic convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth(SynthArgs),
    /// Convert an .npy or raw f32 array into a dataset file.
    Ingest(IngestArgs),
    /// Train a model; writes checkpoint, run record and effective config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Parameter and FLOPs accounting.
    Profile(ProfileArgs),
    /// Per-cell absolute error map of one window as CSV and PGM.
    Errmap(ErrmapArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    h: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    w: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    steps: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames per daily cycle.
    #[arg(long, default_value_t = 48, value_parser = clap::value_parser!(u32).range(1..))]
    period: u32,
    #[arg(long, default_value_t = 3)]
    hotspots: usize,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Axis order of the input array.
    #[arg(long, default_value = "thwc")]
    layout: Layout,
    /// Dimensions of a raw f32 input, comma separated, in layout order.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, default_value = "ingested")]
    name: String,
    #[arg(long, default_value_t = 30)]
    interval: u32,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    no_ddc: bool,
    #[arg(long)]
    no_involution: bool,
    #[arg(long)]
    no_prefetch: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stub {
    /// Predict the target itself.
    Oracle,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "stub")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Where to write the metrics JSON (default: next to the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config to use with `--stub` when no checkpoint is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    stub: Option<Stub>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum Scope {
    Ops,
    Model,
    All,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "ops")]
    scope: Scope,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input shape B,T,C,H,W; T, C, H and W override the config.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    /// Count convolutions only (no activations or elementwise ops).
    #[arg(long)]
    conv_only: bool,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Search (D, depth, p) for configurations near the given targets.
    #[arg(long)]
    search: bool,
    #[arg(long, default_value_t = 610_000)]
    target_params: usize,
    #[arg(long, default_value_t = 150_000_000)]
    target_flops: u64,
    #[arg(long, default_value_t = 0.2)]
    tolerance: f64,
    /// Time one forward pass.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct ErrmapArgs {
    #[arg(long, required_unless_present = "stub")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Window index within the split.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    stub: Option<Stub>,
}

/// Shows `p` relative to the working directory when it lies below it.
fn rel(p: &Path) -> String {
    let shown = std::env::current_dir()
        .ok()
        .and_then(|cwd| p.strip_prefix(&cwd).ok().map(Path::to_path_buf))
        .unwrap_or_else(|| p.to_path_buf());
    shown.display().to_string()
}

fn wrote(p: &Path) {
    println!("wrote {}", rel(p));
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    wrote(path);
    Ok(())
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("DDCN_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(format!("DDCN_SEED must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        height: a.h as usize,
        width: a.w as usize,
        steps: a.steps as usize,
        seed: a.seed.or(env_seed()?).unwrap_or(0),
        period: a.period as usize,
        hotspots: a.hotspots,
        ..Default::default()
    };
    let ds = synth_traffic(&spec)?;
    save_dataset(&ds, &a.out)?;
    println!("{} frames of {}×{}×{} (seed {})", ds.meta.steps, ds.meta.channels, ds.meta.height, ds.meta.width, spec.seed);
    wrote(&a.out);
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> CmdResult {
    let dims = match a.dims.as_deref() {
        Some(&[a0, a1, a2, a3]) => Some([a0, a1, a2, a3]),
        Some(d) => return Err(Failure::usage(format!("--dims needs 4 values, got {}", d.len()))),
        None => None,
    };
    let ds = ingest(&a.input, a.layout, dims, &a.name, a.interval)?;
    save_dataset(&ds, &a.out)?;
    println!("{} frames of {}×{}×{}", ds.meta.steps, ds.meta.channels, ds.meta.height, ds.meta.width);
    wrote(&a.out);
    Ok(())
}

/// Applies flags and the seed environment variable on top of the config file.
fn effective_train_config(a: &TrainArgs) -> Result<CliConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.patience {
        t.patience = Some(v);
    }
    if a.no_prefetch {
        t.prefetch = false;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    } else if let Some(s) = env_seed()? {
        t.seed = s;
    }
    let m = &mut cfg.model;
    if let Some(v) = a.embed_dim {
        m.embed_dim = v;
    }
    if let Some(v) = a.depth {
        m.depth = v;
    }
    if let Some(v) = a.patch_size {
        m.patch_size = v;
    }
    if a.no_ddc {
        m.use_ddc = false;
    }
    if a.no_involution {
        m.use_involution3d = false;
    }
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = effective_train_config(&a)?;
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| Failure::usage("no dataset given (--data or \"data\" in the config)"))?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Failure::usage("no output directory given (--out or \"out_dir\" in the config)"))?;
    cfg.train.validate()?;
    let ds = load_dataset(&data_path)?;
    // the grid and channel count come from the data
    cfg.model.in_channels = ds.meta.channels;
    cfg.model.height = ds.meta.height;
    cfg.model.width = ds.meta.width;
    let prepared = Prepared::new(&ds, cfg.model.input_steps, cfg.ratios())?;
    let mut model = Ddcn::<f32>::new(&cfg.model, cfg.train.seed)?;

    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    println!(
        "model {} params; windows train/val/test = {}/{}/{}",
        model.num_params(),
        prepared.windows.train.len(),
        prepared.windows.val.len(),
        prepared.windows.test.len()
    );
    let quiet = a.quiet;
    let mut record = train_loop(&mut model, &prepared, &cfg.train, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:.6}  val {:.6}  ({:.2}s)",
                e.epoch, e.train_loss, e.val_loss, e.wall_seconds
            );
        }
    })?;
    let ckpt = out.join("checkpoint.ckpt");
    model.save(&ckpt)?;
    wrote(&ckpt);
    record.best_checkpoint = Some("checkpoint.ckpt".into());
    let (jsonl, summary) = (out.join("run.jsonl"), out.join("summary.json"));
    record.write(&jsonl, &summary)?;
    wrote(&jsonl);
    wrote(&summary);
    println!("best epoch {} (val L1 {:.6})", record.best_epoch, record.best_val_loss);
    println!("test  {}", record.test_metrics);
    Ok(())
}

/// Loads the run config for a checkpoint (or an explicit config) and the
/// prepared dataset.
fn load_run(
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    data: &Path,
) -> Result<(CliConfig, Prepared), Failure> {
    let cfg_path = match (config, checkpoint) {
        (Some(c), _) => Some(c.to_path_buf()),
        (None, Some(ck)) => Some(ck.parent().unwrap_or(Path::new(".")).join("config.json")),
        (None, None) => None,
    };
    let mut cfg = match cfg_path {
        Some(p) => CliConfig::load(&p)?,
        None => CliConfig::default(),
    };
    let ds = load_dataset(data)?;
    if checkpoint.is_none() {
        cfg.model.in_channels = ds.meta.channels;
        cfg.model.height = ds.meta.height;
        cfg.model.width = ds.meta.width;
    }
    let grid = (ds.meta.channels, ds.meta.height, ds.meta.width);
    if grid != (cfg.model.in_channels, cfg.model.height, cfg.model.width) {
        return Err(Failure::usage(format!(
            "dataset is {}×{}×{} but the model expects {}×{}×{}",
            grid.0, grid.1, grid.2, cfg.model.in_channels, cfg.model.height, cfg.model.width
        )));
    }
    let prepared = Prepared::new(&ds, cfg.model.input_steps, cfg.ratios())?;
    Ok((cfg, prepared))
}

/// Denormalized predictions and raw targets for `split`.
fn predictions(
    checkpoint: Option<&Path>,
    stub: Option<Stub>,
    cfg: &CliConfig,
    prepared: &Prepared,
    split: Split,
) -> Result<(crate::Tensor<f32>, crate::Tensor<f32>), Failure> {
    let windows = prepared.windows.get(split);
    let actual = prepared.raw_targets(windows)?;
    let pred = match (stub, checkpoint) {
        (Some(Stub::Oracle), _) => actual.clone(),
        (None, Some(ck)) => {
            let mut model = Ddcn::<f32>::new(&cfg.model, cfg.train.seed)?;
            model.load_weights(ck)?;
            let p = predict_windows(&model, prepared, windows, cfg.train.batch_size)?;
            prepared.stats.denormalize(&p, 1)?
        }
        (None, None) => return Err(Failure::usage("--checkpoint or --stub is required")),
    };
    Ok((pred, actual))
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let (cfg, prepared) = load_run(a.checkpoint.as_deref(), a.config.as_deref(), &a.data)?;
    let (pred, actual) = predictions(a.checkpoint.as_deref(), a.stub, &cfg, &prepared, a.split)?;
    let report: MetricsReport = compute_metrics(&pred, &actual, cfg.train.mape_threshold)?;
    let split_name = format!("{:?}", a.split).to_lowercase();
    println!("{split_name}  {report}");
    let out = a.out.unwrap_or_else(|| {
        let dir = a
            .checkpoint
            .as_deref()
            .and_then(Path::parent)
            .map_or_else(PathBuf::new, Path::to_path_buf);
        dir.join(format!("eval_{split_name}.json"))
    });
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&out, &report)
}

fn print_suite(r: &SuiteReport) {
    for c in &r.cases {
        println!(
            "{:<22} {}  max rel err {:.3e} over {} instances ({} refined near kinks)",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.max_rel_error,
            c.instances,
            c.refined
        );
        if !c.passed {
            if let Some(w) = &c.worst {
                println!("    worst: {w}");
            }
        }
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    if !(a.tol > 0.0) || a.instances == 0 {
        return Err(Failure::usage("--tol must be positive and --instances at least 1"));
    }
    let cfg = GradCheckConfig::with_tolerance(a.tol);
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let mut reports = Vec::new();
    if matches!(a.scope, Scope::Ops | Scope::All) {
        reports.push(ops_suite(a.instances, seed, &cfg)?);
    }
    if matches!(a.scope, Scope::Model | Scope::All) {
        reports.push(model_suite(a.instances, seed, &cfg)?);
    }
    reports.iter().for_each(print_suite);
    if let Some(p) = &a.json {
        write_json(p, &reports)?;
    }
    if reports.iter().all(SuiteReport::passed) {
        println!("all gradient checks passed (tolerance {:e})", a.tol);
        Ok(())
    } else {
        Err(Failure::numeric("gradient check failed"))
    }
}

fn cmd_profile(a: ProfileArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => CliConfig::load(p)?.model,
        None => ModelConfig::default(),
    };
    let batch = match &a.shape {
        Some(s) => {
            if s.len() != 5 || s.contains(&0) {
                return Err(Failure::usage("--shape takes five positive values B,T,C,H,W"));
            }
            cfg.input_steps = s[1];
            cfg.in_channels = s[2];
            cfg.height = s[3];
            cfg.width = s[4];
            s[0]
        }
        None => 1,
    };
    let model = Ddcn::<f32>::new(&cfg, 0)?;
    let shape = model.net.input_shape(batch);
    let report = profile_model(&model, &shape, a.conv_only)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    if a.timing {
        let x = crate::Tensor::zeros(shape.to_vec())?;
        let start = Instant::now();
        model.predict(&x)?;
        println!("forward pass: {:.3} ms (single run, not a calibrated benchmark)", start.elapsed().as_secs_f64() * 1e3);
    }
    if a.search {
        let r = search(&cfg, &SearchSpace::default(), a.target_params, a.target_flops, a.tolerance)?;
        println!(
            "search: {} configurations, {} within ±{:.0}% of {} params and {} FLOPs",
            r.evaluated,
            r.matches.len(),
            100.0 * a.tolerance,
            r.target_params,
            r.target_flops
        );
        for h in &r.matches {
            println!("  D={:<4} depth={} p={}  {} params  {} FLOPs", h.embed_dim, h.depth, h.patch_size, h.params, h.flops);
        }
        if r.matches.is_empty() {
            println!("closest by FLOPs among parameter matches:");
            for h in r.params_only.iter().take(5) {
                println!(
                    "  D={:<4} depth={} p={}  {} params  {} FLOPs ({:.2}× target)",
                    h.embed_dim, h.depth, h.patch_size, h.params, h.flops, h.flops_ratio
                );
            }
            println!(
                "{} configurations would match if FLOPs counted multiply-accumulates once",
                r.half_count_matches.len()
            );
        }
    }
    Ok(())
}

fn cmd_errmap(a: ErrmapArgs) -> CmdResult {
    let (cfg, prepared) = load_run(a.checkpoint.as_deref(), a.config.as_deref(), &a.data)?;
    let n = prepared.windows.get(a.split).len();
    if a.index >= n {
        return Err(Failure::usage(format!("--index {} out of range: split has {n} windows", a.index)));
    }
    let (pred, actual) = predictions(a.checkpoint.as_deref(), a.stub, &cfg, &prepared, a.split)?;
    let frame = pred.index_first(a.index)?;
    let target = actual.index_first(a.index)?;
    let map = error_map(&frame, &target)?;
    create_dir(&a.out)?;
    let stem = format!("errmap_{:?}_{}", a.split, a.index).to_lowercase();
    for p in write_error_map(&map, &a.out, &stem)? {
        wrote(&p);
    }
    let max = map.data().iter().copied().fold(0.0f64, f64::max);
    println!("max cell error {max:.4}");
    Ok(())
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Errmap(a) => cmd_errmap(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
