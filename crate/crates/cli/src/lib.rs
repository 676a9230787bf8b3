//! Command-line front end for `lrk-core`.
//!
//! [`run`] parses arguments, resolves [`config::Settings`] and dispatches to
//! one library call per subcommand. Results go to stdout as JSON, diagnostics
//! to stderr. Exit codes: 0 success, 1 domain error, 2 usage or configuration
//! error.

pub mod config;
pub mod serve;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrk_core::layout::{parse_document, parse_layers, parse_ocr_regions, serialize_document};
use lrk_core::merge::{merge_layers, MergePolicy};
use lrk_core::metrics::{evaluate, summarize};
use lrk_core::perturb::{derive_seed, sample_perturbations, Clamp, GENERATOR};
use lrk_core::policy::grpo_advantages;
use lrk_core::render::{composite, load_assets};
use lrk_core::reward::{rlaf_breakdown, vra_total_with, ConstantJudge, FormatCheck, ScoreTable};
use lrk_core::tensor::{det_map, CoordinateRepresentation, GridDomain};
use lrk_core::LayoutDocument;
use serde_json::{json, Value};

use config::{resolve, ConfigError, FlagLayer, Settings};
use serve::ServeContext;

#[derive(Debug, Parser)]
#[command(name = "lrk", version, about = "Layout reward, evaluation and rendering toolkit")]
pub struct Cli {
    /// TOML config file (default: $LRK_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Print the effective settings and their sources, then exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a layout document.
    Validate { file: PathBuf },
    /// Score a predicted layout against ground truth.
    Reward(RewardArgs),
    /// Mean IoU, IOPR and ARD for every document in a directory pair.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Include per-layer rows.
        #[arg(long)]
        per_layer: bool,
    },
    /// Sample Gaussian-perturbed copies of a ground-truth layout.
    Perturb(PerturbArgs),
    /// Group-relative advantages for a comma-separated reward list.
    Advantage {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        rewards: Vec<f64>,
    },
    /// Merge over-segmented layers using OCR regions.
    Merge(MergeArgs),
    /// Composite a document's layer assets into a PNG.
    Render {
        doc: PathBuf,
        #[arg(long)]
        assets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Structure-tensor determinant map of a coordinate representation.
    Analyze(AnalyzeArgs),
    /// Score newline-delimited JSON requests from stdin or a TCP port.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Vra,
    Rlaf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatCheckArg {
    Schema,
    Syntax,
}

impl From<FormatCheckArg> for FormatCheck {
    fn from(v: FormatCheckArg) -> Self {
        match v {
            FormatCheckArg::Schema => FormatCheck::Schema,
            FormatCheckArg::Syntax => FormatCheck::Syntax,
        }
    }
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth; required in vra mode.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vra")]
    pub mode: ModeArg,
    /// Aesthetic score for rlaf mode.
    #[arg(long, allow_hyphen_values = true)]
    pub aes_score: Option<f64>,
    /// JSON map of sample id to aesthetic score, for rlaf mode.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Sample id to look up in --scores (default: the prediction's file stem).
    #[arg(long)]
    pub id: Option<String>,
    /// Partial weights as a JSON object, e.g. '{"cap": 2}'.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, value_enum)]
    pub format_check: Option<FormatCheckArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClampArg {
    None,
    Canvas,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    pub gt: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub clamp: Option<ClampArg>,
    /// Round perturbed coordinates to whole pixels.
    #[arg(long)]
    pub round: bool,
    /// Mix the seed with a digest of the document.
    #[arg(long)]
    pub per_document_seed: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Raw layers: a layer list or a document.
    #[arg(long)]
    pub layers: PathBuf,
    /// OCR regions as a JSON list.
    #[arg(long)]
    pub ocr: PathBuf,
    #[arg(long, num_args = 2, value_names = ["W", "H"], required = true)]
    pub canvas: Vec<f64>,
    /// Merge policy overrides as a JSON file.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReprArg {
    Euclidean,
    Token,
    TokenAvg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub repr: ReprArg,
    #[arg(long, num_args = 2, value_names = ["W", "H"], required = true)]
    pub domain: Vec<usize>,
    /// Box-filter side for token-avg.
    #[arg(long)]
    pub window: Option<usize>,
    /// Grid origin.
    #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_hyphen_values = true)]
    pub origin: Option<Vec<i64>>,
    /// Also write a PGM heat map here.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Omit the per-cell values from the JSON output.
    #[arg(long)]
    pub summary_only: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen on 127.0.0.1:PORT instead of stdio (0 picks a free port).
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSON map of request id to aesthetic score, for rlaf requests.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, value_enum)]
    pub format_check: Option<FormatCheckArg>,
}

/// An invocation problem; maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl From<ConfigError> for UsageError {
    fn from(e: ConfigError) -> Self {
        UsageError(e.0)
    }
}

/// Process-level streams and environment, injectable for tests.
pub struct Io<'a> {
    pub stdin: &'a mut (dyn BufRead + Send),
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

/// Runs the CLI with the real process streams and environment.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut stdin = std::io::BufReader::new(std::io::stdin());
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    let env = |k: &str| std::env::var(k).ok();
    run_with(
        args,
        Io {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
            env: &env,
        },
    )
}

pub fn run_with<I, T>(args: I, io: Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(io.stdout, "{}", e.render());
                    return 0;
                }
                _ => 2,
            };
            let _ = write!(io.stderr, "{}", e.render());
            return code;
        }
    };
    match dispatch(&cli, io.stdin, io.stdout, io.stderr, io.env) {
        Ok(code) => code,
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 };
            let _ = writeln!(io.stderr, "error: {e:#}");
            code
        }
    }
}

fn flags_for(cmd: Option<&Command>) -> anyhow::Result<Value> {
    let mut f = FlagLayer::default();
    match cmd {
        Some(Command::Reward(a)) => {
            f.merge_json("weights", a.weights.as_deref())
                .map_err(UsageError::from)?;
            f.set("format_check", a.format_check.map(FormatCheck::from));
        }
        Some(Command::Perturb(a)) => {
            f.set("seed", a.seed);
            f.set("perturb.sigma", a.sigma);
            f.set("perturb.n", a.n);
            f.set(
                "perturb.clamp",
                a.clamp.map(|c| match c {
                    ClampArg::None => Clamp::None,
                    ClampArg::Canvas => Clamp::Canvas,
                }),
            );
            f.set("perturb.round", a.round.then_some(true));
        }
        Some(Command::Merge(a)) => {
            if let Some(path) = &a.policy {
                let text = read(path)?;
                let policy: Value = serde_json::from_str(&text)
                    .ok()
                    .filter(Value::is_object)
                    .ok_or_else(|| UsageError(format!("--policy {} must hold a JSON object", path.display())))?;
                f.set("merge", Some(policy));
            }
        }
        Some(Command::Serve(a)) => {
            f.merge_json("weights", a.weights.as_deref())
                .map_err(UsageError::from)?;
            f.set("format_check", a.format_check.map(FormatCheck::from));
            f.set("serve.workers", a.workers);
        }
        _ => {}
    }
    Ok(f.build())
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_doc(path: &Path) -> anyhow::Result<LayoutDocument> {
    let doc = parse_document(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    doc.validate()
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(doc)
}

fn emit(out: &mut dyn Write, v: &impl serde::Serialize) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn dispatch(
    cli: &Cli,
    stdin: &mut (dyn BufRead + Send),
    out: &mut dyn Write,
    err: &mut dyn Write,
    env: &dyn Fn(&str) -> Option<String>,
) -> anyhow::Result<i32> {
    let flags = flags_for(cli.command.as_ref())?;
    let resolved = resolve(cli.config.as_deref(), env, flags).map_err(UsageError::from)?;
    if cli.print_config {
        emit(out, &resolved)?;
        return Ok(0);
    }
    let settings = resolved.settings;
    let Some(cmd) = &cli.command else {
        bail!(UsageError("a subcommand is required (see --help)".into()));
    };
    match cmd {
        Command::Validate { file } => {
            let doc = load_doc(file)?;
            emit(
                out,
                &json!({
                    "valid": true,
                    "layers": doc.layers.len(),
                    "canvas": format!("{}x{}", doc.canvas_w, doc.canvas_h),
                    "canvas_size": {"width": doc.canvas_w, "height": doc.canvas_h},
                    "statistics": doc.stats,
                }),
            )?;
        }
        Command::Reward(a) => return reward(a, &settings, out),
        Command::Metrics { pred, gt, per_layer } => return metrics(pred, gt, *per_layer, out, err),
        Command::Perturb(a) => {
            let gt = load_doc(&a.gt)?;
            let mut cfg = settings.perturbation();
            if a.per_document_seed {
                cfg.seed = derive_seed(cfg.seed, &gt);
            }
            let docs: Vec<String> = sample_perturbations(&gt, &cfg).iter().map(serialize_document).collect();
            writeln!(out, "[\n{}\n]", docs.join(",\n"))?;
            let meta =
                json!({"generator": GENERATOR, "seed": cfg.seed, "sigma": cfg.sigma, "n": cfg.n, "clamp": cfg.clamp});
            writeln!(err, "{meta}")?;
        }
        Command::Advantage { rewards } => {
            let adv = grpo_advantages(rewards)?;
            serde_json::to_writer(&mut *out, &adv)?;
            writeln!(out)?;
        }
        Command::Merge(a) => {
            let [w, h] = a.canvas[..] else {
                bail!(UsageError("--canvas takes W H".into()));
            };
            let raw = parse_layers(&read(&a.layers)?).with_context(|| format!("parsing {}", a.layers.display()))?;
            let ocr = parse_ocr_regions(&read(&a.ocr)?).with_context(|| format!("parsing {}", a.ocr.display()))?;
            let policy: MergePolicy = settings.merge;
            let outcome = merge_layers(&raw, &ocr, (w, h), &policy);
            writeln!(out, "{}", serialize_document(&outcome.document))?;
            if !outcome.pending_assets.is_empty() {
                writeln!(err, "{}", json!({"pending_assets": outcome.pending_assets}))?;
            }
        }
        Command::Render { doc, assets, out: dest } => {
            let document = load_doc(doc)?;
            let images = load_assets(&document, assets)?;
            let image = composite(&document, &images)?;
            image.save_png(dest)?;
            emit(
                out,
                &json!({"out": dest, "width": image.width, "height": image.height, "layers": document.layers.len()}),
            )?;
        }
        Command::Analyze(a) => return analyze(a, out),
        Command::Serve(a) => return serve_cmd(a, &settings, stdin, out, err),
    }
    Ok(0)
}

fn reward(a: &RewardArgs, settings: &Settings, out: &mut dyn Write) -> anyhow::Result<i32> {
    let pred = read(&a.pred)?;
    let weights = settings.weights;
    let breakdown = match a.mode {
        ModeArg::Vra => {
            let Some(gt) = &a.gt else {
                bail!(UsageError("--gt is required in vra mode".into()));
            };
            vra_total_with(&pred, &load_doc(gt)?, &weights, settings.format_check)?
        }
        ModeArg::Rlaf => {
            let id = a.id.clone().unwrap_or_else(|| {
                a.pred
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            match (a.aes_score, &a.scores) {
                (Some(s), _) => rlaf_breakdown(&pred, &id, &ConstantJudge(s), &weights, settings.format_check)?,
                (None, Some(path)) => {
                    let table =
                        ScoreTable::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
                    rlaf_breakdown(&pred, &id, &table, &weights, settings.format_check)?
                }
                (None, None) => bail!(UsageError("rlaf mode needs --aes-score or --scores".into())),
            }
        }
    };
    emit(out, &breakdown)?;
    Ok(0)
}

fn metrics(
    pred_dir: &Path,
    gt_dir: &Path,
    per_layer: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .with_context(|| format!("listing {}", gt_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();

    let mut documents = Vec::new();
    let mut reports = Vec::new();
    let mut failures = 0;
    for name in &names {
        let result = load_doc(&gt_dir.join(name))
            .and_then(|gt| Ok((load_doc(&pred_dir.join(name))?, gt)))
            .and_then(|(pred, gt)| Ok(evaluate(&pred, &gt, per_layer)?));
        match result {
            Ok(report) => {
                documents.push(json!({"file": name, "report": report}));
                reports.push(report);
            }
            Err(e) => {
                failures += 1;
                writeln!(err, "{name}: {e:#}")?;
                documents.push(json!({"file": name, "error": format!("{e:#}")}));
            }
        }
    }
    emit(
        out,
        &json!({"documents": documents, "summary": summarize(&reports), "failures": failures}),
    )?;
    Ok(if failures > 0 { 1 } else { 0 })
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let [w, h] = a.domain[..] else {
        bail!(UsageError("--domain takes W H".into()));
    };
    let mut domain = GridDomain::new(w, h);
    if let Some(o) = &a.origin {
        (domain.x0, domain.y0) = (o[0], o[1]);
    }
    let repr = match a.repr {
        ReprArg::Euclidean => CoordinateRepresentation::euclidean(),
        ReprArg::Token => CoordinateRepresentation::token_string(),
        ReprArg::TokenAvg => {
            CoordinateRepresentation::token_averaged(a.window.unwrap_or(CoordinateRepresentation::DEFAULT_WINDOW))
        }
    };
    let map = det_map(&repr, &domain).map_err(|e| UsageError(e.to_string()))?;
    if let Some(path) = &a.pgm {
        std::fs::write(path, map.to_pgm()).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.summary_only {
        emit(
            out,
            &json!({"domain": map.domain, "grid_w": map.grid_w, "grid_h": map.grid_h, "summary": map.summary, "metadata": map.metadata}),
        )?;
    } else {
        serde_json::to_writer(&mut *out, &map)?;
        writeln!(out)?;
    }
    Ok(0)
}

fn serve_cmd(
    a: &ServeArgs,
    settings: &Settings,
    stdin: &mut (dyn BufRead + Send),
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let scores = match &a.scores {
        Some(path) => Some(ScoreTable::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?),
        None => None,
    };
    let ctx = ServeContext {
        weights: settings.weights,
        format_check: settings.format_check,
        scores,
    };
    let workers = settings.serve.workers;
    match a.port {
        None => {
            let stats = serve::serve_lines(stdin, out, &ctx, workers).context("stdio transport")?;
            writeln!(err, "served {} requests", stats.responses)?;
        }
        Some(port) => {
            let listener = std::net::TcpListener::bind(("127.0.0.1", port)).context("binding listener")?;
            writeln!(err, "listening on {}", listener.local_addr()?)?;
            err.flush()?;
            serve::serve_tcp(listener, &ctx, workers).context("tcp transport")?;
        }
    }
    Ok(0)
}
