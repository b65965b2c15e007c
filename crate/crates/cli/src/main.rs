use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use inrst_core::archive::{read_archive, write_archive};
use inrst_core::evaluation::{controllability_probe, disentanglement_sweep, ProbeRecord};
use inrst_core::imaging::{decode, decode_gray, encode, EncodeFormat, PngRowWriter};
use inrst_core::latent::{AlphaSpec, Axis, Region};
use inrst_core::objective::ReweightMode;
use inrst_core::perceptual::{open_extractor, LayerPreset};
use inrst_core::renderer::{render, render_rows, RenderRequest, DEFAULT_CHUNK_ROWS};
use inrst_core::trainer::{train_with_observer, Fit, LossRecord, Seeds, TrainConfig, TrainObserver};

#[derive(Parser)]
#[command(name = "inrst", version, about = "Controllable style transfer with a test-time trained coordinate MLP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a session on one content/style pair.
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Render a trained session.
    #[command(allow_negative_numbers = true)]
    Render(RenderArgs),
    /// Write a metric report for a trained session.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    ShallowRelu,
    ShallowConv,
    DeepRelu,
    DeepConv,
}

impl From<PresetArg> for LayerPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::ShallowRelu => LayerPreset::ShallowRelu,
            PresetArg::ShallowConv => LayerPreset::ShallowConv,
            PresetArg::DeepRelu => LayerPreset::DeepRelu,
            PresetArg::DeepConv => LayerPreset::DeepConv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReweightArg {
    Linear,
    Polynomial,
    Exponential,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// VGG-19 safetensors file, or `synthetic:<seed>` for a seeded random network.
    #[arg(long, env = "INRST_VGG_WEIGHTS")]
    vgg: String,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    style_weight: Option<f64>,
    #[arg(long)]
    content_weight: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    reweight: Option<ReweightArg>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Base seed; latent, parameter and α seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Centre-crop inputs to a square instead of stretching.
    #[arg(long)]
    crop: bool,
    /// Write the loss history as JSON lines.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("alpha_source").args(["alpha", "alpha_map", "region", "gradient"]).multiple(false)))]
struct RenderArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Uniform α in [0, 1]; 1 reproduces content, 0 is full style.
    #[arg(long)]
    alpha: Option<f32>,
    /// Grayscale PNG whose values are per-pixel α.
    #[arg(long, value_name = "PATH")]
    alpha_map: Option<PathBuf>,
    /// `mask.png:α`; repeatable, later regions win.
    #[arg(long, value_name = "MASK:ALPHA", value_parser = parse_region)]
    region: Vec<(PathBuf, f32)>,
    /// α outside every region.
    #[arg(long, requires = "region", default_value_t = 1.0)]
    default_alpha: f32,
    /// `x|y:from:to` linear ramp.
    #[arg(long, value_name = "AXIS:FROM:TO", value_parser = parse_gradient)]
    gradient: Option<(Axis, f32, f32)>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    /// Emit PNG rows as they are rendered instead of buffering the image.
    #[arg(long)]
    stream: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    #[arg(long, env = "INRST_VGG_WEIGHTS")]
    vgg: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alphas: Vec<f64>,
    /// Ring distances for the locality probe at the image centre.
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    probe_d: Vec<usize>,
}

fn parse_region(s: &str) -> Result<(PathBuf, f32), String> {
    let (path, alpha) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected MASK:ALPHA, got {s:?}"))?;
    let alpha = alpha.parse().map_err(|_| format!("bad region alpha {alpha:?}"))?;
    Ok((PathBuf::from(path), alpha))
}

fn parse_gradient(s: &str) -> Result<(Axis, f32, f32), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [axis, from, to] = parts[..] else {
        return Err(format!("expected AXIS:FROM:TO, got {s:?}"));
    };
    let axis = match axis {
        "x" => Axis::X,
        "y" => Axis::Y,
        _ => return Err(format!("axis must be x or y, got {axis:?}")),
    };
    let num = |v: &str| v.parse::<f32>().map_err(|_| format!("bad number {v:?}"));
    Ok((axis, num(from)?, num(to)?))
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn read(path: &Path) -> AnyResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()).into())
}

fn create(path: &Path) -> AnyResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("cannot create {}: {e}", path.display()).into())
}

struct Progress {
    every: usize,
    quiet: bool,
}

impl TrainObserver for Progress {
    fn on_iteration(&mut self, r: &LossRecord) {
        if !self.quiet && (r.iteration + 1) % self.every == 0 {
            eprintln!(
                "iter {:>6}  alpha {:.3}  content {:.5}  style {:.5}  total {:.5}",
                r.iteration + 1,
                r.alpha,
                r.content,
                r.style,
                r.total
            );
        }
    }
}

fn train_config(args: &TrainArgs) -> AnyResult<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => serde_json::from_slice(&read(path)?)
            .map_err(|e| format!("config {}: {e}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.size {
        cfg.size = v;
    }
    if let Some(v) = args.iters {
        cfg.iterations = v;
    }
    if let Some(v) = args.kappa {
        cfg.loss.kappa = v;
    }
    if let Some(v) = args.style_weight {
        cfg.loss.style_weight = v;
    }
    if let Some(v) = args.content_weight {
        cfg.loss.content_weight = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.reweight {
        cfg.loss.reweight = match v {
            ReweightArg::Linear => ReweightMode::Linear,
            ReweightArg::Polynomial => ReweightMode::Polynomial,
            ReweightArg::Exponential => ReweightMode::Exponential,
        };
    }
    if let Some(v) = args.preset {
        cfg.preset = v.into();
    }
    if let Some(v) = args.hidden_width {
        cfg.hidden_width = v;
    }
    if let Some(v) = args.seed {
        cfg.seeds = Seeds::from_base(v);
    }
    if args.crop {
        cfg.fit = Fit::Crop;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(args: TrainArgs) -> AnyResult<()> {
    let cfg = train_config(&args)?;
    let content = decode(&read(&args.content)?)?;
    let style = decode(&read(&args.style)?)?;
    let extractor = open_extractor(&args.vgg, cfg.preset)?;
    let mut progress = Progress {
        every: (cfg.iterations / 50).max(1),
        quiet: args.quiet,
    };
    let session = train_with_observer(&content, &style, &cfg, &extractor, &mut progress)?;
    let mut out = create(&args.out)?;
    out.write_all(&write_archive(&session))?;
    out.flush()?;
    if let Some(path) = &args.losses {
        let mut w = create(path)?;
        inrst_core::trainer::write_loss_jsonl(&session.loss_history, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn alpha_spec(args: &RenderArgs) -> AnyResult<AlphaSpec> {
    if let Some(a) = args.alpha {
        return Ok(AlphaSpec::Uniform(a));
    }
    if let Some(path) = &args.alpha_map {
        return Ok(AlphaSpec::Map(decode_gray(&read(path)?)?));
    }
    if !args.region.is_empty() {
        let regions = args
            .region
            .iter()
            .map(|(path, alpha)| {
                Ok(Region {
                    mask: decode_gray(&read(path)?)?,
                    alpha: *alpha,
                })
            })
            .collect::<AnyResult<Vec<_>>>()?;
        return Ok(AlphaSpec::Regions {
            regions,
            default: args.default_alpha,
        });
    }
    if let Some((axis, from, to)) = args.gradient {
        return Ok(AlphaSpec::Gradient { axis, from, to });
    }
    Ok(AlphaSpec::Uniform(1.0))
}

fn run_render(args: RenderArgs) -> AnyResult<()> {
    let session = read_archive(&read(&args.session)?)?;
    let (th, tw) = session.train_dims;
    let req = RenderRequest::new(args.width.unwrap_or(tw), args.height.unwrap_or(th), alpha_spec(&args)?)
        .with_chunk_rows(args.chunk_rows);
    if args.stream {
        let mut writer = PngRowWriter::new(create(&args.out)?, req.width, req.height)?;
        render_rows(&session, &req, |row| writer.write_row(row))?;
        writer.finish()?;
    } else {
        let img = render(&session, &req)?;
        let mut out = create(&args.out)?;
        out.write_all(&encode(&img, EncodeFormat::Png)?)?;
        out.flush()?;
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> AnyResult<()> {
    let session = read_archive(&read(&args.session)?)?;
    let content = decode(&read(&args.content)?)?;
    let style = decode(&read(&args.style)?)?;
    let extractor = open_extractor(&args.vgg, session.preset)?;
    let mut report = disentanglement_sweep(&session, &content, &style, &args.alphas, &extractor)?;
    let (h, w) = session.train_dims;
    let centre = vec![(h / 2, w / 2)];
    for &d in &args.probe_d {
        report.probes.push(ProbeRecord {
            d,
            value: controllability_probe(&session, &centre, d)?,
            targets: centre.clone(),
        });
    }
    let mut out = create(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn run(argv: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Render(a) => run_render(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    run(std::env::args_os())
}
