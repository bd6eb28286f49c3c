use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spikemm::bsn::{architecture, train_bsn, BsnConfig, BsnKind};
use spikemm::config::{load_file, Ini};
use spikemm::diffkernel::checkpoint;
use spikemm::encoding::{isi_encode, isi_to_intensity, normalize_by_max, tfp_encode, EncodingWindow};
use spikemm::frame::{load_frame, read_sequence, write_sequence, FrameFormat};
use spikemm::inr_sr::{sr_sequence, InrConfig, SrConfig};
use spikemm::magnify::{EulerianMagnifier, ExternalCommand, MagnifyConfig, Magnifier};
use spikemm::metrics::{evaluate_sequence, sequence_flows, write_flow_images, HornSchunck, Reduce};
use spikemm::mie::{mie_sequence, query_times, MieConfig};
use spikemm::pipeline::{compare_variants, expand_variants, run_pipeline, PipelineConfig, Variant};
use spikemm::spike_io::{load_stream, save_stream};
use spikemm::spike_sim::{simulate, IntegratorMode, SceneSpec, SimConfig};
use spikemm::Error;

#[derive(Parser)]
#[command(name = "spk", version, about = "Spike-camera reconstruction and motion magnification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Describe a .spk stream, .spkf frame, .spkw checkpoint or frame directory.
    Info { path: PathBuf },
    /// Render a scene and run the integrate-and-fire sensor over it.
    Simulate(SimulateArgs),
    /// Reconstruct frames with a short-window encoding.
    Encode(EncodeArgs),
    /// Train a blind-spot denoiser on a stream.
    TrainBsn(TrainBsnArgs),
    /// Fuse short- and long-window BSN outputs.
    Mie(MieArgs),
    /// Fit one INR per frame and resample at a new scale.
    Sr(SrArgs),
    /// Amplify in-band temporal variation of a frame sequence.
    Magnify(MagnifyArgs),
    /// Flow consistency and motion smoothness of a frame sequence.
    Metrics(MetricsArgs),
    /// Run every stage from one configuration file.
    Pipeline(PipelineArgs),
    /// Run configurations under several variants and tabulate the metrics.
    Compare(CompareArgs),
}

#[derive(Args)]
struct FrameOut {
    /// Write 32-bit SPKF frames instead of 8-bit PNG.
    #[arg(long)]
    float_frames: bool,
}

impl FrameOut {
    fn format(&self) -> FrameFormat {
        if self.float_frames {
            FrameFormat::Float
        } else {
            FrameFormat::Png
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene file with a [scene] section.
    #[arg(long)]
    scene: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = IntegratorMode::default())]
    integrator: IntegratorMode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Tfp,
    Isi,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "tfp")]
    mode: Encoding,
    #[arg(long, default_value_t = 32)]
    window: usize,
    /// Defaults to the window length.
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    frames: FrameOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    /// Short window against the TFP pseudo-label.
    #[value(name = "1")]
    Short,
    /// Long window against the window rate.
    #[value(name = "2")]
    Long,
}

#[derive(Args)]
struct BsnArgs {
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the large preset.
    #[arg(long)]
    large: bool,
}

impl BsnArgs {
    fn config(&self) -> spikemm::Result<BsnConfig> {
        let p = if self.large { BsnConfig::large() } else { BsnConfig::default() };
        let c = BsnConfig {
            depth: self.depth.unwrap_or(p.depth),
            base_channels: self.channels.unwrap_or(p.base_channels),
            iterations: self.iters.unwrap_or(p.iterations),
            lr: self.lr.unwrap_or(p.lr),
            crop: self.crop.unwrap_or(p.crop),
            batch: self.batch.unwrap_or(p.batch),
            seed: self.seed.unwrap_or(p.seed),
            ..p
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainBsnArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    which: Which,
    /// Window of BSN1.
    #[arg(long, default_value_t = 32)]
    ws: usize,
    /// Window of BSN2.
    #[arg(long, default_value_t = 256)]
    wl: usize,
    /// Also write the loss curve as CSV.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[command(flatten)]
    bsn: BsnArgs,
}

#[derive(Args)]
struct MieArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    bsn1: PathBuf,
    #[arg(long)]
    bsn2: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    ws: usize,
    #[arg(long, default_value_t = 256)]
    wl: usize,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 3)]
    kn: usize,
    #[arg(long, default_value_t = 1)]
    top: usize,
    #[command(flatten)]
    frames: FrameOut,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long = "in")]
    frames: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    scale: f64,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    omega0: Option<f32>,
    #[arg(long)]
    scale0: Option<f32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    warm_start: bool,
    #[command(flatten)]
    out_frames: FrameOut,
}

#[derive(Args)]
struct MagnifyArgs {
    #[arg(long = "in")]
    frames: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Passband in Hz as `lo:hi`.
    #[arg(long, value_parser = parse_band)]
    band: (f64, f64),
    #[arg(long)]
    fps: f64,
    /// External magnifier run through `sh -c`.
    #[arg(long)]
    plugin_cmd: Option<String>,
    #[command(flatten)]
    out_frames: FrameOut,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    frames: PathBuf,
    /// CSV report; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = Reduce::Mean)]
    reduce: Reduce,
    #[arg(long, default_value_t = 15.0)]
    reg: f64,
    #[arg(long, default_value_t = 100)]
    hs_iterations: usize,
    /// Write HSV flow visualizations here.
    #[arg(long)]
    flow_images: Option<PathBuf>,
}

/// Flags shadowing configuration keys; a given flag wins over the file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    ws: Option<usize>,
    #[arg(long)]
    wl: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    kn: Option<usize>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    bsn_iterations: Option<usize>,
    /// Enables super-resolution at this scale.
    #[arg(long)]
    sr_scale: Option<f64>,
    /// Enables magnification with this factor.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    band_lo: Option<f64>,
    #[arg(long)]
    band_hi: Option<f64>,
    #[arg(long)]
    plugin_cmd: Option<String>,
    #[arg(long)]
    float_frames: bool,
    /// Any other key, as `section.key=value`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, ini: &mut Ini) -> Result<()> {
        let mut put = |sec: &str, key: &str, val: String| {
            ini.with_section(Some(sec)).set(key, val);
        };
        macro_rules! flag {
            ($field:ident, $sec:literal, $key:literal) => {
                if let Some(v) = &self.$field {
                    put($sec, $key, v.to_string());
                }
            };
        }
        flag!(variant, "pipeline", "variant");
        if let Some(s) = &self.scene {
            let abs = std::path::absolute(s)?;
            put("pipeline", "scene", abs.display().to_string());
        }
        if let Some(o) = &self.out {
            let abs = std::path::absolute(o)?;
            put("output", "dir", abs.display().to_string());
        }
        flag!(theta, "simulate", "theta");
        flag!(seed, "simulate", "seed");
        flag!(noise, "simulate", "noise");
        flag!(ws, "encoding", "ws");
        flag!(wl, "encoding", "wl");
        flag!(stride, "encoding", "stride");
        flag!(kn, "mie", "kn");
        flag!(top, "mie", "top");
        flag!(bsn_iterations, "bsn", "iterations");
        if let Some(r) = self.sr_scale {
            put("sr", "enable", "true".into());
            put("sr", "scale", r.to_string());
        }
        if let Some(a) = self.alpha {
            put("magnify", "enable", "true".into());
            put("magnify", "alpha", a.to_string());
        }
        flag!(band_lo, "magnify", "band_lo");
        flag!(band_hi, "magnify", "band_hi");
        flag!(plugin_cmd, "magnify", "plugin_cmd");
        if self.float_frames {
            put("output", "float_frames", "true".into());
        }
        for s in &self.set {
            let (lhs, val) = s.split_once('=').with_context(|| format!("--set expects SECTION.KEY=VALUE, got '{s}'"))?;
            let (sec, key) = lhs.split_once('.').with_context(|| format!("--set expects SECTION.KEY=VALUE, got '{s}'"))?;
            put(sec.trim(), key.trim(), val.trim().to_string());
        }
        Ok(())
    }
}

#[derive(Args)]
struct PipelineArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CompareArgs {
    /// One configuration per scene.
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "tfp,bsn1,mie")]
    variants: Vec<Variant>,
    /// Comparison CSV; printed to stdout when absent.
    #[arg(short, long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok((num(lo)?, num(hi)?))
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut ini = load_file(path)?;
    overrides.apply(&mut ini)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = PipelineConfig::from_ini(&ini, base)?;
    Ok(cfg)
}

fn staged<T>(stage: &str, r: spikemm::Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage).into())
}

fn info(path: &Path) -> Result<()> {
    if path.is_dir() {
        let frames = read_sequence(path)?;
        let (h, w) = frames[0].dims();
        println!("frames: {} of {h}x{w}", frames.len());
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("spk") => {
            let s = load_stream(path)?;
            let pixels = (s.height() * s.width() * s.length()) as f64;
            println!("stream: {}x{} pixels, {} steps at {} Hz", s.height(), s.width(), s.length(), s.rate_hz());
            println!("spikes: {} (mean rate {:.4})", s.count_spikes(), s.count_spikes() as f64 / pixels);
        }
        Some("spkw") => {
            let p = checkpoint::load(path)?;
            println!("checkpoint: {} tensors, {} values, seed {}", p.len(), p.num_values(), p.seed);
            if let Ok((depth, channels)) = architecture(&p) {
                println!("bsn: depth {depth}, {channels} base channels");
            }
            for (name, t) in p.entries() {
                println!("  {name} {:?}", t.shape());
            }
        }
        _ => {
            let f = load_frame(path)?;
            let (h, w) = f.dims();
            let (lo, hi) = f.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            println!("frame: {h}x{w}, range [{lo}, {hi}], mean {:.6}", f.mean());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Info { path } => info(&path).map_err(|e| anyhow!("[info] {}: {e}", path.display()))?,
        Command::Simulate(a) => {
            let scene = staged("simulate", SceneSpec::load(&a.scene))?;
            let cfg = SimConfig {
                threshold: a.theta,
                seed: a.seed,
                noise_std: a.noise,
                mode: a.integrator,
            };
            let stream = staged("simulate", simulate(&scene, &cfg))?;
            staged("simulate", save_stream(&stream, &a.out))?;
            eprintln!("wrote {} spikes to {}", stream.count_spikes(), a.out.display());
        }
        Command::Encode(a) => {
            let stream = staged("encode", load_stream(&a.stream))?;
            let times = query_times(stream.length(), a.window, a.stride.unwrap_or(a.window));
            if times.is_empty() {
                bail!("[encode] stream of {} steps is shorter than the window", stream.length());
            }
            let frames: Vec<_> = times
                .iter()
                .map(|&t| {
                    let w = EncodingWindow { center: t, length: a.window };
                    match a.mode {
                        Encoding::Tfp => tfp_encode(&stream, w),
                        Encoding::Isi => normalize_by_max(&isi_to_intensity(&isi_encode(&stream, w))),
                    }
                })
                .collect();
            staged("encode", write_sequence(&a.out, &frames, a.frames.format()))?;
            eprintln!("wrote {} frames to {}", frames.len(), a.out.display());
        }
        Command::TrainBsn(a) => {
            let stream = staged("train-bsn", load_stream(&a.stream))?;
            let cfg = staged("train-bsn", a.bsn.config())?;
            let (kind, window) = match a.which {
                Which::Short => (BsnKind::Short, a.ws),
                Which::Long => (BsnKind::Long, a.wl),
            };
            let report = staged("train-bsn", train_bsn(&stream, kind, window, &cfg))?;
            checkpoint::save(&report.params, &a.out).map_err(|e| Error::from(e).in_stage("train-bsn"))?;
            if let Some(path) = &a.losses {
                let mut csv = String::from("iteration,loss\n");
                for (i, l) in report.losses.iter().enumerate() {
                    csv.push_str(&format!("{i},{l}\n"));
                }
                std::fs::write(path, csv)?;
            }
            let (first, last) = report.loss_ends(50.min(report.losses.len()).max(1));
            eprintln!("loss {first:.6} -> {last:.6}; wrote {}", a.out.display());
        }
        Command::Mie(a) => {
            let stream = staged("mie", load_stream(&a.stream))?;
            let load = |p: &Path| checkpoint::load(p).map_err(|e| Error::from(e).in_stage("mie"));
            let cfg = MieConfig {
                w_s: a.ws,
                w_l: a.wl,
                stride: a.stride.unwrap_or(a.ws),
                k_n: a.kn,
                top_clusters: a.top,
                ..MieConfig::default()
            };
            let out = staged("mie", mie_sequence(&stream, &load(&a.bsn1)?, &load(&a.bsn2)?, &cfg))?;
            staged("mie", write_sequence(&a.out, &out.frames, a.frames.format()))?;
            staged(
                "mie",
                spikemm::frame::write_sequence_with_prefix(&a.out, "mask", &out.masks, FrameFormat::Png).map(drop),
            )?;
            eprintln!("wrote {} frames to {}", out.frames.len(), a.out.display());
        }
        Command::Sr(a) => {
            let frames = staged("sr", read_sequence(&a.frames))?;
            let d = InrConfig::default();
            let inr = InrConfig {
                iterations: a.iters.unwrap_or(d.iterations),
                hidden_dim: a.hidden_dim.unwrap_or(d.hidden_dim),
                omega0: a.omega0.unwrap_or(d.omega0),
                scale0: a.scale0.unwrap_or(d.scale0),
                ..d
            };
            let sr = SrConfig {
                scale: a.scale,
                base_seed: a.seed,
                warm_start: a.warm_start,
            };
            let out = staged("sr", sr_sequence(&frames, &inr, &sr))?;
            staged("sr", write_sequence(&a.out, &out, a.out_frames.format()))?;
            eprintln!("wrote {} frames to {}", out.len(), a.out.display());
        }
        Command::Magnify(a) => {
            let frames = staged("magnify", read_sequence(&a.frames))?;
            let cfg = MagnifyConfig {
                alpha: a.alpha,
                band_lo: a.band.0,
                band_hi: a.band.1,
                frame_rate: a.fps,
            };
            staged("magnify", cfg.validate())?;
            let magnifier: Box<dyn Magnifier> = match a.plugin_cmd {
                Some(command) => Box::new(ExternalCommand { command }),
                None => Box::new(EulerianMagnifier),
            };
            let out = staged("magnify", magnifier.magnify(&frames, &cfg))?;
            staged("magnify", write_sequence(&a.out, &out, a.out_frames.format()))?;
            eprintln!("{}: wrote {} frames to {}", magnifier.name(), out.len(), a.out.display());
        }
        Command::Metrics(a) => {
            let frames = staged("metrics", read_sequence(&a.frames))?;
            let hs = HornSchunck {
                reg: a.reg,
                iterations: a.hs_iterations,
            };
            let report = staged("metrics", evaluate_sequence(&frames, &hs, a.reduce))?;
            if let Some(dir) = &a.flow_images {
                let flows = staged("metrics", sequence_flows(&frames, &hs))?;
                staged("metrics", write_flow_images(dir, &flows))?;
            }
            match &a.out {
                Some(p) => staged("metrics", report.write_csv(p))?,
                None => print!("{}", report.to_csv()),
            }
            eprintln!("sigma {:.6}  sigma_s {:.6}", report.sigma, report.sigma_s);
        }
        Command::Pipeline(a) => {
            let cfg = load_config(&a.config, &a.overrides)?;
            let r = run_pipeline(&cfg)?;
            for s in &r.manifest.stages {
                eprintln!("{:<12} {:>8} ms  {}", s.name, s.wall_ms, if s.cached { "cached" } else { "ran" });
            }
            println!(
                "{}: mu {:.6} sigma {:.6} mu_s {:.6} sigma_s {:.6}",
                cfg.variant, r.metrics.mu, r.metrics.sigma, r.metrics.mu_s, r.metrics.sigma_s
            );
        }
        Command::Compare(a) => {
            let mut all = Vec::new();
            for path in &a.configs {
                let cfg = load_config(path, &a.overrides)?;
                all.extend(expand_variants(&cfg, &a.variants));
            }
            let table = compare_variants(&all)?;
            match &a.table {
                Some(p) => std::fs::write(p, table.to_csv())?,
                None => print!("{}", table.to_csv()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
