//! End-to-end runs: simulate, train, reconstruct, upsample, magnify and
//! measure, with every stage's outputs cached under a content hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ini::Ini;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsn::{infer_bsn, train_bsn1, train_bsn2, BsnConfig};
use crate::config::{load_file, Section};
use crate::encoding::{isi_encode, isi_to_intensity, normalize_by_max, tfp_encode, EncodingWindow};
use crate::error::{bail, Error, Result};
use crate::frame::{read_sequence, write_sequence, write_sequence_with_prefix, Frame, FrameFormat};
use crate::inr_sr::{sr_sequence, InrConfig, SrConfig};
use crate::magnify::{EulerianMagnifier, ExternalCommand, MagnifyConfig, Magnifier};
use crate::metrics::{sequence_flows, report_from_flows, write_flow_images, HornSchunck, MetricReport, Reduce};
use crate::mie::{mie_sequence, query_times, MieConfig};
use crate::spike_io::{load_stream, save_stream, SpikeStream};
use crate::spike_sim::{simulate, SceneSpec, SimConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Frame source of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Short-window spike rate.
    Tfp,
    /// Short-window inverse inter-spike interval.
    Isi,
    Bsn1,
    Bsn2,
    Mie,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Tfp, Variant::Isi, Variant::Bsn1, Variant::Bsn2, Variant::Mie];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tfp => "tfp",
            Self::Isi => "isi",
            Self::Bsn1 => "bsn1",
            Self::Bsn2 => "bsn2",
            Self::Mie => "mie",
        }
    }

    fn needs_bsn1(self) -> bool {
        matches!(self, Self::Bsn1 | Self::Mie)
    }

    fn needs_bsn2(self) -> bool {
        matches!(self, Self::Bsn2 | Self::Mie)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("variant must be one of tfp|isi|bsn1|bsn2|mie, got '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MagnifyStage {
    pub config: MagnifyConfig,
    /// Shell command of an external magnifier; the built-in Eulerian one
    /// is used when absent.
    pub plugin_cmd: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Row label in comparison tables.
    pub name: String,
    pub scene: SceneSpec,
    pub sim: SimConfig,
    pub bsn: BsnConfig,
    pub mie: MieConfig,
    pub variant: Variant,
    pub sr: Option<(InrConfig, SrConfig)>,
    pub magnify: Option<MagnifyStage>,
    pub hs: HornSchunck,
    pub reduce: Reduce,
    pub flow_images: bool,
    pub out_dir: PathBuf,
    /// Export frames as 32-bit SPKF instead of 8-bit PNG.
    pub float_frames: bool,
    /// Defaults to `SPK_CACHE_DIR`, else `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

fn section(ini: &Ini, name: &str, base: &Path) -> Section {
    Section::from_ini(ini, Some(name), base)
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let ini = load_file(path)?;
        Self::from_ini(&ini, path.parent().unwrap_or(Path::new(".")))
    }

    /// Reads the `[pipeline]`, `[scene]`, `[simulate]`, `[encoding]`,
    /// `[bsn]`, `[mie]`, `[sr]`, `[magnify]`, `[metrics]` and `[output]`
    /// sections. Relative paths resolve against `base`.
    pub fn from_ini(ini: &Ini, base: &Path) -> Result<Self> {
        let p = section(ini, "pipeline", base);
        let scene = match p.path("scene") {
            Some(path) => SceneSpec::load(&path)?,
            None if ini.section(Some("scene")).is_some() => SceneSpec::from_section(&section(ini, "scene", base))?,
            None => bail!(Config, "[pipeline] needs 'scene = <file>' or an inline [scene] section"),
        };
        let name = match p.raw("name") {
            Some(n) => n.to_string(),
            None => p
                .path("scene")
                .and_then(|s| s.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "scene".to_string()),
        };
        let variant = p.get_or("variant", Variant::Mie)?;

        let s = section(ini, "simulate", base);
        let sim = SimConfig {
            threshold: s.get_or("theta", 1.0)?,
            seed: s.get_or("seed", 0u64)?,
            noise_std: s.get_or("noise", 0.0)?,
            mode: s.get_or("integrator", Default::default())?,
        };

        let e = section(ini, "encoding", base);
        let w_s = e.get_or("ws", crate::encoding::DEFAULT_SHORT_WINDOW)?;
        let w_l = e.get_or("wl", crate::encoding::DEFAULT_LONG_WINDOW)?;
        let stride = e.get_or("stride", w_s)?;

        let b = section(ini, "bsn", base);
        let preset = if b.get_or("large", false)? { BsnConfig::large() } else { BsnConfig::default() };
        let bsn = BsnConfig {
            depth: b.get_or("depth", preset.depth)?,
            base_channels: b.get_or("channels", preset.base_channels)?,
            shift_radius: b.get_or("shift_radius", preset.shift_radius)?,
            iterations: b.get_or("iterations", preset.iterations)?,
            lr: b.get_or("lr", preset.lr)?,
            crop: b.get_or("crop", preset.crop)?,
            batch: b.get_or("batch", preset.batch)?,
            seed: b.get_or("seed", preset.seed)?,
        };
        bsn.validate()?;

        let m = section(ini, "mie", base);
        let md = MieConfig::default();
        let mie = MieConfig {
            w_s,
            w_l,
            stride,
            k_n: m.get_or("kn", md.k_n)?,
            top_clusters: m.get_or("top", md.top_clusters)?,
            whole_frame_fit: m.get_or("whole_frame_fit", md.whole_frame_fit)?,
            motion_floor: m.get_or("motion_floor", md.motion_floor)?,
            shift_radius: bsn.shift_radius,
        };
        if w_s < 2 || stride == 0 || w_l % w_s != 0 {
            bail!(Config, "need ws >= 2, stride >= 1 and wl a multiple of ws (ws={w_s}, wl={w_l})");
        }

        let r = section(ini, "sr", base);
        let sr = if r.get_or("enable", false)? {
            let d = InrConfig::default();
            let inr = InrConfig {
                hidden_layers: r.get_or("hidden_layers", d.hidden_layers)?,
                hidden_dim: r.get_or("hidden_dim", d.hidden_dim)?,
                omega0: r.get_or("omega0", d.omega0)?,
                scale0: r.get_or("scale0", d.scale0)?,
                iterations: r.get_or("iterations", d.iterations)?,
                lr: r.get_or("lr", d.lr)?,
            };
            inr.validate()?;
            let srd = SrConfig::default();
            let src = SrConfig {
                scale: r.get_or("scale", srd.scale)?,
                base_seed: r.get_or("seed", srd.base_seed)?,
                warm_start: r.get_or("warm_start", srd.warm_start)?,
            };
            Some((inr, src))
        } else {
            None
        };

        let g = section(ini, "magnify", base);
        let magnify = if g.get_or("enable", false)? {
            let config = MagnifyConfig {
                alpha: g.get_or("alpha", 10.0)?,
                band_lo: g.require("band_lo")?,
                band_hi: g.require("band_hi")?,
                frame_rate: g.get_or("fps", scene.rate_hz as f64 / stride as f64)?,
            };
            config.validate()?;
            Some(MagnifyStage {
                config,
                plugin_cmd: g.raw("plugin_cmd").map(str::to_string),
            })
        } else {
            None
        };

        let t = section(ini, "metrics", base);
        let hs = HornSchunck {
            reg: t.get_or("reg", HornSchunck::default().reg)?,
            iterations: t.get_or("iterations", HornSchunck::default().iterations)?,
        };
        let reduce = t.get_or("reduce", Reduce::Mean)?;
        let flow_images = t.get_or("flow_images", false)?;

        let o = section(ini, "output", base);
        let out_dir = o.path("dir").unwrap_or_else(|| base.join("out"));
        let float_frames = o.get_or("float_frames", false)?;
        let cache_dir = o.path("cache");

        Ok(Self {
            name,
            scene,
            sim,
            bsn,
            mie,
            variant,
            sr,
            magnify,
            hs,
            reduce,
            flow_images,
            out_dir,
            float_frames,
            cache_dir,
        })
    }

    fn cache_root(&self) -> PathBuf {
        if let Some(c) = &self.cache_dir {
            return c.clone();
        }
        match std::env::var_os("SPK_CACHE_DIR") {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.out_dir.join("cache"),
        }
    }

    /// Everything that determines the outputs, excluding output locations.
    pub fn canonical(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{:?}|{:?}|{:?}|{}|{}",
            self.scene, self.sim, self.bsn, self.mie, self.variant, self.sr, self.magnify, self.hs, self.reduce, self.flow_images
        )
    }

    /// Canonical form with the variant left out, for grouping comparisons.
    fn canonical_without_variant(&self) -> String {
        Self { variant: Variant::Tfp, ..self.clone() }.canonical()
    }

    fn frame_format(&self) -> FrameFormat {
        if self.float_frames {
            FrameFormat::Float
        } else {
            FrameFormat::Png
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub cached: bool,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub variant: Variant,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    /// Stage-name to output-hash map.
    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        self.stages.iter().map(|s| (s.name.clone(), s.output.clone())).collect()
    }

    pub fn executed(&self) -> usize {
        self.stages.iter().filter(|s| !s.cached).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mu: f64,
    pub sigma: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub manifest: RunManifest,
    pub metrics: MetricSummary,
    pub frames_dir: PathBuf,
}

fn sha_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Hash over the sorted file names and contents of a directory tree.
fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn copy_dir(src: &Path, dst: &Path) -> Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let path = entry?.path();
        let target = dst.join(path.file_name().expect("named entry"));
        if path.is_dir() {
            copy_dir(&path, &target)?;
        } else {
            fs::copy(&path, &target)?;
        }
    }
    Ok(())
}

struct Runner {
    cache: PathBuf,
    records: Vec<StageRecord>,
}

struct StageOutput {
    dir: PathBuf,
    hash: String,
}

impl Runner {
    /// Returns the cached outputs for this (stage, config, inputs) key, or
    /// runs `produce` into a fresh directory and publishes it under the key.
    fn stage(
        &mut self,
        name: &str,
        config: &str,
        inputs: &[&str],
        produce: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageOutput> {
        let mut key_src = format!("{TOOL_VERSION}\0{name}\0{config}");
        for i in inputs {
            key_src.push('\0');
            key_src.push_str(i);
        }
        let key = sha_hex(key_src.as_bytes());
        let dir = self.cache.join(name).join(&key);
        let start = Instant::now();
        let cached = dir.join(".done").is_file();
        if !cached {
            let parent = dir.parent().expect("stage dir has a parent");
            fs::create_dir_all(parent).map_err(|e| Error::from(e).in_stage(name))?;
            let tmp = tempfile::tempdir_in(parent).map_err(|e| Error::from(e).in_stage(name))?;
            produce(tmp.path()).map_err(|e| e.in_stage(name))?;
            let tmp = tmp.keep();
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::from(e).in_stage(name))?;
            }
            fs::rename(&tmp, &dir).map_err(|e| Error::from(e).in_stage(name))?;
        }
        let hash = if cached {
            fs::read_to_string(dir.join(".done")).map_err(|e| Error::from(e).in_stage(name))?
        } else {
            let h = hash_dir(&dir).map_err(|e| e.in_stage(name))?;
            fs::write(dir.join(".done"), &h).map_err(|e| Error::from(e).in_stage(name))?;
            h
        };
        self.records.push(StageRecord {
            name: name.to_string(),
            key,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: hash.clone(),
            cached,
            wall_ms: start.elapsed().as_millis(),
        });
        Ok(StageOutput { dir, hash })
    }
}

fn write_float_frames(dir: &Path, prefix: &str, frames: &[Frame]) -> Result<()> {
    write_sequence_with_prefix(dir, prefix, frames, FrameFormat::Float)?;
    Ok(())
}

fn read_prefixed(dir: &Path, prefix: &str) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("{prefix}_")) && n.ends_with(".spkf"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| crate::frame::load_frame(p)).collect()
}

/// Frames of `variant` at the shared query times `w_l/2 + k*stride`.
pub fn reconstruct(
    stream: &SpikeStream,
    variant: Variant,
    cfg: &MieConfig,
    bsn1: Option<&diffkernel::NetworkParams>,
    bsn2: Option<&diffkernel::NetworkParams>,
) -> Result<(Vec<Frame>, Vec<Frame>)> {
    let times = query_times(stream.length(), cfg.w_l, cfg.stride);
    if times.is_empty() {
        bail!(Config, "stream of {} steps is shorter than wl = {}", stream.length(), cfg.w_l);
    }
    let short = |t: usize| EncodingWindow { center: t, length: cfg.w_s };
    let need = |p: Option<&diffkernel::NetworkParams>, n: &str| -> Result<diffkernel::NetworkParams> {
        p.cloned().ok_or_else(|| Error::Config(format!("variant {variant} needs trained {n} parameters")))
    };
    let frames = match variant {
        Variant::Tfp => times.iter().map(|&t| tfp_encode(stream, short(t))).collect(),
        Variant::Isi => times.iter().map(|&t| normalize_by_max(&isi_to_intensity(&isi_encode(stream, short(t))))).collect(),
        Variant::Bsn1 => {
            let p = need(bsn1, "bsn1")?;
            times.iter().map(|&t| infer_bsn(&p, stream, t, cfg.shift_radius)).collect::<Result<_>>()?
        }
        Variant::Bsn2 => {
            let p = need(bsn2, "bsn2")?;
            times.iter().map(|&t| infer_bsn(&p, stream, t, cfg.shift_radius)).collect::<Result<_>>()?
        }
        Variant::Mie => {
            let out = mie_sequence(stream, &need(bsn1, "bsn1")?, &need(bsn2, "bsn2")?, cfg)?;
            return Ok((out.frames, out.masks));
        }
    };
    Ok((frames, Vec::new()))
}

/// Runs every stage the configuration enables, reusing cached outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut runner = Runner {
        cache: cfg.cache_root(),
        records: Vec::new(),
    };

    let sim = runner.stage("simulate", &format!("{:?}|{:?}", cfg.scene, cfg.sim), &[], |dir| {
        save_stream(&simulate(&cfg.scene, &cfg.sim)?, dir.join("stream.spk"))
    })?;
    let stream_path = sim.dir.join("stream.spk");
    let stream = load_stream(&stream_path).map_err(|e| e.in_stage("simulate"))?;
    fs::copy(&stream_path, cfg.out_dir.join("stream.spk"))?;

    let train = |runner: &mut Runner, which: u8, window: usize| -> Result<(diffkernel::NetworkParams, String)> {
        let name = format!("train_bsn{which}");
        let out = runner.stage(&name, &format!("{:?}|{window}", cfg.bsn), &[&sim.hash], |dir| {
            let report = if which == 1 {
                train_bsn1(&stream, &cfg.bsn, window)?
            } else {
                let c = BsnConfig { seed: cfg.bsn.seed.wrapping_add(1), ..cfg.bsn };
                train_bsn2(&stream, &c, window)?
            };
            diffkernel::checkpoint::save(&report.params, dir.join("params.spkw"))?;
            let mut log = String::from("iteration,loss\n");
            for (i, l) in report.losses.iter().enumerate() {
                let _ = writeln!(log, "{i},{l}");
            }
            fs::write(dir.join("losses.csv"), log)?;
            Ok(())
        })?;
        let params = diffkernel::checkpoint::load(out.dir.join("params.spkw")).map_err(|e| Error::from(e).in_stage(&name))?;
        fs::copy(out.dir.join("params.spkw"), cfg.out_dir.join(format!("bsn{which}.spkw")))?;
        Ok((params, out.hash))
    };
    let bsn1 = if cfg.variant.needs_bsn1() { Some(train(&mut runner, 1, cfg.mie.w_s)?) } else { None };
    let bsn2 = if cfg.variant.needs_bsn2() { Some(train(&mut runner, 2, cfg.mie.w_l)?) } else { None };

    let mut inputs = vec![sim.hash.as_str()];
    inputs.extend(bsn1.iter().map(|b| b.1.as_str()));
    inputs.extend(bsn2.iter().map(|b| b.1.as_str()));
    let recon = runner.stage("reconstruct", &format!("{}|{:?}", cfg.variant, cfg.mie), &inputs, |dir| {
        let (frames, masks) = reconstruct(&stream, cfg.variant, &cfg.mie, bsn1.as_ref().map(|b| &b.0), bsn2.as_ref().map(|b| &b.0))?;
        write_float_frames(dir, "frame", &frames)?;
        if !masks.is_empty() {
            write_float_frames(dir, "mask", &masks)?;
        }
        Ok(())
    })?;
    let frames = read_prefixed(&recon.dir, "frame").map_err(|e| e.in_stage("reconstruct"))?;
    let frames_dir = cfg.out_dir.join("frames");
    export(&frames_dir, "frame", &frames, cfg.frame_format())?;
    let masks = read_prefixed(&recon.dir, "mask")?;
    if !masks.is_empty() {
        export(&frames_dir, "mask", &masks, FrameFormat::Png)?;
    }

    let mut current = frames.clone();
    let mut current_hash = recon.hash.clone();
    if let Some((inr, sr)) = &cfg.sr {
        let out = runner.stage("sr", &format!("{inr:?}|{sr:?}"), &[&current_hash], |dir| {
            write_float_frames(dir, "frame", &sr_sequence(&current, inr, sr)?)
        })?;
        current = read_prefixed(&out.dir, "frame")?;
        current_hash = out.hash;
        export(&cfg.out_dir.join("frames_sr"), "frame", &current, cfg.frame_format())?;
    }
    if let Some(m) = &cfg.magnify {
        let out = runner.stage("magnify", &format!("{m:?}"), &[&current_hash], |dir| {
            let magnified = match &m.plugin_cmd {
                Some(cmd) => ExternalCommand { command: cmd.clone() }.magnify(&current, &m.config)?,
                None => EulerianMagnifier.magnify(&current, &m.config)?,
            };
            write_float_frames(dir, "frame", &magnified)
        })?;
        let magnified = read_prefixed(&out.dir, "frame")?;
        export(&cfg.out_dir.join("frames_mag"), "frame", &magnified, cfg.frame_format())?;
    }

    let metrics = runner.stage(
        "metrics",
        &format!("{:?}|{}|{}", cfg.hs, cfg.reduce, cfg.flow_images),
        &[&recon.hash],
        |dir| {
            let flows = sequence_flows(&frames, &cfg.hs)?;
            let report: MetricReport = report_from_flows(&flows, cfg.reduce, &cfg.hs.to_string())?;
            report.write_csv(&dir.join("metrics.csv"))?;
            if cfg.flow_images {
                write_flow_images(&dir.join("flow"), &flows)?;
            }
            Ok(())
        },
    )?;
    let csv = fs::read_to_string(metrics.dir.join("metrics.csv"))?;
    fs::write(cfg.out_dir.join("metrics.csv"), &csv)?;
    if cfg.flow_images {
        copy_dir(&metrics.dir.join("flow"), &cfg.out_dir.join("flow"))?;
    }
    let (mu, sigma, mu_s, sigma_s) = MetricReport::summary_from_csv(&csv)?;

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: sha_hex(cfg.canonical().as_bytes()),
        variant: cfg.variant,
        stages: runner.records,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(cfg.out_dir.join("manifest.json"), json)?;
    Ok(PipelineResult {
        manifest,
        metrics: MetricSummary { mu, sigma, mu_s, sigma_s },
        frames_dir,
    })
}

fn export(dir: &Path, prefix: &str, frames: &[Frame], format: FrameFormat) -> Result<()> {
    if dir.exists() && prefix == "frame" {
        // stale frames from an earlier, longer run would be read back later
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_")) {
                fs::remove_file(p)?;
            }
        }
    }
    fs::create_dir_all(dir)?;
    if prefix == "frame" {
        write_sequence(dir, frames, format)?;
    } else {
        write_sequence_with_prefix(dir, prefix, frames, format)?;
    }
    Ok(())
}

/// Scenes by variants table of `(sigma, sigma_S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub variants: Vec<Variant>,
    /// `(scene name, one (sigma, sigma_S) per variant)`.
    pub rows: Vec<(String, Vec<(f64, f64)>)>,
}

impl ComparisonTable {
    /// Column means over scenes.
    pub fn average(&self) -> Vec<(f64, f64)> {
        let n = self.rows.len() as f64;
        (0..self.variants.len())
            .map(|j| {
                let s: f64 = self.rows.iter().map(|r| r.1[j].0).sum();
                let ss: f64 = self.rows.iter().map(|r| r.1[j].1).sum();
                (s / n, ss / n)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene");
        for v in &self.variants {
            let _ = write!(s, ",{v}_sigma,{v}_sigma_s");
        }
        s.push('\n');
        let line = |s: &mut String, name: &str, cells: &[(f64, f64)]| {
            s.push_str(name);
            for (a, b) in cells {
                let _ = write!(s, ",{a},{b}");
            }
            s.push('\n');
        };
        for (name, cells) in &self.rows {
            line(&mut s, name, cells);
        }
        line(&mut s, "Average", &self.average());
        s
    }
}

/// Runs every configuration and tabulates the metrics. Configurations of
/// one scene must differ only in their variant, and every scene must be run
/// with the same set of variants.
pub fn compare_variants(configs: &[PipelineConfig]) -> Result<ComparisonTable> {
    if configs.is_empty() {
        bail!(Config, "nothing to compare");
    }
    let mut scenes: Vec<(String, String, BTreeMap<Variant, (f64, f64)>)> = Vec::new();
    let mut plan = Vec::new();
    for cfg in configs {
        let key = cfg.canonical_without_variant();
        let idx = match scenes.iter().position(|s| s.0 == cfg.name) {
            Some(i) => {
                if scenes[i].1 != key {
                    bail!(Config, "configurations for scene '{}' differ in more than the variant", cfg.name);
                }
                i
            }
            None => {
                scenes.push((cfg.name.clone(), key, BTreeMap::new()));
                scenes.len() - 1
            }
        };
        if plan.iter().any(|&(i, v)| i == idx && v == cfg.variant) {
            bail!(Config, "scene '{}' lists variant {} twice", cfg.name, cfg.variant);
        }
        plan.push((idx, cfg.variant));
    }
    let variants: Vec<Variant> = {
        let mut v: Vec<Variant> = plan.iter().filter(|p| p.0 == 0).map(|p| p.1).collect();
        v.sort();
        v
    };
    for i in 0..scenes.len() {
        let mut vs: Vec<Variant> = plan.iter().filter(|p| p.0 == i).map(|p| p.1).collect();
        vs.sort();
        if vs != variants {
            bail!(Config, "scene '{}' was run with variants {vs:?}, others with {variants:?}", scenes[i].0);
        }
    }
    for (cfg, &(idx, v)) in configs.iter().zip(&plan) {
        let r = run_pipeline(cfg)?;
        scenes[idx].2.insert(v, (r.metrics.sigma, r.metrics.sigma_s));
    }
    let rows = scenes
        .into_iter()
        .map(|(name, _, cells)| (name, variants.iter().map(|v| cells[v]).collect()))
        .collect();
    Ok(ComparisonTable { variants, rows })
}

/// One configuration per variant, each writing to `<out_dir>/<variant>`
/// and sharing one cache.
pub fn expand_variants(cfg: &PipelineConfig, variants: &[Variant]) -> Vec<PipelineConfig> {
    let cache = cfg.cache_root();
    variants
        .iter()
        .map(|&v| PipelineConfig {
            variant: v,
            out_dir: cfg.out_dir.join(v.name()),
            cache_dir: Some(cache.clone()),
            ..cfg.clone()
        })
        .collect()
}

/// Reads frames from a directory as written by any stage.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    read_sequence(dir)
}
