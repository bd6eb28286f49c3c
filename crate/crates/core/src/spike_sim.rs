//! Integrate-and-fire spike generation from synthetic intensity scenes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Section;
use crate::error::{bail, Error, Result};
use crate::frame::{load_frame, Frame};
use crate::spike_io::SpikeStream;

#[derive(Clone, Debug, PartialEq)]
pub enum SceneKind {
    Constant {
        intensity: f64,
    },
    /// Vertical bar whose horizontal center follows
    /// `center + amplitude * sin(2 pi f t / rate_hz)`.
    OscillatingBar {
        bar_width: f64,
        center: f64,
        amplitude: f64,
        frequency_hz: f64,
        foreground: f64,
        background: f64,
        /// Width of the linear edge ramp in pixels; 0 is a hard edge that is
        /// only area-antialiased.
        edge_width: f64,
    },
    /// Vertical edge at `start + speed * t`, foreground on its left.
    TranslatingEdge {
        start: f64,
        speed: f64,
        foreground: f64,
        background: f64,
        edge_width: f64,
    },
    /// Frames shown in order, each for `hold` timesteps, cycling.
    ImageSequence {
        frames: Vec<Frame>,
        hold: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub duration: usize,
    pub rate_hz: u32,
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        bail!(Config, "{name} = {v} outside [0,1]");
    }
    Ok(())
}

/// `integral_{-inf}^{s} clamp(u/e + 1/2, 0, 1) du`, the antiderivative of a
/// linear ramp of width `e` centred at 0.
fn ramp_integral(s: f64, e: f64) -> f64 {
    if e <= 0.0 {
        return s.max(0.0);
    }
    if s <= -e / 2.0 {
        0.0
    } else if s < e / 2.0 {
        (s + e / 2.0).powi(2) / (2.0 * e)
    } else {
        s
    }
}

/// Fraction of pixel column `[x, x+1)` lying left of a soft edge at `pos`.
fn left_coverage(x: f64, pos: f64, e: f64) -> f64 {
    ramp_integral(pos - x, e) - ramp_integral(pos - x - 1.0, e)
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.duration == 0 {
            bail!(Config, "scene dimensions must be positive");
        }
        if self.rate_hz == 0 {
            bail!(Config, "rate_hz must be positive");
        }
        match &self.kind {
            SceneKind::Constant { intensity } => in_unit("intensity", *intensity)?,
            SceneKind::OscillatingBar {
                bar_width,
                frequency_hz,
                foreground,
                background,
                edge_width,
                ..
            } => {
                in_unit("foreground", *foreground)?;
                in_unit("background", *background)?;
                if *frequency_hz < 0.0 || *frequency_hz >= self.rate_hz as f64 / 2.0 {
                    bail!(
                        Config,
                        "oscillation frequency {frequency_hz} Hz must be below rate_hz/2 = {}",
                        self.rate_hz as f64 / 2.0
                    );
                }
                if *bar_width <= 0.0 || *edge_width < 0.0 || *edge_width > *bar_width {
                    bail!(Config, "need 0 <= edge_width <= bar_width and bar_width > 0");
                }
            }
            SceneKind::TranslatingEdge {
                foreground,
                background,
                edge_width,
                ..
            } => {
                in_unit("foreground", *foreground)?;
                in_unit("background", *background)?;
                if *edge_width < 0.0 {
                    bail!(Config, "edge_width must be >= 0");
                }
            }
            SceneKind::ImageSequence { frames, hold } => {
                if frames.is_empty() || *hold == 0 {
                    bail!(Config, "image_sequence needs at least one image and hold >= 1");
                }
                for f in frames {
                    if f.dims() != (self.height, self.width) {
                        bail!(Config, "image of {:?} in a {}x{} scene", f.dims(), self.height, self.width);
                    }
                    if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                        bail!(Config, "image intensities outside [0,1]");
                    }
                }
            }
        }
        Ok(())
    }

    /// Bar center in pixel coordinates at timestep `t` (oscillating bar only).
    pub fn bar_center(&self, t: usize) -> Option<f64> {
        match self.kind {
            SceneKind::OscillatingBar {
                center,
                amplitude,
                frequency_hz,
                ..
            } => {
                let phase = 2.0 * std::f64::consts::PI * frequency_hz * t as f64 / self.rate_hz as f64;
                Some(center + amplitude * phase.sin())
            }
            _ => None,
        }
    }

    /// Scene radiance at pixel (y, x) during timestep `t`, in [0,1].
    pub fn intensity_at(&self, y: usize, x: usize, t: usize) -> f64 {
        let v = match &self.kind {
            SceneKind::Constant { intensity } => *intensity,
            SceneKind::OscillatingBar {
                bar_width,
                foreground,
                background,
                edge_width,
                ..
            } => {
                let c = self.bar_center(t).expect("oscillating bar");
                let (l, r) = (c - bar_width / 2.0, c + bar_width / 2.0);
                let xf = x as f64;
                // inside = (right of l) + (left of r) - 1, valid while ramps don't overlap
                let cover = (1.0 - left_coverage(xf, l, *edge_width)) + left_coverage(xf, r, *edge_width) - 1.0;
                background + (foreground - background) * cover.clamp(0.0, 1.0)
            }
            SceneKind::TranslatingEdge {
                start,
                speed,
                foreground,
                background,
                edge_width,
            } => {
                let pos = start + speed * t as f64;
                let cover = left_coverage(x as f64, pos, *edge_width).clamp(0.0, 1.0);
                background + (foreground - background) * cover
            }
            SceneKind::ImageSequence { frames, hold } => {
                frames[(t / hold) % frames.len()].get(y, x) as f64
            }
        };
        v.clamp(0.0, 1.0)
    }

    pub fn render_frame(&self, t: usize) -> Frame {
        Frame::from_fn(self.height, self.width, |y, x| self.intensity_at(y, x, t) as f32)
    }

    /// Parses a scene from config keys. Image paths resolve against the
    /// section's base directory.
    pub fn from_section(s: &Section) -> Result<Self> {
        let kind_name: String = s.require("kind")?;
        let height = s.require("height")?;
        let width: usize = s.require("width")?;
        let duration = s.require("duration")?;
        let rate_hz = s.get_or("rate_hz", 20_000u32)?;
        let fg = s.get_or("foreground", 0.8)?;
        let bg = s.get_or("background", 0.2)?;
        let edge_width = s.get_or("edge_width", 0.0)?;
        let kind = match kind_name.as_str() {
            "constant" => SceneKind::Constant {
                intensity: s.require("intensity")?,
            },
            "oscillating_bar" => SceneKind::OscillatingBar {
                bar_width: s.get_or("bar_width", 4.0)?,
                center: s.get_or("center", width as f64 / 2.0)?,
                amplitude: s.get_or("amplitude", 0.5)?,
                frequency_hz: s.get_or("frequency", 500.0)?,
                foreground: fg,
                background: bg,
                edge_width,
            },
            "translating_edge" => SceneKind::TranslatingEdge {
                start: s.get_or("start", width as f64 / 4.0)?,
                speed: s.get_or("speed", 0.01)?,
                foreground: fg,
                background: bg,
                edge_width,
            },
            "image_sequence" => {
                let list: String = s.require("images")?;
                let frames = list
                    .split(',')
                    .map(|p| load_frame(&s.base_dir().join(p.trim())))
                    .collect::<Result<Vec<_>>>()?;
                SceneKind::ImageSequence {
                    frames,
                    hold: s.get_or("hold", 1usize)?,
                }
            }
            other => bail!(Config, "unknown scene kind '{other}'"),
        };
        let scene = SceneSpec {
            kind,
            height,
            width,
            duration,
            rate_hz,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ini = crate::config::load_file(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let section = if ini.section(Some("scene")).is_some() {
            Section::from_ini(&ini, Some("scene"), base)
        } else {
            Section::from_ini(&ini, None, base)
        };
        Self::from_section(&section)
    }
}

/// One intensity frame per timestep.
pub fn render_scene(scene: &SceneSpec) -> Vec<Frame> {
    (0..scene.duration).map(|t| scene.render_frame(t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IntegratorMode {
    /// Accumulator returns to zero after each spike.
    #[default]
    Reset,
    /// The threshold is subtracted and the remainder carried forward.
    Residual,
}

impl std::str::FromStr for IntegratorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reset" => Ok(Self::Reset),
            "residual" => Ok(Self::Residual),
            other => Err(Error::Config(format!("integrator must be reset|residual, got '{other}'"))),
        }
    }
}

impl std::fmt::Display for IntegratorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reset => "reset",
            Self::Residual => "residual",
        })
    }
}

/// Relative slack on the threshold comparison so that sums such as ten
/// increments of 0.1 reach a threshold of 1.
const FIRE_SLACK: f64 = 1e-9;

/// Per-pixel integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrator {
    pub accumulator: f64,
    pub threshold: f64,
    pub mode: IntegratorMode,
}

impl Integrator {
    pub fn new(threshold: f64, mode: IntegratorMode) -> Self {
        Self {
            accumulator: 0.0,
            threshold,
            mode,
        }
    }

    /// Integrates one step of light and reports whether a spike fires.
    pub fn step(&mut self, light: f64) -> bool {
        self.accumulator = (self.accumulator + light).max(0.0);
        if self.accumulator < self.threshold * (1.0 - FIRE_SLACK) {
            return false;
        }
        self.accumulator = match self.mode {
            IntegratorMode::Reset => 0.0,
            // at most one spike per clock; any further full thresholds are dropped
            IntegratorMode::Residual => (self.accumulator - self.threshold).max(0.0) % self.threshold,
        };
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub threshold: f64,
    pub seed: u64,
    pub noise_std: f64,
    pub mode: IntegratorMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            seed: 0,
            noise_std: 0.0,
            mode: IntegratorMode::Reset,
        }
    }
}

/// Runs every pixel's integrator over the scene. Each pixel draws its noise
/// from its own ChaCha stream selected by the pixel index, so results do not
/// depend on evaluation order.
pub fn simulate(scene: &SceneSpec, cfg: &SimConfig) -> Result<SpikeStream> {
    scene.validate()?;
    if cfg.threshold <= 0.0 || !cfg.threshold.is_finite() {
        bail!(Config, "threshold must be positive, got {}", cfg.threshold);
    }
    if cfg.noise_std < 0.0 || !cfg.noise_std.is_finite() {
        bail!(Config, "noise_std must be >= 0, got {}", cfg.noise_std);
    }
    let (h, w) = (scene.height, scene.width);
    let mut stream = SpikeStream::new(h, w, scene.duration, scene.rate_hz)?;
    let mut integrators = vec![Integrator::new(cfg.threshold, cfg.mode); h * w];
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rngs: Vec<ChaCha8Rng> = if cfg.noise_std > 0.0 {
        (0..h * w)
            .map(|p| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(p as u64);
                r
            })
            .collect()
    } else {
        Vec::new()
    };
    for t in 0..scene.duration {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let mut light = scene.intensity_at(y, x, t);
                if let Some(rng) = rngs.get_mut(p) {
                    light += noise.sample(rng);
                }
                if integrators[p].step(light) {
                    stream.set_bit(p, t, true);
                }
            }
        }
    }
    Ok(stream)
}
