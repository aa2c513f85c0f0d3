//! Run configuration: every tunable with its default, loadable from flat
//! `key = value` text and overridable key by key.
//!
//! ```
//! use semfuse::config::RunConfig;
//!
//! let mut config = RunConfig::parse("batch_size = 3\n# comment\npacing = fast\n").unwrap();
//! assert_eq!(config.batch_size, 3);
//! assert_eq!(config.pacing, 30);
//! config.set("near-skip-m", "0").unwrap();
//! assert!(RunConfig::parse("colour = blue").is_err());
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::components::{ThresholdTable, DEFAULT_BATCH_SIZE};
use crate::fusion::{FusionConfig, DEFAULT_EPSILON_FLOOR, DEFAULT_NEAR_SKIP_DISTANCE};
use crate::protocol::{DEFAULT_PORT, DEFAULT_QUEUE_BOUND};
use crate::rasterizer::DEFAULT_VISIBILITY_TOLERANCE;
use crate::scenegen::{Intrinsics, TrajectoryStyle, DEFAULT_DENSITY, DEFAULT_HEIGHT, DEFAULT_WIDTH};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("reading config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    pub batch_size: u32,
    pub thresholds: ThresholdTable,
    pub visibility_tolerance: f64,
    pub near_skip_m: f64,
    pub epsilon_floor: f64,
    pub host: String,
    pub port: u16,
    pub seed: u64,
    /// `None` leaves the link unthrottled.
    pub throttle_bytes_per_sec: Option<u64>,
    /// Device frames between photos; 0 sends as fast as possible.
    pub pacing: u32,
    pub device_fps: f64,
    pub frames: usize,
    pub chairs: usize,
    pub lamps: usize,
    pub density: f64,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub noise_flip: f64,
    pub noise_concentration: f64,
    pub selection_step: Option<u64>,
    pub queue_bound: usize,
    pub actuation_hook: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            fov_y_deg: 40.0,
            batch_size: DEFAULT_BATCH_SIZE,
            thresholds: ThresholdTable::default(),
            visibility_tolerance: DEFAULT_VISIBILITY_TOLERANCE,
            near_skip_m: DEFAULT_NEAR_SKIP_DISTANCE,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            seed: 0,
            throttle_bytes_per_sec: None,
            pacing: 0,
            device_fps: 60.0,
            frames: 24,
            chairs: 2,
            lamps: 1,
            density: DEFAULT_DENSITY,
            orbit_radius: 1.1,
            orbit_height: 1.6,
            noise_flip: 0.1,
            noise_concentration: 4.0,
            selection_step: Some(9),
            queue_bound: DEFAULT_QUEUE_BOUND,
            actuation_hook: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "width",
    "height",
    "fov_y_deg",
    "batch_size",
    "thresholds",
    "visibility_tolerance",
    "near_skip_m",
    "epsilon_floor",
    "host",
    "port",
    "seed",
    "throttle_bytes_per_sec",
    "pacing",
    "device_fps",
    "frames",
    "chairs",
    "lamps",
    "density",
    "orbit_radius",
    "orbit_height",
    "noise_flip",
    "noise_concentration",
    "selection_step",
    "queue_bound",
    "actuation_hook",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn in_range<T: PartialOrd + Copy + std::fmt::Display>(key: &str, value: T, lo: T, hi: T) -> Result<T, ConfigError> {
    if value >= lo && value <= hi {
        Ok(value)
    } else {
        Err(ConfigError::BadValue {
            key: key.into(),
            value: value.to_string(),
            reason: format!("must be within [{lo}, {hi}]"),
        })
    }
}

/// `fast`, `medium` and `slow` name the 30/60/100 frame rows of the
/// device throughput study.
pub fn parse_pacing(value: &str) -> Result<u32, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "fast" => Ok(30),
        "medium" => Ok(60),
        "slow" => Ok(100),
        v => in_range("pacing", parse_num("pacing", v)?, 0, 100_000),
    }
}

fn optional(value: &str) -> Option<&str> {
    match value.to_ascii_lowercase().as_str() {
        "" | "none" | "off" => None,
        _ => Some(value),
    }
}

impl RunConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; keys may use `-` or `_`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Sets one key, validating its range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_").to_ascii_lowercase();
        let k = key.as_str();
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.clone(),
            value: value.into(),
            reason: reason.into(),
        };
        match k {
            "width" => self.width = in_range(k, parse_num(k, value)?, 1, 16384)?,
            "height" => self.height = in_range(k, parse_num(k, value)?, 1, 16384)?,
            "fov_y_deg" => self.fov_y_deg = in_range(k, parse_num(k, value)?, 1.0, 179.0)?,
            "batch_size" => self.batch_size = in_range(k, parse_num(k, value)?, 1, 1_000_000)?,
            "thresholds" => {
                self.thresholds = value
                    .parse()
                    .map_err(|e: crate::components::ComponentError| bad(&e.to_string()))?
            }
            "visibility_tolerance" => self.visibility_tolerance = in_range(k, parse_num(k, value)?, 0.0, 10.0)?,
            "near_skip_m" => self.near_skip_m = in_range(k, parse_num(k, value)?, 0.0, 1000.0)?,
            "epsilon_floor" => self.epsilon_floor = in_range(k, parse_num(k, value)?, 0.0, 0.1)?,
            "host" => {
                if value.is_empty() {
                    return Err(bad("empty host"));
                }
                self.host = value.into();
            }
            "port" => self.port = parse_num(k, value)?,
            "seed" => self.seed = parse_num(k, value)?,
            "throttle_bytes_per_sec" => {
                self.throttle_bytes_per_sec = match optional(value) {
                    None => None,
                    Some(v) => match parse_num::<u64>(k, v)? {
                        0 => None,
                        n => Some(n),
                    },
                }
            }
            "pacing" => self.pacing = parse_pacing(value)?,
            "device_fps" => self.device_fps = in_range(k, parse_num(k, value)?, 1.0, 10_000.0)?,
            "frames" => self.frames = in_range(k, parse_num(k, value)?, 1, 1_000_000)?,
            "chairs" => self.chairs = in_range(k, parse_num(k, value)?, 0, 8)?,
            "lamps" => self.lamps = in_range(k, parse_num(k, value)?, 0, 8)?,
            "density" => self.density = in_range(k, parse_num(k, value)?, 1.0, 100_000.0)?,
            "orbit_radius" => self.orbit_radius = in_range(k, parse_num(k, value)?, 0.01, 100.0)?,
            "orbit_height" => self.orbit_height = in_range(k, parse_num(k, value)?, -100.0, 100.0)?,
            "noise_flip" => self.noise_flip = in_range(k, parse_num(k, value)?, 0.0, 1.0)?,
            "noise_concentration" => {
                let c: f64 = parse_num(k, value)?;
                if c.is_nan() || c <= 0.0 {
                    return Err(bad("must be positive (inf for one-hot)"));
                }
                self.noise_concentration = c;
            }
            "selection_step" => self.selection_step = optional(value).map(|v| parse_num(k, v)).transpose()?,
            "queue_bound" => self.queue_bound = in_range(k, parse_num(k, value)?, 1, 1_000_000)?,
            "actuation_hook" => self.actuation_hook = optional(value).map(str::to_string),
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            visibility_tolerance: self.visibility_tolerance,
            near_skip_distance: self.near_skip_m,
            epsilon_floor: self.epsilon_floor,
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fov_y: self.fov_y_deg.to_radians(),
            ..Intrinsics::with_size(self.width, self.height)
        }
    }

    pub fn orbit(&self) -> TrajectoryStyle {
        TrajectoryStyle::Orbit {
            radius: self.orbit_radius,
            height: self.orbit_height,
        }
    }

    /// Text that [`RunConfig::parse`] reads back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let entries: Vec<(&str, String)> = vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("fov_y_deg", self.fov_y_deg.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("thresholds", self.thresholds.to_string()),
            ("visibility_tolerance", self.visibility_tolerance.to_string()),
            ("near_skip_m", self.near_skip_m.to_string()),
            ("epsilon_floor", self.epsilon_floor.to_string()),
            ("host", self.host.clone()),
            ("port", self.port.to_string()),
            ("seed", self.seed.to_string()),
            (
                "throttle_bytes_per_sec",
                opt(self.throttle_bytes_per_sec.map(|v| v.to_string())),
            ),
            ("pacing", self.pacing.to_string()),
            ("device_fps", self.device_fps.to_string()),
            ("frames", self.frames.to_string()),
            ("chairs", self.chairs.to_string()),
            ("lamps", self.lamps.to_string()),
            ("density", self.density.to_string()),
            ("orbit_radius", self.orbit_radius.to_string()),
            ("orbit_height", self.orbit_height.to_string()),
            ("noise_flip", self.noise_flip.to_string()),
            ("noise_concentration", self.noise_concentration.to_string()),
            ("selection_step", opt(self.selection_step.map(|v| v.to_string()))),
            ("queue_bound", self.queue_bound.to_string()),
            ("actuation_hook", opt(self.actuation_hook.clone())),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
