//! Flat `key = value` configuration.
//!
//! Keys are `<section>.<field>` for the sections `vad`, `engine`, `detect`,
//! `mixer` and `eval`. Blank lines and `#` comments are ignored. Later
//! settings override earlier ones; anything not set keeps its default.

use std::path::Path;

use crate::cues::DetectorParams;
use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_FRAME, DEFAULT_MATCH_WINDOW};
use crate::mixer::MixerParams;
use crate::vad::VadParams;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "FLOORSIGHT_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub vad: VadParams,
    pub engine: EngineParams,
    pub detect: DetectorParams,
    pub mixer: MixerParams,
    pub frame: f64,
    pub match_window: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            vad: VadParams::default(),
            engine: EngineParams::default(),
            detect: DetectorParams::default(),
            mixer: MixerParams::default(),
            frame: DEFAULT_FRAME,
            match_window: DEFAULT_MATCH_WINDOW,
        }
    }
}

impl Config {
    /// Defaults, then the file named by [`CONFIG_ENV`] if set, then `extra`.
    pub fn load(extra: Option<&Path>) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            c.apply_file(Path::new(&p))?;
        }
        if let Some(p) = extra {
            c.apply_file(p)?;
        }
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.vad.validate()?;
        self.engine.validate()?;
        self.detect.validate()?;
        self.mixer.validate()?;
        for (name, v) in [("eval.frame", self.frame), ("eval.match_window", self.match_window)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let num = || value.parse::<f64>().map_err(|_| format!("{key}: {value:?} is not a number"));
        let slot: &mut f64 = match key {
            "vad.frame_window" => &mut self.vad.frame_window,
            "vad.hop" => &mut self.vad.hop,
            "vad.threshold_offset" => &mut self.vad.threshold_offset,
            "vad.hangover" => &mut self.vad.hangover,
            "vad.min_segment" => &mut self.vad.min_segment,
            "engine.window" => &mut self.engine.window,
            "engine.decay_half_life" => &mut self.engine.decay_half_life,
            "engine.w_align" => &mut self.engine.w_align,
            "engine.w_overlap" => &mut self.engine.w_overlap,
            "engine.w_coord" => &mut self.engine.w_coord,
            "engine.split_threshold" => &mut self.engine.split_threshold,
            "engine.merge_threshold" => &mut self.engine.merge_threshold,
            "engine.hysteresis" => &mut self.engine.hysteresis,
            "engine.retro_horizon" => &mut self.engine.retro_horizon,
            "engine.stability_drop" => &mut self.engine.stability_drop,
            "engine.stability_window" => &mut self.engine.stability_window,
            "engine.turn_gap" => &mut self.engine.turn_gap,
            "engine.align_tol" => &mut self.engine.align_tol,
            "engine.reorder_tolerance" => &mut self.engine.reorder_tolerance,
            "detect.sit_initial_window" => &mut self.detect.sit_initial_window,
            "detect.aside_delta" => &mut self.detect.aside_delta,
            "detect.baseline_horizon" => &mut self.detect.baseline_horizon,
            "detect.coord_onset_tau" => &mut self.detect.coord_onset_tau,
            "detect.coord_max_burst" => &mut self.detect.coord_max_burst,
            "detect.coord_corr_min" => &mut self.detect.coord_corr_min,
            "detect.coord_isolation" => &mut self.detect.coord_isolation,
            "detect.confirm_max_gap" => &mut self.detect.confirm_max_gap,
            "mixer.cross_floor_gain" => &mut self.mixer.cross_floor_gain,
            "mixer.role_horizon" => &mut self.mixer.role_horizon,
            "eval.frame" => &mut self.frame,
            "eval.match_window" => &mut self.match_window,
            "detect.coord_min_participants" => {
                self.detect.coord_min_participants =
                    value.parse().map_err(|_| format!("{key}: {value:?} is not a count"))?;
                return Ok(());
            }
            _ => return Err(format!("unknown key {key:?}")),
        };
        *slot = num()?;
        Ok(())
    }
}
