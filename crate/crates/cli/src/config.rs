//! Experiment configuration: a TOML file with one section per stage.
//!
//! Every key has a default, so an empty file is a valid configuration;
//! unknown sections or keys are rejected. Paths are resolved relative to
//! the directory of the configuration file.

use std::path::{Path, PathBuf};

use bsm_core::design::ToleranceMode;
use bsm_core::imagls::InitKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub array: ArrayConfig,
    pub hrtf: HrtfConfig,
    pub design: DesignConfig,
    pub magls: MaglsConfig,
    pub imagls: ImaglsSection,
    pub evaluate: EvaluateConfig,
    pub render: RenderConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// `semicircular6`, or empty when `file` is given.
    pub preset: String,
    /// Geometry text file (`radius_m`, `baffle`, `mic` lines).
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrtfSource {
    /// Rigid-sphere head surrogate on a spiral grid plus a horizontal ring.
    Synthetic,
    /// A `BSMD` container.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrtfConfig {
    pub source: HrtfSource,
    pub path: Option<PathBuf>,
    pub head_radius_m: f64,
    /// Ears sit on the horizontal plane at `+-ear_azimuth_deg`.
    pub ear_azimuth_deg: f64,
    /// Weighted directions of the synthetic grid.
    pub grid_directions: usize,
    /// Zero-weight horizontal ring used for the ILD (`L`).
    pub horizontal_directions: usize,
    pub sample_rate_hz: f64,
    /// The synthetic grid holds the bins `0..=fft_size/2`.
    pub fft_size: usize,
    /// Elevation tolerance for picking horizontal directions from a file.
    pub horizontal_tolerance_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Noise-to-signal power ratio `sigma_n^2 / sigma_s^2`.
    pub noise_ratio: f64,
    /// Below this frequency the merged banks use the MSE filters.
    pub crossover_hz: f64,
    /// Optimization and evaluation band.
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaglsConfig {
    pub init_phase_rad: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tolerance_mode: ToleranceMode,
    pub covariance_constraint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImaglsSection {
    pub lambda: f64,
    /// When non-empty, one design per value; the shipped selection rule
    /// then picks the bank written as `imagls.bsmf`.
    pub lambda_sweep: Vec<f64>,
    pub erb_step: f64,
    pub smoothing_eps: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub lbfgs_memory: usize,
    pub init: InitKind,
    pub covariance_constraint: bool,
    /// Sweep selection: allowed magnitude-error increase over MagLS in the
    /// selection band, dB.
    pub max_mag_degradation_db: f64,
    /// Sweep selection: magnitude error must stay below this, dB.
    pub mag_ceiling_db: f64,
    /// Upper edge of the selection band (lower edge: `band_lo_hz`).
    pub selection_hi_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Front and rear azimuth ranges for the angle summary, degrees.
    pub front_deg: [f64; 2],
    pub rear_deg: [f64; 2],
    /// Reference ILD improvement from the literature and its tolerance,
    /// checked only for measured HRTF data.
    pub reference_ild_gain_db: f64,
    pub reference_tolerance_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub taps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Recorded in the manifest. The pipeline itself draws no random
    /// numbers.
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            preset: "semicircular6".into(),
            file: None,
        }
    }
}

impl Default for HrtfConfig {
    fn default() -> Self {
        HrtfConfig {
            source: HrtfSource::Synthetic,
            path: None,
            head_radius_m: 0.0875,
            ear_azimuth_deg: 100.0,
            grid_directions: 1625,
            horizontal_directions: 360,
            sample_rate_hz: 48000.0,
            fft_size: 2048,
            horizontal_tolerance_deg: 0.5,
        }
    }
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            noise_ratio: 1e-4,
            crossover_hz: 1500.0,
            band_lo_hz: 1500.0,
            band_hi_hz: 20000.0,
        }
    }
}

impl Default for MaglsConfig {
    fn default() -> Self {
        MaglsConfig {
            init_phase_rad: std::f64::consts::FRAC_PI_2,
            tol: 1e-20,
            max_iter: 100_000,
            tolerance_mode: ToleranceMode::Absolute,
            covariance_constraint: true,
        }
    }
}

impl Default for ImaglsSection {
    fn default() -> Self {
        ImaglsSection {
            lambda: 0.01,
            lambda_sweep: Vec::new(),
            erb_step: 1.0,
            smoothing_eps: 1e-12,
            max_iter: 500,
            grad_tol: 1e-6,
            lbfgs_memory: 10,
            init: InitKind::Magls,
            covariance_constraint: false,
            max_mag_degradation_db: 1.0,
            mag_ceiling_db: -10.0,
            selection_hi_hz: 5000.0,
        }
    }
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            front_deg: [0.0, 100.0],
            rear_deg: [140.0, 180.0],
            reference_ild_gain_db: 3.8,
            reference_tolerance_db: 1.5,
        }
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { taps: 1024 }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a configuration file, or the `config` object of a run
    /// manifest (any file whose content is a JSON object).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if text.trim_start().starts_with('{') {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let config = manifest
                .get("config")
                .ok_or_else(|| bad(format!("{} has no `config` object", path.display())))?;
            let cfg: ExperimentConfig =
                serde_json::from_value(config.clone()).map_err(|e| bad(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.array.file);
        fix(&mut self.hrtf.path);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.array.file, self.array.preset.as_str()) {
            (Some(_), "") => {}
            (Some(_), _) => return Err(bad("array: give either `preset` or `file`, not both")),
            (None, "semicircular6") => {}
            (None, other) => return Err(bad(format!("array: unknown preset `{other}`"))),
        }
        let h = &self.hrtf;
        match h.source {
            HrtfSource::File if h.path.is_none() => {
                return Err(bad("hrtf: source = \"file\" needs `path`"))
            }
            HrtfSource::Synthetic => {
                positive("hrtf.head_radius_m", h.head_radius_m)?;
                positive("hrtf.sample_rate_hz", h.sample_rate_hz)?;
                if h.grid_directions == 0 || h.horizontal_directions == 0 {
                    return Err(bad(
                        "hrtf: grid_directions and horizontal_directions must be positive",
                    ));
                }
                if !h.fft_size.is_power_of_two() || h.fft_size < 16 {
                    return Err(bad("hrtf.fft_size must be a power of two >= 16"));
                }
                if !(h.ear_azimuth_deg > 0.0 && h.ear_azimuth_deg < 180.0) {
                    return Err(bad("hrtf.ear_azimuth_deg must lie in (0, 180)"));
                }
            }
            HrtfSource::File => {}
        }
        positive("hrtf.horizontal_tolerance_deg", h.horizontal_tolerance_deg)?;
        let d = &self.design;
        if !(d.noise_ratio >= 0.0 && d.noise_ratio.is_finite()) {
            return Err(bad("design.noise_ratio must be finite and non-negative"));
        }
        positive("design.band_lo_hz", d.band_lo_hz)?;
        if !(d.band_hi_hz > d.band_lo_hz && d.band_hi_hz.is_finite()) {
            return Err(bad("design: band_hi_hz must exceed band_lo_hz"));
        }
        if !(d.crossover_hz >= 0.0 && d.crossover_hz.is_finite()) {
            return Err(bad("design.crossover_hz must be finite and non-negative"));
        }
        positive("magls.tol", self.magls.tol)?;
        if self.magls.max_iter == 0 {
            return Err(bad("magls.max_iter must be positive"));
        }
        if !self.magls.init_phase_rad.is_finite() {
            return Err(bad("magls.init_phase_rad must be finite"));
        }
        let i = &self.imagls;
        for l in std::iter::once(&i.lambda).chain(&i.lambda_sweep) {
            if !(*l >= 0.0 && l.is_finite()) {
                return Err(bad(format!(
                    "imagls: lambda {l} must be finite and non-negative"
                )));
            }
        }
        positive("imagls.erb_step", i.erb_step)?;
        positive("imagls.smoothing_eps", i.smoothing_eps)?;
        positive("imagls.grad_tol", i.grad_tol)?;
        if i.lbfgs_memory == 0 {
            return Err(bad("imagls.lbfgs_memory must be positive"));
        }
        if !(i.selection_hi_hz > d.band_lo_hz) {
            return Err(bad("imagls.selection_hi_hz must exceed design.band_lo_hz"));
        }
        let e = &self.evaluate;
        for (name, r) in [("front_deg", e.front_deg), ("rear_deg", e.rear_deg)] {
            if !(r[0] >= 0.0 && r[0] < r[1] && r[1] <= 180.0) {
                return Err(bad(format!(
                    "evaluate.{name} must satisfy 0 <= lo < hi <= 180"
                )));
            }
        }
        if !self.render.taps.is_power_of_two() || self.render.taps < bsm_core::render::MIN_TAPS {
            return Err(bad(format!(
                "render.taps must be a power of two >= {}",
                bsm_core::render::MIN_TAPS
            )));
        }
        Ok(())
    }

    /// The λ values to design: the sweep, or the single configured value.
    pub fn lambdas(&self) -> Vec<f64> {
        if self.imagls.lambda_sweep.is_empty() {
            vec![self.imagls.lambda]
        } else {
            self.imagls.lambda_sweep.clone()
        }
    }
}
