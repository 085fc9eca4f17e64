//! Pipeline configuration: a flat TOML document in which every key has a
//! working default, so an empty file is a valid config.

use serde::{Deserialize, Serialize};

use crate::detector::{FeatureLayout, FeatureName, ThresholdConfig, TrainOptions};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, BeamPatternSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Svm,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Receive antennas `M_R`.
    pub num_antennas: usize,
    /// Element spacing in meters.
    pub element_spacing_m: f64,
    pub carrier_freq_hz: f64,
    /// Pilot subcarriers `S`.
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    /// Frames per window `T`.
    pub frames_per_window: usize,
    /// Tracked dominant paths `L`.
    pub num_paths: usize,
    /// Spectrum grid step in degrees.
    pub grid_step_deg: f64,
    /// Window advance in frames; `T` means non-overlapping windows.
    pub window_stride: usize,
    /// Windows consumed by one-time phase calibration.
    pub warmup_windows: usize,
    /// Forward-backward averaging of the correlation matrix.
    pub fb_averaging: bool,
    /// Opt-in subarray smoothing for fully coherent scenes.
    pub coherent_smoothing: bool,
    pub pattern: BeamPatternSpec,
    /// Convert RSS to milliwatts before the ratio feature.
    pub rss_ratio_linear: bool,
    pub detector: DetectorMode,
    pub threshold: ThresholdConfig,
    pub svm_c: f64,
    pub svm_epochs: usize,
    pub seed: u64,
    /// Feature keys for the SVM layout; `None` selects the default set.
    pub features: Option<Vec<String>>,
    /// `host:port` of the event sink, when publishing.
    pub endpoint: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_antennas: 4,
            element_spacing_m: 0.0252,
            carrier_freq_hz: 5.745e9,
            num_subcarriers: 53,
            subcarrier_spacing_hz: 312.5e3,
            frames_per_window: 7,
            num_paths: 2,
            grid_step_deg: 0.5,
            window_stride: 7,
            warmup_windows: 2,
            fb_averaging: true,
            coherent_smoothing: false,
            pattern: BeamPatternSpec::Identity,
            rss_ratio_linear: false,
            detector: DetectorMode::Svm,
            threshold: ThresholdConfig::default(),
            svm_c: 1.0,
            svm_epochs: 200,
            seed: 0,
            features: None,
            endpoint: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if self.num_subcarriers < 2 {
            return Err(Error::Config("need at least 2 subcarriers".into()));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::Config("subcarrier spacing must be positive".into()));
        }
        if self.frames_per_window < 2 {
            return Err(Error::Config("window length T must be at least 2".into()));
        }
        if self.num_paths == 0 || self.num_paths >= self.num_antennas {
            return Err(Error::Config(format!(
                "need 1 <= L < {} antennas, got L={}",
                self.num_antennas, self.num_paths
            )));
        }
        if !(self.grid_step_deg > 0.0 && self.grid_step_deg <= 45.0) {
            return Err(Error::Config(format!("bad grid step {}", self.grid_step_deg)));
        }
        if self.window_stride == 0 || self.window_stride > self.frames_per_window {
            return Err(Error::Config(format!(
                "window stride must be in 1..=T={}, got {}",
                self.frames_per_window, self.window_stride
            )));
        }
        if self.warmup_windows == 0 {
            return Err(Error::Config("need at least 1 warm-up window".into()));
        }
        if !(self.svm_c > 0.0) || self.svm_epochs == 0 {
            return Err(Error::Config("bad SVM hyperparameters".into()));
        }
        self.feature_layout()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.num_antennas,
            self.element_spacing_m,
            self.carrier_freq_hz,
        )
    }

    pub fn feature_layout(&self) -> Result<FeatureLayout> {
        match &self.features {
            None => Ok(FeatureLayout::default()),
            Some(keys) => {
                if keys.is_empty() {
                    return Err(Error::Config("feature list must not be empty".into()));
                }
                Ok(FeatureLayout(
                    keys.iter()
                        .map(|k| FeatureName::from_key(k))
                        .collect::<Result<Vec<_>>>()?,
                ))
            }
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            c: self.svm_c,
            epochs: self.svm_epochs,
            seed: self.seed,
        }
    }
}
