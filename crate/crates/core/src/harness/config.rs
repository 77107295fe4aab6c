//! Experiment configuration: one TOML file describes a phantom, array,
//! frequencies, grids, noise and inversion settings.

use crate::forward::{ArrayGeometry, ForwardConfig, FrequencySet, TransmitPlan};
use crate::inversion::AdmmConfig;
use crate::medium::{Background, Grid};
use crate::phantoms::ScenarioSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset `{0}` (available: {list})", list = PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", "))]
    UnknownPreset(String),
}

fn field<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Field { path: path.into(), message: message.into() })
}

/// Inversion grid: cell counts (lateral, [elevation,] depth), spacing and the
/// depth of the first cell edge below the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub depth_start: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, ConfigError> {
        Grid::centered(&self.shape, self.spacing, self.depth_start).or_else(|e| field("grid", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransmitSpec {
    /// `count` steering angles spanning `min_deg..=max_deg`.
    PlaneWave { min_deg: f64, max_deg: f64, count: usize },
    IdealPlaneWave { min_deg: f64, max_deg: f64, count: usize },
    PerElement,
}

fn sweep(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (min + max)];
    }
    (0..count).map(|i| min + (max - min) * i as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub elements: usize,
    pub pitch: f64,
    #[serde(default)]
    pub elevation_width: f64,
    #[serde(default = "one")]
    pub elevation_points: usize,
    pub transmit: TransmitSpec,
}

fn one() -> usize {
    1
}

impl ArraySpec {
    pub fn build(&self) -> ArrayGeometry {
        let plan = match &self.transmit {
            TransmitSpec::PlaneWave { min_deg, max_deg, count } => TransmitPlan::PlaneWave { angles_deg: sweep(*min_deg, *max_deg, *count) },
            TransmitSpec::IdealPlaneWave { min_deg, max_deg, count } => TransmitPlan::IdealPlaneWave { angles_deg: sweep(*min_deg, *max_deg, *count) },
            TransmitSpec::PerElement => TransmitPlan::PerElement,
        };
        let geom = ArrayGeometry::linear(self.elements, self.pitch, plan);
        if self.elevation_width > 0.0 {
            geom.with_elevation(self.elevation_width, self.elevation_points)
        } else {
            geom
        }
    }
}

/// `count` frequencies uniformly spanning `min_hz..=max_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub min_hz: f64,
    pub max_hz: f64,
    pub count: usize,
}

impl FrequencySpec {
    pub fn build(&self) -> Result<FrequencySet, ConfigError> {
        FrequencySet::uniform(self.min_hz, self.max_hz, self.count).or_else(|e| field("frequencies", e.to_string()))
    }
}

/// Synthetic data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// Data grid = inversion grid refined by this factor.
    pub refinement: usize,
    /// Noise standard deviation relative to the data RMS.
    pub noise_level: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceModel {
    /// `m_ref = m0`.
    Initial,
    /// `m_ref = 0`.
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSpec {
    #[serde(flatten)]
    pub admm: AdmmConfig,
    pub reference_model: ReferenceModel,
    /// Gaussian blur (m) applied to the layered starting model.
    pub initial_blur: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "one")]
    pub workers: usize,
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    pub array: ArraySpec,
    pub frequencies: FrequencySpec,
    pub forward: ForwardConfig,
    pub data: DataSpec,
    pub inversion: InversionSpec,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("simple_cyst", include_str!("../../../../presets/simple_cyst.toml")),
    ("solid_cyst", include_str!("../../../../presets/solid_cyst.toml")),
    ("muscle_cyst", include_str!("../../../../presets/muscle_cyst.toml")),
    ("sphere_pair_3d", include_str!("../../../../presets/sphere_pair_3d.toml")),
    ("desk_simple_cyst", include_str!("../../../../presets/desk_simple_cyst.toml")),
    ("desk_solid_cyst", include_str!("../../../../presets/desk_solid_cyst.toml")),
    ("desk_muscle_cyst", include_str!("../../../../presets/desk_muscle_cyst.toml")),
    ("desk_sphere_pair_3d", include_str!("../../../../presets/desk_sphere_pair_3d.toml")),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (_, text) = PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn background(&self) -> Background {
        self.scenario.reference_background()
    }

    pub fn inversion_grid(&self) -> Result<Grid, ConfigError> {
        self.grid.build()
    }

    pub fn geometry(&self) -> ArrayGeometry {
        self.array.build()
    }

    /// Forward settings for inversion (refinement from `forward`).
    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig { workers: self.workers, ..self.forward.clone() }
    }

    /// Forward settings for data generation (refinement from `data`).
    pub fn data_forward_config(&self) -> ForwardConfig {
        ForwardConfig { refinement: self.data.refinement, workers: self.workers, ..self.forward.clone() }
    }

    pub fn admm(&self) -> AdmmConfig {
        self.inversion.admm.clone()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return field("workers", "must be >= 1");
        }
        if !(2..=3).contains(&self.grid.shape.len()) {
            return field("grid.shape", "needs 2 or 3 axes");
        }
        if self.grid.shape.iter().any(|&n| n == 0) {
            return field("grid.shape", "axes must be non-empty");
        }
        if !(self.grid.spacing > 0.0) {
            return field("grid.spacing", "must be positive");
        }
        if !(self.grid.depth_start >= 0.0) {
            return field("grid.depth_start", "must be >= 0 (the array is at depth 0)");
        }
        let grid = self.grid.build()?;
        if self.array.elements == 0 {
            return field("array.elements", "must be >= 1");
        }
        if !(self.array.pitch > 0.0) {
            return field("array.pitch", "must be positive");
        }
        if self.array.elevation_width < 0.0 || self.array.elevation_points == 0 {
            return field("array.elevation_width", "must be >= 0 with >= 1 elevation point");
        }
        match &self.array.transmit {
            TransmitSpec::PlaneWave { min_deg, max_deg, count } | TransmitSpec::IdealPlaneWave { min_deg, max_deg, count } => {
                if *count == 0 {
                    return field("array.transmit.count", "must be >= 1");
                }
                if !(min_deg <= max_deg) || min_deg.abs() >= 90.0 || max_deg.abs() >= 90.0 {
                    return field("array.transmit", "angles must satisfy -90 < min <= max < 90");
                }
            }
            TransmitSpec::PerElement => {}
        }
        if self.frequencies.count == 0 || !(self.frequencies.min_hz > 0.0) || !(self.frequencies.max_hz >= self.frequencies.min_hz) {
            return field("frequencies", "need count >= 1 and 0 < min_hz <= max_hz");
        }
        if self.frequencies.count > 1 && self.frequencies.max_hz == self.frequencies.min_hz {
            return field("frequencies", "several frequencies need max_hz > min_hz");
        }
        if self.forward.refinement == 0 {
            return field("forward.refinement", "must be >= 1");
        }
        if !(self.forward.gmres_tol > 0.0) || self.forward.gmres_restart == 0 || self.forward.gmres_max_iter == 0 {
            return field("forward", "GMRES needs tol > 0, restart >= 1 and max_iter >= 1");
        }
        if self.data.refinement == 0 {
            return field("data.refinement", "must be >= 1");
        }
        if !(self.data.noise_level >= 0.0) {
            return field("data.noise_level", "must be >= 0");
        }
        if !(self.inversion.initial_blur >= 0.0) {
            return field("inversion.initial_blur", "must be >= 0");
        }
        if let Err(e) = self.inversion.admm.validate() {
            return field("inversion", e.to_string());
        }
        if let Err(e) = self.scenario.validate() {
            return field("scenario", e.to_string());
        }
        if let Err(e) = crate::phantoms::build(&self.scenario, &grid) {
            return field("scenario", e.to_string());
        }
        Ok(())
    }
}
