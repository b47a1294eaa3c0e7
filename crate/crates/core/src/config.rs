//! TOML bench configuration.
//!
//! Every table rejects unknown keys. Missing tables take their defaults, so
//! an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{BlockMapping, TimingConfig};
use crate::error::{Error, Result};
use crate::evs::EvsConfig;
use crate::projector::OpticalConfig;
use crate::rng;
use crate::stimulus::{Grid, StimulusKind, StimulusProgram};
use crate::tianmouc::TianmoucConfig;

pub const DEFAULT_SEED: u64 = 0x5EED_0B5B;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusConfig {
    /// AOP frames to generate.
    pub frames: usize,
    pub pattern: StimulusKind,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self {
            frames: 50,
            pattern: StimulusKind::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub k_cop: u32,
    pub k_aop: u32,
    pub dmd_width: u32,
    pub dmd_height: u32,
    /// Top-left mirror of the sensor footprint; centered when absent.
    pub origin: Option<[u32; 2]>,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            k_cop: 4,
            k_aop: 8,
            dmd_width: 2560,
            dmd_height: 1440,
            origin: None,
        }
    }
}

impl MappingConfig {
    pub fn block_mapping(&self, grid: Grid) -> Result<BlockMapping> {
        let mut m = match self.origin {
            None => BlockMapping::centered(grid, self.k_cop, self.dmd_width, self.dmd_height)?,
            Some([ox, oy]) => {
                let k = self.k_cop as f64;
                BlockMapping {
                    grid,
                    k_cop: self.k_cop,
                    k_aop: self.k_aop,
                    sensor_to_mirror: [[k, 0.0, ox as f64], [0.0, k, oy as f64]],
                    dmd_width: self.dmd_width,
                    dmd_height: self.dmd_height,
                }
            }
        };
        m.k_aop = self.k_aop;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearityProtocol {
    pub levels: Vec<f64>,
    pub frames_per_level: usize,
    pub grid: Grid,
}

impl Default for LinearityProtocol {
    fn default() -> Self {
        Self {
            levels: (0..19).map(|i| 0.05 + 0.05 * i as f64).collect(),
            frames_per_level: 16,
            grid: Grid::new(32, 32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformityProtocol {
    pub n_dark: usize,
    pub n_half: usize,
    pub grid: Grid,
}

impl Default for UniformityProtocol {
    fn default() -> Self {
        Self {
            n_dark: 1000,
            n_half: 1000,
            grid: Grid::new(64, 64),
        }
    }
}

/// Log-spaced relative illumination levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSweep {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LogSweep {
    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.min];
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        (0..self.count)
            .map(|i| (a + (b - a) * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrProtocol {
    pub levels: LogSweep,
    pub frames_per_level: usize,
    pub grid: Grid,
}

impl Default for SnrProtocol {
    fn default() -> Self {
        Self {
            levels: LogSweep {
                min: 1e-5,
                max: 3.0,
                count: 40,
            },
            frames_per_level: 16,
            grid: Grid::new(64, 32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonTransferProtocol {
    pub levels: Vec<f64>,
    pub frames_per_level: usize,
    pub grid: Grid,
}

impl Default for PhotonTransferProtocol {
    fn default() -> Self {
        Self {
            levels: (1..=8).map(|i| 0.1 * i as f64).collect(),
            frames_per_level: 24,
            grid: Grid::new(64, 64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyProtocol {
    /// Baseline photons per pixel per plane.
    pub intensities: Vec<f64>,
    pub contrast: f64,
    pub trials: usize,
    /// Hold time of each stimulus level, AOP frames.
    pub segment_frames: usize,
    /// Use bus output timestamps instead of generation timestamps.
    pub post_bus: bool,
}

impl Default for LatencyProtocol {
    fn default() -> Self {
        Self {
            intensities: (0..10).map(|i| 5.0 * 2f64.powi(i)).collect(),
            contrast: 0.7,
            trials: 20,
            segment_frames: 16,
            post_bus: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastProtocol {
    pub contrasts: Vec<f64>,
    /// Baseline photons per pixel per plane.
    pub intensity: f64,
    pub grid: Grid,
    /// Record length after the step, AOP frames.
    pub window_frames: usize,
}

impl Default for ContrastProtocol {
    fn default() -> Self {
        Self {
            contrasts: vec![0.1, 0.15, 0.25, 0.4],
            intensity: 50.0,
            grid: Grid::new(8, 8),
            window_frames: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationProtocol {
    pub active_fractions: Vec<f64>,
    pub contrast: f64,
    pub frequency_hz: f64,
    /// Baseline photons per pixel per plane.
    pub intensity: f64,
    pub duration_ms: f64,
    pub grid: Grid,
    /// When set, the bus rate becomes the ideal rate at the largest
    /// fraction divided by this factor.
    pub bus_rate_factor: Option<f64>,
    /// When set, the FIFO holds this many milliseconds of bus output.
    pub fifo_window_ms: Option<f64>,
}

impl Default for SaturationProtocol {
    fn default() -> Self {
        Self {
            active_fractions: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0],
            contrast: 0.7,
            frequency_hz: 100.0,
            intensity: 50.0,
            duration_ms: 500.0,
            grid: Grid::new(32, 32),
            bus_rate_factor: None,
            fifo_window_ms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffSnrProtocol {
    /// Baseline level as DMD duty.
    pub baseline: f64,
    /// Step size in electrons per AOP pixel.
    pub delta_electrons: f64,
    /// Up/down cycles; each contributes one step frame and two static frames.
    pub trials: usize,
    pub grid: Grid,
}

impl Default for DiffSnrProtocol {
    fn default() -> Self {
        Self {
            baseline: 0.3,
            delta_electrons: 200.0,
            trials: 50,
            grid: Grid::new(16, 16),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolsConfig {
    pub linearity: LinearityProtocol,
    pub uniformity: UniformityProtocol,
    pub snr_dr: SnrProtocol,
    pub photon_transfer: PhotonTransferProtocol,
    pub evs_latency: LatencyProtocol,
    pub evs_contrast_threshold: ContrastProtocol,
    pub event_saturation: SaturationProtocol,
    pub diff_snr: DiffSnrProtocol,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AopMerge {
    /// Channel average.
    Luma,
    /// Per-pixel maximum over channels.
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Frame rate of the source footage.
    pub source_fps: Option<f64>,
    pub aop_merge: AopMerge,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source_fps: None,
            aop_merge: AopMerge::Luma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: Grid,
    pub stimulus: StimulusConfig,
    pub mapping: MappingConfig,
    pub timing: TimingConfig,
    pub optics: OpticalConfig,
    pub tianmouc: TianmoucConfig,
    pub evs: EvsConfig,
    pub protocols: ProtocolsConfig,
    pub dataset: DatasetConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            grid: Grid::default(),
            stimulus: StimulusConfig::default(),
            mapping: MappingConfig::default(),
            timing: TimingConfig::default(),
            optics: OpticalConfig::default(),
            tianmouc: TianmoucConfig::default(),
            evs: EvsConfig::default(),
            protocols: ProtocolsConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidParameter { field, reason } if field == "config" => {
                Error::invalid(format!("config {}", path.display()), reason)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("grid", "width and height must be nonzero"));
        }
        if self.stimulus.frames == 0 {
            return Err(Error::invalid("stimulus.frames", "must be >= 1"));
        }
        self.stimulus.pattern.validate()?;
        self.timing.validate()?;
        self.mapping.block_mapping(self.grid)?;
        self.optics.validate()?;
        self.tianmouc_config().validate(self.grid)?;
        self.evs_config().validate()?;
        if let Some(fps) = self.dataset.source_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::invalid("dataset.source_fps", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn block_mapping(&self) -> Result<BlockMapping> {
        self.mapping.block_mapping(self.grid)
    }

    /// Sensor configuration with timing and a derived seed filled in.
    pub fn tianmouc_config(&self) -> TianmoucConfig {
        TianmoucConfig {
            timing: self.timing.clone(),
            seed: rng::substream(self.seed, "tianmouc"),
            ..self.tianmouc.clone()
        }
    }

    pub fn evs_config(&self) -> EvsConfig {
        EvsConfig {
            seed: rng::substream(self.seed, "evs"),
            ..self.evs.clone()
        }
    }

    pub fn stimulus_program(&self) -> StimulusProgram {
        StimulusProgram {
            kind: self.stimulus.pattern.clone(),
            grid: self.grid,
            frame_period_ns: self.timing.aop_frame_period_ns,
            t0_ns: 0,
        }
    }

    /// Canonical JSON of every setting that affects results; `output_dir`
    /// is left out.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }

    /// SHA-256 of the canonical JSON, hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical_json()).expect("json");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
