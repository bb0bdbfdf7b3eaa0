use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{RoiCircle, RoiRole};
use crate::nn::Architecture;
use crate::phantom::{ArrayGeometry, PulseSpec, ScanGrid, SpeckleParams, DEFAULT_SPEED_OF_SOUND};
use crate::rx::{ApodizationWindow, WindowKind, DEFAULT_DYNAMIC_RANGE_DB};
use crate::tx::InitKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    RxOnly,
    Joint,
}

/// Array and scan parameters in config units (degrees for the sector step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub elements: usize,
    /// Element pitch in meters; half a wavelength when absent.
    #[serde(default)]
    pub pitch: Option<f64>,
    pub speed_of_sound: f64,
    pub carrier_frequency: f64,
    pub sample_rate: f64,
    pub samples: usize,
    pub lines: usize,
    pub sector_step_deg: f64,
}

impl GeometryConfig {
    /// 16 elements, 256 samples, 28 lines: the geometry used for desk-scale training.
    pub fn small() -> Self {
        Self {
            elements: 16,
            pitch: None,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            carrier_frequency: 2.5e6,
            sample_rate: 5.0e6,
            samples: 256,
            lines: 28,
            sector_step_deg: 0.54,
        }
    }

    /// 64 elements, 140 lines.
    pub fn full() -> Self {
        Self {
            elements: 64,
            samples: 640,
            lines: 140,
            ..Self::small()
        }
    }

    pub fn build(&self) -> Result<(ArrayGeometry, ScanGrid)> {
        if !(self.carrier_frequency > 0.0 && self.speed_of_sound > 0.0) {
            return Err(Error::config("carrier frequency and speed of sound must be positive"));
        }
        let pitch = self
            .pitch
            .unwrap_or(self.speed_of_sound / self.carrier_frequency / 2.0);
        let geom = ArrayGeometry::new(
            self.elements,
            pitch,
            self.speed_of_sound,
            self.carrier_frequency,
            self.sample_rate,
            self.samples,
        )?;
        let grid = ScanGrid::centered(self.lines, self.sector_step_deg.to_radians())?;
        Ok((geom, grid))
    }
}

/// Phantom families and split sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Frames of the held-out cyst family.
    pub cyst_test: usize,
    /// Scatterers per square millimeter.
    pub density_per_mm2: f64,
    /// Imaging depth window in meters.
    pub depth_window: (f64, f64),
    /// Cyst center as (range in meters, angle in radians).
    pub cyst_center: (f64, f64),
    pub cyst_radius: f64,
}

impl DatasetConfig {
    pub fn desk() -> Self {
        Self {
            seed: 7,
            train: 48,
            validation: 8,
            test: 16,
            cyst_test: 8,
            density_per_mm2: 20.0,
            depth_window: (4e-3, 36e-3),
            cyst_center: (30e-3, -0.07),
            cyst_radius: 2.4e-3,
        }
    }

    /// Wedge covering the scan sector plus a beam-width margin on both sides.
    pub fn speckle(&self, grid: &ScanGrid, pulse: &PulseSpec) -> SpeckleParams {
        SpeckleParams {
            density: self.density_per_mm2 * 1e6,
            depth_window: self.depth_window,
            sector: grid.sector_width() + 6.0 * pulse.tx_beam_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.validation == 0 {
            return Err(Error::config("train and validation splits must be non-empty"));
        }
        if !(self.density_per_mm2 > 0.0) {
            return Err(Error::config("scatterer density must be positive"));
        }
        Ok(())
    }
}

/// Optimizer and schedule settings for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub decimation: usize,
    pub init_kind: InitKind,
    pub net_learning_rate: f64,
    pub tx_learning_rate: f64,
    pub stage1_iterations: u64,
    pub stage2_iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_interval: u64,
    /// Stage-1 iteration whose snapshot starts joint training; 40% of stage 1 when absent.
    #[serde(default)]
    pub preconvergence_iteration: Option<u64>,
    /// Random lateral mirror and global carrier phase per training frame.
    #[serde(default)]
    pub augment: bool,
    pub architecture: Architecture,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            stage: Stage::Joint,
            decimation: 10,
            init_kind: InitKind::Mla,
            net_learning_rate: 5e-4,
            tx_learning_rate: 0.005,
            stage1_iterations: 2000,
            stage2_iterations: 2000,
            batch_size: 1,
            seed: 1,
            validation_interval: 50,
            preconvergence_iteration: None,
            augment: true,
            architecture: Architecture::default(),
        }
    }

    pub fn preconvergence(&self) -> u64 {
        self.preconvergence_iteration
            .unwrap_or(self.stage1_iterations * 2 / 5)
            .min(self.stage1_iterations)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.net_learning_rate > 0.0 && self.net_learning_rate.is_finite()) {
            return Err(Error::config("network learning rate must be positive"));
        }
        if !(self.tx_learning_rate >= 0.0 && self.tx_learning_rate.is_finite()) {
            return Err(Error::config("tx learning rate must be non-negative"));
        }
        if self.batch_size != 1 {
            return Err(Error::config(format!("batch size is fixed at 1, got {}", self.batch_size)));
        }
        if self.validation_interval == 0 {
            return Err(Error::config("validation interval must be positive"));
        }
        self.architecture.validate()
    }
}

/// Transmit beam width used with the 16-element geometry, in degrees.
pub const SMALL_TX_BEAM_SIGMA_DEG: f64 = 1.5;

/// One experiment cell: everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub geometry: GeometryConfig,
    pub pulse: PulseSpec,
    pub window: WindowKind,
    pub dynamic_range_db: f64,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            name: "10-MLA".into(),
            geometry: GeometryConfig::small(),
            pulse: PulseSpec {
                tx_beam_sigma: SMALL_TX_BEAM_SIGMA_DEG.to_radians(),
                ..PulseSpec::desk_default()
            },
            window: WindowKind::Hann,
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
            dataset: DatasetConfig::desk(),
            train: TrainConfig::desk(),
        }
    }

    /// Same data and schedule with a different transmit initialization.
    pub fn with_scheme(&self, init_kind: InitKind, decimation: usize) -> Self {
        let mut cfg = self.clone();
        cfg.train.init_kind = init_kind;
        cfg.train.decimation = decimation;
        cfg.name = format!("{decimation}-{init_kind}");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        self.pulse.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        if !(self.dynamic_range_db > 0.0) {
            return Err(Error::config("dynamic range must be positive"));
        }
        Ok(())
    }

    pub fn window_for(&self, geom: &ArrayGeometry) -> ApodizationWindow {
        ApodizationWindow::new(self.window, geom.element_count)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// SHA-256 over everything that shapes the optimization trajectory.
    /// Iteration budgets and the cell name are excluded so a run can be extended.
    pub fn training_hash(&self) -> String {
        let mut c = self.clone();
        c.name.clear();
        c.train.stage1_iterations = 0;
        c.train.stage2_iterations = 0;
        c.train.preconvergence_iteration = None;
        c.train.stage = Stage::RxOnly;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cyst-interior target circle and an equal-radius speckle circle at the
    /// same depth, in `(line, sample)` index space.
    pub fn cyst_rois(&self) -> Result<(RoiCircle, RoiCircle)> {
        let (geom, grid) = self.geometry.build()?;
        let (r, angle) = self.dataset.cyst_center;
        let sample_len = geom.speed_of_sound / (2.0 * geom.sample_rate);
        let line_len = r * grid.sector_step;
        let aspect = line_len / sample_len;
        let radius = 0.6 * self.dataset.cyst_radius / sample_len;
        let center_line = grid.line_position(angle);
        let center_sample = r / sample_len;
        // mirror about broadside keeps the background at equal depth inside the sector
        let bg_line = (grid.line_count - 1) as f64 - center_line;
        let target = RoiCircle {
            center: (center_line, center_sample),
            radius,
            aspect,
            role: RoiRole::Target,
        };
        let background = RoiCircle {
            center: (bg_line, center_sample),
            radius,
            aspect,
            role: RoiRole::Background,
        };
        target.validate(grid.line_count, geom.sample_count)?;
        background.validate(grid.line_count, geom.sample_count)?;
        Ok((target, background))
    }
}
