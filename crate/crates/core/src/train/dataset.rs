use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::phantom::{make_cardiac_phantom, make_cyst_phantom, read_dataset, simulate_channel_data, write_dataset, ChannelData};
use crate::rx::{das_reconstruct, EnvelopeImage};
use crate::tx::TxScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cardiac,
    Cyst,
}

/// One simulated frame: single-line channel data and its DAS reference envelope.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub family: Family,
    pub seed: u64,
    pub sla: ChannelData,
    pub reference: EnvelopeImage,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Frame>,
    pub validation: Vec<Frame>,
    pub test: Vec<Frame>,
    /// Held-out cyst family.
    pub cyst_test: Vec<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    CystTest,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::Train, SplitName::Validation, SplitName::Test, SplitName::CystTest];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
            SplitName::CystTest => "cyst_test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split `{s}`")))
    }

    /// Disjoint seed block of each split.
    fn seed_offset(self) -> u64 {
        match self {
            SplitName::Train => 0,
            SplitName::Validation => 1 << 20,
            SplitName::Test => 2 << 20,
            SplitName::CystTest => 3 << 20,
        }
    }
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[Frame] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
            SplitName::CystTest => &self.cyst_test,
        }
    }

    fn get_mut(&mut self, name: SplitName) -> &mut Vec<Frame> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
            SplitName::CystTest => &mut self.cyst_test,
        }
    }

    pub fn seeds(&self, name: SplitName) -> BTreeSet<u64> {
        self.get(name).iter().map(|f| f.seed).collect()
    }

    /// Writes every frame as a `USIQ` file plus a `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for name in SplitName::ALL {
            for f in self.get(name) {
                let file = format!("{}.usiq", f.id);
                write_dataset(&f.sla, dir.join(&file))?;
                manifest.push(ManifestEntry {
                    split: name,
                    id: f.id.clone(),
                    family: f.family,
                    seed: f.seed,
                    file,
                });
            }
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a saved split; reference envelopes are recomputed with the
    /// configured receive pipeline.
    pub fn load(dir: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let mut split = Self::empty();
        for entry in manifest {
            let sla = read_dataset(dir.join(&entry.file))?;
            let reference = sla_reference(&sla, cfg)?;
            split.get_mut(entry.split).push(Frame {
                id: entry.id,
                family: entry.family,
                seed: entry.seed,
                sla,
                reference,
            });
        }
        Ok(split)
    }

    fn empty() -> Self {
        Self {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            cyst_test: Vec::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    split: SplitName,
    id: String,
    family: Family,
    seed: u64,
    file: String,
}

/// SLA delay-and-sum envelope: the reference every loss and metric compares against.
pub fn sla_reference(sla: &ChannelData, cfg: &ExperimentConfig) -> Result<EnvelopeImage> {
    let (geom, grid) = cfg.geometry.build()?;
    let identity = TxScheme::identity(grid.line_count)?;
    das_reconstruct(sla, &identity, &geom, &grid, &cfg.window_for(&geom))
}

/// Simulates one frame and rescales it so its reference envelope has unit mean.
pub fn simulate_frame(cfg: &ExperimentConfig, family: Family, seed: u64, id: String) -> Result<Frame> {
    let (geom, grid) = cfg.geometry.build()?;
    let ds = &cfg.dataset;
    let base = ds.speckle(&grid, &cfg.pulse);
    let field = match family {
        Family::Cardiac => make_cardiac_phantom(base, seed)?,
        Family::Cyst => make_cyst_phantom(base, ds.cyst_center, ds.cyst_radius, &[], seed)?,
    };
    let raw = simulate_channel_data(&field, &geom, &grid, &cfg.pulse)?;
    let env = sla_reference(&raw, cfg)?;
    let mean = env.values.iter().sum::<f64>() / env.values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::numerical(format!("frame {id} has an all-zero reference envelope")));
    }
    let scale = 1.0 / mean;
    let rescale = |v: &[f32]| v.iter().map(|&x| (x as f64 * scale) as f32).collect::<Vec<f32>>();
    let sla = raw.with_values(raw.transmits, rescale(&raw.i), rescale(&raw.q))?;
    let reference = sla_reference(&sla, cfg)?;
    Ok(Frame {
        id,
        family,
        seed,
        sla,
        reference,
    })
}

/// Seeded cardiac-like train/validation/test frames plus the cyst family.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let ds = &cfg.dataset;
    let mut split = DatasetSplit::empty();
    for (name, count) in [
        (SplitName::Train, ds.train),
        (SplitName::Validation, ds.validation),
        (SplitName::Test, ds.test),
        (SplitName::CystTest, ds.cyst_test),
    ] {
        let family = if name == SplitName::CystTest { Family::Cyst } else { Family::Cardiac };
        for k in 0..count {
            let seed = (ds.seed << 32) + name.seed_offset() + k as u64;
            let id = format!("{}-{k:03}", name.as_str());
            split.get_mut(name).push(simulate_frame(cfg, family, seed, id)?);
        }
    }
    Ok(split)
}
