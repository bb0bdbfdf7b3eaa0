use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::rx::EnvelopeImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RoiRole {
    Target,
    Background,
}

/// Circular region in `(line, sample)` index space. `aspect` converts one
/// line step into samples so the region can be round in physical space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiCircle {
    pub center: (f64, f64),
    pub radius: f64,
    #[serde(default = "unit_aspect")]
    pub aspect: f64,
    pub role: RoiRole,
}

fn unit_aspect() -> f64 {
    1.0
}

/// A contrast measure that cannot be evaluated on the given regions.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("undefined: {0}")]
pub struct Undefined(pub String);

impl RoiCircle {
    pub fn new(center: (f64, f64), radius: f64, role: RoiRole) -> Self {
        Self {
            center,
            radius,
            aspect: 1.0,
            role,
        }
    }

    pub fn validate(&self, lines: usize, samples: usize) -> Result<()> {
        let (cl, cs) = self.center;
        let half_lines = self.radius / self.aspect;
        if !(self.radius > 0.0 && self.aspect > 0.0)
            || cl - half_lines < 0.0
            || cl + half_lines > (lines - 1) as f64
            || cs - self.radius < 0.0
            || cs + self.radius > (samples - 1) as f64
        {
            return Err(Error::config(format!(
                "ROI at ({cl}, {cs}) radius {} not inside {lines}×{samples} image",
                self.radius
            )));
        }
        Ok(())
    }

    /// Flat `[line][sample]` indices of the pixels inside the circle.
    pub fn pixels(&self, lines: usize, samples: usize) -> Vec<usize> {
        let (cl, cs) = self.center;
        let mut out = Vec::new();
        for l in 0..lines {
            let dl = (l as f64 - cl) * self.aspect;
            for s in 0..samples {
                let ds = s as f64 - cs;
                if dl * dl + ds * ds <= self.radius * self.radius {
                    out.push(l * samples + s);
                }
            }
        }
        out
    }

    fn stats(&self, img: &EnvelopeImage) -> Result<(f64, f64)> {
        self.validate(img.lines, img.samples)?;
        let idx = self.pixels(img.lines, img.samples);
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&k| img.values[k]).sum::<f64>() / n;
        let var = idx.iter().map(|&k| (img.values[k] - mean).powi(2)).sum::<f64>() / n;
        Ok((mean, var))
    }
}

/// `20·log10(µ_target / µ_background)` in dB.
pub fn contrast_cr(img: &EnvelopeImage, target: &RoiCircle, background: &RoiCircle) -> Result<std::result::Result<f64, Undefined>> {
    let (mt, _) = target.stats(img)?;
    let (mb, _) = background.stats(img)?;
    if mb <= 0.0 {
        return Ok(Err(Undefined("zero background mean".into())));
    }
    if mt <= 0.0 {
        return Ok(Err(Undefined("zero target mean".into())));
    }
    Ok(Ok(20.0 * (mt / mb).log10()))
}

/// `|µ_t − µ_b| / sqrt(σ_t² + σ_b²)`.
pub fn cnr(img: &EnvelopeImage, target: &RoiCircle, background: &RoiCircle) -> Result<std::result::Result<f64, Undefined>> {
    let (mt, vt) = target.stats(img)?;
    let (mb, vb) = background.stats(img)?;
    // rounding leaves ~ε² relative variance in a constant region
    if vt + vb <= 16.0 * f64::EPSILON * f64::EPSILON * (mt * mt + mb * mb) {
        return Ok(Err(Undefined("both regions have zero variance".into())));
    }
    Ok(Ok((mt - mb).abs() / (vt + vb).sqrt()))
}
