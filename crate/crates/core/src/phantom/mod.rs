//! Synthetic phantoms, array/scan geometry, and the pulse-echo simulator that
//! produces single-line-acquisition channel data.

mod io;
mod sim;

pub use io::{read_dataset, read_tagged, write_dataset, write_tagged, HEADER_LEN, MAGIC, VERSION};
pub use sim::{simulate_channel_data, ChannelData};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 1540.0;

/// Linear phased array and receive sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Lateral element offsets in meters, centered on the origin.
    pub element_positions: Vec<f64>,
    pub element_count: usize,
    /// Nominal element spacing; kept alongside the positions so it round-trips exactly.
    pub pitch: f64,
    pub speed_of_sound: f64,
    /// Demodulation frequency in rad/s (2π·f0).
    pub modulation_frequency: f64,
    pub carrier_frequency: f64,
    /// Sample rate of the demodulated signal.
    pub sample_rate: f64,
    pub sample_count: usize,
}

impl ArrayGeometry {
    pub fn new(
        element_count: usize,
        pitch: f64,
        speed_of_sound: f64,
        carrier_frequency: f64,
        sample_rate: f64,
        sample_count: usize,
    ) -> Result<Self> {
        if element_count == 0 {
            return Err(Error::config("element_count must be positive"));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::config(format!("pitch must be positive, got {pitch}")));
        }
        let center = (element_count as f64 - 1.0) / 2.0;
        let element_positions = (0..element_count)
            .map(|m| (m as f64 - center) * pitch)
            .collect();
        let geom = Self {
            element_positions,
            element_count,
            pitch,
            speed_of_sound,
            modulation_frequency: 2.0 * PI * carrier_frequency,
            carrier_frequency,
            sample_rate,
            sample_count,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// 64 elements at half-wavelength pitch for a 2.5 MHz carrier, 5 MHz
    /// demodulated sampling, enough samples for an 80 mm depth window.
    pub fn desk_default() -> Self {
        let f0 = 2.5e6;
        let pitch = DEFAULT_SPEED_OF_SOUND / f0 / 2.0;
        Self::new(64, pitch, DEFAULT_SPEED_OF_SOUND, f0, 5.0e6, 640).expect("valid default")
    }

    /// 16-element geometry with 256 samples used by the tests and desk-scale training.
    pub fn small_test() -> Self {
        let f0 = 2.5e6;
        let pitch = DEFAULT_SPEED_OF_SOUND / f0 / 2.0;
        Self::new(16, pitch, DEFAULT_SPEED_OF_SOUND, f0, 5.0e6, 256).expect("valid default")
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn aperture_half_width(&self) -> f64 {
        self.element_positions
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Time of sample index `n` in seconds.
    pub fn sample_time(&self, n: usize) -> f64 {
        n as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        (self.sample_count as f64 - 1.0) / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count == 0 || self.element_positions.len() != self.element_count {
            return Err(Error::config(format!(
                "element_positions has {} entries, element_count is {}",
                self.element_positions.len(),
                self.element_count
            )));
        }
        for w in self.element_positions.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::config("element_positions must be strictly increasing"));
            }
        }
        let n = self.element_count;
        for m in 0..n / 2 + 1 {
            let a = self.element_positions[m];
            let b = self.element_positions[n - 1 - m];
            if (a + b).abs() > 1e-12 {
                return Err(Error::config("element_positions must be symmetric about 0"));
            }
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::config("speed_of_sound must be positive"));
        }
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            return Err(Error::config("carrier_frequency must be positive"));
        }
        let omega = 2.0 * PI * self.carrier_frequency;
        if (self.modulation_frequency - omega).abs() > 1e-9 * omega {
            return Err(Error::config("modulation_frequency must equal 2π·carrier_frequency"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::config("sample_rate must be positive"));
        }
        if self.sample_count == 0 {
            return Err(Error::config("sample_count must be positive"));
        }
        Ok(())
    }
}

/// Uniformly spaced sector of receive/transmit line directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub line_count: usize,
    pub line_angles: Vec<f64>,
    pub sector_step: f64,
}

impl ScanGrid {
    /// `line_count` lines spaced by `sector_step`, centered on broadside.
    pub fn centered(line_count: usize, sector_step: f64) -> Result<Self> {
        Self::with_first_angle(line_count, sector_step, -(line_count as f64 - 1.0) / 2.0 * sector_step)
    }

    pub fn with_first_angle(line_count: usize, sector_step: f64, first_angle: f64) -> Result<Self> {
        if line_count == 0 {
            return Err(Error::config("line_count must be positive"));
        }
        if !(sector_step > 0.0 && sector_step.is_finite()) {
            return Err(Error::config("sector_step must be positive"));
        }
        let line_angles = (0..line_count)
            .map(|k| first_angle + k as f64 * sector_step)
            .collect();
        Ok(Self {
            line_count,
            line_angles,
            sector_step,
        })
    }

    /// 140 lines of 0.54°.
    pub fn desk_default() -> Self {
        Self::centered(140, 0.54f64.to_radians()).expect("valid default")
    }

    /// 28 lines of 0.54°.
    pub fn small_test() -> Self {
        Self::centered(28, 0.54f64.to_radians()).expect("valid default")
    }

    pub fn first_angle(&self) -> f64 {
        self.line_angles[0]
    }

    /// Full angular width covered by the line centers.
    pub fn sector_width(&self) -> f64 {
        self.sector_step * self.line_count as f64
    }

    /// Fractional line index of an angle.
    pub fn line_position(&self, angle: f64) -> f64 {
        (angle - self.first_angle()) / self.sector_step
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_angles.len() != self.line_count || self.line_count == 0 {
            return Err(Error::config("line_angles must have line_count entries"));
        }
        for w in self.line_angles.windows(2) {
            if ((w[1] - w[0]) - self.sector_step).abs() > 1e-12 {
                return Err(Error::config("line_angles must be uniformly spaced by sector_step"));
            }
        }
        Ok(())
    }
}

/// Gaussian pulse envelope and two-way transmit beam widths of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub envelope_sigma: f64,
    pub tx_beam_sigma: f64,
}

impl PulseSpec {
    pub fn new(envelope_sigma: f64, tx_beam_sigma: f64) -> Result<Self> {
        let p = Self {
            envelope_sigma,
            tx_beam_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn desk_default() -> Self {
        Self {
            envelope_sigma: 0.4e-6,
            tx_beam_sigma: 0.5f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.envelope_sigma > 0.0 && self.envelope_sigma.is_finite()) {
            return Err(Error::config("envelope_sigma must be positive"));
        }
        if !(self.tx_beam_sigma > 0.0 && self.tx_beam_sigma.is_finite()) {
            return Err(Error::config("tx_beam_sigma must be positive"));
        }
        Ok(())
    }

    /// Two-way transmit weighting of a scatterer at `theta` by a beam steered to `alpha`.
    pub fn tx_weight(&self, alpha: f64, theta: f64) -> f64 {
        let d = alpha - theta;
        (-d * d / (2.0 * self.tx_beam_sigma * self.tx_beam_sigma)).exp()
    }

    pub fn envelope(&self, dt: f64) -> f64 {
        (-dt * dt / (2.0 * self.envelope_sigma * self.envelope_sigma)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub range: f64,
    pub angle: f64,
    pub reflectivity: f64,
}

impl Scatterer {
    /// Cartesian position (lateral, axial).
    pub fn position(&self) -> (f64, f64) {
        (self.range * self.angle.sin(), self.range * self.angle.cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererField {
    pub scatterers: Vec<Scatterer>,
    pub label: String,
    pub seed: u64,
    pub depth_window: (f64, f64),
}

impl ScattererField {
    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_window;
        for (idx, s) in self.scatterers.iter().enumerate() {
            if !(s.range > lo && s.range < hi) {
                return Err(Error::config(format!(
                    "scatterer {idx} at range {} outside depth window ({lo}, {hi})",
                    s.range
                )));
            }
            if !s.reflectivity.is_finite() || !s.angle.is_finite() {
                return Err(Error::config(format!("scatterer {idx} is not finite")));
            }
        }
        Ok(())
    }

    /// Concatenation of two fields, keeping this field's label and seed.
    pub fn union(&self, other: &ScattererField) -> ScattererField {
        let mut out = self.clone();
        out.scatterers.extend_from_slice(&other.scatterers);
        out.depth_window = (
            self.depth_window.0.min(other.depth_window.0),
            self.depth_window.1.max(other.depth_window.1),
        );
        out
    }

    fn rms_reflectivity(&self) -> f64 {
        if self.scatterers.is_empty() {
            return 1.0;
        }
        let ss: f64 = self.scatterers.iter().map(|s| s.reflectivity * s.reflectivity).sum();
        (ss / self.scatterers.len() as f64).sqrt()
    }
}

/// Uniform speckle parameters shared by the phantom generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleParams {
    /// Scatterers per square meter.
    pub density: f64,
    pub depth_window: (f64, f64),
    /// Total angular width of the wedge, centered on broadside.
    pub sector: f64,
}

impl SpeckleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::config(format!("density must be positive, got {}", self.density)));
        }
        let (lo, hi) = self.depth_window;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config(format!("degenerate depth window ({lo}, {hi})")));
        }
        if !(self.sector >= 0.0 && self.sector < PI) {
            return Err(Error::config(format!("sector must lie in [0, π), got {}", self.sector)));
        }
        Ok(())
    }

    /// Area of the annular wedge in square meters.
    pub fn wedge_area(&self) -> f64 {
        let (lo, hi) = self.depth_window;
        0.5 * self.sector * (hi * hi - lo * lo)
    }

    pub fn expected_count(&self) -> f64 {
        self.density * self.wedge_area()
    }

    fn contains(&self, range: f64, angle: f64) -> bool {
        range > self.depth_window.0 && range < self.depth_window.1 && angle.abs() <= self.sector / 2.0
    }
}

/// Poisson-distributed scatterers uniform over the wedge, N(0, 1) reflectivities.
pub fn make_speckle_phantom(
    density: f64,
    depth_window: (f64, f64),
    sector: f64,
    seed: u64,
) -> Result<ScattererField> {
    let params = SpeckleParams {
        density,
        depth_window,
        sector,
    };
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = params.expected_count();
    let count = if lambda > 0.0 {
        let poisson = Poisson::new(lambda)
            .map_err(|e| Error::config(format!("bad scatterer intensity {lambda}: {e}")))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let (lo, hi) = depth_window;
    let (lo2, hi2) = (lo * lo, hi * hi);
    let mut scatterers = Vec::with_capacity(count);
    while scatterers.len() < count {
        let range = (lo2 + (hi2 - lo2) * rng.gen::<f64>()).sqrt();
        let angle = sector * (rng.gen::<f64>() - 0.5);
        let reflectivity: f64 = StandardNormal.sample(&mut rng);
        // the open window excludes the (measure-zero) boundary draws
        if range > lo && range < hi {
            scatterers.push(Scatterer {
                range,
                angle,
                reflectivity,
            });
        }
    }
    Ok(ScattererField {
        scatterers,
        label: "speckle".into(),
        seed,
        depth_window,
    })
}

fn polar_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let pa = (a.0 * a.1.sin(), a.0 * a.1.cos());
    let pb = (b.0 * b.1.sin(), b.0 * b.1.cos());
    ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt()
}

/// Speckle with an anechoic circular cyst and bright point targets
/// (reflectivity 20× the speckle RMS).
pub fn make_cyst_phantom(
    base: SpeckleParams,
    cyst_center: (f64, f64),
    cyst_radius: f64,
    point_targets: &[(f64, f64)],
    seed: u64,
) -> Result<ScattererField> {
    base.validate()?;
    if !(cyst_radius >= 0.0 && cyst_radius.is_finite()) {
        return Err(Error::config(format!("cyst radius must be non-negative, got {cyst_radius}")));
    }
    if !base.contains(cyst_center.0, cyst_center.1) {
        return Err(Error::config(format!(
            "cyst center ({} m, {} rad) lies outside the sector/depth window",
            cyst_center.0, cyst_center.1
        )));
    }
    for &(r, a) in point_targets {
        if !base.contains(r, a) {
            return Err(Error::config(format!("point target ({r} m, {a} rad) outside the sector")));
        }
    }
    let mut field = make_speckle_phantom(base.density, base.depth_window, base.sector, seed)?;
    let bright = 20.0 * field.rms_reflectivity();
    field
        .scatterers
        .retain(|s| polar_distance((s.range, s.angle), cyst_center) >= cyst_radius);
    field.scatterers.extend(point_targets.iter().map(|&(range, angle)| Scatterer {
        range,
        angle,
        reflectivity: bright,
    }));
    field.label = "cyst".into();
    Ok(field)
}

/// Speckle with 2–3 anechoic chambers surrounded by brighter wall rings.
pub fn make_cardiac_phantom(base: SpeckleParams, seed: u64) -> Result<ScattererField> {
    base.validate()?;
    let mut field = make_speckle_phantom(base.density, base.depth_window, base.sector, seed)?;
    // chamber layout comes from an independent stream so it does not shift the speckle draw
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (lo, hi) = base.depth_window;
    let depth = hi - lo;
    let chambers = 2 + rng.gen_range(0..2);
    let mut regions = Vec::with_capacity(chambers);
    for _ in 0..chambers {
        let r = lo + depth * (0.2 + 0.6 * rng.gen::<f64>());
        let a = base.sector * 0.35 * (2.0 * rng.gen::<f64>() - 1.0);
        let radius = depth * (0.06 + 0.08 * rng.gen::<f64>());
        let wall = radius * (0.3 + 0.3 * rng.gen::<f64>());
        let gain = 1.5 + 1.5 * rng.gen::<f64>();
        regions.push(((r, a), radius, wall, gain));
    }
    field.scatterers.retain_mut(|s| {
        let mut keep = true;
        for &(center, radius, wall, gain) in &regions {
            let d = polar_distance((s.range, s.angle), center);
            if d < radius {
                keep = false;
                break;
            }
            let x = (d - radius - 0.5 * wall) / (0.5 * wall);
            s.reflectivity *= 1.0 + gain * (-x * x).exp();
        }
        keep
    });
    field.label = "cardiac".into();
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SpeckleParams {
        SpeckleParams {
            density: 2.0e6,
            depth_window: (0.01, 0.03),
            sector: 0.25,
        }
    }

    #[test]
    fn geometry_invariants() {
        let g = ArrayGeometry::desk_default();
        assert_eq!(g.element_count, 64);
        g.validate().unwrap();
        assert!((g.modulation_frequency - 2.0 * PI * 2.5e6).abs() < 1e-6);
        let s = ScanGrid::desk_default();
        assert_eq!(s.line_count, 140);
        s.validate().unwrap();
        assert!((s.line_angles[0] + s.line_angles[139]).abs() < 1e-12);
        assert!(ArrayGeometry::new(0, 1e-3, 1540.0, 2e6, 4e6, 10).is_err());
        assert!(ArrayGeometry::new(4, 1e-3, -1.0, 2e6, 4e6, 10).is_err());
    }

    #[test]
    fn zero_expected_count_is_empty() {
        let f = make_speckle_phantom(1e-9, (0.01, 0.02), 0.2, 7).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn zero_density_or_bad_window_rejected() {
        assert!(matches!(make_speckle_phantom(0.0, (0.01, 0.02), 0.2, 1), Err(Error::Config(_))));
        assert!(matches!(make_speckle_phantom(1e6, (0.02, 0.02), 0.2, 1), Err(Error::Config(_))));
    }

    #[test]
    fn speckle_deterministic_and_inside() {
        let p = params();
        let a = make_speckle_phantom(p.density, p.depth_window, p.sector, 42).unwrap();
        let b = make_speckle_phantom(p.density, p.depth_window, p.sector, 42).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.scatterers.iter().all(|s| s.angle.abs() <= p.sector / 2.0));
    }

    #[test]
    fn degenerate_cyst_keeps_speckle() {
        let p = params();
        let base = make_speckle_phantom(p.density, p.depth_window, p.sector, 5).unwrap();
        let points = [(0.02, 0.0)];
        let c = make_cyst_phantom(p, (0.02, 0.0), 0.0, &points, 5).unwrap();
        assert_eq!(c.len(), base.len() + 1);
        assert_eq!(&c.scatterers[..base.len()], &base.scatterers[..]);
    }

    #[test]
    fn covering_cyst_empties_field() {
        let p = params();
        let c = make_cyst_phantom(p, (0.02, 0.0), 1.0, &[], 5).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn cyst_outside_sector_rejected() {
        let p = params();
        assert!(matches!(make_cyst_phantom(p, (0.02, 1.0), 0.002, &[], 5), Err(Error::Config(_))));
    }

    #[test]
    fn cardiac_phantom_has_holes() {
        let p = params();
        let base = make_speckle_phantom(p.density, p.depth_window, p.sector, 9).unwrap();
        let c = make_cardiac_phantom(p, 9).unwrap();
        assert!(c.len() < base.len());
        c.validate().unwrap();
    }
}
