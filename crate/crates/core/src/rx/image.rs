use std::io::Write as _;
use std::path::Path;

use super::focus::{dynamic_focus, ApodizationWindow, FocusedIQ};
use crate::error::{Error, Result};
use crate::nn::ops::ENVELOPE_EPS;
use crate::phantom::{ArrayGeometry, ChannelData, ScanGrid};
use crate::tx::TxScheme;

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Non-negative envelope `[line][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    pub lines: usize,
    pub samples: usize,
    pub values: Vec<f64>,
}

impl EnvelopeImage {
    pub fn new(lines: usize, samples: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != lines * samples {
            return Err(Error::shape(format!(
                "envelope needs {} values, got {}",
                lines * samples,
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::numerical("envelope values must be non-negative"));
        }
        Ok(Self { lines, samples, values })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &b| a.max(b))
    }
}

/// 8-bit image, row-major `rows × cols`. Polar images use rows = lines,
/// cols = samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl DisplayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}×{cols} image needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn from_values(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        let pixels = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Self::new(rows, cols, pixels)
    }

    pub fn transposed(&self) -> Self {
        let mut pixels = vec![0u8; self.pixels.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                pixels[c * self.rows + r] = self.pixels[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            pixels,
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    /// Binary 8-bit PGM (`P5`).
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write!(f, "P5\n{} {}\n255\n", self.cols, self.rows).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.pixels).map_err(|e| Error::io(path, e))
    }
}

pub fn envelope(i: &[f64], q: &[f64], lines: usize, samples: usize) -> Result<EnvelopeImage> {
    if i.len() != q.len() {
        return Err(Error::shape(format!("I has {} values, Q {}", i.len(), q.len())));
    }
    let eps2 = ENVELOPE_EPS * ENVELOPE_EPS;
    let values = i.iter().zip(q).map(|(a, b)| (a * a + b * b + eps2).sqrt()).collect();
    EnvelopeImage::new(lines, samples, values)
}

pub fn envelope_of(focused: &FocusedIQ) -> Result<EnvelopeImage> {
    envelope(&focused.i, &focused.q, focused.lines, focused.samples)
}

/// Normalizes by the frame maximum, clamps to `[−DR, 0]` dB and maps to `[0, 255]`.
pub fn log_compress(env: &EnvelopeImage, dynamic_range_db: f64) -> Result<DisplayImage> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::config("dynamic range must be positive"));
    }
    let peak = env.max();
    let values: Vec<f64> = if peak <= 0.0 {
        vec![0.0; env.values.len()]
    } else {
        env.values
            .iter()
            .map(|&v| {
                let db = if v > 0.0 { 20.0 * (v / peak).log10() } else { -dynamic_range_db };
                let db = db.clamp(-dynamic_range_db, 0.0);
                255.0 * (1.0 + db / dynamic_range_db)
            })
            .collect()
    };
    DisplayImage::from_values(env.lines, env.samples, &values)
}

/// Cartesian raster extent `(x_min, x_max, z_max)` of a sector scan.
pub fn raster_extent(grid: &ScanGrid, geom: &ArrayGeometry) -> (f64, f64, f64) {
    let r_max = geom.speed_of_sound * geom.duration() / 2.0;
    let lo = grid.first_angle();
    let hi = grid.line_angles[grid.line_count - 1];
    let x_min = r_max * lo.sin().min(0.0);
    let x_max = r_max * hi.sin().max(0.0);
    (x_min, x_max, r_max)
}

/// Bilinear polar → Cartesian resampling of an `[L, T]` image onto a
/// `height × width` raster; pixels outside the sector are 0.
pub fn scan_convert(image: &[f64], grid: &ScanGrid, geom: &ArrayGeometry, raster: (usize, usize)) -> Result<Vec<f64>> {
    let (width, height) = raster;
    if width < 2 || height < 2 {
        return Err(Error::config(format!("degenerate raster {width}×{height}")));
    }
    let (lines, samples) = (grid.line_count, geom.sample_count);
    if image.len() != lines * samples {
        return Err(Error::shape(format!(
            "image has {} values, grid×samples is {lines}×{samples}",
            image.len()
        )));
    }
    let (x_min, x_max, z_max) = raster_extent(grid, geom);
    let sample_per_meter = 2.0 * geom.sample_rate / geom.speed_of_sound;
    let mut out = vec![0.0; width * height];
    for py in 0..height {
        let z = (py as f64 + 0.5) * z_max / height as f64;
        for px in 0..width {
            let x = x_min + (px as f64 + 0.5) * (x_max - x_min) / width as f64;
            let r = (x * x + z * z).sqrt();
            let a = x.atan2(z);
            let lp = grid.line_position(a);
            let sp = r * sample_per_meter;
            if !(0.0..=(lines - 1) as f64).contains(&lp) || !(0.0..=(samples - 1) as f64).contains(&sp) {
                continue;
            }
            let (l0, s0) = (lp.floor() as usize, sp.floor() as usize);
            let (l1, s1) = ((l0 + 1).min(lines - 1), (s0 + 1).min(samples - 1));
            let (fl, fs) = (lp - l0 as f64, sp - s0 as f64);
            let at = |l: usize, s: usize| image[l * samples + s];
            out[py * width + px] = (1.0 - fl) * ((1.0 - fs) * at(l0, s0) + fs * at(l0, s1))
                + fl * ((1.0 - fs) * at(l1, s0) + fs * at(l1, s1));
        }
    }
    Ok(out)
}

/// Scan conversion of an 8-bit polar display image.
pub fn scan_convert_display(image: &DisplayImage, grid: &ScanGrid, geom: &ArrayGeometry, raster: (usize, usize)) -> Result<DisplayImage> {
    let values = scan_convert(&image.as_f64(), grid, geom, raster)?;
    DisplayImage::from_values(raster.1, raster.0, &values)
}

/// Delay-and-sum: dynamic focusing followed by envelope detection, no network.
pub fn das_reconstruct(data: &ChannelData, scheme: &TxScheme, geom: &ArrayGeometry, grid: &ScanGrid, window: &ApodizationWindow) -> Result<EnvelopeImage> {
    envelope_of(&dynamic_focus(data, scheme, geom, grid, window)?)
}
