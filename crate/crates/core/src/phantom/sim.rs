use rayon::prelude::*;

use super::{ArrayGeometry, PulseSpec, ScanGrid, ScattererField};
use crate::error::{Error, Result};

/// Gaussian tails beyond this many sigmas are below 3e-11 and are skipped.
const SUPPORT_SIGMAS: f64 = 7.0;

/// Complex demodulated per-element samples, indexed `[transmit][element][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub transmits: usize,
    pub elements: usize,
    pub samples: usize,
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    pub geometry: ArrayGeometry,
    pub grid: ScanGrid,
}

impl ChannelData {
    pub fn zeros(transmits: usize, geometry: &ArrayGeometry, grid: &ScanGrid) -> Self {
        let n = transmits * geometry.element_count * geometry.sample_count;
        Self {
            transmits,
            elements: geometry.element_count,
            samples: geometry.sample_count,
            i: vec![0.0; n],
            q: vec![0.0; n],
            geometry: geometry.clone(),
            grid: grid.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.transmits * self.elements * self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.transmits, self.elements, self.samples)
    }

    pub fn index(&self, transmit: usize, element: usize, sample: usize) -> usize {
        (transmit * self.elements + element) * self.samples + sample
    }

    pub fn validate(&self) -> Result<()> {
        if self.i.len() != self.len() || self.q.len() != self.len() {
            return Err(Error::shape(format!(
                "I/Q lengths {}/{} do not match dims {:?}",
                self.i.len(),
                self.q.len(),
                self.dims()
            )));
        }
        if self.i.iter().chain(&self.q).any(|v| !v.is_finite()) {
            return Err(Error::numerical("channel data contains non-finite samples"));
        }
        Ok(())
    }

    /// I and Q widened to f64.
    pub fn to_f64(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.i.iter().map(|&v| v as f64).collect(),
            self.q.iter().map(|&v| v as f64).collect(),
        )
    }

    /// Packs I and Q into one `[2, transmits, elements, samples]` buffer.
    pub fn to_stacked_f64(&self) -> Vec<f64> {
        self.i.iter().chain(&self.q).map(|&v| v as f64).collect()
    }

    pub fn with_values(&self, transmits: usize, i: Vec<f32>, q: Vec<f32>) -> Result<Self> {
        let out = Self {
            transmits,
            elements: self.elements,
            samples: self.samples,
            i,
            q,
            geometry: self.geometry.clone(),
            grid: self.grid.clone(),
        };
        out.validate()?;
        Ok(out)
    }
}

/// Narrowband point-scatterer model: every focused transmit along `grid` weights
/// each scatterer by a Gaussian two-way beam and delays a Gaussian pulse by the
/// exact transmit + receive travel time to each element.
pub fn simulate_channel_data(
    field: &ScattererField,
    geom: &ArrayGeometry,
    grid: &ScanGrid,
    pulse: &PulseSpec,
) -> Result<ChannelData> {
    geom.validate()?;
    grid.validate()?;
    pulse.validate()?;
    field.validate()?;
    let c = geom.speed_of_sound;
    let needed = 2.0 * field.depth_window.1 / c;
    if needed > geom.duration() {
        return Err(Error::config(format!(
            "time axis of {:.3e} s does not cover the round trip {:.3e} s to r_max = {} m",
            geom.duration(),
            needed,
            field.depth_window.1
        )));
    }

    let mut data = ChannelData::zeros(grid.line_count, geom, grid);
    let per_tx = geom.element_count * geom.sample_count;
    let beam_cutoff = SUPPORT_SIGMAS * pulse.tx_beam_sigma;
    let half_support = SUPPORT_SIGMAS * pulse.envelope_sigma;
    let fs = geom.sample_rate;
    let omega = geom.modulation_frequency;
    let positions: Vec<(f64, f64, f64)> = field
        .scatterers
        .iter()
        .map(|s| {
            let (x, z) = s.position();
            (x, z, s.range)
        })
        .collect();

    data.i
        .par_chunks_mut(per_tx)
        .zip(data.q.par_chunks_mut(per_tx))
        .enumerate()
        .for_each(|(tx, (out_i, out_q))| {
            let alpha = grid.line_angles[tx];
            let mut acc_i = vec![0.0f64; per_tx];
            let mut acc_q = vec![0.0f64; per_tx];
            for (s, &(x, z, range)) in field.scatterers.iter().zip(&positions) {
                if (alpha - s.angle).abs() > beam_cutoff {
                    continue;
                }
                let amp = s.reflectivity * pulse.tx_weight(alpha, s.angle);
                for (m, &dm) in geom.element_positions.iter().enumerate() {
                    let dist = ((x - dm) * (x - dm) + z * z).sqrt();
                    let tau = (range + dist) / c;
                    let (sin_p, cos_p) = (omega * tau).sin_cos();
                    let first = ((tau - half_support) * fs).ceil().max(0.0) as usize;
                    let last = ((tau + half_support) * fs).floor();
                    if last < 0.0 {
                        continue;
                    }
                    let last = (last as usize).min(geom.sample_count - 1);
                    let row = m * geom.sample_count;
                    for n in first..=last {
                        let g = amp * pulse.envelope(n as f64 / fs - tau);
                        // exp(-iωτ) = cos(ωτ) - i sin(ωτ)
                        acc_i[row + n] += g * cos_p;
                        acc_q[row + n] -= g * sin_p;
                    }
                }
            }
            for (o, v) in out_i.iter_mut().zip(&acc_i) {
                *o = *v as f32;
            }
            for (o, v) in out_q.iter_mut().zip(&acc_q) {
                *o = *v as f32;
            }
        });

    data.validate()
        .map_err(|e| Error::numerical(format!("simulation produced invalid output: {e}")))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Scatterer;

    fn single(range: f64, angle: f64, a: f64) -> ScattererField {
        ScattererField {
            scatterers: vec![Scatterer {
                range,
                angle,
                reflectivity: a,
            }],
            label: "point".into(),
            seed: 0,
            depth_window: (0.005, 0.036),
        }
    }

    #[test]
    fn empty_field_is_zero() {
        let geom = ArrayGeometry::small_test();
        let grid = ScanGrid::small_test();
        let mut field = single(0.02, 0.0, 1.0);
        field.scatterers.clear();
        let d = simulate_channel_data(&field, &geom, &grid, &PulseSpec::desk_default()).unwrap();
        assert!(d.i.iter().chain(&d.q).all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_reflectivity_doubles_samples() {
        let geom = ArrayGeometry::small_test();
        let grid = ScanGrid::small_test();
        let p = PulseSpec::desk_default();
        let a = simulate_channel_data(&single(0.02, 0.01, 0.75), &geom, &grid, &p).unwrap();
        let b = simulate_channel_data(&single(0.02, 0.01, 1.5), &geom, &grid, &p).unwrap();
        for (x, y) in a.i.iter().zip(&b.i).chain(a.q.iter().zip(&b.q)) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn short_time_axis_rejected() {
        let geom = ArrayGeometry::small_test();
        let grid = ScanGrid::small_test();
        let mut field = single(0.02, 0.0, 1.0);
        field.depth_window = (0.005, 0.08);
        let err = simulate_channel_data(&field, &geom, &grid, &PulseSpec::desk_default());
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
