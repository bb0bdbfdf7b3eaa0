use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::delay::{delay_unchecked, interp_taps};
use crate::error::{Error, Result};
use crate::nn::{CustomOp, Tensor};
use crate::phantom::{ArrayGeometry, ChannelData, ScanGrid};
use crate::tx::TxScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WindowKind {
    Hann,
    Rect,
}

/// Per-element receive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApodizationWindow {
    pub kind: WindowKind,
    pub weights: Vec<f64>,
}

impl ApodizationWindow {
    pub fn new(kind: WindowKind, elements: usize) -> Self {
        let weights = match kind {
            WindowKind::Rect => vec![1.0; elements],
            // sin² taper that never reaches zero on the outermost elements
            WindowKind::Hann => (0..elements)
                .map(|m| {
                    let x = std::f64::consts::PI * (m as f64 + 1.0) / (elements as f64 + 1.0);
                    x.sin().powi(2)
                })
                .collect(),
        };
        Self { kind, weights }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::config("apodization weights must lie in [0, 1]"));
        }
        let n = self.weights.len();
        for m in 0..n / 2 {
            if (self.weights[m] - self.weights[n - 1 - m]).abs() > 1e-12 {
                return Err(Error::config("apodization window must be symmetric"));
            }
        }
        Ok(())
    }
}

/// Where a beamformed frame came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FocusSource {
    Sla,
    Scheme(String),
}

/// Beamformed complex lines `[line][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusedIQ {
    pub lines: usize,
    pub samples: usize,
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub grid: ScanGrid,
    pub source: FocusSource,
}

impl FocusedIQ {
    pub fn validate(&self) -> Result<()> {
        let n = self.lines * self.samples;
        if self.i.len() != n || self.q.len() != n {
            return Err(Error::shape("focused I/Q lengths do not match [lines, samples]"));
        }
        if self.i.iter().chain(&self.q).any(|v| !v.is_finite()) {
            return Err(Error::numerical("focused I/Q contains non-finite values"));
        }
        Ok(())
    }

    /// Packs into a single-element `ChannelData` for the `USIQ` container.
    pub fn to_channel_data(&self, geom: &ArrayGeometry) -> Result<ChannelData> {
        let mut g = ArrayGeometry::new(1, 1.0, geom.speed_of_sound, geom.carrier_frequency, geom.sample_rate, self.samples)?;
        g.element_positions = vec![0.0];
        Ok(ChannelData {
            transmits: self.lines,
            elements: 1,
            samples: self.samples,
            i: self.i.iter().map(|&v| v as f32).collect(),
            q: self.q.iter().map(|&v| v as f32).collect(),
            geometry: g,
            grid: self.grid.clone(),
        })
    }
}

/// Dynamic receive focusing for a fixed geometry, grid, window and
/// line-to-acquisition assignment. Linear in its input; `apply` and
/// `adjoint` evaluate identical interpolation/rotation weights.
#[derive(Debug, Clone)]
pub struct Focuser {
    element_delay: Vec<f64>,
    apodization: Vec<f64>,
    sin_alpha: Vec<f64>,
    assignment: Vec<usize>,
    acquisitions: usize,
    samples: usize,
    fs: f64,
    omega0: f64,
}

impl Focuser {
    pub fn new(geom: &ArrayGeometry, grid: &ScanGrid, window: &ApodizationWindow, assignment: &[usize], acquisitions: usize) -> Result<Self> {
        geom.validate()?;
        grid.validate()?;
        window.validate()?;
        if window.weights.len() != geom.element_count {
            return Err(Error::shape(format!(
                "window has {} weights for {} elements",
                window.weights.len(),
                geom.element_count
            )));
        }
        if assignment.len() != grid.line_count {
            return Err(Error::config(format!(
                "assignment covers {} lines, grid has {}",
                assignment.len(),
                grid.line_count
            )));
        }
        if let Some(&j) = assignment.iter().find(|&&j| j >= acquisitions) {
            return Err(Error::config(format!("assignment refers to acquisition {j} of {acquisitions}")));
        }
        Ok(Self {
            element_delay: geom.element_positions.iter().map(|d| d / geom.speed_of_sound).collect(),
            apodization: window.weights.clone(),
            sin_alpha: grid.line_angles.iter().map(|a| a.sin()).collect(),
            assignment: assignment.to_vec(),
            acquisitions,
            samples: geom.sample_count,
            fs: geom.sample_rate,
            omega0: geom.modulation_frequency,
        })
    }

    pub fn for_scheme(scheme: &TxScheme, geom: &ArrayGeometry, grid: &ScanGrid, window: &ApodizationWindow) -> Result<Self> {
        scheme.validate()?;
        if scheme.lines != grid.line_count {
            return Err(Error::shape(format!(
                "scheme combines {} lines, grid has {}",
                scheme.lines, grid.line_count
            )));
        }
        Self::new(geom, grid, window, &scheme.assignment, scheme.acquisitions)
    }

    pub fn lines(&self) -> usize {
        self.assignment.len()
    }

    pub fn elements(&self) -> usize {
        self.apodization.len()
    }

    pub fn acquisitions(&self) -> usize {
        self.acquisitions
    }

    pub fn input_len(&self) -> usize {
        self.acquisitions * self.elements() * self.samples
    }

    pub fn output_len(&self) -> usize {
        self.lines() * self.samples
    }

    /// Calls `f(n, n0, w0, w1, cos, sin)` for every output sample of line `k`
    /// through element `m`, with apodization folded into the rotation.
    #[inline]
    fn taps(&self, k: usize, m: usize, mut f: impl FnMut(usize, isize, f64, f64, f64, f64)) {
        let apod = self.apodization[m];
        if apod == 0.0 {
            return;
        }
        let d = self.element_delay[m];
        let s_alpha = self.sin_alpha[k];
        for n in 0..self.samples {
            let t = n as f64 / self.fs;
            let t_hat = delay_unchecked(t, s_alpha, d);
            let (n0, w0, w1) = interp_taps(t_hat * self.fs);
            let (s, c) = (self.omega0 * (t_hat - t)).sin_cos();
            f(n, n0, w0, w1, apod * c, apod * s);
        }
    }

    fn focus_line(&self, k: usize, in_i: &[f64], in_q: &[f64], out_i: &mut [f64], out_q: &mut [f64]) {
        let t_len = self.samples;
        let e = self.elements();
        let j = self.assignment[k];
        for m in 0..e {
            let base = (j * e + m) * t_len;
            let xi = &in_i[base..base + t_len];
            let xq = &in_q[base..base + t_len];
            self.taps(k, m, |n, n0, w0, w1, c, s| {
                let (mut si, mut sq) = (0.0, 0.0);
                if n0 >= 0 && (n0 as usize) < t_len {
                    si += w0 * xi[n0 as usize];
                    sq += w0 * xq[n0 as usize];
                }
                let n1 = n0 + 1;
                if n1 >= 0 && (n1 as usize) < t_len {
                    si += w1 * xi[n1 as usize];
                    sq += w1 * xq[n1 as usize];
                }
                out_i[n] += c * si - s * sq;
                out_q[n] += s * si + c * sq;
            });
        }
    }

    /// `[M, E, T]` I and Q → `[L, T]` I and Q.
    pub fn apply(&self, in_i: &[f64], in_q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if in_i.len() != self.input_len() || in_q.len() != self.input_len() {
            return Err(Error::shape(format!(
                "focusing expects {} input samples per component, got {}/{}",
                self.input_len(),
                in_i.len(),
                in_q.len()
            )));
        }
        let t_len = self.samples;
        let mut out_i = vec![0.0; self.output_len()];
        let mut out_q = vec![0.0; self.output_len()];
        out_i
            .par_chunks_mut(t_len)
            .zip(out_q.par_chunks_mut(t_len))
            .enumerate()
            .for_each(|(k, (oi, oq))| self.focus_line(k, in_i, in_q, oi, oq));
        Ok((out_i, out_q))
    }

    /// Transpose of [`Focuser::apply`]: `[L, T]` → `[M, E, T]`.
    pub fn adjoint(&self, grad_i: &[f64], grad_q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if grad_i.len() != self.output_len() || grad_q.len() != self.output_len() {
            return Err(Error::shape("adjoint focusing input does not match [lines, samples]"));
        }
        let t_len = self.samples;
        let e = self.elements();
        let mut gi = vec![0.0; self.input_len()];
        let mut gq = vec![0.0; self.input_len()];
        for k in 0..self.lines() {
            let j = self.assignment[k];
            let ui = &grad_i[k * t_len..(k + 1) * t_len];
            let uq = &grad_q[k * t_len..(k + 1) * t_len];
            for m in 0..e {
                let base = (j * e + m) * t_len;
                let (di, dq) = (&mut gi[base..base + t_len], &mut gq[base..base + t_len]);
                self.taps(k, m, |n, n0, w0, w1, c, s| {
                    let bi = c * ui[n] + s * uq[n];
                    let bq = -s * ui[n] + c * uq[n];
                    if n0 >= 0 && (n0 as usize) < t_len {
                        di[n0 as usize] += w0 * bi;
                        dq[n0 as usize] += w0 * bq;
                    }
                    let n1 = n0 + 1;
                    if n1 >= 0 && (n1 as usize) < t_len {
                        di[n1 as usize] += w1 * bi;
                        dq[n1 as usize] += w1 * bq;
                    }
                });
            }
        }
        Ok((gi, gq))
    }
}

/// Focusing as a graph node: `[2, M, E, T]` → `[2, L, T]`.
pub struct FocusOp {
    focuser: Arc<Focuser>,
}

impl FocusOp {
    pub fn new(focuser: Arc<Focuser>) -> Self {
        Self { focuser }
    }
}

impl CustomOp for FocusOp {
    fn name(&self) -> &'static str {
        "dynamic_focus"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let half = self.focuser.input_len();
        if x.len() != 2 * half {
            return Err(Error::shape(format!("focus input {:?} does not hold [2, M, E, T]", x.shape())));
        }
        let (xi, xq) = x.data().split_at(half);
        let (mut oi, oq) = self.focuser.apply(xi, xq)?;
        oi.extend(oq);
        Tensor::new(&[2, self.focuser.lines(), self.focuser.samples], oi)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (gi, gq) = grad.data().split_at(self.focuser.output_len());
        let (mut ai, aq) = self.focuser.adjoint(gi, gq)?;
        ai.extend(aq);
        Ok(vec![Some(Tensor::new(inputs[0].shape(), ai)?)])
    }
}

/// Delay, phase-rotate, apodize and sum each output line from its assigned acquisition.
pub fn dynamic_focus(data: &ChannelData, scheme: &TxScheme, geom: &ArrayGeometry, grid: &ScanGrid, window: &ApodizationWindow) -> Result<FocusedIQ> {
    data.validate()?;
    if data.transmits != scheme.acquisitions {
        return Err(Error::shape(format!(
            "data holds {} acquisitions, scheme has {}",
            data.transmits, scheme.acquisitions
        )));
    }
    if data.elements != geom.element_count || data.samples != geom.sample_count {
        return Err(Error::shape(format!(
            "data is [{}, {}, {}], geometry expects {} elements × {} samples",
            data.transmits, data.elements, data.samples, geom.element_count, geom.sample_count
        )));
    }
    let focuser = Focuser::for_scheme(scheme, geom, grid, window)?;
    let (xi, xq) = data.to_f64();
    let (i, q) = focuser.apply(&xi, &xq)?;
    let source = if scheme.acquisitions == scheme.lines && scheme.decimation == 1 {
        FocusSource::Sla
    } else {
        FocusSource::Scheme(scheme.name())
    };
    Ok(FocusedIQ {
        lines: grid.line_count,
        samples: geom.sample_count,
        i,
        q,
        grid: grid.clone(),
        source,
    })
}
