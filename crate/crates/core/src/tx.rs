//! Transmit patterns as a linear combination matrix ψ over single-line
//! acquisitions.
//!
//! Row `j` of ψ (`M × L`) describes emulated acquisition `j` as a weighted sum
//! of the `L` original focused transmits. Because first-harmonic imaging is
//! linear, applying ψ to the received per-element data is equivalent to
//! firing the combined transmit.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CustomOp, Tensor};
use crate::phantom::{ChannelData, PulseSpec, ScanGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InitKind {
    Mla,
    Mlt,
    Random,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Mla => "MLA",
            InitKind::Mlt => "MLT",
            InitKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxScheme {
    pub init_kind: InitKind,
    #[serde(rename = "L")]
    pub lines: usize,
    #[serde(rename = "M")]
    pub acquisitions: usize,
    #[serde(rename = "D")]
    pub decimation: usize,
    /// Output line → acquisition it is beamformed from.
    pub assignment: Vec<usize>,
    /// Row-major `M × L`.
    pub psi: Vec<f64>,
    #[serde(default = "default_trainable")]
    pub trainable: bool,
}

fn default_trainable() -> bool {
    true
}

fn check_decimation(lines: usize, decimation: usize) -> Result<()> {
    if lines == 0 {
        return Err(Error::config("line count must be positive"));
    }
    if decimation == 0 || decimation > lines {
        return Err(Error::config(format!(
            "decimation {decimation} outside [1, {lines}]"
        )));
    }
    Ok(())
}

impl TxScheme {
    /// Wide transmits: acquisition `j` averages SLA lines `[jD, (j+1)D)`.
    pub fn mla(lines: usize, decimation: usize) -> Result<Self> {
        check_decimation(lines, decimation)?;
        let m = lines.div_ceil(decimation);
        let mut psi = vec![0.0; m * lines];
        for j in 0..m {
            let lo = j * decimation;
            let hi = ((j + 1) * decimation).min(lines);
            let weight = 1.0 / (hi - lo) as f64;
            psi[j * lines + lo..j * lines + hi].fill(weight);
        }
        Ok(Self {
            init_kind: InitKind::Mla,
            lines,
            acquisitions: m,
            decimation,
            assignment: (0..lines).map(|k| k / decimation).collect(),
            psi,
            trainable: true,
        })
    }

    /// Comb of narrow beams: acquisition `j` sums SLA lines `j, j+M, j+2M, …`.
    pub fn mlt(lines: usize, decimation: usize) -> Result<Self> {
        check_decimation(lines, decimation)?;
        let m = lines.div_ceil(decimation);
        let mut psi = vec![0.0; m * lines];
        for j in 0..m {
            for col in (j..lines).step_by(m) {
                psi[j * lines + col] = 1.0;
            }
        }
        Ok(Self {
            init_kind: InitKind::Mlt,
            lines,
            acquisitions: m,
            decimation,
            assignment: (0..lines).map(|k| k % m).collect(),
            psi,
            trainable: true,
        })
    }

    /// i.i.d. uniform [0, 1) weights, each row normalized to unit sum.
    pub fn random(lines: usize, acquisitions: usize, seed: u64) -> Result<Self> {
        if lines == 0 || acquisitions == 0 || acquisitions > lines {
            return Err(Error::config(format!(
                "acquisition count {acquisitions} outside [1, {lines}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi: Vec<f64> = (0..acquisitions * lines).map(|_| rng.gen::<f64>()).collect();
        for row in psi.chunks_exact_mut(lines) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(Self {
            init_kind: InitKind::Random,
            lines,
            acquisitions,
            decimation: lines.div_ceil(acquisitions),
            assignment: (0..lines).map(|k| k * acquisitions / lines).collect(),
            psi,
            trainable: true,
        })
    }

    /// Single-line acquisition (ψ = I).
    pub fn identity(lines: usize) -> Result<Self> {
        Self::mla(lines, 1)
    }

    /// Builds a scheme of the given kind; for `Random`, `M = ceil(L / D)`.
    pub fn from_kind(kind: InitKind, lines: usize, decimation: usize, seed: u64) -> Result<Self> {
        match kind {
            InitKind::Mla => Self::mla(lines, decimation),
            InitKind::Mlt => Self::mlt(lines, decimation),
            InitKind::Random => {
                check_decimation(lines, decimation)?;
                Self::random(lines, lines.div_ceil(decimation), seed)
            }
        }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.decimation, self.init_kind)
    }

    pub fn psi_tensor(&self) -> Tensor {
        Tensor::new(&[self.acquisitions, self.lines], self.psi.clone()).expect("validated")
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.psi[j * self.lines..(j + 1) * self.lines]
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi.len() != self.acquisitions * self.lines {
            return Err(Error::shape(format!(
                "psi has {} entries, expected {}×{}",
                self.psi.len(),
                self.acquisitions,
                self.lines
            )));
        }
        if self.assignment.len() != self.lines {
            return Err(Error::config("assignment must cover every output line"));
        }
        if let Some(k) = self.assignment.iter().position(|&j| j >= self.acquisitions) {
            return Err(Error::config(format!(
                "line {k} assigned to acquisition {} of {}",
                self.assignment[k], self.acquisitions
            )));
        }
        if self.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("psi has non-finite entries"));
        }
        Ok(())
    }

    /// Frobenius distance between two ψ matrices of equal shape.
    pub fn distance(&self, other: &TxScheme) -> f64 {
        self.psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scheme: TxScheme = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        scheme.validate()?;
        Ok(scheme)
    }
}

/// `out[j, :] = Σ_i ψ[j, i] · x[i, :]` over rows of length `row_len`.
pub fn combine_rows(psi: &[f64], acquisitions: usize, lines: usize, x: &[f64], row_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; acquisitions * row_len];
    for j in 0..acquisitions {
        let dst = &mut out[j * row_len..(j + 1) * row_len];
        for i in 0..lines {
            let w = psi[j * lines + i];
            if w == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(&x[i * row_len..(i + 1) * row_len]) {
                *d += w * s;
            }
        }
    }
    out
}

/// `G[j, i] = Σ_r u[j, r] · x[i, r]`.
fn correlate_rows(upstream: &[f64], acquisitions: usize, x: &[f64], lines: usize, row_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; acquisitions * lines];
    crate::nn::ops::gemm(acquisitions, row_len, lines, upstream, false, x, true, 0.0, &mut g);
    g
}

fn check_sla(scheme: &TxScheme, sla: &ChannelData) -> Result<()> {
    scheme.validate()?;
    sla.validate()?;
    if sla.transmits != scheme.lines {
        return Err(Error::shape(format!(
            "channel data has {} transmits, scheme combines {}",
            sla.transmits, scheme.lines
        )));
    }
    Ok(())
}

/// Applies ψ across the transmit axis of single-line channel data.
pub fn emulate_acquisitions(scheme: &TxScheme, sla: &ChannelData) -> Result<ChannelData> {
    check_sla(scheme, sla)?;
    let row = sla.elements * sla.samples;
    let (xi, xq) = sla.to_f64();
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let i = combine_rows(&scheme.psi, scheme.acquisitions, scheme.lines, &xi, row);
    let q = combine_rows(&scheme.psi, scheme.acquisitions, scheme.lines, &xq, row);
    sla.with_values(scheme.acquisitions, to_f32(i), to_f32(q))
}

/// Gradient of a loss with respect to ψ given the gradient at the emulated
/// acquisitions (`[M, E, T]` for each of I and Q).
pub fn grad_psi(scheme: &TxScheme, sla: &ChannelData, upstream_i: &[f64], upstream_q: &[f64]) -> Result<Vec<f64>> {
    check_sla(scheme, sla)?;
    let row = sla.elements * sla.samples;
    let n = scheme.acquisitions * row;
    if upstream_i.len() != n || upstream_q.len() != n {
        return Err(Error::shape(format!(
            "upstream gradient has {}/{} values, expected {n}",
            upstream_i.len(),
            upstream_q.len()
        )));
    }
    let (xi, xq) = sla.to_f64();
    let mut g = correlate_rows(upstream_i, scheme.acquisitions, &xi, scheme.lines, row);
    let gq = correlate_rows(upstream_q, scheme.acquisitions, &xq, scheme.lines, row);
    g.iter_mut().zip(gq).for_each(|(a, b)| *a += b);
    Ok(g)
}

/// Emulation as a graph node: input ψ `[M, L]`, constant single-line data
/// stacked as `[2, L, E, T]`; output `[2, M, E, T]`.
pub struct EmulateOp {
    sla: Arc<Vec<f64>>,
    lines: usize,
    elements: usize,
    samples: usize,
}

impl EmulateOp {
    pub fn new(sla: &ChannelData) -> Self {
        Self::from_stacked(Arc::new(sla.to_stacked_f64()), sla.transmits, sla.elements, sla.samples)
    }

    pub fn from_stacked(sla: Arc<Vec<f64>>, lines: usize, elements: usize, samples: usize) -> Self {
        Self {
            sla,
            lines,
            elements,
            samples,
        }
    }
}

impl CustomOp for EmulateOp {
    fn name(&self) -> &'static str {
        "emulate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let psi = inputs[0];
        let [m, l] = psi.shape() else {
            return Err(Error::shape(format!("psi must be [M, L], got {:?}", psi.shape())));
        };
        let (m, l) = (*m, *l);
        if l != self.lines {
            return Err(Error::shape(format!("psi has {l} columns for {} transmits", self.lines)));
        }
        let row = self.elements * self.samples;
        let half = l * row;
        let mut out = combine_rows(psi.data(), m, l, &self.sla[..half], row);
        out.extend(combine_rows(psi.data(), m, l, &self.sla[half..], row));
        Tensor::new(&[2, m, self.elements, self.samples], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let psi = inputs[0];
        let (m, l) = (psi.shape()[0], psi.shape()[1]);
        let row = self.elements * self.samples;
        let (gi, gq) = grad.data().split_at(m * row);
        let (xi, xq) = self.sla.split_at(l * row);
        let mut g = correlate_rows(gi, m, xi, l, row);
        for (a, b) in g.iter_mut().zip(correlate_rows(gq, m, xq, l, row)) {
            *a += b;
        }
        Ok(vec![Some(Tensor::new(&[m, l], g)?)])
    }
}

/// Angular transmit field synthesized by each acquisition,
/// `profile[j][θ] = Σ_i ψ[j, i] · w_tx(α_i, θ)`.
pub fn effective_beam_profile(scheme: &TxScheme, pulse: &PulseSpec, grid: &ScanGrid, thetas: &[f64]) -> Result<Vec<Vec<f64>>> {
    scheme.validate()?;
    if grid.line_count != scheme.lines {
        return Err(Error::shape(format!(
            "grid has {} lines, scheme {}",
            grid.line_count, scheme.lines
        )));
    }
    Ok((0..scheme.acquisitions)
        .map(|j| {
            thetas
                .iter()
                .map(|&theta| {
                    scheme
                        .row(j)
                        .iter()
                        .zip(&grid.line_angles)
                        .map(|(w, &alpha)| w * pulse.tx_weight(alpha, theta))
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// CSV with a `theta` column followed by one column per acquisition.
pub fn write_beam_profiles_csv(path: impl AsRef<Path>, thetas: &[f64], profiles: &[Vec<f64>], prefix: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("theta");
    for j in 0..profiles.len() {
        out.push_str(&format!(",{prefix}{j}"));
    }
    out.push('\n');
    for (t, theta) in thetas.iter().enumerate() {
        out.push_str(&format!("{theta:.9}"));
        for p in profiles {
            out.push_str(&format!(",{:.9e}", p[t]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mla_shapes() {
        let s = TxScheme::mla(140, 10).unwrap();
        assert_eq!(s.acquisitions, 14);
        let s = TxScheme::mla(140, 7).unwrap();
        assert_eq!(s.acquisitions, 20);
        for j in 0..20 {
            assert!((s.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mla_identity_at_d1() {
        let s = TxScheme::mla(140, 1).unwrap();
        for j in 0..140 {
            for i in 0..140 {
                assert_eq!(s.psi[j * 140 + i], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(s.assignment.iter().enumerate().all(|(k, &a)| a == k));
    }

    #[test]
    fn mla_short_last_block_renormalized() {
        let s = TxScheme::mla(28, 10).unwrap();
        assert_eq!(s.acquisitions, 3);
        assert_eq!(s.row(2)[20], 1.0 / 8.0);
        assert_eq!(s.assignment[27], 2);
    }

    #[test]
    fn mlt_comb() {
        let s = TxScheme::mlt(140, 10).unwrap();
        assert_eq!(s.acquisitions, 14);
        for j in 0..14 {
            let cols: Vec<usize> = (0..140).filter(|&i| s.row(j)[i] != 0.0).collect();
            assert_eq!(cols, (0..10).map(|n| j + 14 * n).collect::<Vec<_>>());
            assert!(cols.iter().all(|&i| s.row(j)[i] == 1.0));
        }
        let s = TxScheme::mlt(28, 4).unwrap();
        assert_eq!(s.acquisitions, 7);
        let cols: Vec<usize> = (0..28).filter(|&i| s.row(0)[i] != 0.0).collect();
        assert_eq!(cols, vec![0, 7, 14, 21]);
        let s = TxScheme::mlt(140, 1).unwrap();
        assert!(s.assignment.iter().enumerate().all(|(k, &a)| a == k));
    }

    #[test]
    fn random_rows_normalized_and_seeded() {
        let a = TxScheme::random(140, 14, 9).unwrap();
        let b = TxScheme::random(140, 14, 9).unwrap();
        assert_eq!(a, b);
        for j in 0..14 {
            assert!((a.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..j {
                assert_ne!(a.row(j), a.row(k));
            }
        }
        let sq = TxScheme::random(5, 5, 1).unwrap();
        assert_eq!(sq.psi.len(), 25);
        assert!((sq.row(4).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_decimation_rejected() {
        assert!(matches!(TxScheme::mla(10, 0), Err(Error::Config(_))));
        assert!(matches!(TxScheme::mlt(10, 11), Err(Error::Config(_))));
        assert!(matches!(TxScheme::random(10, 11, 0), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.json");
        let s = TxScheme::mlt(28, 4).unwrap();
        s.save_json(&path).unwrap();
        assert_eq!(TxScheme::load_json(&path).unwrap(), s);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"init_kind\": \"MLT\""));
        assert!(text.contains("\"L\": 28"));
    }

    #[test]
    fn identity_profile_is_single_gaussian() {
        let grid = ScanGrid::small_test();
        let pulse = PulseSpec::desk_default();
        let s = TxScheme::identity(28).unwrap();
        let p = effective_beam_profile(&s, &pulse, &grid, &grid.line_angles).unwrap();
        for (k, row) in p.iter().enumerate() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k);
            assert_eq!(row[k], 1.0);
        }
        let mut zero = s.clone();
        zero.psi[..28].fill(0.0);
        let p = effective_beam_profile(&zero, &pulse, &grid, &grid.line_angles).unwrap();
        assert!(p[0].iter().all(|&v| v == 0.0));
    }
}
