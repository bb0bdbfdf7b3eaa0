//! Versioned binary checkpoints with a JSON sidecar.
//!
//! ```text
//! "EBCK" | version u32 | stage u8 | iteration u64 | tx_iteration u64
//! architecture (depth, base_channels, kernel_size: u32)
//! Θ_I, Θ_Q tensors | scheme (kind, L, M, D, trainable, assignment, ψ)
//! Adam (hyperparameters, steps, moments) | optional momentum state
//! SHA-256 of all preceding bytes
//! ```
//!
//! Values are stored as f64 so a resumed run continues bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Stage;
use super::trainer::{ReconNetworkState, TrainState};
use crate::error::{Error, Result};
use crate::nn::{Adam, Architecture, MomentumDecay};
use crate::tx::{InitKind, TxScheme};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EBCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Human-readable companion of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub iteration: u64,
    pub stage: Stage,
    pub config_hash: String,
    pub scheme: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn values(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tensors(&mut self, ts: &[Vec<f64>]) {
        self.u32(ts.len());
        ts.iter().for_each(|t| self.values(t));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(field, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }
    fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn values(&mut self, field: &'static str) -> Result<Vec<f64>> {
        let n = self.u64(field)? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::format(field, format!("length {n} exceeds the file")));
        }
        (0..n).map(|_| self.f64(field)).collect()
    }
    fn tensors(&mut self, field: &'static str) -> Result<Vec<Vec<f64>>> {
        let n = self.u32(field)?;
        (0..n).map(|_| self.values(field)).collect()
    }
}

fn kind_code(k: InitKind) -> u8 {
    match k {
        InitKind::Mla => 0,
        InitKind::Mlt => 1,
        InitKind::Random => 2,
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u8(match state.stage {
        Stage::RxOnly => 0,
        Stage::Joint => 1,
    });
    w.u64(state.iteration);
    w.u64(state.tx_iteration);
    let a = state.network.arch;
    w.u32(a.depth);
    w.u32(a.base_channels);
    w.u32(a.kernel_size);
    w.tensors(&state.network.theta_i);
    w.tensors(&state.network.theta_q);

    let s = &state.scheme;
    w.u8(kind_code(s.init_kind));
    w.u32(s.lines);
    w.u32(s.acquisitions);
    w.u32(s.decimation);
    w.u8(s.trainable as u8);
    s.assignment.iter().for_each(|&j| w.u32(j));
    w.values(&s.psi);

    let adam = &state.net_optimizer;
    for v in [adam.learning_rate, adam.beta1, adam.beta2, adam.eps] {
        w.f64(v);
    }
    w.u64(adam.steps);
    w.tensors(&adam.first_moment);
    w.tensors(&adam.second_moment);

    match &state.tx_optimizer {
        None => w.u8(0),
        Some(m) => {
            w.u8(1);
            w.f64(m.initial_learning_rate);
            w.f64(m.momentum);
            w.f64(m.half_life);
            w.tensors(&m.buffer);
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not an echobeam checkpoint"));
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::format("header", "checkpoint truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "version",
            format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::format("checksum", "checkpoint contents are corrupted"));
    }
    let stage = match r.u8("stage")? {
        0 => Stage::RxOnly,
        1 => Stage::Joint,
        v => return Err(Error::format("stage", format!("unknown stage code {v}"))),
    };
    let iteration = r.u64("iteration")?;
    let tx_iteration = r.u64("tx_iteration")?;
    let arch = Architecture {
        depth: r.u32("architecture")?,
        base_channels: r.u32("architecture")?,
        kernel_size: r.u32("architecture")?,
    };
    arch.validate()
        .map_err(|e| Error::format("architecture", e.to_string()))?;
    let theta_i = r.tensors("theta_i")?;
    let theta_q = r.tensors("theta_q")?;

    let init_kind = match r.u8("scheme")? {
        0 => InitKind::Mla,
        1 => InitKind::Mlt,
        2 => InitKind::Random,
        v => return Err(Error::format("scheme", format!("unknown init kind {v}"))),
    };
    let lines = r.u32("scheme")?;
    let acquisitions = r.u32("scheme")?;
    let decimation = r.u32("scheme")?;
    let trainable = r.u8("scheme")? != 0;
    let assignment = (0..lines).map(|_| r.u32("assignment")).collect::<Result<Vec<_>>>()?;
    let psi = r.values("psi")?;
    let scheme = TxScheme {
        init_kind,
        lines,
        acquisitions,
        decimation,
        assignment,
        psi,
        trainable,
    };
    scheme
        .validate()
        .map_err(|e| Error::format("scheme", e.to_string()))?;

    let net_optimizer = Adam {
        learning_rate: r.f64("adam")?,
        beta1: r.f64("adam")?,
        beta2: r.f64("adam")?,
        eps: r.f64("adam")?,
        steps: r.u64("adam")?,
        first_moment: r.tensors("adam")?,
        second_moment: r.tensors("adam")?,
    };
    let tx_optimizer = match r.u8("tx_optimizer")? {
        0 => None,
        1 => Some(MomentumDecay {
            initial_learning_rate: r.f64("tx_optimizer")?,
            momentum: r.f64("tx_optimizer")?,
            half_life: r.f64("tx_optimizer")?,
            buffer: r.tensors("tx_optimizer")?,
        }),
        v => return Err(Error::format("tx_optimizer", format!("unknown flag {v}"))),
    };
    if r.pos != body.len() {
        return Err(Error::format("trailer", format!("{} unexpected bytes", body.len() - r.pos)));
    }
    let state = TrainState {
        stage,
        iteration,
        network: ReconNetworkState { arch, theta_i, theta_q },
        scheme,
        net_optimizer,
        tx_optimizer,
        tx_iteration,
    };
    state
        .network()
        .map_err(|e| Error::format("theta", e.to_string()))?;
    Ok(state)
}

/// Writes the binary checkpoint and its `.json` sidecar.
pub fn save_checkpoint(state: &TrainState, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        version: CHECKPOINT_VERSION,
        iteration: state.iteration,
        stage: state.stage,
        config_hash: config_hash.to_string(),
        scheme: state.scheme.name(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&sp, e))?;
    std::fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))
}

/// Reads a checkpoint; with `expected_hash`, refuses one written under a
/// different training configuration.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(TrainState, Sidecar)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let state = decode_checkpoint(&bytes)?;
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&sp, e))?;
    if side.version != CHECKPOINT_VERSION {
        return Err(Error::format("version", format!("sidecar declares version {}", side.version)));
    }
    if side.iteration != state.iteration {
        return Err(Error::format(
            "iteration",
            format!("sidecar says {}, checkpoint holds {}", side.iteration, state.iteration),
        ));
    }
    if let Some(h) = expected_hash {
        if side.config_hash != h {
            return Err(Error::config(format!(
                "checkpoint {} was trained under config {}, current config hashes to {h}; refusing to resume",
                path.display(),
                side.config_hash
            )));
        }
    }
    Ok((state, side))
}
