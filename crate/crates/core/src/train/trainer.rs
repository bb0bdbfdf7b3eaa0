use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, Stage};
use super::dataset::{DatasetSplit, Frame};
use crate::error::{Error, Result};
use crate::metrics::l1_metric;
use crate::nn::{Adam, Graph, MomentumDecay, ReconNetwork, Tensor, Var};
use crate::phantom::{ArrayGeometry, ScanGrid};
use crate::rx::{ApodizationWindow, EnvelopeImage, FocusOp, Focuser};
use crate::tx::{EmulateOp, TxScheme};

/// Fixed receive chain for one transmit scheme layout.
pub struct Pipeline {
    pub geometry: ArrayGeometry,
    pub grid: ScanGrid,
    pub window: ApodizationWindow,
    focuser: Arc<Focuser>,
    lines: usize,
    samples: usize,
    padded: (usize, usize),
}

impl Pipeline {
    pub fn new(cfg: &ExperimentConfig, scheme: &TxScheme) -> Result<Self> {
        let (geometry, grid) = cfg.geometry.build()?;
        let window = cfg.window_for(&geometry);
        let focuser = Arc::new(Focuser::for_scheme(scheme, &geometry, &grid, &window)?);
        let (lines, samples) = (grid.line_count, geometry.sample_count);
        let padded = cfg.train.architecture.padded_dims(lines, samples);
        Ok(Self {
            geometry,
            grid,
            window,
            focuser,
            lines,
            samples,
            padded,
        })
    }

    /// Emulate → focus → (network) → envelope; returns the envelope node.
    pub fn graph(&self, g: &mut Graph, emulate: EmulateOp, psi: Var, net: Option<&ReconNetwork>, trainable_net: bool) -> Result<(Var, Option<crate::nn::BoundNetwork>)> {
        let emulated = g.custom(Arc::new(emulate), &[psi])?;
        let focused = g.custom(Arc::new(FocusOp::new(self.focuser.clone())), &[emulated])?;
        let i = g.slice(focused, 0, 1)?;
        let q = g.slice(focused, 1, 1)?;
        let (oi, oq, bound) = match net {
            None => (i, q, None),
            Some(net) => {
                let (ph, pw) = self.padded;
                let bound = net.bind(g, trainable_net);
                let (pi, pq) = (g.pad(i, ph, pw)?, g.pad(q, ph, pw)?);
                let (yi, yq) = net.forward_graph(g, &bound, pi, pq)?;
                let yi = g.crop(yi, self.lines, self.samples)?;
                let yq = g.crop(yq, self.lines, self.samples)?;
                (yi, yq, Some(bound))
            }
        };
        Ok((g.envelope(oi, oq)?, bound))
    }

    /// Envelope reconstruction of one frame; `net = None` is delay-and-sum.
    pub fn reconstruct(&self, frame: &Frame, scheme: &TxScheme, net: Option<&ReconNetwork>) -> Result<EnvelopeImage> {
        let mut g = Graph::new();
        let psi = g.constant(scheme.psi_tensor());
        let (env, _) = self.graph(&mut g, EmulateOp::new(&frame.sla), psi, net, false)?;
        EnvelopeImage::new(self.lines, self.samples, g.value(env).data().to_vec())
    }

    pub fn frame_loss(&self, frame: &Frame, scheme: &TxScheme, net: Option<&ReconNetwork>) -> Result<f64> {
        l1_metric(&self.reconstruct(frame, scheme, net)?, &frame.reference)
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainState {
    pub stage: Stage,
    /// Iterations completed.
    pub iteration: u64,
    pub network: ReconNetworkState,
    pub scheme: TxScheme,
    pub net_optimizer: Adam,
    pub tx_optimizer: Option<MomentumDecay>,
    /// Iterations completed by `tx_optimizer`.
    pub tx_iteration: u64,
}

/// Serializable mirror of the network parameters (see [`TrainState::network`]).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconNetworkState {
    pub arch: crate::nn::Architecture,
    pub theta_i: Vec<Vec<f64>>,
    pub theta_q: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn initial(cfg: &ExperimentConfig) -> Result<Self> {
        let (_, grid) = cfg.geometry.build()?;
        let t = &cfg.train;
        let scheme = TxScheme::from_kind(t.init_kind, grid.line_count, t.decimation, t.seed)?;
        let net = ReconNetwork::new(t.architecture, t.seed)?;
        let adam = Adam::new(t.net_learning_rate, net.parameters());
        Ok(Self::from_parts(Stage::RxOnly, 0, &net, scheme, adam, None, 0))
    }

    pub fn from_parts(stage: Stage, iteration: u64, net: &ReconNetwork, scheme: TxScheme, net_optimizer: Adam, tx_optimizer: Option<MomentumDecay>, tx_iteration: u64) -> Self {
        Self {
            stage,
            iteration,
            network: ReconNetworkState {
                arch: net.arch,
                theta_i: net.theta_i.iter().map(|t| t.data().to_vec()).collect(),
                theta_q: net.theta_q.iter().map(|t| t.data().to_vec()).collect(),
            },
            scheme,
            net_optimizer,
            tx_optimizer,
            tx_iteration,
        }
    }

    pub fn network(&self) -> Result<ReconNetwork> {
        let arch = self.network.arch;
        let shapes = arch.conv_shapes();
        let unpack = |vals: &[Vec<f64>]| -> Result<Vec<Tensor>> {
            if vals.len() != 2 * shapes.len() {
                return Err(Error::shape(format!(
                    "{} parameter tensors for an architecture with {} layers",
                    vals.len(),
                    shapes.len()
                )));
            }
            vals.iter()
                .enumerate()
                .map(|(k, v)| {
                    let s = shapes[k / 2];
                    if k % 2 == 0 {
                        Tensor::new(&s, v.clone())
                    } else {
                        Tensor::new(&[s[0]], v.clone())
                    }
                })
                .collect()
        };
        Ok(ReconNetwork {
            arch,
            theta_i: unpack(&self.network.theta_i)?,
            theta_q: unpack(&self.network.theta_q)?,
        })
    }

    fn store_network(&mut self, net: &ReconNetwork) {
        self.network.theta_i = net.theta_i.iter().map(|t| t.data().to_vec()).collect();
        self.network.theta_q = net.theta_q.iter().map(|t| t.data().to_vec()).collect();
    }

    /// Switches to joint training: ψ becomes a parameter with its own optimizer.
    pub fn into_joint(mut self, tx_learning_rate: f64) -> Self {
        let psi = self.scheme.psi_tensor();
        self.tx_optimizer = Some(MomentumDecay::new(tx_learning_rate, [&psi]));
        self.tx_iteration = 0;
        self.stage = Stage::Joint;
        self
    }
}

/// One row of a convergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: u64,
    /// Mean training loss since the previous row; `None` at iteration 0.
    pub train_l1: Option<f64>,
    pub val_l1: f64,
}

/// Frame index of iteration `n`: a fresh seeded permutation each epoch, so the
/// schedule depends only on `(seed, n)` and a resumed run sees the same frames.
pub fn frame_index(seed: u64, iteration: u64, frames: usize) -> usize {
    let epoch = iteration / frames as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ epoch);
    let mut order: Vec<usize> = (0..frames).collect();
    order.shuffle(&mut rng);
    order[(iteration % frames as u64) as usize]
}

/// Training view of a frame: optionally mirrored about broadside (transmits,
/// elements and reference lines reversed) and rotated by a global carrier
/// phase. Both leave the SLA reference envelope of the transformed data equal
/// to the transformed reference, and depend only on `(seed, iteration)`.
pub fn augmented_frame(frame: &Frame, seed: u64, iteration: u64, enabled: bool) -> (EmulateOp, Vec<f64>) {
    let sla = &frame.sla;
    let (l, e, t) = (sla.transmits, sla.elements, sla.samples);
    if !enabled {
        return (EmulateOp::new(sla), frame.reference.values.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ iteration.rotate_left(17));
    let mirror = rng.gen::<bool>();
    let (s, c) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
    let n = l * e * t;
    let mut data = vec![0.0; 2 * n];
    for li in 0..l {
        for ei in 0..e {
            let (sl, se) = if mirror { (l - 1 - li, e - 1 - ei) } else { (li, ei) };
            let src = sla.index(sl, se, 0);
            let dst = sla.index(li, ei, 0);
            for k in 0..t {
                let (i, q) = (sla.i[src + k] as f64, sla.q[src + k] as f64);
                data[dst + k] = c * i - s * q;
                data[n + dst + k] = s * i + c * q;
            }
        }
    }
    let reference = &frame.reference;
    let values = if mirror {
        (0..reference.lines)
            .rev()
            .flat_map(|li| reference.values[li * reference.samples..(li + 1) * reference.samples].iter().copied())
            .collect()
    } else {
        reference.values.clone()
    };
    (EmulateOp::from_stacked(Arc::new(data), l, e, t), values)
}

/// Runs iterations on one training arm.
pub struct Trainer<'a> {
    pub cfg: &'a ExperimentConfig,
    pub split: &'a DatasetSplit,
    pub pipeline: Pipeline,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, split: &'a DatasetSplit, scheme: &TxScheme) -> Result<Self> {
        cfg.validate()?;
        if split.train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        Ok(Self {
            cfg,
            split,
            pipeline: Pipeline::new(cfg, scheme)?,
        })
    }

    /// Mean validation L1 of the current state.
    pub fn validation_l1(&self, state: &TrainState) -> Result<f64> {
        let net = state.network()?;
        let frames = &self.split.validation;
        let mut total = 0.0;
        for f in frames {
            total += self.pipeline.frame_loss(f, &state.scheme, Some(&net))?;
        }
        Ok(total / frames.len() as f64)
    }

    /// One optimizer step on one frame; ψ is updated only in the joint stage.
    pub fn step(&self, state: &mut TrainState) -> Result<f64> {
        let n = state.iteration;
        let idx = frame_index(self.cfg.train.seed, n, self.split.train.len());
        let frame = &self.split.train[idx];
        let mut net = state.network()?;
        let joint = state.stage == Stage::Joint;

        let mut g = Graph::new();
        let psi = if joint { g.param(state.scheme.psi_tensor()) } else { g.constant(state.scheme.psi_tensor()) };
        let (emulate, target) = augmented_frame(frame, self.cfg.train.seed, n, self.cfg.train.augment);
        let (env, bound) = self.pipeline.graph(&mut g, emulate, psi, Some(&net), true)?;
        let bound = bound.expect("network bound");
        let reference = g.constant(Tensor::new(&[1, frame.reference.lines, frame.reference.samples], target)?);
        let loss = g.l1_loss(env, reference)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite loss at iteration {n} (frame {}); config: {}",
                frame.id,
                serde_json::to_string(self.cfg).unwrap_or_default()
            )));
        }
        let mut grads = g.backward(loss)?;
        let theta: Vec<Tensor> = bound
            .theta_i
            .iter()
            .chain(&bound.theta_q)
            .map(|&v| grads.take(v).ok_or_else(|| Error::numerical("missing network gradient")))
            .collect::<Result<_>>()?;
        let theta_refs: Vec<&Tensor> = theta.iter().collect();
        state.net_optimizer.step(net.parameters_mut().collect(), &theta_refs, n)?;
        state.store_network(&net);

        if joint {
            let gpsi = grads.take(psi).ok_or_else(|| Error::numerical("missing ψ gradient"))?;
            let opt = state
                .tx_optimizer
                .as_mut()
                .ok_or_else(|| Error::config("joint stage without a transmit optimizer"))?;
            let mut p = state.scheme.psi_tensor();
            opt.step(vec![&mut p], &[&gpsi], state.tx_iteration)?;
            state.scheme.psi = p.into_data();
            state.tx_iteration += 1;
        }
        state.iteration += 1;
        Ok(value)
    }

    /// Advances `state` by `iterations`, validating every interval. Returns the
    /// curve and the best-validation snapshot seen (including the start).
    pub fn run(&self, state: &mut TrainState, iterations: u64, mut on_snapshot: impl FnMut(&TrainState) -> Result<()>) -> Result<ArmOutcome> {
        let interval = self.cfg.train.validation_interval;
        let mut curve = vec![CurvePoint {
            iteration: state.iteration,
            train_l1: None,
            val_l1: self.validation_l1(state)?,
        }];
        let mut best = (curve[0].val_l1, state.clone());
        let mut window = Vec::new();
        for k in 0..iterations {
            window.push(self.step(state)?);
            on_snapshot(state)?;
            if (k + 1) % interval == 0 || k + 1 == iterations {
                let val = self.validation_l1(state)?;
                let mean = window.iter().sum::<f64>() / window.len() as f64;
                window.clear();
                log::info!("iteration {}: train L1 {mean:.5}, validation L1 {val:.5}", state.iteration);
                curve.push(CurvePoint {
                    iteration: state.iteration,
                    train_l1: Some(mean),
                    val_l1: val,
                });
                if val < best.0 {
                    best = (val, state.clone());
                }
            }
        }
        Ok(ArmOutcome {
            curve,
            best: best.1,
            final_state: state.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub curve: Vec<CurvePoint>,
    pub best: TrainState,
    pub final_state: TrainState,
}

impl ArmOutcome {
    pub fn final_val_l1(&self) -> f64 {
        self.curve.last().expect("curve has the initial row").val_l1
    }
}

pub struct Stage1Outcome {
    pub arm: ArmOutcome,
    pub preconvergence: TrainState,
}

/// Rx-only training with ψ fixed at its initialization.
pub fn train_stage1(cfg: &ExperimentConfig, split: &DatasetSplit) -> Result<Stage1Outcome> {
    train_stage1_from(cfg, split, TrainState::initial(cfg)?)
}

/// Stage 1 continued from an arbitrary state (resume).
pub fn train_stage1_from(cfg: &ExperimentConfig, split: &DatasetSplit, mut state: TrainState) -> Result<Stage1Outcome> {
    let trainer = Trainer::new(cfg, split, &state.scheme)?;
    let pre_at = cfg.train.preconvergence();
    let total = cfg.train.stage1_iterations;
    if state.iteration > total {
        return Err(Error::config(format!(
            "state is at iteration {}, past the stage-1 budget {total}",
            state.iteration
        )));
    }
    let mut pre = (state.iteration == pre_at).then(|| state.clone());
    let remaining = total - state.iteration;
    let arm = trainer.run(&mut state, remaining, |s| {
        if s.iteration == pre_at {
            pre = Some(s.clone());
        }
        Ok(())
    })?;
    let preconvergence = pre.ok_or_else(|| Error::config(format!("resumed past the pre-convergence iteration {pre_at}")))?;
    Ok(Stage1Outcome { arm, preconvergence })
}

pub struct Stage2Outcome {
    pub joint: ArmOutcome,
    pub control: ArmOutcome,
}

/// Joint Tx-Rx training and the frozen-ψ control arm, both from `start` and
/// for the same iteration budget.
pub fn train_stage2_joint(cfg: &ExperimentConfig, split: &DatasetSplit, start: &TrainState) -> Result<Stage2Outcome> {
    let trainer = Trainer::new(cfg, split, &start.scheme)?;
    let budget = cfg.train.stage2_iterations;
    let mut joint_state = start.clone().into_joint(cfg.train.tx_learning_rate);
    let joint = trainer.run(&mut joint_state, budget, |_| Ok(()))?;
    let mut control_state = start.clone();
    let control = trainer.run(&mut control_state, budget, |_| Ok(()))?;
    Ok(Stage2Outcome { joint, control })
}
