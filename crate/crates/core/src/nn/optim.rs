use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MOMENTUM: f64 = 0.9;
/// Iterations after which the momentum learning rate has halved.
pub const DEFAULT_HALF_LIFE: f64 = 1000.0;

fn check_grads(params: &[&mut Tensor], grads: &[&Tensor], iteration: u64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "parameter {idx} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite gradient for parameter {idx} at iteration {iteration}"
            )));
        }
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(learning_rate: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            steps: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut Tensor>, grads: &[&Tensor], iteration: u64) -> Result<()> {
        check_grads(&params, grads, iteration)?;
        if params.len() != self.first_moment.len() {
            return Err(Error::shape("optimizer state does not match parameter list"));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Heavy-ball momentum with learning rate `η0 / (1 + n / n_half)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumDecay {
    pub initial_learning_rate: f64,
    pub momentum: f64,
    pub half_life: f64,
    pub buffer: Vec<Vec<f64>>,
}

impl MomentumDecay {
    pub fn new<'a>(initial_learning_rate: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            initial_learning_rate,
            momentum: MOMENTUM,
            half_life: DEFAULT_HALF_LIFE,
            buffer: params.into_iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn learning_rate(&self, iteration: u64) -> f64 {
        self.initial_learning_rate / (1.0 + iteration as f64 / self.half_life)
    }

    /// `iteration` counts from the start of this optimizer's schedule.
    pub fn step(&mut self, mut params: Vec<&mut Tensor>, grads: &[&Tensor], iteration: u64) -> Result<()> {
        check_grads(&params, grads, iteration)?;
        if params.len() != self.buffer.len() {
            return Err(Error::shape("optimizer state does not match parameter list"));
        }
        let lr = self.learning_rate(iteration);
        for ((p, g), buf) in params.iter_mut().zip(grads).zip(self.buffer.iter_mut()) {
            for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                *bv = self.momentum * *bv + gv;
                *pv -= lr * *bv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::from_fn(&[4], |k| k as f64);
        let before = p.clone();
        let g = Tensor::zeros(&[4]);
        let mut adam = Adam::new(0.005, [&p]);
        adam.step(vec![&mut p], &[&g], 0).unwrap();
        assert_eq!(p, before);
        let mut mom = MomentumDecay::new(0.005, [&p]);
        mom.step(vec![&mut p], &[&g], 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut p = Tensor::zeros(&[1]);
        let g = Tensor::new(&[1], vec![0.37]).unwrap();
        let mut adam = Adam::new(0.005, [&p]);
        let mut last = 0.0;
        for n in 0..5000 {
            let before = p.data()[0];
            adam.step(vec![&mut p], &[&g], n).unwrap();
            last = before - p.data()[0];
        }
        // closed form: m̂ = g and v̂ = g² for constant g, so |Δ| = η·g/(g + ε)
        let expected = 0.005 * 0.37 / (0.37 + ADAM_EPS);
        assert!((last - expected).abs() < 1e-9, "{last} vs {expected}");
    }

    #[test]
    fn momentum_half_life() {
        let mom = MomentumDecay::new(0.005, std::iter::empty());
        assert!((mom.learning_rate(1000) - 0.0025).abs() < 1e-15);
        assert_eq!(mom.learning_rate(0), 0.005);
    }

    #[test]
    fn nan_gradient_names_iteration() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(&[2], vec![0.0, f64::NAN]).unwrap();
        let mut adam = Adam::new(0.005, [&p]);
        let err = adam.step(vec![&mut p], &[&g], 17).unwrap_err();
        assert!(err.to_string().contains("iteration 17"));
    }
}
