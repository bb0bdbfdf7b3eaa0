use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::ops::LEAKY_SLOPE;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            kernel_size: 3,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::config("network depth and base channels must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Required divisor of both spatial dims.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    /// Kernel shapes `[C', C, k, k]` of every convolution in one path, in
    /// parameter order (each followed by its bias).
    pub fn conv_shapes(&self) -> Vec<[usize; 4]> {
        let k = self.kernel_size;
        let d = self.depth;
        let mut shapes = Vec::with_capacity(4 * d + 3);
        for l in 0..d {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            let c = self.channels(l);
            shapes.push([c, cin, k, k]);
            shapes.push([c, c, k, k]);
        }
        let cb = self.channels(d - 1);
        shapes.push([cb, cb, k, k]);
        shapes.push([cb, cb, k, k]);
        for l in (0..d).rev() {
            let prev = if l == d - 1 { cb } else { self.channels(l + 1) };
            let c = self.channels(l);
            shapes.push([c, prev + c, k, k]);
            shapes.push([c, c, k, k]);
        }
        shapes.push([1, self.channels(0), 1, 1]);
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>() + s[0])
            .sum()
    }

    /// Smallest `(H', W')` ≥ `(h, w)` accepted by the network.
    pub fn padded_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let m = self.multiple();
        (h.div_ceil(m) * m, w.div_ceil(m) * m)
    }
}

/// Dual-path encoder-decoder: one parameter set for I, one for Q, both with the
/// same architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconNetwork {
    pub arch: Architecture,
    pub theta_i: Vec<Tensor>,
    pub theta_q: Vec<Tensor>,
}

fn init_path(arch: &Architecture, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let shapes = arch.conv_shapes();
    let last = shapes.len() - 1;
    let mut params = Vec::with_capacity(2 * shapes.len());
    for (idx, s) in shapes.iter().enumerate() {
        let kernel = if idx == last {
            Tensor::zeros(s)
        } else {
            let fan_in = (s[1] * s[2] * s[3]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            Tensor::from_fn(s, |_| rng.gen_range(-bound..bound))
        };
        params.push(kernel);
        params.push(Tensor::zeros(&[s[0]]));
    }
    params
}

/// Parameter handles of a network bound to a graph.
pub struct BoundNetwork {
    pub theta_i: Vec<Var>,
    pub theta_q: Vec<Var>,
}

impl ReconNetwork {
    /// He-uniform kernels, zero biases, zero final 1×1 layer (identity mapping at start).
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta_i = init_path(&arch, &mut rng);
        let theta_q = init_path(&arch, &mut rng);
        Ok(Self { arch, theta_i, theta_q })
    }

    /// Θ_I followed by Θ_Q.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.theta_i.iter().chain(&self.theta_q)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.theta_i.iter_mut().chain(self.theta_q.iter_mut())
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundNetwork {
        let mut leaf = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let theta_i = self.theta_i.iter().map(&mut leaf).collect();
        let theta_q = self.theta_q.iter().map(&mut leaf).collect();
        BoundNetwork { theta_i, theta_q }
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let m = self.arch.multiple();
        if h % m != 0 || w % m != 0 {
            let (ph, pw) = self.arch.padded_dims(h, w);
            return Err(Error::config(format!(
                "network input [{h}, {w}] must be divisible by {m}; pad to [{ph}, {pw}]"
            )));
        }
        Ok(())
    }

    /// One encoder-decoder path with residual output, on a `[1, H, W]` input.
    pub fn path(&self, graph: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let (_, h, w) = graph.value(x).chw()?;
        self.check_dims(h, w)?;
        let mut p = params.iter().copied();
        let mut conv = |g: &mut Graph, input: Var| -> Result<Var> {
            let (k, b) = (p.next().unwrap(), p.next().unwrap());
            g.conv2d(input, k, b)
        };
        let mut skips = Vec::with_capacity(self.arch.depth);
        let mut hcur = x;
        for _ in 0..self.arch.depth {
            hcur = conv(graph, hcur)?;
            hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
            hcur = conv(graph, hcur)?;
            hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
            skips.push(hcur);
            hcur = graph.maxpool2(hcur)?;
        }
        hcur = conv(graph, hcur)?;
        hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
        hcur = conv(graph, hcur)?;
        hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
        for skip in skips.into_iter().rev() {
            hcur = graph.upsample2(hcur)?;
            hcur = graph.concat(&[hcur, skip])?;
            hcur = conv(graph, hcur)?;
            hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
            hcur = conv(graph, hcur)?;
            hcur = graph.leaky_relu(hcur, LEAKY_SLOPE)?;
        }
        let out = conv(graph, hcur)?;
        graph.add(x, out)
    }

    /// Applies the I path to `input_i` and the Q path to `input_q`.
    pub fn forward_graph(&self, graph: &mut Graph, bound: &BoundNetwork, input_i: Var, input_q: Var) -> Result<(Var, Var)> {
        let i = self.path(graph, &bound.theta_i, input_i)?;
        let q = self.path(graph, &bound.theta_q, input_q)?;
        Ok((i, q))
    }

    /// Inference on `[H, W]` planes whose dims are already network-compatible.
    pub fn forward(&self, i: &[f64], q: &[f64], h: usize, w: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(h, w)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xi = g.constant(Tensor::new(&[1, h, w], i.to_vec())?);
        let xq = g.constant(Tensor::new(&[1, h, w], q.to_vec())?);
        let (yi, yq) = self.forward_graph(&mut g, &bound, xi, xq)?;
        Ok((g.value(yi).data().to_vec(), g.value(yq).data().to_vec()))
    }

    /// Inference with zero padding up to the next compatible size and cropping back.
    pub fn forward_padded(&self, i: &[f64], q: &[f64], h: usize, w: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (ph, pw) = self.arch.padded_dims(h, w);
        if (ph, pw) == (h, w) {
            return self.forward(i, q, h, w);
        }
        let pad = |src: &[f64]| {
            let t = Tensor::new(&[1, h, w], src.to_vec())?;
            Ok::<_, Error>(super::ops::pad_forward(&t, ph, pw)?.into_data())
        };
        let (yi, yq) = self.forward(&pad(i)?, &pad(q)?, ph, pw)?;
        let crop = |src: Vec<f64>| {
            let t = Tensor::new(&[1, ph, pw], src)?;
            Ok::<_, Error>(super::ops::crop_forward(&t, h, w)?.into_data())
        };
        Ok((crop(yi)?, crop(yq)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            depth: 2,
            base_channels: 2,
            kernel_size: 3,
        }
    }

    #[test]
    fn fresh_network_is_identity() {
        let net = ReconNetwork::new(tiny(), 3).unwrap();
        let x: Vec<f64> = (0..64).map(|k| (k as f64 * 0.37).sin()).collect();
        let (i, q) = net.forward(&x, &x, 8, 8).unwrap();
        assert_eq!(i, x);
        assert_eq!(q, x);
    }

    #[test]
    fn zero_parameters_are_identity() {
        let mut net = ReconNetwork::new(tiny(), 3).unwrap();
        net.parameters_mut().for_each(|t| t.data_mut().fill(0.0));
        let x: Vec<f64> = (0..64).map(|k| k as f64).collect();
        assert_eq!(net.forward(&x, &x, 8, 8).unwrap().0, x);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut net = ReconNetwork::new(tiny(), 5).unwrap();
        for t in net.parameters_mut() {
            let len = t.len();
            t.data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = ((k * 13 + len) % 7) as f64 * 0.1 - 0.3);
        }
        // zero biases (every second tensor)
        for (idx, t) in net.theta_i.iter_mut().chain(net.theta_q.iter_mut()).enumerate() {
            if idx % 2 == 1 {
                t.data_mut().fill(0.0);
            }
        }
        let x = vec![0.0; 64];
        let (i, q) = net.forward(&x, &x, 8, 8).unwrap();
        assert!(i.iter().chain(&q).all(|&v| v == 0.0));
    }

    #[test]
    fn divisibility_error_names_padding() {
        let net = ReconNetwork::new(Architecture::default(), 0).unwrap();
        let x = vec![0.0; 28 * 16];
        let err = net.forward(&x, &x, 28, 16).unwrap_err().to_string();
        assert!(err.contains("[32, 16]"), "{err}");
        let (i, _) = net.forward_padded(&x, &x, 28, 16).unwrap();
        assert_eq!(i.len(), 28 * 16);
    }

    #[test]
    fn paths_have_distinct_parameters() {
        let net = ReconNetwork::new(Architecture::default(), 1).unwrap();
        assert_eq!(net.theta_i.len(), net.theta_q.len());
        assert_ne!(net.theta_i[0], net.theta_q[0]);
        let shapes: Vec<_> = net.theta_i.iter().map(|t| t.shape().to_vec()).collect();
        let shapes_q: Vec<_> = net.theta_q.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, shapes_q);
    }
}
