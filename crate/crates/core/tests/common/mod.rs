//! Independent oracles shared by the property suites and the acceptance run.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use echobeam::metrics::{cnr, contrast_cr, difference_image, l1_metric, psnr, ssim, PSNR_CAP_DB};
use echobeam::nn::{CustomOp, Graph, ReconNetwork, Tensor, Var};
use echobeam::phantom::{simulate_channel_data, ArrayGeometry, ChannelData, PulseSpec, ScanGrid, Scatterer, ScattererField};
use echobeam::rx::{compute_delay, das_reconstruct, log_compress, phase_rotate, ApodizationWindow, DisplayImage, EnvelopeImage, FocusOp, Focuser, WindowKind};
use echobeam::train::{augmented_frame, simulate_frame, DatasetSplit, ExperimentConfig, Family, Pipeline};
use echobeam::tx::{emulate_acquisitions, EmulateOp, TxScheme};

/// Outcome of one acceptance check.
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_geometry() -> (ArrayGeometry, ScanGrid) {
    ExperimentConfig::desk().geometry.build().unwrap()
}

pub fn random_channel_data(transmits: usize, seed: u64) -> ChannelData {
    let (geom, grid) = small_geometry();
    let mut d = ChannelData::zeros(transmits, &geom, &grid);
    let mut r = rng(seed);
    for v in d.i.iter_mut().chain(d.q.iter_mut()) {
        *v = r.gen_range(-1.0f32..1.0);
    }
    d
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-14 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------------------
// Delay geometry and phase rotation

/// Two-way path length: out along the line to range `c·t/2`, back to the element.
pub fn delay_oracle(t: f64, alpha: f64, delta_m: f64, c: f64) -> f64 {
    let r = c * t / 2.0;
    let (x, z) = (r * alpha.sin(), r * alpha.cos());
    r / c + ((x - delta_m).powi(2) + z * z).sqrt() / c
}

pub fn check_delay_geometry() -> Check {
    let mut r = rng(1);
    let c = 1540.0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = r.gen_range(10e-6..100e-6);
        let alpha = r.gen_range(-35f64..35.0).to_radians();
        let dm = r.gen_range(-15e-3..15e-3);
        let got = compute_delay(t, alpha, dm, c).unwrap();
        worst = worst.max((got - delay_oracle(t, alpha, dm, c)).abs());
    }
    Check::new(worst <= 1e-12, format!("max |t̂ − oracle| = {worst:.3e} s over 1000 draws"))
}

pub fn check_rotation() -> Check {
    let mut r = rng(2);
    let omega0 = 2.0 * std::f64::consts::PI * 2.5e6;
    let (mut worst, mut identity_ok) = (0.0f64, true);
    for _ in 0..1000 {
        let (i, q) = (r.gen_range(-1e3..1e3), r.gen_range(-1e3..1e3));
        let dt = r.gen_range(-5e-6..5e-6);
        let (a, b) = phase_rotate(i, q, dt, omega0);
        worst = worst.max(rel_err((a * a + b * b).sqrt(), (i * i + q * q).sqrt()));
        identity_ok &= phase_rotate(i, q, 0.0, omega0) == (i, q);
    }
    Check::new(
        worst <= 1e-12 && identity_ok,
        format!("max magnitude rel. error {worst:.3e}; identity at Δt=0: {identity_ok}"),
    )
}

// ---------------------------------------------------------------------------
// Finite-difference gradients

/// `Σ w·x` with fixed random weights: turns any tensor into a scalar loss
/// whose gradient is `w`, so every entry of the upstream node is probed.
pub struct Probe {
    weights: Vec<f64>,
}

impl Probe {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            weights: (0..len).map(|_| r.gen_range(-1.0..1.0)).collect(),
        }
    }
}

impl CustomOp for Probe {
    fn name(&self) -> &'static str {
        "probe"
    }

    fn forward(&self, inputs: &[&Tensor]) -> echobeam::Result<Tensor> {
        Ok(Tensor::scalar(inputs[0].data().iter().zip(&self.weights).map(|(a, b)| a * b).sum()))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, _needs: &[bool]) -> echobeam::Result<Vec<Option<Tensor>>> {
        let g = grad.data()[0];
        Ok(vec![Some(Tensor::new(inputs[0].shape(), self.weights.iter().map(|w| w * g).collect())?)])
    }
}

/// Largest relative error between backprop and central differences over the
/// given `(input, entry)` pairs. `build` maps input tensors to a scalar node.
pub fn fd_check(inputs: &[Tensor], probes: &[(usize, usize)], step: f64, build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = build(&mut g, &vars);
    let mut grads = g.backward(out).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.take(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    let mut worst = 0.0f64;
    for &(k, e) in probes {
        let h = step * inputs[k].data()[e].abs().max(1.0);
        let mut plus = inputs.to_vec();
        plus[k].data_mut()[e] += h;
        let mut minus = inputs.to_vec();
        minus[k].data_mut()[e] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        worst = worst.max(rel_err(fd, analytic[k].data()[e]));
    }
    worst
}

pub fn all_entries(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |e| (k, e)))
        .collect()
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn probe_of(g: &mut Graph, x: Var, seed: u64) -> Var {
    let len = g.value(x).len();
    g.custom(Arc::new(Probe::new(len, seed)), &[x]).unwrap()
}

/// Per-node finite-difference errors: `(node, max relative error)`.
pub fn node_gradient_errors() -> Vec<(&'static str, f64)> {
    let step = 1e-6;
    let mut out = Vec::new();

    let conv_in = vec![random_tensor(&[2, 6, 5], 10), random_tensor(&[3, 2, 3, 3], 11), random_tensor(&[3], 12)];
    out.push((
        "conv2d",
        fd_check(&conv_in, &all_entries(&conv_in), step, &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            probe_of(g, y, 13)
        }),
    ));

    let act = vec![random_tensor(&[2, 6, 6], 20)];
    out.push((
        "leaky_relu",
        fd_check(&act, &all_entries(&act), step, &|g, v| {
            let y = g.leaky_relu(v[0], 0.1).unwrap();
            probe_of(g, y, 21)
        }),
    ));
    out.push((
        "maxpool2",
        fd_check(&act, &all_entries(&act), step, &|g, v| {
            let y = g.maxpool2(v[0]).unwrap();
            probe_of(g, y, 22)
        }),
    ));
    out.push((
        "upsample2",
        fd_check(&act, &all_entries(&act), step, &|g, v| {
            let y = g.upsample2(v[0]).unwrap();
            probe_of(g, y, 23)
        }),
    ));

    let cat = vec![random_tensor(&[1, 4, 4], 30), random_tensor(&[2, 4, 4], 31)];
    out.push((
        "concat",
        fd_check(&cat, &all_entries(&cat), step, &|g, v| {
            let y = g.concat(&[v[0], v[1]]).unwrap();
            probe_of(g, y, 32)
        }),
    ));

    let pc = vec![random_tensor(&[1, 5, 6], 40)];
    out.push((
        "pad/crop",
        fd_check(&pc, &all_entries(&pc), step, &|g, v| {
            let p = g.pad(v[0], 8, 8).unwrap();
            let c = g.crop(p, 4, 7).unwrap();
            probe_of(g, c, 41)
        }),
    ));

    let iq = vec![random_tensor(&[1, 5, 7], 50), random_tensor(&[1, 5, 7], 51)];
    out.push((
        "envelope",
        fd_check(&iq, &all_entries(&iq), step, &|g, v| {
            let e = g.envelope(v[0], v[1]).unwrap();
            probe_of(g, e, 52)
        }),
    ));

    let l1 = vec![random_tensor(&[1, 6, 6], 60), random_tensor(&[1, 6, 6], 61)];
    out.push((
        "l1_loss",
        fd_check(&l1, &all_entries(&l1), step, &|g, v| g.l1_loss(v[0], v[1]).unwrap()),
    ));

    // interpolated gather: dynamic focusing on the small-test geometry
    let (geom, grid) = small_geometry();
    let window = ApodizationWindow::new(WindowKind::Hann, geom.element_count);
    let scheme = TxScheme::mla(grid.line_count, 10).unwrap();
    let focuser = Arc::new(Focuser::for_scheme(&scheme, &geom, &grid, &window).unwrap());
    let x = vec![random_tensor(&[2, scheme.acquisitions, geom.element_count, geom.sample_count], 70)];
    let mut r = rng(71);
    let probes: Vec<(usize, usize)> = (0..40).map(|_| (0, r.gen_range(0..x[0].len()))).collect();
    out.push((
        "dynamic_focus",
        fd_check(&x, &probes, step, &|g, v| {
            let y = g.custom(Arc::new(FocusOp::new(focuser.clone())), &[v[0]]).unwrap();
            probe_of(g, y, 72)
        }),
    ));

    let sla = random_channel_data(grid.line_count, 80);
    let psi = vec![scheme.psi_tensor()];
    out.push((
        "emulate",
        fd_check(&psi, &all_entries(&psi), step, &|g, v| {
            let y = g.custom(Arc::new(EmulateOp::new(&sla)), &[v[0]]).unwrap();
            probe_of(g, y, 81)
        }),
    ));
    out
}

fn entry(net: &mut ReconNetwork, path: usize, tensor: usize, e: usize) -> &mut f64 {
    let t = if path == 0 { &mut net.theta_i[tensor] } else { &mut net.theta_q[tensor] };
    &mut t.data_mut()[e]
}

/// Full chain ψ → emulate → focus → network → envelope → L1 on one simulated
/// frame. Returns the worst relative errors over 20 Θ and 20 ψ entries.
pub fn composite_gradient_errors() -> (f64, f64) {
    let cfg = ExperimentConfig::desk();
    let frame = simulate_frame(&cfg, Family::Cardiac, 5, "fd".into()).unwrap();
    let scheme = TxScheme::mla(cfg.geometry.lines, 10).unwrap();
    let pipeline = Pipeline::new(&cfg, &scheme).unwrap();
    let mut net = ReconNetwork::new(cfg.train.architecture, 3).unwrap();
    // a nonzero output layer so that every layer receives gradient, and
    // nonzero biases so no padded pixel sits exactly on the activation kink
    let last = net.theta_i.len() - 2;
    let mut r = rng(4);
    for t in [&mut net.theta_i[last], &mut net.theta_q[last]] {
        for v in t.data_mut() {
            *v = r.gen_range(-0.05..0.05);
        }
    }
    for k in (1..net.theta_i.len()).step_by(2) {
        for t in [&mut net.theta_i[k], &mut net.theta_q[k]] {
            for v in t.data_mut() {
                *v = r.gen_range(-0.05..0.05);
            }
        }
    }
    let (_, target) = augmented_frame(&frame, 0, 0, false);
    let loss_of = |net: &ReconNetwork, psi: &Tensor, trainable: bool| {
        let mut g = Graph::new();
        let p = if trainable { g.param(psi.clone()) } else { g.constant(psi.clone()) };
        let (op, _) = augmented_frame(&frame, 0, 0, false);
        let (env, bound) = pipeline.graph(&mut g, op, p, Some(net), trainable).unwrap();
        let reference = g.constant(Tensor::new(&[1, cfg.geometry.lines, cfg.geometry.samples], target.clone()).unwrap());
        let loss = g.l1_loss(env, reference).unwrap();
        (g, loss, p, bound.unwrap())
    };
    let psi = scheme.psi_tensor();
    let (g, loss, p, bound) = loss_of(&net, &psi, true);
    let mut grads = g.backward(loss).unwrap();
    let g_psi = grads.take(p).unwrap();
    let g_theta: Vec<Tensor> = bound.theta_i.iter().chain(&bound.theta_q).map(|&v| grads.take(v).unwrap()).collect();
    let value = |net: &ReconNetwork, psi: &Tensor| {
        let (g, loss, _, _) = loss_of(net, psi, false);
        g.value(loss).data()[0]
    };

    let h = 1e-6;
    let mut theta_worst = 0.0f64;
    let n_tensors = g_theta.len();
    let mut picked = 0;
    while picked < 20 {
        let k = r.gen_range(0..n_tensors);
        let e = r.gen_range(0..g_theta[k].len());
        let analytic = g_theta[k].data()[e];
        if analytic == 0.0 {
            continue;
        }
        let (path, idx) = if k < n_tensors / 2 { (0, k) } else { (1, k - n_tensors / 2) };
        let mut plus = net.clone();
        let mut minus = net.clone();
        *entry(&mut plus, path, idx, e) += h;
        *entry(&mut minus, path, idx, e) -= h;
        let fd = (value(&plus, &psi) - value(&minus, &psi)) / (2.0 * h);
        theta_worst = theta_worst.max(rel_err(fd, analytic));
        picked += 1;
    }

    let mut psi_worst = 0.0f64;
    for _ in 0..20 {
        let e = r.gen_range(0..psi.len());
        let mut plus = psi.clone();
        plus.data_mut()[e] += h;
        let mut minus = psi.clone();
        minus.data_mut()[e] -= h;
        let fd = (value(&net, &plus) - value(&net, &minus)) / (2.0 * h);
        psi_worst = psi_worst.max(rel_err(fd, g_psi.data()[e]));
    }
    (theta_worst, psi_worst)
}

pub fn check_gradients() -> Check {
    let nodes = node_gradient_errors();
    let node_worst = nodes.iter().fold(0.0f64, |m, (_, e)| m.max(*e));
    let (theta, psi) = composite_gradient_errors();
    let listing: Vec<String> = nodes.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Check::new(
        node_worst < 1e-4 && theta < 1e-3 && psi < 1e-3,
        format!("nodes [{}]; composite Θ {theta:.1e}, ψ {psi:.1e}", listing.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// Emulation and adjoints

/// `out[j] = mean of sla[jD .. min((j+1)D, L)]`, by direct loops.
pub fn block_mean_oracle(sla: &ChannelData, d: usize) -> (Vec<f64>, Vec<f64>) {
    let l = sla.transmits;
    let row = sla.elements * sla.samples;
    let m = l.div_ceil(d);
    let mut oi = vec![0.0; m * row];
    let mut oq = vec![0.0; m * row];
    for j in 0..m {
        let members: Vec<usize> = (j * d..((j + 1) * d).min(l)).collect();
        for &s in &members {
            for k in 0..row {
                oi[j * row + k] += sla.i[s * row + k] as f64 / members.len() as f64;
                oq[j * row + k] += sla.q[s * row + k] as f64 / members.len() as f64;
            }
        }
    }
    (oi, oq)
}

/// `out[j] = Σ sla[l]` over lines `l ≡ j (mod M)`, `M = ⌈L/D⌉`.
pub fn comb_sum_oracle(sla: &ChannelData, d: usize) -> (Vec<f64>, Vec<f64>) {
    let l = sla.transmits;
    let row = sla.elements * sla.samples;
    let m = l.div_ceil(d);
    let mut oi = vec![0.0; m * row];
    let mut oq = vec![0.0; m * row];
    for s in 0..l {
        let j = s % m;
        for k in 0..row {
            oi[j * row + k] += sla.i[s * row + k] as f64;
            oq[j * row + k] += sla.q[s * row + k] as f64;
        }
    }
    (oi, oq)
}

pub fn check_emulation() -> Check {
    let sla = random_channel_data(28, 90);
    let emulated = |s: &TxScheme| {
        let (i, q) = emulate_acquisitions(s, &sla).unwrap().to_f64();
        [i, q].concat()
    };
    let mut worst = 0.0f64;
    for d in [10, 7] {
        let (oi, oq) = block_mean_oracle(&sla, d);
        worst = worst.max(max_rel_diff(&emulated(&TxScheme::mla(28, d).unwrap()), &[oi, oq].concat()));
    }
    let (oi, oq) = comb_sum_oracle(&sla, 10);
    let mlt = max_rel_diff(&emulated(&TxScheme::mlt(28, 10).unwrap()), &[oi, oq].concat());
    let id = emulate_acquisitions(&TxScheme::mla(28, 1).unwrap(), &sla).unwrap();
    let exact = id.i == sla.i && id.q == sla.q;
    Check::new(
        worst <= 1e-6 && mlt <= 1e-6 && exact,
        format!("10/7-MLA block mean {worst:.1e}, 10-MLT comb sum {mlt:.1e}, D=1 bit-exact: {exact}"),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(⟨u, A x⟩, ⟨Aᵀ u, x⟩)` pairs for emulation in the data, emulation in ψ and focusing.
pub fn adjoint_pairs() -> Vec<(&'static str, f64, f64)> {
    let (geom, grid) = small_geometry();
    let l = grid.line_count;
    let mut out = Vec::new();
    for (name, scheme) in [
        ("10-MLA", TxScheme::mla(l, 10).unwrap()),
        ("10-random", TxScheme::random(l, 3, 5).unwrap()),
    ] {
        let x = random_channel_data(l, 100);
        let (xi, xq) = x.to_f64();
        let m = scheme.acquisitions;
        let row = x.elements * x.samples;
        let u = random_tensor(&[2, m, x.elements, x.samples], 101);

        // data adjoint: (ψᵀ u)[l] = Σ_j ψ[j, l] u[j]
        let y = emulate_acquisitions(&scheme, &x).unwrap();
        let (yi, yq) = y.to_f64();
        let lhs = dot(&u.data()[..m * row], &yi) + dot(&u.data()[m * row..], &yq);
        let mut ti = vec![0.0; l * row];
        let mut tq = vec![0.0; l * row];
        for j in 0..m {
            for s in 0..l {
                let w = scheme.psi[j * l + s];
                for k in 0..row {
                    ti[s * row + k] += w * u.data()[j * row + k];
                    tq[s * row + k] += w * u.data()[(m + j) * row + k];
                }
            }
        }
        out.push((name, lhs, dot(&ti, &xi) + dot(&tq, &xq)));

        // ψ adjoint: the op is linear in ψ for fixed data
        let op = EmulateOp::new(&x);
        let psi = scheme.psi_tensor();
        let fwd = op.forward(&[&psi]).unwrap();
        let back = op.backward(&[&psi], &fwd, &u, &[true]).unwrap().remove(0).unwrap();
        out.push((name, dot(u.data(), fwd.data()), dot(back.data(), psi.data())));

        let window = ApodizationWindow::new(WindowKind::Hann, geom.element_count);
        let f = Focuser::for_scheme(&scheme, &geom, &grid, &window).unwrap();
        let x2 = random_tensor(&[2, f.input_len()], 102);
        let v = random_tensor(&[2, f.output_len()], 103);
        let (a, b) = x2.data().split_at(f.input_len());
        let (fi, fq) = f.apply(a, b).unwrap();
        let (vi, vq) = v.data().split_at(f.output_len());
        let (ai, aq) = f.adjoint(vi, vq).unwrap();
        out.push((name, dot(vi, &fi) + dot(vq, &fq), dot(&ai, a) + dot(&aq, b)));
    }
    out
}

pub fn check_adjoints() -> Check {
    let pairs = adjoint_pairs();
    let worst = pairs.iter().fold(0.0f64, |m, (_, a, b)| m.max(rel_err(*a, *b)));
    Check::new(worst <= 1e-6, format!("{} identities, max rel. error {worst:.1e}", pairs.len()))
}

// ---------------------------------------------------------------------------
// Point target

pub struct PointTarget {
    pub expected: (usize, usize),
    pub peak: (usize, usize),
    pub coherent_peak: f64,
    pub element_peak: f64,
}

pub fn point_target(line: usize, range: f64) -> PointTarget {
    let cfg = ExperimentConfig::desk();
    let (geom, grid) = cfg.geometry.build().unwrap();
    let field = ScattererField {
        scatterers: vec![Scatterer {
            range,
            angle: grid.line_angles[line],
            reflectivity: 1.0,
        }],
        label: "point".into(),
        seed: 0,
        depth_window: (1e-3, 39e-3),
    };
    let sla = simulate_channel_data(&field, &geom, &grid, &cfg.pulse).unwrap();
    let identity = TxScheme::identity(grid.line_count).unwrap();
    let env = das_reconstruct(&sla, &identity, &geom, &grid, &cfg.window_for(&geom)).unwrap();
    let (k, &coherent_peak) = env
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let element_peak = sla
        .i
        .iter()
        .zip(&sla.q)
        .map(|(&i, &q)| ((i as f64).powi(2) + (q as f64).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let bin = (2.0 * range / geom.speed_of_sound * geom.sample_rate).round() as usize;
    PointTarget {
        expected: (line, bin),
        peak: (k / env.samples, k % env.samples),
        coherent_peak,
        element_peak,
    }
}

pub fn check_point_target() -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    for (line, range) in [(13, 20e-3), (5, 30e-3), (22, 12e-3)] {
        let p = point_target(line, range);
        let hit = p.peak.0.abs_diff(p.expected.0) <= 1 && p.peak.1.abs_diff(p.expected.1) <= 1;
        ok &= hit && p.coherent_peak > p.element_peak;
        notes.push(format!(
            "peak {:?} vs {:?}, gain {:.2}",
            p.peak,
            p.expected,
            p.coherent_peak / p.element_peak
        ));
    }
    Check::new(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------
// Baseline ordering

pub fn das_psnr(cfg: &ExperimentConfig, split: &DatasetSplit, decimation: usize) -> f64 {
    let (geom, grid) = cfg.geometry.build().unwrap();
    let window = cfg.window_for(&geom);
    let scheme = TxScheme::mla(grid.line_count, decimation).unwrap();
    let total: f64 = split
        .test
        .iter()
        .map(|f| {
            let data = emulate_acquisitions(&scheme, &f.sla).unwrap();
            let env = das_reconstruct(&data, &scheme, &geom, &grid, &window).unwrap();
            psnr(
                &log_compress(&env, cfg.dynamic_range_db).unwrap(),
                &log_compress(&f.reference, cfg.dynamic_range_db).unwrap(),
            )
            .unwrap()
        })
        .sum();
    total / split.test.len() as f64
}

pub fn check_baseline_ordering(cfg: &ExperimentConfig, split: &DatasetSplit) -> Check {
    let values: Vec<(usize, f64)> = [1, 7, 10, 20].iter().map(|&d| (d, das_psnr(cfg, split, d))).collect();
    let strict = values.windows(2).all(|w| w[0].1 > w[1].1);
    let listing: Vec<String> = values.iter().map(|(d, p)| format!("{d}-MLA {p:.2} dB")).collect();
    Check::new(strict, listing.join(" > "))
}

// ---------------------------------------------------------------------------
// Metrics

/// Sliding-window SSIM by explicit double loops over every valid window,
/// with the 2-D Gaussian weights normalized over the window.
pub fn ssim_oracle(a: &DisplayImage, b: &DisplayImage) -> f64 {
    let n = 11usize;
    let sigma = 1.5f64;
    let c = (n as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            w[y * n + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let px = |img: &DisplayImage, r: usize, col: usize| img.pixels[r * img.cols + col] as f64;
    let mut total = 0.0;
    let mut count = 0;
    for r0 in 0..=a.rows - n {
        for c0 in 0..=a.cols - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    mx += w[y * n + x] * px(a, r0 + y, c0 + x);
                    my += w[y * n + x] * px(b, r0 + y, c0 + x);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let dx = px(a, r0 + y, c0 + x) - mx;
                    let dy = px(b, r0 + y, c0 + x) - my;
                    vx += w[y * n + x] * dx * dx;
                    vy += w[y * n + x] * dy * dy;
                    cov += w[y * n + x] * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn random_display(rows: usize, cols: usize, seed: u64) -> DisplayImage {
    let mut r = rng(seed);
    DisplayImage::new(rows, cols, (0..rows * cols).map(|_| r.gen()).collect()).unwrap()
}

pub fn random_envelope(lines: usize, samples: usize, seed: u64) -> EnvelopeImage {
    let mut r = rng(seed);
    EnvelopeImage::new(lines, samples, (0..lines * samples).map(|_| r.gen_range(0.0..3.0)).collect()).unwrap()
}

/// Mean ROI values computed straight from the pixel definition of the circles.
pub fn roi_mean_oracle(img: &EnvelopeImage, center: (f64, f64), radius: f64, aspect: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for l in 0..img.lines {
        for s in 0..img.samples {
            let dl = (l as f64 - center.0) * aspect;
            let ds = s as f64 - center.1;
            if dl * dl + ds * ds <= radius * radius {
                sum += img.values[l * img.samples + s];
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Every metric example: returns the failing descriptions (empty when all pass).
pub fn metric_failures() -> Vec<String> {
    let mut fails = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            fails.push(what.to_string());
        }
    };

    let a = random_display(24, 30, 1);
    let b = random_display(24, 30, 2);
    expect(psnr(&a, &a).unwrap() == PSNR_CAP_DB, "psnr identical → cap");
    let base = DisplayImage::new(24, 30, a.pixels.iter().map(|&p| p.min(254)).collect()).unwrap();
    let plus = DisplayImage::new(24, 30, base.pixels.iter().map(|&p| p + 1).collect()).unwrap();
    let closed = 10.0 * (255.0f64 * 255.0).log10();
    expect((psnr(&plus, &base).unwrap() - closed).abs() < 1e-12, "psnr ref+1 → 48.13 dB");
    expect(((closed * 100.0).round() / 100.0 - 48.13).abs() < 1e-9, "closed form rounds to 48.13");
    expect(psnr(&a, &b).unwrap() == psnr(&b, &a).unwrap(), "psnr symmetric");

    expect((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12, "ssim identical → 1");
    let ramp = DisplayImage::new(16, 16, (0..256).map(|k| ((k % 16) * 8 + (k / 16) * 7) as u8).collect()).unwrap();
    let neg = DisplayImage::new(16, 16, ramp.pixels.iter().map(|&p| 255 - p).collect()).unwrap();
    expect(ssim(&ramp, &neg).unwrap() <= 0.0, "ssim vs negative ≤ 0");
    let p16 = random_display(16, 16, 3);
    let q16 = random_display(16, 16, 4);
    expect((ssim(&p16, &q16).unwrap() - ssim_oracle(&p16, &q16)).abs() < 1e-10, "ssim 16×16 oracle to 1e-10");
    let blur = DisplayImage::new(16, 16, p16.pixels.iter().map(|&p| p / 2 + 60).collect()).unwrap();
    expect((ssim(&p16, &blur).unwrap() - ssim_oracle(&p16, &blur)).abs() < 1e-10, "ssim correlated pair oracle to 1e-10");

    let e1 = random_envelope(8, 12, 5);
    let e2 = random_envelope(8, 12, 6);
    expect(l1_metric(&e1, &e1).unwrap() == 0.0, "l1 identical → 0");
    let shifted = EnvelopeImage::new(8, 12, e1.values.iter().map(|v| v + 0.75).collect()).unwrap();
    expect((l1_metric(&shifted, &e1).unwrap() - 0.75).abs() < 1e-12, "l1 offset c → c");
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[1, 8, 12], e1.values.clone()).unwrap());
    let r = g.constant(Tensor::new(&[1, 8, 12], e2.values.clone()).unwrap());
    let loss = g.l1_loss(p, r).unwrap();
    expect((l1_metric(&e1, &e2).unwrap() - g.value(loss).data()[0]).abs() < 1e-14, "l1 equals training loss");

    use echobeam::metrics::{RoiCircle, RoiRole};
    let t = RoiCircle::new((4.0, 8.0), 3.0, RoiRole::Target);
    let bg = RoiCircle::new((14.0, 8.0), 3.0, RoiRole::Background);
    let img = |f: &dyn Fn(usize) -> f64| EnvelopeImage::new(20, 20, (0..400).map(|k| f(k / 20)).collect()).unwrap();
    let flat = img(&|_| 2.0);
    expect(contrast_cr(&flat, &t, &bg).unwrap() == Ok(0.0), "cr equal means → 0 dB");
    let decade = img(&|l| if l < 9 { 0.2 } else { 2.0 });
    expect((contrast_cr(&decade, &t, &bg).unwrap().unwrap() + 20.0).abs() < 1e-12, "cr decade → −20 dB");
    let zero_bg = img(&|l| if l < 9 { 1.0 } else { 0.0 });
    expect(contrast_cr(&zero_bg, &t, &bg).unwrap().is_err(), "cr zero background → undefined");
    expect(cnr(&decade, &t, &bg).unwrap().is_err(), "cnr constant regions → undefined");
    let noisy = EnvelopeImage::new(20, 20, (0..400).map(|k| if k % 2 == 0 { 1.5 } else { 0.5 }).collect()).unwrap();
    expect(cnr(&noisy, &t, &bg).unwrap().map(|v| v.abs() < 1e-12) == Ok(true), "cnr equal means → 0");

    let d0 = difference_image(&a, &a, 100).unwrap();
    expect(d0.pixels.iter().all(|&p| p == 0), "difference identical → 0");
    let lo = DisplayImage::new(2, 2, vec![0, 10, 20, 30]).unwrap();
    let hi = DisplayImage::new(2, 2, vec![150, 50, 60, 70]).unwrap();
    expect(difference_image(&hi, &lo, 100).unwrap().pixels == vec![100, 40, 40, 40], "difference clamp and offset");

    match cyst_contrast() {
        Ok((cr, oracle, cnr1, cnr2)) => {
            expect(cr < -20.0, &format!("cyst SLA Cr {cr:.2} dB < −20 dB"));
            expect((cr - oracle).abs() < 1e-9, "cyst Cr equals direct ROI means");
            expect((cnr1 - cnr2).abs() <= 1e-12, "cyst CNR reproducible to 1e-12");
        }
        Err(e) => expect(false, &format!("cyst simulation failed: {e}")),
    }
    fails
}

/// SLA delay-and-sum contrast of one desk cyst frame: `(Cr, oracle Cr, CNR, CNR rerun)`.
pub fn cyst_contrast() -> echobeam::Result<(f64, f64, f64, f64)> {
    let cfg = ExperimentConfig::desk();
    let (t, b) = cfg.cyst_rois()?;
    let f = simulate_frame(&cfg, Family::Cyst, 11, "cyst".into())?;
    let cr = contrast_cr(&f.reference, &t, &b)?.map_err(|u| echobeam::Error::Numerical(u.to_string()))?;
    let mt = roi_mean_oracle(&f.reference, t.center, t.radius, t.aspect);
    let mb = roi_mean_oracle(&f.reference, b.center, b.radius, b.aspect);
    let cnr1 = cnr(&f.reference, &t, &b)?.map_err(|u| echobeam::Error::Numerical(u.to_string()))?;
    let again = simulate_frame(&cfg, Family::Cyst, 11, "cyst".into())?;
    let cnr2 = cnr(&again.reference, &t, &b)?.map_err(|u| echobeam::Error::Numerical(u.to_string()))?;
    Ok((cr, 20.0 * (mt / mb).log10(), cnr1, cnr2))
}

pub fn check_metrics() -> Check {
    let fails = metric_failures();
    if fails.is_empty() {
        Check::new(true, "PSNR/SSIM/L1/Cr/CNR/difference examples all hold")
    } else {
        Check::new(false, format!("failed: {}", fails.join("; ")))
    }
}

pub fn focuser_for(scheme: &TxScheme) -> Focuser {
    let (geom, grid) = small_geometry();
    let window = ApodizationWindow::new(WindowKind::Hann, geom.element_count);
    Focuser::for_scheme(scheme, &geom, &grid, &window).unwrap()
}

pub fn pulse() -> PulseSpec {
    ExperimentConfig::desk().pulse
}

// ---------------------------------------------------------------------------
// Short training runs

/// Desk geometry with a handful of frames and a few iterations per stage.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.train = 4;
    cfg.dataset.validation = 2;
    cfg.dataset.test = 2;
    cfg.dataset.cyst_test = 2;
    cfg.train.stage1_iterations = 6;
    cfg.train.stage2_iterations = 4;
    cfg.train.validation_interval = 2;
    cfg
}

pub fn tiny_split() -> &'static DatasetSplit {
    static SPLIT: std::sync::OnceLock<DatasetSplit> = std::sync::OnceLock::new();
    SPLIT.get_or_init(|| echobeam::train::build_dataset(&tiny_config()).unwrap())
}
