//! Forward/backward kernels for the operations used by the reconstruction
//! network. All image tensors are `[C, H, W]` (batch size one).

use super::Tensor;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;
/// Smoothing of the envelope at the origin.
pub const ENVELOPE_EPS: f64 = 1e-12;

/// `c[m×n] = a[m×k] · b[k×n] + beta·c`, with optional transposed storage of a / b.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m×k, k×n and m×n elements and the strides
    // above address them in bounds for the given storage orders.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let s0 = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, gx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, v) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn conv_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, wd) = x.chw()?;
    let (co, ci, k) = match w.shape()[..] {
        [co, ci, k1, k2] if k1 == k2 => (co, ci, k1),
        _ => return Err(Error::shape(format!("kernel shape {:?} is not [C', C, k, k]", w.shape()))),
    };
    if k % 2 == 0 {
        return Err(Error::shape(format!("kernel size {k} must be odd")));
    }
    if ci != c {
        return Err(Error::shape(format!("kernel expects {ci} input channels, input has {c}")));
    }
    if b.shape() != [co] {
        return Err(Error::shape(format!("bias shape {:?} != [{co}]", b.shape())));
    }
    Ok((c, h, wd, co, k))
}

/// Same-padded cross-correlation.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c, h, wd, co, k) = conv_dims(x, w, b)?;
    let hw = h * wd;
    let mut y = vec![0.0; co * hw];
    for (o, &bias) in b.data().iter().enumerate() {
        y[o * hw..(o + 1) * hw].fill(bias);
    }
    if k == 1 {
        gemm(co, c, hw, w.data(), false, x.data(), false, 1.0, &mut y);
    } else {
        let mut cols = vec![0.0; c * k * k * hw];
        im2col(x.data(), c, h, wd, k, &mut cols);
        gemm(co, c * k * k, hw, w.data(), false, &cols, false, 1.0, &mut y);
    }
    Tensor::new(&[co, h, wd], y)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, b: &Tensor, grad_y: &Tensor, need_input: bool) -> Result<ConvGrads> {
    let (c, h, wd, co, k) = conv_dims(x, w, b)?;
    let hw = h * wd;
    if grad_y.shape() != [co, h, wd] {
        return Err(Error::shape(format!(
            "conv output gradient {:?} != [{co}, {h}, {wd}]",
            grad_y.shape()
        )));
    }
    let gy = grad_y.data();
    let bias: Vec<f64> = (0..co).map(|o| gy[o * hw..(o + 1) * hw].iter().sum()).collect();
    let ckk = c * k * k;
    let mut gw = vec![0.0; co * ckk];
    let input = if k == 1 {
        gemm(co, hw, c, gy, false, x.data(), true, 0.0, &mut gw);
        if need_input {
            let mut gx = vec![0.0; c * hw];
            gemm(c, co, hw, w.data(), true, gy, false, 0.0, &mut gx);
            Some(Tensor::new(&[c, h, wd], gx)?)
        } else {
            None
        }
    } else {
        let mut cols = vec![0.0; ckk * hw];
        im2col(x.data(), c, h, wd, k, &mut cols);
        gemm(co, hw, ckk, gy, false, &cols, true, 0.0, &mut gw);
        if need_input {
            gemm(ckk, co, hw, w.data(), true, gy, false, 0.0, &mut cols);
            let mut gx = vec![0.0; c * hw];
            col2im(&cols, c, h, wd, k, &mut gx);
            Some(Tensor::new(&[c, h, wd], gx)?)
        } else {
            None
        }
    };
    Ok(ConvGrads {
        input,
        kernel: Tensor::new(w.shape(), gw)?,
        bias: Tensor::new(&[co], bias)?,
    })
}

pub fn leaky_relu_forward(x: &Tensor, slope: f64) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn leaky_relu_backward(x: &Tensor, grad_y: &Tensor, slope: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index it came from (first maximum in scan order).
pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool needs even H, W, got [{c}, {h}, {w}]")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let base = ci * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, ho, wo], out)?, argmax))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], grad_y: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_y.data()) {
        gd[idx] += v;
    }
    g
}

pub fn upsample2_forward(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (ho, wo) = (2 * h, 2 * w);
    let xs = x.data();
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            let src = &xs[ci * h * w + (y / 2) * w..ci * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ci * ho * wo + y * wo..ci * ho * wo + (y + 1) * wo];
            for (pair, &v) in dst.chunks_exact_mut(2).zip(src) {
                pair[0] = v;
                pair[1] = v;
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}

pub fn upsample2_backward(grad_y: &Tensor) -> Result<Tensor> {
    let (c, ho, wo) = grad_y.chw()?;
    let (h, w) = (ho / 2, wo / 2);
    let gy = grad_y.data();
    let mut g = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..ho {
            let src = &gy[ci * ho * wo + y * wo..ci * ho * wo + (y + 1) * wo];
            let dst = &mut g[ci * h * w + (y / 2) * w..ci * h * w + (y / 2 + 1) * w];
            for (d, pair) in dst.iter_mut().zip(src.chunks_exact(2)) {
                *d += pair[0] + pair[1];
            }
        }
    }
    Tensor::new(&[c, h, w], g)
}

/// Channel concatenation of `[C_i, H, W]` tensors.
pub fn concat_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = parts
        .first()
        .ok_or_else(|| Error::shape("concat of zero tensors"))?
        .chw()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape(format!("concat spatial mismatch {:?} vs [{h}, {w}]", p.shape())));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[channels, h, w], data)
}

pub fn concat_backward(grad_y: &Tensor, channel_counts: &[usize]) -> Result<Vec<Tensor>> {
    let (_, h, w) = grad_y.chw()?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(channel_counts.len());
    for &c in channel_counts {
        let n = c * h * w;
        out.push(Tensor::new(&[c, h, w], grad_y.data()[offset..offset + n].to_vec())?);
        offset += n;
    }
    Ok(out)
}

/// Zero-pads `[C, H, W]` at the bottom/right to `[C, H', W']`.
pub fn pad_forward(x: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h_out < h || w_out < w {
        return Err(Error::shape(format!("cannot pad [{h}, {w}] down to [{h_out}, {w_out}]")));
    }
    let mut out = vec![0.0; c * h_out * w_out];
    for ci in 0..c {
        for y in 0..h {
            let src = &x.data()[(ci * h + y) * w..(ci * h + y + 1) * w];
            out[(ci * h_out + y) * w_out..(ci * h_out + y) * w_out + w].copy_from_slice(src);
        }
    }
    Tensor::new(&[c, h_out, w_out], out)
}

/// Keeps the top-left `[C, H', W']` block; the adjoint of [`pad_forward`].
pub fn crop_forward(x: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h_out > h || w_out > w {
        return Err(Error::shape(format!("cannot crop [{h}, {w}] up to [{h_out}, {w_out}]")));
    }
    let mut out = Vec::with_capacity(c * h_out * w_out);
    for ci in 0..c {
        for y in 0..h_out {
            out.extend_from_slice(&x.data()[(ci * h + y) * w..(ci * h + y) * w + w_out]);
        }
    }
    Tensor::new(&[c, h_out, w_out], out)
}

/// `sqrt(I² + Q² + ε²)`.
pub fn envelope_forward(i: &Tensor, q: &Tensor) -> Result<Tensor> {
    if i.shape() != q.shape() {
        return Err(Error::shape(format!("I {:?} and Q {:?} differ", i.shape(), q.shape())));
    }
    let eps2 = ENVELOPE_EPS * ENVELOPE_EPS;
    let data = i
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a * a + b * b + eps2).sqrt())
        .collect();
    Tensor::new(i.shape(), data)
}

pub fn envelope_backward(i: &Tensor, q: &Tensor, env: &Tensor, grad_y: &Tensor) -> (Tensor, Tensor) {
    let mut gi = Vec::with_capacity(i.len());
    let mut gq = Vec::with_capacity(i.len());
    for (((a, b), e), g) in i.data().iter().zip(q.data()).zip(env.data()).zip(grad_y.data()) {
        gi.push(g * a / e);
        gq.push(g * b / e);
    }
    (
        Tensor::new(i.shape(), gi).expect("same shape"),
        Tensor::new(i.shape(), gq).expect("same shape"),
    )
}

/// Mean absolute error.
pub fn l1_forward(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    if pred.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} and reference {:?} differ",
            pred.shape(),
            reference.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("L1 of empty tensors"));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

/// `sign(pred − ref) / N`, zero at exact ties.
pub fn l1_backward(pred: &Tensor, reference: &Tensor, grad_loss: f64) -> Tensor {
    let scale = grad_loss / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| {
            let d = a - b;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(pred.shape(), data).expect("same shape")
}
