//! Reverse-mode gradients of a small conv / activation / pool / L1 graph
//! against central finite differences.

use echobeam::nn::{Graph, Tensor};

fn loss(x: &Tensor, k: &Tensor, b: &Tensor, target: &Tensor) -> echobeam::Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let kv = g.param(k.clone());
    let bv = g.param(b.clone());
    let xv = g.constant(x.clone());
    let y = g.conv2d(xv, kv, bv)?;
    let y = g.leaky_relu(y, 0.01)?;
    let y = g.maxpool2(y)?;
    let t = g.constant(target.clone());
    let l = g.l1_loss(y, t)?;
    let mut grads = g.backward(l)?;
    let value = g.value(l).data()[0];
    Ok((value, vec![grads.take(kv).unwrap(), grads.take(bv).unwrap()]))
}

fn main() -> echobeam::Result<()> {
    let wave = |n: usize, f: f64| (0..n).map(|i| (f * i as f64).sin()).collect::<Vec<f64>>();
    let x = Tensor::new(&[1, 8, 8], wave(64, 0.37))?;
    let k = Tensor::new(&[2, 1, 3, 3], wave(18, 1.3).iter().map(|v| 0.5 * v).collect())?;
    let b = Tensor::new(&[2], vec![0.1, -0.2])?;
    let target = Tensor::new(&[2, 4, 4], wave(32, 0.71))?;

    let (_, grads) = loss(&x, &k, &b, &target)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for e in 0..k.len() {
        let (mut plus, mut minus) = (k.clone(), k.clone());
        plus.data_mut()[e] += h;
        minus.data_mut()[e] -= h;
        let fd = (loss(&x, &plus, &b, &target)?.0 - loss(&x, &minus, &b, &target)?.0) / (2.0 * h);
        let an = grads[0].data()[e];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12));
    }
    println!("kernel gradient: worst relative error {worst:.2e} over {} entries", k.len());
    Ok(())
}
