//! Reverse-mode gradients of a small regression loss, checked against
//! central differences.

use neuroencode::gradcore::{max_relative_error, Graph, Tensor};

fn loss(w: &Tensor, x: &Tensor, y: &Tensor) -> (f64, Tensor) {
    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let h = g.matmul(xv, wv).unwrap();
    let h = g.tanh(h).unwrap();
    let d = g.sub(h, yv).unwrap();
    let sq = g.mul(d, d).unwrap();
    let l = g.mean(sq).unwrap();
    let grads = g.backward(l).unwrap();
    (g.value(l).data()[0], grads.wrt(wv).clone())
}

fn main() {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.3], vec![-0.7, 0.9, 0.4]]);
    let y = Tensor::from_rows(&[vec![0.1, 0.0], vec![-0.2, 0.5], vec![0.3, -0.4]]);
    let w = Tensor::from_rows(&[vec![0.2, -0.1], vec![0.05, 0.3], vec![-0.25, 0.1]]);
    let (l, analytic) = loss(&w, &x, &y);
    let h = 1e-6;
    let numeric: Vec<f64> = (0..w.numel())
        .map(|i| {
            let (mut up, mut dn) = (w.clone(), w.clone());
            up.data_mut()[i] += h;
            dn.data_mut()[i] -= h;
            (loss(&up, &x, &y).0 - loss(&dn, &x, &y).0) / (2.0 * h)
        })
        .collect();
    println!("loss {l:.6}");
    println!("gradient {:?}", analytic.data());
    println!("max relative error vs finite differences {:.2e}", max_relative_error(analytic.data(), &numeric, 1e-8));
}
