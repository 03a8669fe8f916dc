//! Builds a small graph by hand, runs the backward pass and compares the
//! result with central differences. Then fits a one-layer logistic model
//! with the same tape and the RMSprop optimizer.

use erpenet::tensor::gradcheck::check;
use erpenet::tensor::optim::{OptimizerKind, OptimizerState};
use erpenet::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> erpenet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = Tensor::new(vec![3, 2], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let b = Tensor::from_f64([2], &[0.1, -0.2])?;

    // sum(sigmoid(leaky_relu(x W + b)))
    let f = |g: &mut Graph<f64>, v: &[erpenet::tensor::Var]| {
        let h = g.dense(v[0], v[1], v[2])?;
        let a = g.leaky_relu(h, 0.1);
        let s = g.sigmoid(a);
        Ok(g.sum(s))
    };

    let mut g = Graph::new();
    let vars = [g.param(x.clone()), g.param(w.clone()), g.param(b.clone())];
    let y = f(&mut g, &vars)?;
    g.backward(y)?;
    println!("f = {:.6}", g.value(y).data()[0]);
    println!("df/dW = {:?}", g.grad_or_zeros(vars[1]).data());
    println!("df/db = {:?}", g.grad_or_zeros(vars[2]).data());

    let report = check(f, &[x, w, b], 1e-6, |_, len| (0..len).collect())?;
    println!("{} entries checked, worst relative error {:.2e}", report.checked, report.max_rel_error);

    // logistic regression on two Gaussian blobs
    let n = 200;
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as f32;
        let centre = if class == 1.0 { 1.0 } else { -1.0 };
        xs.push(centre + rng.random_range(-1.2..1.2));
        xs.push(-centre + rng.random_range(-1.2..1.2));
        labels.push(class);
    }
    let inputs = Tensor::new(vec![n, 2], xs)?;
    let mut weights = Tensor::<f32>::zeros(vec![2, 1]);
    let mut bias = Tensor::<f32>::zeros(vec![1]);
    let mut opt = OptimizerState::<f32>::new(OptimizerKind::Rmsprop, 0.05, 0.0)?;
    let sample_weights = vec![1.0f32; n];
    for step in 0..=60 {
        let mut g = Graph::<f32>::new();
        let x = g.input(inputs.cast());
        let w = g.param(weights.clone());
        let b = g.param(bias.clone());
        let logits = g.dense(x, w, b)?;
        let p = g.sigmoid(logits);
        let p = g.reshape(p, [n])?;
        let per = g.bce(p, &labels, 1e-7, true)?;
        let loss = g.weighted_mean(per, &sample_weights)?;
        g.backward(loss)?;
        if step % 20 == 0 {
            let probs = g.value(p).data();
            let correct = probs.iter().zip(&labels).filter(|(p, l)| ((**p > 0.5) as u8 as f32) == **l).count();
            println!("step {step:>2}: loss {:.4}, accuracy {}/{n}", g.value(loss).data()[0], correct);
        }
        let (gw, gb) = (g.grad_or_zeros(w), g.grad_or_zeros(b));
        opt.step(vec![("w", &mut weights, &gw), ("b", &mut bias, &gb)])?;
    }
    Ok(())
}
