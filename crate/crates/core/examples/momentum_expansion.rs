//! Momentum SGD unrolled: the velocity is a geometric sum of past gradients,
//! the same kind of linear combination the slow-net learns.

use fsg_lab::optim::{momentum_expand, sgd_momentum_step, Optimizer, OptimizerConfig};
use fsg_lab::{Rng, Tensor};

fn main() -> fsg_lab::Result<()> {
    let (beta, lr) = (0.9, 0.1);
    let mut rng = Rng::new(3);
    let grads: Vec<Tensor> = (0..8).map(|_| Tensor::randn(&[2], 1.0, &mut rng)).collect();
    let mut opt = Optimizer::new(OptimizerConfig::sgd_momentum(beta), &[vec![2]]);
    let mut x = Tensor::zeros(&[2]);
    for t in 1..=grads.len() {
        let before = x.clone();
        sgd_momentum_step(&mut [&mut x], &[&grads[t - 1]], &mut opt, lr)?;
        let step = x.sub(&before)?;
        let closed = momentum_expand(beta, lr, &grads[..t])?;
        println!(
            "t={t} step {:?} closed form {:?} diff {:.1e}",
            step.data(),
            closed.data(),
            step.max_abs_diff(&closed)?
        );
    }
    Ok(())
}
