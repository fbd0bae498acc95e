//! Finite-difference checking of the selective-SSM slow path.

use fsg_lab::gradcheck::{max_relative_error, numeric_gradient_ridders};
use fsg_lab::hypernet::{HyperNetBundle, HyperNetConfig, ParamSet, SlowKind};
use fsg_lab::{Rng, Tensor};

fn main() -> fsg_lab::Result<()> {
    let cfg = HyperNetConfig { fast_hidden: 3, d: 3, expand: 2, state_dim: 2, slow: SlowKind::SelectiveSsm, n_layers: 2 };
    let mut rng = Rng::new(1);
    let mut bundle = HyperNetBundle::init(&cfg, &mut rng)?;
    bundle.head_proj = Tensor::randn(&[3, 1], 1.0, &mut rng);
    let window = Tensor::randn(&[8, 1], 1.0, &mut rng);
    let cot = Tensor::randn(&[2, 2], 1.0, &mut rng);

    let (_, cache) = bundle.slow_forward(1, &window, &[2, 2])?;
    let analytic = bundle.slow_backward(&cache, &cot)?;
    for (k, (name, point)) in bundle.named_tensors().into_iter().enumerate() {
        if name.starts_with("fast.") {
            continue;
        }
        let numeric = numeric_gradient_ridders(
            |p| {
                let mut b = bundle.clone();
                *b.tensors_mut()[k] = p.clone();
                b.slow_forward(1, &window, &[2, 2]).unwrap().0.dot(&cot).unwrap()
            },
            point,
            1e-2,
        )?;
        println!("{name:>12}: max rel. error {:.2e}", max_relative_error(&numeric, analytic.tensors()[k])?);
    }
    Ok(())
}
