//! What the hypernetworks produce for a trained layer: the fast term, the slow
//! term, and the gradient they receive through the look-ahead step.

use fsg_lab::data::{gen_synthetic, SyntheticKind};
use fsg_lab::hypernet::ParamSet;
use fsg_lab::model::{LayerSpec, Model};
use fsg_lab::trainer::{TrainConfig, Trainer};
use fsg_lab::Rng;

fn main() -> fsg_lab::Result<()> {
    let data = gen_synthetic(SyntheticKind::Blobs, 2, 64, 0.4, &mut Rng::new(2))?;
    let layers = vec![LayerSpec::dense(2, 8, true), LayerSpec::Relu, LayerSpec::dense(8, 2, false)];
    let model = Model::new(layers, &[2], &mut Rng::new(3))?;
    let cfg = TrainConfig { lr: 1e-2, l: 4, ..TrainConfig::default() };
    let lr = cfg.lr;
    let mut t = Trainer::new(cfg, model)?;
    for step in 0..6 {
        let out = t.train_step(&data.x, &data.labels, lr)?;
        println!("step {step}: loss {:.4}", out.loss);
    }
    let p = t.propose(&t.bundle, lr)?;
    println!("composed gradient for the binarized layer: {:?}", &p.updates[0].data()[..4]);
    println!("rms scale seen by the hypernetworks: {:.3e}", p.scales[0]);
    let (hg, loss) = t.hypernet_gradient(&data.x, &data.labels, lr)?;
    println!("look-ahead loss {loss:.4}");
    for (name, g) in hg.named_tensors() {
        println!("{name:>14}: max |∂ℓ/∂φ| {:.3e}", g.max_abs());
    }
    Ok(())
}
