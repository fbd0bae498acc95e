//! DoReFa binarization of a small weight matrix, and the degenerate all-zero guard.

use fsg_lab::quantize::{preprocess, quantize, QuantLayerState};
use fsg_lab::{Rng, Tensor};

fn main() -> fsg_lab::Result<()> {
    let w = Tensor::randn(&[3, 4], 0.5, &mut Rng::new(7));
    let (w_hat, da) = preprocess(&w)?;
    let w_b = quantize(&w_hat, 1)?;
    for i in 0..3 {
        println!("W   {:?}", fmt(w.row(i)));
        println!("Ŵ   {:?}", fmt(w_hat.row(i)));
        println!("dA  {:?}", fmt(da.row(i)));
        println!("W_b {:?}\n", fmt(w_b.row(i)));
    }

    // A 2-bit quantizer has four levels.
    println!("2-bit: {:?}", fmt(quantize(&w_hat, 2)?.row(0)));

    // All zeros: the normaliser vanishes, so Ŵ is pinned at 0.5.
    let zero = QuantLayerState::new(Tensor::zeros(&[2, 2]), 0, 1)?;
    println!("zero layer: Ŵ = {:?}, W_b = {:?}", zero.w_hat.data(), zero.w_b.data());
    Ok(())
}

fn fmt(row: &[f64]) -> Vec<String> {
    row.iter().map(|v| format!("{v:+.3}")).collect()
}
