//! The per-layer FIFO of past gradients and the window the slow-net reads.

use fsg_lab::hgs::GradientHistoryBuffer;
use fsg_lab::Tensor;

fn main() -> fsg_lab::Result<()> {
    let mut buf = GradientHistoryBuffer::new(0, 3, 2)?;
    for t in 1..=5 {
        buf.push(&Tensor::from_vec(vec![t as f64, -(t as f64)]))?;
        let window = buf.window()?;
        println!("after push {t}: len {} window {:?}", buf.len(), window.data());
    }
    let mut csv = Vec::new();
    buf.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
