//! FSG against the straight-through baseline on two spirals.
//!
//! `cargo run --release --example train_spirals -- 300` runs the full
//! 300-epoch comparison for one seed; the default is a quick 60 epochs.

use fsg_lab::checks::{spirals_config, train_final};
use fsg_lab::trainer::Method;

fn main() -> fsg_lab::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    for method in [Method::Ste, Method::Fsg] {
        let mut cfg = spirals_config(method, 0);
        cfg.train.epochs = epochs;
        let (loss, acc) = train_final(&cfg)?;
        println!("{method:?}: final train loss {loss:.4}, accuracy {acc:.3} after {epochs} epochs");
    }
    Ok(())
}
