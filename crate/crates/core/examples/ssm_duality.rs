//! A time-invariant diagonal SSM computed two ways: as a recurrence and as a
//! convolution with its kernel.

use fsg_lab::hypernet::ssm::{ssm_conv, ssm_discretize, ssm_kernel, ssm_scan, SsmSchedule, StepParams};

fn main() -> fsg_lab::Result<()> {
    let z = ssm_discretize(&[-1.0], &[1.0], 0.1)?;
    println!("ZOH a=-1, b=1, Δ=0.1: Ā = {:.7}, B̄ = {:.7}", z.a_bar[0], z.b_bar[0]);

    let d = ssm_discretize(&[-0.5, -2.0, -4.0], &[1.0, 0.5, -1.0], 0.2)?;
    let p = StepParams::from_discretized(d, vec![1.0, -1.0, 0.5])?;
    let x: Vec<f64> = (0..12).map(|t| ((t as f64) * 0.7).sin()).collect();
    println!("kernel: {:?}", ssm_kernel(&p, 6).iter().map(|k| format!("{k:.4}")).collect::<Vec<_>>());
    let sched = SsmSchedule::Invariant(p);
    let scan = ssm_scan(&sched, &x)?;
    let conv = ssm_conv(&sched, &x)?;
    for (t, (a, b)) in scan.iter().zip(&conv).enumerate() {
        println!("t={t:2} scan {a:+.12} conv {b:+.12}");
    }
    let diff = scan.iter().zip(&conv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |scan − conv| = {diff:.2e}");
    Ok(())
}
