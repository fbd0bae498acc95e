//! Averaged-iterate gap of the FSG-style update on noisy convex quadratics,
//! against the theoretical bound, over a short horizon grid.

use fsg_lab::convergence::{bench_convergence, log_grid, BenchConfig};

fn main() -> fsg_lab::Result<()> {
    let cfg = BenchConfig {
        horizons: log_grid(100, 3000, 5),
        repeats: 8,
        ..BenchConfig::default()
    };
    let report = bench_convergence(&cfg)?;
    for r in &report.rows {
        println!("t={:5} gap {:.4e} ± {:.1e}  bound {:.4e}", r.t, r.mean_gap, r.stderr, r.rhs);
    }
    println!(
        "log-log slope {:?}, bound holds: {}, max p_k residual {:.1e}",
        report.slope,
        report.bound_holds(),
        report.max_pk_residual
    );
    Ok(())
}
