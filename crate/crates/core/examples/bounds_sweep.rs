//! Certified KL-to-uniform bounds of the clipped Gaussian chain as the grid is
//! refined, checked against a Monte Carlo estimate.
//!
//! `cargo run --release --example bounds_sweep -- [max cells per dimension]`

use entrobound::bounds::{compute_bounds, sweep_csv};
use entrobound::config::gaussian_example;
use entrobound::montecarlo::mc_kl_to_uniform;
use entrobound::pipeline::build_abstraction;

fn main() -> entrobound::Result<()> {
    let top: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let horizon = 4;

    let base = gaussian_example(horizon, 2);
    let model = base.model.build(base.solver.quad_tol)?;
    let mc = mc_kl_to_uniform(model.as_ref(), None, 100_000, 7, base.solver.log_base)?;
    println!("Monte Carlo: {:.5} +- {:.5}\n", mc.mean, mc.std_error.unwrap_or(0.0));

    println!("{:>3} {:>10} {:>12} {:>12} {:>8}", "N", "lower", "upper_local", "upper_glob", "time");
    let mut rows = Vec::new();
    for n in 2..=top {
        let cfg = base.with_resolution(n);
        let (abs, _) = build_abstraction(&cfg, None)?;
        let b = compute_bounds(&abs, horizon, cfg.solver.log_base, &cfg.solver.optimizer(), false)?;
        println!("{n:3} {:10.5} {:12.5} {:12.5} {:7.2}s", b.lower, b.upper_local, b.upper_global, b.runtime_s);
        rows.push((n, b));
    }

    let path = std::env::temp_dir().join("entrobound-sweep.csv");
    std::fs::write(&path, sweep_csv(&rows)?).map_err(|source| entrobound::Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    println!("\nwrote {}", path.display());
    Ok(())
}
