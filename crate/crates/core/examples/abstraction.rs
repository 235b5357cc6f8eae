//! Build the interval abstraction of the clipped Gaussian chain and look at it.
//!
//! `cargo run --release --example abstraction -- [cells per dimension]`

use entrobound::config::gaussian_example;
use entrobound::pipeline::build_abstraction;

fn main() -> entrobound::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let cfg = gaussian_example(4, n);
    let (abs, source) = build_abstraction(&cfg, None)?;

    let sup = &abs.meta.sup_bounds;
    println!("{} cells, built in {:.3}s", abs.cell_count(), source.runtime_s);
    println!("L_q = {:.4}, L_grad = {:.4} ({})", sup.lq, sup.lgrad, if sup.analytic { "analytic" } else { "sampled" });
    println!("largest soundness margin {:.2e}, mean interval width {:.4}", abs.meta.max_margin, abs.mean_width());

    println!("\ninitial cell masses:");
    for (i, p) in abs.initial.iter().enumerate() {
        print!("{p:8.5}");
        if (i + 1) % n == 0 {
            println!();
        }
    }

    let centre = abs.cell_count() / 2;
    println!("\nrow of cell {centre}: [lower, upper] per target");
    for j in 0..abs.cell_count() {
        println!("  {j:3}  [{:.5}, {:.5}]", abs.lower[0][centre][j], abs.upper[0][centre][j]);
    }

    let path = std::env::temp_dir().join("entrobound-abstraction.json");
    abs.save(&path)?;
    let back = entrobound::abstraction::IntervalAbstraction::load(&path)?;
    assert_eq!(back, abs);
    println!("\nsaved to {} (checksum {})", path.display(), &back.checksum[..12]);
    Ok(())
}
