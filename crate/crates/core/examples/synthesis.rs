//! Entropy-regularized control of the vehicle model, against the cost-only
//! baseline.
//!
//! `cargo run --release --example synthesis -- [phi]`

use entrobound::config::av_example;
use entrobound::pipeline::build_abstraction;
use entrobound::synthesis::{evaluate_policy, synthesize, unregularized_policy, Sigma};

fn main() -> entrobound::Result<()> {
    let phi: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2.56);
    let cfg = av_example(phi, 80);
    let horizon = cfg.model.horizon();
    let settings = cfg.solver.optimizer();
    let base = cfg.solver.log_base;
    let (abs, _) = build_abstraction(&cfg, None)?;

    for sigma in [Sigma::Minus, Sigma::Plus] {
        let s = synthesize(&abs, horizon, sigma, base, &settings, Some(phi))?;
        println!("{} (phi = {phi})", s.mode);
        println!("  global: [{:.4}, {:.4}]", s.lower_global, s.upper_global);
        println!("  local:  [{:.4}, {:.4}]", s.lower_local, s.upper_local);
        println!("  first-step actions of the global policy:");
        let speeds: Vec<String> = s.policy_global.actions[0]
            .iter()
            .step_by(8)
            .map(|&u| s.policy_global.legend[u].clone())
            .collect();
        println!("    every 8th cell: {}", speeds.join(" "));
    }

    let dp = unregularized_policy(&abs, horizon)?;
    let b = evaluate_policy(&abs, &dp, Sigma::Minus, base, &settings)?;
    println!("cost-only baseline under the -KL objective: [{:.4}, {:.4}]", b.lower_global.max(b.lower_local), b.upper_global);
    Ok(())
}
