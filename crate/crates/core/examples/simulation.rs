//! Monte Carlo check of a synthesized policy: the sampled objective should
//! fall inside the certified interval.
//!
//! `cargo run --release --example simulation -- [samples]`

use entrobound::config::av_example;
use entrobound::montecarlo::{mc_summary, simulate, Controller};
use entrobound::pipeline::build_abstraction;
use entrobound::synthesis::{synthesize, Sigma};

fn main() -> entrobound::Result<()> {
    let samples: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50_000);
    let cfg = av_example(2.3, 80);
    let (abs, _) = build_abstraction(&cfg, None)?;
    let s = synthesize(&abs, cfg.model.horizon(), Sigma::Minus, cfg.solver.log_base, &cfg.solver.optimizer(), Some(2.3))?;

    let model = cfg.model.build(cfg.solver.quad_tol)?;
    let partition = abs.partition();
    let controller = Controller {
        policy: &s.policy_global,
        partition: &partition,
    };
    let est = mc_summary(model.as_ref(), Some(controller), samples, 42, cfg.solver.log_base, Some(Sigma::Minus))?;
    let obj = est.objective.expect("the vehicle model has a stage cost");
    let se = obj.std_error.unwrap_or(0.0);
    let (lo, hi) = (s.lower_global.max(s.lower_local), s.upper_global.min(s.upper_local));
    println!("KL to uniform   {:.4} +- {:.4}", est.kl.mean, est.kl.std_error.unwrap_or(0.0));
    println!("expected cost   {:.4}", est.cost.map_or(f64::NAN, |c| c.mean));
    println!("objective       {:.4} +- {se:.4}", obj.mean);
    println!("certified       [{lo:.4}, {hi:.4}]  inside: {}", lo - 3.0 * se <= obj.mean && obj.mean <= hi + 3.0 * se);

    println!("\none trajectory (speed, chosen action):");
    let t = &simulate(model.as_ref(), Some(controller), 1, 3)?[0];
    for (k, x) in t.states.iter().enumerate() {
        let u = t.actions.get(k).map_or("-".to_string(), |&u| s.policy_global.legend[u].clone());
        println!("  k={k}  x={:.4}  u={u}", x[0]);
    }
    Ok(())
}
