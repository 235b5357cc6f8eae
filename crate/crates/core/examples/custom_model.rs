//! A user-supplied model: densities tabulated on a node grid, bounded and
//! controlled like the built-in ones.
//!
//! `cargo run --release --example custom_model`

use entrobound::config::{ModelConfig, OutputConfig, PartitionConfig, RunConfig, SolverConfig};
use entrobound::geometry::Hyperrect;
use entrobound::kernels::TabulatedSpec;
use entrobound::pipeline::build_abstraction;
use entrobound::bounds::compute_bounds;
use entrobound::synthesis::{synthesize, Sigma};

fn main() -> entrobound::Result<()> {
    // two actions tilting the next state towards the right or the left end,
    // q_u(x, y) = 1 + s_u (x - 1/2)(y - 1/2)
    let nodes = 9;
    let xs: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
    let table = |s: f64| -> Vec<f64> { xs.iter().flat_map(|x| xs.iter().map(move |y| 1.0 + s * (x - 0.5) * (y - 0.5))).collect() };
    let spec = TabulatedSpec {
        domain: Hyperrect::unit(1),
        nodes: vec![nodes],
        horizon: 6,
        initial: vec![1.0; nodes],
        transition: vec![table(3.0), table(-3.0)],
        actions: Some(vec![1.0, -1.0]),
        cost: Some(vec![xs.iter().map(|x| x * x).collect(), xs.iter().map(|x| (1.0 - x) * (1.0 - x)).collect()]),
        lq: None,
        lgrad: None,
        normalize: false,
    };
    let cfg = RunConfig {
        model: ModelConfig::Custom {
            table: spec,
            sigma: Some(Sigma::Plus),
        },
        partition: PartitionConfig { counts: vec![16] },
        solver: SolverConfig::default(),
        output: OutputConfig::default(),
    };
    cfg.validate()?;
    println!("{}", cfg.to_json()?);

    let (abs, _) = build_abstraction(&cfg, None)?;
    for u in 0..abs.action_count() {
        let b = compute_bounds(&abs.pin_action(u)?, 6, cfg.solver.log_base, &cfg.solver.optimizer(), false)?;
        println!("action {u} held fixed: {:.4} <= KL <= {:.4}", b.lower, b.upper_local.min(b.upper_global));
    }
    let s = synthesize(&abs, 6, Sigma::Plus, cfg.solver.log_base, &cfg.solver.optimizer(), None)?;
    println!("{}: [{:.4}, {:.4}]", s.mode, s.lower_local, s.upper_local);
    println!("actions at k=0: {:?}", s.policy_local.actions[0]);
    Ok(())
}
