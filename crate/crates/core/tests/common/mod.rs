#![allow(dead_code)]

use entrobound::config::{ModelConfig, OutputConfig, PartitionConfig, RunConfig, SolverConfig};
use entrobound::geometry::Hyperrect;
use entrobound::kernels::TabulatedSpec;
use entrobound::synthesis::Sigma;

/// Tilted densities on `[0, 1]`: `q(x, y) = 1 + s_u (x - 1/2)(y - 1/2)`, linear in
/// each argument so node interpolation integrates exactly.
pub fn tilted_table(slopes: &[f64], horizon: usize) -> TabulatedSpec {
    let nodes = 5;
    let xs: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
    let transition = slopes
        .iter()
        .map(|s| xs.iter().flat_map(|x| xs.iter().map(move |y| 1.0 + s * (x - 0.5) * (y - 0.5))).collect())
        .collect();
    TabulatedSpec {
        domain: Hyperrect::unit(1),
        nodes: vec![nodes],
        horizon,
        initial: xs.iter().map(|y| 1.0 + 0.8 * (y - 0.5)).collect(),
        transition,
        actions: None,
        cost: Some((0..slopes.len()).map(|u| xs.iter().map(|x| (x - 0.5).powi(2) + 0.1 * u as f64).collect()).collect()),
        lq: None,
        lgrad: None,
        normalize: false,
    }
}

pub fn tilted_config(slopes: &[f64], horizon: usize, cells: usize, sigma: Option<Sigma>) -> RunConfig {
    RunConfig {
        model: ModelConfig::Custom {
            table: tilted_table(slopes, horizon),
            sigma,
        },
        partition: PartitionConfig { counts: vec![cells] },
        solver: SolverConfig {
            samples: 2000,
            ..SolverConfig::default()
        },
        output: OutputConfig {
            trajectories: 5,
            ..OutputConfig::default()
        },
    }
}
