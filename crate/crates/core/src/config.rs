//! Run configuration: one JSON document with `model`, `partition`, `solver`
//! and `output` blocks. Unknown keys are rejected and every error names the
//! offending field.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::AbstractionSettings;
use crate::credal::{LogBase, MaxMode, OptimizerSettings};
use crate::error::{Error, Result};
use crate::geometry::{GridPartition, Hyperrect};
use crate::kernels::{ClippedGaussian, KernelModel, TabulatedModel, TabulatedSpec, Triangle, TriangularAv};
use crate::synthesis::Sigma;

/// Step standard deviation of the Gaussian example (per axis).
pub const DEFAULT_GAUSSIAN_SIGMA: f64 = 0.75;
/// Initial standard deviation of the Gaussian example (per axis).
pub const DEFAULT_GAUSSIAN_SIGMA0: f64 = 0.5;
/// Horizon of the vehicle example.
pub const DEFAULT_AV_HORIZON: usize = 5;
/// Source mesh of the vehicle example; its masses are closed-form, so a fine mesh is cheap.
pub const DEFAULT_AV_MESH: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangleConfig {
    pub left: f64,
    pub mode: f64,
    pub right: f64,
}

/// The continuous model. `sigma` is the sign of the entropy term in synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Gaussian random walk whose out-of-box mass is redrawn uniformly.
    ClippedGaussian {
        horizon: usize,
        #[serde(default = "unit_square")]
        domain: Hyperrect,
        /// Step covariance.
        cov: Vec<Vec<f64>>,
        mean0: Vec<f64>,
        /// Initial covariance.
        cov0: Vec<Vec<f64>>,
    },
    /// Vehicle velocity model with triangular noise on `[0, 1]`.
    TriangularAv {
        horizon: usize,
        phi: f64,
        #[serde(default = "default_av_initial")]
        initial: TriangleConfig,
        #[serde(default)]
        sigma: Option<Sigma>,
    },
    /// Multilinear densities tabulated on a node grid.
    Custom {
        table: TabulatedSpec,
        #[serde(default)]
        sigma: Option<Sigma>,
    },
}

fn unit_square() -> Hyperrect {
    Hyperrect::unit(2)
}

fn default_av_initial() -> TriangleConfig {
    TriangleConfig {
        left: 0.3,
        mode: 0.5,
        right: 0.7,
    }
}

impl ModelConfig {
    pub fn horizon(&self) -> usize {
        match self {
            ModelConfig::ClippedGaussian { horizon, .. } | ModelConfig::TriangularAv { horizon, .. } => *horizon,
            ModelConfig::Custom { table, .. } => table.horizon,
        }
    }

    pub fn sigma(&self) -> Option<Sigma> {
        match self {
            ModelConfig::ClippedGaussian { .. } => None,
            ModelConfig::TriangularAv { sigma, .. } | ModelConfig::Custom { sigma, .. } => *sigma,
        }
    }

    pub fn phi(&self) -> Option<f64> {
        match self {
            ModelConfig::TriangularAv { phi, .. } => Some(*phi),
            _ => None,
        }
    }

    pub fn domain(&self) -> Result<Hyperrect> {
        match self {
            ModelConfig::ClippedGaussian { domain, .. } => Ok(domain.clone()),
            ModelConfig::TriangularAv { .. } => Ok(Hyperrect::unit(1)),
            ModelConfig::Custom { table, .. } => Ok(table.domain.clone()),
        }
    }

    /// Instantiate the model; `quad_tol` is used where masses need quadrature.
    pub fn build(&self, quad_tol: f64) -> Result<Box<dyn KernelModel>> {
        let wrap = |e: Error| match e {
            Error::Config { .. } => e,
            other => Error::config("model", other.to_string()),
        };
        Ok(match self {
            ModelConfig::ClippedGaussian { horizon, cov, mean0, cov0, .. } => {
                let domain = self.domain().map_err(wrap)?;
                Box::new(ClippedGaussian::with_tolerance(domain, cov, mean0.clone(), cov0, *horizon, quad_tol * 1e-2).map_err(wrap)?)
            }
            ModelConfig::TriangularAv { horizon, phi, initial, .. } => {
                let tri = Triangle::new(initial.left, initial.mode, initial.right).map_err(|e| Error::config("model.initial", e.to_string()))?;
                Box::new(TriangularAv::new(*horizon, *phi, tri).map_err(wrap)?)
            }
            ModelConfig::Custom { table, .. } => Box::new(TabulatedModel::new(table.clone()).map_err(|e| Error::config("model.table", e.to_string()))?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Cells per dimension.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub quad_tol: f64,
    /// Mesh points per dimension in each source cell.
    pub mesh: usize,
    pub margin: bool,
    pub use_support: bool,
    /// Use closed-form density bounds when the model has them.
    pub analytic_bounds: bool,
    /// Mesh points per dimension when the density bounds are sampled.
    pub bounds_mesh: usize,
    /// Inflation of sampled density bounds.
    pub safety: f64,
    pub max_mode: MaxMode,
    pub vertex_budget: usize,
    pub starts: usize,
    pub fw_tol: f64,
    pub fw_max_iter: usize,
    pub log_base: LogBase,
    pub seed: u64,
    /// Monte Carlo sample count.
    pub samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let a = AbstractionSettings::default();
        let o = OptimizerSettings::default();
        Self {
            quad_tol: a.quad_tol,
            mesh: a.mesh,
            margin: a.margin,
            use_support: a.use_support,
            analytic_bounds: true,
            bounds_mesh: 9,
            safety: 1.1,
            max_mode: o.max_mode,
            vertex_budget: o.vertex_budget,
            starts: o.starts,
            fw_tol: o.fw_tol,
            fw_max_iter: o.fw_max_iter,
            log_base: LogBase::Natural,
            seed: 1,
            samples: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn abstraction(&self) -> AbstractionSettings {
        AbstractionSettings {
            quad_tol: self.quad_tol,
            mesh: self.mesh,
            margin: self.margin,
            use_support: self.use_support,
        }
    }

    pub fn optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            max_mode: self.max_mode,
            vertex_budget: self.vertex_budget,
            starts: self.starts,
            fw_tol: self.fw_tol,
            fw_max_iter: self.fw_max_iter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory receiving every artifact.
    pub dir: PathBuf,
    /// Trajectories written to the CSV dump by `simulate` (0 disables it).
    pub trajectories: usize,
    /// Keep per-step value vectors in bounds reports.
    pub values: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectories: 100,
            values: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub partition: PartitionConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

fn block<T: DeserializeOwned>(doc: &mut serde_json::Map<String, serde_json::Value>, name: &str, required: bool) -> Result<Option<T>> {
    match doc.remove(name) {
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| Error::config(name, e.to_string())),
        None if required => Err(Error::config(name, "missing block")),
        None => Ok(None),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let serde_json::Value::Object(mut doc) = value else {
            return Err(Error::config("<root>", "expected a JSON object"));
        };
        let model = block(&mut doc, "model", true)?.expect("required");
        let partition = block(&mut doc, "partition", true)?.expect("required");
        let solver = block(&mut doc, "solver", false)?.unwrap_or_default();
        let output = block(&mut doc, "output", false)?.unwrap_or_default();
        if let Some(key) = doc.keys().next() {
            return Err(Error::config(key, "unknown top-level key"));
        }
        let cfg = Self {
            model,
            partition,
            solver,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Range checks; errors name the field.
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        positive(s.quad_tol, "solver.quad_tol")?;
        positive(s.fw_tol, "solver.fw_tol")?;
        if s.mesh < 2 {
            return Err(Error::config("solver.mesh", "need at least 2 points per dimension"));
        }
        if s.bounds_mesh < 2 {
            return Err(Error::config("solver.bounds_mesh", "need at least 2 points per dimension"));
        }
        if !(s.safety >= 1.0 && s.safety.is_finite()) {
            return Err(Error::config("solver.safety", "must be at least 1"));
        }
        if s.starts == 0 {
            return Err(Error::config("solver.starts", "must be at least 1"));
        }
        if s.fw_max_iter == 0 {
            return Err(Error::config("solver.fw_max_iter", "must be at least 1"));
        }
        if s.samples == 0 {
            return Err(Error::config("solver.samples", "must be at least 1"));
        }

        let domain = self.model.domain()?;
        let counts = &self.partition.counts;
        if counts.len() != domain.dim() {
            return Err(Error::config(
                "partition.counts",
                format!("expected {} entries (one per dimension), got {}", domain.dim(), counts.len()),
            ));
        }
        if counts.contains(&0) {
            return Err(Error::config("partition.counts", "every count must be at least 1"));
        }
        match &self.model {
            ModelConfig::ClippedGaussian { horizon, mean0, .. } => {
                if mean0.len() != domain.dim() {
                    return Err(Error::config("model.mean0", format!("expected {} entries", domain.dim())));
                }
                if *horizon == 0 {
                    return Err(Error::config("model.horizon", "must be at least 1"));
                }
            }
            ModelConfig::TriangularAv { horizon, phi, .. } => {
                positive(*phi, "model.phi")?;
                if *horizon == 0 {
                    return Err(Error::config("model.horizon", "must be at least 1"));
                }
            }
            ModelConfig::Custom { table, .. } => {
                if table.horizon == 0 {
                    return Err(Error::config("model.table.horizon", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<GridPartition> {
        GridPartition::uniform(self.model.domain()?, &self.partition.counts)
    }

    /// The same configuration with `n` cells in every dimension.
    pub fn with_resolution(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.partition.counts = vec![n; c.partition.counts.len()];
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// sha256 of the resolved configuration.
    pub fn content_hash(&self) -> Result<String> {
        Ok(content_hash(&[serde_json::to_string(self)?.as_bytes()]))
    }

    /// Key of the abstraction this configuration produces.
    pub fn abstraction_key(&self) -> Result<String> {
        let s = &self.solver;
        let key = serde_json::json!({
            "model": self.model,
            "counts": self.partition.counts,
            "abstraction": s.abstraction(),
            "analytic_bounds": s.analytic_bounds,
            "bounds_mesh": s.bounds_mesh,
            "safety": s.safety,
        });
        Ok(content_hash(&[serde_json::to_string(&key)?.as_bytes()]))
    }
}

/// Hex sha256 over the concatenated inputs, each framed git-style as `blob <len>\0<bytes>`.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(format!("blob {}\0", p.len()).as_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Configuration of the unit-square clipped Gaussian example.
pub fn gaussian_example(horizon: usize, n: usize) -> RunConfig {
    let s2 = DEFAULT_GAUSSIAN_SIGMA.powi(2);
    let s02 = DEFAULT_GAUSSIAN_SIGMA0.powi(2);
    RunConfig {
        model: ModelConfig::ClippedGaussian {
            horizon,
            domain: unit_square(),
            cov: vec![vec![s2, 0.0], vec![0.0, s2]],
            mean0: vec![0.5, 0.5],
            cov0: vec![vec![s02, 0.0], vec![0.0, s02]],
        },
        partition: PartitionConfig { counts: vec![n, n] },
        solver: SolverConfig::default(),
        output: OutputConfig::default(),
    }
}

/// Configuration of the vehicle example.
pub fn av_example(phi: f64, n: usize) -> RunConfig {
    RunConfig {
        model: ModelConfig::TriangularAv {
            horizon: DEFAULT_AV_HORIZON,
            phi,
            initial: default_av_initial(),
            sigma: Some(Sigma::Minus),
        },
        partition: PartitionConfig { counts: vec![n] },
        solver: SolverConfig {
            mesh: DEFAULT_AV_MESH,
            ..SolverConfig::default()
        },
        output: OutputConfig::default(),
    }
}
