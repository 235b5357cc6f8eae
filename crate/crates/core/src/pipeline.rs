//! End-to-end commands behind the command-line tool: build (or reuse) an
//! abstraction, bound it, synthesize policies, validate by simulation.
//!
//! Every report is wrapped with the resolved configuration and a content hash
//! of the inputs that produced it.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::abstraction::IntervalAbstraction;
use crate::bounds::{compute_bounds, sweep_csv, BoundsReport};
use crate::config::{content_hash, RunConfig};
use crate::error::{Error, Result};
use crate::kernels::estimate_sup_bounds;
use crate::montecarlo::{mc_summary, simulate, trajectories_csv, Controller, McEstimate, McSummary};
use crate::synthesis::{evaluate_policy, synthesize, unregularized_policy, Policy, PolicyBounds, SynthesisReport};

/// A result together with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub config: RunConfig,
    pub input_hash: String,
    pub result: T,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Where an abstraction came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionSource {
    pub cached: bool,
    pub path: Option<PathBuf>,
    pub runtime_s: f64,
}

/// Build the abstraction of `cfg`, reusing `cache_dir` when it holds a matching file.
pub fn build_abstraction(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<(IntervalAbstraction, AbstractionSource)> {
    let start = Instant::now();
    let cached_path = match cache_dir {
        Some(dir) => Some(dir.join(format!("abstraction-{}.json", &cfg.abstraction_key()?[..16]))),
        None => None,
    };
    if let Some(path) = &cached_path {
        if path.exists() {
            let abs = IntervalAbstraction::load(path)?;
            let runtime_s = start.elapsed().as_secs_f64();
            info!("reused cached abstraction {} in {runtime_s:.3}s", path.display());
            return Ok((
                abs,
                AbstractionSource {
                    cached: true,
                    path: cached_path,
                    runtime_s,
                },
            ));
        }
    }
    let s = &cfg.solver;
    let model = cfg.model.build(s.quad_tol)?;
    let partition = cfg.partition()?;
    let sup = estimate_sup_bounds(model.as_ref(), s.bounds_mesh, s.safety, s.analytic_bounds);
    let abs = IntervalAbstraction::build(model.as_ref(), &partition, sup, &s.abstraction())?;
    let runtime_s = start.elapsed().as_secs_f64();
    info!("built abstraction with {} cells and {} actions in {runtime_s:.3}s", abs.cell_count(), abs.action_count());
    if let Some(path) = &cached_path {
        write(path, &abs.to_json()?)?;
    }
    Ok((
        abs,
        AbstractionSource {
            cached: false,
            path: cached_path,
            runtime_s,
        },
    ))
}

/// Write the abstraction to `<out>/abstraction.json`.
pub fn cmd_abstract(cfg: &RunConfig, out: &Path, cache_dir: Option<&Path>) -> Result<PathBuf> {
    let (abs, _) = build_abstraction(cfg, cache_dir)?;
    let path = out.join("abstraction.json");
    write(&path, &abs.to_json()?)?;
    Ok(path)
}

/// One bounds run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRun {
    pub cells: usize,
    pub action: Option<usize>,
    pub abstraction_checksum: String,
    pub abstraction: AbstractionSource,
    pub bounds: BoundsReport,
}

fn bounds_for(abs: IntervalAbstraction, source: AbstractionSource, cfg: &RunConfig, horizon: usize, action: Option<usize>) -> Result<BoundsRun> {
    let chain = match (abs.action_count(), action) {
        (_, Some(u)) => abs.pin_action(u)?,
        (1, None) => abs,
        (_, None) => return Err(Error::config("--action", "the model has several actions; pin one to bound a chain")),
    };
    let bounds = compute_bounds(&chain, horizon, cfg.solver.log_base, &cfg.solver.optimizer(), cfg.output.values)?;
    info!("cells={} lower={} upper_global={} upper_local={}", chain.cell_count(), bounds.lower, bounds.upper_global, bounds.upper_local);
    Ok(BoundsRun {
        cells: chain.cell_count(),
        action,
        abstraction_checksum: chain.checksum.clone(),
        abstraction: source,
        bounds,
    })
}

/// Bound a chain given by the configuration or by an abstraction file.
///
/// With `sweep`, every resolution `n` in the range gets `n` cells per
/// dimension; the results are also written as CSV to `<out>/sweep.csv`.
pub fn cmd_bounds(
    cfg: &RunConfig,
    abstraction_file: Option<&Path>,
    action: Option<usize>,
    sweep: Option<RangeInclusive<usize>>,
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<Report<Vec<BoundsRun>>> {
    let mut runs = Vec::new();
    let mut inputs = vec![serde_json::to_string(cfg)?];
    match (&sweep, abstraction_file) {
        (Some(_), Some(_)) => return Err(Error::config("--sweep", "a sweep rebuilds abstractions and cannot use an abstraction file")),
        (None, Some(path)) => {
            let text = read(path)?;
            let abs = IntervalAbstraction::from_json(&text)?;
            let horizon = abs.meta.horizon;
            inputs.push(text);
            let source = AbstractionSource {
                cached: true,
                path: Some(path.to_path_buf()),
                runtime_s: 0.0,
            };
            runs.push(bounds_for(abs, source, cfg, horizon, action)?);
        }
        (None, None) => {
            let (abs, source) = build_abstraction(cfg, cache_dir)?;
            runs.push(bounds_for(abs, source, cfg, cfg.model.horizon(), action)?);
        }
        (Some(range), None) => {
            if range.is_empty() || *range.start() == 0 {
                return Err(Error::config("--sweep", "need a range A..B with 1 <= A <= B"));
            }
            for n in range.clone() {
                let c = cfg.with_resolution(n);
                let (abs, source) = build_abstraction(&c, cache_dir)?;
                runs.push(bounds_for(abs, source, &c, c.model.horizon(), action)?);
            }
        }
    }
    let report = Report {
        config: cfg.clone(),
        input_hash: content_hash(&inputs.iter().map(|s| s.as_bytes()).collect::<Vec<_>>()),
        result: runs,
    };
    if let Some(range) = sweep {
        let rows: Vec<(usize, BoundsReport)> = range.zip(&report.result).map(|(n, r)| (n, r.bounds.clone())).collect();
        if rows.len() >= 2 {
            write(&out.join("sweep.csv"), &sweep_csv(&rows)?)?;
        }
        write_json(&out.join("sweep.json"), &report)?;
    } else {
        write_json(&out.join("bounds.json"), &report)?;
    }
    Ok(report)
}

/// Bounds of the robust cost-only baseline under the regularized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub policy: Policy,
    pub bounds: PolicyBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub abstraction_checksum: String,
    pub abstraction: AbstractionSource,
    pub synthesis: SynthesisReport,
    pub baseline: Baseline,
}

/// Synthesize the regularized policies and the baseline; writes
/// `synthesis.json` and `policy_{global,local,unregularized}.json` to `out`.
pub fn cmd_synthesize(cfg: &RunConfig, out: &Path, cache_dir: Option<&Path>) -> Result<Report<SynthesisRun>> {
    let sigma = cfg.model.sigma().ok_or(Error::config("model.sigma", "synthesis needs the sign of the entropy term (1 or -1)"))?;
    let (abs, source) = build_abstraction(cfg, cache_dir)?;
    let horizon = cfg.model.horizon();
    let settings = cfg.solver.optimizer();
    let base = cfg.solver.log_base;
    let synthesis = synthesize(&abs, horizon, sigma, base, &settings, cfg.model.phi())?;
    info!("{}: [{}, {}] global, [{}, {}] local", synthesis.mode, synthesis.lower_global, synthesis.upper_global, synthesis.lower_local, synthesis.upper_local);
    let policy = unregularized_policy(&abs, horizon)?;
    let bounds = evaluate_policy(&abs, &policy, sigma, base, &settings)?;
    synthesis.policy_global.save(&out_file(out, "policy_global.json")?)?;
    synthesis.policy_local.save(&out_file(out, "policy_local.json")?)?;
    policy.save(&out_file(out, "policy_unregularized.json")?)?;
    let report = Report {
        config: cfg.clone(),
        input_hash: cfg.content_hash()?,
        result: SynthesisRun {
            abstraction_checksum: abs.checksum.clone(),
            abstraction: source,
            synthesis,
            baseline: Baseline { policy, bounds },
        },
    };
    write_json(&out.join("synthesis.json"), &report)?;
    Ok(report)
}

fn out_file(out: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(out.join(name))
}

/// Certified interval around a Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketCheck {
    /// What is bracketed: `kl` for chains, `objective` for policies.
    pub quantity: String,
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
    pub std_error: Option<f64>,
    /// `lower - 3 SE <= estimate <= upper + 3 SE`.
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    /// Policy file, or `constant:<u>` / `chain`.
    pub policy: String,
    pub estimates: McSummary,
    pub bracket: Option<BracketCheck>,
    pub trajectories_csv: Option<PathBuf>,
}

/// Interval certified for `policy` by a bounds or synthesis report.
fn certified_interval(report_text: &str, policy: Option<&Policy>) -> Result<Option<(&'static str, f64, f64)>> {
    if let Ok(r) = serde_json::from_str::<Report<SynthesisRun>>(report_text) {
        let Some(p) = policy else { return Ok(None) };
        let s = &r.result.synthesis;
        let b = &r.result.baseline;
        // every interval certified for this table applies; keep their intersection
        let mut found: Vec<(f64, f64)> = Vec::new();
        if p.actions == s.policy_global.actions {
            found.push((s.lower_global, s.upper_global));
        }
        if p.actions == s.policy_local.actions {
            found.push((s.lower_local, s.upper_local));
        }
        if p.actions == b.policy.actions {
            found.push((b.bounds.lower_global, b.bounds.upper_global));
            found.push((b.bounds.lower_local, b.bounds.upper_local));
        }
        let interval = (!found.is_empty()).then(|| {
            found
                .iter()
                .fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), &(l, u)| (lo.max(l), hi.min(u)))
        });
        return Ok(interval.map(|(lo, hi)| ("objective", lo, hi)));
    }
    if let Ok(r) = serde_json::from_str::<Report<Vec<BoundsRun>>>(report_text) {
        if let [run] = r.result.as_slice() {
            let b = &run.bounds;
            return Ok(Some(("kl", b.lower, b.upper_global.min(b.upper_local))));
        }
        return Err(Error::config("--report", "a sweep report has no single interval"));
    }
    Err(Error::config("--report", "not a bounds or synthesis report"))
}

fn bracket(quantity: &'static str, lower: f64, upper: f64, e: &McEstimate) -> BracketCheck {
    let se = e.std_error.unwrap_or(0.0);
    BracketCheck {
        quantity: quantity.to_string(),
        lower,
        upper,
        estimate: e.mean,
        std_error: e.std_error,
        inside: lower - 3.0 * se <= e.mean && e.mean <= upper + 3.0 * se,
    }
}

/// Simulate the closed loop and estimate KL, cost and objective.
///
/// The policy comes from `policy_file`, or is the constant `action`; a chain
/// needs neither. With `report_file` the estimate is checked against the
/// certified interval of the matching policy. Writes `simulation.json` and,
/// when enabled, `trajectories.csv` to `out`.
pub fn cmd_simulate(
    cfg: &RunConfig,
    policy_file: Option<&Path>,
    action: Option<usize>,
    report_file: Option<&Path>,
    out: &Path,
) -> Result<Report<SimulationRun>> {
    let s = &cfg.solver;
    let model = cfg.model.build(s.quad_tol)?;
    let partition = cfg.partition()?;
    let mut inputs = vec![serde_json::to_string(cfg)?];
    let (policy, name) = match (policy_file, action) {
        (Some(_), Some(_)) => return Err(Error::config("--action", "give either a policy file or a constant action")),
        (Some(path), None) => {
            let text = read(path)?;
            let p: Policy = serde_json::from_str(&text).map_err(|e| Error::config("--policy", e.to_string()))?;
            p.check(model.horizon(), partition.cell_count(), model.action_count())?;
            inputs.push(text);
            (Some(p), path.display().to_string())
        }
        (None, Some(u)) => {
            let p = Policy::constant(model.horizon(), partition.cell_count(), u, model.action_labels().iter().map(|a| format!("{a}")).collect());
            p.check(model.horizon(), partition.cell_count(), model.action_count())?;
            (Some(p), format!("constant:{u}"))
        }
        (None, None) => (None, "chain".to_string()),
    };
    let controller = policy.as_ref().map(|p| Controller { policy: p, partition: &partition });
    let sigma = cfg.model.sigma();
    let estimates = mc_summary(model.as_ref(), controller, s.samples, s.seed, s.log_base, sigma)?;

    let bracket = match report_file {
        Some(path) => {
            let text = read(path)?;
            inputs.push(text.clone());
            match certified_interval(&text, policy.as_ref())? {
                Some(("objective", lo, hi)) => {
                    let e = estimates
                        .objective
                        .ok_or(Error::config("model.sigma", "objective brackets need a sign and a stage cost"))?;
                    Some(bracket("objective", lo, hi, &e))
                }
                Some((q, lo, hi)) => Some(bracket(q, lo, hi, &estimates.kl)),
                None => None,
            }
        }
        None => None,
    };

    let trajectories_csv_path = if cfg.output.trajectories > 0 {
        let n = cfg.output.trajectories.min(s.samples);
        let paths = simulate(model.as_ref(), controller, n, s.seed)?;
        let path = out.join("trajectories.csv");
        write(&path, &trajectories_csv(&paths))?;
        Some(path)
    } else {
        None
    };

    let report = Report {
        config: cfg.clone(),
        input_hash: content_hash(&inputs.iter().map(|s| s.as_bytes()).collect::<Vec<_>>()),
        result: SimulationRun {
            policy: name,
            estimates,
            bracket,
            trajectories_csv: trajectories_csv_path,
        },
    };
    write_json(&out.join("simulation.json"), &report)?;
    Ok(report)
}

/// Parse `A..B` (inclusive).
pub fn parse_range(text: &str) -> Result<RangeInclusive<usize>> {
    let (a, b) = text.split_once("..").ok_or(Error::config("--sweep", "expected A..B"))?;
    let a: usize = a.trim().parse().map_err(|_| Error::config("--sweep", format!("bad start {a:?}")))?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| Error::config("--sweep", format!("bad end {b:?}")))?;
    if a == 0 || b < a {
        return Err(Error::config("--sweep", "need 1 <= A <= B"));
    }
    Ok(a..=b)
}
