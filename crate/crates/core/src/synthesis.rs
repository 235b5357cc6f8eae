//! Entropy-regularized robust policy synthesis on an interval MDP.
//!
//! The objective is `E[sum_k g(x_k, u_k)] + sigma KL(T || U)`. A pessimistic
//! recursion picks the policy and bounds the objective from above; an
//! optimistic one evaluates that policy from below.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abstraction::IntervalAbstraction;
use crate::bounds::{row_objective, step_rows, Constants, SolverStats};
use crate::credal::{linear_extreme, maximize, minimize, AmbiguityRow, LogBase, OptimizerSettings, RowSolution, Sense};
use crate::error::{Error, Result};

/// Sign of the entropy term in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum Sigma {
    /// `+KL`: predictable behaviour is penalized.
    Plus,
    /// `-KL`: predictable behaviour is rewarded.
    Minus,
}

impl Sigma {
    pub fn value(self) -> f64 {
        match self {
            Sigma::Plus => 1.0,
            Sigma::Minus => -1.0,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Sigma::Plus => "penalize predictability (+KL)",
            Sigma::Minus => "reward predictability (-KL)",
        }
    }
}

impl TryFrom<i32> for Sigma {
    type Error = String;

    fn try_from(v: i32) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sigma::Plus),
            -1 => Ok(Sigma::Minus),
            _ => Err(format!("sigma must be +1 or -1, got {v}")),
        }
    }
}

impl From<Sigma> for i32 {
    fn from(s: Sigma) -> i32 {
        s.value() as i32
    }
}

/// Deterministic Markov policy over the abstraction cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    /// `actions[k][i]` indexes into the action legend.
    pub actions: Vec<Vec<usize>>,
    /// Action legend (labels of the model's actions).
    pub legend: Vec<String>,
}

impl Policy {
    pub fn constant(horizon: usize, cells: usize, action: usize, legend: Vec<String>) -> Self {
        Self {
            actions: vec![vec![action; cells]; horizon],
            legend,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, k: usize, i: usize) -> usize {
        self.actions[k][i]
    }

    /// Check the table against a horizon, cell count and action count.
    pub fn check(&self, horizon: usize, cells: usize, actions: usize) -> Result<()> {
        if self.actions.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "policy horizon",
                expected: horizon,
                got: self.actions.len(),
            });
        }
        for row in &self.actions {
            if row.len() != cells {
                return Err(Error::DimensionMismatch {
                    what: "policy cells",
                    expected: cells,
                    got: row.len(),
                });
            }
            if let Some(&a) = row.iter().find(|&&a| a >= actions) {
                return Err(Error::config("policy.actions", format!("action index {a} out of range ({actions} actions)")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn legend(abs: &IntervalAbstraction) -> Vec<String> {
    abs.actions.iter().map(|a| format!("{a}")).collect()
}

/// Output of [`synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub sigma: Sigma,
    pub mode: String,
    /// Policy chosen without corrections inside the recursion.
    pub policy_global: Policy,
    /// Policy chosen with the local correction inside the recursion.
    pub policy_local: Policy,
    pub lower_global: f64,
    pub upper_global: f64,
    pub lower_local: f64,
    pub upper_local: f64,
    pub eps_global: f64,
    /// Tolerance accounting added to upper or subtracted from lower values.
    pub tolerance_global: f64,
    pub tolerance_local: f64,
    #[serde(default)]
    pub phi: Option<f64>,
    pub constants: Constants,
    pub solver: SolverStats,
    pub runtime_s: f64,
}

struct Pass {
    values: Vec<f64>,
    policy: Vec<Vec<usize>>,
    tolerance: f64,
}

struct Problem<'a> {
    abs: &'a IntervalAbstraction,
    rows: Vec<Vec<AmbiguityRow>>,
    eps: Vec<Vec<Vec<f64>>>,
    ln_ratios: Vec<f64>,
    cost_upper: &'a [Vec<f64>],
    cost_lower: &'a [Vec<f64>],
    base: LogBase,
    settings: &'a OptimizerSettings,
}

impl<'a> Problem<'a> {
    fn new(abs: &'a IntervalAbstraction, base: LogBase, settings: &'a OptimizerSettings) -> Result<Self> {
        let (Some(cost_upper), Some(cost_lower)) = (&abs.cost_upper, &abs.cost_lower) else {
            return Err(Error::MissingCost("synthesis needs stage-cost bounds"));
        };
        let n = abs.cell_count();
        let rows = (0..abs.action_count()).map(|u| (0..n).map(|i| abs.row(u, i)).collect()).collect();
        let eps = (0..abs.action_count()).map(|u| (0..n).map(|i| abs.eps_constants(u, i)).collect()).collect();
        Ok(Self {
            abs,
            rows,
            eps,
            ln_ratios: abs.geometry(base).ln_ratios(),
            cost_upper,
            cost_lower,
            base,
            settings,
        })
    }

    /// Largest value of `sigma KL-term + p.v` over the row (plus the correction when `eps`).
    fn worst(&self, u: usize, i: usize, v: &[f64], sigma: Sigma, eps: bool) -> Result<RowSolution> {
        let row = &self.rows[u][i];
        match sigma {
            Sigma::Plus => {
                let c = eps.then(|| self.eps[u][i].clone());
                maximize(row, &row_objective(&self.ln_ratios, c, v.to_vec(), self.base), self.settings)
            }
            Sigma::Minus => {
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                let mut s = minimize(row, &row_objective(&self.ln_ratios, None, neg, self.base), self.settings)?;
                s.value = -s.value;
                Ok(s)
            }
        }
    }

    /// Smallest value of `sigma KL-term + p.v` over the row (minus the correction when `eps`).
    fn best(&self, u: usize, i: usize, v: &[f64], sigma: Sigma, eps: bool) -> Result<RowSolution> {
        let row = &self.rows[u][i];
        match sigma {
            Sigma::Plus => minimize(row, &row_objective(&self.ln_ratios, None, v.to_vec(), self.base), self.settings),
            Sigma::Minus => {
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                let c = eps.then(|| self.eps[u][i].clone());
                let mut s = maximize(row, &row_objective(&self.ln_ratios, c, neg, self.base), self.settings)?;
                s.value = -s.value;
                Ok(s)
            }
        }
    }

    /// Pessimistic recursion; chooses actions unless `fixed` is given.
    fn upper(&self, horizon: usize, sigma: Sigma, eps: bool, fixed: Option<&Policy>, stats: &mut SolverStats) -> Result<Pass> {
        let n = self.abs.cell_count();
        let actions = self.abs.action_count();
        let mut v = vec![0.0; n];
        let mut policy = vec![vec![0; n]; horizon];
        let mut tolerance = 0.0;
        for k in (0..horizon).rev() {
            let per_cell = step_rows(n, |i| {
                let choices: Vec<usize> = match fixed {
                    Some(p) => vec![p.action(k, i)],
                    None => (0..actions).collect(),
                };
                let mut best: Option<(f64, usize, RowSolution)> = None;
                let mut gap: f64 = 0.0;
                for u in choices {
                    let s = self.worst(u, i, &v, sigma, eps)?;
                    gap = gap.max(s.gap);
                    let total = self.cost_upper[i][u] + s.value;
                    if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                        best = Some((total, u, s));
                    }
                }
                let (total, u, mut s) = best.expect("at least one action");
                s.value = total;
                s.gap = gap;
                s.p = vec![u as f64];
                Ok(s)
            })?;
            let mut gap: f64 = 0.0;
            for (i, s) in per_cell.iter().enumerate() {
                stats.record(s);
                gap = gap.max(s.gap);
                policy[k][i] = s.p[0] as usize;
            }
            if sigma == Sigma::Minus {
                tolerance += gap.max(self.settings.fw_tol);
            }
            v = per_cell.iter().map(|s| s.value).collect();
        }
        Ok(Pass { values: v, policy, tolerance })
    }

    /// Optimistic evaluation of `policy`.
    fn lower(&self, horizon: usize, sigma: Sigma, eps: bool, policy: &Policy, stats: &mut SolverStats) -> Result<Pass> {
        let n = self.abs.cell_count();
        let mut v = vec![0.0; n];
        let mut tolerance = 0.0;
        for k in (0..horizon).rev() {
            let per_cell = step_rows(n, |i| {
                let u = policy.action(k, i);
                let mut s = self.best(u, i, &v, sigma, eps)?;
                s.value += self.cost_lower[i][u];
                Ok(s)
            })?;
            let mut gap: f64 = 0.0;
            for s in &per_cell {
                stats.record(s);
                gap = gap.max(s.gap);
            }
            if sigma == Sigma::Plus {
                tolerance += gap.max(self.settings.fw_tol);
            }
            v = per_cell.iter().map(|s| s.value).collect();
        }
        Ok(Pass {
            values: v,
            policy: policy.actions.clone(),
            tolerance,
        })
    }

    /// `sigma KL-term(pi) + pi.v`, with the initial correction when `eps`.
    fn initial(&self, v: &[f64], sigma: Sigma, eps: bool) -> f64 {
        let pi = &self.abs.initial;
        let c = eps.then(|| self.abs.initial_eps_constants());
        match sigma {
            Sigma::Plus => row_objective(&self.ln_ratios, c, v.to_vec(), self.base).total(pi),
            Sigma::Minus => {
                let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                -row_objective(&self.ln_ratios, c, neg, self.base).total(pi)
            }
        }
    }
}

/// Two-sided bounds on the objective of a fixed policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyBounds {
    pub lower_global: f64,
    pub upper_global: f64,
    pub lower_local: f64,
    pub upper_local: f64,
}

fn check_inputs(abs: &IntervalAbstraction, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Guard("horizon K must be at least 1".into()));
    }
    if !abs.has_costs() {
        return Err(Error::MissingCost("synthesis needs stage-cost bounds"));
    }
    Ok(())
}

/// Synthesize the two policies and bound their objectives.
pub fn synthesize(
    abs: &IntervalAbstraction,
    horizon: usize,
    sigma: Sigma,
    base: LogBase,
    settings: &OptimizerSettings,
    phi: Option<f64>,
) -> Result<SynthesisReport> {
    let start = Instant::now();
    check_inputs(abs, horizon)?;
    let prob = Problem::new(abs, base, settings)?;
    let constants = Constants::new(abs, horizon, base)?;
    let eps_global = constants.global_epsilon();
    let mut stats = SolverStats::default();
    let names = legend(abs);

    // corrections sit on whichever side bounds the +KL quantity from above
    let up_g = prob.upper(horizon, sigma, false, None, &mut stats)?;
    let policy_global = Policy {
        actions: up_g.policy.clone(),
        legend: names.clone(),
    };
    let lo_g = prob.lower(horizon, sigma, false, &policy_global, &mut stats)?;

    let (up_l, policy_local) = match sigma {
        Sigma::Plus => {
            let up = prob.upper(horizon, sigma, true, None, &mut stats)?;
            let p = Policy {
                actions: up.policy.clone(),
                legend: names,
            };
            (up, p)
        }
        // no correction enters the selection, so both policies coincide
        Sigma::Minus => (
            Pass {
                values: up_g.values.clone(),
                policy: up_g.policy.clone(),
                tolerance: up_g.tolerance,
            },
            policy_global.clone(),
        ),
    };
    let lo_l = prob.lower(horizon, sigma, sigma == Sigma::Minus, &policy_local, &mut stats)?;

    let (lower_global, upper_global, lower_local, upper_local) = match sigma {
        Sigma::Plus => (
            prob.initial(&lo_g.values, sigma, false) - lo_g.tolerance,
            prob.initial(&up_g.values, sigma, false) + eps_global,
            prob.initial(&lo_l.values, sigma, false) - lo_l.tolerance,
            prob.initial(&up_l.values, sigma, true),
        ),
        Sigma::Minus => (
            prob.initial(&lo_g.values, sigma, false) - eps_global,
            prob.initial(&up_g.values, sigma, false) + up_g.tolerance,
            prob.initial(&lo_l.values, sigma, true),
            prob.initial(&up_l.values, sigma, false) + up_l.tolerance,
        ),
    };
    Ok(SynthesisReport {
        sigma,
        mode: sigma.describe().to_string(),
        policy_global,
        policy_local,
        lower_global,
        upper_global,
        lower_local,
        upper_local,
        eps_global,
        tolerance_global: lo_g.tolerance + up_g.tolerance,
        tolerance_local: lo_l.tolerance + up_l.tolerance,
        phi,
        constants,
        solver: stats,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Bound the objective of a given policy (e.g. a baseline) without re-optimizing.
pub fn evaluate_policy(
    abs: &IntervalAbstraction,
    policy: &Policy,
    sigma: Sigma,
    base: LogBase,
    settings: &OptimizerSettings,
) -> Result<PolicyBounds> {
    let horizon = policy.horizon();
    check_inputs(abs, horizon)?;
    policy.check(horizon, abs.cell_count(), abs.action_count())?;
    let prob = Problem::new(abs, base, settings)?;
    let eps_global = Constants::new(abs, horizon, base)?.global_epsilon();
    let mut stats = SolverStats::default();
    let up_g = prob.upper(horizon, sigma, false, Some(policy), &mut stats)?;
    let lo_g = prob.lower(horizon, sigma, false, policy, &mut stats)?;
    Ok(match sigma {
        Sigma::Plus => {
            let up_l = prob.upper(horizon, sigma, true, Some(policy), &mut stats)?;
            let lower = prob.initial(&lo_g.values, sigma, false) - lo_g.tolerance;
            PolicyBounds {
                lower_global: lower,
                upper_global: prob.initial(&up_g.values, sigma, false) + eps_global,
                lower_local: lower,
                upper_local: prob.initial(&up_l.values, sigma, true),
            }
        }
        Sigma::Minus => {
            let lo_l = prob.lower(horizon, sigma, true, policy, &mut stats)?;
            let upper = prob.initial(&up_g.values, sigma, false) + up_g.tolerance;
            PolicyBounds {
                lower_global: prob.initial(&lo_g.values, sigma, false) - eps_global,
                upper_global: upper,
                lower_local: prob.initial(&lo_l.values, sigma, true),
                upper_local: upper,
            }
        }
    })
}

/// Robust minimum-cost policy ignoring the entropy term.
pub fn unregularized_policy(abs: &IntervalAbstraction, horizon: usize) -> Result<Policy> {
    let cost_upper = abs.cost_upper.as_ref().ok_or(Error::MissingCost("the baseline policy minimizes cost"))?;
    let n = abs.cell_count();
    let mut w = vec![0.0; n];
    let mut actions = vec![vec![0; n]; horizon];
    for k in (0..horizon).rev() {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut best = f64::INFINITY;
            for u in 0..abs.action_count() {
                let (v, _) = linear_extreme(&abs.row(u, i), &w, Sense::Max)?;
                let total = cost_upper[i][u] + v;
                if total < best {
                    best = total;
                    actions[k][i] = u;
                }
            }
            next[i] = best;
        }
        w = next;
    }
    Ok(Policy {
        actions,
        legend: legend(abs),
    })
}
