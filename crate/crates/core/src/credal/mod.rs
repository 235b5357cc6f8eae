//! Per-step entropy functionals and optimizers over interval ambiguity sets.
//!
//! Every row problem solved here has the separable form
//!
//! ```text
//! F(p) = sum_j f_j(p_j),   f_j(p) = p * (kappa * ln(a_j * (p + c_j)) + v_j)
//! ```
//!
//! with `a_j = vol(X) / vol(X_j)`, `c_j >= 0` the local discretization
//! correction constant (zero when no correction is requested), `v_j` the
//! continuation value and `kappa = 1 / ln(base)`. Each `f_j` is convex, so
//! the minimum is found by conditional gradients ([`robust_min_convex`]) and
//! the maximum lives on a vertex of the interval polytope
//! ([`robust_max_convex`]).

mod frank_wolfe;
mod vertex;

pub use frank_wolfe::minimize;
pub use vertex::maximize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a row's bounds admit a distribution.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Logarithm base used for every entropy quantity of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
}

impl LogBase {
    /// `1 / ln(base)`: multiply a natural logarithm by this to change base.
    pub fn kappa(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Base2 => std::f64::consts::LOG2_E,
        }
    }

    /// Express a quantity measured in nats in this base.
    pub fn from_nats(self, nats: f64) -> f64 {
        nats * self.kappa()
    }

    pub fn name(self) -> &'static str {
        match self {
            LogBase::Natural => "natural",
            LogBase::Base2 => "base2",
        }
    }
}

/// Direction of a linear optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// The feasible set `{p in simplex : lower <= p <= upper}` of one abstract state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityRow {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AmbiguityRow {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "ambiguity row upper bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        let row = Self { lower, upper };
        row.check(0, None)?;
        Ok(row)
    }

    /// Singleton row `{p}`.
    pub fn point(p: Vec<f64>) -> Self {
        Self {
            lower: p.clone(),
            upper: p,
        }
    }

    /// The whole probability simplex over `n` outcomes.
    pub fn simplex(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub(crate) fn from_parts_unchecked(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    /// Validate bounds, reporting failures with the given row identity.
    pub fn check(&self, row: usize, action: Option<usize>) -> Result<()> {
        let lower_sum: f64 = self.lower.iter().sum();
        let upper_sum: f64 = self.upper.iter().sum();
        let ordered = self
            .lower
            .iter()
            .zip(&self.upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && *l >= 0.0 && l <= u);
        if self.lower.is_empty()
            || !ordered
            || lower_sum > 1.0 + FEASIBILITY_TOL
            || upper_sum < 1.0 - FEASIBILITY_TOL
        {
            return Err(Error::InfeasibleRow {
                row,
                action,
                lower_sum,
                upper_sum,
            });
        }
        Ok(())
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Whether `p` lies in the row set (bounds and unit sum, within `tol`).
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.len()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
            && (p.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Volumes, dimension, cell size and gradient bound entering the step functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyGeometry {
    /// `ln vol(X)`.
    pub ln_volume: f64,
    /// `ln vol(X_j)` per cell.
    pub ln_cell_volumes: Vec<f64>,
    pub state_dim: usize,
    /// Largest cell side.
    pub max_side: f64,
    /// Bound on the sup-norm of the kernel gradient.
    pub grad_bound: f64,
    pub base: LogBase,
}

impl EntropyGeometry {
    /// Geometry of `n` equal cells tiling a box of volume `volume` in `dim` dimensions.
    pub fn equal_cells(n: usize, volume: f64, dim: usize, max_side: f64) -> Self {
        Self {
            ln_volume: volume.ln(),
            ln_cell_volumes: vec![(volume / n as f64).ln(); n],
            state_dim: dim,
            max_side,
            grad_bound: 0.0,
            base: LogBase::Natural,
        }
    }

    pub fn with_grad_bound(mut self, l: f64) -> Self {
        self.grad_bound = l;
        self
    }

    pub fn with_base(mut self, base: LogBase) -> Self {
        self.base = base;
        self
    }

    /// `ln(vol(X) / vol(X_j))` per cell.
    pub fn ln_ratios(&self) -> Vec<f64> {
        self.ln_cell_volumes
            .iter()
            .map(|lc| self.ln_volume - lc)
            .collect()
    }

    /// `ln` of the uniform per-coordinate correction `n L dbar^(n+1) / 2`.
    pub fn ln_uniform_eps_constant(&self) -> f64 {
        ln_eps_constant(self.state_dim, self.grad_bound, self.max_side)
    }

    /// Objective with no correction term.
    pub fn objective(&self, values: &[f64]) -> Objective {
        Objective::new(self.ln_ratios(), vec![0.0; values.len()], values.to_vec(), self.base.kappa())
    }

    /// Objective carrying the uniform local correction.
    pub fn objective_eps(&self, values: &[f64]) -> Objective {
        let c = self.ln_uniform_eps_constant().exp();
        Objective::new(self.ln_ratios(), vec![c; values.len()], values.to_vec(), self.base.kappa())
    }
}

/// `ln(n L dbar^(n+1) / 2)`, `-inf` when the constant vanishes.
pub fn ln_eps_constant(n: usize, l: f64, dbar: f64) -> f64 {
    if n == 0 || l <= 0.0 || dbar <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (n as f64 / 2.0).ln() + l.ln() + (n as f64 + 1.0) * dbar.ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > 35.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `p ln(1 + C/p)` with `C = exp(ln_c)`, zero at `p = 0`.
fn xlog1p_ratio(p: f64, ln_c: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * softplus(ln_c - p.ln())
    }
}

/// Step functional: cell-relative entropy of `p` plus the expected value of `v`.
pub fn phi(p: &[f64], v: &[f64], geom: &EntropyGeometry) -> f64 {
    geom.objective(v).total(p)
}

/// [`phi`] plus the discretization correction `epsilon(p, n_x, L, dbar)`.
pub fn phi_eps(p: &[f64], v: &[f64], geom: &EntropyGeometry) -> f64 {
    phi(p, v, geom)
        + geom.base.from_nats(epsilon(
            p,
            geom.state_dim,
            geom.grad_bound,
            geom.max_side,
        ))
}

/// Discretization correction `sum_t p_t ln(1 + n L dbar^(n+1) / (2 p_t))`, in nats.
pub fn epsilon(p: &[f64], n: usize, l: f64, dbar: f64) -> f64 {
    let ln_c = ln_eps_constant(n, l, dbar);
    p.iter().map(|&pt| xlog1p_ratio(pt, ln_c)).sum()
}

/// Correction with a separate constant per coordinate: `sum_t p_t ln(1 + c_t / p_t)`.
pub fn epsilon_weighted(p: &[f64], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .map(|(&pt, &ct)| {
            if ct <= 0.0 {
                0.0
            } else {
                xlog1p_ratio(pt, ct.ln())
            }
        })
        .sum()
}

/// Worst case of [`epsilon`] over all distributions on `|S|` bins, in nats.
///
/// `ln_cells` is `ln |S|`, so the value stays finite for astronomically many bins.
pub fn global_epsilon(n: usize, ln_cells: f64, l: f64, dbar: f64) -> f64 {
    softplus(ln_eps_constant(n, l, dbar) + ln_cells)
}

/// [`global_epsilon`] with the gradient bound given as `ln L`, for bounds
/// that overflow a float.
pub fn global_epsilon_ln(n: usize, ln_cells: f64, ln_l: f64, dbar: f64) -> f64 {
    if n == 0 || ln_l == f64::NEG_INFINITY || dbar <= 0.0 {
        return 0.0;
    }
    softplus((n as f64 / 2.0).ln() + ln_l + (n as f64 + 1.0) * dbar.ln() + ln_cells)
}

/// Largest density value attainable in a cell of mass `p_t`, volume `lambda_t`
/// and sides `deltas` by a density whose gradient is bounded by `l`.
pub fn cell_max_density(p_t: f64, lambda_t: f64, l: f64, deltas: &[f64]) -> Result<f64> {
    let prod: f64 = deltas.iter().product();
    if (prod - lambda_t).abs() > 1e-10 * lambda_t.abs().max(prod.abs()) {
        return Err(Error::InvalidBox(format!(
            "cell volume {lambda_t} does not match the product of sides {prod}"
        )));
    }
    Ok(p_t / lambda_t + 0.5 * l * deltas.iter().sum::<f64>())
}

/// Largest density value attainable at the point `c` of the cell `[alpha, beta]`.
pub fn peak_density(p_t: f64, l: f64, alpha: &[f64], beta: &[f64], c: &[f64]) -> f64 {
    let deltas: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| b - a).collect();
    let lambda: f64 = deltas.iter().product();
    let spread: f64 = (0..deltas.len())
        .map(|j| {
            let others: f64 = deltas
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(_, d)| d)
                .product();
            others * ((c[j] - alpha[j]).powi(2) + (beta[j] - c[j]).powi(2))
        })
        .sum();
    p_t / lambda + l / (2.0 * lambda) * spread
}

/// Greedy extreme point of `lower <= p <= upper`, `sum p = lower_sum + slack`.
///
/// Slack goes to coordinates in order of `c` (descending for `Max`),
/// ties resolved by lowest index.
pub(crate) fn greedy(lower: &[f64], upper: &[f64], slack: f64, c: &[f64], sense: Sense) -> Vec<f64> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    match sense {
        Sense::Max => order.sort_by(|&i, &j| c[j].total_cmp(&c[i]).then(i.cmp(&j))),
        Sense::Min => order.sort_by(|&i, &j| c[i].total_cmp(&c[j]).then(i.cmp(&j))),
    }
    let mut p = lower.to_vec();
    let mut left = slack.max(0.0);
    for j in order {
        if left <= 0.0 {
            break;
        }
        let width = upper[j] - lower[j];
        if width <= left + 4.0 * f64::EPSILON {
            p[j] = upper[j];
            left -= width;
        } else {
            p[j] += left;
            left = 0.0;
        }
    }
    p
}

/// Optimize `sum_j c_j p_j` over the row; returns the value and an extreme point.
pub fn linear_extreme(row: &AmbiguityRow, c: &[f64], sense: Sense) -> Result<(f64, Vec<f64>)> {
    row.check(0, None)?;
    if c.len() != row.len() {
        return Err(Error::DimensionMismatch {
            what: "linear coefficients",
            expected: row.len(),
            got: c.len(),
        });
    }
    let slack = 1.0 - row.lower.iter().sum::<f64>();
    let p = greedy(&row.lower, &row.upper, slack, c, sense);
    let value = p.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok((value, p))
}

/// Separable convex row objective (see the module docs).
#[derive(Debug, Clone)]
pub struct Objective {
    ln_ratio: Vec<f64>,
    eps: Vec<f64>,
    values: Vec<f64>,
    kappa: f64,
}

impl Objective {
    pub fn new(ln_ratio: Vec<f64>, eps: Vec<f64>, values: Vec<f64>, kappa: f64) -> Self {
        debug_assert_eq!(ln_ratio.len(), values.len());
        debug_assert_eq!(eps.len(), values.len());
        Self {
            ln_ratio,
            eps,
            values,
            kappa,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    /// Same objective with the continuation values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    /// Same objective with the continuation values negated.
    pub fn negated_values(&self) -> Self {
        self.with_values(self.values.iter().map(|v| -v).collect())
    }

    /// `f_j(p)`.
    #[inline]
    pub fn term(&self, j: usize, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let c = self.eps[j];
        let ent = if c > 0.0 {
            p * (self.ln_ratio[j] + p.ln() + (c / p).ln_1p())
        } else {
            p * (self.ln_ratio[j] + p.ln())
        };
        self.kappa * ent + p * self.values[j]
    }

    /// `f_j'(p)`, with `ln 0` replaced by `ln 1e-300`.
    #[inline]
    pub fn deriv(&self, j: usize, p: f64) -> f64 {
        let c = self.eps[j];
        let q = (p + c).max(1e-300);
        let pp = p.max(0.0);
        self.kappa * (self.ln_ratio[j] + q.ln() + pp / q) + self.values[j]
    }

    /// `f_j''(p)`.
    #[inline]
    pub fn second(&self, j: usize, p: f64) -> f64 {
        let c = self.eps[j];
        let q = (p + c).max(1e-300);
        self.kappa * (1.0 / q + c / (q * q))
    }

    pub fn total(&self, p: &[f64]) -> f64 {
        p.iter().enumerate().map(|(j, &x)| self.term(j, x)).sum()
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        p.iter().enumerate().map(|(j, &x)| self.deriv(j, x)).collect()
    }
}

/// How a convex maximum is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxMode {
    /// Enumerate vertices within the budget, else fall back to the heuristic.
    #[default]
    Auto,
    /// Enumerate vertices; exceeding the budget still falls back (flagged).
    Exact,
    /// Multi-start vertex ascent only.
    Heuristic,
    /// Vertex ascent, but report the chord upper bound as the value.
    Certified,
}

/// Which method produced a row value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Degenerate,
    Exact,
    Heuristic,
    Certified,
    FrankWolfe,
}

/// Settings shared by all row optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub max_mode: MaxMode,
    pub vertex_budget: usize,
    pub starts: usize,
    pub fw_tol: f64,
    pub fw_max_iter: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_mode: MaxMode::Auto,
            vertex_budget: 1_000_000,
            starts: 32,
            fw_tol: 1e-9,
            fw_max_iter: 10_000,
            seed: 0x5eed,
        }
    }
}

/// Result of one row optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub value: f64,
    pub p: Vec<f64>,
    pub method: SolveMethod,
    /// Exact enumeration was requested but abandoned for the heuristic.
    pub fell_back: bool,
    /// Final duality gap for minimizations; zero otherwise.
    pub gap: f64,
    /// Sound upper bound on the maximum (chord relaxation), maximizations only.
    pub certificate: Option<f64>,
}

/// The free part of a row: coordinates with `upper > lower`.
#[derive(Debug, Clone)]
pub(crate) struct Reduced {
    pub free: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub slack: f64,
}

impl Reduced {
    pub fn new(row: &AmbiguityRow) -> Self {
        let mut free = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for j in 0..row.len() {
            if row.upper[j] > row.lower[j] {
                free.push(j);
                lo.push(row.lower[j]);
                hi.push(row.upper[j]);
            }
        }
        let width: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).sum();
        let slack = (1.0 - row.lower.iter().sum::<f64>()).clamp(0.0, width);
        Self {
            free,
            lo,
            hi,
            slack,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.free.is_empty() || self.slack <= 0.0
    }

    /// Embed a free-coordinate vector into a full row.
    pub fn expand(&self, row: &AmbiguityRow, x: &[f64]) -> Vec<f64> {
        let mut p = row.lower.clone();
        for (k, &j) in self.free.iter().enumerate() {
            p[j] = x[k];
        }
        p
    }
}

/// Maximize `phi` (or `phi_eps` when `use_eps`) over the row.
pub fn robust_max_convex(
    row: &AmbiguityRow,
    v: &[f64],
    geom: &EntropyGeometry,
    use_eps: bool,
    settings: &OptimizerSettings,
) -> Result<RowSolution> {
    let obj = if use_eps {
        geom.objective_eps(v)
    } else {
        geom.objective(v)
    };
    maximize(row, &obj, settings)
}

/// Minimize `phi` over the row.
pub fn robust_min_convex(
    row: &AmbiguityRow,
    v: &[f64],
    geom: &EntropyGeometry,
    settings: &OptimizerSettings,
) -> Result<RowSolution> {
    minimize(row, &geom.objective(v), settings)
}
