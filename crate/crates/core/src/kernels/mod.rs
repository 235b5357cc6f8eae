//! Continuous-state models: densities, cell masses, samplers and the
//! density bounds feeding the discretization corrections.

mod gaussian;
mod tabulated;
mod triangular;
mod uniform;

pub use gaussian::ClippedGaussian;
pub use tabulated::{TabulatedModel, TabulatedSpec};
pub use triangular::{TriangularAv, Triangle};
pub use uniform::UniformModel;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{tensor_points, Hyperrect};
use crate::quadrature;

/// Random stream handed to samplers.
pub type SimRng = ChaCha8Rng;

/// Structure of the stage cost, which decides how cell cost bounds are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostShape {
    /// The model has no cost.
    Absent,
    /// Independent of the state.
    Constant,
    /// Monotone in every coordinate: extremes sit on cell corners.
    Monotone,
    /// Lipschitz (sup-norm of the gradient) with the given constant.
    Lipschitz(f64),
}

/// Bounds on the densities of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupBounds {
    /// Upper bound on every density value (`L_q`).
    pub lq: f64,
    /// Upper bound on every partial derivative, in the source or target state (`L_grad_q`).
    pub lgrad: f64,
    /// Whether the values come from formulas or from a sampled mesh.
    pub analytic: bool,
    /// Inflation applied to sampled values.
    pub safety: f64,
}

/// A continuous Markov chain or MDP on a box.
///
/// Chains are models with a single action. Densities are zero outside the box.
pub trait KernelModel: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> &Hyperrect;

    fn dim(&self) -> usize {
        self.domain().dim()
    }

    fn horizon(&self) -> usize;

    /// Labels of the actions (a chain has one).
    fn action_labels(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn action_count(&self) -> usize {
        self.action_labels().len()
    }

    fn initial_density(&self, x: &[f64]) -> f64;

    fn transition_density(&self, x: &[f64], y: &[f64], action: usize) -> f64;

    /// Probability that the initial state lies in `cell`.
    fn initial_mass(&self, cell: &Hyperrect, tol: f64) -> Result<f64> {
        quadrature::integrate(&|y| self.initial_density(y), cell, 16, tol)
    }

    /// Probability of moving from `x` into `cell` under `action`.
    fn cell_mass(&self, x: &[f64], cell: &Hyperrect, action: usize, tol: f64) -> Result<f64> {
        quadrature::integrate(&|y| self.transition_density(x, y, action), cell, 16, tol)
    }

    /// Whether `initial_mass` and `cell_mass` are exact up to rounding
    /// (otherwise they carry the quadrature tolerance).
    fn exact_masses(&self) -> bool {
        false
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64>;

    fn sample_step(&self, x: &[f64], action: usize, rng: &mut SimRng) -> Vec<f64>;

    fn cost_shape(&self) -> CostShape {
        CostShape::Absent
    }

    /// Stage cost `g(x, u)`; `None` when the model carries no cost.
    fn stage_cost(&self, _x: &[f64], _action: usize) -> Option<f64> {
        None
    }

    /// Density bounds known in closed form.
    fn analytic_bounds(&self) -> Option<(f64, f64)> {
        None
    }

    /// Bound on `|d q(x, y) / d y_d|` over `x` in `src`, `y` in `dst`, all `d`.
    fn target_gradient_bound(&self, _src: &Hyperrect, _dst: &Hyperrect, _action: usize) -> Option<f64> {
        None
    }

    /// Bound on `|d q0(y) / d y_d|` over `y` in `dst`.
    fn initial_gradient_bound(&self, _dst: &Hyperrect) -> Option<f64> {
        None
    }

    /// A box containing the support of `q(x, .)` for every `x` in `src`.
    fn support_hull(&self, _src: &Hyperrect, _action: usize) -> Option<Hyperrect> {
        None
    }
}

/// Density value and gradient bounds for `model`.
///
/// Closed-form bounds are used when the model provides them and
/// `prefer_analytic` is set; otherwise densities and central finite
/// differences are sampled on a tensor mesh of `mesh` points per dimension
/// (in both the source and the target state) and inflated by `safety`.
pub fn estimate_sup_bounds(model: &dyn KernelModel, mesh: usize, safety: f64, prefer_analytic: bool) -> SupBounds {
    if prefer_analytic {
        if let Some((lq, lgrad)) = model.analytic_bounds() {
            return SupBounds {
                lq,
                lgrad,
                analytic: true,
                safety: 1.0,
            };
        }
    }
    let domain = model.domain();
    let (points, _) = domain.mesh(mesh.max(2));
    let dim = model.dim();
    let steps: Vec<f64> = domain.sides().iter().map(|s| s / (mesh.max(2) as f64 * 20.0)).collect();

    // central difference, falling back to one-sided steps at the box faces
    let partial = |f: &dyn Fn(&[f64]) -> f64, x: &[f64], d: usize| -> f64 {
        let h = steps[d];
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[d] = (x[d] - h).max(domain.lows()[d]);
        b[d] = (x[d] + h).min(domain.highs()[d]);
        (f(&b) - f(&a)) / (b[d] - a[d])
    };

    let mut lq: f64 = 0.0;
    let mut lgrad: f64 = 0.0;
    for y in &points {
        lq = lq.max(model.initial_density(y));
        for d in 0..dim {
            lgrad = lgrad.max(partial(&|z| model.initial_density(z), y, d).abs());
        }
    }
    for u in 0..model.action_count() {
        for x in &points {
            for y in &points {
                lq = lq.max(model.transition_density(x, y, u));
                for d in 0..dim {
                    let gy = partial(&|z| model.transition_density(x, z, u), y, d);
                    let gx = partial(&|z| model.transition_density(z, y, u), x, d);
                    lgrad = lgrad.max(gy.abs()).max(gx.abs());
                }
            }
        }
    }
    SupBounds {
        lq: lq * safety,
        lgrad: lgrad * safety,
        analytic: false,
        safety,
    }
}

/// `ln(2 lq^K lgrad)`, `-inf` when the bound vanishes.
pub fn ln_trajectory_gradient_bound(lq: f64, lgrad: f64, horizon: usize) -> f64 {
    if lgrad <= 0.0 || lq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    2f64.ln() + horizon as f64 * lq.ln() + lgrad.ln()
}

/// Gradient bound `2 lq^K lgrad` of the trajectory density.
///
/// Computed in the log domain when the power overflows; the result is then
/// `inf`, and callers needing it should use [`ln_trajectory_gradient_bound`].
pub fn trajectory_gradient_bound(lq: f64, lgrad: f64, horizon: usize) -> f64 {
    if lgrad == 0.0 {
        return 0.0;
    }
    let direct = 2.0 * lq.powi(horizon as i32) * lgrad;
    if direct.is_finite() {
        direct
    } else {
        ln_trajectory_gradient_bound(lq, lgrad, horizon).exp()
    }
}

/// Trajectory density `q0(x_0) prod_k q^{u_k}(x_k, x_{k+1})`.
pub fn trajectory_density(model: &dyn KernelModel, states: &[Vec<f64>], actions: &[usize]) -> f64 {
    let mut t = model.initial_density(&states[0]);
    for k in 1..states.len() {
        t *= model.transition_density(&states[k - 1], &states[k], actions[k - 1]);
    }
    t
}

/// All corners of a cell.
pub(crate) fn corners(cell: &Hyperrect) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..cell.dim())
        .map(|j| vec![cell.lows()[j], cell.highs()[j]])
        .collect();
    tensor_points(&axes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gradient_bound_examples() {
        assert_eq!(trajectory_gradient_bound(1.0, 3.0, 5), 6.0);
        assert_eq!(trajectory_gradient_bound(7.0, 0.0, 5), 0.0);
        assert_eq!(trajectory_gradient_bound(2.0, 1.0, 4), 32.0);
        let ln = ln_trajectory_gradient_bound(1e10, 2.0, 40);
        assert_relative_eq!(ln, 2f64.ln() + 400.0 * 10f64.ln() + 2f64.ln(), max_relative = 1e-14);
        assert!(trajectory_gradient_bound(1e10, 2.0, 40).is_infinite());
    }

    #[test]
    fn corners_of_square() {
        let c = corners(&Hyperrect::unit(2));
        assert_eq!(c.len(), 4);
        assert!(c.contains(&vec![1.0, 0.0]));
    }
}
