use super::gaussian::uniform_point;
use super::{CostShape, KernelModel, SimRng};
use crate::error::{Error, Result};
use crate::geometry::Hyperrect;

/// Chain whose every density is uniform on the box.
///
/// Mostly a reference: its trajectory law is the uniform one, so the KL to
/// uniform is zero. Several actions and a constant cost may be attached.
#[derive(Debug, Clone)]
pub struct UniformModel {
    domain: Hyperrect,
    horizon: usize,
    actions: Vec<f64>,
    cost: Option<f64>,
}

impl UniformModel {
    pub fn new(domain: Hyperrect, horizon: usize) -> Self {
        Self {
            domain,
            horizon,
            actions: vec![0.0],
            cost: None,
        }
    }

    pub fn with_actions(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidModel("action list is empty".into()));
        }
        self.actions = labels;
        Ok(self)
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = Some(cost);
        self
    }
}

impl KernelModel for UniformModel {
    fn name(&self) -> &str {
        "uniform"
    }

    fn domain(&self) -> &Hyperrect {
        &self.domain
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_labels(&self) -> Vec<f64> {
        self.actions.clone()
    }

    fn initial_density(&self, x: &[f64]) -> f64 {
        if self.domain.contains(x) {
            1.0 / self.domain.volume()
        } else {
            0.0
        }
    }

    fn transition_density(&self, _x: &[f64], y: &[f64], _action: usize) -> f64 {
        self.initial_density(y)
    }

    fn initial_mass(&self, cell: &Hyperrect, _tol: f64) -> Result<f64> {
        Ok(cell.volume() / self.domain.volume())
    }

    fn cell_mass(&self, _x: &[f64], cell: &Hyperrect, _action: usize, _tol: f64) -> Result<f64> {
        Ok(cell.volume() / self.domain.volume())
    }

    fn exact_masses(&self) -> bool {
        true
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        uniform_point(&self.domain, rng)
    }

    fn sample_step(&self, _x: &[f64], _action: usize, rng: &mut SimRng) -> Vec<f64> {
        uniform_point(&self.domain, rng)
    }

    fn cost_shape(&self) -> CostShape {
        if self.cost.is_some() {
            CostShape::Constant
        } else {
            CostShape::Absent
        }
    }

    fn stage_cost(&self, _x: &[f64], _action: usize) -> Option<f64> {
        self.cost
    }

    fn analytic_bounds(&self) -> Option<(f64, f64)> {
        Some((1.0 / self.domain.volume(), 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::estimate_sup_bounds;

    #[test]
    fn sampled_gradient_is_zero() {
        let m = UniformModel::new(Hyperrect::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap(), 3);
        let b = estimate_sup_bounds(&m, 6, 1.1, false);
        assert_eq!(b.lgrad, 0.0);
        assert!((b.lq - 0.55).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_shape() {
        let m = UniformModel::new(Hyperrect::unit(1), 2).with_cost(1.5);
        assert_eq!(m.cost_shape(), CostShape::Constant);
        assert_eq!(m.stage_cost(&[0.3], 0), Some(1.5));
    }
}
