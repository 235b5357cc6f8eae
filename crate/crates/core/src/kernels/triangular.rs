use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CostShape, KernelModel, SimRng};
use crate::error::{Error, Result};
use crate::geometry::Hyperrect;

/// Triangular distribution on `[left, right]` peaking at `mode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triangle {
    pub left: f64,
    pub mode: f64,
    pub right: f64,
}

impl Triangle {
    pub fn new(left: f64, mode: f64, right: f64) -> Result<Self> {
        if !(left < right && left <= mode && mode <= right) || !(left.is_finite() && right.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "triangle needs left <= mode <= right and left < right, got ({left}, {mode}, {right})"
            )));
        }
        Ok(Self { left, mode, right })
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn pdf(&self, w: f64) -> f64 {
        let (l, m, r) = (self.left, self.mode, self.right);
        if w < l || w > r {
            0.0
        } else if w < m || (w == m && m > l) {
            2.0 * (w - l) / ((r - l) * (m - l))
        } else if r > m {
            2.0 * (r - w) / ((r - l) * (r - m))
        } else {
            2.0 / (r - l)
        }
    }

    pub fn cdf(&self, w: f64) -> f64 {
        let (l, m, r) = (self.left, self.mode, self.right);
        if w <= l {
            0.0
        } else if w >= r {
            1.0
        } else if w <= m {
            (w - l) * (w - l) / ((r - l) * (m - l))
        } else {
            1.0 - (r - w) * (r - w) / ((r - l) * (r - m))
        }
    }

    /// Inverse of the distribution function.
    pub fn quantile(&self, u: f64) -> f64 {
        let (l, m, r) = (self.left, self.mode, self.right);
        let split = (m - l) / (r - l);
        if u < split {
            l + (u * (r - l) * (m - l)).sqrt()
        } else {
            r - ((1.0 - u) * (r - l) * (r - m)).sqrt()
        }
    }

    pub fn mean(&self) -> f64 {
        (self.left + self.mode + self.right) / 3.0
    }

    pub fn peak(&self) -> f64 {
        2.0 / self.width()
    }

    /// Slope magnitudes of the rising and falling edges (zero for a vertical edge).
    fn slopes(&self) -> (f64, f64) {
        let w = self.width();
        let rise = if self.mode > self.left { 2.0 / (w * (self.mode - self.left)) } else { 0.0 };
        let fall = if self.right > self.mode { 2.0 / (w * (self.right - self.mode)) } else { 0.0 };
        (rise, fall)
    }
}

const DECAY: f64 = 0.8;
const DRIFT: f64 = 0.01;

/// Velocity model of a vehicle descending rough terrain.
///
/// `v' = 0.8 v + 0.01 u + w` with `w` triangular; the triangle widens and
/// shifts down as the velocity grows, and the stage cost `-phi v` rewards speed.
#[derive(Debug, Clone)]
pub struct TriangularAv {
    domain: Hyperrect,
    horizon: usize,
    phi: f64,
    actions: Vec<f64>,
    initial: Triangle,
}

impl TriangularAv {
    pub fn new(horizon: usize, phi: f64, initial: Triangle) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidModel(format!("cost scale must be positive, got {phi}")));
        }
        if initial.left < 0.0 || initial.right > 1.0 {
            return Err(Error::InvalidModel("initial triangle must lie inside [0, 1]".into()));
        }
        Ok(Self {
            domain: Hyperrect::unit(1),
            horizon,
            phi,
            actions: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            initial,
        })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Disturbance triangle at velocity `v`.
    pub fn noise(v: f64) -> Triangle {
        Triangle {
            left: -0.8 * v,
            mode: 0.05 * (1.0 - v) - 0.2 * v,
            right: 0.1 * (1.0 - v),
        }
    }

    fn shift(&self, v: f64, action: usize) -> f64 {
        DECAY * v + DRIFT * self.actions[action]
    }

    fn rise_slope(v: f64) -> f64 {
        2.0 / ((0.1 + 0.7 * v) * (0.05 + 0.55 * v))
    }

    fn fall_slope(v: f64) -> f64 {
        2.0 / ((0.1 + 0.7 * v) * (0.05 + 0.15 * v))
    }
}

impl KernelModel for TriangularAv {
    fn name(&self) -> &str {
        "triangular_av"
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
        if !self.domain.contains(x) {
            return 0.0;
        }
        self.initial.pdf(x[0])
    }

    fn transition_density(&self, x: &[f64], y: &[f64], action: usize) -> f64 {
        if !self.domain.contains(y) {
            return 0.0;
        }
        Self::noise(x[0]).pdf(y[0] - self.shift(x[0], action))
    }

    fn initial_mass(&self, cell: &Hyperrect, _tol: f64) -> Result<f64> {
        Ok(self.initial.cdf(cell.highs()[0]) - self.initial.cdf(cell.lows()[0]))
    }

    fn cell_mass(&self, x: &[f64], cell: &Hyperrect, action: usize, _tol: f64) -> Result<f64> {
        let t = Self::noise(x[0]);
        let s = self.shift(x[0], action);
        Ok((t.cdf(cell.highs()[0] - s) - t.cdf(cell.lows()[0] - s)).max(0.0))
    }

    fn exact_masses(&self) -> bool {
        true
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        vec![self.initial.quantile(rng.random::<f64>()).clamp(0.0, 1.0)]
    }

    fn sample_step(&self, x: &[f64], action: usize, rng: &mut SimRng) -> Vec<f64> {
        let w = Self::noise(x[0]).quantile(rng.random::<f64>());
        vec![(self.shift(x[0], action) + w).clamp(0.0, 1.0)]
    }

    fn cost_shape(&self) -> CostShape {
        CostShape::Monotone
    }

    fn stage_cost(&self, x: &[f64], _action: usize) -> Option<f64> {
        Some(-self.phi * x[0])
    }

    fn analytic_bounds(&self) -> Option<(f64, f64)> {
        // Every bound below decreases in v, so v = 0 attains the supremum.
        // Target slopes: rise 2/(0.1*0.05) = 400 and fall 400. Source slopes,
        // with D = (r-l)(m-l) on the rising edge and (r-l)(r-m) on the falling
        // one: 2 D'/((r-l)^2 (m-l)) = 360 and max(1.4/D, 2|0.7 D - (r-m) D'|/D^2) = 280.
        let (r0, f0) = self.initial.slopes();
        let lq = Self::noise(0.0).peak().max(self.initial.peak());
        let lgrad = Self::rise_slope(0.0).max(Self::fall_slope(0.0)).max(360.0).max(r0).max(f0);
        Some((lq, lgrad))
    }

    fn target_gradient_bound(&self, src: &Hyperrect, dst: &Hyperrect, action: usize) -> Option<f64> {
        let (va, vb) = (src.lows()[0], src.highs()[0]);
        let (ya, yb) = (dst.lows()[0], dst.highs()[0]);
        let c = DRIFT * self.actions[action];
        let mut bound: f64 = 0.0;
        // rising edge occupies y - c in [0, 0.05 + 0.55 v]
        let v_rise = va.max((ya - c - 0.05) / 0.55);
        if yb >= c && v_rise <= vb {
            bound = bound.max(Self::rise_slope(v_rise));
        }
        // falling edge occupies y - c in [0.05 + 0.55 v, 0.1 + 0.7 v]
        let v_fall = va.max((ya - c - 0.1) / 0.7);
        if v_fall <= vb.min((yb - c - 0.05) / 0.55) {
            bound = bound.max(Self::fall_slope(v_fall));
        }
        Some(bound)
    }

    fn initial_gradient_bound(&self, dst: &Hyperrect) -> Option<f64> {
        let (ya, yb) = (dst.lows()[0], dst.highs()[0]);
        let t = self.initial;
        let (rise, fall) = t.slopes();
        let mut bound: f64 = 0.0;
        if yb >= t.left && ya <= t.mode {
            bound = bound.max(rise);
        }
        if yb >= t.mode && ya <= t.right {
            bound = bound.max(fall);
        }
        Some(bound)
    }

    fn support_hull(&self, src: &Hyperrect, action: usize) -> Option<Hyperrect> {
        let c = DRIFT * self.actions[action];
        let top = (c + 0.1 + 0.7 * src.highs()[0]).min(1.0);
        Hyperrect::new(vec![c], vec![top]).ok()
    }
}
