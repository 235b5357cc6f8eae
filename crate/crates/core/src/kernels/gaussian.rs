use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use super::{KernelModel, SimRng};
use crate::error::{Error, Result};
use crate::geometry::Hyperrect;
use crate::quadrature;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal upper tail `P(Z > z)`.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `P(a < Z < b)` for a standard normal, without cancellation in the tails.
fn interval_prob(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(-a) - upper_tail(b)
    }
}

fn std_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Largest `|t| / s^2 * pdf_s(t)` over `t` in `[lo, hi]`.
fn sup_scaled_slope(lo: f64, hi: f64, s: f64) -> f64 {
    let g = |t: f64| t.abs() / (s * s) * std_pdf(t / s) / s;
    let mut best = g(lo).max(g(hi));
    for t in [-s, s] {
        if t >= lo && t <= hi {
            best = best.max(g(t));
        }
    }
    best
}

/// Largest `pdf_s(t)` over `t` in `[lo, hi]`.
fn sup_pdf(lo: f64, hi: f64, s: f64) -> f64 {
    std_pdf(0f64.clamp(lo, hi) / s) / s
}

/// A Gaussian with a fixed covariance, centered wherever it is evaluated.
#[derive(Debug, Clone)]
struct Gauss {
    chol: DMatrix<f64>,
    ln_norm: f64,
    /// Standard deviations when the covariance is diagonal.
    sigma: Option<Vec<f64>>,
}

impl Gauss {
    fn new(cov: &[Vec<f64>], dim: usize) -> Result<Self> {
        if cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "covariance matrix",
                expected: dim,
                got: cov.len(),
            });
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
        for i in 0..dim {
            for j in 0..i {
                let scale = m[(i, j)].abs().max(m[(j, i)].abs()).max(1e-300);
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        let ln_det: f64 = 2.0 * (0..dim).map(|i| chol[(i, i)].ln()).sum::<f64>();
        let diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || m[(i, j)] == 0.0));
        let sigma = diagonal.then(|| (0..dim).map(|i| m[(i, i)].sqrt()).collect());
        Ok(Self {
            chol,
            ln_norm: -0.5 * (dim as f64 * (2.0 * PI).ln() + ln_det),
            sigma,
        })
    }

    fn dim(&self) -> usize {
        self.chol.nrows()
    }

    fn density(&self, mean: &[f64], y: &[f64]) -> f64 {
        if let Some(s) = &self.sigma {
            let mut q = 0.0;
            for d in 0..s.len() {
                let z = (y[d] - mean[d]) / s[d];
                q += z * z;
            }
            return (self.ln_norm - 0.5 * q).exp();
        }
        let diff = DVector::from_fn(self.dim(), |i, _| y[i] - mean[i]);
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        (self.ln_norm - 0.5 * z.norm_squared()).exp()
    }

    fn peak(&self) -> f64 {
        self.ln_norm.exp()
    }

    /// Mass of `N(mean, cov)` inside `cell`.
    fn box_mass(&self, mean: &[f64], cell: &Hyperrect, tol: f64) -> Result<f64> {
        if let Some(s) = &self.sigma {
            return Ok((0..s.len())
                .map(|d| interval_prob((cell.lows()[d] - mean[d]) / s[d], (cell.highs()[d] - mean[d]) / s[d]))
                .product());
        }
        quadrature::integrate(&|y| self.density(mean, y), cell, 16, tol).map(|m| m.clamp(0.0, 1.0))
    }

    fn sample(&self, mean: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol * z;
        mean.iter().zip(step.iter()).map(|(m, s)| m + s).collect()
    }

    /// Bound on `|dN/dy_d|` for offsets `y - mean` restricted to `offsets`.
    fn slope_bound(&self, offsets: &Hyperrect) -> Option<f64> {
        let s = self.sigma.as_ref()?;
        let n = s.len();
        let peaks: Vec<f64> = (0..n)
            .map(|d| sup_pdf(offsets.lows()[d], offsets.highs()[d], s[d]))
            .collect();
        Some(
            (0..n)
                .map(|d| {
                    let others: f64 = (0..n).filter(|&k| k != d).map(|k| peaks[k]).product();
                    sup_scaled_slope(offsets.lows()[d], offsets.highs()[d], s[d]) * others
                })
                .fold(0.0, f64::max),
        )
    }

    /// Bound on `|dN/dy_d|` over all offsets.
    fn global_slope_bound(&self) -> Option<f64> {
        let s = self.sigma.as_ref()?;
        let n = s.len();
        Some(
            (0..n)
                .map(|d| {
                    let others: f64 = (0..n).filter(|&k| k != d).map(|k| INV_SQRT_2PI / s[k]).product();
                    (-0.5f64).exp() * INV_SQRT_2PI / (s[d] * s[d]) * others
                })
                .fold(0.0, f64::max),
        )
    }
}

/// Gaussian random walk on a box; steps leaving the box are redrawn uniformly.
///
/// `q(x, y) = N(y; x, cov) + o(x) / vol(X)` with `o(x)` the Gaussian mass
/// outside the box, and the initial density built the same way around `mean0`.
#[derive(Debug, Clone)]
pub struct ClippedGaussian {
    domain: Hyperrect,
    horizon: usize,
    step: Gauss,
    init: Gauss,
    mean0: Vec<f64>,
    outside0: f64,
    volume: f64,
    quad_tol: f64,
}

impl ClippedGaussian {
    pub fn new(domain: Hyperrect, cov: &[Vec<f64>], mean0: Vec<f64>, cov0: &[Vec<f64>], horizon: usize) -> Result<Self> {
        Self::with_tolerance(domain, cov, mean0, cov0, horizon, 1e-10)
    }

    /// As [`ClippedGaussian::new`], with the quadrature tolerance used for
    /// out-of-box masses of non-diagonal covariances.
    pub fn with_tolerance(
        domain: Hyperrect,
        cov: &[Vec<f64>],
        mean0: Vec<f64>,
        cov0: &[Vec<f64>],
        horizon: usize,
        quad_tol: f64,
    ) -> Result<Self> {
        let dim = domain.dim();
        if mean0.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "initial mean",
                expected: dim,
                got: mean0.len(),
            });
        }
        let step = Gauss::new(cov, dim)?;
        let init = Gauss::new(cov0, dim)?;
        let outside0 = (1.0 - init.box_mass(&mean0, &domain, quad_tol)?).max(0.0);
        Ok(Self {
            volume: domain.volume(),
            domain,
            horizon,
            step,
            init,
            mean0,
            outside0,
            quad_tol,
        })
    }

    /// Isotropic step covariance `sigma^2 I` and initial covariance `sigma0^2 I`.
    pub fn isotropic(domain: Hyperrect, sigma: f64, mean0: Vec<f64>, sigma0: f64, horizon: usize) -> Result<Self> {
        let dim = domain.dim();
        let diag = |s: f64| -> Vec<Vec<f64>> {
            (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { s * s } else { 0.0 }).collect())
                .collect()
        };
        Self::new(domain, &diag(sigma), mean0, &diag(sigma0), horizon)
    }

    /// Gaussian step mass falling outside the box from `x`.
    pub fn outside_mass(&self, x: &[f64]) -> f64 {
        self.step
            .box_mass(x, &self.domain, self.quad_tol)
            .map(|m| (1.0 - m).max(0.0))
            .unwrap_or(0.0)
    }

    fn outside_mass_max(&self) -> f64 {
        super::corners(&self.domain)
            .iter()
            .map(|c| self.outside_mass(c))
            .fold(0.0, f64::max)
    }
}

impl KernelModel for ClippedGaussian {
    fn name(&self) -> &str {
        "clipped_gaussian"
    }

    fn domain(&self) -> &Hyperrect {
        &self.domain
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_density(&self, x: &[f64]) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        self.init.density(&self.mean0, x) + self.outside0 / self.volume
    }

    fn transition_density(&self, x: &[f64], y: &[f64], _action: usize) -> f64 {
        if !self.domain.contains(y) {
            return 0.0;
        }
        self.step.density(x, y) + self.outside_mass(x) / self.volume
    }

    fn initial_mass(&self, cell: &Hyperrect, tol: f64) -> Result<f64> {
        Ok(self.init.box_mass(&self.mean0, cell, tol)? + self.outside0 * cell.volume() / self.volume)
    }

    fn cell_mass(&self, x: &[f64], cell: &Hyperrect, _action: usize, tol: f64) -> Result<f64> {
        let inside = self.step.box_mass(x, cell, tol)?;
        let outside = (1.0 - self.step.box_mass(x, &self.domain, tol)?).max(0.0);
        Ok(inside + outside * cell.volume() / self.volume)
    }

    fn exact_masses(&self) -> bool {
        self.step.sigma.is_some() && self.init.sigma.is_some()
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        let y = self.init.sample(&self.mean0, rng);
        if self.domain.contains(&y) {
            y
        } else {
            uniform_point(&self.domain, rng)
        }
    }

    fn sample_step(&self, x: &[f64], _action: usize, rng: &mut SimRng) -> Vec<f64> {
        let y = self.step.sample(x, rng);
        if self.domain.contains(&y) {
            y
        } else {
            uniform_point(&self.domain, rng)
        }
    }

    fn analytic_bounds(&self) -> Option<(f64, f64)> {
        let step_slope = self.step.global_slope_bound()?;
        let init_slope = self.init.global_slope_bound()?;
        let s = self.step.sigma.as_ref()?;
        let lq = (self.step.peak() + self.outside_mass_max() / self.volume)
            .max(self.init.peak() + self.outside0 / self.volume);
        // d/dx of the redistributed mass is at most pdf(0) / sigma_d per coordinate
        let source_extra = s
            .iter()
            .map(|sd| INV_SQRT_2PI / (sd * self.volume))
            .fold(0.0, f64::max);
        let lgrad = (step_slope + source_extra).max(init_slope);
        Some((lq, lgrad))
    }

    fn target_gradient_bound(&self, src: &Hyperrect, dst: &Hyperrect, _action: usize) -> Option<f64> {
        let n = self.dim();
        let offsets = Hyperrect::new(
            (0..n).map(|d| dst.lows()[d] - src.highs()[d]).collect(),
            (0..n).map(|d| dst.highs()[d] - src.lows()[d]).collect(),
        )
        .ok()?;
        self.step.slope_bound(&offsets)
    }

    fn initial_gradient_bound(&self, dst: &Hyperrect) -> Option<f64> {
        let n = self.dim();
        let offsets = Hyperrect::new(
            (0..n).map(|d| dst.lows()[d] - self.mean0[d]).collect(),
            (0..n).map(|d| dst.highs()[d] - self.mean0[d]).collect(),
        )
        .ok()?;
        self.init.slope_bound(&offsets)
    }
}

pub(crate) fn uniform_point(domain: &Hyperrect, rng: &mut SimRng) -> Vec<f64> {
    (0..domain.dim())
        .map(|d| domain.lows()[d] + rng.random::<f64>() * domain.side(d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn model(sigma: f64) -> ClippedGaussian {
        ClippedGaussian::isotropic(Hyperrect::unit(2), sigma, vec![0.5, 0.5], 0.3, 4).unwrap()
    }

    #[test]
    fn row_mass_is_one() {
        let m = model(0.4);
        for x in [[0.1, 0.9], [0.5, 0.5], [1.0, 0.0]] {
            let whole = m.cell_mass(&x, m.domain(), 0, 1e-12).unwrap();
            assert_relative_eq!(whole, 1.0, epsilon = 1e-12);
            let q = quadrature::integrate(&|y| m.transition_density(&x, y, 0), m.domain(), 16, 1e-10).unwrap();
            assert_relative_eq!(q, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn outside_mass_matches_quadrature() {
        let m = model(0.5);
        for x in [[0.2, 0.7], [0.0, 0.0], [0.5, 0.5]] {
            let by_cdf = m.outside_mass(&x);
            let by_quad = 1.0
                - quadrature::integrate(&|y| m.step.density(&x, y), m.domain(), 16, 1e-12).unwrap();
            assert_relative_eq!(by_cdf, by_quad, epsilon = 1e-8);
        }
    }

    #[test]
    fn huge_variance_tends_to_uniform() {
        let m = model(1e4);
        assert_relative_eq!(m.transition_density(&[0.3, 0.3], &[0.9, 0.1], 0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn tiny_variance_is_a_point_mass() {
        let m = model(1e-6);
        let cell = Hyperrect::new(vec![0.25, 0.25], vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(m.cell_mass(&[0.3, 0.4], &cell, 0, 1e-12).unwrap(), 1.0, epsilon = 1e-12);
        let mut rng = SimRng::seed_from_u64(1);
        let y = m.sample_step(&[0.3, 0.4], 0, &mut rng);
        assert!((y[0] - 0.3).abs() < 1e-4 && (y[1] - 0.4).abs() < 1e-4);
    }

    #[test]
    fn non_diagonal_covariance_uses_quadrature() {
        let cov = vec![vec![0.09, 0.03], vec![0.03, 0.09]];
        let m = ClippedGaussian::new(Hyperrect::unit(2), &cov, vec![0.5, 0.5], &cov, 2).unwrap();
        let whole = m.cell_mass(&[0.2, 0.3], m.domain(), 0, 1e-10).unwrap();
        assert_relative_eq!(whole, 1.0, epsilon = 1e-9);
        assert!(m.analytic_bounds().is_none());
    }

    #[test]
    fn rejects_bad_covariances() {
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let err = ClippedGaussian::new(Hyperrect::unit(2), &bad, vec![0.5, 0.5], &bad, 2).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite));
        let asym = vec![vec![1.0, 0.1], vec![0.0, 1.0]];
        assert!(ClippedGaussian::new(Hyperrect::unit(2), &asym, vec![0.5, 0.5], &asym, 2).is_err());
    }

    #[test]
    fn analytic_bounds_dominate_the_peak() {
        let m = model(0.3);
        let (lq, _) = m.analytic_bounds().unwrap();
        assert!(lq >= 1.0 / (2.0 * PI * 0.09));
    }

    #[test]
    fn local_slope_bound_dominates_sampled_slopes() {
        let m = model(0.2);
        let src = Hyperrect::new(vec![0.0, 0.0], vec![0.25, 0.25]).unwrap();
        let dst = Hyperrect::new(vec![0.5, 0.25], vec![0.75, 0.5]).unwrap();
        let bound = m.target_gradient_bound(&src, &dst, 0).unwrap();
        let (xs, _) = src.mesh(6);
        let (ys, _) = dst.mesh(12);
        let h = 1e-6;
        for x in &xs {
            for y in &ys {
                for d in 0..2 {
                    let mut a = y.clone();
                    let mut b = y.clone();
                    a[d] -= h;
                    b[d] += h;
                    let g = (m.step.density(x, &b) - m.step.density(x, &a)) / (2.0 * h);
                    assert!(g.abs() <= bound * (1.0 + 1e-6));
                }
            }
        }
        let (_, global) = m.analytic_bounds().unwrap();
        assert!(bound <= global);
    }
}
