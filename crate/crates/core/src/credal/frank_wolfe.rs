//! Convex minimization over interval polytopes by pairwise conditional gradients.
//!
//! Each iteration pairs the usual linear-minimization vertex over the whole
//! row with the linear-maximization vertex over the smallest face containing
//! the iterate, and moves mass along their difference with an exact line
//! search. The face is read off from which coordinates sit at a bound, so no
//! active set of vertices needs to be stored.
//!
//! The objective is separable, so the iteration starts from the point where
//! every free partial derivative equals a common multiplier (found by
//! bisection). That point is usually optimal to rounding, and the iteration
//! then only has to certify it.

use super::{greedy, AmbiguityRow, Objective, OptimizerSettings, Reduced, RowSolution, Sense, SolveMethod};
use crate::error::Result;

/// Minimize the separable convex objective over the row.
///
/// The returned value is the primal value at the final iterate, so it
/// over-estimates the minimum by at most the reported `gap`.
pub fn minimize(row: &AmbiguityRow, obj: &Objective, settings: &OptimizerSettings) -> Result<RowSolution> {
    row.check(0, None)?;
    let red = Reduced::new(row);
    if red.is_degenerate() {
        let p = row.lower().to_vec();
        return Ok(RowSolution {
            value: obj.total(&p),
            p,
            method: SolveMethod::Degenerate,
            fell_back: false,
            gap: 0.0,
            certificate: None,
        });
    }
    let d = red.free.len();
    let idx = &red.free;
    let (lo, hi) = (&red.lo, &red.hi);
    let grad = |x: &[f64]| -> Vec<f64> { (0..d).map(|k| obj.deriv(idx[k], x[k])).collect() };

    let mut x = multiplier_start(obj, idx, lo, hi, red.slack);

    let mut gap = f64::INFINITY;
    let mut iters = 0;
    while iters < settings.fw_max_iter {
        iters += 1;
        let g = grad(&x);
        let s = greedy(lo, hi, red.slack, &g, Sense::Min);
        gap = (0..d).map(|k| g[k] * (x[k] - s[k])).sum::<f64>();
        if gap <= settings.fw_tol {
            break;
        }

        // away vertex inside the minimal face of x
        let (face_lo, face_hi): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|k| {
                if x[k] <= lo[k] || x[k] >= hi[k] {
                    (x[k], x[k])
                } else {
                    (lo[k], hi[k])
                }
            })
            .unzip();
        let face_slack = red.slack + lo.iter().sum::<f64>() - face_lo.iter().sum::<f64>();
        let v = greedy(&face_lo, &face_hi, face_slack, &g, Sense::Max);

        let mut dir: Vec<f64> = (0..d).map(|k| s[k] - v[k]).collect();
        let mut slope: f64 = (0..d).map(|k| g[k] * dir[k]).sum();
        if slope >= 0.0 {
            // the face vertex did not help; take a plain step toward s
            dir = (0..d).map(|k| s[k] - x[k]).collect();
            slope = -gap;
        }
        let mut step_max = f64::INFINITY;
        for k in 0..d {
            if dir[k] > 0.0 {
                step_max = step_max.min((hi[k] - x[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                step_max = step_max.min((x[k] - lo[k]) / -dir[k]);
            }
        }
        if !step_max.is_finite() || step_max <= 0.0 {
            break;
        }
        let step = line_search(obj, idx, &x, &dir, slope, step_max);
        for k in 0..d {
            let y = x[k] + step * dir[k];
            x[k] = y.clamp(lo[k], hi[k]);
        }
        if step == step_max {
            // snap the blocking coordinates onto their bounds
            for k in 0..d {
                if dir[k] > 0.0 && (hi[k] - x[k]) <= 1e-15 {
                    x[k] = hi[k];
                } else if dir[k] < 0.0 && (x[k] - lo[k]) <= 1e-15 {
                    x[k] = lo[k];
                }
            }
        }
    }
    if gap > settings.fw_tol {
        log::warn!(
            "conditional gradient stopped after {iters} iterations with gap {gap:.3e} (tolerance {:.3e})",
            settings.fw_tol
        );
    }
    let p = red.expand(row, &x);
    Ok(RowSolution {
        value: obj.total(&p),
        p,
        method: SolveMethod::FrankWolfe,
        fell_back: false,
        gap: gap.max(0.0),
        certificate: None,
    })
}

/// Point `x(nu)` with `f_k'(x_k) = nu` wherever the bounds allow, for the
/// multiplier `nu` at which the coordinates carry the slack.
fn multiplier_start(obj: &Objective, idx: &[usize], lo: &[f64], hi: &[f64], slack: f64) -> Vec<f64> {
    let target = lo.iter().sum::<f64>() + slack;
    let at = |nu: f64| -> Vec<f64> { (0..lo.len()).map(|k| level(obj, idx[k], lo[k], hi[k], nu)).collect() };
    let sum = |x: &[f64]| x.iter().sum::<f64>();

    let mid: Vec<f64> = (0..lo.len()).map(|k| obj.deriv(idx[k], 0.5 * (lo[k] + hi[k]))).collect();
    let (mut a, mut b) = (mid.iter().cloned().fold(f64::INFINITY, f64::min), mid.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let mut step = 1.0;
    while sum(&at(a)) > target && step < 1e6 {
        a -= step;
        step *= 2.0;
    }
    step = 1.0;
    while sum(&at(b)) < target && step < 1e6 {
        b += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if sum(&at(m)) < target {
            a = m;
        } else {
            b = m;
        }
    }
    // place the rounding residue on the coordinates with room for it
    let mut x = at(0.5 * (a + b));
    let mut r = target - sum(&x);
    for k in 0..x.len() {
        let y = (x[k] + r).clamp(lo[k], hi[k]);
        r -= y - x[k];
        x[k] = y;
    }
    x
}

/// Solve `f_j'(p) = nu` on `[lo, hi]`, clamping when the level lies outside.
fn level(obj: &Objective, j: usize, lo: f64, hi: f64, nu: f64) -> f64 {
    if obj.deriv(j, hi) <= nu {
        return hi;
    }
    if obj.deriv(j, lo) >= nu {
        return lo;
    }
    // without a correction the level is explicit
    let plain = ((nu - obj.values[j]) / obj.kappa - obj.ln_ratio[j] - 1.0).exp();
    if obj.eps[j] <= 0.0 {
        return plain.clamp(lo, hi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut t = plain.clamp(lo, hi);
    for _ in 0..100 {
        let g = obj.deriv(j, t) - nu;
        if g < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let newton = t - g / obj.second(j, t);
        t = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= 1e-15 * b || g.abs() <= 1e-14 {
            break;
        }
    }
    t
}

/// Minimize the convex `t -> F(x + t dir)` on `[0, t_max]` given its slope at 0.
fn line_search(obj: &Objective, idx: &[usize], x: &[f64], dir: &[f64], slope0: f64, t_max: f64) -> f64 {
    let dphi = |t: f64| -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for k in 0..x.len() {
            if dir[k] != 0.0 {
                let y = (x[k] + t * dir[k]).max(0.0);
                d1 += dir[k] * obj.deriv(idx[k], y);
                d2 += dir[k] * dir[k] * obj.second(idx[k], y);
            }
        }
        (d1, d2)
    };
    if slope0 >= 0.0 {
        return 0.0;
    }
    let (end, _) = dphi(t_max);
    if end <= 0.0 {
        return t_max;
    }
    // safeguarded Newton on the derivative inside the bracket [a, b]
    let (mut a, mut b) = (0.0, t_max);
    let mut t = 0.5 * t_max;
    for _ in 0..100 {
        let (d1, d2) = dphi(t);
        if d1 == 0.0 {
            return t;
        }
        if d1 < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let newton = t - d1 / d2;
        t = if d2 > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a <= 1e-16 * t_max.max(1.0) || (d1 / d2).abs() <= 1e-17 {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credal::{phi, robust_min_convex, EntropyGeometry};
    use approx::assert_relative_eq;

    /// Exact minimizer without correction terms: p_j = clamp(exp(nu - v_j - 1) / a_j).
    fn water_fill(row: &AmbiguityRow, v: &[f64], geom: &EntropyGeometry) -> f64 {
        let ratios = geom.ln_ratios();
        let at = |nu: f64| -> Vec<f64> {
            (0..v.len())
                .map(|j| (nu - v[j] - 1.0 - ratios[j]).exp().clamp(row.lower()[j], row.upper()[j]))
                .collect()
        };
        let (mut a, mut b) = (-200.0, 200.0);
        for _ in 0..300 {
            let m = 0.5 * (a + b);
            if at(m).iter().sum::<f64>() < 1.0 {
                a = m;
            } else {
                b = m;
            }
        }
        phi(&at(0.5 * (a + b)), v, geom)
    }

    #[test]
    fn simplex_minimum_is_uniform() {
        let g = EntropyGeometry::equal_cells(4, 1.0, 2, 0.5);
        let sol = robust_min_convex(&AmbiguityRow::simplex(4), &[0.0; 4], &g, &Default::default()).unwrap();
        assert!(sol.value.abs() < 1e-9);
        for p in sol.p {
            assert_relative_eq!(p, 0.25, epsilon = 1e-4);
        }
    }

    #[test]
    fn singleton_row_returns_phi() {
        let g = EntropyGeometry::equal_cells(2, 1.0, 1, 0.5);
        let sol = robust_min_convex(&AmbiguityRow::point(vec![0.3, 0.7]), &[2.0, 1.0], &g, &Default::default()).unwrap();
        assert_eq!(sol.method, SolveMethod::Degenerate);
        assert_relative_eq!(sol.value, phi(&[0.3, 0.7], &[2.0, 1.0], &g));
    }

    #[test]
    fn matches_water_filling() {
        let g = EntropyGeometry {
            ln_volume: 2f64.ln(),
            ln_cell_volumes: vec![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln(), 0.4f64.ln(), 0.6f64.ln()],
            state_dim: 1,
            max_side: 0.6,
            grad_bound: 0.0,
            base: Default::default(),
        };
        let row = AmbiguityRow::new(vec![0.05, 0.0, 0.1, 0.2, 0.0], vec![0.3, 0.4, 0.5, 0.25, 0.2]).unwrap();
        let v = [0.5, -1.0, 2.0, 0.3, 1.1];
        let sol = robust_min_convex(&row, &v, &g, &Default::default()).unwrap();
        assert!(sol.gap <= 1e-9);
        assert!(row.contains(&sol.p, 1e-12));
        assert_relative_eq!(sol.value, water_fill(&row, &v, &g), epsilon = 1e-9);
    }

    #[test]
    fn cold_rows_converge_without_hitting_the_cap() {
        // thin rows with near-zero lower bounds stalled the plain iteration
        let g = EntropyGeometry::equal_cells(6, 1.0, 2, 0.4);
        let row = AmbiguityRow::new(vec![0.0, 0.0, 1e-4, 0.0, 0.2, 0.0], vec![1e-3, 0.9, 0.5, 2e-6, 0.6, 0.3]).unwrap();
        let settings = OptimizerSettings {
            fw_max_iter: 50,
            ..Default::default()
        };
        let sol = minimize(&row, &g.objective(&[3.0, -2.0, 0.0, 5.0, 0.1, 0.7]), &settings).unwrap();
        assert!(sol.gap <= 1e-9, "{}", sol.gap);
        let obj = g.objective_eps(&[3.0, -2.0, 0.0, 5.0, 0.1, 0.7]);
        let sol = minimize(&row, &obj, &settings).unwrap();
        assert!(sol.gap <= 1e-9, "{}", sol.gap);
        assert!(row.contains(&sol.p, 1e-12));
    }

    #[test]
    fn corrected_objective_converges() {
        let g = EntropyGeometry::equal_cells(3, 1.0, 1, 1.0 / 3.0).with_grad_bound(5.0);
        let row = AmbiguityRow::new(vec![0.0, 0.1, 0.2], vec![0.6, 0.6, 0.6]).unwrap();
        let obj = g.objective_eps(&[0.0, 0.4, -0.3]);
        let sol = minimize(&row, &obj, &Default::default()).unwrap();
        assert!(sol.gap <= 1e-9);
    }
}
