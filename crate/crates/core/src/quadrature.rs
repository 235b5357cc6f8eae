//! Tensor-product Gauss-Legendre quadrature over hyperrectangles.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::Hyperrect;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Fixed tensor rule of the given order over `cell`.
pub fn tensor_rule(f: &dyn Fn(&[f64]) -> f64, cell: &Hyperrect, order: usize) -> f64 {
    let owned;
    let (nodes, weights) = if order == 16 {
        let r = rule16();
        (&r.0, &r.1)
    } else {
        owned = gauss_legendre(order);
        (&owned.0, &owned.1)
    };
    let dim = cell.dim();
    let half: Vec<f64> = (0..dim).map(|j| 0.5 * cell.side(j)).collect();
    let mid = cell.center();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..dim {
            x[j] = mid[j] + half[j] * nodes[idx[j]];
            w *= weights[idx[j]];
        }
        total += w * f(&x);
        // odometer increment
        let mut j = dim;
        loop {
            if j == 0 {
                return total * half.iter().product::<f64>();
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < order {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Adaptive integration of `f` over `cell` to absolute tolerance `tol`.
///
/// Global subdivision: each box carries the disagreement between its rule
/// value and the sum over its halves (split in every dimension), and the
/// worst box is split until the total disagreement drops below `tol`.
pub fn integrate(f: &dyn Fn(&[f64]) -> f64, cell: &Hyperrect, order: usize, tol: f64) -> Result<f64> {
    let whole = tensor_rule(f, cell, order);
    let mut heap = BinaryHeap::new();
    let first = Pending::new(f, cell, order, whole, 0);
    let mut err_sum = first.err;
    heap.push(first);
    let mut splits = 0usize;
    loop {
        // rounding noise floor relative to the magnitude of the pieces
        let floor = || 64.0 * f64::EPSILON * heap.iter().map(|p: &Pending| p.abs).sum::<f64>();
        if err_sum <= tol {
            err_sum = heap.iter().map(|p| p.err).sum();
        }
        if err_sum <= tol || err_sum <= floor() {
            return Ok(heap.iter().map(|p| p.value).sum());
        }
        if splits >= MAX_SPLITS {
            return Err(Error::Quadrature {
                error_estimate: err_sum,
                tolerance: tol,
            });
        }
        let worst = heap.pop().expect("nonempty heap");
        if worst.depth >= MAX_DEPTH {
            return Err(Error::Quadrature {
                error_estimate: err_sum,
                tolerance: tol,
            });
        }
        err_sum -= worst.err;
        for (c, v) in worst.children {
            let p = Pending::new(f, &c, order, v, worst.depth + 1);
            err_sum += p.err;
            heap.push(p);
        }
        splits += 1;
    }
}

const MAX_SPLITS: usize = 20_000;
const MAX_DEPTH: usize = 40;

struct Pending {
    err: f64,
    value: f64,
    abs: f64,
    depth: usize,
    children: Vec<(Hyperrect, f64)>,
}

impl Pending {
    fn new(f: &dyn Fn(&[f64]) -> f64, cell: &Hyperrect, order: usize, whole: f64, depth: usize) -> Self {
        let children: Vec<(Hyperrect, f64)> = halves(cell)
            .into_iter()
            .map(|c| {
                let v = tensor_rule(f, &c, order);
                (c, v)
            })
            .collect();
        let value: f64 = children.iter().map(|c| c.1).sum();
        let abs = children.iter().map(|c| c.1.abs()).sum();
        Self {
            err: (value - whole).abs(),
            value,
            abs,
            depth,
            children,
        }
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn halves(cell: &Hyperrect) -> Vec<Hyperrect> {
    let dim = cell.dim();
    let mid = cell.center();
    (0..1usize << dim)
        .map(|mask| {
            let mut lo = Vec::with_capacity(dim);
            let mut hi = Vec::with_capacity(dim);
            for j in 0..dim {
                if mask >> j & 1 == 0 {
                    lo.push(cell.lows()[j]);
                    hi.push(mid[j]);
                } else {
                    lo.push(mid[j]);
                    hi.push(cell.highs()[j]);
                }
            }
            Hyperrect::new(lo, hi).expect("halving a valid box")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(16);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        // x^30 has integral 2/31 over [-1, 1]
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_relative_eq!(s, 2.0 / 31.0, epsilon = 1e-14);
    }

    #[test]
    fn small_orders() {
        let (x, w) = gauss_legendre(1);
        assert_eq!((x[0], w[0]), (0.0, 2.0));
        let (x, _) = gauss_legendre(2);
        assert_relative_eq!(x[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let b = Hyperrect::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let f = |x: &[f64]| x[0].abs() * x[1];
        let v = integrate(&f, &b, 16, 1e-12).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-11);
    }

    #[test]
    fn reports_nonconvergence() {
        let b = Hyperrect::unit(1);
        let f = |x: &[f64]| if x[0] < 1.0 / 3.0 { 0.0 } else { 1e9 };
        assert!(matches!(integrate(&f, &b, 2, 1e-15), Err(Error::Quadrature { .. })));
    }
}
