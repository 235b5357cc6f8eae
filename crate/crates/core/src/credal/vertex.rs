//! Convex maximization over interval polytopes.
//!
//! The maximum of a convex function over `{lower <= p <= upper, sum p = 1}`
//! sits on a vertex, i.e. a point with at most one coordinate strictly inside
//! its interval. Small rows are solved by enumerating those vertices; larger
//! rows use multi-start successive linearization followed by pairwise mass
//! transfers. A chord relaxation of every term gives a sound upper bound that
//! is reported alongside.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{greedy, AmbiguityRow, MaxMode, Objective, OptimizerSettings, Reduced, RowSolution, Sense, SolveMethod};
use crate::error::Result;

const SUM_TOL: f64 = 1e-12;

/// Maximize the separable convex objective over the row.
pub fn maximize(row: &AmbiguityRow, obj: &Objective, settings: &OptimizerSettings) -> Result<RowSolution> {
    row.check(0, None)?;
    let red = Reduced::new(row);
    let fixed: f64 = (0..row.len())
        .filter(|j| red.free.binary_search(j).is_err())
        .map(|j| obj.term(j, row.lower()[j]))
        .sum();
    if red.is_degenerate() {
        let p = row.lower().to_vec();
        let value = obj.total(&p);
        return Ok(RowSolution {
            value,
            p,
            method: SolveMethod::Degenerate,
            fell_back: false,
            gap: 0.0,
            certificate: Some(value),
        });
    }
    let prob = FreeProblem::new(&red, obj);
    let certificate = fixed + prob.chord_bound();

    let try_exact = match settings.max_mode {
        MaxMode::Exact => true,
        MaxMode::Auto => prob.vertex_count_bound() <= settings.vertex_budget as f64,
        MaxMode::Heuristic | MaxMode::Certified => false,
    };
    let mut fell_back = false;
    if try_exact {
        if let Some((v, x)) = prob.enumerate(settings.vertex_budget) {
            return Ok(RowSolution {
                value: fixed + v,
                p: red.expand(row, &x),
                method: SolveMethod::Exact,
                fell_back: false,
                gap: 0.0,
                certificate: Some(certificate),
            });
        }
        fell_back = true;
    }

    let (v, x) = prob.heuristic(settings.starts.max(1), settings.seed);
    let (value, method) = if settings.max_mode == MaxMode::Certified {
        (certificate, SolveMethod::Certified)
    } else {
        (fixed + v, SolveMethod::Heuristic)
    };
    Ok(RowSolution {
        value,
        p: red.expand(row, &x),
        method,
        fell_back,
        gap: 0.0,
        certificate: Some(certificate),
    })
}

/// The objective restricted to the free coordinates of a row.
struct FreeProblem<'a> {
    obj: &'a Objective,
    idx: &'a [usize],
    lo: &'a [f64],
    hi: &'a [f64],
    w: Vec<f64>,
    slack: f64,
    f_lo: Vec<f64>,
    f_hi: Vec<f64>,
}

impl<'a> FreeProblem<'a> {
    fn new(red: &'a Reduced, obj: &'a Objective) -> Self {
        let f_lo = red
            .free
            .iter()
            .zip(&red.lo)
            .map(|(&j, &l)| obj.term(j, l))
            .collect();
        let f_hi = red
            .free
            .iter()
            .zip(&red.hi)
            .map(|(&j, &h)| obj.term(j, h))
            .collect();
        Self {
            obj,
            idx: &red.free,
            lo: &red.lo,
            hi: &red.hi,
            w: red.lo.iter().zip(&red.hi).map(|(l, h)| h - l).collect(),
            slack: red.slack,
            f_lo,
            f_hi,
        }
    }

    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn f(&self, k: usize, x: f64) -> f64 {
        self.obj.term(self.idx[k], x)
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(k, &v)| self.f(k, v)).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| self.obj.deriv(self.idx[k], v))
            .collect()
    }

    fn chord_slopes(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| (self.f_hi[k] - self.f_lo[k]) / self.w[k])
            .collect()
    }

    /// Upper bound on the free part: maximize the sum of chords.
    fn chord_bound(&self) -> f64 {
        let slopes = self.chord_slopes();
        let x = greedy(self.lo, self.hi, self.slack, &slopes, Sense::Max);
        let base: f64 = self.f_lo.iter().sum();
        base + (0..self.dim())
            .map(|k| slopes[k] * (x[k] - self.lo[k]))
            .sum::<f64>()
    }

    /// Cheap upper bound on the number of vertex candidates.
    fn vertex_count_bound(&self) -> f64 {
        let d = self.dim();
        let mut sorted = self.w.clone();
        sorted.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        let mut kmax = 0;
        for w in sorted {
            if acc + w > self.slack + SUM_TOL {
                break;
            }
            acc += w;
            kmax += 1;
        }
        // sum_{k <= kmax} C(d, k), times d fractional choices
        let mut binom = 1.0;
        let mut subsets = 1.0;
        for k in 1..=kmax {
            binom *= (d - k + 1) as f64 / k as f64;
            subsets += binom;
        }
        subsets * d as f64
    }

    /// Enumerate every vertex; `None` if more than `budget` candidates arise.
    fn enumerate(&self, budget: usize) -> Option<(f64, Vec<f64>)> {
        let d = self.dim();
        let base: f64 = self.f_lo.iter().sum();
        let mut search = Search {
            p: self,
            in_set: vec![false; d],
            stack: Vec::new(),
            best: f64::NEG_INFINITY,
            best_set: Vec::new(),
            best_frac: None,
            count: 0,
            budget,
        };
        if !search.visit(0, 0.0, base) {
            return None;
        }
        let mut x = self.lo.to_vec();
        for &k in &search.best_set {
            x[k] = self.hi[k];
        }
        if let Some((k, r)) = search.best_frac {
            x[k] = (self.lo[k] + r).min(self.hi[k]);
        }
        Some((search.best, x))
    }

    /// Best vertex of the linearization with coefficients `c`.
    fn vertex(&self, c: &[f64]) -> Vec<f64> {
        greedy(self.lo, self.hi, self.slack, c, Sense::Max)
    }

    /// Successive linearization from `x` until no vertex improves.
    fn ascend(&self, mut x: Vec<f64>) -> (f64, Vec<f64>) {
        let mut fx = self.value(&x);
        for _ in 0..200 {
            let y = self.vertex(&self.gradient(&x));
            let fy = self.value(&y);
            if fy > fx + 1e-15 * fx.abs().max(1.0) {
                x = y;
                fx = fy;
            } else {
                break;
            }
        }
        (fx, x)
    }

    /// Pairwise maximal mass transfers, steepest first, until none improves.
    fn polish(&self, x: &mut [f64], fx: &mut f64) -> bool {
        let d = self.dim();
        let mut improved = false;
        for _ in 0..(10 * d + 10) {
            let mut best = (0.0, 0, 0, 0.0);
            for i in 0..d {
                let give = x[i] - self.lo[i];
                if give <= 0.0 {
                    continue;
                }
                let fi = self.f(i, x[i]);
                for j in 0..d {
                    let room = self.hi[j] - x[j];
                    if j == i || room <= 0.0 {
                        continue;
                    }
                    let t = give.min(room);
                    let delta = self.f(i, x[i] - t) - fi + self.f(j, x[j] + t) - self.f(j, x[j]);
                    if delta > best.0 {
                        best = (delta, i, j, t);
                    }
                }
            }
            let (delta, i, j, t) = best;
            if delta <= 1e-15 * fx.abs().max(1.0) {
                break;
            }
            x[i] = if t >= x[i] - self.lo[i] { self.lo[i] } else { x[i] - t };
            x[j] = if t >= self.hi[j] - x[j] { self.hi[j] } else { x[j] + t };
            *fx = self.value(x);
            improved = true;
        }
        improved
    }

    fn heuristic(&self, starts: usize, seed: u64) -> (f64, Vec<f64>) {
        let d = self.dim();
        let slopes = self.chord_slopes();
        let mut coeffs: Vec<Vec<f64>> = vec![slopes.clone()];

        // concentrate the slack on single coordinates, steepest chords first
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| slopes[b].total_cmp(&slopes[a]).then(a.cmp(&b)));
        let top = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs())) + 1.0;
        for &k in order.iter().take((starts.saturating_sub(1)) / 2) {
            let mut c = slopes.clone();
            c[k] = 2.0 * top + 1.0;
            coeffs.push(c);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while coeffs.len() < starts {
            coeffs.push((0..d).map(|_| rng.random::<f64>()).collect());
        }

        let mut best = (f64::NEG_INFINITY, self.lo.to_vec());
        for c in coeffs {
            let (mut fx, mut x) = self.ascend(self.vertex(&c));
            while self.polish(&mut x, &mut fx) {
                let (fy, y) = self.ascend(x.clone());
                if fy > fx {
                    fx = fy;
                    x = y;
                } else {
                    break;
                }
            }
            if fx > best.0 {
                best = (fx, x);
            }
        }
        best
    }
}

struct Search<'a, 'b> {
    p: &'b FreeProblem<'a>,
    in_set: Vec<bool>,
    stack: Vec<usize>,
    best: f64,
    best_set: Vec<usize>,
    best_frac: Option<(usize, f64)>,
    count: usize,
    budget: usize,
}

impl Search<'_, '_> {
    /// Evaluate vertices with the current upper set, then extend it.
    /// Returns `false` once the budget is exhausted.
    fn visit(&mut self, next: usize, width: f64, value: f64) -> bool {
        let p = self.p;
        let r = p.slack - width;
        if r <= SUM_TOL {
            self.count += 1;
            if value > self.best {
                self.best = value;
                self.best_set = self.stack.clone();
                self.best_frac = None;
            }
        } else {
            for k in 0..p.dim() {
                if self.in_set[k] || p.w[k] < r - SUM_TOL {
                    continue;
                }
                self.count += 1;
                let x = (p.lo[k] + r).min(p.hi[k]);
                let v = value - p.f_lo[k] + p.f(k, x);
                if v > self.best {
                    self.best = v;
                    self.best_set = self.stack.clone();
                    self.best_frac = Some((k, r));
                }
            }
        }
        if self.count > self.budget {
            return false;
        }
        for k in next..p.dim() {
            if width + p.w[k] > p.slack + SUM_TOL {
                continue;
            }
            self.in_set[k] = true;
            self.stack.push(k);
            let ok = self.visit(k + 1, width + p.w[k], value - p.f_lo[k] + p.f_hi[k]);
            self.stack.pop();
            self.in_set[k] = false;
            if !ok {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credal::{phi, robust_max_convex, EntropyGeometry};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_row(rng: &mut ChaCha8Rng, n: usize) -> AmbiguityRow {
        loop {
            let mid: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s: f64 = mid.iter().sum();
            let lower: Vec<f64> = mid
                .iter()
                .map(|m| (m / s - rng.random::<f64>() * 0.3).max(0.0))
                .collect();
            let upper: Vec<f64> = mid
                .iter()
                .map(|m| (m / s + rng.random::<f64>() * 0.3).min(1.0))
                .collect();
            if let Ok(r) = AmbiguityRow::new(lower, upper) {
                return r;
            }
        }
    }

    #[test]
    fn singleton_row_returns_phi() {
        let g = EntropyGeometry::equal_cells(3, 1.0, 1, 1.0 / 3.0);
        let p = vec![0.2, 0.5, 0.3];
        let sol = robust_max_convex(&AmbiguityRow::point(p.clone()), &[1.0, 0.0, -1.0], &g, false, &Default::default()).unwrap();
        assert_eq!(sol.method, SolveMethod::Degenerate);
        assert_relative_eq!(sol.value, phi(&p, &[1.0, 0.0, -1.0], &g));
    }

    #[test]
    fn full_simplex_maximum_is_a_vertex() {
        let g = EntropyGeometry::equal_cells(5, 1.0, 1, 0.2);
        let sol = robust_max_convex(&AmbiguityRow::simplex(5), &[0.0; 5], &g, false, &Default::default()).unwrap();
        assert_relative_eq!(sol.value, 5f64.ln(), epsilon = 1e-14);
        assert_eq!(sol.p.iter().filter(|&&x| x == 1.0).count(), 1);
    }

    #[test]
    fn heuristic_matches_exact_on_small_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = EntropyGeometry::equal_cells(4, 1.0, 2, 0.5).with_grad_bound(0.8);
        for _ in 0..200 {
            let row = random_row(&mut rng, 4);
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0).collect();
            for eps in [false, true] {
                let exact = robust_max_convex(&row, &v, &g, eps, &OptimizerSettings { max_mode: MaxMode::Exact, ..Default::default() }).unwrap();
                let heur = robust_max_convex(&row, &v, &g, eps, &OptimizerSettings { max_mode: MaxMode::Heuristic, ..Default::default() }).unwrap();
                assert!((exact.value - heur.value).abs() < 1e-9, "{} vs {}", exact.value, heur.value);
                assert!(exact.certificate.unwrap() >= exact.value - 1e-12);
                assert!(row.contains(&exact.p, 1e-12));
            }
        }
    }

    #[test]
    fn budget_exhaustion_falls_back() {
        let g = EntropyGeometry::equal_cells(12, 1.0, 1, 1.0 / 12.0);
        let row = AmbiguityRow::new(vec![0.0; 12], vec![0.3; 12]).unwrap();
        let s = OptimizerSettings {
            max_mode: MaxMode::Exact,
            vertex_budget: 10,
            ..Default::default()
        };
        let sol = robust_max_convex(&row, &[0.0; 12], &g, false, &s).unwrap();
        assert!(sol.fell_back);
        assert_eq!(sol.method, SolveMethod::Heuristic);
    }

    #[test]
    fn certified_mode_reports_chord_bound() {
        let g = EntropyGeometry::equal_cells(3, 1.0, 1, 1.0 / 3.0);
        let row = AmbiguityRow::new(vec![0.1; 3], vec![0.7; 3]).unwrap();
        let s = OptimizerSettings {
            max_mode: MaxMode::Certified,
            ..Default::default()
        };
        let cert = robust_max_convex(&row, &[0.0, 1.0, 0.5], &g, false, &s).unwrap();
        let exact = robust_max_convex(&row, &[0.0, 1.0, 0.5], &g, false, &OptimizerSettings { max_mode: MaxMode::Exact, ..Default::default() }).unwrap();
        assert!(cert.value >= exact.value - 1e-12);
    }
}
