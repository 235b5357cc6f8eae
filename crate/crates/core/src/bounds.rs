//! Lower bound and the two corrected upper bounds on the trajectory KL to
//! uniform, by backward robust recursions on an interval chain.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::IntervalAbstraction;
use crate::credal::{global_epsilon_ln, maximize, minimize, LogBase, Objective, OptimizerSettings, RowSolution, SolveMethod};
use crate::error::{Error, Result};
use crate::kernels::ln_trajectory_gradient_bound;

/// Constants entering the corrections, echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub horizon: usize,
    pub cell_count: usize,
    pub state_dim: usize,
    /// Trajectory dimension `(K + 1) n_x`.
    pub trajectory_dim: usize,
    pub lq: f64,
    pub lgrad: f64,
    /// `ln L` with `L = 2 lq^K lgrad`.
    pub ln_l: f64,
    /// `L` itself, `None` when it overflows.
    pub l: Option<f64>,
    pub max_side: f64,
    /// `ln |S|`.
    pub ln_cells: f64,
    pub cells: Option<u128>,
    pub base: LogBase,
    pub analytic_bounds: bool,
    pub safety: f64,
}

impl Constants {
    pub fn new(abs: &IntervalAbstraction, horizon: usize, base: LogBase) -> Result<Self> {
        let m = abs.partition().trajectory_measures(horizon)?;
        let sb = abs.meta.sup_bounds;
        let ln_l = ln_trajectory_gradient_bound(sb.lq, sb.lgrad, horizon);
        let l = ln_l.exp();
        Ok(Self {
            horizon,
            cell_count: abs.cell_count(),
            state_dim: abs.domain.dim(),
            trajectory_dim: m.dim,
            lq: sb.lq,
            lgrad: sb.lgrad,
            ln_l,
            l: l.is_finite().then_some(l),
            max_side: m.max_side,
            ln_cells: m.ln_cells,
            cells: m.cells,
            base,
            analytic_bounds: sb.analytic,
            safety: sb.safety,
        })
    }

    /// Worst-case correction over the whole trajectory space, in the report's base.
    pub fn global_epsilon(&self) -> f64 {
        self.base
            .from_nats(global_epsilon_ln(self.trajectory_dim, self.ln_cells, self.ln_l, self.max_side))
    }
}

/// How the row problems were solved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub degenerate: usize,
    pub exact: usize,
    pub heuristic: usize,
    pub certified: usize,
    pub frank_wolfe: usize,
    /// Rows where enumeration was abandoned for the heuristic.
    pub fallbacks: usize,
    pub max_fw_gap: f64,
}

impl SolverStats {
    pub(crate) fn record(&mut self, s: &RowSolution) {
        match s.method {
            SolveMethod::Degenerate => self.degenerate += 1,
            SolveMethod::Exact => self.exact += 1,
            SolveMethod::Heuristic => self.heuristic += 1,
            SolveMethod::Certified => self.certified += 1,
            SolveMethod::FrankWolfe => self.frank_wolfe += 1,
        }
        self.fallbacks += s.fell_back as usize;
        self.max_fw_gap = self.max_fw_gap.max(s.gap);
    }

    /// Maximizations that may fall short of the true maximum.
    pub fn uncertified_maxima(&self) -> usize {
        self.heuristic
    }
}

/// Value vectors `V_k`, `k = 0..K`, of the three recursions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepValues {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub local: Vec<Vec<f64>>,
}

/// Output of [`compute_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper_global: f64,
    pub upper_local: f64,
    pub eps_global: f64,
    /// Amount subtracted from the lower recursion for the minimization tolerance.
    pub lower_debit: f64,
    pub constants: Constants,
    pub solver: SolverStats,
    #[serde(default)]
    pub values: Option<StepValues>,
    pub runtime_s: f64,
}

/// Row objective: cell-relative entropy, optional correction constants, continuation values.
pub(crate) fn row_objective(ln_ratios: &[f64], eps: Option<Vec<f64>>, values: Vec<f64>, base: LogBase) -> Objective {
    let eps = eps.unwrap_or_else(|| vec![0.0; values.len()]);
    Objective::new(ln_ratios.to_vec(), eps, values, base.kappa())
}

/// One backward step: solve every row of action `u` in parallel.
pub(crate) fn step_rows<F>(n: usize, solve: F) -> Result<Vec<RowSolution>>
where
    F: Fn(usize) -> Result<RowSolution> + Sync,
{
    (0..n).into_par_iter().map(&solve).collect()
}

/// Run the three recursions on a single-action abstraction.
pub fn compute_bounds(abs: &IntervalAbstraction, horizon: usize, base: LogBase, settings: &OptimizerSettings, keep_values: bool) -> Result<BoundsReport> {
    let start = Instant::now();
    if abs.action_count() != 1 {
        return Err(Error::config(
            "action",
            format!("bounds need a chain; the abstraction has {} actions (pin one)", abs.action_count()),
        ));
    }
    if horizon == 0 {
        return Err(Error::Guard("horizon K must be at least 1".into()));
    }
    let constants = Constants::new(abs, horizon, base)?;
    let geom = abs.geometry(base);
    let ln_ratios = geom.ln_ratios();
    let n = abs.cell_count();
    let rows: Vec<_> = (0..n).map(|i| abs.row(0, i)).collect();
    let eps: Vec<Vec<f64>> = (0..n).map(|i| abs.eps_constants(0, i)).collect();

    let mut v_lo = vec![0.0; n];
    let mut v_hi = vec![0.0; n];
    let mut v_eps = vec![0.0; n];
    let mut history = StepValues {
        lower: vec![v_lo.clone()],
        upper: vec![v_hi.clone()],
        local: vec![v_eps.clone()],
    };
    let mut stats = SolverStats::default();
    let mut debit = 0.0;
    for _ in 0..horizon {
        let lo = step_rows(n, |i| minimize(&rows[i], &row_objective(&ln_ratios, None, v_lo.clone(), base), settings))?;
        let hi = step_rows(n, |i| maximize(&rows[i], &row_objective(&ln_ratios, None, v_hi.clone(), base), settings))?;
        let le = step_rows(n, |i| {
            maximize(&rows[i], &row_objective(&ln_ratios, Some(eps[i].clone()), v_eps.clone(), base), settings)
        })?;
        let mut gap: f64 = 0.0;
        for s in lo.iter().chain(&hi).chain(&le) {
            stats.record(s);
        }
        for s in &lo {
            gap = gap.max(s.gap);
        }
        debit += gap.max(settings.fw_tol);
        v_lo = lo.iter().map(|s| s.value).collect();
        v_hi = hi.iter().map(|s| s.value).collect();
        v_eps = le.iter().map(|s| s.value).collect();
        if keep_values {
            history.lower.push(v_lo.clone());
            history.upper.push(v_hi.clone());
            history.local.push(v_eps.clone());
        }
    }
    let pi = &abs.initial;
    let eps_global = constants.global_epsilon();
    let lower = row_objective(&ln_ratios, None, v_lo, base).total(pi) - debit;
    let upper_global = row_objective(&ln_ratios, None, v_hi, base).total(pi) + eps_global;
    let upper_local = row_objective(&ln_ratios, Some(abs.initial_eps_constants()), v_eps, base).total(pi);
    let values = keep_values.then(|| {
        // stored forward in time: index k holds V_k
        history.lower.reverse();
        history.upper.reverse();
        history.local.reverse();
        history
    });
    Ok(BoundsReport {
        lower,
        upper_global,
        upper_local,
        eps_global,
        lower_debit: debit,
        constants,
        solver: stats,
        values,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Largest trajectory count [`enumerate_discrete_kl`] accepts.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Discrete KL to uniform of a fixed-kernel chain, by listing every trajectory.
///
/// `kernels[k]` is the `|X| x |X|` transition matrix used from step `k` to `k + 1`.
pub fn enumerate_discrete_kl(pi: &[f64], kernels: &[Vec<Vec<f64>>], volumes: &[f64], base: LogBase) -> Result<f64> {
    let n = pi.len();
    let steps = kernels.len() + 1;
    let count = (n as u128).checked_pow(steps as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::Guard(format!("{count} trajectories exceed the enumeration limit {ENUMERATION_LIMIT}")));
    }
    let ln_total: f64 = volumes.iter().sum::<f64>().ln();
    let mut kl = 0.0;
    let mut idx = vec![0usize; steps];
    loop {
        let mut p = pi[idx[0]];
        let mut ln_cell = volumes[idx[0]].ln();
        for k in 1..steps {
            if p == 0.0 {
                break;
            }
            p *= kernels[k - 1][idx[k - 1]][idx[k]];
            ln_cell += volumes[idx[k]].ln();
        }
        if p > 0.0 {
            kl += p * (p.ln() + steps as f64 * ln_total - ln_cell);
        }
        let mut d = steps;
        loop {
            if d == 0 {
                return Ok(base.from_nats(kl));
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// The same quantity by the backward step recursion `V_k(i) = Phi(P_k(i), V_{k+1})`.
pub fn discrete_kl_recursion(pi: &[f64], kernels: &[Vec<Vec<f64>>], volumes: &[f64], base: LogBase) -> f64 {
    let ln_total: f64 = volumes.iter().sum::<f64>().ln();
    let ln_ratios: Vec<f64> = volumes.iter().map(|v| ln_total - v.ln()).collect();
    let mut v = vec![0.0; pi.len()];
    for p in kernels.iter().rev() {
        let obj = row_objective(&ln_ratios, None, v.clone(), base);
        v = p.iter().map(|row| obj.total(row)).collect();
    }
    row_objective(&ln_ratios, None, v, base).total(pi)
}

/// Sweep table with columns `N, lower, upper_global, upper_local, eps_global, runtime_s`.
pub fn sweep_csv(entries: &[(usize, BoundsReport)]) -> Result<String> {
    if entries.len() < 2 {
        return Err(Error::Guard("need >=2 reports for a sweep table".into()));
    }
    let mut out = String::from("N,lower,upper_global,upper_local,eps_global,runtime_s\n");
    for (n, r) in entries {
        out.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            r.lower, r.upper_global, r.upper_local, r.eps_global, r.runtime_s
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{AbstractionMeta, AbstractionSettings};
    use crate::geometry::Hyperrect;
    use crate::kernels::SupBounds;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }

    /// Degenerate-interval chain on `[0, 1]` split into `n` equal cells.
    fn point_chain(pi: Vec<f64>, p: Vec<Vec<f64>>, lgrad: f64) -> IntervalAbstraction {
        let n = pi.len();
        IntervalAbstraction {
            domain: Hyperrect::unit(1),
            counts: vec![n],
            actions: vec![0.0],
            initial: pi,
            lower: vec![p.clone()],
            upper: vec![p],
            cost_upper: None,
            cost_lower: None,
            initial_grad: vec![lgrad; n],
            target_grad: vec![vec![vec![lgrad; n]; n]],
            meta: AbstractionMeta {
                model: "test".into(),
                horizon: 3,
                settings: AbstractionSettings::default(),
                sup_bounds: SupBounds {
                    lq: 2.0,
                    lgrad,
                    analytic: true,
                    safety: 1.0,
                },
                max_margin: 0.0,
                repaired_rows: 0,
                initial_drift: 0.0,
            },
            checksum: String::new(),
        }
    }

    #[test]
    fn uniform_chain_has_zero_kl() {
        let p = vec![vec![0.25; 4]; 4];
        let kl = enumerate_discrete_kl(&[0.25; 4], &[p.clone(), p], &[0.25; 4], LogBase::Natural).unwrap();
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn permutation_chain() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let kl = enumerate_discrete_kl(&[1.0, 0.0], &[p], &[0.5, 0.5], LogBase::Natural).unwrap();
        // all mass on one of |S| = 4 trajectories
        assert_relative_eq!(kl, 4f64.ln(), epsilon = 1e-15);
        // uniform start: two trajectories, ln(|S| / |X|)
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let spread = enumerate_discrete_kl(&[0.5, 0.5], &[p], &[0.5, 0.5], LogBase::Natural).unwrap();
        assert_relative_eq!(spread, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn recursion_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 3;
            let pi = random_stochastic(n, &mut rng);
            let ks: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..n).map(|_| random_stochastic(n, &mut rng)).collect()).collect();
            let vols = [0.2, 0.3, 0.5];
            let a = enumerate_discrete_kl(&pi, &ks, &vols, LogBase::Natural).unwrap();
            let b = discrete_kl_recursion(&pi, &ks, &vols, LogBase::Natural);
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn enumeration_guard() {
        let p = vec![vec![0.1; 10]; 10];
        let ks = vec![p; 6];
        assert!(matches!(
            enumerate_discrete_kl(&[0.1; 10], &ks, &[0.1; 10], LogBase::Natural),
            Err(Error::Guard(_))
        ));
    }

    #[test]
    fn degenerate_bounds_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 3;
        let pi = random_stochastic(n, &mut rng);
        let p: Vec<Vec<f64>> = (0..n).map(|_| random_stochastic(n, &mut rng)).collect();
        let abs = point_chain(pi.clone(), p.clone(), 0.7);
        let settings = OptimizerSettings::default();
        let r = compute_bounds(&abs, 3, LogBase::Natural, &settings, false).unwrap();
        let truth = enumerate_discrete_kl(&pi, &vec![p; 3], &[1.0 / 3.0; 3], LogBase::Natural).unwrap();
        assert_relative_eq!(r.lower + r.lower_debit, truth, epsilon = 1e-9);
        assert_relative_eq!(r.lower_debit, 3e-9, epsilon = 1e-20);
        assert_relative_eq!(r.upper_global - r.lower, r.eps_global + 3e-9, epsilon = 1e-12);
        assert!(r.upper_local >= truth && r.upper_local <= r.upper_global);
    }

    #[test]
    fn one_cell_chain() {
        let abs = point_chain(vec![1.0], vec![vec![1.0]], 1.0);
        let r = compute_bounds(&abs, 2, LogBase::Natural, &OptimizerSettings::default(), true).unwrap();
        assert!(r.lower.abs() < 1e-8);
        assert_relative_eq!(r.upper_global - r.eps_global, 0.0, epsilon = 1e-15);
        assert_eq!(r.values.unwrap().lower.len(), 3);
    }

    #[test]
    fn multi_action_needs_pinning() {
        let mut abs = point_chain(vec![1.0], vec![vec![1.0]], 1.0);
        abs.lower.push(abs.lower[0].clone());
        abs.upper.push(abs.upper[0].clone());
        abs.target_grad.push(abs.target_grad[0].clone());
        abs.actions.push(1.0);
        assert!(compute_bounds(&abs, 2, LogBase::Natural, &OptimizerSettings::default(), false).is_err());
        assert!(compute_bounds(&abs.pin_action(1).unwrap(), 2, LogBase::Natural, &OptimizerSettings::default(), false).is_ok());
    }

    #[test]
    fn sweep_table_shape() {
        let abs = point_chain(vec![1.0], vec![vec![1.0]], 1.0);
        let r = compute_bounds(&abs, 1, LogBase::Natural, &OptimizerSettings::default(), false).unwrap();
        let csv = sweep_csv(&[(1, r.clone()), (2, r.clone())]).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("N,lower,upper_global,upper_local,eps_global,runtime_s"));
        assert!(sweep_csv(&[]).is_err());
        assert!(sweep_csv(&[(1, r)]).is_err());
    }
}
