//! Trajectory sampling and plug-in estimates of the KL to uniform and the cost.
//!
//! Trajectories are drawn in fixed-size chunks, each from its own ChaCha
//! stream `(seed, chunk)`, and reduced in chunk order, so results depend on
//! the seed and sample count only, never on the thread count.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credal::LogBase;
use crate::error::{Error, Result};
use crate::geometry::GridPartition;
use crate::kernels::{KernelModel, SimRng};
use crate::synthesis::{Policy, Sigma};

const CHUNK: usize = 1024;

/// One sampled path `x_0, ..., x_K` and the actions applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
}

/// Sample mean with its standard error (absent for a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

/// A policy together with the partition its table refers to.
#[derive(Debug, Clone, Copy)]
pub struct Controller<'a> {
    pub policy: &'a Policy,
    pub partition: &'a GridPartition,
}

impl Controller<'_> {
    fn action(&self, k: usize, x: &[f64]) -> Result<usize> {
        Ok(self.policy.action(k, self.partition.cell_of(x)?))
    }
}

fn check(model: &dyn KernelModel, controller: Option<Controller<'_>>, samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::config("solver.samples", "need at least one sample"));
    }
    match controller {
        None if model.action_count() > 1 => Err(Error::config("policy", "a policy is required for a model with several actions")),
        Some(c) => {
            if c.partition.domain() != model.domain() {
                return Err(Error::InvalidBox("policy partition and model live on different boxes".into()));
            }
            c.policy.check(model.horizon(), c.partition.cell_count(), model.action_count())
        }
        None => Ok(()),
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn sample_path(model: &dyn KernelModel, controller: Option<Controller<'_>>, rng: &mut SimRng) -> Result<Trajectory> {
    let k = model.horizon();
    let mut states = Vec::with_capacity(k + 1);
    let mut actions = Vec::with_capacity(k);
    states.push(model.sample_initial(rng));
    for t in 0..k {
        let x = &states[t];
        let u = match controller {
            Some(c) => c.action(t, x)?,
            None => 0,
        };
        let y = model.sample_step(x, u, rng);
        actions.push(u);
        states.push(y);
    }
    Ok(trajectory_in_box(model, Trajectory { states, actions }))
}

fn trajectory_in_box(model: &dyn KernelModel, mut t: Trajectory) -> Trajectory {
    for x in &mut t.states {
        model.domain().clamp(x);
    }
    t
}

/// Draw `samples` independent trajectories.
pub fn simulate(model: &dyn KernelModel, controller: Option<Controller<'_>>, samples: usize, seed: u64) -> Result<Vec<Trajectory>> {
    check(model, controller, samples)?;
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let count = CHUNK.min(samples - c * CHUNK);
            (0..count).map(|_| sample_path(model, controller, &mut rng)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// `ln T(s) + ln lambda(S)` of one trajectory, in nats.
pub fn log_density_ratio(model: &dyn KernelModel, t: &Trajectory) -> Result<f64> {
    let q0 = model.initial_density(&t.states[0]);
    if !(q0 > 0.0) {
        return Err(Error::ZeroDensity { step: 0 });
    }
    let mut total = q0.ln();
    for k in 0..t.actions.len() {
        let q = model.transition_density(&t.states[k], &t.states[k + 1], t.actions[k]);
        if !(q > 0.0) {
            return Err(Error::ZeroDensity { step: k + 1 });
        }
        total += q.ln();
    }
    Ok(total + t.states.len() as f64 * model.domain().volume().ln())
}

/// Accumulated stage cost along a trajectory.
pub fn path_cost(model: &dyn KernelModel, t: &Trajectory) -> Result<f64> {
    let mut c = 0.0;
    for k in 0..t.actions.len() {
        c += model
            .stage_cost(&t.states[k], t.actions[k])
            .ok_or(Error::MissingCost("cost estimates need a stage cost"))?;
    }
    Ok(c)
}

/// Running mean and squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn estimate(self, seed: u64) -> McEstimate {
        let samples = self.n as usize;
        let std_error = (samples > 1).then(|| (self.m2 / (self.n - 1.0) / self.n).sqrt());
        McEstimate {
            mean: self.mean,
            std_error,
            samples,
            seed,
        }
    }
}

/// Estimates from one batch of trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub kl: McEstimate,
    pub cost: Option<McEstimate>,
    /// `cost + sigma KL`, per trajectory, when a sign is given and costs exist.
    pub objective: Option<McEstimate>,
    pub base: LogBase,
}

/// KL, cost and objective estimates from the same `samples` trajectories.
pub fn mc_summary(
    model: &dyn KernelModel,
    controller: Option<Controller<'_>>,
    samples: usize,
    seed: u64,
    base: LogBase,
    sigma: Option<Sigma>,
) -> Result<McSummary> {
    check(model, controller, samples)?;
    let with_cost = model.stage_cost(&model.domain().center(), 0).is_some();
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut m = [Moments::default(); 3];
            for _ in 0..count {
                let t = sample_path(model, controller, &mut rng)?;
                let kl = base.from_nats(log_density_ratio(model, &t)?);
                m[0].push(kl);
                if with_cost {
                    let cost = path_cost(model, &t)?;
                    m[1].push(cost);
                    if let Some(s) = sigma {
                        m[2].push(cost + s.value() * kl);
                    }
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = parts
        .into_iter()
        .fold([Moments::default(); 3], |a, b| [a[0].merge(b[0]), a[1].merge(b[1]), a[2].merge(b[2])]);
    Ok(McSummary {
        kl: total[0].estimate(seed),
        cost: with_cost.then(|| total[1].estimate(seed)),
        objective: (with_cost && sigma.is_some()).then(|| total[2].estimate(seed)),
        base,
    })
}

/// Plug-in estimate of the trajectory KL to uniform.
pub fn mc_kl_to_uniform(model: &dyn KernelModel, controller: Option<Controller<'_>>, samples: usize, seed: u64, base: LogBase) -> Result<McEstimate> {
    Ok(mc_summary(model, controller, samples, seed, base, None)?.kl)
}

/// Estimate of the expected accumulated stage cost.
pub fn mc_expected_cost(model: &dyn KernelModel, controller: Option<Controller<'_>>, samples: usize, seed: u64) -> Result<McEstimate> {
    mc_summary(model, controller, samples, seed, LogBase::Natural, None)?
        .cost
        .ok_or(Error::MissingCost("cost estimates need a stage cost"))
}

/// Trajectories as CSV rows `trajectory, k, x_0..x_{n-1}, action` (no action on the last state).
pub fn trajectories_csv(trajectories: &[Trajectory]) -> String {
    let dim = trajectories.first().map_or(0, |t| t.states[0].len());
    let mut out = String::from("trajectory,k");
    for d in 0..dim {
        out.push_str(&format!(",x{d}"));
    }
    out.push_str(",action\n");
    for (n, t) in trajectories.iter().enumerate() {
        for (k, x) in t.states.iter().enumerate() {
            out.push_str(&format!("{n},{k}"));
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            match t.actions.get(k) {
                Some(u) => out.push_str(&format!(",{u}\n")),
                None => out.push_str(",\n"),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Hyperrect;
    use crate::kernels::{ClippedGaussian, Triangle, TriangularAv, UniformModel};
    use crate::quadrature;

    #[test]
    fn uniform_chain_has_zero_kl() {
        let m = UniformModel::new(Hyperrect::unit(2), 3);
        let e = mc_kl_to_uniform(&m, None, 1000, 1, LogBase::Natural).unwrap();
        assert!(e.mean.abs() < 1e-12);
    }

    #[test]
    fn horizon_zero_samples_initial_law() {
        let m = ClippedGaussian::isotropic(Hyperrect::unit(1), 0.2, vec![0.4], 0.1, 0).unwrap();
        let t = simulate(&m, None, 10, 3).unwrap();
        assert!(t.iter().all(|t| t.states.len() == 1 && t.actions.is_empty()));
    }

    #[test]
    fn seeds_reproduce() {
        let m = TriangularAv::new(4, 1.0, Triangle::new(0.0, 0.1, 0.2).unwrap()).unwrap();
        let part = GridPartition::uniform(Hyperrect::unit(1), &[8]).unwrap();
        let pol = Policy::constant(4, 8, 4, vec![]);
        let c = Some(Controller { policy: &pol, partition: &part });
        let a = mc_summary(&m, c, 3000, 9, LogBase::Natural, Some(Sigma::Minus)).unwrap();
        let b = mc_summary(&m, c, 3000, 9, LogBase::Natural, Some(Sigma::Minus)).unwrap();
        assert_eq!(a, b);
        let other = mc_summary(&m, c, 3000, 10, LogBase::Natural, None).unwrap();
        assert_ne!(a.kl.mean, other.kl.mean);
    }

    #[test]
    fn single_sample_has_no_error_bar() {
        let m = UniformModel::new(Hyperrect::unit(1), 1);
        assert_eq!(mc_kl_to_uniform(&m, None, 1, 0, LogBase::Natural).unwrap().std_error, None);
    }

    #[test]
    fn constant_cost_is_exact() {
        let m = UniformModel::new(Hyperrect::unit(1), 5).with_cost(0.3);
        let e = mc_expected_cost(&m, None, 500, 2).unwrap();
        assert!((e.mean - 1.5).abs() < 1e-12);
        assert!(e.std_error.unwrap() < 1e-12);
    }

    #[test]
    fn actions_need_a_policy() {
        let m = TriangularAv::new(2, 1.0, Triangle::new(0.0, 0.1, 0.2).unwrap()).unwrap();
        assert!(mc_kl_to_uniform(&m, None, 10, 0, LogBase::Natural).is_err());
    }

    #[test]
    fn rest_samples_have_triangle_mean() {
        let m = TriangularAv::new(1, 1.0, Triangle::new(0.0, 0.1, 0.2).unwrap()).unwrap();
        let mut rng = chunk_rng(4, 0);
        let n = 1_000_000;
        let mut mom = Moments::default();
        for _ in 0..n {
            mom.push(m.sample_step(&[0.0], 0, &mut rng)[0]);
        }
        let e = mom.estimate(4);
        assert!((e.mean - 0.05).abs() < 3.0 * e.std_error.unwrap());
    }

    #[test]
    fn one_step_kl_matches_quadrature() {
        // K = 1 on [0, 1]: KL = int q0 ln q0 + int q0(x) int q(x, y) ln q(x, y)
        let m = ClippedGaussian::isotropic(Hyperrect::unit(1), 0.3, vec![0.3], 0.2, 1).unwrap();
        let b = Hyperrect::unit(1);
        let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
        let first = quadrature::integrate(&|x| xlogx(m.initial_density(x)), &b, 16, 1e-10).unwrap();
        let second = quadrature::integrate(
            &|x| {
                let inner = quadrature::integrate(&|y| xlogx(m.transition_density(x, y, 0)), &b, 16, 1e-10).unwrap();
                m.initial_density(x) * inner
            },
            &b,
            16,
            1e-9,
        )
        .unwrap();
        let e = mc_kl_to_uniform(&m, None, 100_000, 5, LogBase::Natural).unwrap();
        assert!((e.mean - first - second).abs() < 3.0 * e.std_error.unwrap(), "{} vs {}", e.mean, first + second);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = UniformModel::new(Hyperrect::unit(2), 2);
        let t = simulate(&m, None, 3, 0).unwrap();
        let csv = trajectories_csv(&t);
        assert!(csv.starts_with("trajectory,k,x0,x1,action\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn standard_error_scales_like_inverse_root() {
        let m = ClippedGaussian::isotropic(Hyperrect::unit(1), 0.3, vec![0.5], 0.3, 2).unwrap();
        let se = |n| mc_kl_to_uniform(&m, None, n, 8, LogBase::Natural).unwrap().std_error.unwrap();
        let (a, b) = (se(1_000), se(100_000));
        let ratio = a / b;
        assert!(ratio > 10.0 / 1.5 && ratio < 10.0 * 1.5, "{ratio}");
    }
}
