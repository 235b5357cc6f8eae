//! Interval abstraction of a continuous model on a grid partition.
//!
//! Row extrema of `x -> mass(x, X_j)` are taken over a tensor mesh of the
//! source cell and widened by the Lipschitz margin `n_x L_grad lambda(X_j) h / 2`,
//! which covers every point of the cell.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::credal::{AmbiguityRow, EntropyGeometry, LogBase};
use crate::error::{Error, Result};
use crate::geometry::{GridPartition, Hyperrect};
use crate::kernels::{corners, CostShape, KernelModel, SupBounds};

/// Largest tolerated drift of the initial cell masses from one.
pub const INITIAL_DRIFT_TOL: f64 = 1e-6;

/// Numerical settings of the abstraction step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbstractionSettings {
    /// Absolute tolerance of every cell-mass integral.
    pub quad_tol: f64,
    /// Mesh points per dimension in each source cell.
    pub mesh: usize,
    /// Add the Lipschitz margin. Without it intervals are not guaranteed to
    /// contain the true extrema ("unsound mode").
    pub margin: bool,
    /// Zero out target cells outside the model's declared support hull.
    pub use_support: bool,
}

impl Default for AbstractionSettings {
    fn default() -> Self {
        Self {
            quad_tol: 1e-9,
            mesh: 5,
            margin: true,
            use_support: true,
        }
    }
}

/// Provenance and diagnostics stored with an abstraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionMeta {
    pub model: String,
    pub horizon: usize,
    pub settings: AbstractionSettings,
    pub sup_bounds: SupBounds,
    /// Largest margin added to any entry.
    pub max_margin: f64,
    /// Rows whose upper bounds had to be widened after clamping.
    pub repaired_rows: usize,
    /// Drift of the initial masses before renormalization.
    pub initial_drift: f64,
}

/// The finite interval chain (one action) or interval MDP.
///
/// Matrices are indexed `[action][source][target]`; costs `[source][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalAbstraction {
    pub domain: Hyperrect,
    pub counts: Vec<usize>,
    pub actions: Vec<f64>,
    pub initial: Vec<f64>,
    pub lower: Vec<Vec<Vec<f64>>>,
    pub upper: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub cost_upper: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub cost_lower: Option<Vec<Vec<f64>>>,
    /// Bound on the initial density's gradient inside each cell.
    pub initial_grad: Vec<f64>,
    /// Bound on the target-state gradient of `q^u(x, .)` for `x` in cell `i`
    /// and the target in cell `j`.
    pub target_grad: Vec<Vec<Vec<f64>>>,
    pub meta: AbstractionMeta,
    /// SHA-256 of the file contents with this field blank.
    #[serde(default)]
    pub checksum: String,
}

/// Initial cell masses, renormalized to sum to one.
///
/// Returns the masses and the drift seen before renormalization.
pub fn initial_distribution(model: &dyn KernelModel, partition: &GridPartition, tol: f64) -> Result<(Vec<f64>, f64)> {
    let mut pi = partition
        .cells()
        .par_iter()
        .map(|c| model.initial_mass(c, tol).map(|m| m.max(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = pi.iter().sum();
    let drift = (total - 1.0).abs();
    if drift > INITIAL_DRIFT_TOL || total <= 0.0 {
        return Err(Error::InitialMassDrift { drift });
    }
    pi.iter_mut().for_each(|p| *p /= total);
    Ok((pi, drift))
}

/// One row of interval bounds plus its per-target gradient bounds.
struct RowBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    grad: Vec<f64>,
    max_margin: f64,
    repaired: bool,
}

fn row_bounds(
    model: &dyn KernelModel,
    cells: &[Hyperrect],
    src: usize,
    action: usize,
    lgrad: f64,
    settings: &AbstractionSettings,
) -> Result<RowBounds> {
    let n = cells.len();
    let dim = model.dim();
    let source = &cells[src];
    let (mesh, h) = source.mesh(settings.mesh);
    let hull = if settings.use_support {
        model.support_hull(source, action)
    } else {
        None
    };
    let slack_tol = if model.exact_masses() { 0.0 } else { settings.quad_tol };

    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut max_margin: f64 = 0.0;
    for (j, target) in cells.iter().enumerate() {
        if let Some(hull) = &hull {
            if disjoint(hull, target) {
                continue;
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in &mesh {
            let m = model.cell_mass(x, target, action, settings.quad_tol)?;
            lo = lo.min(m);
            hi = hi.max(m);
        }
        let margin = if settings.margin {
            dim as f64 * lgrad * target.volume() * h / 2.0 + slack_tol
        } else {
            0.0
        };
        max_margin = max_margin.max(margin);
        lower[j] = (lo - margin).clamp(0.0, 1.0);
        upper[j] = (hi + margin).clamp(0.0, 1.0);
        grad[j] = model
            .target_gradient_bound(source, target, action)
            .map_or(lgrad, |g| g.min(lgrad));
    }
    tighten(&mut lower, &mut upper);
    let repaired = repair(&mut upper);
    Ok(RowBounds {
        lower,
        upper,
        grad,
        max_margin,
        repaired,
    })
}

/// Two closed boxes share no interior point.
fn disjoint(a: &Hyperrect, b: &Hyperrect) -> bool {
    (0..a.dim()).any(|d| a.highs()[d] <= b.lows()[d] || b.highs()[d] <= a.lows()[d])
}

/// Intersect each interval with what the other entries leave for it.
///
/// Every distribution inside the original box obeys both cuts, so they are free.
fn tighten(lower: &mut [f64], upper: &mut [f64]) {
    let sl: f64 = lower.iter().sum();
    let su: f64 = upper.iter().sum();
    for j in 0..lower.len() {
        let (l, u) = (lower[j], upper[j]);
        let lo = (1.0 - (su - u)).max(l);
        let hi = (1.0 - (sl - l)).min(u);
        if lo <= hi {
            lower[j] = lo.max(0.0);
            upper[j] = hi.min(1.0);
        }
    }
}

/// Widen upper bounds (by headroom) until they sum to at least one.
fn repair(upper: &mut [f64]) -> bool {
    let su: f64 = upper.iter().sum();
    if su >= 1.0 {
        return false;
    }
    let headroom: f64 = upper.iter().map(|u| 1.0 - u).sum();
    let scale = ((1.0 - su) / headroom).min(1.0);
    for u in upper.iter_mut() {
        *u = (*u + (1.0 - *u) * scale).min(1.0);
    }
    true
}

/// Interval matrices of one action: `(lower, upper)`, indexed `[source][target]`.
pub fn transition_intervals(
    model: &dyn KernelModel,
    partition: &GridPartition,
    action: usize,
    lgrad: f64,
    settings: &AbstractionSettings,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let cells = partition.cells();
    let rows = (0..cells.len())
        .into_par_iter()
        .map(|i| row_bounds(model, &cells, i, action, lgrad, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().map(|r| (r.lower, r.upper)).unzip())
}

/// Cell-wise cost bounds `(upper, lower)`, indexed `[cell][action]`.
///
/// `None` when the model carries no cost.
pub fn abstract_costs(model: &dyn KernelModel, partition: &GridPartition, mesh: usize) -> Result<Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
    let shape = model.cost_shape();
    if shape == CostShape::Absent {
        return Ok(None);
    }
    let actions = model.action_count();
    let dim = model.dim();
    let mut upper = Vec::with_capacity(partition.cell_count());
    let mut lower = Vec::with_capacity(partition.cell_count());
    for cell in partition.cells() {
        let (points, inflation) = match shape {
            CostShape::Absent => unreachable!(),
            CostShape::Constant => (vec![cell.center()], 0.0),
            CostShape::Monotone => (corners(&cell), 0.0),
            CostShape::Lipschitz(c) => {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::MissingCostLipschitz);
                }
                let (pts, h) = cell.mesh(mesh);
                (pts, c * dim as f64 * h / 2.0)
            }
        };
        let mut hi_row = Vec::with_capacity(actions);
        let mut lo_row = Vec::with_capacity(actions);
        for u in 0..actions {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for x in &points {
                let g = model.stage_cost(x, u).ok_or(Error::MissingCost("cost shape declared without values"))?;
                lo = lo.min(g);
                hi = hi.max(g);
            }
            hi_row.push(hi + inflation);
            lo_row.push(lo - inflation);
        }
        upper.push(hi_row);
        lower.push(lo_row);
    }
    Ok(Some((upper, lower)))
}

impl IntervalAbstraction {
    /// Abstract `model` on `partition` using the density bounds `bounds`.
    pub fn build(model: &dyn KernelModel, partition: &GridPartition, bounds: SupBounds, settings: &AbstractionSettings) -> Result<Self> {
        if partition.domain() != model.domain() {
            return Err(Error::InvalidBox("partition and model live on different boxes".into()));
        }
        if settings.mesh == 0 {
            return Err(Error::config("solver.mesh", "mesh needs at least one point per dimension"));
        }
        let (initial, initial_drift) = initial_distribution(model, partition, settings.quad_tol)?;
        let cells = partition.cells();
        let actions = model.action_count();
        let jobs: Vec<(usize, usize)> = (0..actions).flat_map(|u| (0..cells.len()).map(move |i| (u, i))).collect();
        let rows = jobs
            .par_iter()
            .map(|&(u, i)| row_bounds(model, &cells, i, u, bounds.lgrad, settings))
            .collect::<Result<Vec<_>>>()?;

        let mut lower = vec![Vec::with_capacity(cells.len()); actions];
        let mut upper = vec![Vec::with_capacity(cells.len()); actions];
        let mut target_grad = vec![Vec::with_capacity(cells.len()); actions];
        let mut max_margin: f64 = 0.0;
        let mut repaired_rows = 0;
        for ((u, _), r) in jobs.iter().zip(rows) {
            max_margin = max_margin.max(r.max_margin);
            repaired_rows += r.repaired as usize;
            lower[*u].push(r.lower);
            upper[*u].push(r.upper);
            target_grad[*u].push(r.grad);
        }
        let initial_grad = cells
            .iter()
            .map(|c| model.initial_gradient_bound(c).map_or(bounds.lgrad, |g| g.min(bounds.lgrad)))
            .collect();
        let costs = abstract_costs(model, partition, settings.mesh)?;
        let (cost_upper, cost_lower) = match costs {
            Some((u, l)) => (Some(u), Some(l)),
            None => (None, None),
        };
        let mut out = Self {
            domain: partition.domain().clone(),
            counts: partition.counts().to_vec(),
            actions: model.action_labels(),
            initial,
            lower,
            upper,
            cost_upper,
            cost_lower,
            initial_grad,
            target_grad,
            meta: AbstractionMeta {
                model: model.name().to_string(),
                horizon: model.horizon(),
                settings: *settings,
                sup_bounds: bounds,
                max_margin,
                repaired_rows,
                initial_drift,
            },
            checksum: String::new(),
        };
        out.validate()?;
        out.checksum = out.digest()?;
        Ok(out)
    }

    /// Interval chain from explicit matrices `[action][source][target]`.
    ///
    /// Every gradient bound is set to `bounds.lgrad`; no costs are attached.
    pub fn from_matrices(
        partition: &GridPartition,
        initial: Vec<f64>,
        lower: Vec<Vec<Vec<f64>>>,
        upper: Vec<Vec<Vec<f64>>>,
        bounds: SupBounds,
        horizon: usize,
    ) -> Result<Self> {
        let n = partition.cell_count();
        let actions = lower.len();
        let mut out = Self {
            domain: partition.domain().clone(),
            counts: partition.counts().to_vec(),
            actions: (0..actions).map(|u| u as f64).collect(),
            initial,
            lower,
            upper,
            cost_upper: None,
            cost_lower: None,
            initial_grad: vec![bounds.lgrad; n],
            target_grad: vec![vec![vec![bounds.lgrad; n]; n]; actions],
            meta: AbstractionMeta {
                model: "explicit".into(),
                horizon,
                settings: AbstractionSettings::default(),
                sup_bounds: bounds,
                max_margin: 0.0,
                repaired_rows: 0,
                initial_drift: 0.0,
            },
            checksum: String::new(),
        };
        out.validate()?;
        out.checksum = out.digest()?;
        Ok(out)
    }

    pub fn partition(&self) -> GridPartition {
        GridPartition::uniform(self.domain.clone(), &self.counts).expect("validated partition")
    }

    pub fn cell_count(&self) -> usize {
        self.initial.len()
    }

    pub fn action_count(&self) -> usize {
        self.lower.len()
    }

    pub fn has_costs(&self) -> bool {
        self.cost_upper.is_some() && self.cost_lower.is_some()
    }

    /// Ambiguity set of source cell `i` under action `u`.
    pub fn row(&self, u: usize, i: usize) -> AmbiguityRow {
        AmbiguityRow::from_parts_unchecked(self.lower[u][i].clone(), self.upper[u][i].clone())
    }

    /// Keep a single action (for bounding a chain extracted from an MDP).
    pub fn pin_action(&self, u: usize) -> Result<Self> {
        if u >= self.action_count() {
            return Err(Error::config("action", format!("action {u} out of range (have {})", self.action_count())));
        }
        let mut out = self.clone();
        out.actions = vec![self.actions[u]];
        out.lower = vec![self.lower[u].clone()];
        out.upper = vec![self.upper[u].clone()];
        out.target_grad = vec![self.target_grad[u].clone()];
        out.cost_upper = self.cost_upper.as_ref().map(|c| c.iter().map(|r| vec![r[u]]).collect());
        out.cost_lower = self.cost_lower.as_ref().map(|c| c.iter().map(|r| vec![r[u]]).collect());
        out.checksum = out.digest()?;
        Ok(out)
    }

    /// Step-functional geometry of this partition.
    pub fn geometry(&self, base: LogBase) -> EntropyGeometry {
        let partition = self.partition();
        EntropyGeometry {
            ln_volume: self.domain.volume().ln(),
            ln_cell_volumes: partition.cell_volumes().iter().map(|v| v.ln()).collect(),
            state_dim: self.domain.dim(),
            max_side: partition.max_side(),
            grad_bound: self.meta.sup_bounds.lgrad,
            base,
        }
    }

    /// Correction constants `L_ij lambda(X_j) sum_d delta_d / 2` of row `(u, i)`.
    pub fn eps_constants(&self, u: usize, i: usize) -> Vec<f64> {
        self.local_constants(&self.target_grad[u][i])
    }

    /// Correction constants of the initial step.
    pub fn initial_eps_constants(&self) -> Vec<f64> {
        self.local_constants(&self.initial_grad)
    }

    fn local_constants(&self, grads: &[f64]) -> Vec<f64> {
        let partition = self.partition();
        (0..self.cell_count())
            .map(|j| {
                let cell = partition.cell(j);
                grads[j] * cell.volume() * cell.sides().iter().sum::<f64>() / 2.0
            })
            .collect()
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let partition = GridPartition::uniform(self.domain.clone(), &self.counts)?;
        let n = partition.cell_count();
        let actions = self.actions.len();
        let shape_err = |what: &'static str, got: usize, expected: usize| Error::DimensionMismatch { what, expected, got };
        if self.initial.len() != n {
            return Err(shape_err("initial distribution", self.initial.len(), n));
        }
        if self.initial_grad.len() != n {
            return Err(shape_err("initial gradient bounds", self.initial_grad.len(), n));
        }
        for (what, m) in [("lower matrices", &self.lower), ("upper matrices", &self.upper), ("gradient matrices", &self.target_grad)] {
            if m.len() != actions {
                return Err(shape_err(what, m.len(), actions));
            }
            for mat in m {
                if mat.len() != n {
                    return Err(shape_err(what, mat.len(), n));
                }
                if let Some(r) = mat.iter().find(|r| r.len() != n) {
                    return Err(shape_err(what, r.len(), n));
                }
            }
        }
        if self.initial.iter().any(|p| !(*p >= 0.0)) || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel("initial distribution is not a probability vector".into()));
        }
        for u in 0..actions {
            for i in 0..n {
                let (lo, hi) = (&self.lower[u][i], &self.upper[u][i]);
                if lo.iter().zip(hi).any(|(l, h)| !(0.0 <= *l && l <= h && *h <= 1.0)) {
                    return Err(Error::InfeasibleRow {
                        row: i,
                        action: Some(u),
                        lower_sum: lo.iter().sum(),
                        upper_sum: hi.iter().sum(),
                    });
                }
                self.row(u, i).check(i, Some(u))?;
            }
        }
        match (&self.cost_upper, &self.cost_lower) {
            (None, None) => {}
            (Some(up), Some(lo)) => {
                if up.len() != n || lo.len() != n {
                    return Err(shape_err("cost bounds", up.len().min(lo.len()), n));
                }
                for (a, b) in up.iter().zip(lo) {
                    if a.len() != actions || b.len() != actions {
                        return Err(shape_err("cost bounds per cell", a.len().min(b.len()), actions));
                    }
                    if a.iter().zip(b).any(|(h, l)| !(l <= h)) {
                        return Err(Error::InvalidModel("cost lower bound above upper bound".into()));
                    }
                }
            }
            _ => return Err(Error::InvalidModel("only one side of the cost bounds is present".into())),
        }
        Ok(())
    }

    fn digest(&self) -> Result<String> {
        let mut blank = self.clone();
        blank.checksum.clear();
        let bytes = serde_json::to_vec(&blank)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Serialize to JSON with the checksum filled in.
    pub fn to_json(&self) -> Result<String> {
        let mut out = self.clone();
        out.checksum = self.digest()?;
        Ok(serde_json::to_string(&out)?)
    }

    /// Parse, validate and verify the checksum (a blank checksum is accepted).
    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if !a.checksum.is_empty() && a.checksum != a.digest()? {
            return Err(Error::config("checksum", "abstraction file does not match its checksum"));
        }
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Mean interval width `upper - lower` over all entries.
    pub fn mean_width(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            for (a, b) in lo.iter().zip(hi) {
                total += b.iter().zip(a).map(|(h, l)| h - l).sum::<f64>();
                count += a.len();
            }
        }
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{estimate_sup_bounds, ClippedGaussian, Triangle, TriangularAv, UniformModel};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn av() -> TriangularAv {
        TriangularAv::new(5, 1.0, Triangle::new(0.0, 0.1, 0.2).unwrap()).unwrap()
    }

    fn gauss() -> ClippedGaussian {
        ClippedGaussian::isotropic(Hyperrect::unit(2), 0.3, vec![0.5, 0.5], 0.3, 2).unwrap()
    }

    fn build(model: &dyn KernelModel, counts: &[usize], settings: AbstractionSettings) -> IntervalAbstraction {
        let part = GridPartition::uniform(model.domain().clone(), counts).unwrap();
        IntervalAbstraction::build(model, &part, estimate_sup_bounds(model, 5, 1.1, true), &settings).unwrap()
    }

    #[test]
    fn uniform_kernel_gives_point_intervals() {
        let m = UniformModel::new(Hyperrect::unit(2), 3);
        let a = build(&m, &[2, 3], AbstractionSettings::default());
        for row in &a.lower[0] {
            for &p in row {
                assert_relative_eq!(p, 1.0 / 6.0, epsilon = 1e-15);
            }
        }
        assert_eq!(a.lower, a.upper);
        assert_relative_eq!(a.initial[4], 1.0 / 6.0);
    }

    #[test]
    fn single_cell_is_trivial() {
        let a = build(&gauss(), &[1, 1], AbstractionSettings::default());
        assert_eq!(a.initial, vec![1.0]);
        assert_eq!(a.lower[0][0], vec![1.0]);
        assert_eq!(a.upper[0][0], vec![1.0]);
    }

    #[test]
    fn initial_masses_match_quadrature() {
        let m = gauss();
        let part = GridPartition::uniform(Hyperrect::unit(2), &[2, 2]).unwrap();
        let (pi, _) = initial_distribution(&m, &part, 1e-12).unwrap();
        for (i, c) in part.cells().iter().enumerate() {
            let q = crate::quadrature::integrate(&|x| m.initial_density(x), c, 16, 1e-12).unwrap();
            assert_relative_eq!(pi[i], q, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_cell_initial_density() {
        let m = TriangularAv::new(3, 1.0, Triangle::new(0.0, 0.05, 0.1).unwrap()).unwrap();
        let part = GridPartition::uniform(Hyperrect::unit(1), &[10]).unwrap();
        let (pi, _) = initial_distribution(&m, &part, 1e-9).unwrap();
        assert_eq!(pi[0], 1.0);
        assert!(pi[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn completeness_witness() {
        for (model, counts) in [(&av() as &dyn KernelModel, vec![8]), (&gauss() as &dyn KernelModel, vec![3, 3])] {
            let a = build(model, &counts, AbstractionSettings::default());
            let part = a.partition();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for u in 0..a.action_count() {
                for i in 0..part.cell_count() {
                    let cell = part.cell(i);
                    for _ in 0..100 {
                        let x: Vec<f64> = (0..cell.dim()).map(|d| cell.lows()[d] + rng.random::<f64>() * cell.side(d)).collect();
                        for j in 0..part.cell_count() {
                            let m = model.cell_mass(&x, &part.cell(j), u, 1e-12).unwrap();
                            assert!(a.lower[u][i][j] <= m + 1e-12 && m <= a.upper[u][i][j] + 1e-12, "({u},{i},{j}) {m}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dense_scan_lies_in_bracket() {
        let m = av();
        let a = build(&m, &[10], AbstractionSettings { mesh: 5, ..Default::default() });
        let part = a.partition();
        for u in [0, 4] {
            for i in 0..10 {
                let cell = part.cell(i);
                for j in 0..10 {
                    let target = part.cell(j);
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for k in 0..1000 {
                        let x = cell.lows()[0] + cell.side(0) * k as f64 / 999.0;
                        let v = m.cell_mass(&[x], &target, u, 1e-12).unwrap();
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    assert!(a.lower[u][i][j] <= lo + 1e-12 && hi <= a.upper[u][i][j] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn widths_shrink_with_refinement() {
        for model in [&av() as &dyn KernelModel, &gauss() as &dyn KernelModel] {
            let dims = model.dim();
            let coarse = build(model, &vec![2; dims], AbstractionSettings::default());
            let fine = build(model, &vec![8; dims], AbstractionSettings::default());
            assert!(fine.mean_width() < coarse.mean_width());
        }
    }

    #[test]
    fn monotone_costs_on_corners() {
        let m = TriangularAv::new(3, 2.3, Triangle::new(0.0, 0.1, 0.2).unwrap()).unwrap();
        let part = GridPartition::uniform(Hyperrect::unit(1), &[80]).unwrap();
        let (up, lo) = abstract_costs(&m, &part, 5).unwrap().unwrap();
        assert_relative_eq!(up[79][2], -2.27125, epsilon = 1e-12);
        assert_relative_eq!(lo[79][2], -2.3, epsilon = 1e-12);
    }

    #[test]
    fn constant_costs() {
        let m = UniformModel::new(Hyperrect::unit(1), 2).with_cost(0.7);
        let part = GridPartition::uniform(Hyperrect::unit(1), &[4]).unwrap();
        let (up, lo) = abstract_costs(&m, &part, 5).unwrap().unwrap();
        assert!(up.iter().chain(&lo).all(|r| r[0] == 0.7));
        assert!(abstract_costs(&UniformModel::new(Hyperrect::unit(1), 2), &part, 5).unwrap().is_none());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = build(&av(), &[6], AbstractionSettings::default());
        let text = a.to_json().unwrap();
        let b = IntervalAbstraction::from_json(&text).unwrap();
        assert_eq!(a.lower, b.lower);
        assert_eq!(a.upper, b.upper);
        assert_eq!(a.initial, b.initial);
        assert_eq!(a.cost_upper, b.cost_upper);
        let tampered = text.replacen("\"initial\":[", "\"initial\":[0.5,", 1);
        assert!(IntervalAbstraction::from_json(&tampered).is_err());
    }

    #[test]
    fn support_hull_zeroes_distant_cells() {
        let a = build(&av(), &[20], AbstractionSettings::default());
        // from rest with no thrust the velocity stays in [0, 0.1]
        assert!(a.upper[0][0][3..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn repair_widens_only_upper() {
        let mut up = vec![0.2, 0.3, 0.1];
        assert!(repair(&mut up));
        assert!(up.iter().sum::<f64>() >= 1.0 - 1e-15);
        assert!(up[0] >= 0.2 && up[1] >= 0.3 && up[2] >= 0.1);
    }

    #[test]
    fn unsound_mode_has_no_margin() {
        let a = build(&av(), &[8], AbstractionSettings { margin: false, ..Default::default() });
        assert_eq!(a.meta.max_margin, 0.0);
    }
}
