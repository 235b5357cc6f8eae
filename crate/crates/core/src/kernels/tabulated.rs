use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::uniform_point;
use super::{CostShape, KernelModel, SimRng};
use crate::error::{Error, Result};
use crate::geometry::{tensor_points, Hyperrect};

/// User-supplied density tables on a regular node grid.
///
/// Node values are interpolated multilinearly in both the source and the
/// target state. Tables are flattened row-major (last dimension fastest);
/// `transition[u]` holds `q^u(x_node, y_node)` with the source node outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedSpec {
    pub domain: Hyperrect,
    /// Nodes per dimension, endpoints included (at least 2).
    pub nodes: Vec<usize>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    #[serde(default)]
    pub actions: Option<Vec<f64>>,
    /// Stage cost per action at the source nodes.
    #[serde(default)]
    pub cost: Option<Vec<Vec<f64>>>,
    /// Density bound; must not understate the table.
    #[serde(default)]
    pub lq: Option<f64>,
    /// Gradient bound; must not understate the table.
    #[serde(default)]
    pub lgrad: Option<f64>,
    /// Rescale every table to unit mass instead of rejecting drift.
    #[serde(default)]
    pub normalize: bool,
}

const MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
struct NodeGrid {
    domain: Hyperrect,
    nodes: Vec<usize>,
    axes: Vec<Vec<f64>>,
    strides: Vec<usize>,
    count: usize,
}

impl NodeGrid {
    fn new(domain: Hyperrect, nodes: Vec<usize>) -> Result<Self> {
        if nodes.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                what: "table node counts",
                expected: domain.dim(),
                got: nodes.len(),
            });
        }
        if nodes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidModel("tables need at least 2 nodes per dimension".into()));
        }
        let axes: Vec<Vec<f64>> = (0..domain.dim())
            .map(|d| {
                let n = nodes[d];
                (0..n)
                    .map(|k| domain.lows()[d] + domain.side(d) * k as f64 / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let mut strides = vec![1; nodes.len()];
        for d in (0..nodes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * nodes[d + 1];
        }
        let count = nodes.iter().product();
        Ok(Self {
            domain,
            nodes,
            axes,
            strides,
            count,
        })
    }

    fn spacing(&self, d: usize) -> f64 {
        self.domain.side(d) / (self.nodes[d] - 1) as f64
    }

    /// Interpolation weights of `x`: `(node, weight)` over the corners of its grid cell.
    fn locate(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0)];
        for d in 0..self.nodes.len() {
            let s = ((x[d] - self.domain.lows()[d]) / self.spacing(d)).max(0.0);
            let i = (s.floor() as usize).min(self.nodes[d] - 2);
            let f = (s - i as f64).clamp(0.0, 1.0);
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(n, w) in &out {
                if 1.0 - f > 0.0 {
                    next.push((n + i * self.strides[d], w * (1.0 - f)));
                }
                if f > 0.0 {
                    next.push((n + (i + 1) * self.strides[d], w * f));
                }
            }
            out = next;
        }
        out
    }

    /// Integrals of the node basis functions over `cell`, nonzero ones only.
    fn basis_integrals(&self, cell: &Hyperrect) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0)];
        for d in 0..self.nodes.len() {
            let t = &self.axes[d];
            let (a, b) = (cell.lows()[d], cell.highs()[d]);
            let mut next = Vec::new();
            for k in 0..t.len() {
                let h = hat_integral(t, k, a, b);
                if h > 0.0 {
                    for &(n, w) in &out {
                        next.push((n + k * self.strides[d], w * h));
                    }
                }
            }
            out = next;
        }
        out
    }

    fn interpolate(&self, table: &[f64], x: &[f64]) -> f64 {
        self.locate(x).iter().map(|&(n, w)| w * table[n]).sum()
    }

    fn integral(&self, table: &[f64], cell: &Hyperrect) -> f64 {
        self.basis_integrals(cell).iter().map(|&(n, w)| w * table[n]).sum()
    }

    /// Exact sup-norm of the interpolant's gradient: the steepest edge.
    /// Tables holding several grids back to back (one per source node) are scanned grid by grid.
    fn slope(&self, table: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        for rep in 0..table.len() / self.count {
            let base = rep * self.count;
            for n in 0..self.count {
                for d in 0..self.nodes.len() {
                    let k = n / self.strides[d] % self.nodes[d];
                    if k + 1 < self.nodes[d] {
                        let diff = table[base + n + self.strides[d]] - table[base + n];
                        best = best.max(diff.abs() / self.spacing(d));
                    }
                }
            }
        }
        best
    }

    fn cells(&self) -> Vec<Hyperrect> {
        let axes: Vec<Vec<f64>> = self.nodes.iter().map(|&n| (0..n - 1).map(|k| k as f64).collect()).collect();
        tensor_points(&axes)
            .into_iter()
            .map(|idx| {
                let lo: Vec<f64> = idx.iter().enumerate().map(|(d, &k)| self.axes[d][k as usize]).collect();
                let hi: Vec<f64> = idx.iter().enumerate().map(|(d, &k)| self.axes[d][k as usize + 1]).collect();
                Hyperrect::new(lo, hi).expect("grid cell")
            })
            .collect()
    }
}

fn hat_integral(t: &[f64], k: usize, a: f64, b: f64) -> f64 {
    let mut s = 0.0;
    if k > 0 {
        let (l, r) = (t[k - 1], t[k]);
        let (lo, hi) = (a.max(l), b.min(r));
        if hi > lo {
            s += ((hi - l).powi(2) - (lo - l).powi(2)) / (2.0 * (r - l));
        }
    }
    if k + 1 < t.len() {
        let (l, r) = (t[k], t[k + 1]);
        let (lo, hi) = (a.max(l), b.min(r));
        if hi > lo {
            s += ((r - lo).powi(2) - (r - hi).powi(2)) / (2.0 * (r - l));
        }
    }
    s
}

/// Sampler for one multilinear density: cell masses plus rejection inside a cell.
#[derive(Debug, Clone)]
struct TableSampler {
    cdf: Vec<f64>,
    peaks: Vec<f64>,
}

/// Model defined by [`TabulatedSpec`] tables.
#[derive(Debug, Clone)]
pub struct TabulatedModel {
    grid: NodeGrid,
    horizon: usize,
    actions: Vec<f64>,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    cost: Option<Vec<Vec<f64>>>,
    cost_slope: f64,
    lq: f64,
    lgrad: f64,
    cells: Vec<Hyperrect>,
    initial_sampler: TableSampler,
    samplers: Vec<Vec<TableSampler>>,
}

impl TabulatedModel {
    pub fn new(spec: TabulatedSpec) -> Result<Self> {
        let grid = NodeGrid::new(spec.domain.clone(), spec.nodes.clone())?;
        let n = grid.count;
        let actions = spec.actions.clone().unwrap_or_else(|| (0..spec.transition.len()).map(|u| u as f64).collect());
        if spec.transition.is_empty() || actions.len() != spec.transition.len() {
            return Err(Error::InvalidModel(format!(
                "{} transition tables for {} actions",
                spec.transition.len(),
                actions.len()
            )));
        }
        let check_len = |what: &'static str, v: &[f64], expected: usize| -> Result<()> {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidModel(format!("{what} has negative or non-finite entries")));
            }
            Ok(())
        };
        let whole = spec.domain.clone();
        let normalize = |what: String, v: &mut [f64]| -> Result<()> {
            let z = grid.integral(v, &whole);
            if (z - 1.0).abs() > MASS_TOL && (!spec.normalize || z <= 0.0) {
                return Err(Error::InvalidModel(format!("{what} integrates to {z}, not 1")));
            }
            v.iter_mut().for_each(|x| *x /= z);
            Ok(())
        };

        let mut initial = spec.initial.clone();
        check_len("initial table", &initial, n)?;
        normalize("initial density".into(), &mut initial)?;
        let mut transition = spec.transition.clone();
        for (u, t) in transition.iter_mut().enumerate() {
            check_len("transition table", t, n * n)?;
            for (i, row) in t.chunks_mut(n).enumerate() {
                normalize(format!("transition row {i} of action {u}"), row)?;
            }
        }

        let cost = match &spec.cost {
            Some(c) => {
                if c.len() != actions.len() {
                    return Err(Error::InvalidModel("one cost table per action is required".into()));
                }
                for t in c {
                    if t.len() != n || t.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidModel("cost tables must hold one finite value per node".into()));
                    }
                }
                Some(c.clone())
            }
            None => None,
        };
        let cost_slope = cost.as_ref().map_or(0.0, |c| c.iter().map(|t| grid.slope(t)).fold(0.0, f64::max));

        let table_max = transition.iter().flatten().chain(&initial).copied().fold(0.0, f64::max);
        let table_grad = source_slope(&grid, &transition)
            .max(transition.iter().map(|t| grid.slope(t)).fold(0.0, f64::max))
            .max(grid.slope(&initial));
        let lq = resolve_bound("lq", spec.lq, table_max)?;
        let lgrad = resolve_bound("lgrad", spec.lgrad, table_grad)?;

        let cells = grid.cells();
        let initial_sampler = sampler(&grid, &cells, &initial);
        let samplers = transition
            .iter()
            .map(|t| t.chunks(n).map(|row| sampler(&grid, &cells, row)).collect())
            .collect();
        Ok(Self {
            grid,
            horizon: spec.horizon,
            actions,
            initial,
            transition,
            cost,
            cost_slope,
            lq,
            lgrad,
            cells,
            initial_sampler,
            samplers,
        })
    }

    fn row(&self, action: usize, node: usize) -> &[f64] {
        let n = self.grid.count;
        &self.transition[action][node * n..(node + 1) * n]
    }

    fn draw(&self, s: &TableSampler, row: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let u: f64 = rng.random();
        let c = s.cdf.partition_point(|&m| m <= u * s.cdf[s.cdf.len() - 1]).min(self.cells.len() - 1);
        let cell = &self.cells[c];
        loop {
            let y = uniform_point(cell, rng);
            if rng.random::<f64>() * s.peaks[c] <= self.grid.interpolate(row, &y) {
                return y;
            }
        }
    }
}

fn resolve_bound(name: &str, user: Option<f64>, table: f64) -> Result<f64> {
    match user {
        Some(v) if v < table * (1.0 - 1e-12) => Err(Error::InvalidModel(format!(
            "supplied {name} = {v} understates the table value {table}"
        ))),
        Some(v) => Ok(v),
        None => Ok(table),
    }
}

/// Steepest change between neighbouring source nodes, for every target node.
fn source_slope(grid: &NodeGrid, transition: &[Vec<f64>]) -> f64 {
    let n = grid.count;
    let mut best: f64 = 0.0;
    for t in transition {
        for i in 0..n {
            for d in 0..grid.nodes.len() {
                let k = i / grid.strides[d] % grid.nodes[d];
                if k + 1 < grid.nodes[d] {
                    let a = &t[i * n..(i + 1) * n];
                    let b = &t[(i + grid.strides[d]) * n..(i + grid.strides[d] + 1) * n];
                    for j in 0..n {
                        best = best.max((b[j] - a[j]).abs() / grid.spacing(d));
                    }
                }
            }
        }
    }
    best
}

fn sampler(grid: &NodeGrid, cells: &[Hyperrect], table: &[f64]) -> TableSampler {
    let mut acc = 0.0;
    let mut cdf = Vec::with_capacity(cells.len());
    let mut peaks = Vec::with_capacity(cells.len());
    for c in cells {
        acc += grid.integral(table, c);
        cdf.push(acc);
        let corner_max = grid.basis_integrals(c).iter().map(|&(n, _)| table[n]).fold(0.0, f64::max);
        peaks.push(corner_max);
    }
    TableSampler { cdf, peaks }
}

impl KernelModel for TabulatedModel {
    fn name(&self) -> &str {
        "tabulated"
    }

    fn domain(&self) -> &Hyperrect {
        &self.grid.domain
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_labels(&self) -> Vec<f64> {
        self.actions.clone()
    }

    fn initial_density(&self, x: &[f64]) -> f64 {
        if !self.grid.domain.contains(x) {
            return 0.0;
        }
        self.grid.interpolate(&self.initial, x)
    }

    fn transition_density(&self, x: &[f64], y: &[f64], action: usize) -> f64 {
        if !self.grid.domain.contains(y) {
            return 0.0;
        }
        let ys = self.grid.locate(y);
        self.grid
            .locate(x)
            .iter()
            .map(|&(i, wx)| {
                let row = self.row(action, i);
                wx * ys.iter().map(|&(j, wy)| wy * row[j]).sum::<f64>()
            })
            .sum()
    }

    fn initial_mass(&self, cell: &Hyperrect, _tol: f64) -> Result<f64> {
        Ok(self.grid.integral(&self.initial, cell))
    }

    fn cell_mass(&self, x: &[f64], cell: &Hyperrect, action: usize, _tol: f64) -> Result<f64> {
        let basis = self.grid.basis_integrals(cell);
        Ok(self
            .grid
            .locate(x)
            .iter()
            .map(|&(i, wx)| {
                let row = self.row(action, i);
                wx * basis.iter().map(|&(j, h)| h * row[j]).sum::<f64>()
            })
            .sum())
    }

    fn exact_masses(&self) -> bool {
        true
    }

    fn sample_initial(&self, rng: &mut SimRng) -> Vec<f64> {
        self.draw(&self.initial_sampler, &self.initial, rng)
    }

    fn sample_step(&self, x: &[f64], action: usize, rng: &mut SimRng) -> Vec<f64> {
        // q(x, .) mixes the node rows with the interpolation weights
        let corners = self.grid.locate(x);
        let mut u: f64 = rng.random();
        let mut node = corners[corners.len() - 1].0;
        for &(i, w) in &corners {
            if u < w {
                node = i;
                break;
            }
            u -= w;
        }
        self.draw(&self.samplers[action][node], self.row(action, node), rng)
    }

    fn cost_shape(&self) -> CostShape {
        match self.cost {
            Some(_) => CostShape::Lipschitz(self.cost_slope),
            None => CostShape::Absent,
        }
    }

    fn stage_cost(&self, x: &[f64], action: usize) -> Option<f64> {
        self.cost.as_ref().map(|c| self.grid.interpolate(&c[action], x))
    }

    fn analytic_bounds(&self) -> Option<(f64, f64)> {
        Some((self.lq, self.lgrad))
    }
}
