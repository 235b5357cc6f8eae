//! Hyperrectangles, uniform grid partitions and the measure bookkeeping of
//! state space and trajectory space.
//!
//! Cells are half-open `[lo, hi)` in every dimension, except that the top face
//! of the state box is closed so every point of the box belongs to exactly one
//! cell. Cell indices are row-major: the last dimension varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box `[a_1, b_1] x ... x [a_n, b_n]` with nonzero volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Hyperrect {
    lows: Vec<f64>,
    highs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl TryFrom<RawBox> for Hyperrect {
    type Error = Error;

    fn try_from(b: RawBox) -> Result<Self> {
        Hyperrect::new(b.lows, b.highs)
    }
}

impl Hyperrect {
    pub fn new(lows: Vec<f64>, highs: Vec<f64>) -> Result<Self> {
        if lows.is_empty() {
            return Err(Error::InvalidBox("box needs at least one dimension".into()));
        }
        if lows.len() != highs.len() {
            return Err(Error::DimensionMismatch {
                what: "box upper edges",
                expected: lows.len(),
                got: highs.len(),
            });
        }
        for (j, (a, b)) in lows.iter().zip(&highs).enumerate() {
            if !(a.is_finite() && b.is_finite()) || b <= a {
                return Err(Error::InvalidBox(format!(
                    "dimension {j}: need finite lo < hi, got [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lows, highs })
    }

    /// The unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lows: vec![0.0; dim.max(1)],
            highs: vec![1.0; dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    pub fn lows(&self) -> &[f64] {
        &self.lows
    }

    pub fn highs(&self) -> &[f64] {
        &self.highs
    }

    pub fn side(&self, j: usize) -> f64 {
        self.highs[j] - self.lows[j]
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.side(j)).collect()
    }

    pub fn max_side(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j)).fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Closed containment test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lows.iter().zip(&self.highs))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Clamp a point into the box (used to absorb rounding in samplers).
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (a, b)) in x.iter_mut().zip(self.lows.iter().zip(&self.highs)) {
            *v = v.clamp(*a, *b);
        }
    }

    /// Map a point of the unit cube onto this box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, t)| self.lows[j] + t * self.side(j))
            .collect()
    }

    /// Tensor mesh with `per_dim` points per dimension, endpoints included.
    ///
    /// Returns the points and the largest mesh spacing. With a single point
    /// per dimension the mesh is the center and the spacing is the full side.
    pub fn mesh(&self, per_dim: usize) -> (Vec<Vec<f64>>, f64) {
        let per_dim = per_dim.max(1);
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|j| {
                if per_dim == 1 {
                    vec![0.5 * (self.lows[j] + self.highs[j])]
                } else {
                    (0..per_dim)
                        .map(|k| self.lows[j] + self.side(j) * k as f64 / (per_dim - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let spacing = if per_dim == 1 {
            self.max_side()
        } else {
            self.max_side() / (per_dim - 1) as f64
        };
        (tensor_points(&axes), spacing)
    }
}

/// All points of the tensor product of per-dimension coordinate lists.
pub(crate) fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// A tensor-product grid of `counts[j]` equal subdivisions per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    domain: Hyperrect,
    counts: Vec<usize>,
    strides: Vec<usize>,
    edges: Vec<Vec<f64>>,
}

/// Uniformly subdivide each dimension of `domain` into `counts[j]` cells.
pub fn build_uniform_grid(domain: Hyperrect, counts: &[usize]) -> Result<GridPartition> {
    GridPartition::uniform(domain, counts)
}

impl GridPartition {
    pub fn uniform(domain: Hyperrect, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                what: "partition counts",
                expected: domain.dim(),
                got: counts.len(),
            });
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidBox(format!(
                "partition count for dimension {j} must be at least 1"
            )));
        }
        let mut strides = vec![1usize; counts.len()];
        for j in (0..counts.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1]
                .checked_mul(counts[j + 1])
                .ok_or_else(|| Error::Guard("cell count overflows usize".into()))?;
        }
        strides[0]
            .checked_mul(counts[0])
            .ok_or_else(|| Error::Guard("cell count overflows usize".into()))?;
        let edges = counts
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                let (a, b) = (domain.lows[j], domain.highs[j]);
                (0..=n)
                    .map(|k| {
                        if k == n {
                            b
                        } else {
                            a + (b - a) * k as f64 / n as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            domain,
            counts: counts.to_vec(),
            strides,
            edges,
        })
    }

    pub fn domain(&self) -> &Hyperrect {
        &self.domain
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// `|X|`.
    pub fn cell_count(&self) -> usize {
        self.strides[0] * self.counts[0]
    }

    /// Per-dimension indices of cell `i`.
    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.counts)
            .map(|(s, n)| (i / s) % n)
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn cell(&self, i: usize) -> Hyperrect {
        let idx = self.multi_index(i);
        let lows = idx.iter().enumerate().map(|(j, &k)| self.edges[j][k]).collect();
        let highs = idx
            .iter()
            .enumerate()
            .map(|(j, &k)| self.edges[j][k + 1])
            .collect();
        Hyperrect { lows, highs }
    }

    pub fn cells(&self) -> Vec<Hyperrect> {
        (0..self.cell_count()).map(|i| self.cell(i)).collect()
    }

    pub fn cell_volume(&self, i: usize) -> f64 {
        self.cell(i).volume()
    }

    pub fn cell_volumes(&self) -> Vec<f64> {
        (0..self.cell_count()).map(|i| self.cell_volume(i)).collect()
    }

    pub fn cell_center(&self, i: usize) -> Vec<f64> {
        self.cell(i).center()
    }

    /// Largest cell side length over all cells and dimensions.
    pub fn max_side(&self) -> f64 {
        self.edges
            .iter()
            .flat_map(|e| e.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    /// Index of the cell containing `x` (half-open cells, closed top face).
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutsideBox { point: x.to_vec() });
        }
        let mut flat = 0;
        for (j, &v) in x.iter().enumerate() {
            let n = self.counts[j];
            let edges = &self.edges[j];
            let (a, b) = (edges[0], edges[n]);
            let mut k = (((v - a) / (b - a)) * n as f64).floor() as isize;
            k = k.clamp(0, n as isize - 1);
            let mut k = k as usize;
            // reconcile with the stored edges so cell boxes and cell_of agree
            while k > 0 && v < edges[k] {
                k -= 1;
            }
            while k + 1 < n && v >= edges[k + 1] {
                k += 1;
            }
            flat += k * self.strides[j];
        }
        Ok(flat)
    }

    /// Measures of the induced trajectory-space partition for horizon `horizon`.
    pub fn trajectory_measures(&self, horizon: usize) -> Result<TrajectoryMeasures> {
        trajectory_space_measures(self, horizon)
    }
}

/// Trajectory-space quantities induced by a state partition and a horizon.
///
/// `|S|` is carried as a natural logarithm; the integer value is present only
/// when it fits in a `u128`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeasures {
    pub horizon: usize,
    /// Trajectory dimension `(K + 1) n_x`.
    pub dim: usize,
    /// `ln |S|`.
    pub ln_cells: f64,
    /// `|S|` when representable.
    pub cells: Option<u128>,
    /// `ln λ(S)`.
    pub ln_volume: f64,
    /// Largest side of any trajectory cell (equals the state-cell maximum).
    pub max_side: f64,
}

pub fn trajectory_space_measures(
    partition: &GridPartition,
    horizon: usize,
) -> Result<TrajectoryMeasures> {
    if horizon == 0 {
        return Err(Error::Guard("trajectory measures need horizon K >= 1".into()));
    }
    let steps = horizon + 1;
    let n_cells = partition.cell_count() as u128;
    let cells = u32::try_from(steps)
        .ok()
        .and_then(|e| n_cells.checked_pow(e));
    Ok(TrajectoryMeasures {
        horizon,
        dim: steps * partition.dim(),
        ln_cells: steps as f64 * (partition.cell_count() as f64).ln(),
        cells,
        ln_volume: steps as f64 * partition.domain().volume().ln(),
        max_side: partition.max_side(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square(n: usize) -> GridPartition {
        build_uniform_grid(Hyperrect::unit(2), &[n, n]).unwrap()
    }

    #[test]
    fn unit_square_two_by_two() {
        let g = unit_square(2);
        assert_eq!(g.cell_count(), 4);
        for v in g.cell_volumes() {
            assert_relative_eq!(v, 0.25, epsilon = 1e-15);
        }
        assert_eq!(g.max_side(), 0.5);
    }

    #[test]
    fn eighty_cells_on_unit_interval() {
        let g = build_uniform_grid(Hyperrect::unit(1), &[80]).unwrap();
        assert_eq!(g.cell_count(), 80);
        for i in 0..80 {
            assert_relative_eq!(g.cell(i).side(0), 0.0125, epsilon = 1e-15);
        }
    }

    #[test]
    fn rectangular_box_split() {
        let b = Hyperrect::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        let g = build_uniform_grid(b, &[4, 2]).unwrap();
        assert_eq!(g.cell_count(), 8);
        assert_eq!(g.max_side(), 0.5);
    }

    #[test]
    fn counts_dimension_mismatch() {
        let err = build_uniform_grid(Hyperrect::unit(2), &[3]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Hyperrect::new(vec![0.0], vec![0.0]).is_err());
        assert!(Hyperrect::new(vec![], vec![]).is_err());
        assert!(Hyperrect::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn cell_of_conventions() {
        let g = unit_square(2);
        assert_eq!(g.cell_of(&[0.1, 0.1]).unwrap(), 0);
        // interior edge goes to the upper cell
        assert_eq!(g.cell_of(&[0.5, 0.1]).unwrap(), 2);
        assert_eq!(g.cell_of(&[0.1, 0.5]).unwrap(), 1);
        // closed top face
        assert_eq!(g.cell_of(&[1.0, 1.0]).unwrap(), 3);
        assert!(matches!(
            g.cell_of(&[1.2, 0.0]),
            Err(Error::OutsideBox { .. })
        ));
    }

    #[test]
    fn cell_of_inverts_centers_and_volumes_tile() {
        let b = Hyperrect::new(vec![-1.0, 0.3, 2.0], vec![0.7, 1.1, 2.9]).unwrap();
        let g = build_uniform_grid(b.clone(), &[7, 3, 5]).unwrap();
        for i in 0..g.cell_count() {
            assert_eq!(g.cell_of(&g.cell_center(i)).unwrap(), i);
        }
        let total: f64 = g.cell_volumes().iter().sum();
        assert_relative_eq!(total, b.volume(), max_relative = 1e-12);
    }

    #[test]
    fn cell_of_agrees_with_stored_edges() {
        let g = build_uniform_grid(Hyperrect::unit(1), &[10]).unwrap();
        for k in 0..10 {
            let lo = g.cell(k).lows()[0];
            assert_eq!(g.cell_of(&[lo]).unwrap(), k);
        }
    }

    #[test]
    fn trajectory_measures_small_and_large() {
        let g = unit_square(2);
        let m = g.trajectory_measures(4).unwrap();
        assert_eq!(m.cells, Some(1024));
        assert_eq!(m.dim, 10);
        assert_relative_eq!(m.ln_volume, 0.0);

        let g = build_uniform_grid(Hyperrect::unit(1), &[80]).unwrap();
        let m = g.trajectory_measures(20).unwrap();
        assert_eq!(m.cells, None);
        assert_relative_eq!(m.ln_cells, 21.0 * 80f64.ln(), max_relative = 1e-14);
        assert!(g.trajectory_measures(0).is_err());
    }

    #[test]
    fn mesh_includes_corners() {
        let c = Hyperrect::new(vec![0.0, 1.0], vec![0.5, 2.0]).unwrap();
        let (pts, h) = c.mesh(5);
        assert_eq!(pts.len(), 25);
        assert_relative_eq!(h, 0.25);
        assert!(pts.contains(&vec![0.0, 1.0]));
        assert!(pts.contains(&vec![0.5, 2.0]));
    }
}
