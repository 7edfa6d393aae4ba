//! Uniform box grids and the interior windows on which diagnostics are read.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 2;

/// Minimum number of nodes per axis.
pub const MIN_NODES: usize = 8;

/// A uniform tensor grid on the box `[lo, hi]` in one or two dimensions.
///
/// Nodes are stored in row-major order: the last axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim > MAX_DIM {
            return input(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if hi.len() != dim || n.len() != dim {
            return input("grid lo, hi and n must have the same length");
        }
        for axis in 0..dim {
            if !(lo[axis].is_finite() && hi[axis].is_finite()) {
                return input(format!("grid bounds on axis {axis} must be finite"));
            }
            if lo[axis] >= hi[axis] {
                return input(format!(
                    "grid axis {axis}: lo ({}) must be below hi ({})",
                    lo[axis], hi[axis]
                ));
            }
            if n[axis] < MIN_NODES {
                return input(format!(
                    "grid axis {axis}: need at least {MIN_NODES} nodes, got {}",
                    n[axis]
                ));
            }
        }
        let spacing = (0..dim)
            .map(|a| (hi[a] - lo[a]) / (n[a] - 1) as f64)
            .collect();
        Ok(Grid { lo, hi, n, spacing })
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![lo], vec![hi], vec![n])
    }

    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(vec![lo, lo], vec![hi, hi], vec![n, n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Coordinate of node `i` along `axis`; the last node is exactly `hi`.
    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing[axis]
        }
    }

    /// Multi-index of a flat node index.
    #[inline]
    pub fn unravel(&self, flat: usize) -> [usize; MAX_DIM] {
        match self.dim() {
            1 => [flat, 0],
            _ => [flat / self.n[1], flat % self.n[1]],
        }
    }

    #[inline]
    pub fn flat(&self, idx: [usize; MAX_DIM]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.n[1] + idx[1],
        }
    }

    /// Coordinates of a node; unused trailing entries are zero.
    #[inline]
    pub fn node(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.unravel(flat);
        let mut p = [0.0; MAX_DIM];
        for (axis, slot) in p.iter_mut().enumerate().take(self.dim()) {
            *slot = self.coord(axis, idx[axis]);
        }
        p
    }

    /// Cell index and fractional offset of `x` along `axis`, clamped to the box.
    ///
    /// A coordinate that hits a node exactly returns a zero fraction.
    #[inline]
    pub(crate) fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let n = self.n[axis];
        if x <= self.lo[axis] {
            return (0, 0.0);
        }
        if x >= self.hi[axis] {
            return (n - 2, 1.0);
        }
        let t = (x - self.lo[axis]) / self.spacing[axis];
        let nearest = t.round();
        if nearest >= 0.0 && (nearest as usize) < n {
            let i = nearest as usize;
            if self.coord(axis, i) == x {
                return if i == n - 1 { (n - 2, 1.0) } else { (i, 0.0) };
            }
        }
        let i = (t.floor() as usize).min(n - 2);
        let frac = (t - i as f64).clamp(0.0, 1.0);
        (i, frac)
    }

    /// Grid with the same box and twice the resolution; old nodes stay nodes.
    pub fn refined(&self) -> Grid {
        let n = self.n.iter().map(|&k| 2 * (k - 1) + 1).collect();
        Grid::new(self.lo.clone(), self.hi.clone(), n).expect("refinement keeps invariants")
    }
}

/// Interior sub-box on which convergence diagnostics are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactWindow {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CompactWindow {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        CompactWindow { lo, hi }
    }

    /// Symmetric window `[-half, half]^dim`.
    pub fn centered(dim: usize, half: f64) -> Self {
        CompactWindow {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    /// Checks that the window sits inside the grid box with a margin of at
    /// least 10% of the box width on every side.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.lo.len() != grid.dim() || self.hi.len() != grid.dim() {
            return input("window dimension does not match the grid");
        }
        for a in 0..grid.dim() {
            let margin = 0.1 * (grid.hi(a) - grid.lo(a));
            if !(self.lo[a] < self.hi[a]) {
                return input(format!("window axis {a}: lo must be below hi"));
            }
            if self.lo[a] < grid.lo(a) + margin - 1e-12 || self.hi[a] > grid.hi(a) - margin + 1e-12
            {
                return input(format!(
                    "window axis {a} [{}, {}] is not inside the grid box [{}, {}] with a 10% margin",
                    self.lo[a],
                    self.hi[a],
                    grid.lo(a),
                    grid.hi(a)
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((lo, hi), v)| *v >= *lo && *v <= *hi)
    }

    /// Flat indices of the grid nodes inside the window.
    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&k| self.contains(&grid.node(k)[..grid.dim()]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_coordinates_hit_the_bounds() {
        let g = Grid::line(-8.0, 8.0, 513).unwrap();
        assert_eq!(g.coord(0, 0), -8.0);
        assert_eq!(g.coord(0, 512), 8.0);
        assert_eq!(g.spacing(0), 16.0 / 512.0);
        assert_eq!(g.coord(0, 256), 0.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::line(1.0, 1.0, 16).is_err());
        assert!(Grid::line(0.0, 1.0, 7).is_err());
        assert!(Grid::new(vec![0.0; 3], vec![1.0; 3], vec![8; 3]).is_err());
        assert!(Grid::line(f64::NAN, 1.0, 16).is_err());
    }

    #[test]
    fn flat_index_round_trips() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![9, 12]).unwrap();
        for k in 0..g.len() {
            assert_eq!(g.flat(g.unravel(k)), k);
        }
        assert_eq!(g.node(g.flat([3, 5])), [g.coord(0, 3), g.coord(1, 5)]);
    }

    #[test]
    fn locate_is_exact_on_nodes_and_clamps_outside() {
        let g = Grid::line(-std::f64::consts::PI, std::f64::consts::PI, 101).unwrap();
        for i in 0..101 {
            let (j, frac) = g.locate(0, g.coord(0, i));
            if i == 100 {
                assert_eq!((j, frac), (99, 1.0));
            } else {
                assert_eq!((j, frac), (i, 0.0));
            }
        }
        assert_eq!(g.locate(0, -10.0), (0, 0.0));
        assert_eq!(g.locate(0, 10.0), (99, 1.0));
    }

    #[test]
    fn refined_grid_nests_nodes() {
        let g = Grid::line(-8.0, 8.0, 17).unwrap();
        let r = g.refined();
        assert_eq!(r.n(0), 33);
        for i in 0..17 {
            assert_eq!(r.coord(0, 2 * i), g.coord(0, i));
        }
    }

    #[test]
    fn window_margin_is_enforced() {
        let g = Grid::line(-8.0, 8.0, 65).unwrap();
        assert!(CompactWindow::centered(1, 4.0).validate(&g).is_ok());
        assert!(CompactWindow::centered(1, 6.4).validate(&g).is_ok());
        assert!(CompactWindow::centered(1, 7.0).validate(&g).is_err());
        assert!(CompactWindow::centered(2, 4.0).validate(&g).is_err());
        let w = CompactWindow::centered(1, 4.0);
        assert_eq!(w.nodes(&g).len(), 33);
    }
}
