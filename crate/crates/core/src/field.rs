//! Grid-sampled bounded functions: interpolation, norms, finite differences
//! and the `x[,y],value` CSV format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{input, Error, Result};
use crate::grid::{CompactWindow, Grid, MAX_DIM};

/// A bounded function sampled on the nodes of a [`Grid`].
///
/// Off-grid evaluation is multilinear interpolation; outside the box the
/// nearest boundary value is used (clamp extension).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return input(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite field value at node {k}")));
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let values = (0..grid.len()).map(|k| f(&grid.node(k)[..dim])).collect();
        ScalarField::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self> {
        ScalarField::new(grid.clone(), vec![c; grid.len()])
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Evaluates the field at `x` (length = grid dimension).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.grid.dim() {
            return input(format!(
                "point has {} coordinates, grid has dimension {}",
                x.len(),
                self.grid.dim()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("evaluation point must be finite");
        }
        Ok(self.interp(x))
    }

    /// Multilinear interpolation without argument checks.
    #[inline]
    pub fn interp(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let v = &self.values;
        match g.dim() {
            1 => {
                let (i, s) = g.locate(0, x[0]);
                if s == 0.0 {
                    v[i]
                } else if s == 1.0 {
                    v[i + 1]
                } else {
                    (1.0 - s) * v[i] + s * v[i + 1]
                }
            }
            _ => {
                let (i, s) = g.locate(0, x[0]);
                let (j, r) = g.locate(1, x[1]);
                let n1 = g.n(1);
                let v00 = v[i * n1 + j];
                let v01 = v[i * n1 + j + 1];
                let v10 = v[(i + 1) * n1 + j];
                let v11 = v[(i + 1) * n1 + j + 1];
                if s == 0.0 && r == 0.0 {
                    return v00;
                }
                (1.0 - s) * ((1.0 - r) * v00 + r * v01) + s * ((1.0 - r) * v10 + r * v11)
            }
        }
    }

    /// Fast path for one-dimensional grids.
    #[inline]
    pub(crate) fn interp1(&self, x: f64) -> f64 {
        let (i, s) = self.grid.locate(0, x);
        let v = &self.values;
        if s == 0.0 {
            v[i]
        } else if s == 1.0 {
            v[i + 1]
        } else {
            (1.0 - s) * v[i] + s * v[i + 1]
        }
    }

    /// `max |f|` over all nodes, or over the nodes inside `window`.
    pub fn sup_norm(&self, window: Option<&CompactWindow>) -> Result<f64> {
        let mask = self.window_nodes(window)?;
        Ok(match mask {
            None => self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            Some(nodes) => nodes
                .iter()
                .fold(0.0, |m: f64, &k| m.max(self.values[k].abs())),
        })
    }

    /// `max |f - g|`, optionally restricted to a window.
    pub fn sup_distance(&self, other: &ScalarField, window: Option<&CompactWindow>) -> Result<f64> {
        self.zip_with(other, |a, b| a - b)?.sup_norm(window)
    }

    /// `max (f - g)` (signed), optionally restricted to a window.
    pub fn max_excess(&self, other: &ScalarField, window: Option<&CompactWindow>) -> Result<f64> {
        let d = self.zip_with(other, |a, b| a - b)?;
        let nodes = d
            .window_nodes(window)?
            .unwrap_or_else(|| (0..d.values.len()).collect());
        Ok(nodes
            .iter()
            .map(|&k| d.values[k])
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn window_nodes(&self, window: Option<&CompactWindow>) -> Result<Option<Vec<usize>>> {
        match window {
            None => Ok(None),
            Some(w) => {
                w.validate(&self.grid)?;
                Ok(Some(w.nodes(&self.grid)))
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField> {
        ScalarField::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Node-wise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return input("fields live on different grids");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ScalarField::new(self.grid.clone(), values)
    }

    /// Finite-difference gradient: central in the interior, second-order
    /// one-sided at the boundary.
    pub fn gradient_fd(&self) -> Vec<ScalarField> {
        let g = &self.grid;
        (0..g.dim())
            .map(|axis| {
                let h = g.spacing(axis);
                let n = g.n(axis);
                let values = (0..g.len())
                    .map(|k| {
                        let idx = g.unravel(k);
                        let at = |i: usize| {
                            let mut j = idx;
                            j[axis] = i;
                            self.values[g.flat(j)]
                        };
                        let i = idx[axis];
                        if i == 0 {
                            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                        } else if i == n - 1 {
                            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                        } else {
                            (at(i + 1) - at(i - 1)) / (2.0 * h)
                        }
                    })
                    .collect();
                ScalarField::from_parts_unchecked(g.clone(), values)
            })
            .collect()
    }

    /// Euclidean norm of [`gradient_fd`](Self::gradient_fd) at every node.
    pub fn gradient_norm(&self) -> ScalarField {
        let grads = self.gradient_fd();
        let values = (0..self.grid.len())
            .map(|k| grads.iter().map(|g| g.values[k].powi(2)).sum::<f64>().sqrt())
            .collect();
        ScalarField::from_parts_unchecked(self.grid.clone(), values)
    }

    /// Largest axis-wise slope between adjacent nodes. A lower bound on the
    /// Lipschitz constant of the interpolant's underlying function.
    pub fn lipschitz_estimate(&self) -> f64 {
        let g = &self.grid;
        let mut best: f64 = 0.0;
        for k in 0..g.len() {
            let idx = g.unravel(k);
            for axis in 0..g.dim() {
                if idx[axis] + 1 < g.n(axis) {
                    let mut j = idx;
                    j[axis] += 1;
                    let slope = (self.values[g.flat(j)] - self.values[k]).abs() / g.spacing(axis);
                    best = best.max(slope);
                }
            }
        }
        best
    }

    /// Serializes as CSV with header `x,value` or `x,y,value`.
    pub fn to_csv(&self) -> String {
        let dim = self.grid.dim();
        let mut out = String::new();
        out.push_str(if dim == 1 { "x,value\n" } else { "x,y,value\n" });
        for (k, v) in self.values.iter().enumerate() {
            let p = self.grid.node(k);
            for c in &p[..dim] {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv). The grid is
    /// reconstructed from the node coordinates, which must form a uniform
    /// tensor grid in row-major order.
    pub fn from_csv(text: &str) -> Result<ScalarField> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty field CSV".into()))?;
        let dim = match header.trim() {
            "x,value" => 1,
            "x,y,value" => 2,
            other => return Err(Error::Parse(format!("unexpected field CSV header `{other}`"))),
        };
        let mut coords: Vec<[f64; MAX_DIM]> = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 1 {
                return Err(Error::Parse(format!("row {}: expected {} columns", row + 2, dim + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", row + 2)))
            };
            let mut p = [0.0; MAX_DIM];
            for a in 0..dim {
                p[a] = parse(cells[a])?;
            }
            coords.push(p);
            values.push(parse(cells[dim])?);
        }
        if coords.is_empty() {
            return Err(Error::Parse("field CSV has no rows".into()));
        }
        let (lo, hi, n) = match dim {
            1 => (
                vec![coords[0][0]],
                vec![coords[coords.len() - 1][0]],
                vec![coords.len()],
            ),
            _ => {
                let n1 = coords.iter().take_while(|p| p[0] == coords[0][0]).count();
                if n1 == 0 || !coords.len().is_multiple_of(n1) {
                    return Err(Error::Parse("2-d field CSV is not a full tensor grid".into()));
                }
                let last = coords[coords.len() - 1];
                (
                    vec![coords[0][0], coords[0][1]],
                    vec![last[0], last[1]],
                    vec![coords.len() / n1, n1],
                )
            }
        };
        let grid = Grid::new(lo, hi, n)?;
        for (k, p) in coords.iter().enumerate() {
            let q = grid.node(k);
            for a in 0..dim {
                let tol = 1e-9 * grid.spacing(a);
                if (p[a] - q[a]).abs() > tol {
                    return Err(Error::Parse(format!(
                        "row {}: coordinate {} does not match a uniform grid",
                        k + 2,
                        p[a]
                    )));
                }
            }
        }
        ScalarField::new(grid, values)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<ScalarField> {
        ScalarField::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sin_field(n: usize) -> ScalarField {
        let g = Grid::line(-PI, PI, n).unwrap();
        ScalarField::from_fn(&g, |x| x[0].sin()).unwrap()
    }

    #[test]
    fn eval_constant_field() {
        let g = Grid::line(-1.0, 1.0, 16).unwrap();
        let f = ScalarField::constant(&g, 3.0).unwrap();
        assert_eq!(f.eval(&[0.37]).unwrap(), 3.0);
    }

    #[test]
    fn eval_hits_nodes_and_clamps() {
        let f = sin_field(513);
        assert!(f.eval(&[0.0]).unwrap().abs() <= 1e-12);
        let outside = f.eval(&[PI + 5.0]).unwrap();
        assert_eq!(outside, f.values()[512]);
        assert!(outside.abs() < 1e-12);
        assert!(f.eval(&[f64::NAN]).is_err());
        assert!(f.eval(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn interpolation_is_exact_at_every_node() {
        let g = Grid::new(vec![-1.3, 0.2], vec![2.9, 1.7], vec![11, 9]).unwrap();
        let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * x[1].exp()).unwrap();
        for k in 0..g.len() {
            let p = g.node(k);
            assert_eq!(f.eval(&p).unwrap(), f.values()[k]);
        }
    }

    #[test]
    fn sup_norms() {
        let g = Grid::line(-PI, PI, 257).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0].cos()).unwrap();
        assert_eq!(f.sup_norm(None).unwrap(), 1.0);
        let c = ScalarField::constant(&g, -2.0).unwrap();
        let w = CompactWindow::centered(1, 1.0);
        assert_eq!(c.sup_norm(Some(&w)).unwrap(), 2.0);

        let g = Grid::line(-1.0, 1.0, 101).unwrap();
        let id = ScalarField::from_fn(&g, |x| x[0]).unwrap();
        let w = CompactWindow::centered(1, 0.5);
        let s = id.sup_norm(Some(&w)).unwrap();
        assert!((s - 0.5).abs() <= g.spacing(0));
        let bad = CompactWindow::centered(1, 0.95);
        assert!(id.sup_norm(Some(&bad)).is_err());
    }

    #[test]
    fn gradient_of_smooth_and_affine_fields() {
        let g = Grid::line(-8.0, 8.0, 2049).unwrap();
        let c = ScalarField::constant(&g, 1.5).unwrap();
        assert!(c.gradient_fd()[0].sup_norm(None).unwrap() == 0.0);

        let f = ScalarField::from_fn(&g, |x| x[0].sin()).unwrap();
        let d = &f.gradient_fd()[0];
        let h = g.spacing(0);
        assert!((d.eval(&[0.0]).unwrap() - 1.0).abs() <= h * h);

        let a = ScalarField::from_fn(&g, |x| x[0].abs()).unwrap();
        assert!((a.gradient_fd()[0].eval(&[0.5]).unwrap() - 1.0).abs() <= h * h);

        let lin = ScalarField::from_fn(&g, |x| 2.5 * x[0] - 1.0).unwrap();
        for v in lin.gradient_fd()[0].values() {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn lipschitz_estimates() {
        let g = Grid::line(-1.0, 1.0, 65).unwrap();
        assert_eq!(ScalarField::constant(&g, 4.0).unwrap().lipschitz_estimate(), 0.0);
        let lin = ScalarField::from_fn(&g, |x| 2.0 * x[0]).unwrap();
        assert!((lin.lipschitz_estimate() - 2.0).abs() < 1e-12);
        let g = Grid::line(-4.0, 4.0, 4097).unwrap();
        let s = ScalarField::from_fn(&g, |x| x[0].sin()).unwrap();
        let h = g.spacing(0);
        assert!((s.lipschitz_estimate() - 1.0).abs() <= h * h);
        assert!(s.lipschitz_estimate() <= 1.0);
    }

    #[test]
    fn csv_round_trip_1d_and_2d() {
        let f = sin_field(33);
        let back = ScalarField::from_csv(&f.to_csv()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid().n(0), 33);

        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![9, 10]).unwrap();
        let f2 = ScalarField::from_fn(&g, |x| x[0] * x[1] + 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        f2.write_csv(&path).unwrap();
        let back = ScalarField::read_csv(&path).unwrap();
        assert_eq!(back.grid().shape(), &[9, 10]);
        assert_eq!(back.values(), f2.values());
        assert!(f2.to_csv().starts_with("x,y,value\n"));
    }

    #[test]
    fn rejects_bad_csv_and_values() {
        assert!(ScalarField::from_csv("a,b\n1,2\n").is_err());
        assert!(ScalarField::from_csv("x,value\n0,1\n0.5,2\n3,1\n").is_err());
        let g = Grid::line(0.0, 1.0, 8).unwrap();
        assert!(ScalarField::new(g.clone(), vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::INFINITY;
        assert!(ScalarField::new(g, v).is_err());
    }
}
