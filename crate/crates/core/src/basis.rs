//! Per-atom tables of standard shape-function values, produced either by
//! LME evaluation or by piecewise-linear hats on the repatom grid.

use rayon::prelude::*;

use crate::error::{Result, XqcError};
use crate::geometry::Point;
use crate::lme::{LmeBasis, RepatomGrid};

/// Row-compressed table: for each atom the supporting repatoms and values.
#[derive(Debug, Clone, Default)]
pub struct ShapeTable {
    pub n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl ShapeTable {
    pub fn from_rows(n_cols: usize, rows: impl IntoIterator<Item = (Vec<usize>, Vec<f64>)>) -> Self {
        let mut t = Self {
            n_cols,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for (c, v) in rows {
            debug_assert_eq!(c.len(), v.len());
            t.cols.extend(c.iter().map(|&x| x as u32));
            t.vals.extend_from_slice(&v);
            t.row_ptr.push(t.cols.len());
        }
        t
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// Value at `(row, col)`, zero when outside the support.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&(c as u32)).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// Column-major index: for each column the `(row, value)` pairs.
    pub fn transpose(&self) -> Vec<Vec<(u32, f64)>> {
        let mut out = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize].push((r as u32, v));
            }
        }
        out
    }
}

/// Per-atom LME data retained for derivative evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmeMeta {
    pub lambda: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    pub iterations: usize,
}

/// LME shape values at every evaluation point with their multipliers.
#[derive(Debug, Clone)]
pub struct LmeTable {
    pub shapes: ShapeTable,
    pub meta: Vec<LmeMeta>,
}

impl LmeTable {
    /// Evaluates the basis at `points`; failures name the offending point.
    pub fn build(basis: &LmeBasis, points: &[Point], gammas: &[f64], warm: Option<&[[f64; 2]]>) -> Result<Self> {
        let evals = basis.evaluate_all(points, gammas, warm).map_err(|e| match e {
            XqcError::LambdaNonConvergence { x, y, .. } | XqcError::EmptySupport { x, y } => {
                let atom = points.iter().position(|p| p[0] == x && p[1] == y).unwrap_or(usize::MAX);
                XqcError::Assembly {
                    atom,
                    reason: e.to_string(),
                }
            }
            other => other,
        })?;
        let meta = evals
            .iter()
            .map(|e| LmeMeta {
                lambda: e.lambda,
                hessian: e.hessian,
                iterations: e.iterations,
            })
            .collect();
        let shapes = ShapeTable::from_rows(basis.grid().n_rep(), evals.into_iter().map(|e| (e.support, e.phi)));
        Ok(Self { shapes, meta })
    }

    pub fn warm_start(&self) -> Vec<[f64; 2]> {
        self.meta.iter().map(|m| m.lambda).collect()
    }

    /// `Σ_b w_b ∂φ_b/∂γ_c` at evaluation point `row`, reported per `c`.
    pub fn contract_gamma_derivative(
        &self,
        grid: &RepatomGrid,
        x: Point,
        row: usize,
        w: &[f64],
        out: impl FnMut(usize, f64),
    ) -> Result<()> {
        let (cols, phi) = self.shapes.row(row);
        crate::lme::contract_gamma_derivative(grid, x, cols, phi, self.meta[row].hessian, w, out)
    }
}

/// Piecewise-linear hats on a regular repatom grid; every grid square is
/// split along its lower-left to upper-right diagonal.
#[derive(Debug, Clone)]
pub struct LinearBasis {
    grid: RepatomGrid,
}

impl LinearBasis {
    pub fn new(grid: RepatomGrid) -> Result<Self> {
        if grid.n_side.is_none() || grid.domain.is_none() {
            return Err(XqcError::InvalidConfig(
                "linear interpolation requires a regular repatom grid".into(),
            ));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &RepatomGrid {
        &self.grid
    }

    pub fn evaluate(&self, x: Point) -> Result<(Vec<usize>, Vec<f64>)> {
        let n = self.grid.n_side.unwrap();
        let l = self.grid.domain.unwrap().half_extent;
        let h = self.grid.spacing;
        let fx = (x[0] + l) / h;
        let fy = (x[1] + l) / h;
        let tol = 1e-9;
        if fx < -tol || fy < -tol || fx > (n - 1) as f64 + tol || fy > (n - 1) as f64 + tol {
            return Err(XqcError::EmptySupport { x: x[0], y: x[1] });
        }
        let i = (fx.floor().max(0.0) as usize).min(n - 2);
        let j = (fy.floor().max(0.0) as usize).min(n - 2);
        let s = (fx - i as f64).clamp(0.0, 1.0);
        let t = (fy - j as f64).clamp(0.0, 1.0);
        let id = |a: usize, b: usize| a + b * n;
        let mut entries = if s >= t {
            vec![(id(i, j), 1.0 - s), (id(i + 1, j), s - t), (id(i + 1, j + 1), t)]
        } else {
            vec![(id(i, j), 1.0 - t), (id(i, j + 1), t - s), (id(i + 1, j + 1), s)]
        };
        entries.retain(|e| e.1 > 1e-14);
        entries.sort_unstable_by_key(|e| e.0);
        Ok(entries.into_iter().unzip())
    }

    pub fn table(&self, points: &[Point]) -> Result<ShapeTable> {
        let rows: Vec<(Vec<usize>, Vec<f64>)> = points.par_iter().map(|&x| self.evaluate(x)).collect::<Result<_>>()?;
        Ok(ShapeTable::from_rows(self.grid.n_rep(), rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, MaterialRule};

    #[test]
    fn linear_hats_reproduce_affine_fields() {
        let m = build_lattice(4.0, 1.0, MaterialRule::homogeneous(1.0, 1.0)).unwrap();
        let g = RepatomGrid::regular(&m, 2.0).unwrap();
        let b = LinearBasis::new(g.clone()).unwrap();
        for a in 0..m.n_atoms() {
            let x = m.position0(a);
            let (c, v) = b.evaluate(x).unwrap();
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            let mut rx = [0.0; 2];
            for (&n, &p) in c.iter().zip(&v) {
                rx[0] += p * g.positions[n][0];
                rx[1] += p * g.positions[n][1];
            }
            assert!((rx[0] - x[0]).abs() < 1e-12 && (rx[1] - x[1]).abs() < 1e-12);
        }
        // on a repatom the hat is a Kronecker delta
        assert_eq!(b.evaluate([0.0, 0.0]).unwrap(), (vec![12], vec![1.0]));
        // lower-right triangle of the first square
        let (c, v) = b.evaluate([-3.0, -3.5]).unwrap();
        assert_eq!(c, vec![0, 1, 6]);
        assert!((v[0] - 0.5).abs() < 1e-14 && (v[1] - 0.25).abs() < 1e-14 && (v[2] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn table_round_trip() {
        let t = ShapeTable::from_rows(4, vec![(vec![0, 2], vec![0.25, 0.75]), (vec![3], vec![1.0])]);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.get(0, 2), 0.75);
        assert_eq!(t.get(1, 0), 0.0);
        let tr = t.transpose();
        assert_eq!(tr[3], vec![(1, 1.0)]);
    }
}
