//! Local maximum-entropy shape functions on a repatom set.
//!
//! All internal quantities are dimensionless: distances are divided by the
//! repatom spacing `h`, so the locality enters as `γ = β h²` and the
//! multiplier as `λ h`.

use rayon::prelude::*;

use crate::error::{Result, XqcError};
use crate::geometry::Point;
use crate::lattice::{Domain, EdgeFlags, LatticeModel};

/// `-ln(1e-12)`: nodes with `exp(-γ |y|²)` below `1e-12` are dropped.
pub const DEFAULT_CUTOFF_EXPONENT: f64 = 27.631021115928547;

/// Representative atoms with their spacing and co-located lattice atoms.
#[derive(Debug, Clone)]
pub struct RepatomGrid {
    pub spacing: f64,
    pub positions: Vec<Point>,
    pub atom_of_repatom: Vec<usize>,
    /// Repatoms per side when the set is a regular grid over the domain.
    pub n_side: Option<usize>,
    /// Square hull of the repatoms; enables face restriction on its edges.
    pub domain: Option<Domain>,
}

impl RepatomGrid {
    /// Regular grid of spacing `h` over the lattice domain.
    pub fn regular(model: &LatticeModel, h: f64) -> Result<Self> {
        let d = model.spacing;
        let ratio = h / d;
        if !(h > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(XqcError::InvalidGeometry(format!(
                "repatom spacing {h} is not an integer multiple of the lattice spacing {d}"
            )));
        }
        let stride = ratio.round() as usize;
        if (model.n_side - 1) % stride != 0 {
            return Err(XqcError::InvalidGeometry(format!(
                "repatom spacing {h} does not divide the domain edge {}",
                model.domain.edge_length()
            )));
        }
        let n = (model.n_side - 1) / stride + 1;
        let mut positions = Vec::with_capacity(n * n);
        let mut atom_of_repatom = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let a = model.atom_at(i * stride, j * stride);
                positions.push(model.position0(a));
                atom_of_repatom.push(a);
            }
        }
        Ok(Self {
            spacing: h,
            positions,
            atom_of_repatom,
            n_side: Some(n),
            domain: Some(model.domain),
        })
    }

    /// Arbitrary point set; no boundary face restriction is applied.
    pub fn scattered(positions: Vec<Point>, spacing: f64) -> Self {
        let n = positions.len();
        Self {
            spacing,
            positions,
            atom_of_repatom: (0..n).collect(),
            n_side: None,
            domain: None,
        }
    }

    pub fn n_rep(&self) -> usize {
        self.positions.len()
    }

    pub fn edges_of(&self, p: Point) -> EdgeFlags {
        self.domain.map(|d| d.edges_of(p)).unwrap_or_default()
    }

    /// Repatoms lying on the boundary of the hull.
    pub fn boundary_repatoms(&self) -> Vec<usize> {
        (0..self.n_rep())
            .filter(|&r| !self.edges_of(self.positions[r]).is_empty())
            .collect()
    }
}

/// Bucket grid for radius queries over the repatoms.
#[derive(Debug, Clone)]
struct NodeIndex {
    origin: Point,
    cell: f64,
    dims: [usize; 2],
    start: Vec<usize>,
    nodes: Vec<usize>,
}

impl NodeIndex {
    fn new(points: &[Point], cell: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
        ];
        let cell_of = |p: &Point| {
            let i = (((p[0] - lo[0]) / cell).floor() as usize).min(dims[0] - 1);
            let j = (((p[1] - lo[1]) / cell).floor() as usize).min(dims[1] - 1);
            i + j * dims[0]
        };
        let mut counts = vec![0usize; dims[0] * dims[1] + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut nodes = vec![0; points.len()];
        for (n, p) in points.iter().enumerate() {
            let c = cell_of(p);
            nodes[fill[c]] = n;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            cell,
            dims,
            start,
            nodes,
        }
    }

    /// Calls `f` for every node in the cells overlapping the disc.
    fn for_each_near(&self, x: Point, radius: f64, mut f: impl FnMut(usize)) {
        let range = |k: usize| {
            let lo = ((x[k] - radius - self.origin[k]) / self.cell).floor();
            let hi = ((x[k] + radius - self.origin[k]) / self.cell).floor();
            let lo = lo.max(0.0) as usize;
            let hi = hi.min(self.dims[k] as f64 - 1.0);
            if hi < 0.0 {
                (1, 0)
            } else {
                (lo, hi as usize)
            }
        };
        let (i0, i1) = range(0);
        let (j0, j1) = range(1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let c = i + j * self.dims[0];
                for &n in &self.nodes[self.start[c]..self.start[c + 1]] {
                    f(n);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmeOptions {
    /// Tolerance on the dimensionless residual `‖Σ φ_a y_a‖`.
    pub tolerance: f64,
    pub max_iter: usize,
    pub cutoff_exponent: f64,
}

impl Default for LmeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 100,
            cutoff_exponent: DEFAULT_CUTOFF_EXPONENT,
        }
    }
}

/// Converged LME shape functions at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LmeEvaluation {
    pub support: Vec<usize>,
    pub phi: Vec<f64>,
    /// Dimensionless multiplier `λ h`.
    pub lambda: [f64; 2],
    /// Dimensionless `J = Σ φ y yᵀ` at the optimum.
    pub hessian: [[f64; 2]; 2],
    pub iterations: usize,
}

impl LmeEvaluation {
    /// Multiplier in physical units (mm⁻¹).
    pub fn lambda_physical(&self, h: f64) -> [f64; 2] {
        [self.lambda[0] / h, self.lambda[1] / h]
    }
}

/// LME interpolation on a repatom set.
#[derive(Debug, Clone)]
pub struct LmeBasis {
    grid: RepatomGrid,
    index: NodeIndex,
    pub options: LmeOptions,
}

impl LmeBasis {
    pub fn new(grid: RepatomGrid) -> Self {
        Self::with_options(grid, LmeOptions::default())
    }

    pub fn with_options(grid: RepatomGrid, options: LmeOptions) -> Self {
        let index = NodeIndex::new(&grid.positions, grid.spacing);
        Self { grid, index, options }
    }

    pub fn grid(&self) -> &RepatomGrid {
        &self.grid
    }

    fn scaled_offset(&self, x: Point, node: usize) -> [f64; 2] {
        let p = self.grid.positions[node];
        let h = self.grid.spacing;
        [(x[0] - p[0]) / h, (x[1] - p[1]) / h]
    }

    /// Candidate support at `x`: nodes within the Gaussian cutoff and, on
    /// the hull boundary, only nodes sharing the edges of `x`.
    fn support(&self, x: Point, gammas: &[f64], gamma_min: f64) -> Vec<usize> {
        let cut = self.options.cutoff_exponent;
        let radius = self.grid.spacing * (cut / gamma_min).sqrt();
        let edges = self.grid.edges_of(x);
        let mut out = Vec::new();
        self.index.for_each_near(x, radius, |n| {
            let y = self.scaled_offset(x, n);
            if gammas[n] * (y[0] * y[0] + y[1] * y[1]) > cut {
                return;
            }
            if !edges.is_empty() {
                let ne = self.grid.edges_of(self.grid.positions[n]);
                if ne.bits() & edges.bits() != edges.bits() {
                    return;
                }
            }
            out.push(n);
        });
        out.sort_unstable();
        out
    }

    /// Shape functions at `x` for the per-repatom locality `gammas`.
    pub fn evaluate(&self, x: Point, gammas: &[f64], lambda0: Option<[f64; 2]>) -> Result<LmeEvaluation> {
        let gmin = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
        self.evaluate_with_min(x, gammas, gmin, lambda0)
    }

    fn evaluate_with_min(
        &self,
        x: Point,
        gammas: &[f64],
        gamma_min: f64,
        lambda0: Option<[f64; 2]>,
    ) -> Result<LmeEvaluation> {
        assert_eq!(gammas.len(), self.grid.n_rep());
        let support = self.support(x, gammas, gamma_min);
        if support.is_empty() {
            return Err(XqcError::EmptySupport { x: x[0], y: x[1] });
        }
        let ys: Vec<[f64; 2]> = support.iter().map(|&n| self.scaled_offset(x, n)).collect();
        let prior: Vec<f64> = support
            .iter()
            .zip(&ys)
            .map(|(&n, y)| -gammas[n] * (y[0] * y[0] + y[1] * y[1]))
            .collect();
        let mut phi = vec![0.0; support.len()];
        let mut lambda = lambda0.unwrap_or([0.0; 2]);
        let mut iterations = 0;
        loop {
            let (r, j) = moments(&prior, &ys, lambda, &mut phi);
            let rn = (r[0] * r[0] + r[1] * r[1]).sqrt();
            if rn <= self.options.tolerance {
                return Ok(LmeEvaluation {
                    support,
                    phi,
                    lambda,
                    hessian: j,
                    iterations,
                });
            }
            if iterations >= self.options.max_iter || !rn.is_finite() {
                return Err(XqcError::LambdaNonConvergence {
                    x: x[0],
                    y: x[1],
                    iterations,
                    residual: rn,
                });
            }
            let a = [[j[0][0] + rn, j[0][1]], [j[1][0], j[1][1] + rn]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            lambda[0] -= (a[1][1] * r[0] - a[0][1] * r[1]) / det;
            lambda[1] -= (-a[1][0] * r[0] + a[0][0] * r[1]) / det;
            iterations += 1;
        }
    }

    /// Evaluates every point in parallel; `warm` supplies per-point
    /// starting multipliers.
    pub fn evaluate_all(
        &self,
        points: &[Point],
        gammas: &[f64],
        warm: Option<&[[f64; 2]]>,
    ) -> Result<Vec<LmeEvaluation>> {
        let gmin = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
        points
            .par_iter()
            .enumerate()
            .map(|(i, &x)| self.evaluate_with_min(x, gammas, gmin, warm.map(|w| w[i])))
            .collect()
    }

    /// `∂φ_a/∂γ_wrt` for every `a` in the support of `eval`.
    pub fn gamma_derivative(&self, x: Point, eval: &LmeEvaluation, wrt: usize) -> Result<Vec<f64>> {
        let jp = self.pinv(eval)?;
        let Some(pos) = eval.support.iter().position(|&n| n == wrt) else {
            return Ok(vec![0.0; eval.support.len()]);
        };
        let yb = self.scaled_offset(x, wrt);
        let db2 = yb[0] * yb[0] + yb[1] * yb[1];
        let pb = eval.phi[pos];
        let jyb = mat_vec(&jp, yb);
        Ok(eval
            .support
            .iter()
            .zip(&eval.phi)
            .enumerate()
            .map(|(k, (&n, &pa))| {
                let ya = self.scaled_offset(x, n);
                let delta = if k == pos { 1.0 } else { 0.0 };
                pa * db2 * (pb * (ya[0] * jyb[0] + ya[1] * jyb[1] + 1.0) - delta)
            })
            .collect())
    }

    /// `∂φ_a/∂β_wrt` in physical units (`∂/∂β = h² ∂/∂γ`).
    pub fn beta_derivative(&self, x: Point, eval: &LmeEvaluation, wrt: usize) -> Result<Vec<f64>> {
        let h2 = self.grid.spacing * self.grid.spacing;
        Ok(self.gamma_derivative(x, eval, wrt)?.into_iter().map(|v| v * h2).collect())
    }

    /// Adjoint contraction: for weights `w` aligned with the support, calls
    /// `out(c, Σ_b w_b ∂φ_b/∂γ_c)` for every support node `c`.
    pub fn contract_gamma_derivative(
        &self,
        x: Point,
        eval: &LmeEvaluation,
        w: &[f64],
        out: impl FnMut(usize, f64),
    ) -> Result<()> {
        let cols: Vec<u32> = eval.support.iter().map(|&n| n as u32).collect();
        contract_gamma_derivative(&self.grid, x, &cols, &eval.phi, eval.hessian, w, out)
    }

    fn pinv(&self, eval: &LmeEvaluation) -> Result<[[f64; 2]; 2]> {
        hessian_pinv(eval.support.len(), eval.hessian)
    }
}

fn hessian_pinv(n_support: usize, hessian: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    if n_support == 1 {
        return Ok([[0.0; 2]; 2]);
    }
    symmetric_pinv(hessian).ok_or_else(|| {
        XqcError::DerivativeUnavailable(format!("singular LME Hessian with {n_support} support nodes"))
    })
}

/// `Σ_b w_b ∂φ_b/∂γ_c` for every support node `c` of a converged evaluation
/// given by its support, values and Hessian.
pub fn contract_gamma_derivative(
    grid: &RepatomGrid,
    x: Point,
    support: &[u32],
    phi: &[f64],
    hessian: [[f64; 2]; 2],
    w: &[f64],
    mut out: impl FnMut(usize, f64),
) -> Result<()> {
    let jp = hessian_pinv(support.len(), hessian)?;
    let h = grid.spacing;
    let offset = |n: u32| {
        let p = grid.positions[n as usize];
        [(x[0] - p[0]) / h, (x[1] - p[1]) / h]
    };
    let mut wbar = 0.0;
    let mut v = [0.0; 2];
    for ((&n, &p), &wb) in support.iter().zip(phi).zip(w) {
        let y = offset(n);
        wbar += wb * p;
        v[0] += wb * p * y[0];
        v[1] += wb * p * y[1];
    }
    let pv = mat_vec(&jp, v);
    for ((&n, &p), &wc) in support.iter().zip(phi).zip(w) {
        let y = offset(n);
        let d2 = y[0] * y[0] + y[1] * y[1];
        out(n as usize, d2 * p * (pv[0] * y[0] + pv[1] * y[1] + wbar - wc));
    }
    Ok(())
}

/// Updates `phi` for multiplier `lambda` and returns the residual
/// `r = Σ φ y` and `J = Σ φ y yᵀ - r rᵀ`.
fn moments(prior: &[f64], ys: &[[f64; 2]], lambda: [f64; 2], phi: &mut [f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut fmax = f64::NEG_INFINITY;
    for (k, (p, y)) in prior.iter().zip(ys).enumerate() {
        let f = p + lambda[0] * y[0] + lambda[1] * y[1];
        phi[k] = f;
        fmax = fmax.max(f);
    }
    let mut z = 0.0;
    for v in phi.iter_mut() {
        *v = (*v - fmax).exp();
        z += *v;
    }
    let mut r = [0.0; 2];
    let mut m = [[0.0; 2]; 2];
    for (v, y) in phi.iter_mut().zip(ys) {
        *v /= z;
        r[0] += *v * y[0];
        r[1] += *v * y[1];
        m[0][0] += *v * y[0] * y[0];
        m[0][1] += *v * y[0] * y[1];
        m[1][1] += *v * y[1] * y[1];
    }
    m[0][0] -= r[0] * r[0];
    m[0][1] -= r[0] * r[1];
    m[1][1] -= r[1] * r[1];
    m[1][0] = m[0][1];
    (r, m)
}

fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Moore–Penrose inverse of a symmetric positive semidefinite 2×2 matrix.
/// Eigenvalues below `1e-12` of the largest are treated as zero; `None`
/// when the matrix vanishes.
pub fn symmetric_pinv(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if !(l1 > 1e-300) {
        return None;
    }
    // Unit eigenvector for l1.
    let v1 = if b.abs() > 1e-300 * l1 {
        // Take the form whose leading difference does not cancel.
        let v = if a >= c { [l1 - c, b] } else { [b, l1 - a] };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        [v[0] / n, v[1] / n]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let v2 = [-v1[1], v1[0]];
    let inv1 = 1.0 / l1;
    let inv2 = if l2 > 1e-12 * l1 { 1.0 / l2 } else { 0.0 };
    Some([
        [
            inv1 * v1[0] * v1[0] + inv2 * v2[0] * v2[0],
            inv1 * v1[0] * v1[1] + inv2 * v2[0] * v2[1],
        ],
        [
            inv1 * v1[1] * v1[0] + inv2 * v2[1] * v2[0],
            inv1 * v1[1] * v1[1] + inv2 * v2[1] * v2[1],
        ],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, MaterialRule};

    fn grid5() -> (LatticeModel, RepatomGrid) {
        let m = build_lattice(4.0, 1.0, MaterialRule::homogeneous(1.0, 1.0)).unwrap();
        let g = RepatomGrid::regular(&m, 2.0).unwrap();
        (m, g)
    }

    #[test]
    fn regular_grid_maps_to_atoms() {
        let (m, g) = grid5();
        assert_eq!(g.n_rep(), 25);
        for (r, &a) in g.atom_of_repatom.iter().enumerate() {
            assert_eq!(g.positions[r], m.position0(a));
        }
        assert_eq!(g.boundary_repatoms().len(), 16);
        assert!(RepatomGrid::regular(&m, 1.5).is_err());
        assert!(RepatomGrid::regular(&m, 3.0).is_err());
    }

    #[test]
    fn single_repatom_is_kronecker() {
        let b = LmeBasis::new(RepatomGrid::scattered(vec![[1.0, 2.0]], 1.0));
        let e = b.evaluate([1.0, 2.0], &[1.8], None).unwrap();
        assert_eq!(e.lambda, [0.0, 0.0]);
        assert_eq!(e.phi, vec![1.0]);
        assert_eq!(b.gamma_derivative([1.0, 2.0], &e, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn symmetric_ring_has_zero_multiplier() {
        let pts: Vec<Point> = (0..6)
            .map(|k| {
                let t = k as f64 * std::f64::consts::PI / 3.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let b = LmeBasis::new(RepatomGrid::scattered(pts, 1.0));
        let e = b.evaluate([0.0, 0.0], &[1.0; 6], None).unwrap();
        assert!(e.lambda[0].abs() < 1e-14 && e.lambda[1].abs() < 1e-14);
        for p in &e.phi {
            assert!((p - 1.0 / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn midpoint_of_two_nodes() {
        let b = LmeBasis::new(RepatomGrid::scattered(vec![[0.0, 0.0], [1.0, 0.0]], 1.0));
        for g in [0.3, 1.8, 4.0] {
            let e = b.evaluate([0.5, 0.0], &[g, g], None).unwrap();
            assert!((e.phi[0] - 0.5).abs() < 1e-14 && (e.phi[1] - 0.5).abs() < 1e-14);
            let d = b.gamma_derivative([0.5, 0.0], &e, 0).unwrap();
            assert!((d[0] + d[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn face_restriction_gives_kronecker_on_boundary() {
        let (_, g) = grid5();
        let b = LmeBasis::new(g);
        let gam = vec![0.8; 25];
        // corner
        let e = b.evaluate([-4.0, -4.0], &gam, None).unwrap();
        assert_eq!(e.support, vec![0]);
        // bottom edge between repatoms 1 and 2
        let e = b.evaluate([-1.0, -4.0], &gam, None).unwrap();
        assert!(e.support.iter().all(|&n| n < 5));
        let s: f64 = e.phi.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        // on a repatom of the edge the neighbours are weak
        let e = b.evaluate([-2.0, -4.0], &gam, None).unwrap();
        let k = e.support.iter().position(|&n| n == 1).unwrap();
        assert!(e.phi[k] > 0.5);
    }

    #[test]
    fn pinv_of_rank_one() {
        let p = symmetric_pinv([[4.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!((p[0][0] - 0.25).abs() < 1e-15 && p[1][1] == 0.0);
        let p = symmetric_pinv([[2.0, 1.0], [1.0, 2.0]]).unwrap();
        // inverse is [2 -1; -1 2]/3
        assert!((p[0][0] - 2.0 / 3.0).abs() < 1e-14 && (p[0][1] + 1.0 / 3.0).abs() < 1e-14);
        assert!(symmetric_pinv([[0.0; 2]; 2]).is_none());
    }
}
