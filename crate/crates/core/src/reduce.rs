//! Reduced (quasicontinuum) equilibrium: interpolation matrix assembly,
//! Newton solve over repatom and enriched DOFs, and error metrics.
//!
//! The interpolation is stored as a scalar matrix `S` (atoms × columns); the
//! full interpolation acting on interleaved 2D DOFs is `S ⊗ I₂`, which is the
//! checkerboard layout. Columns `0..n_rep` are standard repatom functions,
//! the remaining ones are orthonormalized enriched functions.

use rayon::prelude::*;

use crate::basis::ShapeTable;
use crate::enrichment::EnrichedBasis;
use crate::error::{Result, XqcError};
use crate::lattice::{bond_delta, bond_terms, energy_and_gradient, total_energy, BoundaryConditions, LatticeModel, SolverOptions};
use crate::lme::RepatomGrid;
use crate::sparse::{SparsePattern, SymmetricFactorization, SymmetricSolver};

const NONE: u32 = u32::MAX;

/// `Φ = [Φ_std, Φ★]` in scalar form.
#[derive(Debug, Clone)]
pub struct InterpolationMatrix {
    pub standard: ShapeTable,
    pub enriched: EnrichedBasis,
    /// Row-major enriched values over `enriched.atoms`.
    enriched_rows: Vec<f64>,
    /// Per atom: position in `enriched.atoms` or `NONE`.
    enriched_slot: Vec<u32>,
}

impl InterpolationMatrix {
    pub fn new(standard: ShapeTable, enriched: EnrichedBasis) -> Self {
        let mut enriched_slot = vec![NONE; standard.n_rows()];
        for (k, &a) in enriched.atoms.iter().enumerate() {
            enriched_slot[a] = k as u32;
        }
        let enriched_rows = if enriched.n_columns() > 0 { enriched.rows() } else { Vec::new() };
        Self {
            standard,
            enriched,
            enriched_rows,
            enriched_slot,
        }
    }

    pub fn standard_only(standard: ShapeTable) -> Self {
        Self::new(standard, EnrichedBasis::default())
    }

    pub fn n_atoms(&self) -> usize {
        self.standard.n_rows()
    }

    pub fn n_rep(&self) -> usize {
        self.standard.n_cols
    }

    pub fn n_enriched(&self) -> usize {
        self.enriched.n_columns()
    }

    pub fn n_columns(&self) -> usize {
        self.n_rep() + self.n_enriched()
    }

    /// Total reduced DOFs `2 n_rep + 2 n★`.
    pub fn n_dofs(&self) -> usize {
        2 * self.n_columns()
    }

    /// Repatom DOFs only, `2 n_rep`.
    pub fn n_dofs_standard(&self) -> usize {
        2 * self.n_rep()
    }

    fn enriched_row(&self, atom: usize) -> Option<&[f64]> {
        let k = self.enriched_slot[atom];
        if k == NONE {
            return None;
        }
        let m = self.n_enriched();
        let k = k as usize;
        Some(&self.enriched_rows[k * m..(k + 1) * m])
    }

    /// Calls `f(column, value)` for the nonzero scalar entries of row `atom`.
    pub fn for_each_in_row(&self, atom: usize, mut f: impl FnMut(usize, f64)) {
        let (cols, vals) = self.standard.row(atom);
        for (&c, &v) in cols.iter().zip(vals) {
            f(c as usize, v);
        }
        if let Some(r) = self.enriched_row(atom) {
            let n = self.n_rep();
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    f(n + j, v);
                }
            }
        }
    }

    /// Scalar entry `S[atom, column]`.
    pub fn scalar(&self, atom: usize, col: usize) -> f64 {
        if col < self.n_rep() {
            self.standard.get(atom, col)
        } else {
            self.enriched_row(atom).map(|r| r[col - self.n_rep()]).unwrap_or(0.0)
        }
    }

    /// Entry of the interleaved matrix `Φ[2α + k, 2c + l] = δ_kl S[α, c]`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row % 2 != col % 2 {
            0.0
        } else {
            self.scalar(row / 2, col / 2)
        }
    }

    /// Atom displacements `(S ⊗ I₂) q`.
    pub fn interpolate(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.n_dofs());
        let mut u = vec![0.0; 2 * self.n_atoms()];
        u.par_chunks_mut(2).enumerate().for_each(|(a, ua)| {
            let mut s = [0.0; 2];
            self.for_each_in_row(a, |c, v| {
                s[0] += v * q[2 * c];
                s[1] += v * q[2 * c + 1];
            });
            ua.copy_from_slice(&s);
        });
        u
    }

    /// Reduced vector `(S ⊗ I₂)ᵀ f`.
    pub fn transpose_mul(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), 2 * self.n_atoms());
        let m = self.n_dofs();
        let chunk = 4096;
        let parts: Vec<Vec<f64>> = (0..self.n_atoms())
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .map(|atoms| {
                let mut g = vec![0.0; m];
                for &a in atoms {
                    let (fx, fy) = (f[2 * a], f[2 * a + 1]);
                    if fx == 0.0 && fy == 0.0 {
                        continue;
                    }
                    self.for_each_in_row(a, |c, v| {
                        g[2 * c] += v * fx;
                        g[2 * c + 1] += v * fy;
                    });
                }
                g
            })
            .collect();
        let mut g = vec![0.0; m];
        for p in parts {
            for (x, y) in g.iter_mut().zip(p) {
                *x += y;
            }
        }
        g
    }

    /// Sum of standard entries in every row (partition of unity check).
    pub fn standard_row_sums(&self) -> Vec<f64> {
        (0..self.n_atoms()).map(|a| self.standard.row(a).1.iter().sum()).collect()
    }
}

/// Prescribed reduced DOFs `(dof, value)` on boundary repatoms; enriched DOFs
/// are never prescribed.
pub fn reduced_prescribed_dofs(grid: &RepatomGrid, bcs: &BoundaryConditions) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (r, &p) in grid.positions.iter().enumerate() {
        let v = bcs.prescribed(p, grid.edges_of(p));
        for (k, val) in v.iter().enumerate() {
            if let Some(val) = val {
                out.push((2 * r + k, *val));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ReducedState {
    /// Interleaved reduced displacements: repatom DOFs then enriched DOFs.
    pub q: Vec<f64>,
    pub n_rep: usize,
    pub positions: Vec<f64>,
    pub energy: f64,
    /// Atom-level internal force `∂Π/∂r` at `positions`.
    pub internal_force: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ReducedState {
    pub fn repatom_dofs(&self) -> &[f64] {
        &self.q[..2 * self.n_rep]
    }

    pub fn enriched_dofs(&self) -> &[f64] {
        &self.q[2 * self.n_rep..]
    }

    pub fn displacements(&self, model: &LatticeModel) -> Vec<f64> {
        self.positions.iter().zip(&model.positions0).map(|(x, x0)| x - x0).collect()
    }
}

/// Options for the reduced Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedOptions {
    pub solver: SolverOptions,
    /// Inner preconditioned CG iterations before the Hessian is rebuilt.
    pub max_pcg_iter: usize,
    /// Relative tolerance of the inner CG solve.
    pub pcg_tolerance: f64,
    /// Condition estimate above which the reduced Hessian is rejected.
    pub max_condition: f64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            max_pcg_iter: 40,
            pcg_tolerance: 1e-8,
            max_condition: 1e14,
        }
    }
}

/// Factorized reduced Hessian kept between solves; used directly when it
/// is current and as a CG preconditioner otherwise.
#[derive(Default)]
pub struct HessianCache {
    factor: Option<(Vec<usize>, SymmetricFactorization)>,
    pub assemblies: usize,
    pub pcg_iterations: usize,
}

impl HessianCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.factor = None;
    }
}

/// Free-DOF numbering of the reduced system.
struct FreeMap {
    free: Vec<usize>,
    index: Vec<usize>,
}

impl FreeMap {
    fn new(n: usize, prescribed: &[(usize, f64)]) -> Self {
        let mut fixed = vec![false; n];
        for &(d, _) in prescribed {
            fixed[d] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&d| !fixed[d]).collect();
        let mut index = vec![usize::MAX; n];
        for (k, &d) in free.iter().enumerate() {
            index[d] = k;
        }
        Self { free, index }
    }

    fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| v[d]).collect()
    }

    fn scatter(&self, v: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (k, &d) in self.free.iter().enumerate() {
            out[d] = v[k];
        }
        out
    }
}

/// Per-bond 2×2 tangent blocks at the given positions.
fn bond_hessians(model: &LatticeModel, positions: &[f64], floor: f64) -> Result<Vec<[f64; 3]>> {
    model
        .interactions
        .par_iter()
        .enumerate()
        .map(|(e, it)| bond_terms(bond_delta(positions, it), it, floor, e).map(|(_, _, h)| [h[0][0], h[0][1], h[1][1]]))
        .collect()
}

/// `K v` at atom level for per-bond blocks.
fn lattice_matvec(model: &LatticeModel, blocks: &[[f64; 3]], v: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; v.len()];
    for (it, h) in model.interactions.iter().zip(blocks) {
        let d = [v[2 * it.beta] - v[2 * it.alpha], v[2 * it.beta + 1] - v[2 * it.alpha + 1]];
        let w = [h[0] * d[0] + h[1] * d[1], h[1] * d[0] + h[2] * d[1]];
        y[2 * it.alpha] -= w[0];
        y[2 * it.alpha + 1] -= w[1];
        y[2 * it.beta] += w[0];
        y[2 * it.beta + 1] += w[1];
    }
    y
}

/// Assembles the reduced tangent `(S⊗I)ᵀ K (S⊗I)` restricted to free DOFs.
fn assemble_reduced_hessian(
    model: &LatticeModel,
    phi: &InterpolationMatrix,
    blocks: &[[f64; 3]],
    map: &FreeMap,
) -> (SparsePattern, Vec<f64>) {
    let n_atoms = model.n_atoms();
    let m = phi.n_columns();
    // Atom adjacency with the 2×2 stiffness blocks K_αβ (β ≠ α) and K_αα.
    let mut adj: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new(); n_atoms];
    let mut diag = vec![[0.0; 3]; n_atoms];
    for (it, h) in model.interactions.iter().zip(blocks) {
        adj[it.alpha].push((it.beta, [-h[0], -h[1], -h[2]]));
        adj[it.beta].push((it.alpha, [-h[0], -h[1], -h[2]]));
        for k in 0..3 {
            diag[it.alpha][k] += h[k];
            diag[it.beta][k] += h[k];
        }
    }
    // T = K S, stored as sparse rows of symmetric 2×2 blocks.
    let t_rows: Vec<Vec<(u32, [f64; 3])>> = (0..n_atoms)
        .into_par_iter()
        .map_init(
            || (vec![[0.0; 3]; m], vec![false; m], Vec::new()),
            |(acc, seen, touched), a| {
                let mut add = |b: usize, k: [f64; 3]| {
                    phi.for_each_in_row(b, |c, s| {
                        if !seen[c] {
                            seen[c] = true;
                            touched.push(c);
                        }
                        for i in 0..3 {
                            acc[c][i] += k[i] * s;
                        }
                    });
                };
                add(a, diag[a]);
                for &(b, k) in &adj[a] {
                    add(b, k);
                }
                touched.sort_unstable();
                let row = touched
                    .iter()
                    .map(|&c| {
                        let v = acc[c];
                        acc[c] = [0.0; 3];
                        seen[c] = false;
                        (c as u32, v)
                    })
                    .collect();
                touched.clear();
                row
            },
        )
        .collect();
    // Column access of S.
    let mut s_cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
    for a in 0..n_atoms {
        phi.for_each_in_row(a, |c, v| s_cols[c].push((a as u32, v)));
    }
    // R = Sᵀ T by columns.
    let r_cols: Vec<Vec<(u32, [f64; 3])>> = (0..m)
        .into_par_iter()
        .map_init(
            || (vec![[0.0; 3]; m], vec![false; m], Vec::new()),
            |(acc, seen, touched), c| {
                for &(a, s) in &s_cols[c] {
                    for &(c2, v) in &t_rows[a as usize] {
                        let c2 = c2 as usize;
                        if !seen[c2] {
                            seen[c2] = true;
                            touched.push(c2);
                        }
                        for i in 0..3 {
                            acc[c2][i] += s * v[i];
                        }
                    }
                }
                touched.sort_unstable();
                let col = touched
                    .iter()
                    .map(|&c2| {
                        let v = acc[c2];
                        acc[c2] = [0.0; 3];
                        seen[c2] = false;
                        (c2 as u32, v)
                    })
                    .collect();
                touched.clear();
                col
            },
        )
        .collect();
    drop(t_rows);
    // Scalar CSC over free DOFs: block [[h0,h1],[h1,h2]] at (c2, c).
    let n_free = map.free.len();
    let mut col_ptr = Vec::with_capacity(n_free + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for &d in &map.free {
        let (c, l) = (d / 2, d % 2);
        for &(c2, v) in &r_cols[c] {
            let c2 = c2 as usize;
            for k in 0..2 {
                let fr = map.index[2 * c2 + k];
                if fr == usize::MAX {
                    continue;
                }
                row_idx.push(fr);
                values.push(v[k + l]);
            }
        }
        col_ptr.push(row_idx.len());
    }
    (SparsePattern::from_sorted_columns(n_free, col_ptr, row_idx), values)
}

/// Extreme eigenvalue ratio estimated by power and inverse iteration.
fn condition_estimate(pattern: &SparsePattern, values: &[f64], fact: &SymmetricFactorization) -> f64 {
    let n = pattern.dim();
    if n == 0 {
        return 1.0;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut v = start.clone();
    let mut lmax = 0.0;
    for _ in 0..30 {
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let w = pattern.mul_vec(values, &v);
        lmax = norm(&w);
        v = w;
    }
    let mut v = start;
    let mut inv = 0.0;
    for _ in 0..30 {
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        fact.solve_in_place(&mut v);
        inv = norm(&v);
    }
    lmax * inv
}

/// Reduced equilibrium by Newton's method. Each linear system is solved by
/// CG preconditioned with the cached factorization; the exact reduced
/// Hessian is assembled and factorized only when no usable factorization
/// exists or CG stalls.
pub fn solve_reduced(
    model: &LatticeModel,
    phi: &InterpolationMatrix,
    prescribed: &[(usize, f64)],
    opts: &ReducedOptions,
    cache: &mut HessianCache,
    q0: Option<&[f64]>,
) -> Result<ReducedState> {
    let n = phi.n_dofs();
    let floor = opts.solver.length_floor;
    let tol = opts.solver.tolerance_for(model);
    let map = FreeMap::new(n, prescribed);
    let key: Vec<usize> = std::iter::once(n).chain(phi.enriched.order.iter().copied()).collect();
    if cache.factor.as_ref().is_some_and(|(k, _)| *k != key) {
        cache.factor = None;
    }
    let mut q = match q0 {
        Some(q0) if q0.len() == n => q0.to_vec(),
        _ => vec![0.0; n],
    };
    for &(d, v) in prescribed {
        q[d] = v;
    }
    let positions_of = |q: &[f64]| -> Vec<f64> {
        let u = phi.interpolate(q);
        model.positions0.iter().zip(&u).map(|(x, u)| x + u).collect()
    };
    let mut positions = positions_of(&q);
    let mut iterations = 0;
    loop {
        let (energy, force) = energy_and_gradient(model, &positions, floor)?;
        let g = phi.transpose_mul(&force);
        let g_free = map.gather(&g);
        let res = g_free.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if res <= tol || iterations >= opts.solver.max_iter {
            let converged = res <= tol;
            if !converged {
                return Err(XqcError::NonConvergence {
                    iterations,
                    residual: res,
                });
            }
            return Ok(ReducedState {
                q,
                n_rep: phi.n_rep(),
                positions,
                energy,
                internal_force: force,
                residual_norm: res,
                iterations,
                converged,
            });
        }
        let blocks = bond_hessians(model, &positions, floor)?;
        let rhs: Vec<f64> = g_free.iter().map(|x| -x).collect();
        let mut step = None;
        if let Some((_, fact)) = &cache.factor {
            let apply = |v: &[f64]| {
                let vf = map.scatter(v, n);
                let w = phi.transpose_mul(&lattice_matvec(model, &blocks, &phi.interpolate(&vf)));
                map.gather(&w)
            };
            let (x, iters, ok) = pcg(apply, |r| {
                let mut z = r.to_vec();
                fact.solve_in_place(&mut z);
                z
            }, &rhs, opts.pcg_tolerance, opts.max_pcg_iter);
            cache.pcg_iterations += iters;
            if ok {
                step = Some(x);
            }
        }
        let step = match step {
            Some(s) => s,
            None => {
                let (pattern, values) = assemble_reduced_hessian(model, phi, &blocks, &map);
                let mut solver = SymmetricSolver::new(pattern.clone());
                let fact = solver.factorize(&values)?;
                cache.assemblies += 1;
                let cond = condition_estimate(&pattern, &values, &fact);
                if cond > opts.max_condition || !cond.is_finite() {
                    return Err(XqcError::Conditioning { estimate: cond });
                }
                let mut x = rhs.clone();
                fact.solve_in_place(&mut x);
                cache.factor = Some((key.clone(), fact));
                x
            }
        };
        let dq = map.scatter(&step, n);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + t * b).collect();
            let tp = positions_of(&trial);
            match total_energy(model, &tp, floor) {
                Ok(e) if e <= energy + 1e-12 * energy.abs() => {
                    q = trial;
                    positions = tp;
                    accepted = true;
                    break;
                }
                Ok(_) | Err(XqcError::DegenerateConfiguration { .. }) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            return Err(XqcError::NonConvergence {
                iterations,
                residual: res,
            });
        }
        iterations += 1;
    }
}

/// Preconditioned conjugate gradients; returns `(x, iterations, converged)`.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize, bool) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bn = dot(b, b).sqrt();
    let mut x = vec![0.0; b.len()];
    if bn == 0.0 {
        return (x, 0, true);
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for k in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return (x, k, false);
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= rel_tol * bn {
            return (x, k, true);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter, false)
}

/// Relative and per-atom displacement errors against a reference solution.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// `‖u_QC - u_FS‖ / ‖u_FS‖`.
    pub eps_u: f64,
    /// `| ‖u_QC,α‖ - ‖u_FS,α‖ |` per atom.
    pub per_atom: Vec<f64>,
}

/// Compares two displacement fields given as flat `[ux, uy, ...]` vectors.
pub fn reconstruct_and_measure(u_qc: &[f64], u_fs: &[f64]) -> Result<ErrorReport> {
    assert_eq!(u_qc.len(), u_fs.len());
    let ref_norm = u_fs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(XqcError::UndefinedMetric("reference displacement is zero".into()));
    }
    let diff = u_qc.iter().zip(u_fs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let per_atom = u_qc
        .chunks(2)
        .zip(u_fs.chunks(2))
        .map(|(a, b)| ((a[0] * a[0] + a[1] * a[1]).sqrt() - (b[0] * b[0] + b[1] * b[1]).sqrt()).abs())
        .collect();
    Ok(ErrorReport {
        eps_u: diff / ref_norm,
        per_atom,
    })
}
