//! X-braced truss lattices: generation, material assignment, energy
//! assembly and the full-resolution equilibrium solve.

use rayon::prelude::*;

use crate::error::{Result, XqcError};
use crate::geometry::{InterfaceGeometry, Point, ON_INTERFACE_TOL};
use crate::sparse::{SparsePattern, SymmetricSolver};

/// Default floor for current interaction lengths (mm).
pub const DEFAULT_LENGTH_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub alpha: usize,
    pub beta: usize,
    pub young_modulus: f64,
    pub area: f64,
    pub rest_length: f64,
}

impl Interaction {
    pub fn axial_stiffness(&self) -> f64 {
        self.young_modulus * self.area / self.rest_length
    }
}

/// Second phase embedded in the matrix material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub geometry: InterfaceGeometry,
    pub young_modulus: f64,
}

/// Assigns Young's modulus and cross-section to every interaction.
///
/// Closed inclusions claim an interaction when its midpoint lies strictly
/// inside the interface; a fiber claims the links whose two endpoints both
/// lie on the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialRule {
    pub matrix_modulus: f64,
    pub area: f64,
    pub phase: Option<Phase>,
}

impl MaterialRule {
    pub fn homogeneous(modulus: f64, area: f64) -> Self {
        Self {
            matrix_modulus: modulus,
            area,
            phase: None,
        }
    }

    pub fn with_phase(mut self, geometry: InterfaceGeometry, modulus: f64) -> Self {
        self.phase = Some(Phase {
            geometry,
            young_modulus: modulus,
        });
        self
    }

    pub fn modulus_for(&self, a: Point, b: Point) -> f64 {
        let Some(phase) = self.phase else {
            return self.matrix_modulus;
        };
        let claimed = if phase.geometry.is_closed() {
            phase
                .geometry
                .strictly_inside([(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5])
        } else {
            phase.geometry.on_interface(a) && phase.geometry.on_interface(b)
        };
        if claimed {
            phase.young_modulus
        } else {
            self.matrix_modulus
        }
    }
}

/// Boundary edges of the square domain: Γ1 bottom, Γ2 right, Γ3 top, Γ4 left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Bottom, Edge::Right, Edge::Top, Edge::Left];

    pub fn index(self) -> usize {
        match self {
            Edge::Bottom => 0,
            Edge::Right => 1,
            Edge::Top => 2,
            Edge::Left => 3,
        }
    }
}

/// Set of edges a point lies on (corners lie on two).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeFlags(u8);

impl EdgeFlags {
    pub fn contains(self, e: Edge) -> bool {
        self.0 & (1 << e.index()) != 0
    }

    pub fn insert(&mut self, e: Edge) {
        self.0 |= 1 << e.index();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

/// Square domain `[-L, L]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub half_extent: f64,
}

impl Domain {
    pub fn edges_of(&self, p: Point) -> EdgeFlags {
        let l = self.half_extent;
        let tol = 1e-9 * l.max(1.0);
        let mut f = EdgeFlags::default();
        if (p[1] + l).abs() <= tol {
            f.insert(Edge::Bottom);
        }
        if (p[0] - l).abs() <= tol {
            f.insert(Edge::Right);
        }
        if (p[1] - l).abs() <= tol {
            f.insert(Edge::Top);
        }
        if (p[0] + l).abs() <= tol {
            f.insert(Edge::Left);
        }
        f
    }

    pub fn edge_length(&self) -> f64 {
        2.0 * self.half_extent
    }
}

/// Dirichlet data, evaluated at any boundary node (atom or repatom).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryConditions {
    /// `-u_d` on Γ1 and `+u_d` on Γ3 in X₂; every boundary node fixed in X₁.
    Tension { u_d: f64 },
    /// Displacement `G x + c` prescribed in both directions on all edges.
    Affine { gradient: [[f64; 2]; 2], offset: [f64; 2] },
}

impl BoundaryConditions {
    /// Tension with `u_d` set to 1 % of the domain edge.
    pub fn default_tension(domain: &Domain) -> Self {
        Self::Tension {
            u_d: 0.01 * domain.edge_length(),
        }
    }

    /// Prescribed displacement components at a node on the given edges.
    pub fn prescribed(&self, x: Point, edges: EdgeFlags) -> [Option<f64>; 2] {
        if edges.is_empty() {
            return [None, None];
        }
        match *self {
            Self::Tension { u_d } => {
                if edges.contains(Edge::Bottom) {
                    [Some(0.0), Some(-u_d)]
                } else if edges.contains(Edge::Top) {
                    [Some(0.0), Some(u_d)]
                } else {
                    [Some(0.0), None]
                }
            }
            Self::Affine { gradient: g, offset: c } => [
                Some(g[0][0] * x[0] + g[0][1] * x[1] + c[0]),
                Some(g[1][0] * x[0] + g[1][1] * x[1] + c[1]),
            ],
        }
    }

    /// Same conditions with all prescribed values multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            Self::Tension { u_d } => Self::Tension { u_d: u_d * s },
            Self::Affine { gradient: g, offset: c } => Self::Affine {
                gradient: [[g[0][0] * s, g[0][1] * s], [g[1][0] * s, g[1][1] * s]],
                offset: [c[0] * s, c[1] * s],
            },
        }
    }

    /// Affine displacement field whose restriction these conditions are, if any.
    pub fn affine_field(&self, x: Point) -> Option<[f64; 2]> {
        match *self {
            Self::Affine { gradient: g, offset: c } => Some([
                g[0][0] * x[0] + g[0][1] * x[1] + c[0],
                g[1][0] * x[0] + g[1][1] * x[1] + c[1],
            ]),
            Self::Tension { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatticeModel {
    /// Atoms per side.
    pub n_side: usize,
    pub spacing: f64,
    pub domain: Domain,
    /// Flat `[x0, y0, x1, y1, ...]`.
    pub positions0: Vec<f64>,
    pub interactions: Vec<Interaction>,
    /// Γ1..Γ4 atom index sets (corners appear in two sets).
    pub boundary_sets: [Vec<usize>; 4],
    pub material: MaterialRule,
}

impl LatticeModel {
    pub fn n_atoms(&self) -> usize {
        self.positions0.len() / 2
    }

    pub fn n_dofs(&self) -> usize {
        self.positions0.len()
    }

    pub fn position0(&self, atom: usize) -> Point {
        [self.positions0[2 * atom], self.positions0[2 * atom + 1]]
    }

    pub fn atom_at(&self, i: usize, j: usize) -> usize {
        i + j * self.n_side
    }

    pub fn grid_coords(&self, atom: usize) -> (usize, usize) {
        (atom % self.n_side, atom / self.n_side)
    }

    pub fn half_extent(&self) -> f64 {
        self.domain.half_extent
    }

    pub fn edges_of(&self, atom: usize) -> EdgeFlags {
        self.domain.edges_of(self.position0(atom))
    }

    /// `E·A/d` of the matrix material, the force scale for tolerances.
    pub fn reference_stiffness(&self) -> f64 {
        self.material.matrix_modulus * self.material.area / self.spacing
    }

    /// Nearest atom to a point (the lattice is a regular grid).
    pub fn nearest_atom(&self, p: Point) -> Option<usize> {
        let l = self.domain.half_extent;
        let fi = ((p[0] + l) / self.spacing).round();
        let fj = ((p[1] + l) / self.spacing).round();
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.n_side && j < self.n_side).then(|| self.atom_at(i, j))
    }

    /// Prescribed DOFs `(dof, displacement)` for the given conditions.
    pub fn prescribed_dofs(&self, bcs: &BoundaryConditions) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for a in 0..self.n_atoms() {
            let edges = self.edges_of(a);
            let p = bcs.prescribed(self.position0(a), edges);
            for (c, v) in p.iter().enumerate() {
                if let Some(v) = v {
                    out.push((2 * a + c, *v));
                }
            }
        }
        out
    }
}

/// Generates the X-braced lattice on `[-half_extent, half_extent]²`.
pub fn build_lattice(half_extent: f64, spacing: f64, material: MaterialRule) -> Result<LatticeModel> {
    if !(spacing > 0.0) || !(half_extent > 0.0) {
        return Err(XqcError::InvalidGeometry(format!(
            "spacing {spacing} and half extent {half_extent} must be positive"
        )));
    }
    let ratio = half_extent / spacing;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(XqcError::InvalidGeometry(format!(
            "half extent {half_extent} is not an integer multiple of spacing {spacing}"
        )));
    }
    if !(material.matrix_modulus > 0.0 && material.area > 0.0) {
        return Err(XqcError::InvalidGeometry("modulus and area must be positive".into()));
    }
    if let Some(p) = material.phase {
        if !(p.young_modulus > 0.0) {
            return Err(XqcError::InvalidGeometry("phase modulus must be positive".into()));
        }
    }
    let cells = ratio.round() as usize;
    let n = 2 * cells + 1;
    let mut positions0 = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            positions0.push(-half_extent + i as f64 * spacing);
            positions0.push(-half_extent + j as f64 * spacing);
        }
    }
    let idx = |i: usize, j: usize| i + j * n;
    let pos = |a: usize| [positions0[2 * a], positions0[2 * a + 1]];
    let mut interactions = Vec::with_capacity(2 * n * (n - 1) + 2 * (n - 1) * (n - 1));
    let mut push = |a: usize, b: usize| {
        let (pa, pb) = (pos(a), pos(b));
        let r0 = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        interactions.push(Interaction {
            alpha: a,
            beta: b,
            young_modulus: material.modulus_for(pa, pb),
            area: material.area,
            rest_length: r0,
        });
    };
    for j in 0..n {
        for i in 0..n {
            if i + 1 < n {
                push(idx(i, j), idx(i + 1, j));
            }
            if j + 1 < n {
                push(idx(i, j), idx(i, j + 1));
            }
            if i + 1 < n && j + 1 < n {
                push(idx(i, j), idx(i + 1, j + 1));
                push(idx(i + 1, j), idx(i, j + 1));
            }
        }
    }
    let domain = Domain { half_extent };
    let mut boundary_sets: [Vec<usize>; 4] = Default::default();
    for a in 0..n * n {
        let flags = domain.edges_of(pos(a));
        for e in Edge::ALL {
            if flags.contains(e) {
                boundary_sets[e.index()].push(a);
            }
        }
    }
    Ok(LatticeModel {
        n_side: n,
        spacing,
        domain,
        positions0,
        interactions,
        boundary_sets,
        material,
    })
}

/// Current length of an interaction.
pub fn interaction_length(positions: &[f64], it: &Interaction) -> f64 {
    let dx = positions[2 * it.beta] - positions[2 * it.alpha];
    let dy = positions[2 * it.beta + 1] - positions[2 * it.alpha + 1];
    (dx * dx + dy * dy).sqrt()
}

/// Elastic energy `E A / (2 r0) (r - r0)²` of one interaction.
pub fn interaction_energy(positions: &[f64], it: &Interaction) -> Result<f64> {
    if !(it.rest_length > 0.0) {
        return Err(XqcError::InvalidGeometry(format!(
            "interaction {}-{} has zero rest length",
            it.alpha, it.beta
        )));
    }
    let r = interaction_length(positions, it);
    Ok(0.5 * it.axial_stiffness() * (r - it.rest_length).powi(2))
}

/// Energy, force on the relative vector `r_beta - r_alpha`, and its 2×2 Hessian.
#[inline]
pub(crate) fn bond_terms(
    delta: [f64; 2],
    it: &Interaction,
    floor: f64,
    index: usize,
) -> Result<(f64, [f64; 2], [[f64; 2]; 2])> {
    let len = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    if len < floor {
        return Err(XqcError::DegenerateConfiguration {
            interaction: index,
            length: len,
            floor,
        });
    }
    let k = it.axial_stiffness();
    let n = [delta[0] / len, delta[1] / len];
    let stretch = len - it.rest_length;
    let energy = 0.5 * k * stretch * stretch;
    let g = [k * stretch * n[0], k * stretch * n[1]];
    let geo = 1.0 - it.rest_length / len;
    let h = [
        [k * (n[0] * n[0] + geo * (1.0 - n[0] * n[0])), k * (n[0] * n[1] * (1.0 - geo))],
        [k * (n[1] * n[0] * (1.0 - geo)), k * (n[1] * n[1] + geo * (1.0 - n[1] * n[1]))],
    ];
    Ok((energy, g, h))
}

#[inline]
pub(crate) fn bond_delta(positions: &[f64], it: &Interaction) -> [f64; 2] {
    [
        positions[2 * it.beta] - positions[2 * it.alpha],
        positions[2 * it.beta + 1] - positions[2 * it.alpha + 1],
    ]
}

/// Total energy and internal force vector `∂Π/∂r`.
pub fn energy_and_gradient(model: &LatticeModel, positions: &[f64], floor: f64) -> Result<(f64, Vec<f64>)> {
    assert_eq!(positions.len(), model.n_dofs());
    let terms: Vec<(f64, [f64; 2])> = model
        .interactions
        .par_iter()
        .enumerate()
        .map(|(e, it)| bond_terms(bond_delta(positions, it), it, floor, e).map(|(en, g, _)| (en, g)))
        .collect::<Result<_>>()?;
    let mut energy = 0.0;
    let mut grad = vec![0.0; model.n_dofs()];
    for (it, (en, g)) in model.interactions.iter().zip(&terms) {
        energy += en;
        grad[2 * it.alpha] -= g[0];
        grad[2 * it.alpha + 1] -= g[1];
        grad[2 * it.beta] += g[0];
        grad[2 * it.beta + 1] += g[1];
    }
    Ok((energy, grad))
}

/// Total energy only.
pub fn total_energy(model: &LatticeModel, positions: &[f64], floor: f64) -> Result<f64> {
    let parts: Vec<f64> = model
        .interactions
        .par_iter()
        .enumerate()
        .map(|(e, it)| bond_terms(bond_delta(positions, it), it, floor, e).map(|t| t.0))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// Sparse symmetric Hessian on a pattern restricted to interacting pairs.
#[derive(Debug, Clone)]
pub struct LatticeHessian {
    pub pattern: SparsePattern,
    pub values: Vec<f64>,
}

/// Precomputed scatter map from interaction 2×2 blocks to CSC slots.
#[derive(Debug, Clone)]
pub struct HessianLayout {
    pattern: SparsePattern,
    /// Per interaction: slots for (aa, bb, ab, ba) blocks, each 2×2 row-major.
    slots: Vec<[[usize; 4]; 4]>,
}

impl HessianLayout {
    pub fn new(model: &LatticeModel) -> Self {
        let mut coords = Vec::with_capacity(model.interactions.len() * 16 + model.n_dofs());
        for d in 0..model.n_dofs() {
            coords.push((d, d));
        }
        for it in &model.interactions {
            for &p in &[it.alpha, it.beta] {
                for &q in &[it.alpha, it.beta] {
                    for ci in 0..2 {
                        for cj in 0..2 {
                            coords.push((2 * p + ci, 2 * q + cj));
                        }
                    }
                }
            }
        }
        let pattern = SparsePattern::from_coordinates(model.n_dofs(), coords);
        let block = |p: usize, q: usize| {
            let mut s = [0usize; 4];
            for ci in 0..2 {
                for cj in 0..2 {
                    s[2 * ci + cj] = pattern.slot(2 * p + ci, 2 * q + cj).expect("slot exists");
                }
            }
            s
        };
        let slots = model
            .interactions
            .iter()
            .map(|it| {
                [
                    block(it.alpha, it.alpha),
                    block(it.beta, it.beta),
                    block(it.alpha, it.beta),
                    block(it.beta, it.alpha),
                ]
            })
            .collect();
        Self { pattern, slots }
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    fn assemble(&self, model: &LatticeModel, positions: &[f64], floor: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let terms: Vec<(f64, [f64; 2], [[f64; 2]; 2])> = model
            .interactions
            .par_iter()
            .enumerate()
            .map(|(e, it)| bond_terms(bond_delta(positions, it), it, floor, e))
            .collect::<Result<_>>()?;
        let mut energy = 0.0;
        let mut grad = vec![0.0; model.n_dofs()];
        let mut values = vec![0.0; self.pattern.nnz()];
        for ((it, (en, g, h)), slots) in model.interactions.iter().zip(&terms).zip(&self.slots) {
            energy += en;
            grad[2 * it.alpha] -= g[0];
            grad[2 * it.alpha + 1] -= g[1];
            grad[2 * it.beta] += g[0];
            grad[2 * it.beta + 1] += g[1];
            for ci in 0..2 {
                for cj in 0..2 {
                    let v = h[ci][cj];
                    values[slots[0][2 * ci + cj]] += v;
                    values[slots[1][2 * ci + cj]] += v;
                    values[slots[2][2 * ci + cj]] -= v;
                    values[slots[3][2 * ci + cj]] -= v;
                }
            }
        }
        Ok((energy, grad, values))
    }
}

/// Energy, gradient `∂Π/∂r` and sparse Hessian at `positions`.
pub fn assemble_energy_gradient_hessian(
    model: &LatticeModel,
    positions: &[f64],
    floor: f64,
) -> Result<(f64, Vec<f64>, LatticeHessian)> {
    let layout = HessianLayout::new(model);
    let (e, g, values) = layout.assemble(model, positions, floor)?;
    Ok((
        e,
        g,
        LatticeHessian {
            pattern: layout.pattern,
            values,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub positions: Vec<f64>,
    pub energy: f64,
    pub internal_force: Vec<f64>,
    /// ∞-norm of the internal force over free DOFs.
    pub residual_norm: f64,
    /// Newton iterations per load step.
    pub iterations: Vec<usize>,
}

impl EquilibriumState {
    pub fn displacements(&self, model: &LatticeModel) -> Vec<f64> {
        self.positions
            .iter()
            .zip(&model.positions0)
            .map(|(x, x0)| x - x0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub load_steps: usize,
    pub max_iter: usize,
    /// Absolute force tolerance; `None` uses `1e-8 · E A / d`.
    pub tolerance: Option<f64>,
    pub length_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            load_steps: 1,
            max_iter: 50,
            tolerance: None,
            length_floor: DEFAULT_LENGTH_FLOOR,
        }
    }
}

impl SolverOptions {
    pub fn tolerance_for(&self, model: &LatticeModel) -> f64 {
        self.tolerance.unwrap_or(1e-8 * model.reference_stiffness())
    }
}

/// Full-resolution equilibrium by Newton–Raphson with pseudo-time load steps.
pub fn solve_full(model: &LatticeModel, bcs: &BoundaryConditions, opts: &SolverOptions) -> Result<EquilibriumState> {
    let n_dofs = model.n_dofs();
    let tol = opts.tolerance_for(model);
    let layout = HessianLayout::new(model);
    let mut solver = SymmetricSolver::new(layout.pattern().clone());
    let mut positions = model.positions0.clone();
    let mut iterations = Vec::with_capacity(opts.load_steps);
    let steps = opts.load_steps.max(1);

    let mut fixed = vec![false; n_dofs];
    for (d, _) in model.prescribed_dofs(bcs) {
        fixed[d] = true;
    }
    let diag_slots: Vec<usize> = (0..n_dofs).map(|d| layout.pattern().slot(d, d).unwrap()).collect();
    let (col_ptr, row_idx) = (layout.pattern().col_ptr().to_vec(), layout.pattern().row_idx().to_vec());

    let mut last = (0.0, vec![0.0; n_dofs], 0.0);
    for k in 1..=steps {
        let step_bcs = bcs.scaled(k as f64 / steps as f64);
        for (d, u) in model.prescribed_dofs(&step_bcs) {
            positions[d] = model.positions0[d] + u;
        }
        let mut converged = false;
        let mut iters = 0;
        for it in 0..=opts.max_iter {
            let (energy, grad, mut values) = layout.assemble(model, &positions, opts.length_floor)?;
            let res = free_inf_norm(&grad, &fixed);
            last = (energy, grad.clone(), res);
            if res <= tol {
                converged = true;
                iters = it;
                break;
            }
            if it == opts.max_iter {
                iters = it;
                break;
            }
            // Replace fixed rows/columns by identity so the pattern stays fixed.
            for c in 0..n_dofs {
                for s in col_ptr[c]..col_ptr[c + 1] {
                    let r = row_idx[s];
                    if fixed[r] || fixed[c] {
                        values[s] = 0.0;
                    }
                }
            }
            for d in 0..n_dofs {
                if fixed[d] {
                    values[diag_slots[d]] = 1.0;
                }
            }
            let fact = solver.factorize(&values)?;
            let mut step: Vec<f64> = grad.iter().zip(&fixed).map(|(g, &f)| if f { 0.0 } else { -g }).collect();
            fact.solve_in_place(&mut step);
            positions = backtrack(model, &positions, &step, energy, opts.length_floor)?;
        }
        iterations.push(iters);
        if !converged {
            return Err(XqcError::NonConvergence {
                iterations: iters,
                residual: last.2,
            });
        }
    }
    Ok(EquilibriumState {
        positions,
        energy: last.0,
        internal_force: last.1,
        residual_norm: last.2,
        iterations,
    })
}

fn free_inf_norm(grad: &[f64], fixed: &[bool]) -> f64 {
    grad.iter()
        .zip(fixed)
        .filter(|(_, &f)| !f)
        .fold(0.0_f64, |m, (g, _)| m.max(g.abs()))
}

/// Full Newton step unless it increases the energy, in which case the step
/// is halved (at most 20 times).
fn backtrack(model: &LatticeModel, x: &[f64], step: &[f64], e0: f64, floor: f64) -> Result<Vec<f64>> {
    let mut t = 1.0;
    for _ in 0..20 {
        let trial: Vec<f64> = x.iter().zip(step).map(|(a, s)| a + t * s).collect();
        match total_energy(model, &trial, floor) {
            Ok(e) if e <= e0 + 1e-12 * e0.abs().max(1e-300) => return Ok(trial),
            Ok(_) | Err(XqcError::DegenerateConfiguration { .. }) => t *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Ok(x.iter().zip(step).map(|(a, s)| a + t * s).collect())
}

/// Tolerance used when deciding that an atom lies on a fiber segment.
pub const FIBER_TOL: f64 = ON_INTERFACE_TOL;

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> MaterialRule {
        MaterialRule::homogeneous(1.0, 1.0)
    }

    #[test]
    fn three_by_three_counts() {
        let m = build_lattice(1.0, 1.0, unit()).unwrap();
        assert_eq!(m.n_atoms(), 9);
        assert_eq!(m.interactions.len(), 20);
        let mut deg = vec![0; 9];
        for it in &m.interactions {
            deg[it.alpha] += 1;
            deg[it.beta] += 1;
        }
        assert_eq!(deg[4], 8);
        assert_eq!(deg[0], 3);
        assert_eq!(deg[1], 5);
    }

    #[test]
    fn interaction_counts_closed_form() {
        for cells in 1..6 {
            let m = build_lattice(cells as f64, 1.0, unit()).unwrap();
            let n = 2 * cells + 1;
            assert_eq!(m.interactions.len(), 2 * n * (n - 1) + 2 * (n - 1) * (n - 1));
        }
    }

    #[test]
    fn rejects_non_integral_extent() {
        assert!(matches!(
            build_lattice(1.5, 1.0, unit()),
            Err(XqcError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn energy_of_stretched_bond() {
        let it = Interaction {
            alpha: 0,
            beta: 1,
            young_modulus: 1.0,
            area: 1.0,
            rest_length: 1.0,
        };
        let e = interaction_energy(&[0.0, 0.0, 1.1, 0.0], &it).unwrap();
        assert!((e - 0.005).abs() < 1e-15);
        assert_eq!(interaction_energy(&[0.0, 0.0, 1.0, 0.0], &it).unwrap(), 0.0);
        let e2 = interaction_energy(&[3.0, -2.0, 4.1, -2.0], &it).unwrap();
        assert!((e2 - 0.005).abs() < 1e-14);
        let zero = Interaction { rest_length: 0.0, ..it };
        assert!(interaction_energy(&[0.0; 4], &zero).is_err());
    }

    #[test]
    fn uniaxial_bond_gradient() {
        let it = Interaction {
            alpha: 0,
            beta: 1,
            young_modulus: 2.0,
            area: 3.0,
            rest_length: 1.0,
        };
        let eps = 0.01;
        let (_, g, _) = bond_terms([1.0 + eps, 0.0], &it, 1e-12, 0).unwrap();
        assert!((g[0] - 6.0 * eps).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn degenerate_configuration_detected() {
        let m = build_lattice(1.0, 1.0, unit()).unwrap();
        let mut x = m.positions0.clone();
        x[2] = x[0];
        x[3] = x[1];
        assert!(matches!(
            energy_and_gradient(&m, &x, DEFAULT_LENGTH_FLOOR),
            Err(XqcError::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn zero_displacement_solve_is_rest_state() {
        let m = build_lattice(2.0, 1.0, unit()).unwrap();
        let bcs = BoundaryConditions::Tension { u_d: 0.0 };
        let s = solve_full(&m, &bcs, &SolverOptions::default()).unwrap();
        assert_eq!(s.energy, 0.0);
        assert_eq!(s.positions, m.positions0);
    }

    #[test]
    fn material_assignment_by_midpoint() {
        let geom = InterfaceGeometry::square([0.0, 0.0], 1.0).unwrap();
        let rule = unit().with_phase(geom, 10.0);
        // bond from (0,0) to (1,0): midpoint (0.5,0) inside
        assert_eq!(rule.modulus_for([0.0, 0.0], [1.0, 0.0]), 10.0);
        // bond along the interface x = 1: midpoint on the interface
        assert_eq!(rule.modulus_for([1.0, 0.0], [1.0, 1.0]), 1.0);
        let fiber = InterfaceGeometry::segment([0.0, 0.0], [3.0, 3.0]).unwrap();
        let rule = unit().with_phase(fiber, 100.0);
        assert_eq!(rule.modulus_for([1.0, 1.0], [2.0, 2.0]), 100.0);
        assert_eq!(rule.modulus_for([1.0, 1.0], [2.0, 1.0]), 1.0);
        assert_eq!(rule.modulus_for([3.0, 3.0], [4.0, 4.0]), 1.0);
    }

    #[test]
    fn edge_flags_and_tension_bcs() {
        let d = Domain { half_extent: 2.0 };
        let bc = BoundaryConditions::Tension { u_d: 0.5 };
        assert_eq!(bc.prescribed([0.0, -2.0], d.edges_of([0.0, -2.0])), [Some(0.0), Some(-0.5)]);
        assert_eq!(bc.prescribed([2.0, 1.0], d.edges_of([2.0, 1.0])), [Some(0.0), None]);
        assert_eq!(bc.prescribed([2.0, 2.0], d.edges_of([2.0, 2.0])), [Some(0.0), Some(0.5)]);
        assert_eq!(bc.prescribed([0.0, 0.0], d.edges_of([0.0, 0.0])), [None, None]);
    }
}
