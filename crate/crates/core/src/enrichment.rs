//! Heaviside enrichment of the standard interpolation and the
//! Gram–Schmidt orthonormalization of the enriched columns.

use rayon::prelude::*;

use crate::basis::ShapeTable;
use crate::error::{Result, XqcError};
use crate::geometry::{InterfaceGeometry, ON_INTERFACE_TOL};
use crate::lattice::LatticeModel;
use crate::lme::RepatomGrid;

/// Relative residual norm below which a column counts as linearly dependent.
pub const DEFAULT_DROP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrichmentKind {
    /// `χ = ±0.5` on either side of a closed interface, 0 on it.
    Sign,
    /// `χ = 0.5` on the fiber, 0 elsewhere.
    Step,
}

impl EnrichmentKind {
    pub fn for_geometry(g: &InterfaceGeometry) -> Self {
        if g.is_closed() {
            Self::Sign
        } else {
            Self::Step
        }
    }

    pub fn chi(self, psi: f64) -> f64 {
        match self {
            Self::Sign if psi.abs() <= ON_INTERFACE_TOL => 0.0,
            Self::Sign if psi < 0.0 => -0.5,
            Self::Sign => 0.5,
            Self::Step if psi.abs() <= ON_INTERFACE_TOL => 0.5,
            Self::Step => 0.0,
        }
    }
}

/// Signed distance and Heaviside value at every atom.
#[derive(Debug, Clone)]
pub struct EnrichmentField {
    pub psi: Vec<f64>,
    pub chi: Vec<f64>,
    pub kind: EnrichmentKind,
}

impl EnrichmentField {
    pub fn heaviside_values(geometry: &InterfaceGeometry, model: &LatticeModel) -> Self {
        let kind = EnrichmentKind::for_geometry(geometry);
        let psi: Vec<f64> = (0..model.n_atoms())
            .map(|a| geometry.signed_distance(model.position0(a)))
            .collect();
        let chi = psi.iter().map(|&p| kind.chi(p)).collect();
        Self { psi, chi, kind }
    }
}

/// Atoms whose lattice cell is crossed by the interface.
pub fn interface_atoms(geometry: &InterfaceGeometry, model: &LatticeModel) -> Vec<usize> {
    let half = 0.5 * model.spacing;
    (0..model.n_atoms())
        .filter(|&a| geometry.crosses_cell(model.position0(a), half))
        .collect()
}

/// Distance from every repatom to the nearest interface atom (infinite
/// when the interface misses the lattice).
pub fn repatom_interface_distance(grid: &RepatomGrid, model: &LatticeModel, geometry: &InterfaceGeometry) -> Vec<f64> {
    let pts: Vec<[f64; 2]> = interface_atoms(geometry, model)
        .into_iter()
        .map(|a| model.position0(a))
        .collect();
    grid.positions
        .par_iter()
        .map(|p| {
            pts.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Repatoms closer than `radius_multiple · h` to the interface, in
/// ascending index order.
pub fn select_enriched_repatoms(grid: &RepatomGrid, distance: &[f64], radius_multiple: f64) -> Vec<usize> {
    let r = radius_multiple * grid.spacing;
    let sel: Vec<usize> = (0..grid.n_rep()).filter(|&b| distance[b] < r).collect();
    if sel.is_empty() {
        log::warn!("no repatom lies within {r} of the interface; proceeding without enrichment");
    }
    sel
}

/// Unorthogonalized enriched columns, dense over the atoms where at least
/// one column is nonzero.
#[derive(Debug, Clone)]
pub struct RawColumns {
    /// Enriched repatom of each column.
    pub order: Vec<usize>,
    /// Sorted atom indices spanned by the dense column storage.
    pub atoms: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

/// `φ_{β_j}(α) (χ_α - χ_{β_j})` for every enriched repatom `β_j` in `order`.
/// Columns that vanish identically are left out.
pub fn build_enriched_columns(
    shapes: &ShapeTable,
    field: &EnrichmentField,
    grid: &RepatomGrid,
    order: &[usize],
) -> RawColumns {
    let mut slot = vec![usize::MAX; grid.n_rep()];
    for (j, &b) in order.iter().enumerate() {
        slot[b] = j;
    }
    let chi_rep: Vec<f64> = grid.atom_of_repatom.iter().map(|&a| field.chi[a]).collect();
    // Per atom: (column, value) entries.
    let entries: Vec<Vec<(usize, f64)>> = (0..shapes.n_rows())
        .into_par_iter()
        .map(|a| {
            let (cols, vals) = shapes.row(a);
            cols.iter()
                .zip(vals)
                .filter_map(|(&b, &p)| {
                    let j = slot[b as usize];
                    if j == usize::MAX {
                        return None;
                    }
                    let v = p * (field.chi[a] - chi_rep[b as usize]);
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let mut nonzero = vec![false; order.len()];
    let mut atoms = Vec::new();
    for (a, e) in entries.iter().enumerate() {
        if !e.is_empty() {
            atoms.push(a);
            for &(j, _) in e {
                nonzero[j] = true;
            }
        }
    }
    let mut remap = vec![usize::MAX; order.len()];
    let mut kept = Vec::new();
    for (j, &nz) in nonzero.iter().enumerate() {
        if nz {
            remap[j] = kept.len();
            kept.push(order[j]);
        }
    }
    let mut columns = vec![vec![0.0; atoms.len()]; kept.len()];
    for (k, &a) in atoms.iter().enumerate() {
        for &(j, v) in &entries[a] {
            columns[remap[j]][k] = v;
        }
    }
    RawColumns {
        order: kept,
        atoms,
        columns,
    }
}

/// Orthonormal enriched columns with the data needed to differentiate them.
#[derive(Debug, Clone, Default)]
pub struct EnrichedBasis {
    /// Enriched repatom of each kept column.
    pub order: Vec<usize>,
    /// Sorted atom indices of the dense column storage.
    pub atoms: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
    /// Raw columns of the kept repatoms.
    pub raw: Vec<Vec<f64>>,
    /// Norms of the orthogonalized columns before normalization.
    pub norms: Vec<f64>,
    /// Repatoms whose columns were dropped as linearly dependent.
    pub dropped: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Modified Gram–Schmidt in the order of `raw.order`, dropping columns whose
/// residual norm falls below `drop_tol` times their original norm.
pub fn gram_schmidt_orthonormalize(raw: RawColumns, drop_tol: f64) -> Result<EnrichedBasis> {
    let mut out = EnrichedBasis {
        atoms: raw.atoms,
        ..Default::default()
    };
    if raw.columns.is_empty() {
        return Ok(out);
    }
    for (b, a) in raw.order.into_iter().zip(raw.columns) {
        let mut v = a.clone();
        for e in &out.columns {
            let c = dot(&v, e);
            axpy(&mut v, -c, e);
        }
        let n0 = dot(&a, &a).sqrt();
        let n = dot(&v, &v).sqrt();
        if !(n >= drop_tol * n0) || n == 0.0 {
            log::warn!("enriched column of repatom {b} is linearly dependent (residual {n:e}); dropped");
            out.dropped.push(b);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        out.order.push(b);
        out.columns.push(v);
        out.raw.push(a);
        out.norms.push(n);
    }
    if out.columns.is_empty() {
        return Err(XqcError::EnrichmentDegeneracy);
    }
    Ok(out)
}

impl EnrichedBasis {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Position of `atom` in the dense storage.
    pub fn atom_slot(&self, atom: usize) -> Option<usize> {
        self.atoms.binary_search(&atom).ok()
    }

    /// Value of column `j` at `atom`.
    pub fn value(&self, j: usize, atom: usize) -> f64 {
        self.atom_slot(atom).map(|k| self.columns[j][k]).unwrap_or(0.0)
    }

    /// Row-major copy: for each stored atom the values of all columns.
    pub fn rows(&self) -> Vec<f64> {
        let m = self.n_columns();
        let mut r = vec![0.0; self.atoms.len() * m];
        for (j, c) in self.columns.iter().enumerate() {
            for (k, v) in c.iter().enumerate() {
                r[k * m + j] = *v;
            }
        }
        r
    }

    /// Directional derivative of the orthonormal columns given the
    /// derivatives `d_raw` of the raw columns.
    pub fn forward_derivative(&self, d_raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut de: Vec<Vec<f64>> = Vec::with_capacity(self.n_columns());
        for j in 0..self.n_columns() {
            let a = &self.raw[j];
            let mut dv = d_raw[j].clone();
            for i in 0..j {
                let e = &self.columns[i];
                let c = dot(a, e);
                let dc = dot(&d_raw[j], e) + dot(a, &de[i]);
                axpy(&mut dv, -dc, e);
                axpy(&mut dv, -c, &de[i]);
            }
            let e = &self.columns[j];
            let proj = dot(e, &dv);
            let n = self.norms[j];
            de.push(dv.iter().zip(e).map(|(d, ei)| (d - proj * ei) / n).collect());
        }
        de
    }

    /// Reverse-mode derivative: maps sensitivities with respect to the
    /// orthonormal columns to sensitivities with respect to the raw ones.
    pub fn adjoint(&self, mut e_bar: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let m = self.n_columns();
        let mut a_bar = vec![Vec::new(); m];
        for j in (0..m).rev() {
            let e = &self.columns[j];
            let n = self.norms[j];
            let proj = dot(e, &e_bar[j]);
            let v_bar: Vec<f64> = e_bar[j].iter().zip(e).map(|(b, ei)| (b - proj * ei) / n).collect();
            let mut ab = v_bar.clone();
            let a = &self.raw[j];
            for i in 0..j {
                let ei = &self.columns[i];
                let c = dot(a, ei);
                let c_bar = -dot(&v_bar, ei);
                axpy(&mut e_bar[i], -c, &v_bar);
                axpy(&mut e_bar[i], c_bar, a);
                axpy(&mut ab, c_bar, ei);
            }
            a_bar[j] = ab;
        }
        a_bar
    }
}
