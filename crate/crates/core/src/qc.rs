//! A quasicontinuum problem instance: lattice, repatoms, standard basis,
//! optional enrichment and boundary conditions. Evaluates the reduced
//! equilibrium for a locality field and the energy gradient with respect
//! to that field.

use rayon::prelude::*;

use crate::basis::{LinearBasis, LmeTable};
use crate::enrichment::{
    build_enriched_columns, gram_schmidt_orthonormalize, repatom_interface_distance, select_enriched_repatoms, EnrichedBasis, EnrichmentField,
    DEFAULT_DROP_TOLERANCE,
};
use crate::error::{Result, XqcError};
use crate::geometry::{InterfaceGeometry, Point};
use crate::lattice::{BoundaryConditions, LatticeModel};
use crate::lme::{LmeBasis, RepatomGrid};
use crate::reduce::{reduced_prescribed_dofs, solve_reduced, HessianCache, InterpolationMatrix, ReducedOptions, ReducedState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardBasis {
    Lme,
    Linear,
}

/// Heaviside enrichment around an interface.
#[derive(Debug, Clone)]
pub struct Enrichment {
    pub geometry: InterfaceGeometry,
    pub field: EnrichmentField,
    /// Candidate enriched repatoms in processing order.
    pub candidates: Vec<usize>,
}

pub struct QcProblem<'a> {
    pub model: &'a LatticeModel,
    pub grid: RepatomGrid,
    pub kind: StandardBasis,
    lme: Option<LmeBasis>,
    linear: Option<LinearBasis>,
    pub enrichment: Option<Enrichment>,
    pub prescribed: Vec<(usize, f64)>,
    pub options: ReducedOptions,
    pub drop_tolerance: f64,
    atom_points: Vec<Point>,
}

/// Result of one reduced solve.
#[derive(Debug, Clone)]
pub struct QcEvaluation {
    pub phi: InterpolationMatrix,
    pub lme: Option<LmeTable>,
    pub state: ReducedState,
}

impl<'a> QcProblem<'a> {
    /// `enrich` gives the interface and the enrichment radius in units of `h`.
    /// For the linear basis every repatom is a candidate and only those whose
    /// enriched column is nonzero are kept.
    pub fn new(
        model: &'a LatticeModel,
        h: f64,
        kind: StandardBasis,
        enrich: Option<(InterfaceGeometry, f64)>,
        bcs: &BoundaryConditions,
        options: ReducedOptions,
    ) -> Result<Self> {
        let grid = RepatomGrid::regular(model, h)?;
        let (lme, linear) = match kind {
            StandardBasis::Lme => (Some(LmeBasis::new(grid.clone())), None),
            StandardBasis::Linear => (None, Some(LinearBasis::new(grid.clone())?)),
        };
        let enrichment = enrich.map(|(geometry, radius)| {
            let field = EnrichmentField::heaviside_values(&geometry, model);
            let candidates = match kind {
                StandardBasis::Lme => {
                    let dist = repatom_interface_distance(&grid, model, &geometry);
                    select_enriched_repatoms(&grid, &dist, radius)
                }
                StandardBasis::Linear => (0..grid.n_rep()).collect(),
            };
            Enrichment {
                geometry,
                field,
                candidates,
            }
        });
        let prescribed = reduced_prescribed_dofs(&grid, bcs);
        let atom_points = (0..model.n_atoms()).map(|a| model.position0(a)).collect();
        Ok(Self {
            model,
            grid,
            kind,
            lme,
            linear,
            enrichment,
            prescribed,
            options,
            drop_tolerance: DEFAULT_DROP_TOLERANCE,
            atom_points,
        })
    }

    pub fn n_rep(&self) -> usize {
        self.grid.n_rep()
    }

    /// Signed distance of every repatom to the interface, if any.
    pub fn repatom_psi(&self) -> Option<Vec<f64>> {
        self.enrichment
            .as_ref()
            .map(|e| self.grid.positions.iter().map(|&p| e.geometry.signed_distance(p)).collect())
    }

    /// Builds `Φ` for the locality field (ignored by the linear basis).
    pub fn build_phi(&self, gammas: &[f64], warm: Option<&LmeTable>) -> Result<(InterpolationMatrix, Option<LmeTable>)> {
        let (shapes, table) = match self.kind {
            StandardBasis::Lme => {
                let basis = self.lme.as_ref().unwrap();
                let warm_l = warm.map(|t| t.warm_start());
                let t = LmeTable::build(basis, &self.atom_points, gammas, warm_l.as_deref())?;
                (t.shapes.clone(), Some(t))
            }
            StandardBasis::Linear => (self.linear.as_ref().unwrap().table(&self.atom_points)?, None),
        };
        let enriched = match &self.enrichment {
            Some(e) if !e.candidates.is_empty() => {
                let raw = build_enriched_columns(&shapes, &e.field, &self.grid, &e.candidates);
                if raw.columns.is_empty() {
                    EnrichedBasis::default()
                } else {
                    gram_schmidt_orthonormalize(raw, self.drop_tolerance)?
                }
            }
            _ => EnrichedBasis::default(),
        };
        Ok((InterpolationMatrix::new(shapes, enriched), table))
    }

    /// Reduced equilibrium for `gammas`, reusing `previous` for warm starts.
    pub fn solve(&self, gammas: &[f64], cache: &mut HessianCache, previous: Option<&QcEvaluation>) -> Result<QcEvaluation> {
        let (phi, lme) = self.build_phi(gammas, previous.and_then(|p| p.lme.as_ref()))?;
        let q0 = previous.map(|p| remap_dofs(&p.phi, &p.state.q, &phi));
        let state = solve_reduced(self.model, &phi, &self.prescribed, &self.options, cache, q0.as_deref())?;
        Ok(QcEvaluation { phi, lme, state })
    }

    /// `∂Π/∂γ_c` for every repatom at a converged state. Only explicit
    /// dependence of `Φ` on `γ` contributes, since the free reduced gradient
    /// vanishes and prescribed DOFs do not depend on `γ`.
    pub fn energy_gradient(&self, eval: &QcEvaluation) -> Result<Vec<f64>> {
        let Some(table) = &eval.lme else {
            return Err(XqcError::InvalidConfig(
                "locality gradient requires an LME basis".into(),
            ));
        };
        let state = &eval.state;
        if !state.converged {
            return Err(XqcError::StaleState("reduced state is not converged".into()));
        }
        let phi = &eval.phi;
        let n_rep = self.n_rep();
        let f = &state.internal_force;
        let q = &state.q;
        let enr = &phi.enriched;
        // Sensitivities with respect to raw enriched columns.
        let a_bar = if enr.n_columns() > 0 {
            let e_bar: Vec<Vec<f64>> = (0..enr.n_columns())
                .into_par_iter()
                .map(|j| {
                    let qj = [q[2 * (n_rep + j)], q[2 * (n_rep + j) + 1]];
                    enr.atoms.iter().map(|&a| f[2 * a] * qj[0] + f[2 * a + 1] * qj[1]).collect()
                })
                .collect();
            enr.adjoint(e_bar)
        } else {
            Vec::new()
        };
        let mut enr_col = vec![usize::MAX; n_rep];
        for (j, &b) in enr.order.iter().enumerate() {
            enr_col[b] = j;
        }
        let chi = self.enrichment.as_ref().map(|e| &e.field.chi);
        let chi_rep: Option<Vec<f64>> = chi.map(|c| self.grid.atom_of_repatom.iter().map(|&a| c[a]).collect());

        let chunk = 2048;
        let atoms: Vec<usize> = (0..self.model.n_atoms()).collect();
        let parts: Vec<Result<Vec<f64>>> = atoms
            .par_chunks(chunk)
            .map(|chunk| {
                let mut g = vec![0.0; n_rep];
                let mut w = Vec::new();
                for &a in chunk {
                    let (fx, fy) = (f[2 * a], f[2 * a + 1]);
                    if fx == 0.0 && fy == 0.0 {
                        continue;
                    }
                    let (cols, _) = table.shapes.row(a);
                    w.clear();
                    w.extend(cols.iter().map(|&b| fx * q[2 * b as usize] + fy * q[2 * b as usize + 1]));
                    if let (Some(slot), Some(chi), Some(chi_rep)) = (enr.atom_slot(a), chi, chi_rep.as_ref()) {
                        for (k, &b) in cols.iter().enumerate() {
                            let j = enr_col[b as usize];
                            if j != usize::MAX {
                                w[k] += a_bar[j][slot] * (chi[a] - chi_rep[b as usize]);
                            }
                        }
                    }
                    table.contract_gamma_derivative(&self.grid, self.atom_points[a], a, &w, |c, v| g[c] += v)?;
                }
                Ok(g)
            })
            .collect();
        let mut grad = vec![0.0; n_rep];
        for p in parts {
            for (x, y) in grad.iter_mut().zip(p?) {
                *x += y;
            }
        }
        Ok(grad)
    }
}

/// Carries reduced DOFs over to a new interpolation: repatom DOFs directly,
/// enriched DOFs matched by their repatom.
pub fn remap_dofs(old: &InterpolationMatrix, q: &[f64], new: &InterpolationMatrix) -> Vec<f64> {
    let n_rep = new.n_rep();
    let mut out = vec![0.0; new.n_dofs()];
    out[..2 * n_rep].copy_from_slice(&q[..2 * n_rep]);
    for (j, &b) in new.enriched.order.iter().enumerate() {
        if let Some(i) = old.enriched.order.iter().position(|&x| x == b) {
            out[2 * (n_rep + j)] = q[2 * (old.n_rep() + i)];
            out[2 * (n_rep + j) + 1] = q[2 * (old.n_rep() + i) + 1];
        }
    }
    out
}
