//! Benchmark problems, reference solves, scheme sweeps and binned
//! locality statistics.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Result, XqcError};
use crate::geometry::InterfaceGeometry;
use crate::lattice::{build_lattice, BoundaryConditions, EquilibriumState, LatticeModel, MaterialRule, SolverOptions};
use crate::locality::{GammaBounds, GammaField, OptimizerOptions, PatternRule, TraceRow, BASELINE_GAMMA};
use crate::reduce::{reconstruct_and_measure, ReducedOptions};
use crate::scheme::{SchemeContext, SchemeOutput, SchemeRegistry};

pub const DEFAULT_BINS: usize = 54;
/// Lattice half-extent (mm) of all benchmarks.
pub const HALF_EXTENT: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Example {
    Circle,
    Square,
    SquareModified,
    Fiber,
}

impl Example {
    pub const ALL: [Example; 4] = [Example::Circle, Example::Square, Example::SquareModified, Example::Fiber];

    pub fn name(self) -> &'static str {
        match self {
            Example::Circle => "circle",
            Example::Square => "square",
            Example::SquareModified => "square-modified",
            Example::Fiber => "fiber",
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Example {
    type Err = XqcError;

    fn from_str(s: &str) -> Result<Self> {
        Example::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| XqcError::Unknown {
            kind: "example",
            name: s.to_string(),
        })
    }
}

/// One benchmark problem and the sweep to run on it.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub example: Example,
    pub geometry: InterfaceGeometry,
    pub half_extent: f64,
    pub lattice_spacing: f64,
    pub matrix_modulus: f64,
    pub area: f64,
    pub stiffness_contrast: f64,
    /// In units of `h`.
    pub enrichment_radius: f64,
    pub gamma_bounds: GammaBounds,
    pub no_enrichment_bounds: GammaBounds,
    pub gamma0: f64,
    /// Prescribed vertical displacement on the top and bottom edges; `None`
    /// uses 1% of the edge length.
    pub u_d: Option<f64>,
    pub spacings: Vec<f64>,
    pub schemes: Vec<String>,
}

fn default_schemes() -> Vec<String> {
    ["linear-H", "lme-baseline-H", "lme-uniform-H", "lme-nonuniform-H", "lme-pattern-H"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl BenchmarkSpec {
    pub fn for_example(example: Example) -> Self {
        let b = |lo, hi| GammaBounds::new(lo, hi).unwrap();
        let base = |geometry, contrast, radius, bounds, no_h| Self {
            example,
            geometry,
            half_extent: HALF_EXTENT,
            lattice_spacing: 1.0,
            matrix_modulus: 1.0,
            area: 1.0,
            stiffness_contrast: contrast,
            enrichment_radius: radius,
            gamma_bounds: bounds,
            no_enrichment_bounds: no_h,
            gamma0: BASELINE_GAMMA,
            u_d: None,
            spacings: vec![32.0, 16.0, 8.0, 4.0],
            schemes: default_schemes(),
        };
        match example {
            Example::Circle => base(InterfaceGeometry::circle([-17.0, 0.0], 40.0).unwrap(), 10.0, 2.5, b(0.8, 4.0), b(0.3, 4.0)),
            Example::Square => base(InterfaceGeometry::square([0.0, 0.0], 30.0).unwrap(), 10.0, 2.5, b(0.3, 4.0), b(0.3, 4.0)),
            Example::SquareModified => {
                let mut s = base(InterfaceGeometry::square([0.0, 0.0], 64.0).unwrap(), 10.0, 2.5, b(1.0, 4.0), b(1.0, 4.0));
                s.spacings = vec![8.0];
                s.schemes = vec!["lme-nonuniform-noH".into()];
                s
            }
            Example::Fiber => {
                let a = 40.0 / 2f64.sqrt();
                let g = InterfaceGeometry::segment([-17.0 - a, -a], [-17.0 + a, a]).unwrap();
                base(g, 100.0, 0.7, b(0.8, 4.0), b(0.8, 4.0))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let side = 2.0 * self.half_extent;
        for &h in &self.spacings {
            let k = side / h;
            if !(h > 0.0 && (k - k.round()).abs() < 1e-9 && h / self.lattice_spacing >= 1.0) {
                return Err(XqcError::InvalidConfig(format!("repatom spacing h = {h} must divide the domain edge {side}")));
            }
            let m = h / self.lattice_spacing;
            if (m - m.round()).abs() > 1e-9 {
                return Err(XqcError::InvalidConfig(format!(
                    "repatom spacing h = {h} must be a multiple of the lattice spacing {}",
                    self.lattice_spacing
                )));
            }
        }
        if !(self.stiffness_contrast > 0.0) {
            return Err(XqcError::InvalidConfig("stiffness contrast must be positive".into()));
        }
        if !(self.enrichment_radius >= 0.0) {
            return Err(XqcError::InvalidConfig("enrichment radius must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialRule {
        MaterialRule::homogeneous(self.matrix_modulus, self.area).with_phase(self.geometry, self.matrix_modulus * self.stiffness_contrast)
    }

    pub fn build_model(&self) -> Result<LatticeModel> {
        self.validate()?;
        build_lattice(self.half_extent, self.lattice_spacing, self.material())
    }

    pub fn boundary_conditions(&self, model: &LatticeModel) -> BoundaryConditions {
        match self.u_d {
            Some(u_d) => BoundaryConditions::Tension { u_d },
            None => BoundaryConditions::default_tension(&model.domain),
        }
    }
}

/// Fully resolved lattice solution shared by every cell of a sweep.
pub struct Reference {
    pub model: LatticeModel,
    pub bcs: BoundaryConditions,
    pub state: EquilibriumState,
    pub displacements: Vec<f64>,
}

pub fn reference_solve(spec: &BenchmarkSpec, opts: &SolverOptions) -> Result<Reference> {
    let model = spec.build_model()?;
    let bcs = spec.boundary_conditions(&model);
    let state = crate::lattice::solve_full(&model, &bcs, opts)?;
    let displacements = state.displacements(&model);
    Ok(Reference {
        model,
        bcs,
        state,
        displacements,
    })
}

/// Solver settings shared by all cells of a sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub reduced: ReducedOptions,
    pub optimizer: OptimizerOptions,
    pub pattern: PatternRule,
    /// Cells run concurrently up to this many; 0 uses all cores.
    pub workers: usize,
}

/// Result of one scheme at one repatom spacing.
#[derive(Debug, Clone)]
pub struct SchemeRecord {
    pub example: Example,
    pub scheme: String,
    pub h: f64,
    pub n_dof: usize,
    pub n_dof_standard: usize,
    pub n_enriched: usize,
    pub energy: f64,
    pub eps_u: f64,
    pub per_atom_errors: Vec<f64>,
    pub gamma: Option<GammaField>,
    pub trace: Option<Vec<TraceRow>>,
    pub optimizer_converged: Option<bool>,
    pub repatoms: Vec<[f64; 2]>,
    pub psi: Option<Vec<f64>>,
    pub enriched: Vec<bool>,
    pub u_qc: Vec<f64>,
    pub wall_s: f64,
}

/// One cell of a sweep; failures are kept rather than aborting the sweep.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub scheme: String,
    pub h: f64,
    pub result: std::result::Result<SchemeRecord, String>,
}

pub fn scheme_context<'a>(spec: &BenchmarkSpec, reference: &'a Reference, h: f64, opts: &SweepOptions) -> SchemeContext<'a> {
    SchemeContext {
        model: &reference.model,
        bcs: &reference.bcs,
        geometry: Some(spec.geometry),
        enrichment_radius: spec.enrichment_radius,
        h,
        bounds: spec.gamma_bounds,
        no_enrichment_bounds: spec.no_enrichment_bounds,
        gamma0: spec.gamma0,
        reduced: opts.reduced,
        optimizer: opts.optimizer,
        pattern: opts.pattern,
    }
}

/// Runs one scheme at one spacing and measures it against the reference.
pub fn run_cell(spec: &BenchmarkSpec, reference: &Reference, registry: &SchemeRegistry, scheme: &str, h: f64, opts: &SweepOptions) -> Result<SchemeRecord> {
    let s = registry.get(scheme)?;
    let ctx = scheme_context(spec, reference, h, opts);
    let start = Instant::now();
    let out = s.run(&ctx)?;
    let wall_s = start.elapsed().as_secs_f64();
    record(spec, reference, scheme, h, out, wall_s)
}

pub fn record(spec: &BenchmarkSpec, reference: &Reference, scheme: &str, h: f64, out: SchemeOutput, wall_s: f64) -> Result<SchemeRecord> {
    let u_qc = out.evaluation.state.displacements(&reference.model);
    let err = reconstruct_and_measure(&u_qc, &reference.displacements)?;
    let phi = &out.evaluation.phi;
    Ok(SchemeRecord {
        example: spec.example,
        scheme: scheme.to_string(),
        h,
        n_dof: phi.n_dofs(),
        n_dof_standard: phi.n_dofs_standard(),
        n_enriched: phi.n_enriched(),
        energy: out.evaluation.state.energy,
        eps_u: err.eps_u,
        per_atom_errors: err.per_atom,
        optimizer_converged: out.report.as_ref().map(|r| r.converged()),
        trace: out.report.map(|r| r.history),
        gamma: out.gamma,
        repatoms: out.repatoms,
        psi: out.psi,
        enriched: out.enriched,
        u_qc,
        wall_s,
    })
}

/// Runs every (scheme, h) cell of the spec. Output order is the spec order
/// (spacings outer, schemes inner) regardless of scheduling.
pub fn run_benchmark(spec: &BenchmarkSpec, reference: &Reference, registry: &SchemeRegistry, opts: &SweepOptions) -> Result<Vec<CellOutcome>> {
    spec.validate()?;
    for s in &spec.schemes {
        registry.get(s)?;
    }
    let cells: Vec<(String, f64)> = spec
        .spacings
        .iter()
        .flat_map(|&h| spec.schemes.iter().map(move |s| (s.clone(), h)))
        .collect();
    let run = || {
        cells
            .par_iter()
            .map(|(scheme, h)| {
                let result = run_cell(spec, reference, registry, scheme, *h, opts).map_err(|e| {
                    log::warn!("{} {scheme} h={h}: {e}", spec.example);
                    e.to_string()
                });
                CellOutcome {
                    scheme: scheme.clone(),
                    h: *h,
                    result,
                }
            })
            .collect()
    };
    if opts.workers == 0 {
        return Ok(run());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| XqcError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(run))
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaBin {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedGammaStats {
    pub edges: Vec<f64>,
    /// Nonempty bins only, in order of increasing distance.
    pub bins: Vec<GammaBin>,
}

impl BinnedGammaStats {
    /// Bin containing `psi`, if nonempty.
    pub fn bin_at(&self, psi: f64) -> Option<&GammaBin> {
        let n = self.edges.len().checked_sub(1).filter(|&n| n > 0)?;
        let idx = bin_index(self.edges[0], self.edges[n], n, psi);
        self.bins.iter().find(|b| b.index == idx)
    }
}

/// Equal-width bins over the observed signed-distance range with per-bin
/// quartiles of `gamma`.
fn bin_index(lo: f64, hi: f64, n_bins: usize, psi: f64) -> usize {
    let width = (hi - lo) / n_bins as f64;
    if width > 0.0 && psi > lo {
        (((psi - lo) / width) as usize).min(n_bins - 1)
    } else {
        0
    }
}

pub fn binned_gamma_stats(gamma: &[f64], psi: &[f64], n_bins: usize) -> Result<BinnedGammaStats> {
    if n_bins == 0 {
        return Err(XqcError::InvalidConfig("bin count must be at least 1".into()));
    }
    if gamma.len() != psi.len() {
        return Err(XqcError::InvalidConfig("gamma and psi lengths differ".into()));
    }
    if psi.is_empty() {
        return Ok(BinnedGammaStats {
            edges: Vec::new(),
            bins: Vec::new(),
        });
    }
    let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|k| if k == n_bins { hi } else { lo + k as f64 * width }).collect();
    let mut members = vec![Vec::new(); n_bins];
    for (&g, &p) in gamma.iter().zip(psi) {
        members[bin_index(lo, hi, n_bins, p)].push(g);
    }
    let bins = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(index, mut m)| {
            m.sort_by(f64::total_cmp);
            GammaBin {
                index,
                lo: edges[index],
                hi: edges[index + 1],
                count: m.len(),
                q1: quantile(&m, 0.25),
                median: quantile(&m, 0.5),
                q3: quantile(&m, 0.75),
            }
        })
        .collect();
    Ok(BinnedGammaStats { edges, bins })
}
