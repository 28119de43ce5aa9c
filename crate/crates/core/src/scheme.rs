//! Named interpolation schemes behind a common trait, selectable at run time.

use std::collections::BTreeMap;

use crate::error::{Result, XqcError};
use crate::geometry::InterfaceGeometry;
use crate::lattice::{BoundaryConditions, LatticeModel};
use crate::locality::{
    optimize_nonuniform, optimize_uniform, pattern_gamma, GammaBounds, GammaField, OptimizationReport, OptimizerOptions, PatternRule,
};
use crate::qc::{QcEvaluation, QcProblem, StandardBasis};
use crate::reduce::{HessianCache, ReducedOptions};

/// Everything a scheme needs to produce a reduced solution.
pub struct SchemeContext<'a> {
    pub model: &'a LatticeModel,
    pub bcs: &'a BoundaryConditions,
    pub geometry: Option<InterfaceGeometry>,
    /// Enrichment radius in units of `h`.
    pub enrichment_radius: f64,
    pub h: f64,
    pub bounds: GammaBounds,
    /// Bounds for runs without enrichment, which may be wider.
    pub no_enrichment_bounds: GammaBounds,
    pub gamma0: f64,
    pub reduced: ReducedOptions,
    pub optimizer: OptimizerOptions,
    pub pattern: PatternRule,
}

/// Reduced solution together with the data needed for reporting.
#[derive(Debug, Clone)]
pub struct SchemeOutput {
    pub evaluation: QcEvaluation,
    pub gamma: Option<GammaField>,
    pub report: Option<OptimizationReport>,
    pub repatoms: Vec<[f64; 2]>,
    /// Signed distance per repatom, if there is an interface.
    pub psi: Option<Vec<f64>>,
    pub enriched: Vec<bool>,
}

pub trait Scheme: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn enriched(&self) -> bool;
    fn run(&self, ctx: &SchemeContext) -> Result<SchemeOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalityMode {
    Baseline,
    Uniform,
    Nonuniform,
    Pattern,
}

/// LME standard basis with a given way of choosing the locality field.
pub struct LmeScheme {
    name: String,
    description: String,
    pub mode: LocalityMode,
    pub enrich: bool,
}

impl LmeScheme {
    pub fn new(name: &str, description: &str, mode: LocalityMode, enrich: bool) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            mode,
            enrich,
        }
    }
}

fn problem<'a>(ctx: &SchemeContext<'a>, kind: StandardBasis, enrich: bool) -> Result<QcProblem<'a>> {
    let enrichment = if enrich { ctx.geometry.map(|g| (g, ctx.enrichment_radius)) } else { None };
    QcProblem::new(ctx.model, ctx.h, kind, enrichment, ctx.bcs, ctx.reduced)
}

fn output(p: &QcProblem, ctx: &SchemeContext, evaluation: QcEvaluation, gamma: Option<GammaField>, report: Option<OptimizationReport>) -> SchemeOutput {
    let mut enriched = vec![false; p.n_rep()];
    for &b in &evaluation.phi.enriched.order {
        enriched[b] = true;
    }
    SchemeOutput {
        evaluation,
        gamma,
        report,
        repatoms: p.grid.positions.clone(),
        psi: ctx.geometry.map(|g| p.grid.positions.iter().map(|&x| g.signed_distance(x)).collect()),
        enriched,
    }
}

impl Scheme for LmeScheme {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        &self.description
    }

    fn enriched(&self) -> bool {
        self.enrich
    }

    fn run(&self, ctx: &SchemeContext) -> Result<SchemeOutput> {
        let p = problem(ctx, StandardBasis::Lme, self.enrich)?;
        let n = p.n_rep();
        let bounds = if self.enrich { ctx.bounds } else { ctx.no_enrichment_bounds };
        let fixed = |gamma: GammaField| -> Result<SchemeOutput> {
            let eval = p.solve(&gamma.values, &mut HessianCache::new(), None)?;
            Ok(output(&p, ctx, eval, Some(gamma), None))
        };
        match self.mode {
            LocalityMode::Baseline => fixed(GammaField::uniform(n, ctx.gamma0, crate::locality::GammaProvenance::Baseline)),
            LocalityMode::Pattern => {
                let psi = ctx.geometry.map(|g| p.grid.positions.iter().map(|&x| g.signed_distance(x)).collect::<Vec<_>>());
                fixed(pattern_gamma(psi.as_deref(), n, ctx.h, &ctx.pattern))
            }
            LocalityMode::Uniform => {
                let r = optimize_uniform(&p, ctx.gamma0, bounds, &ctx.optimizer)?;
                Ok(output(&p, ctx, r.evaluation, Some(r.gamma), Some(r.report)))
            }
            LocalityMode::Nonuniform => {
                let r = optimize_nonuniform(&p, &vec![ctx.gamma0; n], bounds, &ctx.optimizer)?;
                Ok(output(&p, ctx, r.evaluation, Some(r.gamma), Some(r.report)))
            }
        }
    }
}

/// Piecewise-linear standard basis on the triangulated repatom grid.
pub struct LinearScheme {
    name: String,
    pub enrich: bool,
}

impl LinearScheme {
    pub fn new(name: &str, enrich: bool) -> Self {
        Self {
            name: name.into(),
            enrich,
        }
    }
}

impl Scheme for LinearScheme {
    fn name(&self) -> &str {
        &self.name
    }

    fn description(&self) -> &str {
        "linear hat functions with Heaviside enrichment (nonconforming)"
    }

    fn enriched(&self) -> bool {
        self.enrich
    }

    fn run(&self, ctx: &SchemeContext) -> Result<SchemeOutput> {
        let p = problem(ctx, StandardBasis::Linear, self.enrich)?;
        let eval = p.solve(&[], &mut HessianCache::new(), None)?;
        Ok(output(&p, ctx, eval, None, None))
    }
}

/// Name-keyed scheme registry.
#[derive(Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, Box<dyn Scheme>>,
}

impl SchemeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(LmeScheme::new(
            "lme-baseline-H",
            "LME with uniform gamma = 1.8 and Heaviside enrichment",
            LocalityMode::Baseline,
            true,
        )));
        r.register(Box::new(LmeScheme::new(
            "lme-uniform-H",
            "LME with one optimized gamma and Heaviside enrichment",
            LocalityMode::Uniform,
            true,
        )));
        r.register(Box::new(LmeScheme::new(
            "lme-nonuniform-H",
            "LME with per-repatom optimized gamma and Heaviside enrichment",
            LocalityMode::Nonuniform,
            true,
        )));
        r.register(Box::new(LmeScheme::new(
            "lme-nonuniform-noH",
            "LME with per-repatom optimized gamma, no enrichment",
            LocalityMode::Nonuniform,
            false,
        )));
        r.register(Box::new(LmeScheme::new(
            "lme-pattern-H",
            "LME with the two-level interface/far-field gamma rule and Heaviside enrichment",
            LocalityMode::Pattern,
            true,
        )));
        r.register(Box::new(LinearScheme::new("linear-H", true)));
        r
    }

    /// Adds or replaces a scheme under its own name.
    pub fn register(&mut self, scheme: Box<dyn Scheme>) {
        self.schemes.insert(scheme.name().to_string(), scheme);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Scheme> {
        self.schemes.get(name).map(|b| b.as_ref()).ok_or_else(|| XqcError::Unknown {
            kind: "scheme",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(|s| s.as_str())
    }
}
