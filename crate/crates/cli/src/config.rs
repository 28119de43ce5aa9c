//! Run configuration: a TOML file with `[run]`, `[gamma]`, `[solver]`,
//! `[bench]` and `[output]` sections, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xqc::bench::{BenchmarkSpec, Example, SweepOptions};
use xqc::lattice::SolverOptions;
use xqc::locality::{GammaBounds, OptimizerOptions, PatternRule};
use xqc::reduce::ReducedOptions;
use xqc::scheme::SchemeRegistry;
use xqc::XqcError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub gamma: GammaSection,
    pub solver: SolverSection,
    pub bench: BenchSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// circle | square | square-modified | fiber
    pub example: String,
    pub scheme: String,
    /// Repatom spacing in mm.
    pub h: f64,
    /// Prescribed displacement on the top and bottom edges in mm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_d: Option<f64>,
    pub seed: u64,
    /// 0 uses all cores.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSection {
    /// uniform | nonuniform | pattern
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub initial: f64,
    pub enrichment: bool,
    pub pattern_interface: f64,
    pub pattern_far_field: f64,
    /// Interface band half-width in units of `h`.
    pub pattern_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Newton residual tolerance; defaults to a multiple of the lattice stiffness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_tolerance: Option<f64>,
    pub newton_max_iter: usize,
    pub load_steps: usize,
    pub optimizer_max_iter: usize,
    pub lbfgs_memory: usize,
    pub grad_tol_rel: f64,
    pub ftol_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Defaults to the example's own sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacings: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<String>>,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Record wall-clock seconds in `sweep_summary.csv`; off by default so
    /// that repeated runs produce identical files.
    pub wall_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            example: "circle".into(),
            scheme: "lme-baseline-H".into(),
            h: 8.0,
            u_d: None,
            seed: 0,
            workers: 0,
        }
    }
}

impl Default for GammaSection {
    fn default() -> Self {
        let p = PatternRule::default();
        Self {
            mode: "uniform".into(),
            min: None,
            max: None,
            initial: xqc::locality::BASELINE_GAMMA,
            enrichment: true,
            pattern_interface: p.interface,
            pattern_far_field: p.far_field,
            pattern_width: p.width,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        let o = OptimizerOptions::default();
        Self {
            newton_tolerance: None,
            newton_max_iter: s.max_iter,
            load_steps: s.load_steps,
            optimizer_max_iter: o.max_iter,
            lbfgs_memory: o.memory,
            grad_tol_rel: o.grad_tol_rel,
            ftol_rel: o.ftol_rel,
        }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            spacings: None,
            schemes: None,
            bins: xqc::bench::DEFAULT_BINS,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMode {
    Uniform,
    Nonuniform,
    Pattern,
}

impl GammaMode {
    pub fn parse(s: &str) -> Result<Self, XqcError> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "nonuniform" => Ok(Self::Nonuniform),
            "pattern" => Ok(Self::Pattern),
            _ => Err(XqcError::InvalidConfig(format!("gamma mode `{s}` is not one of uniform, nonuniform, pattern"))),
        }
    }
}

fn invalid(msg: String) -> XqcError {
    XqcError::InvalidConfig(msg)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, XqcError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the serialized configuration without the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn example(&self) -> Result<Example, XqcError> {
        self.run.example.parse()
    }

    pub fn mode(&self) -> Result<GammaMode, XqcError> {
        GammaMode::parse(&self.gamma.mode)
    }

    pub fn validate(&self, registry: &SchemeRegistry) -> Result<(), XqcError> {
        registry.get(&self.run.scheme)?;
        self.mode()?;
        let mut single = self.benchmark_spec()?;
        single.spacings = vec![self.run.h];
        single.validate()?;
        for s in self.bench.schemes.iter().flatten() {
            registry.get(s)?;
        }
        if self.bench.bins == 0 {
            return Err(invalid("bench.bins must be at least 1".into()));
        }
        if let Some(u) = self.run.u_d {
            if !u.is_finite() {
                return Err(invalid("run.u_d must be finite".into()));
            }
        }
        if !(self.gamma.initial > 0.0) {
            return Err(invalid("gamma.initial must be positive".into()));
        }
        if self.solver.newton_max_iter == 0 || self.solver.load_steps == 0 || self.solver.lbfgs_memory == 0 {
            return Err(invalid("solver iteration counts must be positive".into()));
        }
        if !(self.gamma.pattern_interface > 0.0 && self.gamma.pattern_far_field > 0.0 && self.gamma.pattern_width >= 0.0) {
            return Err(invalid("pattern gamma values must be positive".into()));
        }
        Ok(())
    }

    /// Benchmark definition with this configuration's overrides applied.
    pub fn benchmark_spec(&self) -> Result<BenchmarkSpec, XqcError> {
        let mut spec = BenchmarkSpec::for_example(self.example()?);
        if self.gamma.min.is_some() || self.gamma.max.is_some() {
            let lo = self.gamma.min.unwrap_or(spec.gamma_bounds.min);
            let hi = self.gamma.max.unwrap_or(spec.gamma_bounds.max);
            spec.gamma_bounds = GammaBounds::new(lo, hi)?;
            let lo = self.gamma.min.unwrap_or(spec.no_enrichment_bounds.min);
            let hi = self.gamma.max.unwrap_or(spec.no_enrichment_bounds.max);
            spec.no_enrichment_bounds = GammaBounds::new(lo, hi)?;
        }
        spec.gamma0 = self.gamma.initial;
        spec.u_d = self.run.u_d;
        if let Some(s) = &self.bench.spacings {
            spec.spacings = s.clone();
        }
        if let Some(s) = &self.bench.schemes {
            spec.schemes = s.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            load_steps: self.solver.load_steps,
            max_iter: self.solver.newton_max_iter,
            tolerance: self.solver.newton_tolerance,
            ..SolverOptions::default()
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            reduced: ReducedOptions {
                solver: self.solver_options(),
                ..ReducedOptions::default()
            },
            optimizer: OptimizerOptions {
                memory: self.solver.lbfgs_memory,
                max_iter: self.solver.optimizer_max_iter,
                grad_tol_rel: self.solver.grad_tol_rel,
                ftol_rel: self.solver.ftol_rel,
                ..OptimizerOptions::default()
            },
            pattern: PatternRule {
                interface: self.gamma.pattern_interface,
                far_field: self.gamma.pattern_far_field,
                width: self.gamma.pattern_width,
            },
            workers: self.run.workers,
        }
    }
}
