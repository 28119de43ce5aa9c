//! Locality-parameter fields and their optimization by minimizing the
//! reduced equilibrium energy.

use std::collections::VecDeque;

use crate::error::{Result, XqcError};
use crate::qc::{QcEvaluation, QcProblem};
use crate::reduce::HessianCache;

/// Default locality of the baseline scheme.
pub const BASELINE_GAMMA: f64 = 1.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaProvenance {
    Baseline,
    OptimizedUniform,
    OptimizedNonuniform,
    Pattern,
}

impl GammaProvenance {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::OptimizedUniform => "optimized-uniform",
            Self::OptimizedNonuniform => "optimized-nonuniform",
            Self::Pattern => "pattern",
        }
    }
}

/// Dimensionless locality `γ = β h²` per repatom.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaField {
    pub values: Vec<f64>,
    pub provenance: GammaProvenance,
}

impl GammaField {
    pub fn uniform(n: usize, gamma: f64, provenance: GammaProvenance) -> Self {
        Self {
            values: vec![gamma; n],
            provenance,
        }
    }

    pub fn baseline(n: usize) -> Self {
        Self::uniform(n, BASELINE_GAMMA, GammaProvenance::Baseline)
    }

    /// `β = γ / h²`.
    pub fn beta(&self, h: f64) -> Vec<f64> {
        self.values.iter().map(|g| g / (h * h)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBounds {
    pub min: f64,
    pub max: f64,
}

impl GammaBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min < max) {
            return Err(XqcError::InvalidConfig(format!("invalid locality bounds [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn clamp(&self, g: f64) -> f64 {
        g.clamp(self.min, self.max)
    }
}

/// Two-level rule: `interface` within `width · h` of the interface,
/// `far_field` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternRule {
    pub interface: f64,
    pub far_field: f64,
    pub width: f64,
}

impl Default for PatternRule {
    fn default() -> Self {
        Self {
            interface: 0.8,
            far_field: 2.0,
            width: 1.0,
        }
    }
}

/// Pattern-based locality from the signed distance at the repatoms; with no
/// interface every repatom gets the far-field value.
pub fn pattern_gamma(psi: Option<&[f64]>, n_rep: usize, h: f64, rule: &PatternRule) -> GammaField {
    let values = match psi {
        Some(psi) => psi
            .iter()
            .map(|p| if p.abs() <= rule.width * h { rule.interface } else { rule.far_field })
            .collect(),
        None => vec![rule.far_field; n_rep],
    };
    GammaField {
        values,
        provenance: GammaProvenance::Pattern,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected-gradient ∞-norm is below this times `|Π|`.
    pub grad_tol_rel: f64,
    /// Stop when the relative energy decrease of an iteration is below this.
    pub ftol_rel: f64,
    pub max_line_search: usize,
    /// Largest change of any variable in the first trial step.
    pub initial_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            grad_tol_rel: 1e-6,
            ftol_rel: 1e-8,
            max_line_search: 20,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ProjectedGradient,
    EnergyDecrease,
    MaxIterations,
    LineSearchFailure,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, Self::ProjectedGradient | Self::EnergyDecrease)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub proj_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub x: Vec<f64>,
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub history: Vec<TraceRow>,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl OptimizationReport {
    pub fn converged(&self) -> bool {
        self.stop.converged()
    }

    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

fn project(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
}

/// Projected gradient: components pushing against an active bound vanish.
/// A variable within a few ulps of a bound counts as on it.
pub fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if ((xi <= l || near(xi, l)) && gi > 0.0) || ((xi >= h || near(xi, h)) && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Objective value and gradient, or `None` for an infeasible point.
pub type Evaluation = Option<(f64, Vec<f64>)>;

/// Bound-constrained minimization by projected limited-memory BFGS.
///
/// The quasi-Newton direction is computed on the variables that are not
/// held at a bound. If the full step stays feasible a strong-Wolfe search
/// is used along it; otherwise the step is projected onto the box and
/// backtracked until an Armijo decrease holds. Points where `f` returns
/// `None` are treated as infinitely expensive.
pub fn minimize_bounded(
    mut f: impl FnMut(&[f64]) -> Result<Evaluation>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &OptimizerOptions,
) -> Result<OptimizationReport> {
    let n = x0.len();
    let mut x = project(x0, lo, hi);
    let mut evaluations = 1;
    let Some((mut fx, mut g)) = f(&x)? else {
        return Err(XqcError::NonConvergence {
            iterations: 0,
            residual: f64::NAN,
        });
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = vec![TraceRow {
        iter: 0,
        energy: fx,
        proj_grad_norm: inf_norm(&projected_gradient(&x, &g, lo, hi)),
    }];
    let mut stop = StopReason::MaxIterations;
    for iter in 1..=opts.max_iter {
        let pg = projected_gradient(&x, &g, lo, hi);
        if inf_norm(&pg) <= opts.grad_tol_rel * fx.abs() {
            stop = StopReason::ProjectedGradient;
            break;
        }
        let free: Vec<bool> = pg.iter().map(|&v| v != 0.0).collect();
        let mut d = two_loop(&g, &free, &mem);
        if mem.is_empty() {
            let s = opts.initial_step / inf_norm(&d).max(1e-300);
            d.iter_mut().for_each(|v| *v *= s);
        }
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
            let s = opts.initial_step / inf_norm(&d).max(1e-300);
            d.iter_mut().for_each(|v| *v *= s);
        }
        // Largest step keeping x + t d inside the box.
        let t_max = (0..n).fold(f64::INFINITY, |m, i| {
            if d[i] > 0.0 {
                m.min((hi[i] - x[i]) / d[i])
            } else if d[i] < 0.0 {
                m.min((lo[i] - x[i]) / d[i])
            } else {
                m
            }
        });
        let found = if t_max >= 1.0 {
            wolfe_search(&mut f, &x, fx, &g, &d, t_max, opts.max_line_search, &mut evaluations)?
        } else {
            projected_armijo(&mut f, &x, fx, &g, &d, lo, hi, opts.max_line_search, &mut evaluations)?
        };
        let Some((mut x_new, f_new, g_new)) = found else {
            stop = StopReason::LineSearchFailure;
            break;
        };
        for ((v, &l), &h) in x_new.iter_mut().zip(lo).zip(hi) {
            if (*v - l).abs() <= 1e-12 * l.abs().max(1.0) {
                *v = l;
            } else if (*v - h).abs() <= 1e-12 * h.abs().max(1.0) {
                *v = h;
            }
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        let f_old = fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(TraceRow {
            iter,
            energy: fx,
            proj_grad_norm: inf_norm(&projected_gradient(&x, &g, lo, hi)),
        });
        if decrease <= opts.ftol_rel * f_old.abs() {
            stop = StopReason::EnergyDecrease;
            break;
        }
    }
    if stop == StopReason::MaxIterations {
        let pg = projected_gradient(&x, &g, lo, hi);
        if inf_norm(&pg) <= opts.grad_tol_rel * fx.abs() {
            stop = StopReason::ProjectedGradient;
        }
    }
    Ok(OptimizationReport {
        x,
        energy: fx,
        gradient: g,
        history,
        evaluations,
        stop,
    })
}

/// L-BFGS two-loop recursion restricted to the free variables.
fn two_loop(g: &[f64], free: &[bool], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = mem
        .iter()
        .filter_map(|(s, y, _)| {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            (sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
    }
    if let Some((s, y, _)) = pairs.last() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

type Point = (Vec<f64>, f64, Vec<f64>);

#[allow(clippy::too_many_arguments)]
fn projected_armijo(
    f: &mut impl FnMut(&[f64]) -> Result<Evaluation>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_evals: usize,
    evaluations: &mut usize,
) -> Result<Option<Point>> {
    let mut t = 1.0;
    let mut last: Option<Vec<f64>> = None;
    let mut evals = 0;
    while evals < max_evals {
        let trial: Vec<f64> = project(&x.iter().zip(d).map(|(a, b)| a + t * b).collect::<Vec<_>>(), lo, hi);
        let step: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
        if inf_norm(&step) == 0.0 {
            return Ok(None);
        }
        t *= 0.5;
        if last.as_ref() == Some(&trial) {
            continue;
        }
        last = Some(trial.clone());
        evals += 1;
        *evaluations += 1;
        if let Some((ft, gt)) = f(&trial)? {
            if ft <= fx + 1e-4 * dot(g, &step) {
                return Ok(Some((trial, ft, gt)));
            }
        }
    }
    Ok(None)
}

/// Strong-Wolfe line search on `[0, t_max]` (bracketing then zoom).
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    f: &mut impl FnMut(&[f64]) -> Result<Evaluation>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    t_max: f64,
    max_evals: usize,
    evaluations: &mut usize,
) -> Result<Option<Point>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let dg0 = dot(g, d);
    let at = |t: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + t * b).collect() };
    let mut evals = 0;
    let mut eval = |t: f64, evals: &mut usize| -> Result<Option<(Vec<f64>, f64, Vec<f64>, f64)>> {
        *evals += 1;
        *evaluations += 1;
        let xt = at(t);
        Ok(f(&xt)?.map(|(ft, gt)| {
            let dgt = dot(&gt, d);
            (xt, ft, gt, dgt)
        }))
    };
    let (mut t_prev, mut f_prev, mut dg_prev) = (0.0, fx, dg0);
    let mut best: Option<Point> = None;
    let mut t = 1.0_f64.min(t_max);
    let (lo_t, hi_t, f_lo, dg_lo, f_hi);
    loop {
        if evals >= max_evals {
            return Ok(best);
        }
        match eval(t, &mut evals)? {
            None => {
                (lo_t, hi_t, f_lo, dg_lo, f_hi) = (t_prev, t, f_prev, dg_prev, f64::INFINITY);
                break;
            }
            Some((xt, ft, gt, dgt)) => {
                if ft > fx + C1 * t * dg0 || (t_prev > 0.0 && ft >= f_prev) {
                    (lo_t, hi_t, f_lo, dg_lo, f_hi) = (t_prev, t, f_prev, dg_prev, ft);
                    break;
                }
                if dgt.abs() <= -C2 * dg0 {
                    return Ok(Some((xt, ft, gt)));
                }
                best = Some((xt, ft, gt));
                if dgt >= 0.0 {
                    // Minimum bracketed between t and t_prev; accept the
                    // sufficient-decrease point.
                    return Ok(best);
                }
                if t >= t_max {
                    return Ok(best);
                }
                t_prev = t;
                f_prev = ft;
                dg_prev = dgt;
                t = (2.0 * t).min(t_max);
            }
        }
    }
    // Zoom on [lo_t, hi_t] by safeguarded quadratic interpolation.
    let (mut a, mut b, mut fa, mut dga, mut fb) = (lo_t, hi_t, f_lo, dg_lo, f_hi);
    while evals < max_evals {
        let width = b - a;
        let curv = fb - fa - dga * width;
        let mut t = if fb.is_finite() && curv > 0.0 {
            a - dga * width * width / (2.0 * curv)
        } else {
            f64::NAN
        };
        let (lo, hi) = (a.min(b), a.max(b));
        let margin = 0.1 * (hi - lo);
        if !(t > lo + margin && t < hi - margin) {
            t = 0.5 * (a + b);
        }
        match eval(t, &mut evals)? {
            None => (b, fb) = (t, f64::INFINITY),
            Some((xt, ft, gt, dgt)) => {
                if ft > fx + C1 * t * dg0 || ft >= fa {
                    (b, fb) = (t, ft);
                } else {
                    if dgt.abs() <= -C2 * dg0 {
                        return Ok(Some((xt, ft, gt)));
                    }
                    best = Some((xt, ft, gt));
                    if dgt * (b - a) >= 0.0 {
                        (b, fb) = (a, fa);
                    }
                    (a, fa, dga) = (t, ft, dgt);
                }
            }
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// Objective wrapper carrying warm starts between reduced solves.
pub struct LocalityObjective<'p, 'a> {
    pub problem: &'p QcProblem<'a>,
    pub cache: HessianCache,
    recent: VecDeque<(Vec<f64>, QcEvaluation)>,
}

impl<'p, 'a> LocalityObjective<'p, 'a> {
    const KEEP: usize = 4;

    pub fn new(problem: &'p QcProblem<'a>) -> Self {
        Self {
            problem,
            cache: HessianCache::new(),
            recent: VecDeque::new(),
        }
    }

    /// Energy and `∂Π/∂γ` per repatom; `None` if the reduced solve fails.
    pub fn evaluate(&mut self, gammas: &[f64]) -> Result<Evaluation> {
        let previous = nearest(&self.recent, gammas);
        let warm = previous.is_some();
        let eval = match self.problem.solve(gammas, &mut self.cache, previous) {
            Ok(e) => e,
            Err(e) if e.is_nonconvergence() && warm => {
                log::debug!("warm-started reduced solve failed at trial locality: {e}");
                self.cache.clear();
                match self.problem.solve(gammas, &mut self.cache, None) {
                    Ok(e) => e,
                    Err(e) if e.is_nonconvergence() => {
                        log::debug!("reduced solve failed at trial locality: {e}");
                        self.cache.clear();
                        return Ok(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) if e.is_nonconvergence() => {
                log::debug!("reduced solve failed at trial locality: {e}");
                self.cache.clear();
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let grad = self.problem.energy_gradient(&eval)?;
        let energy = eval.state.energy;
        if self.recent.len() == Self::KEEP {
            self.recent.pop_front();
        }
        self.recent.push_back((gammas.to_vec(), eval));
        Ok(Some((energy, grad)))
    }

    /// Reduced state at `gammas`, reused from a recent evaluation if possible.
    pub fn state_at(&mut self, gammas: &[f64]) -> Result<QcEvaluation> {
        if let Some(i) = self.recent.iter().position(|(x, _)| x.as_slice() == gammas) {
            return Ok(self.recent.remove(i).unwrap().1);
        }
        let previous = nearest(&self.recent, gammas);
        self.problem.solve(gammas, &mut self.cache, previous)
    }
}

/// Recent evaluation closest to `gammas`, used as the warm start.
fn nearest<'r>(recent: &'r VecDeque<(Vec<f64>, QcEvaluation)>, gammas: &[f64]) -> Option<&'r QcEvaluation> {
    let dist = |x: &[f64]| x.iter().zip(gammas).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    recent.iter().min_by(|a, b| dist(&a.0).total_cmp(&dist(&b.0))).map(|(_, e)| e)
}

/// Result of a locality optimization.
#[derive(Debug, Clone)]
pub struct LocalityResult {
    pub gamma: GammaField,
    pub report: OptimizationReport,
    pub evaluation: QcEvaluation,
}

/// One scalar `γ` shared by all repatoms; the gradient is the sum of the
/// per-repatom components.
pub fn optimize_uniform(
    problem: &QcProblem,
    gamma0: f64,
    bounds: GammaBounds,
    opts: &OptimizerOptions,
) -> Result<LocalityResult> {
    let n = problem.n_rep();
    let mut obj = LocalityObjective::new(problem);
    let report = minimize_bounded(
        |x| {
            Ok(obj
                .evaluate(&vec![x[0]; n])?
                .map(|(e, g)| (e, vec![g.iter().sum::<f64>()])))
        },
        &[bounds.clamp(gamma0)],
        &[bounds.min],
        &[bounds.max],
        opts,
    )?;
    let gamma = GammaField::uniform(n, report.x[0], GammaProvenance::OptimizedUniform);
    let evaluation = obj.state_at(&gamma.values)?;
    Ok(LocalityResult {
        gamma,
        report,
        evaluation,
    })
}

/// Independent `γ` per repatom.
pub fn optimize_nonuniform(
    problem: &QcProblem,
    gamma0: &[f64],
    bounds: GammaBounds,
    opts: &OptimizerOptions,
) -> Result<LocalityResult> {
    let n = problem.n_rep();
    let x0: Vec<f64> = gamma0.iter().map(|&g| bounds.clamp(g)).collect();
    let mut obj = LocalityObjective::new(problem);
    let report = minimize_bounded(|x| obj.evaluate(x), &x0, &vec![bounds.min; n], &vec![bounds.max; n], opts)?;
    let gamma = GammaField {
        values: report.x.clone(),
        provenance: GammaProvenance::OptimizedNonuniform,
    };
    let evaluation = obj.state_at(&gamma.values)?;
    Ok(LocalityResult {
        gamma,
        report,
        evaluation,
    })
}
