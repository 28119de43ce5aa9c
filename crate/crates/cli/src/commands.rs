use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use xqc::bench::{binned_gamma_stats, record, reference_solve, run_benchmark, scheme_context, BenchmarkSpec, Reference, SchemeRecord};
use xqc::enrichment::EnrichmentField;
use xqc::io::{self, Provenance, SummaryRow};
use xqc::scheme::{LmeScheme, LocalityMode, Scheme, SchemeOutput, SchemeRegistry};
use xqc::{Result, XqcError};

use crate::config::{GammaMode, RunConfig};

struct Session {
    config: RunConfig,
    spec: BenchmarkSpec,
    registry: SchemeRegistry,
    dir: PathBuf,
}

impl Session {
    fn new(config: &RunConfig) -> Result<Self> {
        let registry = SchemeRegistry::with_defaults();
        config.validate(&registry)?;
        let spec = config.benchmark_spec()?;
        let dir = config.output.dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            config: config.clone(),
            spec,
            registry,
            dir,
        })
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(self.config.hash())
            .with("command", command)
            .with("example", self.spec.example)
    }

    fn reference(&self) -> Result<Reference> {
        log::info!("full lattice solve for {}", self.spec.example);
        reference_solve(&self.spec, &self.config.solver_options())
    }

    fn path(&self, name: String) -> PathBuf {
        self.dir.join(name)
    }
}

fn tag(rec: &SchemeRecord) -> String {
    format!("{}_{}_{}", rec.example, rec.scheme, rec.h)
}

/// Per-cell artifacts shared by `solve-qc`, `optimize-gamma` and `bench`.
fn write_record(s: &Session, prov: &Provenance, rec: &SchemeRecord) -> Result<()> {
    let t = tag(rec);
    let prov = prov.clone().with("scheme", &rec.scheme).with("h", rec.h);
    io::write_error_field(&s.path(format!("errfield_{t}.csv")), &prov, &rec.per_atom_errors)?;
    if let Some(gamma) = &rec.gamma {
        io::write_gamma_field(&s.path(format!("gamma_{t}.csv")), &prov, rec)?;
        if let Some(psi) = &rec.psi {
            let stats = binned_gamma_stats(&gamma.values, psi, s.config.bench.bins)?;
            io::write_binned(&s.path(format!("binned_{t}.csv")), &prov, &stats)?;
        }
    }
    if let Some(trace) = &rec.trace {
        io::write_trace(&s.path(format!("trace_{t}.csv")), &prov, trace)?;
    }
    Ok(())
}

fn write_qc_summary(s: &Session, prov: &Provenance, rec: &SchemeRecord) -> Result<()> {
    let prov = prov.clone().with("scheme", &rec.scheme).with("h", rec.h);
    io::write_csv(
        &s.path(format!("qc_{}.csv", tag(rec))),
        &prov,
        &["h", "n_dof", "eps_u"],
        [vec![rec.h.to_string(), rec.n_dof.to_string(), rec.eps_u.to_string()]],
    )
}

pub fn solve_full(config: &RunConfig) -> Result<u8> {
    let s = Session::new(config)?;
    let r = s.reference()?;
    let prov = s.provenance("solve-full");
    let ex = s.spec.example;
    io::write_state(&s.path(format!("full_{ex}.csv")), &prov, &r.model, &r.state.positions)?;
    io::write_interactions(&s.path(format!("interactions_{ex}.csv")), &prov, &r.model)?;
    let mut meta = String::new();
    let mut header = Vec::new();
    prov.write_header(&mut header)?;
    meta.push_str(&String::from_utf8_lossy(&header));
    let iters: Vec<String> = r.state.iterations.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(meta, "example = \"{ex}\"");
    let _ = writeln!(meta, "n_atoms = {}", r.model.n_atoms());
    let _ = writeln!(meta, "n_dofs = {}", r.model.n_dofs());
    let _ = writeln!(meta, "n_interactions = {}", r.model.interactions.len());
    let _ = writeln!(meta, "energy = {}", r.state.energy);
    let _ = writeln!(meta, "residual_norm = {}", r.state.residual_norm);
    let _ = writeln!(meta, "newton_iterations = [{}]", iters.join(", "));
    fs::write(s.path(format!("full_{ex}_summary.toml")), &meta)?;
    println!(
        "example={ex} n_dofs={} energy={} residual={:e}",
        r.model.n_dofs(),
        r.state.energy,
        r.state.residual_norm
    );
    Ok(0)
}

fn dump(s: &Session, prov: &Provenance, r: &Reference, out: &SchemeOutput, t: &str) -> Result<()> {
    if let Some(table) = &out.evaluation.lme {
        io::write_lme_debug(&s.path(format!("lme_{t}.csv")), prov, table, s.config.run.h)?;
    }
    let field = EnrichmentField::heaviside_values(&s.spec.geometry, &r.model);
    io::write_field(&s.path(format!("field_{}.csv", s.spec.example)), prov, &field)?;
    io::write_basis(&s.path(format!("basis_{t}.csv")), prov, &out.evaluation.phi.enriched)
}

fn run_single(s: &Session, r: &Reference, scheme: &dyn Scheme, prov: &Provenance, with_dump: bool) -> Result<SchemeRecord> {
    let h = s.config.run.h;
    let ctx = scheme_context(&s.spec, r, h, &s.config.sweep_options());
    log::info!("{} h={h}", scheme.name());
    let out = scheme.run(&ctx)?;
    if with_dump {
        let t = format!("{}_{}_{}", s.spec.example, scheme.name(), h);
        dump(s, prov, r, &out, &t)?;
    }
    let rec = record(&s.spec, r, scheme.name(), h, out, 0.0)?;
    let mut positions = Vec::with_capacity(rec.u_qc.len());
    for a in 0..r.model.n_atoms() {
        let p = r.model.position0(a);
        positions.extend([p[0] + rec.u_qc[2 * a], p[1] + rec.u_qc[2 * a + 1]]);
    }
    let sprov = prov.clone().with("scheme", &rec.scheme).with("h", rec.h);
    io::write_state(&s.path(format!("state_{}.csv", tag(&rec))), &sprov, &r.model, &positions)?;
    write_qc_summary(s, prov, &rec)?;
    write_record(s, prov, &rec)?;
    Ok(rec)
}

pub fn solve_qc(config: &RunConfig, with_dump: bool) -> Result<u8> {
    let s = Session::new(config)?;
    let r = s.reference()?;
    let scheme = s.registry.get(&s.config.run.scheme)?;
    let rec = run_single(&s, &r, scheme, &s.provenance("solve-qc"), with_dump)?;
    println!(
        "example={} scheme={} h={} n_dof={} n_dof_standard={} eps_u={:e}",
        rec.example, rec.scheme, rec.h, rec.n_dof, rec.n_dof_standard, rec.eps_u
    );
    Ok(0)
}

pub fn optimize_gamma(config: &RunConfig) -> Result<u8> {
    let s = Session::new(config)?;
    let mode = s.config.mode()?;
    let enrich = s.config.gamma.enrichment;
    let (locality, label) = match mode {
        GammaMode::Uniform => (LocalityMode::Uniform, "uniform"),
        GammaMode::Nonuniform => (LocalityMode::Nonuniform, "nonuniform"),
        GammaMode::Pattern => (LocalityMode::Pattern, "pattern"),
    };
    let name = format!("lme-{label}-{}", if enrich { "H" } else { "noH" });
    let scheme = LmeScheme::new(&name, "", locality, enrich);
    let r = s.reference()?;
    let rec = run_single(&s, &r, &scheme, &s.provenance("optimize-gamma"), false)?;
    let gamma = rec.gamma.as_ref().ok_or_else(|| XqcError::InvalidConfig("scheme produced no locality field".into()))?;
    let mut line = format!("example={} scheme={} h={} eps_u={:e}", rec.example, rec.scheme, rec.h, rec.eps_u);
    match mode {
        GammaMode::Uniform => {
            let _ = write!(line, " gamma*={:.6}", gamma.values[0]);
        }
        _ => {
            let (lo, hi) = gamma.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
            let _ = write!(line, " gamma_min={lo:.6} gamma_max={hi:.6}");
        }
    }
    if let Some(c) = rec.optimizer_converged {
        let _ = write!(line, " iterations={} converged={c}", rec.trace.as_ref().map_or(0, |t| t.len().saturating_sub(1)));
        if !c {
            log::warn!("locality optimization stopped before convergence");
        }
    }
    println!("{line}");
    Ok(0)
}

pub fn bench(config: &RunConfig) -> Result<u8> {
    let s = Session::new(config)?;
    let r = s.reference()?;
    let prov = s.provenance("bench");
    let outcomes = run_benchmark(&s.spec, &r, &s.registry, &s.config.sweep_options())?;
    let mut rows = Vec::new();
    let mut failures = 0;
    for cell in &outcomes {
        match &cell.result {
            Ok(rec) => {
                write_record(&s, &prov, rec)?;
                rows.push(SummaryRow::from_record(rec, s.config.output.wall_time));
                println!("{} {} h={} n_dof={} eps_u={:e}", rec.example, rec.scheme, rec.h, rec.n_dof, rec.eps_u);
            }
            Err(msg) => {
                failures += 1;
                eprintln!("cell failed: example={} scheme={} h={} message=\"{msg}\"", s.spec.example, cell.scheme, cell.h);
                rows.push(SummaryRow {
                    example: s.spec.example.to_string(),
                    scheme: cell.scheme.clone(),
                    h: cell.h,
                    n_dof: None,
                    eps_u: None,
                    wall_s: None,
                });
            }
        }
    }
    io::write_summary(&s.path("sweep_summary.csv".into()), &prov, &rows)?;
    Ok(if failures > 0 { 1 } else { 0 })
}

fn read_uniform_gamma(path: &Path) -> Option<f64> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).ok()?;
    let col = r.headers().ok()?.iter().position(|h| h == "gamma")?;
    let rec = r.records().next()?.ok()?;
    rec.get(col)?.parse().ok()
}

pub fn report(config: &RunConfig, input: Option<&Path>) -> Result<u8> {
    let dir = input.map(Path::to_path_buf).unwrap_or_else(|| config.output.dir.clone());
    let rows = io::read_summary(&dir.join("sweep_summary.csv"))?;
    let prov = Provenance::new(config.hash()).with("command", "report").with("input", dir.display());
    let mut spacings: Vec<f64> = rows.iter().map(|r| r.h).collect::<Vec<_>>();
    spacings.sort_by(|a, b| b.total_cmp(a));
    spacings.dedup();
    let key = |r: &SummaryRow| (r.example.clone(), r.scheme.clone());
    let mut cells: BTreeMap<(String, String), BTreeMap<String, &SummaryRow>> = BTreeMap::new();
    for r in &rows {
        cells.entry(key(r)).or_default().insert(r.h.to_string(), r);
    }
    let hs: Vec<String> = spacings.iter().map(|h| h.to_string()).collect();
    let mut columns = vec!["example".to_string(), "scheme".to_string()];
    columns.extend(hs.iter().map(|h| format!("h{h}")));
    let col_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();

    let dof_rows: Vec<Vec<String>> = cells
        .iter()
        .map(|((ex, sc), by_h)| {
            let mut row = vec![ex.clone(), sc.clone()];
            row.extend(hs.iter().map(|h| by_h.get(h).and_then(|r| r.n_dof).map_or_else(|| "--".into(), |n| n.to_string())));
            row
        })
        .collect();
    io::write_csv(&dir.join("table_dofs.csv"), &prov, &col_refs, dof_rows.clone())?;

    let examples: BTreeSet<String> = rows.iter().map(|r| r.example.clone()).collect();
    let gamma_rows: Vec<Vec<String>> = examples
        .iter()
        .map(|ex| {
            let mut row = vec![ex.clone(), "lme-uniform-H".to_string()];
            row.extend(hs.iter().map(|h| {
                read_uniform_gamma(&dir.join(format!("gamma_{ex}_lme-uniform-H_{h}.csv"))).map_or_else(|| "--".into(), |g| format!("{g:.2}"))
            }));
            row
        })
        .collect();
    io::write_csv(&dir.join("table_gamma.csv"), &prov, &col_refs, gamma_rows.clone())?;

    let mut err_rows = Vec::new();
    for r in &rows {
        let linear = cells
            .get(&(r.example.clone(), "linear-H".to_string()))
            .and_then(|m| m.get(&r.h.to_string()))
            .and_then(|l| l.eps_u);
        let ratio = match (r.eps_u, linear) {
            (Some(e), Some(l)) if l > 0.0 => format!("{}", e / l),
            _ => String::new(),
        };
        err_rows.push(vec![
            r.example.clone(),
            r.scheme.clone(),
            r.h.to_string(),
            r.eps_u.map_or(String::new(), |e| e.to_string()),
            ratio,
        ]);
    }
    io::write_csv(&dir.join("table_errors.csv"), &prov, &["example", "scheme", "h", "eps_u", "ratio_to_linear_h"], err_rows.clone())?;

    let print = |title: &str, rows: &[Vec<String>]| {
        println!("{title}");
        println!("{}", columns.join("\t"));
        for r in rows {
            println!("{}", r.join("\t"));
        }
        println!();
    };
    print("Degrees of freedom", &dof_rows);
    print("Optimized uniform gamma", &gamma_rows);
    println!("Relative displacement error");
    println!("example\tscheme\th\teps_u\tratio_to_linear_h");
    for r in &err_rows {
        println!("{}", r.join("\t"));
    }
    Ok(0)
}
