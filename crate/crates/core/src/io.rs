//! CSV export. Every file starts with `#` comment lines carrying the
//! producing version, the configuration hash and run metadata; rows follow
//! in index order with fixed column order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::basis::LmeTable;
use crate::bench::{BinnedGammaStats, SchemeRecord};
use crate::enrichment::{EnrichedBasis, EnrichmentField};
use crate::error::Result;
use crate::lattice::LatticeModel;
use crate::locality::TraceRow;

/// Comment header identifying how a file was produced.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write_header(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# xqc {}", self.version)?;
        writeln!(w, "# config_sha256 {}", self.config_hash)?;
        for (k, v) in &self.entries {
            writeln!(w, "# {k} {v}")?;
        }
        Ok(())
    }
}

/// Writes a provenance header, a column header and the rows.
pub fn write_csv<I, R>(path: &Path, prov: &Provenance, columns: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = BufWriter::new(File::create(path)?);
    prov.write_header(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn f(x: f64) -> String {
    format!("{x}")
}

/// `atom_id,x0,y0,x,y,ux,uy`.
pub fn write_state(path: &Path, prov: &Provenance, model: &LatticeModel, positions: &[f64]) -> Result<()> {
    let rows = (0..model.n_atoms()).map(|a| {
        let p0 = model.position0(a);
        let (x, y) = (positions[2 * a], positions[2 * a + 1]);
        vec![a.to_string(), f(p0[0]), f(p0[1]), f(x), f(y), f(x - p0[0]), f(y - p0[1])]
    });
    write_csv(path, prov, &["atom_id", "x0", "y0", "x", "y", "ux", "uy"], rows)
}

/// `id,alpha,beta,E,A,r0`.
pub fn write_interactions(path: &Path, prov: &Provenance, model: &LatticeModel) -> Result<()> {
    let rows = model.interactions.iter().enumerate().map(|(i, it)| {
        vec![
            i.to_string(),
            it.alpha.to_string(),
            it.beta.to_string(),
            f(it.young_modulus),
            f(it.area),
            f(it.rest_length),
        ]
    });
    write_csv(path, prov, &["id", "alpha", "beta", "E", "A", "r0"], rows)
}

/// `atom_id,lambda_x,lambda_y,iters,n_support`; multipliers in physical units.
pub fn write_lme_debug(path: &Path, prov: &Provenance, table: &LmeTable, h: f64) -> Result<()> {
    let rows = table.meta.iter().enumerate().map(|(a, m)| {
        vec![
            a.to_string(),
            f(m.lambda[0] / h),
            f(m.lambda[1] / h),
            m.iterations.to_string(),
            table.shapes.row(a).0.len().to_string(),
        ]
    });
    write_csv(path, prov, &["atom_id", "lambda_x", "lambda_y", "iters", "n_support"], rows)
}

/// `atom_id,psi,chi`.
pub fn write_field(path: &Path, prov: &Provenance, field: &EnrichmentField) -> Result<()> {
    let rows = field.psi.iter().zip(&field.chi).enumerate().map(|(a, (p, c))| vec![a.to_string(), f(*p), f(*c)]);
    write_csv(path, prov, &["atom_id", "psi", "chi"], rows)
}

/// Sparse triplets `atom_id,enriched_col,value` of the orthonormalized
/// enriched columns, row-major.
pub fn write_basis(path: &Path, prov: &Provenance, basis: &EnrichedBasis) -> Result<()> {
    let mut rows = Vec::new();
    for (slot, &a) in basis.atoms.iter().enumerate() {
        for (j, col) in basis.columns.iter().enumerate() {
            let v = col[slot];
            if v != 0.0 {
                rows.push(vec![a.to_string(), j.to_string(), f(v)]);
            }
        }
    }
    write_csv(path, prov, &["atom_id", "enriched_col", "value"], rows)
}

/// `atom_id,eps_u_alpha`.
pub fn write_error_field(path: &Path, prov: &Provenance, per_atom: &[f64]) -> Result<()> {
    let rows = per_atom.iter().enumerate().map(|(a, e)| vec![a.to_string(), f(*e)]);
    write_csv(path, prov, &["atom_id", "eps_u_alpha"], rows)
}

/// `iter,energy,proj_grad_norm`.
pub fn write_trace(path: &Path, prov: &Provenance, trace: &[TraceRow]) -> Result<()> {
    let rows = trace.iter().map(|t| vec![t.iter.to_string(), f(t.energy), f(t.proj_grad_norm)]);
    write_csv(path, prov, &["iter", "energy", "proj_grad_norm"], rows)
}

/// `repatom_id,x,y,psi,gamma,enriched_flag`.
pub fn write_gamma_field(path: &Path, prov: &Provenance, record: &SchemeRecord) -> Result<()> {
    let gamma = record.gamma.as_ref().map(|g| g.values.as_slice());
    let rows = record.repatoms.iter().enumerate().map(|(i, p)| {
        vec![
            i.to_string(),
            f(p[0]),
            f(p[1]),
            record.psi.as_ref().map_or(String::new(), |s| f(s[i])),
            gamma.map_or(String::new(), |g| f(g[i])),
            u8::from(record.enriched[i]).to_string(),
        ]
    });
    write_csv(path, prov, &["repatom_id", "x", "y", "psi", "gamma", "enriched_flag"], rows)
}

/// `bin,psi_lo,psi_hi,count,q1,median,q3`.
pub fn write_binned(path: &Path, prov: &Provenance, stats: &BinnedGammaStats) -> Result<()> {
    let rows = stats.bins.iter().map(|b| {
        vec![
            b.index.to_string(),
            f(b.lo),
            f(b.hi),
            b.count.to_string(),
            f(b.q1),
            f(b.median),
            f(b.q3),
        ]
    });
    write_csv(path, prov, &["bin", "psi_lo", "psi_hi", "count", "q1", "median", "q3"], rows)
}

/// One row of `sweep_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub example: String,
    pub scheme: String,
    pub h: f64,
    pub n_dof: Option<usize>,
    pub eps_u: Option<f64>,
    pub wall_s: Option<f64>,
}

impl SummaryRow {
    pub fn from_record(r: &SchemeRecord, with_time: bool) -> Self {
        Self {
            example: r.example.to_string(),
            scheme: r.scheme.clone(),
            h: r.h,
            n_dof: Some(r.n_dof),
            eps_u: Some(r.eps_u),
            wall_s: with_time.then_some(r.wall_s),
        }
    }
}

/// `example,scheme,h,n_dof,eps_u,wall_s`; failed cells leave the numeric
/// fields empty.
pub fn write_summary(path: &Path, prov: &Provenance, rows: &[SummaryRow]) -> Result<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let out = rows.iter().map(|r| {
        vec![
            r.example.clone(),
            r.scheme.clone(),
            f(r.h),
            opt(r.n_dof.map(|n| n.to_string())),
            opt(r.eps_u.map(f)),
            opt(r.wall_s.map(f)),
        ]
    });
    write_csv(path, prov, &["example", "scheme", "h", "n_dof", "eps_u", "wall_s"], out)
}

/// Reads `sweep_summary.csv` back, skipping comment lines.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    let num = |s: &str| -> Option<f64> { if s.is_empty() { None } else { s.parse().ok() } };
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SummaryRow {
            example: get(0).to_string(),
            scheme: get(1).to_string(),
            h: num(get(2)).unwrap_or(f64::NAN),
            n_dof: get(3).parse().ok(),
            eps_u: num(get(4)),
            wall_s: num(get(5)),
        });
    }
    Ok(rows)
}
