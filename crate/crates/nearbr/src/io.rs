//! On-disk formats: JSON system files (state-space and structured kinds),
//! flat key=value solver configuration, and the convergence-trace CSV.
//!
//! Matrices are serialized as row-major arrays of decimal numbers with
//! shortest-roundtrip formatting, so read(write(x)) = x bit for bit.

use crate::algos::{ConvergenceTrace, SolverConfig};
use crate::error::{Error, Result};
use crate::sysmodel::{sph_to_lti, LtiSystem, SphForm};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// State-space quadruple (a, b, c, d).
    Lti,
    /// Structured factors (j, r, q, f, p, d).
    Sph,
    /// A single named matrix, e.g. a candidate storage certificate.
    Matrix,
}

/// The container every artifact travels in. Matrix keys are sorted, so
/// serialization is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub schema: u32,
    pub kind: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub matrices: BTreeMap<String, Vec<Vec<f64>>>,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Format(format!(
                "matrix '{key}' is ragged: row {i} has {} entries, row 0 has {ncols}",
                r.len()
            )));
        }
        for (j, v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "matrix '{key}' entry ({i}, {j}) is not finite: {v}"
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn require<'a>(file: &'a SystemFile, key: &str) -> Result<&'a Vec<Vec<f64>>> {
    file.matrices
        .get(key)
        .ok_or_else(|| Error::Format(format!("missing matrix '{key}'")))
}

pub fn lti_to_file(sys: &LtiSystem, name: Option<String>) -> SystemFile {
    let mut matrices = BTreeMap::new();
    matrices.insert("a".into(), matrix_to_rows(&sys.a));
    matrices.insert("b".into(), matrix_to_rows(&sys.b));
    matrices.insert("c".into(), matrix_to_rows(&sys.c));
    matrices.insert("d".into(), matrix_to_rows(&sys.d));
    SystemFile {
        schema: SCHEMA_VERSION,
        kind: SystemKind::Lti,
        name,
        seed: None,
        provenance: None,
        matrices,
    }
}

pub fn sph_to_file(sph: &SphForm, name: Option<String>) -> SystemFile {
    let mut matrices = BTreeMap::new();
    matrices.insert("j".into(), matrix_to_rows(&sph.j));
    matrices.insert("r".into(), matrix_to_rows(&sph.r));
    matrices.insert("q".into(), matrix_to_rows(&sph.q));
    matrices.insert("f".into(), matrix_to_rows(&sph.f));
    matrices.insert("p".into(), matrix_to_rows(&sph.p));
    matrices.insert("d".into(), matrix_to_rows(&sph.d));
    SystemFile {
        schema: SCHEMA_VERSION,
        kind: SystemKind::Sph,
        name,
        seed: None,
        provenance: None,
        matrices,
    }
}

pub fn matrix_to_file(m: &DMatrix<f64>, key: &str, name: Option<String>) -> SystemFile {
    let mut matrices = BTreeMap::new();
    matrices.insert(key.to_string(), matrix_to_rows(m));
    SystemFile {
        schema: SCHEMA_VERSION,
        kind: SystemKind::Matrix,
        name,
        seed: None,
        provenance: None,
        matrices,
    }
}

pub fn file_to_lti(file: &SystemFile) -> Result<LtiSystem> {
    if file.kind != SystemKind::Lti {
        return Err(Error::Format(format!(
            "expected a state-space file (kind 'lti'), got {:?}",
            file.kind
        )));
    }
    LtiSystem::new(
        rows_to_matrix(require(file, "a")?, "a")?,
        rows_to_matrix(require(file, "b")?, "b")?,
        rows_to_matrix(require(file, "c")?, "c")?,
        rows_to_matrix(require(file, "d")?, "d")?,
    )
}

pub fn file_to_sph(file: &SystemFile) -> Result<SphForm> {
    if file.kind != SystemKind::Sph {
        return Err(Error::Format(format!(
            "expected a structured file (kind 'sph'), got {:?}",
            file.kind
        )));
    }
    SphForm::new(
        rows_to_matrix(require(file, "j")?, "j")?,
        rows_to_matrix(require(file, "r")?, "r")?,
        rows_to_matrix(require(file, "q")?, "q")?,
        rows_to_matrix(require(file, "f")?, "f")?,
        rows_to_matrix(require(file, "p")?, "p")?,
        rows_to_matrix(require(file, "d")?, "d")?,
    )
}

/// Reads a system of either kind as a state-space quadruple (structured
/// files are realized first).
pub fn file_to_lti_any(file: &SystemFile) -> Result<LtiSystem> {
    match file.kind {
        SystemKind::Lti => file_to_lti(file),
        SystemKind::Sph => Ok(sph_to_lti(&file_to_sph(file)?)),
        SystemKind::Matrix => Err(Error::Format(
            "a bare matrix file does not describe a system".into(),
        )),
    }
}

pub fn file_to_matrix(file: &SystemFile) -> Result<DMatrix<f64>> {
    if file.kind != SystemKind::Matrix {
        return Err(Error::Format(format!(
            "expected a matrix file (kind 'matrix'), got {:?}",
            file.kind
        )));
    }
    let (key, rows) = file
        .matrices
        .iter()
        .next()
        .ok_or_else(|| Error::Format("matrix file holds no matrix".into()))?;
    if file.matrices.len() != 1 {
        return Err(Error::Format(format!(
            "matrix file must hold exactly one matrix, found {}",
            file.matrices.len()
        )));
    }
    rows_to_matrix(rows, key)
}

pub fn parse_system_file(text: &str) -> Result<SystemFile> {
    let file: SystemFile = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("invalid system file: {e}")))?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported schema version {} (this build reads {SCHEMA_VERSION})",
            file.schema
        )));
    }
    Ok(file)
}

pub fn render_system_file(file: &SystemFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("system files always serialize");
    s.push('\n');
    s
}

pub fn read_system_file(path: &Path) -> Result<SystemFile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_system_file(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_system_file(path: &Path, file: &SystemFile) -> Result<()> {
    std::fs::write(path, render_system_file(file)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Applies one `key = value` pair onto a configuration. Keys are the
/// solver parameter names; `weights` takes four comma-separated numbers,
/// `epsilon` and `time_limit` accept `none`.
pub fn apply_config_kv(cfg: &mut SolverConfig, key: &str, value: &str) -> Result<()> {
    let parse_f64 = |v: &str| -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("'{key}' expects a number, got '{v}'")))
    };
    let parse_opt = |v: &str| -> Result<Option<f64>> {
        if v.trim().eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            parse_f64(v).map(Some)
        }
    };
    match key {
        "max_outer" => {
            cfg.max_outer = value.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("'max_outer' expects a positive integer, got '{value}'"))
            })?;
        }
        "inner_iters" => cfg.inner_iters = parse_f64(value)?,
        "delta" => cfg.delta = parse_f64(value)?,
        "beta" => cfg.beta = parse_f64(value)?,
        "eta" => cfg.eta = parse_f64(value)?,
        "gamma" => cfg.gamma = parse_f64(value)?,
        "rho" => cfg.rho = parse_f64(value)?,
        "epsilon" => cfg.epsilon = parse_opt(value)?,
        "weights" => {
            let parts: Vec<&str> = value.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "'weights' expects four comma-separated numbers, got '{value}'"
                )));
            }
            for (slot, part) in cfg.weights.iter_mut().zip(parts) {
                *slot = part
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad weight '{part}'")))?;
            }
        }
        "time_limit" => cfg.time_limit = parse_opt(value)?,
        "br_tol" => cfg.br_tol = parse_f64(value)?,
        "target_rel_err" => cfg.target_rel_err = parse_opt(value)?,
        "admm_warm_start" => {
            cfg.admm_warm_start = match value.trim() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => {
                    return Err(Error::Config(format!(
                        "'admm_warm_start' expects true or false, got '{other}'"
                    )))
                }
            };
        }
        "init_budget_frac" => cfg.init_budget_frac = parse_f64(value)?,
        other => {
            return Err(Error::Config(format!("unknown configuration key '{other}'")));
        }
    }
    Ok(())
}

/// Flat key=value config text; blank lines and lines starting with # are
/// skipped. Later lines override earlier ones.
pub fn apply_config_text(cfg: &mut SolverConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got '{line}'", lineno + 1))
        })?;
        apply_config_kv(cfg, key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(())
}

pub fn apply_config_file(cfg: &mut SolverConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    apply_config_text(cfg, &text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub const TRACE_HEADER: &str = "k,time_s,rel_err,beta,inner_I,restart";

pub fn render_trace_csv(trace: &ConvergenceTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.k,
            row.time_s,
            row.rel_err,
            row.beta,
            row.inner_i,
            row.restart as u8
        ));
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &ConvergenceTrace) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(render_trace_csv(trace).as_bytes())
        .map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
}
