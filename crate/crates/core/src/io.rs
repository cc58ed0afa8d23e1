//! Result files: CSV tables, JSON summaries and a binary grid container.
//!
//! The grid container is the 8-byte magic `IPSGRID\0`, a little-endian `u64`
//! header length, a JSON header, then the values as little-endian `f64` in
//! row-major order. Floats in CSV files carry 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{ChaosRow, ErrorNorm, RateReport};
use crate::grid::{GridField, GridSpec};
use crate::kernel::KernelFamily;
use crate::pde::NormSample;

pub const GRID_MAGIC: &[u8; 8] = b"IPSGRID\0";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: malformed file ({reason})")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHeader {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vb: Option<f64>,
}

impl From<KernelFamily> for KernelHeader {
    fn from(k: KernelFamily) -> Self {
        let mut h = KernelHeader {
            family: k.name().into(),
            s: None,
            attractive: None,
            chi: None,
            a: None,
            b: None,
            va: None,
            vb: None,
        };
        match k {
            KernelFamily::Riesz { s, attractive } => {
                h.s = Some(s);
                h.attractive = Some(attractive);
            }
            KernelFamily::KellerSegel { chi } => h.chi = Some(chi),
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                h.a = Some(a);
                h.b = Some(b);
                h.va = Some(va);
                h.vb = Some(vb);
            }
            _ => {}
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub d: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub t: f64,
    pub kernel: KernelHeader,
}

pub fn encode_grid(field: &GridField, t: f64, kernel: KernelFamily) -> Vec<u8> {
    let header = GridHeader { d: field.spec.d, g: field.spec.g, l: field.spec.l, t, kernel: kernel.into() };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * field.values.len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<(GridHeader, GridField), IoError> {
    let fail = |reason: &str| IoError::Format { path: path.display().to_string(), reason: reason.into() };
    if bytes.len() < 16 || &bytes[..8] != GRID_MAGIC {
        return Err(fail("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| fail("truncated header"))?;
    let header: GridHeader = serde_json::from_slice(&bytes[16..body]).map_err(|e| fail(&e.to_string()))?;
    let spec = GridSpec::new(header.d, header.g, header.l).map_err(|e| fail(&e.to_string()))?;
    let data = &bytes[body..];
    if data.len() != 8 * spec.len() {
        return Err(fail(&format!("expected {} values, found {} bytes", spec.len(), data.len())));
    }
    let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, GridField { spec, values }))
}

pub fn write_grid(path: &Path, field: &GridField, t: f64, kernel: KernelFamily) -> Result<(), IoError> {
    write_bytes(path, &encode_grid(field, t, kernel))
}

pub fn read_grid(path: &Path) -> Result<(GridHeader, GridField), IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    decode_grid(&bytes, path)
}

/// Write `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(io_err(path))
}

#[inline]
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn norm_trace_csv(trace: &[NormSample]) -> String {
    let mut s = String::from("t,l1,lr,mass,min\n");
    for p in trace {
        let _ = writeln!(s, "{},{},{},{},{}", num(p.t), num(p.l1), num(p.lr), num(p.mass), num(p.min));
    }
    s
}

pub fn rate_csv(report: &RateReport) -> String {
    let mut s = String::from("n,reps,mean_err,std_err\n");
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{},{}", r.n, r.reps, num(r.mean_err), num(r.std_err));
    }
    s
}

pub fn chaos_csv(rows: &[ChaosRow]) -> String {
    let mut s = String::from("n,rep,gap\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.n, r.rep, num(r.gap));
    }
    s
}

pub fn particles_csv(d: usize, positions: &[f64]) -> String {
    let mut s = String::from("i");
    for a in 1..=d {
        let _ = write!(s, ",x{a}");
    }
    s.push('\n');
    for (i, x) in positions.chunks(d).enumerate() {
        let _ = write!(s, "{i}");
        for v in x {
            let _ = write!(s, ",{}", num(*v));
        }
        s.push('\n');
    }
    s
}

/// Read a particle snapshot written by [`particles_csv`].
pub fn read_particles_csv(path: &Path) -> Result<(usize, Vec<f64>), IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let fail = |reason: String| IoError::Format { path: path.display().to_string(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let d = header.split(',').count().saturating_sub(1);
    if d == 0 || !header.starts_with("i,x1") {
        return Err(fail(format!("unexpected header `{header}`")));
    }
    let mut pos = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 1 {
            return Err(fail(format!("row {} has {} columns", k + 1, cols.len())));
        }
        for c in &cols[1..] {
            pos.push(c.trim().parse::<f64>().map_err(|_| fail(format!("row {}: bad number `{c}`", k + 1)))?);
        }
    }
    Ok((d, pos))
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// JSON numbers cannot be NaN or infinite; those become `null`.
pub fn json_number(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
}

pub fn rate_summary_json(report: &RateReport, config_echo: &str) -> String {
    let norm = match report.norm {
        ErrorNorm::L1 => "l1",
        ErrorNorm::L1Lr => "l1lr",
        ErrorNorm::Kr => "kr",
    };
    let v = serde_json::json!({
        "slope": json_number(report.slope),
        "slope_ci": json_number(report.slope_ci),
        "rho_theory": json_number(report.rho_theory),
        "admissible": report.admissible,
        "norm": norm,
        "config": config_echo,
        "version": version_string(),
    });
    serde_json::to_string_pretty(&v).expect("summary serializes") + "\n"
}

/// Summary for runs other than rate sweeps.
pub fn summary_json(fields: serde_json::Map<String, serde_json::Value>, config_echo: &str) -> String {
    let mut m = fields;
    m.insert("config".into(), config_echo.into());
    m.insert("version".into(), version_string().into());
    serde_json::to_string_pretty(&serde_json::Value::Object(m)).expect("summary serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip() {
        let spec = GridSpec::new(2, 8, 1.5).unwrap();
        let f = GridField::from_fn(spec, |x| x[0] - 2.0 * x[1]);
        let k = KernelFamily::KellerSegel { chi: 3.0 };
        let bytes = encode_grid(&f, 0.25, k);
        let (h, g) = decode_grid(&bytes, Path::new("mem")).unwrap();
        assert_eq!(g, f);
        assert_eq!(h.t, 0.25);
        assert_eq!(h.kernel.chi, Some(3.0));
        assert!(decode_grid(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode_grid(b"nonsense", Path::new("mem")).is_err());
    }

    #[test]
    fn particle_csv_round_trip() {
        let pos = vec![0.1, -2.5, 1e-300, 3.0];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        write_bytes(&p, particles_csv(2, &pos).as_bytes()).unwrap();
        let (d, back) = read_particles_csv(&p).unwrap();
        assert_eq!(d, 2);
        assert_eq!(back, pos);
    }
}
