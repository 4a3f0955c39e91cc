//! Dataset files: CSV with one point per row under a header `x0..x{d-1}`,
//! plus a JSON sidecar describing how the data were generated.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn write_dataset<W: Write>(out: W, points: &[DVector<f64>]) -> Result<()> {
    let d = points.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..d).map(|j| format!("x{j}"))).map_err(csv_err)?;
    for x in points {
        if x.len() != d {
            return Err(Error::InvalidInput("points have differing dimensions".into()));
        }
        // `{:?}` on f64 round-trips exactly.
        w.write_record(x.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let d = header.len();
    if d == 0 {
        return Err(Error::Parse("empty header".into()));
    }
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("x{j}") {
            return Err(Error::Parse(format!("header column {j} is {h:?}, expected x{j}")));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d {
            return Err(Error::Parse(format!("row {} has {} fields, expected {d}", line + 1, rec.len())));
        }
        let mut v = DVector::zeros(d);
        for (j, f) in rec.iter().enumerate() {
            let x: f64 = f.trim().parse().map_err(|_| Error::Parse(format!("row {} column {j}: bad number {f:?}", line + 1)))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("row {} column {j}: non-finite value", line + 1)));
            }
            v[j] = x;
        }
        out.push(v);
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub eps: f64,
    pub seed: u64,
    pub strategy: Option<String>,
    pub inlier_mask: Option<Vec<bool>>,
}

impl Sidecar {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Sidecar = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if !(0.0..1.0).contains(&sc.eps) {
            return Err(Error::Parse(format!("eps = {} outside [0, 1)", sc.eps)));
        }
        Ok(sc)
    }

    /// The sidecar must describe exactly `n` points.
    pub fn check_against(&self, n: usize) -> Result<()> {
        if let Some(m) = &self.inlier_mask {
            if m.len() != n {
                return Err(Error::InvalidInput(format!("mask has {} entries for {n} points", m.len())));
            }
        }
        Ok(())
    }
}

/// Upper limit on the number of seeds one spec may expand to.
pub const MAX_SEEDS: u64 = 1_000_000;

/// Parses `7`, `1..20` (inclusive), or comma-separated mixes of both.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(Error::Parse(format!("empty item in seed list {spec:?}")));
        }
        if let Some((a, b)) = part.split_once("..") {
            let lo = parse_u64(a)?;
            let hi = parse_u64(b.strip_prefix('=').unwrap_or(b))?;
            if hi < lo {
                return Err(Error::Parse(format!("descending seed range {part:?}")));
            }
            if hi - lo >= MAX_SEEDS || out.len() as u64 + (hi - lo) >= MAX_SEEDS {
                return Err(Error::Parse(format!("seed range {part:?} too large")));
            }
            out.extend(lo..=hi);
        } else {
            out.push(parse_u64(part)?);
        }
    }
    Ok(out)
}

fn parse_u64(s: &str) -> Result<u64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad seed {s:?}")))
}
