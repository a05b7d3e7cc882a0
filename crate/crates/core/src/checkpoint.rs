//! Plain-text model checkpoint.
//!
//! One field per line, `key value..`, floats with 17 significant digits so
//! that `load(save(m)) == m` bit for bit:
//!
//! ```text
//! version 1
//! n 1
//! d 2
//! M 30
//! h 5.0000000000000003e-2
//! tau_max 1.5000000000000000e0
//! delays 0.0000000000000000e0 1.0000000000000000e0
//! dims 2 5 5 1
//! W1 ...
//! b1 ...
//! W2 ...
//! b2 ...
//! W3 ...
//! ```

use std::io::{BufRead, Write};

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::mlp::MlpParameters;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub tau_max: f64,
    pub delays: Vec<f64>,
    pub mlp: MlpParameters,
}

impl ModelCheckpoint {
    pub fn d(&self) -> usize {
        self.delays.len()
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| csvfmt::exact(x)).collect::<Vec<_>>().join(" ")
}

pub fn save<W: Write>(model: &ModelCheckpoint, mut w: W) -> Result<()> {
    writeln!(w, "version {FORMAT_VERSION}")?;
    writeln!(w, "n {}", model.n)?;
    writeln!(w, "d {}", model.d())?;
    writeln!(w, "M {}", model.m)?;
    writeln!(w, "h {}", csvfmt::exact(model.h))?;
    writeln!(w, "tau_max {}", csvfmt::exact(model.tau_max))?;
    writeln!(w, "delays {}", join(&model.delays))?;
    let dims: Vec<String> = model.mlp.dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    for (name, range) in model.mlp.blocks() {
        writeln!(w, "{name} {}", join(&model.mlp.data[range]))?;
    }
    Ok(())
}

pub fn load<R: BufRead>(r: R) -> Result<ModelCheckpoint> {
    let mut fields: Vec<(String, Vec<String>)> = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().expect("non-empty line").to_string();
        fields.push((key, toks.map(str::to_string).collect()));
    }
    let get = |k: &str| -> Result<&Vec<String>> {
        fields
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Parse(format!("checkpoint missing field {k:?}")))
    };
    let one = |k: &str| -> Result<&str> {
        let v = get(k)?;
        if v.len() != 1 {
            return Err(Error::Parse(format!("field {k:?} expects one value")));
        }
        Ok(&v[0])
    };
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))) };
    let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("bad integer {s:?}"))) };

    let version = int(one("version")?)?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let n = int(one("n")?)?;
    let d = int(one("d")?)?;
    let m = int(one("M")?)?;
    let h = num(one("h")?)?;
    let tau_max = num(one("tau_max")?)?;
    let delays = get("delays")?.iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
    if delays.len() != d {
        return Err(Error::Parse(format!("expected {d} delays, found {}", delays.len())));
    }
    let dims = get("dims")?.iter().map(|s| int(s)).collect::<Result<Vec<_>>>()?;
    if dims.first() != Some(&(d * n)) || dims.last() != Some(&n) {
        return Err(Error::Parse(format!("dims {dims:?} inconsistent with n={n}, d={d}")));
    }
    let last = dims.len() - 1;
    let output_bias = fields.iter().any(|(k, _)| *k == format!("b{last}"));
    let mut mlp = MlpParameters::zeros(&dims, output_bias)?;
    for (name, range) in mlp.blocks() {
        let vals = get(&name)?;
        if vals.len() != range.len() {
            return Err(Error::Parse(format!(
                "block {name} has {} values, expected {}",
                vals.len(),
                range.len()
            )));
        }
        for (dst, s) in mlp.data[range].iter_mut().zip(vals) {
            *dst = num(s)?;
        }
    }
    Ok(ModelCheckpoint {
        n,
        m,
        h,
        tau_max,
        delays,
        mlp,
    })
}

pub fn save_file(model: &ModelCheckpoint, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    save(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_file(path: &std::path::Path) -> Result<ModelCheckpoint> {
    let f = std::fs::File::open(path)?;
    load(std::io::BufReader::new(f))
}
