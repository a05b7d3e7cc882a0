//! Sampled Mackey-Glass trajectories and their CSV representation.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::csvfmt;
use crate::dde::{simulate_dde, HistorySpec, MackeyGlass, MgParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub id: usize,
    pub times: Vec<f64>,
    /// `times.len() * n` values, sample-major.
    pub values: Vec<f64>,
}

impl SampledTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Trajectories sampled at spacing `h`; the first `train_len` samples of each
/// trajectory are training data, the rest test data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub n: usize,
    pub h: f64,
    pub tau_max: f64,
    pub m: usize,
    pub train_len: usize,
    pub trajectories: Vec<SampledTrajectory>,
}

impl TrajectoryDataset {
    pub fn samples_per_trajectory(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }

    pub fn train_values(&self, traj: usize) -> &[f64] {
        let t = &self.trajectories[traj];
        &t.values[..self.train_len.min(t.len()) * self.n]
    }

    pub fn test_len(&self) -> usize {
        self.samples_per_trajectory().saturating_sub(self.train_len)
    }

    /// Keeps only the first `count` trajectories.
    pub fn truncated(&self, count: usize) -> Self {
        let mut out = self.clone();
        out.trajectories.truncate(count);
        out
    }
}

/// `tau_max / h`, required to be a whole number.
pub fn mesh_count(tau_max: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(tau_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need h>0 and tau_max>0 (h={h}, tau_max={tau_max})"
        )));
    }
    let ratio = tau_max / h;
    let m = ratio.round();
    if (ratio - m).abs() > 1e-9 * m.max(1.0) || m < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "tau_max={tau_max} is not a multiple of h={h}"
        )));
    }
    Ok(m as usize)
}

/// Constant history level for trajectory `i` of `n_traj`.
pub fn initial_level(i: usize, n_traj: usize) -> f64 {
    if n_traj <= 1 {
        0.5
    } else {
        0.5 + i as f64 / (n_traj - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub params: MgParams,
    pub n_traj: usize,
    pub h: f64,
    pub tau_max: f64,
    pub t_drop: f64,
    pub t_train_end: f64,
    pub t_test_end: f64,
    /// Internal integration steps per sample interval.
    pub substeps: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            params: MgParams::default(),
            n_traj: 100,
            h: 0.05,
            tau_max: 1.5,
            t_drop: 10.0,
            t_train_end: 17.0,
            t_test_end: 20.0,
            substeps: 10,
        }
    }
}

fn count_samples(span: f64, h: f64) -> usize {
    (span / h + 1e-9).floor() as usize + 1
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<TrajectoryDataset> {
    cfg.params.validate()?;
    if cfg.n_traj == 0 {
        return Err(Error::InvalidParameter("n_traj must be >= 1".into()));
    }
    if cfg.substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    if cfg.t_drop >= cfg.t_train_end {
        return Err(Error::EmptyTrainingWindow {
            t_drop: cfg.t_drop,
            t_train_end: cfg.t_train_end,
        });
    }
    if cfg.t_test_end < cfg.t_train_end {
        return Err(Error::InvalidParameter(format!(
            "t_test_end={} precedes t_train_end={}",
            cfg.t_test_end, cfg.t_train_end
        )));
    }
    let m = mesh_count(cfg.tau_max, cfg.h)?;
    if cfg.params.tau > cfg.tau_max {
        return Err(Error::DelayOutOfRange {
            tau: cfg.params.tau,
            max: cfg.tau_max,
        });
    }
    let total = count_samples(cfg.t_test_end - cfg.t_drop, cfg.h);
    let train_len = count_samples(cfg.t_train_end - cfg.t_drop, cfg.h);
    let dt = cfg.h / cfg.substeps as f64;
    let system = MackeyGlass::new(cfg.params)?;

    let trajectories = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let c = initial_level(i, cfg.n_traj);
            let dense = simulate_dde(&system, &HistorySpec::scalar(c, cfg.tau_max), cfg.t_test_end, dt)?;
            let times: Vec<f64> = (0..total).map(|k| cfg.t_drop + k as f64 * cfg.h).collect();
            let values = times.iter().map(|&t| dense.value_at(t)[0]).collect();
            Ok(SampledTrajectory { id: i, times, values })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrajectoryDataset {
        n: 1,
        h: cfg.h,
        tau_max: cfg.tau_max,
        m,
        train_len,
        trajectories,
    })
}

pub fn write_dataset<W: Write>(ds: &TrajectoryDataset, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# n={} h={} tau_max={} M={}",
        ds.n,
        csvfmt::value(ds.h),
        csvfmt::value(ds.tau_max),
        ds.m
    )?;
    let cols: Vec<String> = (1..=ds.n).map(|i| format!("x_{i}")).collect();
    writeln!(w, "traj_id,t,{}", cols.join(","))?;
    for traj in &ds.trajectories {
        for (k, &t) in traj.times.iter().enumerate() {
            write!(w, "{},{}", traj.id, csvfmt::time(t))?;
            for c in 0..ds.n {
                write!(w, ",{}", csvfmt::value(traj.values[k * ds.n + c]))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Header fields of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub n: usize,
    pub h: f64,
    pub tau_max: f64,
    pub m: usize,
}

pub fn parse_header(line: &str) -> Result<DatasetHeader> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("dataset header must start with '#': {line:?}")))?;
    let (mut n, mut h, mut tau_max, mut m) = (None, None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token {tok:?}")))?;
        let bad = |_| Error::Parse(format!("bad header value {tok:?}"));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "h" => h = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "tau_max" => tau_max = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "M" => m = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => {}
        }
    }
    match (n, h, tau_max, m) {
        (Some(n), Some(h), Some(tau_max), Some(m)) => Ok(DatasetHeader { n, h, tau_max, m }),
        _ => Err(Error::Parse(format!("incomplete dataset header: {line:?}"))),
    }
}

/// Reads a dataset; samples with `t <= t_train_end` form the training split.
pub fn read_dataset<R: BufRead>(r: R, t_train_end: f64) -> Result<TrajectoryDataset> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let header = parse_header(&header_line)?;
    if header.m != mesh_count(header.tau_max, header.h)? {
        return Err(Error::Parse(format!(
            "header M={} inconsistent with tau_max/h={}",
            header.m,
            header.tau_max / header.h
        )));
    }
    let mut trajectories: Vec<SampledTrajectory> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') || line.starts_with("traj_id") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + header.n {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                2 + header.n,
                fields.len()
            )));
        }
        let perr = |f: &str| Error::Parse(format!("line {}: bad number {f:?}", lineno + 2));
        let id: usize = fields[0].parse().map_err(|_| perr(fields[0]))?;
        let t: f64 = fields[1].parse().map_err(|_| perr(fields[1]))?;
        if trajectories.last().map_or(true, |tr| tr.id != id) {
            trajectories.push(SampledTrajectory {
                id,
                times: Vec::new(),
                values: Vec::new(),
            });
        }
        let tr = trajectories.last_mut().expect("pushed above");
        tr.times.push(t);
        for f in &fields[2..] {
            tr.values.push(f.parse().map_err(|_| perr(f))?);
        }
    }
    let train_len = trajectories.first().map_or(0, |tr| {
        tr.times
            .iter()
            .take_while(|&&t| t <= t_train_end + 1e-9 * t_train_end.abs().max(1.0))
            .count()
    });
    Ok(TrajectoryDataset {
        n: header.n,
        h: header.h,
        tau_max: header.tau_max,
        m: header.m,
        train_len,
        trajectories,
    })
}
