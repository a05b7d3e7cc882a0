//! Batched training of the network weights and delays with Adam.

use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvfmt;
use crate::dataset::TrajectoryDataset;
use crate::discretization::HistoryGrid;
use crate::error::{Error, Result};
use crate::mlp::init_glorot_with;
use crate::node::{backprop, integrate, loss, predict, Gradients, NodeSystem, DEFAULT_SUBSTEPS};

/// Loss recorded for a batch member whose simulation diverged.
pub const DIVERGED_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub k: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            k: 0,
        }
    }
}

/// One Adam update of `theta` in place.
pub fn adam_step(theta: &mut [f64], g: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if theta.len() != g.len() || state.m.len() != g.len() || state.v.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: g.len(),
        });
    }
    state.k += 1;
    let k = state.k as i32;
    let c1 = 1.0 - cfg.beta1.powi(k);
    let c2 = 1.0 - cfg.beta2.powi(k);
    for i in 0..theta.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= cfg.lr / (v_hat.sqrt() + cfg.eps) * m_hat;
    }
    Ok(())
}

pub fn clamp_delays(delays: &[f64], tau_max: f64) -> Vec<f64> {
    delays.iter().map(|&t| t.min(tau_max).max(0.0)).collect()
}

/// History window and the `N` samples that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub traj: usize,
    /// Index of the oldest history sample within the trajectory.
    pub start: usize,
    pub history: HistoryGrid,
    pub target: Vec<f64>,
}

/// Sliding windows with stride 1 over the training split of every trajectory.
pub fn build_pairs(ds: &TrajectoryDataset, m: usize, horizon: usize) -> Result<Vec<TrainingPair>> {
    let n = ds.n;
    let mut pairs = Vec::new();
    for (ti, _) in ds.trajectories.iter().enumerate() {
        let vals = ds.train_values(ti);
        let len = vals.len() / n;
        let need = m + 1 + horizon;
        if len < need {
            return Err(Error::TrajectoryTooShort { have: len, need });
        }
        for k in 0..=len - need {
            let history = HistoryGrid::from_window(n, ds.h, &vals[k * n..(k + m + 1) * n]);
            let target = vals[(k + m + 1) * n..(k + m + 1 + horizon) * n].to_vec();
            pairs.push(TrainingPair {
                traj: ti,
                start: k,
                history,
                target,
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Number of delays `d`.
    pub delays: usize,
    pub hidden: Vec<usize>,
    pub substeps: usize,
    /// When false the first delay is pinned at zero and not trained.
    pub learn_first_delay: bool,
    /// Initial delays; drawn uniformly on `[0, tau_max]` when absent.
    pub initial_delays: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            iterations: 2000,
            batch_size: 1000,
            horizon: 10,
            seed: 0,
            delays: 2,
            hidden: vec![5, 5],
            substeps: DEFAULT_SUBSTEPS,
            learn_first_delay: false,
            initial_delays: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Summed batch loss.
    pub loss: f64,
    pub delays: Vec<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
    /// Wall-clock seconds per iteration; not part of the CSV.
    pub wall_secs: Vec<f64>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// First iteration at which the loss improved by less than `rel` over the
    /// preceding `window` iterations (losses smoothed over `window / 5`).
    pub fn plateau(&self, window: usize, rel: f64) -> Option<usize> {
        let losses = self.losses();
        let smooth = (window / 5).max(1);
        if losses.len() < window + smooth {
            return None;
        }
        let avg = |end: usize| losses[end + 1 - smooth..=end].iter().sum::<f64>() / smooth as f64;
        (window + smooth - 1..losses.len()).find_map(|i| {
            let before = avg(i - window);
            let now = avg(i);
            ((before - now) < rel * before).then_some(self.records[i].iter)
        })
    }

    pub fn write_csv<W: Write>(&self, d: usize, mut w: W) -> Result<()> {
        let taus: Vec<String> = (1..=d).map(|i| format!("tau_{i}")).collect();
        writeln!(w, "iter,loss,{},skipped", taus.join(","))?;
        for r in &self.records {
            write!(w, "{},{}", r.iter, csvfmt::value(r.loss))?;
            for t in &r.delays {
                write!(w, ",{}", csvfmt::value(*t))?;
            }
            writeln!(w, ",{}", r.skipped)?;
        }
        Ok(())
    }
}

/// Per-purpose random streams derived from one seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_DELAY: u64 = 2;
const STREAM_BATCH: u64 = 3;

/// Freshly initialized system for `cfg`.
pub fn initial_system(ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<NodeSystem> {
    let n = ds.n;
    let mut dims = vec![cfg.delays * n];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(n);
    let net = init_glorot_with(&mut stream(cfg.seed, STREAM_INIT), &dims, false)?;
    let tau_max = ds.m as f64 * ds.h;
    let delays = match &cfg.initial_delays {
        Some(d) => {
            if d.len() != cfg.delays {
                return Err(Error::DimensionMismatch {
                    expected: cfg.delays,
                    got: d.len(),
                });
            }
            d.clone()
        }
        None => {
            let mut rng = stream(cfg.seed, STREAM_DELAY);
            (0..cfg.delays)
                .map(|i| {
                    if i == 0 && !cfg.learn_first_delay {
                        0.0
                    } else {
                        rng.random_range(0.0..=tau_max)
                    }
                })
                .collect()
        }
    };
    NodeSystem::new(net, delays, n, ds.m, ds.h)
}

fn draw_batch(rng: &mut ChaCha8Rng, per_traj: &[Vec<usize>], total: usize, batch: usize) -> Vec<usize> {
    let trajs = per_traj.len();
    if batch % trajs == 0 && per_traj.iter().all(|p| p.len() >= batch / trajs) {
        let k = batch / trajs;
        per_traj
            .iter()
            .flat_map(|idx| sample(rng, idx.len(), k).into_iter().map(|i| idx[i]).collect::<Vec<_>>())
            .collect()
    } else {
        sample(rng, total, batch).into_vec()
    }
}

/// Loss and gradient of one pair; `None` when the simulation diverged.
pub fn pair_gradient(sys: &NodeSystem, pair: &TrainingPair, horizon: usize, substeps: usize) -> Result<Option<Gradients>> {
    match integrate(sys, &pair.history, horizon, substeps) {
        Ok((_, tape)) => backprop(sys, &tape, &pair.target).map(Some),
        Err(Error::NodeDivergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean simulation loss over `pairs` and the number of diverged pairs.
pub fn evaluate_loss(sys: &NodeSystem, pairs: &[TrainingPair], horizon: usize, substeps: usize) -> Result<(f64, usize)> {
    let results: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| match predict(sys, &p.history, horizon, substeps) {
            Ok(pred) => loss(&pred, &p.target).map(Some),
            Err(Error::NodeDivergence { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut ok = 0usize;
    for r in results.iter().flatten() {
        sum += r;
        ok += 1;
    }
    let mean = if ok == 0 { f64::INFINITY } else { sum / ok as f64 };
    Ok((mean, pairs.len() - ok))
}

pub struct TrainOutcome {
    pub system: NodeSystem,
    pub log: TrainLog,
}

pub fn train(ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, |_, _| Ok(()))
}

/// Training loop; `on_iter(iteration, system)` runs after every update.
pub fn train_with<F>(ds: &TrajectoryDataset, cfg: &TrainConfig, mut on_iter: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &NodeSystem) -> Result<()>,
{
    if cfg.delays == 0 || cfg.horizon == 0 && cfg.iterations > 0 {
        return Err(Error::InvalidParameter("need at least one delay and a positive horizon".into()));
    }
    let mut sys = initial_system(ds, cfg)?;
    let mut log = TrainLog::default();
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { system: sys, log });
    }
    let pairs = build_pairs(ds, ds.m, cfg.horizon)?;
    if cfg.batch_size == 0 || cfg.batch_size > pairs.len() {
        return Err(Error::InvalidParameter(format!(
            "batch_size={} must be in 1..={}",
            cfg.batch_size,
            pairs.len()
        )));
    }
    let mut per_traj: Vec<Vec<usize>> = vec![Vec::new(); ds.trajectories.len()];
    for (i, p) in pairs.iter().enumerate() {
        per_traj[p.traj].push(i);
    }

    let tau_max = sys.tau_max();
    let n_params = sys.net.data.len();
    let first_trained = usize::from(!cfg.learn_first_delay);
    let trained_delays: Vec<usize> = (first_trained..cfg.delays).collect();
    let mut theta: Vec<f64> = sys.net.data.clone();
    theta.extend(trained_delays.iter().map(|&i| sys.delays()[i]));
    let mut adam = AdamState::new(theta.len());
    let mut batch_rng = stream(cfg.seed, STREAM_BATCH);
    let mut grad = vec![0.0; theta.len()];

    for iter in 1..=cfg.iterations {
        let started = Instant::now();
        let batch = draw_batch(&mut batch_rng, &per_traj, pairs.len(), cfg.batch_size);
        let results: Vec<Option<Gradients>> = batch
            .par_iter()
            .map(|&i| pair_gradient(&sys, &pairs[i], cfg.horizon, cfg.substeps))
            .collect::<Result<_>>()?;

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        let mut skipped = 0;
        for r in &results {
            match r {
                Some(g) => {
                    batch_loss += g.loss;
                    for (acc, v) in grad[..n_params].iter_mut().zip(&g.params) {
                        *acc += v;
                    }
                    for (slot, &di) in trained_delays.iter().enumerate() {
                        grad[n_params + slot] += g.delays[di];
                    }
                }
                None => {
                    batch_loss += DIVERGED_LOSS;
                    skipped += 1;
                }
            }
        }
        let used = results.len() - skipped;
        if used > 0 {
            let scale = 1.0 / used as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut theta, &grad, &mut adam, &cfg.adam)?;
        }

        let mut delays = sys.delays().to_vec();
        for (slot, &di) in trained_delays.iter().enumerate() {
            let clamped = theta[n_params + slot].min(tau_max).max(0.0);
            theta[n_params + slot] = clamped;
            delays[di] = clamped;
        }
        sys.net.data.copy_from_slice(&theta[..n_params]);
        sys.set_delays(delays.clone())?;

        log.records.push(IterRecord {
            iter,
            loss: batch_loss,
            delays,
            skipped,
        });
        log.wall_secs.push(started.elapsed().as_secs_f64());
        on_iter(iter, &sys)?;
    }
    Ok(TrainOutcome { system: sys, log })
}
