//! Neural ODE on the discretized history: `X' = [net(P X); D_M X]`.
//!
//! [`integrate`] advances the grid with fixed-step RK4 and records every
//! stage state and network cache on a [`SimTape`]; [`backprop`] replays the
//! tape in reverse and returns exact gradients of the one-norm simulation
//! loss with respect to the network parameters and every delay.

use crate::discretization::{build_dm, build_p, DelayVector, DifferenceMatrix, HistoryGrid, InterpolationMatrix, Scheme};
use crate::error::{Error, Result};
use crate::mlp::{DelayMap, MlpParameters};
use crate::sparse::CsrMatrix;

pub const DEFAULT_SUBSTEPS: usize = 10;
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Network, delays and history operators assembled into one right-hand side.
#[derive(Debug, Clone)]
pub struct NodeSystem<F = MlpParameters> {
    pub net: F,
    delays: DelayVector,
    tau_max: f64,
    p: InterpolationMatrix,
    dm: DifferenceMatrix,
}

impl<F: DelayMap> NodeSystem<F> {
    pub fn new(net: F, delays: Vec<f64>, n: usize, m: usize, h: f64) -> Result<Self> {
        let tau_max = m as f64 * h;
        let d = delays.len();
        if net.input_len() != d * n {
            return Err(Error::DimensionMismatch {
                expected: d * n,
                got: net.input_len(),
            });
        }
        if net.output_len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: net.output_len(),
            });
        }
        let delays = DelayVector::new(delays, tau_max * (1.0 + 1e-12))?;
        let p = build_p(delays.as_slice(), n, m, h)?;
        let dm = build_dm(Scheme::Central, n, m, h)?;
        Ok(Self {
            net,
            delays,
            tau_max,
            p,
            dm,
        })
    }

    /// Replaces the delays and rebuilds `P`.
    pub fn set_delays(&mut self, delays: Vec<f64>) -> Result<()> {
        if delays.len() != self.delays.len() {
            return Err(Error::DimensionMismatch {
                expected: self.delays.len(),
                got: delays.len(),
            });
        }
        let delays = DelayVector::new(delays, self.tau_max * (1.0 + 1e-12))?;
        self.p = build_p(delays.as_slice(), self.n(), self.m(), self.h())?;
        self.delays = delays;
        Ok(())
    }

    pub fn delays(&self) -> &[f64] {
        self.delays.as_slice()
    }

    pub fn interpolation(&self) -> &InterpolationMatrix {
        &self.p
    }

    pub fn difference(&self) -> &DifferenceMatrix {
        &self.dm
    }

    pub fn dp_dtau(&self) -> Vec<CsrMatrix> {
        (0..self.delays.len()).map(|i| self.p.tau_derivative(i)).collect()
    }

    pub fn n(&self) -> usize {
        self.dm.n
    }

    pub fn m(&self) -> usize {
        self.dm.m
    }

    pub fn h(&self) -> f64 {
        self.dm.h
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn dim(&self) -> usize {
        self.n() * (self.m() + 1)
    }

    fn rhs_cached(&self, x: &[f64], z: &mut [f64], cache: &mut [f64], out: &mut [f64]) {
        let n = self.n();
        self.p.apply_into(x, z);
        let (top, rest) = out.split_at_mut(n);
        self.net.eval_cached(z, cache, top);
        self.dm.apply_into(x, rest);
    }

    fn check_grid(&self, x: &HistoryGrid) -> Result<()> {
        if x.values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.values.len(),
            });
        }
        Ok(())
    }
}

/// `[net(P X); D_M X]`
pub fn node_rhs<F: DelayMap>(sys: &NodeSystem<F>, x: &HistoryGrid) -> Result<Vec<f64>> {
    sys.check_grid(x)?;
    let mut z = vec![0.0; sys.net.input_len()];
    let mut cache = vec![0.0; sys.net.cache_len()];
    let mut out = vec![0.0; sys.dim()];
    sys.rhs_cached(&x.values, &mut z, &mut cache, &mut out);
    Ok(out)
}

/// First block of the integrated grid at the sample times `h, 2h, .., Nh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl Prediction {
    pub fn steps(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.h
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }
}

/// Everything the reverse pass needs: RK4 stage inputs and network caches for
/// every substep, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTape {
    pub dim: usize,
    pub cache_len: usize,
    pub substeps: usize,
    pub dt: f64,
    pub initial: Vec<f64>,
    /// Four stage states per substep.
    pub stages: Vec<f64>,
    /// Four network caches per substep.
    pub caches: Vec<f64>,
    /// Sample steps completed.
    pub steps: usize,
    pub final_state: Vec<f64>,
}

impl SimTape {
    pub fn substeps_recorded(&self) -> usize {
        self.stages.len() / (4 * self.dim)
    }

    /// Re-executes the recorded steps from `initial` and checks that every stage matches bitwise.
    pub fn replays_exactly<F: DelayMap>(&self, sys: &NodeSystem<F>) -> bool {
        let x0 = HistoryGrid {
            n: sys.n(),
            m: sys.m(),
            h: sys.h(),
            values: self.initial.clone(),
        };
        match integrate(sys, &x0, self.steps, self.substeps) {
            Ok((_, tape)) => tape == *self,
            Err(_) => false,
        }
    }
}

struct Workspace {
    z: Vec<f64>,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize, z_len: usize) -> Self {
        Self {
            z: vec![0.0; z_len],
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
        }
    }
}

fn run<F: DelayMap>(
    sys: &NodeSystem<F>,
    x0: &HistoryGrid,
    steps: usize,
    substeps: usize,
    record: bool,
) -> Result<(Prediction, SimTape)> {
    sys.check_grid(x0)?;
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    let n = sys.n();
    let dim = sys.dim();
    let cache_len = sys.net.cache_len();
    let dt = sys.h() / substeps as f64;
    let total = steps * substeps;
    let mut tape = SimTape {
        dim,
        cache_len,
        substeps,
        dt,
        initial: x0.values.clone(),
        stages: Vec::with_capacity(if record { total * 4 * dim } else { 0 }),
        caches: Vec::with_capacity(if record { total * 4 * cache_len } else { 0 }),
        steps: 0,
        final_state: Vec::new(),
    };
    let mut pred = Prediction {
        n,
        h: sys.h(),
        values: Vec::with_capacity(steps * n),
    };
    let mut ws = Workspace::new(dim, sys.net.input_len());
    let mut cache = vec![0.0; cache_len];
    let mut x = x0.values.clone();
    const COEF: [f64; 3] = [0.5, 0.5, 1.0];

    for step in 0..steps {
        for _ in 0..substeps {
            ws.stage.copy_from_slice(&x);
            for s in 0..4 {
                if s > 0 {
                    let c = COEF[s - 1] * dt;
                    let prev = &ws.k[s - 1];
                    for i in 0..dim {
                        ws.stage[i] = x[i] + c * prev[i];
                    }
                }
                sys.rhs_cached(&ws.stage, &mut ws.z, &mut cache, &mut ws.k[s]);
                if record {
                    tape.stages.extend_from_slice(&ws.stage);
                    tape.caches.extend_from_slice(&cache);
                }
            }
            let [k1, k2, k3, k4] = &ws.k;
            for i in 0..dim {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            tape.steps = step;
            tape.final_state = x;
            return Err(Error::NodeDivergence {
                step: step + 1,
                tape: Box::new(tape),
            });
        }
        pred.values.extend_from_slice(&x[..n]);
    }
    tape.steps = steps;
    tape.final_state = x;
    Ok((pred, tape))
}

/// Integrates `steps` sample intervals of length `h`, each split into `substeps` RK4 steps.
pub fn integrate<F: DelayMap>(
    sys: &NodeSystem<F>,
    x0: &HistoryGrid,
    steps: usize,
    substeps: usize,
) -> Result<(Prediction, SimTape)> {
    run(sys, x0, steps, substeps, true)
}

/// Same trajectory as [`integrate`] without recording a tape.
pub fn predict<F: DelayMap>(sys: &NodeSystem<F>, x0: &HistoryGrid, steps: usize, substeps: usize) -> Result<Prediction> {
    run(sys, x0, steps, substeps, false).map(|(p, _)| p)
}

/// One-norm simulation loss summed over the horizon.
pub fn loss(pred: &Prediction, target: &[f64]) -> Result<f64> {
    if pred.values.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.values.len(),
            got: target.len(),
        });
    }
    Ok(pred.values.iter().zip(target).map(|(p, t)| (p - t).abs()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Same layout as the network's flat parameter vector.
    pub params: Vec<f64>,
    pub delays: Vec<f64>,
}

impl Gradients {
    pub fn zeros(params: usize, delays: usize) -> Self {
        Self {
            loss: 0.0,
            params: vec![0.0; params],
            delays: vec![0.0; delays],
        }
    }
}

/// Exact reverse pass through every recorded RK4 stage.
///
/// `|r|` has subgradient `sign(r)` with `sign(0) = 0`.
pub fn backprop<F: DelayMap>(sys: &NodeSystem<F>, tape: &SimTape, target: &[f64]) -> Result<Gradients> {
    let n = sys.n();
    let dim = sys.dim();
    let d = sys.delays().len();
    let steps = tape.steps;
    if target.len() != steps * n {
        return Err(Error::DimensionMismatch {
            expected: steps * n,
            got: target.len(),
        });
    }
    if tape.dim != dim || tape.cache_len != sys.net.cache_len() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: tape.dim,
        });
    }
    let substeps = tape.substeps;
    let dt = tape.dt;
    let cl = tape.cache_len;
    let mut grads = Gradients::zeros(sys.net.param_len(), d);
    if steps == 0 {
        return Ok(grads);
    }

    // predictions are the first block after each group of `substeps`
    let pred_at = |j: usize| -> &[f64] {
        if j + 1 == steps {
            &tape.final_state[..n]
        } else {
            let sub = (j + 1) * substeps;
            &tape.stages[sub * 4 * dim..sub * 4 * dim + n]
        }
    };

    let mut adj = vec![0.0; dim];
    let mut a_x = vec![0.0; dim];
    let mut a_k = vec![0.0; dim];
    let mut a_s = vec![0.0; dim];
    let mut g_z = vec![0.0; sys.net.input_len()];
    let mut dz = vec![0.0; n];
    let mut scratch = Vec::new();
    const STAGE_FEED: [f64; 3] = [0.5, 0.5, 1.0];
    const WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

    for j in (0..steps).rev() {
        let p = pred_at(j);
        for c in 0..n {
            let r = p[c] - target[j * n + c];
            grads.loss += r.abs();
            adj[c] += if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        for sub in (j * substeps..(j + 1) * substeps).rev() {
            a_x.copy_from_slice(&adj);
            // cotangent of k_s accumulates dt*w_s*adj plus the feed into stage s+1
            let mut carry_from_next: Option<f64> = None;
            for s in (0..4).rev() {
                let w = WEIGHTS[s] * dt;
                match carry_from_next {
                    None => {
                        for i in 0..dim {
                            a_k[i] = w * adj[i];
                        }
                    }
                    Some(c) => {
                        for i in 0..dim {
                            a_k[i] = w * adj[i] + c * a_s[i];
                        }
                    }
                }
                let base = (sub * 4 + s) * dim;
                let stage = &tape.stages[base..base + dim];
                let cache = &tape.caches[(sub * 4 + s) * cl..(sub * 4 + s + 1) * cl];

                // vjp of [net(P S); D_M S] with cotangent a_k
                a_s.iter_mut().for_each(|v| *v = 0.0);
                sys.net.vjp(cache, &a_k[..n], &mut grads.params, &mut g_z, &mut scratch);
                sys.p.transpose_add(&g_z, &mut a_s);
                sys.dm.transpose_add(&a_k[n..], &mut a_s);
                for i in 0..d {
                    sys.p.derivative_apply_into(i, stage, &mut dz);
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += g_z[i * n + c] * dz[c];
                    }
                    grads.delays[i] += acc;
                }

                for i in 0..dim {
                    a_x[i] += a_s[i];
                }
                if s > 0 {
                    carry_from_next = Some(STAGE_FEED[s - 1] * dt);
                }
            }
            adj.copy_from_slice(&a_x);
        }
    }
    Ok(grads)
}
