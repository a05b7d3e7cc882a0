//! Ground-truth delay differential equation integration.
//!
//! Fixed-step classical Runge-Kutta with the method of steps: delayed values
//! are read from a cubic Hermite dense output built from the stored nodes and
//! their right-hand-side values, or from the history function for `t <= 0`.

use crate::error::{Error, Result};

/// Magnitude beyond which a trajectory is treated as divergent.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Parameters of the Mackey-Glass equation
/// `x'(t) = beta x(t-tau) / (1 + x(t-tau)^delta) - gamma x(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgParams {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub tau: f64,
}

impl Default for MgParams {
    fn default() -> Self {
        Self {
            beta: 4.0,
            gamma: 2.0,
            delta: 9.65,
            tau: 1.0,
        }
    }
}

impl MgParams {
    pub fn new(beta: f64, gamma: f64, delta: f64, tau: f64) -> Result<Self> {
        let p = Self {
            beta,
            gamma,
            delta,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tau(self, tau: f64) -> Self {
        Self { tau, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 0.0 && self.gamma > 0.0 && self.delta > 0.0 && self.tau >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "Mackey-Glass parameters must satisfy beta>0, gamma>0, delta>0, tau>=0 (got {self:?})"
            )))
        }
    }

    /// Delayed feedback term `beta v / (1 + v^delta)`.
    #[inline]
    pub fn feedback(&self, v: f64) -> f64 {
        self.beta * v / (1.0 + v.powf(self.delta))
    }

    /// d/dv of [`MgParams::feedback`].
    #[inline]
    pub fn feedback_slope(&self, v: f64) -> f64 {
        let p = v.powf(self.delta);
        let den = 1.0 + p;
        self.beta * (den - self.delta * p) / (den * den)
    }
}

/// Scalar Mackey-Glass right-hand side.
pub fn mg_rhs(x: f64, x_delayed: f64, p: &MgParams) -> Result<f64> {
    if !x.is_finite() || !x_delayed.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(p.feedback(x_delayed) - p.gamma * x)
}

/// Right-hand side of an autonomous DDE with discrete delays.
///
/// `delayed` holds `x(t - tau_i)` for every entry of [`DelayedRhs::delays`],
/// stacked in order, each block of length [`DelayedRhs::dim`].
pub trait DelayedRhs: Sync {
    fn dim(&self) -> usize;
    fn delays(&self) -> &[f64];
    fn eval(&self, x: &[f64], delayed: &[f64], out: &mut [f64]);
}

/// The Mackey-Glass equation as a [`DelayedRhs`].
#[derive(Debug, Clone, Copy)]
pub struct MackeyGlass {
    params: MgParams,
    delay: [f64; 1],
}

impl MackeyGlass {
    pub fn new(params: MgParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            delay: [params.tau],
        })
    }

    pub fn params(&self) -> &MgParams {
        &self.params
    }
}

impl DelayedRhs for MackeyGlass {
    fn dim(&self) -> usize {
        1
    }

    fn delays(&self) -> &[f64] {
        &self.delay
    }

    fn eval(&self, x: &[f64], delayed: &[f64], out: &mut [f64]) {
        out[0] = self.params.feedback(delayed[0]) - self.params.gamma * x[0];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HistoryKind {
    /// `x(t) = c` on `[-tau_max, 0]`.
    Constant(Vec<f64>),
    /// Equally spaced samples, newest first: block `k` is `x(-k h)`.
    /// Linearly interpolated in between; held constant past the last sample.
    Grid { h: f64, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistorySpec {
    pub kind: HistoryKind,
    pub tau_max: f64,
}

impl HistorySpec {
    pub fn constant(c: &[f64], tau_max: f64) -> Self {
        Self {
            kind: HistoryKind::Constant(c.to_vec()),
            tau_max,
        }
    }

    pub fn scalar(c: f64, tau_max: f64) -> Self {
        Self::constant(&[c], tau_max)
    }

    pub fn grid(h: f64, values: Vec<f64>, tau_max: f64) -> Self {
        Self {
            kind: HistoryKind::Grid { h, values },
            tau_max,
        }
    }

    pub fn dim_hint(&self) -> Option<usize> {
        match &self.kind {
            HistoryKind::Constant(c) => Some(c.len()),
            HistoryKind::Grid { .. } => None,
        }
    }

    /// History value at `t <= 0`.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            HistoryKind::Constant(c) => out.copy_from_slice(c),
            HistoryKind::Grid { h, values } => {
                let n = out.len();
                let blocks = values.len() / n;
                let s = (-t / h).max(0.0);
                let k = s.floor() as usize;
                if k + 1 >= blocks {
                    out.copy_from_slice(&values[(blocks - 1) * n..blocks * n]);
                    return;
                }
                let a = s - k as f64;
                for c in 0..n {
                    out[c] = (1.0 - a) * values[k * n + c] + a * values[(k + 1) * n + c];
                }
            }
        }
    }
}

/// Solution on `[0, t_end]` at a uniform internal grid, with derivatives for
/// Hermite dense output, plus the history it was started from.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n: usize,
    pub nodes: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub history: HistorySpec,
}

impl DenseTrajectory {
    pub fn len(&self) -> usize {
        self.nodes.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.n..(k + 1) * self.n]
    }

    /// Scalar view of component `c` at every node.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.nodes.iter().skip(c).step_by(self.n).copied().collect()
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        dense_lookup(
            &self.history,
            self.t0,
            self.dt,
            self.n,
            &self.nodes,
            &self.derivatives,
            t,
            &mut out,
        );
        out
    }
}

/// Evaluates the dense output at `t` from the nodes computed so far.
#[allow(clippy::too_many_arguments)]
#[inline]
fn dense_lookup(
    history: &HistorySpec,
    t0: f64,
    dt: f64,
    n: usize,
    nodes: &[f64],
    derivs: &[f64],
    t: f64,
    out: &mut [f64],
) {
    if t <= t0 {
        history.value_into(t - t0, out);
        return;
    }
    let available = nodes.len() / n;
    let s = (t - t0) / dt;
    let nearest = s.round();
    let (k, theta) = if (s - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        (nearest as usize, 0.0)
    } else {
        (s.floor() as usize, s - s.floor())
    };
    if theta == 0.0 || k + 1 >= available {
        let k = k.min(available - 1);
        out.copy_from_slice(&nodes[k * n..(k + 1) * n]);
        return;
    }
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let (a, b) = (k * n, (k + 1) * n);
    for c in 0..n {
        out[c] = h00 * nodes[a + c]
            + h10 * dt * derivs[a + c]
            + h01 * nodes[b + c]
            + h11 * dt * derivs[b + c];
    }
}

fn check_state(x: &[f64], t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::Divergence { t })
    }
}

/// Integrates `rhs` from `history` over `[0, t_end]` with fixed step `dt`.
pub fn simulate_dde<R: DelayedRhs + ?Sized>(
    rhs: &R,
    history: &HistorySpec,
    t_end: f64,
    dt: f64,
) -> Result<DenseTrajectory> {
    let n = rhs.dim();
    let delays = rhs.delays();
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt>0 and t_end>0 (dt={dt}, t_end={t_end})"
        )));
    }
    if let Some(hn) = history.dim_hint() {
        if hn != n {
            return Err(Error::DimensionMismatch { expected: n, got: hn });
        }
    }
    for &tau in delays {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("delay {tau} must be >= 0")));
        }
        if tau > 0.0 && dt > tau * (1.0 + 1e-12) {
            return Err(Error::StepExceedsDelay { dt, delay: tau });
        }
    }

    let steps = (t_end / dt + 1e-9).floor() as usize;
    let d = delays.len();
    let mut nodes = Vec::with_capacity((steps + 1) * n);
    let mut derivs = Vec::with_capacity((steps + 1) * n);
    let mut delayed = vec![0.0; d * n];
    let mut x0 = vec![0.0; n];
    history.value_into(0.0, &mut x0);
    check_state(&x0, 0.0)?;

    // Fills `delayed` for a stage at time `t` with state `x`.
    let fill_delayed = |t: f64, x: &[f64], nodes: &[f64], derivs: &[f64], delayed: &mut [f64]| {
        for (i, &tau) in delays.iter().enumerate() {
            let slot = &mut delayed[i * n..(i + 1) * n];
            if tau == 0.0 {
                slot.copy_from_slice(x);
            } else {
                dense_lookup(history, 0.0, dt, n, nodes, derivs, t - tau, slot);
            }
        }
    };

    let mut f0 = vec![0.0; n];
    fill_delayed(0.0, &x0, &nodes, &derivs, &mut delayed);
    rhs.eval(&x0, &delayed, &mut f0);
    check_state(&f0, 0.0)?;
    nodes.extend_from_slice(&x0);
    derivs.extend_from_slice(&f0);

    let mut x = x0;
    let mut k1 = f0;
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    for step in 0..steps {
        let t = step as f64 * dt;
        for c in 0..n {
            stage[c] = x[c] + 0.5 * dt * k1[c];
        }
        fill_delayed(t + 0.5 * dt, &stage, &nodes, &derivs, &mut delayed);
        rhs.eval(&stage, &delayed, &mut k2);
        for c in 0..n {
            stage[c] = x[c] + 0.5 * dt * k2[c];
        }
        fill_delayed(t + 0.5 * dt, &stage, &nodes, &derivs, &mut delayed);
        rhs.eval(&stage, &delayed, &mut k3);
        for c in 0..n {
            stage[c] = x[c] + dt * k3[c];
        }
        fill_delayed(t + dt, &stage, &nodes, &derivs, &mut delayed);
        rhs.eval(&stage, &delayed, &mut k4);
        for c in 0..n {
            x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        let t_next = (step + 1) as f64 * dt;
        check_state(&x, t_next)?;
        // x(t_next - tau) only reaches back to the node just written, so the
        // derivative at the new node is computable before appending it.
        nodes.extend_from_slice(&x);
        fill_delayed(t_next, &x, &nodes, &derivs, &mut delayed);
        rhs.eval(&x, &delayed, &mut k1);
        check_state(&k1, t_next)?;
        derivs.extend_from_slice(&k1);
    }

    Ok(DenseTrajectory {
        t0: 0.0,
        t_end,
        dt,
        n,
        nodes,
        derivatives: derivs,
        history: history.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mg_rhs_examples() {
        let p = MgParams::default();
        assert_eq!(mg_rhs(1.0, 1.0, &p).unwrap(), 0.0);
        assert_eq!(mg_rhs(0.0, 0.0, &p).unwrap(), 0.0);
        // 4*0.5/(1+0.5^9.65) - 1, with 0.5^9.65 = exp(-9.65 ln 2)
        let pw = (-9.65f64 * std::f64::consts::LN_2).exp();
        let expected = 2.0 / (1.0 + pw) - 1.0;
        let got = mg_rhs(0.5, 0.5, &p).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.99752).abs() < 1e-5);
    }

    #[test]
    fn mg_rhs_rejects_non_finite() {
        let p = MgParams::default();
        assert!(matches!(mg_rhs(f64::NAN, 1.0, &p), Err(Error::NonFiniteState)));
        assert!(matches!(mg_rhs(1.0, f64::INFINITY, &p), Err(Error::NonFiniteState)));
    }

    #[test]
    fn feedback_slope_matches_difference_quotient() {
        let p = MgParams::default();
        for &v in &[0.3, 0.9, 1.0, 1.2] {
            let e = 1e-6;
            let fd = (p.feedback(v + e) - p.feedback(v - e)) / (2.0 * e);
            assert!((fd - p.feedback_slope(v)).abs() < 1e-7);
        }
        // linearization at the unit equilibrium: beta (2 - delta) / 4
        assert!((p.feedback_slope(1.0) - (-7.65)).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_preserved() {
        let mg = MackeyGlass::new(MgParams::default()).unwrap();
        let traj = simulate_dde(&mg, &HistorySpec::scalar(1.0, 1.5), 10.0, 0.01).unwrap();
        assert!(traj.nodes.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn node_count_and_dense_consistency() {
        let mg = MackeyGlass::new(MgParams::default()).unwrap();
        let traj = simulate_dde(&mg, &HistorySpec::scalar(0.5, 1.5), 2.0, 0.01).unwrap();
        assert_eq!(traj.len(), 201);
        for k in 0..traj.len() {
            assert_eq!(traj.value_at(traj.time(k))[0], traj.node(k)[0]);
        }
        // before t0 the history is returned
        assert_eq!(traj.value_at(-0.7)[0], 0.5);
    }

    #[test]
    fn step_larger_than_delay_is_rejected() {
        let mg = MackeyGlass::new(MgParams::default().with_tau(0.05)).unwrap();
        let err = simulate_dde(&mg, &HistorySpec::scalar(0.5, 1.5), 1.0, 0.1).unwrap_err();
        assert!(err.to_string().contains("step exceeds delay"));
    }

    struct Explode;
    impl DelayedRhs for Explode {
        fn dim(&self) -> usize {
            1
        }
        fn delays(&self) -> &[f64] {
            &[0.5]
        }
        fn eval(&self, x: &[f64], _delayed: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0];
        }
    }

    #[test]
    fn blow_up_reports_divergence() {
        let err = simulate_dde(&Explode, &HistorySpec::scalar(2.0, 1.0), 10.0, 0.01).unwrap_err();
        assert!(err.to_string().contains("divergence"));
    }

    #[test]
    fn grid_history_interpolates_linearly() {
        let h = HistorySpec::grid(0.5, vec![0.0, -0.5, -1.0], 1.0);
        let mut out = [0.0];
        h.value_into(-0.25, &mut out);
        assert!((out[0] + 0.25).abs() < 1e-15);
        h.value_into(-3.0, &mut out);
        assert_eq!(out[0], -1.0);
    }
}
