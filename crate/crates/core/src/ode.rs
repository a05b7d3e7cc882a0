//! Fixed-step classical Runge-Kutta for autonomous ODEs.

pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }
}

/// Advances `x` by one step of size `dt`.
pub fn rk4_step<F>(f: &mut F, x: &mut [f64], dt: f64, ws: &mut Rk4Workspace)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let Rk4Workspace {
        k1,
        k2,
        k3,
        k4,
        stage,
    } = ws;
    f(x, k1);
    for i in 0..x.len() {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(stage, k2);
    for i in 0..x.len() {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(stage, k3);
    for i in 0..x.len() {
        stage[i] = x[i] + dt * k3[i];
    }
    f(stage, k4);
    for i in 0..x.len() {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates `steps` steps and returns the states after every step (not including `x0`).
pub fn rk4_trajectory<F>(mut f: F, x0: &[f64], dt: f64, steps: usize) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut ws = Rk4Workspace::new(x0.len());
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        rk4_step(&mut f, &mut x, dt, &mut ws);
        out.push(x.clone());
    }
    out
}
