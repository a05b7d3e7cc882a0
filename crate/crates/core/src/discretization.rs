//! Finite-dimensional representation of the solution history.
//!
//! The history on `[-tau_max, 0]` is replaced by `M + 1` equally spaced
//! samples stacked newest first. [`DifferenceMatrix`] approximates the time
//! derivative of the past samples and [`InterpolationMatrix`] extracts the
//! delayed values `x(t - tau_i)` by linear interpolation between neighbours.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Stacked state `[x(t), x(t-h), ..., x(t-Mh)]`, `n` components per block.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryGrid {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl HistoryGrid {
    pub fn new(n: usize, m: usize, h: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * (m + 1) {
            return Err(Error::DimensionMismatch {
                expected: n * (m + 1),
                got: values.len(),
            });
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("grid spacing h={h} must be > 0")));
        }
        Ok(Self { n, m, h, values })
    }

    /// Samples `signal` at `t, t-h, ..., t-Mh`.
    pub fn from_signal(n: usize, m: usize, h: f64, t: f64, signal: impl Fn(f64) -> Vec<f64>) -> Self {
        let values = (0..=m).flat_map(|k| signal(t - k as f64 * h)).collect();
        Self { n, m, h, values }
    }

    /// Builds the grid from `M + 1` consecutive samples given oldest first.
    pub fn from_window(n: usize, h: f64, oldest_first: &[f64]) -> Self {
        let blocks = oldest_first.len() / n;
        let values = oldest_first
            .chunks_exact(n)
            .rev()
            .flatten()
            .copied()
            .collect();
        Self {
            n,
            m: blocks - 1,
            h,
            values,
        }
    }

    pub fn tau_max(&self) -> f64 {
        self.m as f64 * self.h
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ForwardEuler,
    /// Central differences in the interior, forward Euler in the last block row.
    Central,
}

/// `nM x n(M+1)` differentiation matrix acting on a [`HistoryGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    pub scheme: Scheme,
    pub n: usize,
    pub m: usize,
    pub h: f64,
    matrix: CsrMatrix,
}

impl DifferenceMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.mul_vec_into(x, out);
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    pub fn transpose_add(&self, y: &[f64], out: &mut [f64]) {
        self.matrix.mul_transpose_add(y, out);
    }
}

pub fn build_dm(scheme: Scheme, n: usize, m: usize, h: f64) -> Result<DifferenceMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("state dimension n must be >= 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("grid spacing h={h} must be > 0")));
    }
    let min_m = match scheme {
        Scheme::Central => 2,
        Scheme::ForwardEuler => 1,
    };
    if m < min_m {
        return Err(Error::MeshTooCoarse { m });
    }
    let mut rows = Vec::with_capacity(n * m);
    // block row j (0-based) differentiates block j + 1
    for j in 0..m {
        let (lead, trail, scale) = match scheme {
            Scheme::Central if j + 1 < m => (j, j + 2, 0.5 / h),
            _ => (j, j + 1, 1.0 / h),
        };
        for c in 0..n {
            rows.push(vec![(lead * n + c, scale), (trail * n + c, -scale)]);
        }
    }
    Ok(DifferenceMatrix {
        scheme,
        n,
        m,
        h,
        matrix: CsrMatrix::from_rows(n * (m + 1), &rows),
    })
}

/// Delays `tau_1..tau_d`, stored in training order (not necessarily sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVector(Vec<f64>);

impl DelayVector {
    pub fn new(delays: Vec<f64>, tau_max: f64) -> Result<Self> {
        for &tau in &delays {
            if !(0.0..=tau_max).contains(&tau) {
                return Err(Error::DelayOutOfRange { tau, max: tau_max });
            }
        }
        Ok(Self(delays))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Grid offset `j` and weight `alpha` with `tau = (j + alpha) h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub j: usize,
    pub alpha: f64,
}

pub fn tap_for(tau: f64, m: usize, h: f64) -> Result<Tap> {
    let max = m as f64 * h;
    if !tau.is_finite() || tau < 0.0 || tau > max * (1.0 + 1e-12) {
        return Err(Error::DelayOutOfRange { tau, max });
    }
    let mut s = tau / h;
    let nearest = s.round();
    if (s - nearest).abs() < 1e-9 {
        s = nearest;
    }
    let j = s.floor() as usize;
    if j >= m {
        return Ok(Tap { j: m - 1, alpha: 1.0 });
    }
    Ok(Tap {
        j,
        alpha: s - j as f64,
    })
}

/// `dn x n(M+1)` linear interpolation matrix mapping a grid to delayed values.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationMatrix {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub taps: Vec<Tap>,
    matrix: CsrMatrix,
}

impl InterpolationMatrix {
    pub fn d(&self) -> usize {
        self.taps.len()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, tap) in self.taps.iter().enumerate() {
            let lo = &x[tap.j * n..(tap.j + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            if tap.alpha == 0.0 {
                dst.copy_from_slice(lo);
            } else {
                let hi = &x[(tap.j + 1) * n..(tap.j + 2) * n];
                for c in 0..n {
                    dst[c] = (1.0 - tap.alpha) * lo[c] + tap.alpha * hi[c];
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d() * self.n];
        self.apply_into(x, &mut out);
        out
    }

    /// `out += Pᵀ y`
    pub fn transpose_add(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, tap) in self.taps.iter().enumerate() {
            for c in 0..n {
                let g = y[i * n + c];
                out[tap.j * n + c] += (1.0 - tap.alpha) * g;
                if tap.alpha != 0.0 {
                    out[(tap.j + 1) * n + c] += tap.alpha * g;
                }
            }
        }
    }

    /// `(dP/dtau_i) X` restricted to block row `i` (the only nonzero rows).
    pub fn derivative_apply_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let j = self.taps[i].j;
        for c in 0..n {
            out[c] = (x[(j + 1) * n + c] - x[j * n + c]) / self.h;
        }
    }

    /// Full `dP/dtau_i`: `-1/h` at block column `j`, `+1/h` at `j + 1`, in block row `i`.
    pub fn tau_derivative(&self, i: usize) -> CsrMatrix {
        let n = self.n;
        let j = self.taps[i].j;
        let mut rows = vec![Vec::new(); self.d() * n];
        for c in 0..n {
            rows[i * n + c] = vec![(j * n + c, -1.0 / self.h), ((j + 1) * n + c, 1.0 / self.h)];
        }
        CsrMatrix::from_rows(n * (self.m + 1), &rows)
    }
}

pub fn build_p(delays: &[f64], n: usize, m: usize, h: f64) -> Result<InterpolationMatrix> {
    if m == 0 {
        return Err(Error::MeshTooCoarse { m });
    }
    let taps = delays
        .iter()
        .map(|&tau| tap_for(tau, m, h))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(delays.len() * n);
    for tap in &taps {
        for c in 0..n {
            let mut row = vec![(tap.j * n + c, 1.0 - tap.alpha)];
            if tap.alpha != 0.0 {
                row.push(((tap.j + 1) * n + c, tap.alpha));
            }
            rows.push(row);
        }
    }
    Ok(InterpolationMatrix {
        n,
        m,
        h,
        matrix: CsrMatrix::from_rows(n * (m + 1), &rows),
        taps,
    })
}

/// Per-delay derivative matrices of [`build_p`]. At grid crossings (`alpha = 0`)
/// the right-sided derivative is returned; at `tau = Mh` the left-sided one.
pub fn dp_dtau(delays: &[f64], n: usize, m: usize, h: f64) -> Result<Vec<CsrMatrix>> {
    let p = build_p(delays, n, m, h)?;
    Ok((0..delays.len()).map(|i| p.tau_derivative(i)).collect())
}

/// ODE right-hand side on the grid: `[g(X); D_M X]`.
pub struct DiscretizedSystem<G> {
    g_tilde: G,
    dm: DifferenceMatrix,
}

pub fn compose_discretized_rhs<G>(g_tilde: G, dm: DifferenceMatrix) -> DiscretizedSystem<G>
where
    G: Fn(&[f64], &mut [f64]),
{
    DiscretizedSystem { g_tilde, dm }
}

impl<G> DiscretizedSystem<G>
where
    G: Fn(&[f64], &mut [f64]),
{
    pub fn dim(&self) -> usize {
        self.dm.n * (self.dm.m + 1)
    }

    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if out.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: out.len(),
            });
        }
        let (top, rest) = out.split_at_mut(self.dm.n);
        (self.g_tilde)(x, top);
        self.dm.apply_into(x, rest);
        Ok(())
    }

    pub fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.rhs_into(x, &mut out)?;
        Ok(out)
    }
}

/// Mackey-Glass reduced right-hand side reading the delayed value from block `r` (1-based).
pub fn mackey_glass_reduced(
    p: crate::dde::MgParams,
    r: usize,
) -> impl Fn(&[f64], &mut [f64]) + Sync + Clone {
    move |x: &[f64], out: &mut [f64]| {
        out[0] = p.feedback(x[r - 1]) - p.gamma * x[0];
    }
}
