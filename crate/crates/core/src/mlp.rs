//! Feedforward network with tanh hidden layers and a linear output layer.
//!
//! Parameters live in one flat buffer, layer by layer: `W_l` row-major
//! (`out x in`) followed by `b_l`. The output layer has no bias unless
//! [`MlpParameters::output_bias`] is set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dde::MgParams;
use crate::error::{Error, Result};

/// A map from the stacked delayed inputs to the state derivative, with the
/// reverse pass needed for training.
pub trait DelayMap: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// Scratch written by [`DelayMap::eval_cached`] and read by [`DelayMap::vjp`].
    fn cache_len(&self) -> usize;
    fn param_len(&self) -> usize;

    fn eval_cached(&self, z: &[f64], cache: &mut [f64], out: &mut [f64]);

    /// Accumulates `(d out/d params)ᵀ g_out` into `g_params` and writes
    /// `(d out/d z)ᵀ g_out` into `g_in`.
    fn vjp(&self, cache: &[f64], g_out: &[f64], g_params: &mut [f64], g_in: &mut [f64], scratch: &mut Vec<f64>);

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut cache = vec![0.0; self.cache_len()];
        let mut out = vec![0.0; self.output_len()];
        self.eval_cached(z, &mut cache, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    /// Layer widths, input first: `[d n, hidden.., n]`.
    pub dims: Vec<usize>,
    pub output_bias: bool,
    pub data: Vec<f64>,
}

impl MlpParameters {
    pub fn zeros(dims: &[usize], output_bias: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("invalid layer sizes {dims:?}")));
        }
        let mut p = Self {
            dims: dims.to_vec(),
            output_bias,
            data: Vec::new(),
        };
        p.data = vec![0.0; p.param_count()];
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            output_bias: self.output_bias,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn has_bias(&self, l: usize) -> bool {
        l + 1 < self.layers() || self.output_bias
    }

    fn layer_len(&self, l: usize) -> usize {
        let w = self.dims[l + 1] * self.dims[l];
        if self.has_bias(l) {
            w + self.dims[l + 1]
        } else {
            w
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers()).map(|l| self.layer_len(l)).sum()
    }

    fn offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.layer_len(k)).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let o = self.offset(l);
        &self.data[o..o + self.dims[l + 1] * self.dims[l]]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let o = self.offset(l);
        let len = self.dims[l + 1] * self.dims[l];
        &mut self.data[o..o + len]
    }

    pub fn bias(&self, l: usize) -> Option<&[f64]> {
        if !self.has_bias(l) {
            return None;
        }
        let o = self.offset(l) + self.dims[l + 1] * self.dims[l];
        Some(&self.data[o..o + self.dims[l + 1]])
    }

    pub fn bias_mut(&mut self, l: usize) -> Option<&mut [f64]> {
        if !self.has_bias(l) {
            return None;
        }
        let o = self.offset(l) + self.dims[l + 1] * self.dims[l];
        let len = self.dims[l + 1];
        Some(&mut self.data[o..o + len])
    }

    /// Names of the parameter blocks in storage order (`W1`, `b1`, ...), with their ranges.
    pub fn blocks(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut o = 0;
        for l in 0..self.layers() {
            let w = self.dims[l + 1] * self.dims[l];
            out.push((format!("W{}", l + 1), o..o + w));
            o += w;
            if self.has_bias(l) {
                out.push((format!("b{}", l + 1), o..o + self.dims[l + 1]));
                o += self.dims[l + 1];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights, zero biases. `dims` is `[input, hidden.., output]`.
pub fn init_glorot(seed: u64, dims: &[usize]) -> Result<MlpParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_glorot_with(&mut rng, dims, false)
}

pub fn init_glorot_with<R: Rng>(rng: &mut R, dims: &[usize], output_bias: bool) -> Result<MlpParameters> {
    let mut p = MlpParameters::zeros(dims, output_bias)?;
    for l in 0..p.layers() {
        let limit = glorot_limit(dims[l], dims[l + 1]);
        for w in p.weight_mut(l) {
            *w = rng.random_range(-limit..=limit);
        }
    }
    Ok(p)
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Activations recorded by [`forward`]: the input followed by every hidden layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub data: Vec<f64>,
}

impl DelayMap for MlpParameters {
    fn input_len(&self) -> usize {
        self.dims[0]
    }

    fn output_len(&self) -> usize {
        self.output_dim()
    }

    fn cache_len(&self) -> usize {
        self.dims[..self.dims.len() - 1].iter().sum()
    }

    fn param_len(&self) -> usize {
        self.data.len()
    }

    fn eval_cached(&self, z: &[f64], cache: &mut [f64], out: &mut [f64]) {
        let layers = self.layers();
        cache[..self.dims[0]].copy_from_slice(z);
        let mut in_off = 0;
        let mut p_off = 0;
        for l in 0..layers {
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            let w = &self.data[p_off..p_off + rows * cols];
            p_off += rows * cols;
            let b = if self.has_bias(l) {
                let b = &self.data[p_off..p_off + rows];
                p_off += rows;
                Some(b)
            } else {
                None
            };
            let (prev, next) = cache.split_at_mut(in_off + cols);
            let input = &prev[in_off..];
            let hidden = l + 1 < layers;
            for r in 0..rows {
                let mut acc = b.map_or(0.0, |b| b[r]);
                let wr = &w[r * cols..(r + 1) * cols];
                for (wi, xi) in wr.iter().zip(input) {
                    acc += wi * xi;
                }
                if hidden {
                    next[r] = acc.tanh();
                } else {
                    out[r] = acc;
                }
            }
            in_off += cols;
        }
    }

    fn vjp(&self, cache: &[f64], g_out: &[f64], g_params: &mut [f64], g_in: &mut [f64], scratch: &mut Vec<f64>) {
        let layers = self.layers();
        let widest = *self.dims.iter().max().expect("non-empty");
        scratch.clear();
        scratch.resize(2 * widest, 0.0);
        let (delta, prev_delta) = scratch.split_at_mut(widest);
        delta[..g_out.len()].copy_from_slice(g_out);

        let mut offsets = [0usize; 16];
        let mut act_offsets = [0usize; 16];
        assert!(layers < 16, "too many layers");
        for l in 1..=layers {
            offsets[l] = offsets[l - 1] + self.layer_len(l - 1);
            act_offsets[l] = act_offsets[l - 1] + self.dims[l - 1];
        }

        for l in (0..layers).rev() {
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            let a = &cache[act_offsets[l]..act_offsets[l] + cols];
            let p0 = offsets[l];
            let w = &self.data[p0..p0 + rows * cols];
            {
                let gw = &mut g_params[p0..p0 + rows * cols];
                for r in 0..rows {
                    let dr = delta[r];
                    if dr != 0.0 {
                        for (g, ai) in gw[r * cols..(r + 1) * cols].iter_mut().zip(a) {
                            *g += dr * ai;
                        }
                    }
                }
            }
            if self.has_bias(l) {
                let gb = &mut g_params[p0 + rows * cols..p0 + rows * cols + rows];
                for (g, dr) in gb.iter_mut().zip(delta.iter()) {
                    *g += dr;
                }
            }
            let target: &mut [f64] = if l == 0 { &mut *g_in } else { &mut prev_delta[..cols] };
            for (c, t) in target.iter_mut().enumerate().take(cols) {
                let mut acc = 0.0;
                for r in 0..rows {
                    acc += w[r * cols + c] * delta[r];
                }
                // hidden activations are tanh outputs: tanh' = 1 - a^2
                *t = if l == 0 { acc } else { acc * (1.0 - a[c] * a[c]) };
            }
            if l > 0 {
                delta[..cols].copy_from_slice(&prev_delta[..cols]);
            }
        }
    }
}

/// Evaluates the network and records the activations needed by [`backward`].
pub fn forward(p: &MlpParameters, z0: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if z0.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim(),
            got: z0.len(),
        });
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    let mut cache = vec![0.0; p.cache_len()];
    let mut out = vec![0.0; p.output_dim()];
    p.eval_cached(z0, &mut cache, &mut out);
    Ok((out, ForwardCache { data: cache }))
}

/// Reverse-mode derivatives of [`forward`] for the cotangent `g_out`.
pub fn backward(p: &MlpParameters, cache: &ForwardCache, g_out: &[f64]) -> Result<(MlpParameters, Vec<f64>)> {
    if g_out.len() != p.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.output_dim(),
            got: g_out.len(),
        });
    }
    if cache.data.len() != p.cache_len() {
        return Err(Error::DimensionMismatch {
            expected: p.cache_len(),
            got: cache.data.len(),
        });
    }
    let mut grads = p.zeros_like();
    let mut g_in = vec![0.0; p.input_dim()];
    let mut scratch = Vec::new();
    p.vjp(&cache.data, g_out, &mut grads.data, &mut g_in, &mut scratch);
    Ok((grads, g_in))
}

/// The exact Mackey-Glass nonlinearity as a map of `[x(t), x(t - tau)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MackeyGlassMap(pub MgParams);

impl DelayMap for MackeyGlassMap {
    fn input_len(&self) -> usize {
        2
    }

    fn output_len(&self) -> usize {
        1
    }

    fn cache_len(&self) -> usize {
        2
    }

    fn param_len(&self) -> usize {
        0
    }

    fn eval_cached(&self, z: &[f64], cache: &mut [f64], out: &mut [f64]) {
        cache.copy_from_slice(z);
        out[0] = self.0.feedback(z[1]) - self.0.gamma * z[0];
    }

    fn vjp(&self, cache: &[f64], g_out: &[f64], _g_params: &mut [f64], g_in: &mut [f64], _scratch: &mut Vec<f64>) {
        g_in[0] = -self.0.gamma * g_out[0];
        g_in[1] = self.0.feedback_slope(cache[1]) * g_out[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bound_and_zero_biases() {
        let p = init_glorot(3, &[2, 5, 5, 1]).unwrap();
        let limit = (6.0f64 / 7.0).sqrt();
        assert!((glorot_limit(2, 5) - 0.9258).abs() < 1e-4);
        assert!(p.weight(0).iter().all(|w| w.abs() <= limit));
        assert!(p.weight(0).iter().any(|w| *w != 0.0));
        assert!(p.bias(0).unwrap().iter().all(|&b| b == 0.0));
        assert!(p.bias(1).unwrap().iter().all(|&b| b == 0.0));
        assert!(p.bias(2).is_none());
        assert_eq!(p.param_count(), 10 + 5 + 25 + 5 + 5);
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(init_glorot(11, &[2, 5, 5, 1]).unwrap(), init_glorot(11, &[2, 5, 5, 1]).unwrap());
        assert_ne!(init_glorot(11, &[2, 5, 5, 1]).unwrap(), init_glorot(12, &[2, 5, 5, 1]).unwrap());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParameters::zeros(&[2, 5, 5, 1], false).unwrap();
        let (y, _) = forward(&p, &[0.3, -2.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn output_layer_is_linear() {
        let mut p = init_glorot(0, &[2, 5, 5, 1]).unwrap();
        let (y, _) = forward(&p, &[0.7, 1.1]).unwrap();
        for w in p.weight_mut(2) {
            *w *= 2.0;
        }
        let (y2, _) = forward(&p, &[0.7, 1.1]).unwrap();
        assert_eq!(y2[0], 2.0 * y[0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = init_glorot(0, &[2, 5, 5, 1]).unwrap();
        assert!(matches!(forward(&p, &[f64::NAN, 0.0]), Err(Error::NonFiniteState)));
        assert!(forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = init_glorot(1, &[2, 5, 5, 1]).unwrap();
        let (_, cache) = forward(&p, &[0.2, 0.9]).unwrap();
        let (g, gi) = backward(&p, &cache, &[0.0]).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cotangent_linearity() {
        let p = init_glorot(2, &[2, 5, 5, 1]).unwrap();
        let (_, cache) = forward(&p, &[0.2, 0.9]).unwrap();
        let (g1, i1) = backward(&p, &cache, &[1.5]).unwrap();
        let (g2, i2) = backward(&p, &cache, &[3.0]).unwrap();
        for (a, b) in g1.data.iter().zip(&g2.data).chain(i1.iter().zip(&i2)) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn output_bias_variant() {
        let mut p = MlpParameters::zeros(&[2, 3, 1], true).unwrap();
        p.bias_mut(1).unwrap()[0] = 0.25;
        assert_eq!(forward(&p, &[1.0, 1.0]).unwrap().0, vec![0.25]);
        assert_eq!(
            p.blocks().iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
            ["W1", "b1", "W2", "b2"]
        );
    }

    #[test]
    fn mackey_glass_map_equilibrium() {
        let m = MackeyGlassMap(MgParams::default());
        assert_eq!(m.eval(&[1.0, 1.0]), vec![0.0]);
    }
}
