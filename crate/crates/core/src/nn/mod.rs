//! A small feedforward network substrate: dense layers with exact
//! reverse-mode gradients, softmax, optimizers, finite-difference gradient
//! checking, and a flat binary weight format.
//!
//! Parameters for all layers live in one contiguous buffer so optimizers and
//! gradient checks can treat a network as a flat vector.

mod gradcheck;
pub(crate) mod io;
mod optim;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use io::{read_net, read_net_file, write_net, write_net_file, NET_MAGIC};
pub use optim::{Optimizer, OptimizerKind};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Softplus => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softplus),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus => softplus(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Pulls an upstream gradient on softmax outputs back to its logits.
pub fn softmax_backward(prob: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = prob.iter().zip(upstream).map(|(p, g)| p * g).sum();
    prob.iter().zip(upstream).map(|(p, g)| p * (g - inner)).collect()
}

/// Per-layer description used to construct a network from explicit values.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Row-major `[output_dim][input_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A chain of affine layers, each followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values recorded by [`DenseNet::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input of layer `l`; the final entry is the output.
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("trace has at least the input")
    }
}

impl DenseNet {
    /// All-zero network with layer widths `dims` and per-layer `activations`.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::OutOfRange(format!("invalid layer dims {dims:?}")));
        }
        Error::check_dim(dims.len() - 1, activations.len())?;
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut total = 0;
        for w in dims.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations: activations.to_vec(),
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.weights_mut(l) {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<LayerSpec>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::OutOfRange("network needs at least one layer".into()))?;
        let mut dims = vec![first.input_dim];
        for l in &layers {
            Error::check_dim(*dims.last().unwrap(), l.input_dim)?;
            dims.push(l.output_dim);
        }
        let acts: Vec<Activation> = layers.iter().map(|l| l.activation).collect();
        let mut net = Self::zeros(&dims, &acts)?;
        for (i, l) in layers.into_iter().enumerate() {
            Error::check_dim(l.input_dim * l.output_dim, l.weights.len())?;
            Error::check_dim(l.output_dim, l.bias.len())?;
            net.weights_mut(i).copy_from_slice(&l.weights);
            net.bias_mut(i).copy_from_slice(&l.bias);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::OutOfRange("non-finite network parameter".into()));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self, layer: usize) -> Activation {
        self.activations[layer]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.dims[l] * self.dims[l + 1]
    }

    fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l] + self.dims[l] * self.dims[l + 1];
        start..start + self.dims[l + 1]
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        &self.params[self.weight_range(l)]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.weight_range(l);
        &mut self.params[r]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.params[self.bias_range(l)]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.bias_range(l);
        &mut self.params[r]
    }

    /// Rounds every parameter to the nearest `f32` so the in-memory network
    /// matches what the weight file stores.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    fn affine(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let w = self.weights(l);
        let b = self.bias(l);
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for l in 0..self.num_layers() {
            let act = self.activations[l];
            a = self.affine(l, &a).into_iter().map(|z| act.apply(z)).collect();
        }
        Ok(a)
    }

    /// Forward pass keeping what [`DenseNet::backward`] needs.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        Error::check_dim(self.input_dim(), x.len())?;
        let mut inputs = vec![x.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let z = self.affine(l, inputs.last().unwrap());
            let act = self.activations[l];
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            pre_activations.push(z);
        }
        Ok(Trace {
            inputs,
            pre_activations,
        })
    }

    /// Reverse-mode pass. Parameter gradients are *added* into `grads`
    /// (laid out like [`DenseNet::params`]); the input gradient is returned.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.output_dim(), upstream.len())?;
        Error::check_dim(self.num_params(), grads.len())?;
        if trace.pre_activations.len() != self.num_layers() {
            return Err(Error::DimensionMismatch {
                expected: self.num_layers(),
                actual: trace.pre_activations.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            for (d, &z) in delta.iter_mut().zip(&trace.pre_activations[l]) {
                *d *= act.derivative(z);
            }
            let input = &trace.inputs[l];
            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            for o in 0..n_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                let row = &mut grads[wr.start + o * n_in..wr.start + (o + 1) * n_in];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += g * x;
                }
                grads[br.start + o] += g;
            }
            let w = &self.params[wr];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                for (nx, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *nx += g * wv;
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net(n: usize) -> DenseNet {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        DenseNet::from_layers(vec![LayerSpec {
            input_dim: n,
            output_dim: n,
            activation: Activation::Identity,
            weights: w,
            bias: vec![0.0; n],
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = identity_net(3);
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn bias_only_output() {
        let net = DenseNet::from_layers(vec![LayerSpec {
            input_dim: 4,
            output_dim: 2,
            activation: Activation::Identity,
            weights: vec![0.0; 8],
            bias: vec![0.3, 0.7],
        }])
        .unwrap();
        assert_eq!(net.forward(&[9.0, -3.0, 1.0, 100.0]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = identity_net(3);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
        let trace = net.forward_trace(&[1.0, 2.0, 3.0]).unwrap();
        let mut g = vec![0.0; net.num_params()];
        assert!(net.backward(&trace, &[1.0], &mut g).is_err());
    }

    #[test]
    fn two_layer_net_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::xavier(&[5, 7, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        // naive matrix multiply, written independently of the layer code
        let mut h = [0.0f64; 7];
        for (o, hv) in h.iter_mut().enumerate() {
            let mut s = net.bias(0)[o];
            for i in 0..5 {
                s += net.weights(0)[o * 5 + i] * x[i];
            }
            *hv = if s > 0.0 { s } else { 0.0 };
        }
        let mut y = [0.0f64; 3];
        for (o, yv) in y.iter_mut().enumerate() {
            let mut s = net.bias(1)[o];
            for i in 0..7 {
                s += net.weights(1)[o * 7 + i] * h[i];
            }
            *yv = s;
        }
        let out = net.forward(&x).unwrap();
        for (a, b) in out.iter().zip(y) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let mut net = DenseNet::zeros(&[3, 2], &[Activation::Identity]).unwrap();
        net.weights_mut(0).copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let x = [1.0, -2.0, 3.0];
        let trace = net.forward_trace(&x).unwrap();
        let mut g = vec![0.0; net.num_params()];
        net.backward(&trace, &[1.0, 0.0], &mut g).unwrap();
        assert_eq!(&g[0..3], &x);
        assert_eq!(&g[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(&g[6..8], &[1.0, 0.0]);
    }

    #[test]
    fn softplus_derivative_at_zero() {
        assert_eq!(Activation::Softplus.derivative(0.0), 0.5);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_inv(softplus(-3.2)) + 3.2).abs() < 1e-10);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut net = DenseNet::xavier(
            &[4, 6, 5, 3],
            &[Activation::Relu, Activation::Softplus, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        for b in 0..net.num_layers() {
            for v in net.bias_mut(b) {
                *v = 0.1;
            }
        }
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = [0.2, -0.4, 0.9];
        let report = gradcheck(net.params().to_vec(), 1e-5, 1e-4, |p| {
            let mut n = net.clone();
            n.params_mut().copy_from_slice(p);
            let tr = n.forward_trace(&x).unwrap();
            let out = tr.output();
            let loss: f64 = out.iter().zip(target).map(|(o, t)| 0.5 * (o - t).powi(2)).sum();
            let up: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
            let mut g = vec![0.0; n.num_params()];
            n.backward(&tr, &up, &mut g).unwrap();
            (loss, g)
        });
        assert!(report.passed, "{report:?}");
        net.round_to_f32();
    }

    #[test]
    fn softmax_edge_cases() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_extended_precision_values() {
        // Reference outputs computed with 50-digit arithmetic (mpmath).
        let cases: [(&[f64], &[f64]); 3] = [
            (
                &[0.5, -1.25, 3.0, 2.0, -0.75],
                &[
                    0.055174052207200805,
                    0.0095878126281860198,
                    0.67215755780176196,
                    0.24727294674327363,
                    0.01580763061957759,
                ],
            ),
            (
                &[-20.0, 15.5, 15.0, 0.0],
                &[
                    2.3804377235581881e-16,
                    0.62245925931368183,
                    0.3775406251957646,
                    1.1549055333109447e-7,
                ],
            ),
            (&[7.0, 7.0, 7.0], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
        ];
        for (z, expect) in cases {
            let p = softmax(z);
            for (a, b) in p.iter().zip(expect) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn softmax_backward_matches_jacobian() {
        let p = softmax(&[0.2, -0.3, 1.1]);
        let g = [0.5, -1.0, 2.0];
        let dz = softmax_backward(&p, &g);
        for i in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                let jac = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
                s += jac * g[j];
            }
            assert!((dz[i] - s).abs() < 1e-15);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_shift_invariant(z in proptest::collection::vec(-50.0..50.0f64, 1..12), shift in -100.0..100.0f64) {
            let p = softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted);
            let sum: f64 = p.iter().sum();
            proptest::prop_assert!((sum - 1.0).abs() <= 1e-9);
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!(*a > 0.0 || z.len() > 1);
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
