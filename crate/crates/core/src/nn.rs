//! Fully-connected feedforward network with hand-written vector-Jacobian
//! products.
//!
//! Weights live in one flat vector, laid out layer-major; within a layer the
//! weight matrix (row-major, `fan_out x fan_in`) precedes the bias vector.
//! Optimizers and checkpoints only ever see that flat view.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// `tanh` through a single `exp`; absolute error stays at rounding level and
/// it runs about twice as fast as `f64::tanh`.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub neurons_per_layer: usize,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl AnnArchitecture {
    /// tanh hidden layers, linear output.
    pub fn new(input_dim: usize, hidden_layers: usize, neurons_per_layer: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            neurons_per_layer,
            output_dim,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dimensions must be >= 1".into()));
        }
        if self.hidden_layers > 0 && self.neurons_per_layer == 0 {
            return Err(Error::Config("hidden layers need at least one neuron".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.neurons_per_layer));
            fan_in = self.neurons_per_layer;
        }
        shapes.push((fan_in, self.output_dim));
        shapes
    }

    pub fn param_count(&self) -> usize {
        count_params(self)
    }

    /// Number of hidden activations stored per forward pass.
    pub fn hidden_width(&self) -> usize {
        self.hidden_layers * self.neurons_per_layer
    }

    fn max_width(&self) -> usize {
        self.input_dim.max(self.neurons_per_layer).max(self.output_dim)
    }
}

/// Sum over layers of `(fan_in + 1) * fan_out`.
pub fn count_params(arch: &AnnArchitecture) -> usize {
    arch.layer_shapes()
        .iter()
        .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Network weights plus the architecture that gives them shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnWeights {
    arch: AnnArchitecture,
    flat: Vec<f64>,
}

/// Reusable buffers for the backward sweep.
#[derive(Debug, Clone)]
pub struct VjpScratch {
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl VjpScratch {
    pub fn new(arch: &AnnArchitecture) -> Self {
        let w = arch.max_width();
        Self {
            delta: vec![0.0; w],
            next: vec![0.0; w],
        }
    }
}

impl AnnWeights {
    pub fn zeros(arch: AnnArchitecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(Self {
            arch,
            flat: vec![0.0; n],
        })
    }

    pub fn from_flat(arch: AnnArchitecture, flat: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_count();
        if flat.len() != expected {
            return Err(Error::ParameterShape {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self { arch, flat })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(arch: AnnArchitecture, seed: u64) -> Result<Self> {
        let mut weights = Self::zeros(arch)?;
        let mut rng = rng::stream(seed, rng::streams::GLOROT);
        let views: Vec<LayerView> = weights.layers().collect();
        for layer in views {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut weights.flat[layer.w..layer.b] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(weights)
    }

    pub fn architecture(&self) -> &AnnArchitecture {
        &self.arch
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Weight matrix (row-major, `fan_out x fan_in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let v = self.layers().nth(l).expect("layer index out of range");
        (&self.flat[v.w..v.b], &self.flat[v.b..v.b + v.fan_out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let v = self.layers().nth(l).expect("layer index out of range");
        let (w, rest) = self.flat[v.w..].split_at_mut(v.b - v.w);
        (w, &mut rest[..v.fan_out])
    }

    fn layers(&self) -> impl Iterator<Item = LayerView> + '_ {
        let mut offset = 0;
        self.arch.layer_shapes().into_iter().map(move |(fan_in, fan_out)| {
            let w = offset;
            let b = w + fan_in * fan_out;
            offset = b + fan_out;
            LayerView { fan_in, fan_out, w, b }
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut hidden = vec![0.0; self.arch.hidden_width()];
        let mut out = vec![0.0; self.arch.output_dim];
        self.forward_tape(input, &mut hidden, &mut out);
        Ok(out)
    }

    /// Forward pass recording every hidden activation into `hidden`
    /// (length `hidden_width()`), for a later [`Self::vjp_tape`].
    pub fn forward_tape(&self, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.arch.input_dim);
        debug_assert_eq!(hidden.len(), self.arch.hidden_width());
        let n_layers = self.arch.hidden_layers + 1;
        let width = self.arch.neurons_per_layer;
        for (l, v) in self.layers().enumerate() {
            let (prev, dest): (&[f64], &mut [f64]) = if l == 0 {
                if n_layers == 1 {
                    (input, &mut *out)
                } else {
                    (input, &mut hidden[..width])
                }
            } else if l + 1 == n_layers {
                (&hidden[(l - 1) * width..l * width], &mut *out)
            } else {
                let (done, rest) = hidden.split_at_mut(l * width);
                (&done[(l - 1) * width..], &mut rest[..width])
            };
            let act = if l + 1 == n_layers {
                self.arch.output_activation
            } else {
                self.arch.hidden_activation
            };
            let w = &self.flat[v.w..v.b];
            let b = &self.flat[v.b..v.b + v.fan_out];
            for (i, d) in dest.iter_mut().enumerate() {
                let row = &w[i * v.fan_in..(i + 1) * v.fan_in];
                let s: f64 = row.iter().zip(prev).map(|(a, x)| a * x).sum();
                *d = act.apply(s + b[i]);
            }
        }
    }

    /// Returns `(cotᵀ ∂out/∂input, cotᵀ ∂out/∂weights)`.
    pub fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        if cotangent.len() != self.arch.output_dim {
            return Err(Error::InputShape {
                expected: self.arch.output_dim,
                got: cotangent.len(),
            });
        }
        let mut hidden = vec![0.0; self.arch.hidden_width()];
        let mut out = vec![0.0; self.arch.output_dim];
        self.forward_tape(input, &mut hidden, &mut out);
        let mut grad_in = vec![0.0; self.arch.input_dim];
        let mut grad_w = vec![0.0; self.flat.len()];
        let mut scratch = VjpScratch::new(&self.arch);
        self.vjp_tape(input, &hidden, &out, cotangent, &mut grad_in, &mut grad_w, &mut scratch);
        Ok((grad_in, grad_w))
    }

    /// Backward sweep over a recorded forward pass. `grad_in` is overwritten,
    /// `grad_w` is accumulated into.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp_tape(
        &self,
        input: &[f64],
        hidden: &[f64],
        out: &[f64],
        cotangent: &[f64],
        grad_in: &mut [f64],
        grad_w: &mut [f64],
        scratch: &mut VjpScratch,
    ) {
        self.backward(input, hidden, out, cotangent, grad_in, Some(grad_w), scratch);
    }

    /// [`Self::vjp_tape`] without the weight gradient.
    pub fn vjp_input_tape(
        &self,
        input: &[f64],
        hidden: &[f64],
        out: &[f64],
        cotangent: &[f64],
        grad_in: &mut [f64],
        scratch: &mut VjpScratch,
    ) {
        self.backward(input, hidden, out, cotangent, grad_in, None, scratch);
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        input: &[f64],
        hidden: &[f64],
        out: &[f64],
        cotangent: &[f64],
        grad_in: &mut [f64],
        mut grad_w: Option<&mut [f64]>,
        scratch: &mut VjpScratch,
    ) {
        let n_layers = self.arch.hidden_layers + 1;
        let width = self.arch.neurons_per_layer;
        let views: Vec<LayerView> = self.layers().collect();

        let delta = &mut scratch.delta;
        let next = &mut scratch.next;
        let act = self.arch.output_activation;
        for (i, d) in delta[..self.arch.output_dim].iter_mut().enumerate() {
            *d = cotangent[i] * act.slope_from_output(out[i]);
        }

        for l in (0..n_layers).rev() {
            let v = views[l];
            let prev: &[f64] = if l == 0 {
                input
            } else {
                &hidden[(l - 1) * width..l * width]
            };
            let w = &self.flat[v.w..v.b];
            if let Some(grad_w) = grad_w.as_deref_mut() {
                let (gw, gb) = grad_w[v.w..v.b + v.fan_out].split_at_mut(v.b - v.w);
                for i in 0..v.fan_out {
                    let di = delta[i];
                    if di == 0.0 {
                        continue;
                    }
                    gb[i] += di;
                    let grow = &mut gw[i * v.fan_in..(i + 1) * v.fan_in];
                    for (g, x) in grow.iter_mut().zip(prev) {
                        *g += di * x;
                    }
                }
            }
            let dest: &mut [f64] = if l == 0 { &mut *grad_in } else { &mut next[..v.fan_in] };
            dest.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..v.fan_out {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                let row = &w[i * v.fan_in..(i + 1) * v.fan_in];
                for (d, a) in dest.iter_mut().zip(row) {
                    *d += di * a;
                }
            }
            if l > 0 {
                let hact = self.arch.hidden_activation;
                for j in 0..v.fan_in {
                    next[j] *= hact.slope_from_output(prev[j]);
                }
                std::mem::swap(delta, next);
            }
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim {
            return Err(Error::InputShape {
                expected: self.arch.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 5e-3;
            assert!((fast_tanh(x) - x.tanh()).abs() <= 4e-16, "{x}");
        }
        assert_eq!(fast_tanh(800.0), 1.0);
        assert_eq!(fast_tanh(-800.0), -1.0);
        assert_eq!(fast_tanh(0.0), 0.0);
    }
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn finite_diff_check(arch: AnnArchitecture, seed: u64) {
        let mut w = AnnWeights::init_glorot(arch.clone(), seed).unwrap();
        // nonzero biases so every coordinate is exercised
        let mut r = rng::stream(seed, 99);
        for x in w.as_flat_mut() {
            *x += 0.1 * r.random_range(-1.0..1.0);
        }
        let input: Vec<f64> = (0..arch.input_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let cot: Vec<f64> = (0..arch.output_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let (gi, gw) = w.vjp(&input, &cot).unwrap();
        let f = |w: &AnnWeights, x: &[f64]| -> f64 { w.forward(x).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for k in 0..input.len() {
            let mut xp = input.clone();
            let mut xm = input.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (f(&w, &xp) - f(&w, &xm)) / (2.0 * h);
            assert!(
                (fd - gi[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                "input {k}: {fd} vs {}",
                gi[k]
            );
        }
        for k in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.as_flat_mut()[k] += h;
            wm.as_flat_mut()[k] -= h;
            let fd = (f(&wp, &input) - f(&wm, &input)) / (2.0 * h);
            assert!(
                (fd - gw[k]).abs() <= 1e-6 * fd.abs().max(1.0),
                "weight {k}: {fd} vs {}",
                gw[k]
            );
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(count_params(&AnnArchitecture::new(53, 3, 13, 8)), 1178);
        assert_eq!(count_params(&AnnArchitecture::new(1, 1, 1, 1)), 4);
        assert_eq!(count_params(&AnnArchitecture::new(10, 2, 5, 3)), 103);
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let arch = AnnArchitecture::new(3, 2, 3, 3);
        let w = AnnWeights::init_glorot(arch.clone(), 5).unwrap();
        for l in 0..3 {
            let (m, b) = w.layer(l);
            assert!(b.iter().all(|&x| x == 0.0));
            assert!(m.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        }
        let again = AnnWeights::init_glorot(arch, 5).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let w = AnnWeights::zeros(AnnArchitecture::new(4, 2, 6, 3)).unwrap();
        assert_eq!(w.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_evaluated_single_neuron() {
        let arch = AnnArchitecture::new(1, 1, 1, 1);
        let w = AnnWeights::from_flat(arch, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(w.forward(&[1.0]).unwrap()[0], 0.761594155955765, epsilon = 1e-12);
    }

    #[test]
    fn output_bounded_by_output_layer_mass() {
        let arch = AnnArchitecture::new(4, 1, 4, 4);
        let w = AnnWeights::init_glorot(arch, 3).unwrap();
        let (wo, bo) = w.layer(1);
        let bound: f64 = wo.iter().map(|x| x.abs()).sum::<f64>() + bo.iter().map(|x| x.abs()).sum::<f64>();
        let y = w.forward(&[100.0, -50.0, 3.0, 1e6]).unwrap();
        assert!(y.iter().all(|v| v.is_finite() && v.abs() <= bound));
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let w = AnnWeights::zeros(AnnArchitecture::new(3, 1, 2, 1)).unwrap();
        assert!(matches!(
            w.forward(&[1.0]),
            Err(Error::InputShape { expected: 3, got: 1 })
        ));
        assert!(w.vjp(&[1.0, 2.0, 3.0], &[1.0, 1.0]).is_err());
        assert!(AnnWeights::from_flat(AnnArchitecture::new(3, 1, 2, 1), vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let w = AnnWeights::init_glorot(AnnArchitecture::new(3, 2, 4, 2), 1).unwrap();
        let (gi, gw) = w.vjp(&[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(gi.iter().chain(&gw).all(|&x| x == 0.0));
    }

    #[test]
    fn affine_layer_input_gradient_is_exact() {
        let arch = AnnArchitecture::new(3, 0, 0, 2);
        let flat = vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0, 0.5, 0.25];
        let w = AnnWeights::from_flat(arch, flat).unwrap();
        let (gi, gw) = w.vjp(&[1.0, 1.0, 1.0], &[2.0, -1.0]).unwrap();
        assert_eq!(gi, vec![2.0 + 4.0, 4.0 - 5.0, 6.0 + 6.0]);
        assert_eq!(&gw[6..], &[2.0, -1.0]);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        finite_diff_check(AnnArchitecture::new(5, 2, 7, 3), 11);
        finite_diff_check(AnnArchitecture::new(2, 3, 4, 1), 12);
        finite_diff_check(AnnArchitecture::new(4, 0, 0, 4), 13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn vjp_is_linear_in_cotangent(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let arch = AnnArchitecture::new(4, 2, 5, 3);
            let w = AnnWeights::init_glorot(arch, seed).unwrap();
            let x = [0.1, -0.4, 0.7, 0.2];
            let c1 = [1.0, -0.5, 0.25];
            let c2 = [-0.3, 0.8, 1.1];
            let mix: Vec<f64> = c1.iter().zip(&c2).map(|(p, q)| a * p + b * q).collect();
            let (gi1, gw1) = w.vjp(&x, &c1).unwrap();
            let (gi2, gw2) = w.vjp(&x, &c2).unwrap();
            let (gim, gwm) = w.vjp(&x, &mix).unwrap();
            for ((m, p), q) in gim.iter().chain(&gwm).zip(gi1.iter().chain(&gw1)).zip(gi2.iter().chain(&gw2)) {
                prop_assert!((m - (a * p + b * q)).abs() <= 1e-12 * (1.0 + m.abs()));
            }
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000) {
            let w = AnnWeights::init_glorot(AnnArchitecture::new(3, 3, 8, 2), seed).unwrap();
            let x = [0.5, 0.25, -1.0];
            prop_assert_eq!(w.forward(&x).unwrap(), w.forward(&x).unwrap());
        }
    }
}
