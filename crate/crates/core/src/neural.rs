//! Minimal dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat `f64` buffer (weights row-major, then biases,
//! layer after layer), which keeps optimizer updates, soft target tracking,
//! and checkpointing simple vector operations. All arithmetic is 64-bit.

use crate::Real;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: Real) -> Real {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Local derivative expressed through the activation output `a`
    /// (and the pre-activation `z` where needed).
    fn derivative(self, z: Real, a: Real) -> Real {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
            Activation::Relu => 2,
            Activation::Linear => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Relu),
            3 => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input length {got} does not match input dimension {expected}")]
    BadInput { expected: usize, got: usize },
    #[error("upstream gradient length {got} does not match output dimension {expected}")]
    BadUpstream { expected: usize, got: usize },
    #[error("layer dimensions do not chain: layer {layer} expects {expected} inputs, got {got}")]
    BadChain { layer: usize, expected: usize, got: usize },
    #[error("checkpoint is not a recognized network dump")]
    BadCheckpoint,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense multi-layer perceptron over a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: Vec<Real>,
}

/// Byte tag identifying the checkpoint format.
const CHECKPOINT_MAGIC: &[u8; 8] = b"WGNNET01";

impl Mlp {
    /// Builds a network mapping `input_dim` inputs through the given layers,
    /// each `(width, activation)`. Weights and biases start uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn deterministically from the
    /// seed (weights row-major, then biases, layer by layer).
    pub fn new(input_dim: usize, layers: &[(usize, Activation)], seed: u64) -> Self {
        assert!(input_dim > 0 && !layers.is_empty(), "network must have shape");
        let mut specs = Vec::with_capacity(layers.len());
        let mut prev = input_dim;
        for &(width, activation) in layers {
            assert!(width > 0, "layer width must be positive");
            specs.push(LayerSpec { in_dim: prev, out_dim: width, activation });
            prev = width;
        }
        let n: usize = specs.iter().map(|s| s.out_dim * (s.in_dim + 1)).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(n);
        for s in &specs {
            let bound = 1.0 / (s.in_dim as Real).sqrt();
            for _ in 0..s.out_dim * (s.in_dim + 1) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self { specs, params }
    }

    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Real>) -> Result<Self, NeuralError> {
        for w in specs.windows(2) {
            if w[1].in_dim != w[0].out_dim {
                return Err(NeuralError::BadChain {
                    layer: 1,
                    expected: w[0].out_dim,
                    got: w[1].in_dim,
                });
            }
        }
        let n: usize = specs.iter().map(|s| s.out_dim * (s.in_dim + 1)).sum();
        if n != params.len() {
            return Err(NeuralError::BadInput { expected: n, got: params.len() });
        }
        Ok(Self { specs, params })
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[Real] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Real] {
        &mut self.params
    }

    /// Offset of layer `l`'s weight block in the flat buffer; biases follow
    /// the `out_dim * in_dim` weights immediately.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.specs[..l].iter().map(|s| s.out_dim * (s.in_dim + 1)).sum()
    }

    pub fn forward(&self, x: &[Real]) -> Result<Vec<Real>, NeuralError> {
        let trace = self.forward_trace(x)?;
        Ok(trace.output().to_vec())
    }

    /// Forward pass keeping per-layer pre-activations and activations for a
    /// later backward pass.
    pub fn forward_trace(&self, x: &[Real]) -> Result<Trace, NeuralError> {
        if x.len() != self.input_dim() {
            return Err(NeuralError::BadInput { expected: self.input_dim(), got: x.len() });
        }
        let mut pre = Vec::with_capacity(self.specs.len());
        let mut post = Vec::with_capacity(self.specs.len());
        let mut current: &[Real] = x;
        let mut offset = 0usize;
        for s in &self.specs {
            let w = &self.params[offset..offset + s.out_dim * s.in_dim];
            let b = &self.params[offset + s.out_dim * s.in_dim..offset + s.out_dim * (s.in_dim + 1)];
            let mut z = Vec::with_capacity(s.out_dim);
            for o in 0..s.out_dim {
                let row = &w[o * s.in_dim..(o + 1) * s.in_dim];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(current) {
                    acc += wi * xi;
                }
                z.push(acc);
            }
            let a: Vec<Real> = z.iter().map(|&zi| s.activation.apply(zi)).collect();
            pre.push(z);
            post.push(a);
            current = &post[post.len() - 1];
            offset += s.out_dim * (s.in_dim + 1);
        }
        Ok(Trace { input: x.to_vec(), pre, post })
    }

    /// Exact reverse-mode gradients of `upstream . output` with respect to
    /// every parameter (flat, same layout as `params`) and to the input.
    pub fn backward(&self, x: &[Real], upstream: &[Real]) -> Result<Gradients, NeuralError> {
        let trace = self.forward_trace(x)?;
        self.backward_from_trace(&trace, upstream)
    }

    /// Backward pass reusing a stored forward trace.
    pub fn backward_from_trace(
        &self,
        trace: &Trace,
        upstream: &[Real],
    ) -> Result<Gradients, NeuralError> {
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::BadUpstream { expected: self.output_dim(), got: upstream.len() });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta: Vec<Real> = Vec::new();
        for (l, s) in self.specs.iter().enumerate().rev() {
            let offset = self.layer_offset(l);
            let upstream_l: &[Real] = if l + 1 == self.specs.len() { upstream } else { &delta };
            // Through the activation.
            let mut dz = Vec::with_capacity(s.out_dim);
            for o in 0..s.out_dim {
                dz.push(upstream_l[o] * s.activation.derivative(trace.pre[l][o], trace.post[l][o]));
            }
            let layer_in: &[Real] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            // Weight and bias gradients.
            for o in 0..s.out_dim {
                let wrow = &mut grads[offset + o * s.in_dim..offset + (o + 1) * s.in_dim];
                for (gi, xi) in wrow.iter_mut().zip(layer_in) {
                    *gi += dz[o] * xi;
                }
            }
            for o in 0..s.out_dim {
                grads[offset + s.out_dim * s.in_dim + o] += dz[o];
            }
            // Gradient flowing to the layer input.
            let w = &self.params[offset..offset + s.out_dim * s.in_dim];
            let mut dx = vec![0.0; s.in_dim];
            for o in 0..s.out_dim {
                let row = &w[o * s.in_dim..(o + 1) * s.in_dim];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += dz[o] * wi;
                }
            }
            delta = dx;
        }
        Ok(Gradients { params: grads, input: delta })
    }

    /// Writes a versioned binary dump: layer table then raw little-endian
    /// parameter bits. Loading reproduces the network exactly.
    pub fn save(&self, w: &mut impl Write) -> Result<(), NeuralError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.specs.len() as u32).to_le_bytes())?;
        for s in &self.specs {
            w.write_all(&(s.in_dim as u32).to_le_bytes())?;
            w.write_all(&(s.out_dim as u32).to_le_bytes())?;
            w.write_all(&[s.activation.code()])?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NeuralError::BadCheckpoint);
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let n_layers = u32::from_le_bytes(u32buf) as usize;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            r.read_exact(&mut u32buf)?;
            let in_dim = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u32buf)?;
            let out_dim = u32::from_le_bytes(u32buf) as usize;
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            let activation = Activation::from_code(code[0]).ok_or(NeuralError::BadCheckpoint)?;
            specs.push(LayerSpec { in_dim, out_dim, activation });
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n_params = u64::from_le_bytes(u64buf) as usize;
        let mut params = Vec::with_capacity(n_params);
        let mut fbuf = [0u8; 8];
        for _ in 0..n_params {
            r.read_exact(&mut fbuf)?;
            params.push(Real::from_le_bytes(fbuf));
        }
        Self::from_parts(specs, params).map_err(|_| NeuralError::BadCheckpoint)
    }
}

/// Stored forward pass: input, per-layer pre-activations, activations.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<Real>,
    pre: Vec<Vec<Real>>,
    post: Vec<Vec<Real>>,
}

impl Trace {
    pub fn output(&self) -> &[Real] {
        &self.post[self.post.len() - 1]
    }
}

/// Parameter gradients (flat, matching the network buffer) plus the
/// gradient with respect to the input vector.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Real>,
    pub input: Vec<Real>,
}

/// Polyak averaging: `target = tau*source + (1-tau)*target`, elementwise.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: Real) {
    assert_eq!(target.specs, source.specs, "networks must share a shape");
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

/// Adaptive-moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Real>,
    v: Vec<Real>,
    t: u64,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Raw moment estimates and step counter, for persistence.
    pub fn state(&self) -> (&[Real], &[Real], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Rebuilds an optimizer from persisted state; `None` when the moment
    /// vectors disagree in length.
    pub fn from_state(m: Vec<Real>, v: Vec<Real>, t: u64) -> Option<Self> {
        if m.len() != v.len() {
            return None;
        }
        Some(Self { m, v, t, beta1: 0.9, beta2: 0.999, eps: 1e-8 })
    }

    pub fn step(&mut self, params: &mut [Real], grads: &[Real], lr: Real) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
