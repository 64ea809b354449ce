//! Fully connected ReLU networks with hand-written backpropagation and Adam.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// ReLU on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in &self.layers {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }
}

impl DenseNet {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "a network needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Linear { weight: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.nrows()).collect();
        w.push(self.output_dim());
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    /// Multiplies the output layer's parameters by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        if let Some(l) = self.layers.last_mut() {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weight) + &l.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = if k < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Gradients of a scalar loss given `d loss / d output`; also returns
    /// `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> (Grads, Array2<f64>) {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut dz = grad_out.clone();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let dw = cache.inputs[k].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            let mut dx = dz.dot(&l.weight.t());
            if k > 0 {
                Zip::from(&mut dx).and(&cache.pre[k - 1]).for_each(|d, z| {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            layers.push((dw, db));
            dz = dx;
        }
        layers.reverse();
        (Grads { layers }, dz)
    }

    /// `θ' ← τ θ + (1 - τ) θ'`.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weight).and(&o.weight).for_each(|t, o| *t = tau * o + (1.0 - tau) * *t);
            Zip::from(&mut t.bias).and(&o.bias).for_each(|t, o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable access to parameter `idx` in [`DenseNet::params`] order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weight.len() {
                let cols = l.weight.ncols();
                return &mut l.weight[[idx / cols, idx % cols]];
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Euclidean distance between two networks' parameters.
    pub fn distance(&self, other: &DenseNet) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros = Grads::zeros_like(net).layers;
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Grads) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[k];
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            Zip::from(&mut layer.weight).and(gw).and(mw).and(vw).for_each(|p, g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
            Zip::from(&mut layer.bias).and(gb).and(mb).and(vb).for_each(|p, g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}
