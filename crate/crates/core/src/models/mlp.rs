use std::sync::Arc;

use super::{softmax, Model, sigmoid};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, SeededRng, Vector};

/// One-hidden-layer perceptron: sigmoid hidden units, softmax cross-entropy
/// head, L2 weight decay on the two weight matrices (biases excluded).
///
/// Flat parameter layout: `W1 (hidden×input, row-major) | b1 | W2
/// (classes×hidden) | b2`.
#[derive(Clone, Debug)]
pub struct ToyMlp {
    data: Arc<Dataset>,
    hidden: usize,
    weight_decay: f64,
}

pub const MAX_INPUT: usize = 64;
pub const MAX_HIDDEN: usize = 100;
pub const MAX_CLASSES: usize = 10;

struct Forward {
    hidden: Vec<f64>,
    probs: Vector,
}

impl ToyMlp {
    pub fn new(data: Arc<Dataset>, hidden: usize, weight_decay: f64) -> Result<Self> {
        if data.dim() > MAX_INPUT || hidden == 0 || hidden > MAX_HIDDEN {
            return Err(Error::InvalidInput(format!(
                "toy MLP supports input <= {MAX_INPUT} and 1..={MAX_HIDDEN} hidden units"
            )));
        }
        if data.num_classes() > MAX_CLASSES {
            return Err(Error::InvalidInput(format!(
                "toy MLP supports at most {MAX_CLASSES} classes"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidInput("weight decay must be >= 0".into()));
        }
        Ok(ToyMlp {
            data,
            hidden,
            weight_decay,
        })
    }

    fn input(&self) -> usize {
        self.data.dim()
    }

    fn classes(&self) -> usize {
        self.data.num_classes()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let (d0, d1, c) = (self.input(), self.hidden, self.classes());
        let b1 = d1 * d0;
        let w2 = b1 + d1;
        let b2 = w2 + c * d1;
        (b1, w2, b2)
    }

    /// Pre-softmax outputs for example `i`.
    pub fn logits(&self, w: &[f64], i: usize) -> Vector {
        let h = self.hidden_activations(w, i);
        self.head(w, &h)
    }

    fn hidden_activations(&self, w: &[f64], i: usize) -> Vec<f64> {
        let (d0, d1) = (self.input(), self.hidden);
        let (b1, _, _) = self.offsets();
        let x = self.data.x(i);
        (0..d1)
            .map(|r| sigmoid(dot(&w[r * d0..(r + 1) * d0], x) + w[b1 + r]))
            .collect()
    }

    fn head(&self, w: &[f64], h: &[f64]) -> Vector {
        let (d1, c) = (self.hidden, self.classes());
        let (_, w2, b2) = self.offsets();
        (0..c)
            .map(|k| dot(&w[w2 + k * d1..w2 + (k + 1) * d1], h) + w[b2 + k])
            .collect()
    }

    fn forward(&self, w: &[f64], i: usize) -> Forward {
        let hidden = self.hidden_activations(w, i);
        let probs = softmax(&self.head(w, &hidden));
        Forward { hidden, probs }
    }

    fn decay_term(&self, w: &[f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        0.5 * self.weight_decay * (dot(&w[..b1], &w[..b1]) + dot(&w[w2..b2], &w[w2..b2]))
    }
}

impl Model for ToyMlp {
    fn dim(&self) -> usize {
        let (d0, d1, c) = (self.input(), self.hidden, self.classes());
        d1 * d0 + d1 + c * d1 + c
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn num_classes(&self) -> usize {
        self.classes()
    }

    fn loss_i(&self, w: &[f64], i: usize) -> f64 {
        let z = self.logits(w, i);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[self.data.label(i)] + self.decay_term(w)
    }

    fn grad_i(&self, w: &[f64], i: usize) -> Vector {
        let (d0, d1, c) = (self.input(), self.hidden, self.classes());
        let (b1, w2, b2) = self.offsets();
        let f = self.forward(w, i);
        let mut delta_out = f.probs.into_inner();
        delta_out[self.data.label(i)] -= 1.0;

        let mut g = vec![0.0; self.dim()];
        let mut delta_hidden = vec![0.0; d1];
        for k in 0..c {
            let row = w2 + k * d1;
            for r in 0..d1 {
                g[row + r] = delta_out[k] * f.hidden[r];
                delta_hidden[r] += w[row + r] * delta_out[k];
            }
            g[b2 + k] = delta_out[k];
        }
        let x = self.data.x(i);
        for r in 0..d1 {
            let da = delta_hidden[r] * f.hidden[r] * (1.0 - f.hidden[r]);
            for j in 0..d0 {
                g[r * d0 + j] = da * x[j];
            }
            g[b1 + r] = da;
        }
        let wd = self.weight_decay;
        for k in (0..b1).chain(w2..b2) {
            g[k] += wd * w[k];
        }
        g.into()
    }

    fn proxy_dim(&self) -> usize {
        self.classes()
    }

    /// `p − y`: the exact gradient of the loss with respect to the logits.
    fn proxy_grad_i(&self, w: &[f64], i: usize) -> Vector {
        let mut p = self.forward(w, i).probs;
        p[self.data.label(i)] -= 1.0;
        p
    }

    /// Softmax cross-entropy curvature in logit space,
    /// `(diag(p) − p pᵀ) z`, averaged over the batch.
    fn proxy_hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.check_batch(w, batch)?;
        check_dim(self.classes(), z.len())?;
        let mut out = Vector::zeros(self.classes());
        for &i in batch {
            let p = self.forward(w, i).probs;
            let pz = dot(&p, z);
            for k in 0..p.len() {
                out[k] += p[k] * z[k] - p[k] * pz;
            }
        }
        out.scale(1.0 / batch.len() as f64);
        Ok(out)
    }

    fn predict_proba_i(&self, w: &[f64], i: usize) -> Vector {
        self.forward(w, i).probs
    }

    /// Uniform in ±1/√fan_in for weights, zero biases.
    fn init_params(&self, rng: &mut SeededRng) -> Vector {
        let (d0, d1) = (self.input(), self.hidden);
        let (b1, w2, b2) = self.offsets();
        let mut w = vec![0.0; self.dim()];
        let s0 = 1.0 / (d0 as f64).sqrt();
        let s1 = 1.0 / (d1 as f64).sqrt();
        for v in &mut w[..b1] {
            *v = s0 * (2.0 * rng.uniform() - 1.0);
        }
        for v in &mut w[w2..b2] {
            *v = s1 * (2.0 * rng.uniform() - 1.0);
        }
        w.into()
    }

    fn is_convex(&self) -> bool {
        false
    }
}
