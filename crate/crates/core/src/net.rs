//! A small fully connected network with hand-written backpropagation.
//!
//! Activations are column-major in the example axis: the input is `d × n`
//! and every layer maps `in × n` to `out × n`. The output of the last hidden
//! layer is the "before FC" tap; the logits are the "after FC" tap.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KdaError, Result};
use crate::gram::FeatureBlock;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Which captured activation a distillation term reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    BeforeFc,
    AfterFc,
}

impl Tap {
    pub fn tag(self) -> &'static str {
        match self {
            Tap::BeforeFc => "before_fc",
            Tap::AfterFc => "after_fc",
        }
    }
}

impl Mlp {
    /// He-initialized network with ReLU hidden layers and linear output.
    /// `widths` lists every layer width including input and output.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(KdaError::Argument(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Dense {
                    weight: Matrix::new(fan_out, fan_in, data).unwrap(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 2 == widths.len() {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(KdaError::Argument("network needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(KdaError::Argument("final layer must be linear".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(KdaError::dim("Mlp", format!("layer {i} bias length")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(KdaError::dim(
                    "Mlp",
                    format!("layer {i} outputs {} but layer {} expects {}", pair[0].out_dim(), i + 1, pair[1].in_dim()),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn tap_dim(&self, tap: Tap) -> usize {
        match tap {
            Tap::AfterFc => self.output_dim(),
            Tap::BeforeFc => self.layers.last().unwrap().in_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// SHA-256 over the exact parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weight.data().iter().chain(&l.bias) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardPass> {
        if x.rows() != self.input_dim() {
            return Err(KdaError::dim(
                "forward",
                format!("input dim {} for network expecting {}", x.rows(), self.input_dim()),
            ));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let mut z = layer.weight.matmul(activations.last().unwrap())?;
            let n = z.cols();
            for (r, &b) in layer.bias.iter().enumerate() {
                for v in &mut z.data_mut()[r * n..(r + 1) * n] {
                    *v += b;
                    if layer.activation == Activation::Relu && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        Ok(ForwardPass { activations })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(x)?.logits().clone();
        Ok((0..logits.cols())
            .map(|j| {
                let mut best = 0;
                for i in 1..logits.rows() {
                    if logits[(i, j)] > logits[(best, j)] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Backpropagates `∂L/∂logits`, plus an optional gradient injected at the
    /// before-FC activation.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_logits: &Matrix,
        grad_before_fc: Option<&Matrix>,
    ) -> Result<Gradients> {
        let depth = self.layers.len();
        if grad_logits.shape() != pass.logits().shape() {
            return Err(KdaError::dim("backward", "logit gradient shape"));
        }
        let mut delta = grad_logits.clone();
        let mut grads = vec![None; depth];
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            if layer.activation == Activation::Relu {
                for (d, &out) in delta.data_mut().iter_mut().zip(pass.activations[i + 1].data()) {
                    if out <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &pass.activations[i];
            let weight = delta.matmul_tr(input)?;
            let bias = (0..delta.rows()).map(|r| delta.row(r).iter().sum()).collect();
            grads[i] = Some(LayerGrad { weight, bias });
            if i > 0 {
                delta = layer.weight.tr_matmul(&delta)?;
                if i + 1 == depth {
                    if let Some(g) = grad_before_fc {
                        delta.axpy(1.0, g)?;
                    }
                }
            }
        }
        Ok(Gradients {
            layers: grads.into_iter().map(Option::unwrap).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Matrix>,
}

impl ForwardPass {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    pub fn before_fc(&self) -> &Matrix {
        &self.activations[self.activations.len() - 2]
    }

    pub fn tap(&self, tap: Tap) -> &Matrix {
        match tap {
            Tap::BeforeFc => self.before_fc(),
            Tap::AfterFc => self.logits(),
        }
    }

    /// Output of every layer keyed by layer index.
    pub fn taps(&self) -> BTreeMap<usize, FeatureBlock> {
        self.activations[1..]
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    i,
                    FeatureBlock {
                        features: a.clone(),
                        layer_tag: format!("layer{i}"),
                    },
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<LayerGrad>,
}

impl SgdMomentum {
    pub fn new(net: &Mlp, momentum: f64, weight_decay: f64) -> Self {
        let velocity = net
            .layers
            .iter()
            .map(|l| LayerGrad {
                weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                bias: vec![0.0; l.out_dim()],
            })
            .collect();
        Self {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            let params = layer
                .weight
                .data_mut()
                .iter_mut()
                .chain(layer.bias.iter_mut());
            let gs = g.weight.data().iter().chain(&g.bias);
            let vs = v.weight.data_mut().iter_mut().chain(v.bias.iter_mut());
            for ((w, &gi), vi) in params.zip(gs).zip(vs) {
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
    }
}

/// `lr0 · ½(1 + cos(π·epoch/total))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (PI * epoch as f64 / total_epochs as f64).cos())
}
