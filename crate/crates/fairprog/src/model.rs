//! Feed-forward networks: the classifier under repair and the adversarial
//! discriminator. Parameters are plain tensors; a forward pass is recorded on
//! a caller-supplied tape so gradients can flow to either the parameters or
//! the input, and a frozen model is never mutated by any training loop.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Layer widths from input to output, plus the hidden activation. The output
/// head always emits raw logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl NetSpec {
    /// `widths` = `[input, hidden..., classes]`; at least one hidden layer.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid(format!(
                "spec needs input, at least one hidden, and output widths; got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!("layer widths must be positive: {widths:?}")));
        }
        Ok(NetSpec { widths, activation })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// One dense layer; `w` is `[in, out]`, `b` is `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetModel {
    spec: NetSpec,
    layers: Vec<Layer>,
    frozen: bool,
}

/// Handles to the logits and parameter leaves of one recorded forward pass.
pub struct ForwardNodes {
    pub logits: NodeId,
    pub params: Vec<NodeId>,
}

/// Xavier-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`), zero biases,
/// deterministic per seed.
pub fn init_model(spec: &NetSpec, seed: u64) -> NetModel {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.widths.len() - 1);
    for pair in spec.widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
        layers.push(Layer {
            w: Tensor::new(vec![fan_in, fan_out], w).unwrap(),
            b: Tensor::zeros(vec![fan_out]),
        });
    }
    NetModel { spec: spec.clone(), layers, frozen: false }
}

impl NetModel {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Mutable copy for fine-tuning; the original stays untouched.
    pub fn unfrozen_clone(&self) -> Self {
        let mut m = self.clone();
        m.frozen = false;
        m
    }

    /// Flat parameter list in layer order (w0, b0, w1, b1, ...).
    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.clone(), l.b.clone()])
            .collect()
    }

    /// Writes a flat parameter list back; rejected when frozen.
    pub fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel("set_params".into()));
        }
        if params.len() != self.layers.len() * 2 {
            return Err(Error::shape(
                "set_params",
                format!("expected {} tensors, got {}", self.layers.len() * 2, params.len()),
            ));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            if w.shape() != layer.w.shape() || b.shape() != layer.b.shape() {
                return Err(Error::shape(
                    "set_params",
                    format!(
                        "layer {i}: {:?}/{:?} vs {:?}/{:?}",
                        w.shape(),
                        b.shape(),
                        layer.w.shape(),
                        layer.b.shape()
                    ),
                ));
            }
            layer.w = w.clone();
            layer.b = b.clone();
        }
        Ok(())
    }

    /// Records the forward pass on `tape` starting from an existing input
    /// node. Parameters always enter as leaves so gradients reach both the
    /// input (to train a trigger through a frozen model) and the parameters
    /// (to train the model itself); callers pick which leaves they update.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<ForwardNodes> {
        let in_width = tape.value(x).cols();
        let rows = tape.value(x).rows();
        if tape.value(x).shape().len() != 2 || in_width != self.spec.input_width() {
            return Err(Error::shape(
                "forward",
                format!(
                    "input shape {:?} does not match model input width {}",
                    tape.value(x).shape(),
                    self.spec.input_width()
                ),
            ));
        }
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.w.clone());
            let b = tape.leaf(layer.b.clone());
            params.push(w);
            params.push(b);
            let z = tape.matmul(h, w)?;
            let br = tape.repeat_row(b, rows)?;
            let z = tape.add(z, br)?;
            h = if i == last {
                z
            } else {
                match self.spec.activation {
                    Activation::Relu => tape.relu(z),
                    Activation::Tanh => tape.tanh(z),
                }
            };
        }
        Ok(ForwardNodes { logits: h, params })
    }

    /// Pure evaluation: logits for a batch, no gradient bookkeeping exposed.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let nodes = self.forward_on_tape(&mut tape, xn)?;
        Ok(tape.value(nodes.logits).clone())
    }

    /// SHA-256 over the little-endian bytes of every parameter, for
    /// frozen-model guarantees.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in &self.layers {
            for v in layer.w.values().iter().chain(layer.b.values()) {
                hasher.update(v.to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Discriminator input under a fairness criterion: the prediction
/// probabilities alone (demographic parity) or the probabilities
/// concatenated with a one-hot of the true label (equalized odds).
pub fn discriminator_input(
    tape: &mut Tape,
    yhat_probs: NodeId,
    y: &[usize],
    y_classes: usize,
    criterion: crate::fairness::Criterion,
) -> Result<NodeId> {
    let probs = tape.value(yhat_probs);
    let n = probs.rows();
    for r in 0..n {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "probability row {r} sums to {s}, expected 1 within 1e-6"
            )));
        }
    }
    match criterion {
        crate::fairness::Criterion::Dp => Ok(yhat_probs),
        crate::fairness::Criterion::Eo => {
            if y.len() != n {
                return Err(Error::shape(
                    "discriminator_input",
                    format!("{n} probability rows but {} labels", y.len()),
                ));
            }
            let mut onehot = vec![0.0; n * y_classes];
            for (r, &label) in y.iter().enumerate() {
                if label >= y_classes {
                    return Err(Error::invalid(format!(
                        "label {label} out of range for {y_classes} classes"
                    )));
                }
                onehot[r * y_classes + label] = 1.0;
            }
            let oh = tape.leaf(Tensor::new(vec![n, y_classes], onehot)?);
            tape.concat(yhat_probs, oh)
        }
    }
}

/// Width of the discriminator input for `k` prediction classes and `k_y`
/// label classes.
pub fn discriminator_input_width(k: usize, k_y: usize, criterion: crate::fairness::Criterion) -> usize {
    match criterion {
        crate::fairness::Criterion::Dp => k,
        crate::fairness::Criterion::Eo => k + k_y,
    }
}

/// Default discriminator: three hidden layers of width 32, relu, softmax
/// head over the demographic groups.
pub fn discriminator_spec(input_width: usize, groups: usize) -> NetSpec {
    NetSpec::new(vec![input_width, 32, 32, 32, groups], Activation::Relu).unwrap()
}

pub fn save_model(model: &NetModel, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(model)
        .map_err(|e| Error::invalid(format!("model encode failed: {e}")))?;
    crate::experiment::write_atomic(path, body.as_bytes())
}

pub fn load_model(path: &Path) -> Result<NetModel> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: NetModel = serde_json::from_str(&body).map_err(|e| Error::Decode {
        path: path.display().to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    // A well-formed file can still disagree with its own spec.
    if model.layers.len() + 1 != model.spec.widths.len() {
        return Err(Error::Decode {
            path: path.display().to_string(),
            message: format!(
                "{} layers inconsistent with widths {:?}",
                model.layers.len(),
                model.spec.widths
            ),
        });
    }
    for (i, (layer, pair)) in model.layers.iter().zip(model.spec.widths.windows(2)).enumerate() {
        if layer.w.shape() != [pair[0], pair[1]] || layer.b.shape() != [pair[1]] {
            return Err(Error::Decode {
                path: path.display().to_string(),
                message: format!("layer {i} parameter shapes inconsistent with spec"),
            });
        }
    }
    Ok(model)
}
