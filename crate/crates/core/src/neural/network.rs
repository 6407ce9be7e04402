use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Softmax,
    Linear,
}

impl Activation {
    fn apply(self, pre: &[f64], out: &mut [f64]) {
        match self {
            Activation::Tanh => pre.iter().zip(out).for_each(|(a, o)| *o = a.tanh()),
            Activation::Relu => pre.iter().zip(out).for_each(|(a, o)| *o = a.max(0.0)),
            Activation::Sigmoid => pre
                .iter()
                .zip(out)
                .for_each(|(a, o)| *o = 1.0 / (1.0 + (-a).exp())),
            Activation::Linear => out.copy_from_slice(pre),
            Activation::Softmax => {
                let max = pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (a, o) in pre.iter().zip(out.iter_mut()) {
                    *o = (a - max).exp();
                    total += *o;
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
        }
    }

    /// Turns `d loss / d output` into `d loss / d pre-activation`, in place.
    fn backprop(self, pre: &[f64], out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Tanh => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Relu => grad.iter_mut().zip(pre).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, y)| *g *= y * (1.0 - y)),
            Activation::Linear => {}
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(out).map(|(g, y)| g * y).sum();
                grad.iter_mut()
                    .zip(out)
                    .for_each(|(g, y)| *g = y * (*g - dot));
            }
        }
    }
}

/// Shape of one layer to be initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub outputs: usize,
    pub activation: Activation,
    pub recurrent: bool,
}

impl LayerSpec {
    pub fn dense(outputs: usize, activation: Activation) -> Self {
        Self {
            outputs,
            activation,
            recurrent: false,
        }
    }

    /// Elman cell: `h_t = act(W x_t + U h_{t−1} + b)`, `h_0 = 0`.
    pub fn recurrent(outputs: usize, activation: Activation) -> Self {
        Self {
            outputs,
            activation,
            recurrent: true,
        }
    }
}

/// Dense or recurrent layer. `weights` is `outputs × inputs` row-major,
/// `recurrent` (when present) is `outputs × outputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent: Option<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn check(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "layer {}->{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if let Some(u) = &self.recurrent {
            if u.len() != self.outputs * self.outputs {
                return Err(Error::Shape("recurrent matrix must be square".into()));
            }
            if self.activation == Activation::Softmax {
                return Err(Error::Config("recurrent layers cannot use softmax".into()));
            }
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len() + self.recurrent.as_ref().map_or(0, Vec::len)
    }
}

/// Parameters of a small feedforward or recurrent network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip)]
    version: u64,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            layers,
            seed: None,
            version: 0,
        };
        net.check()?;
        Ok(net)
    }

    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn init(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut inputs = input_dim;
        for spec in specs {
            let outputs = spec.outputs;
            let limit = (6.0 / (inputs + outputs) as f64).sqrt();
            let weights = (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            let recurrent = spec.recurrent.then(|| {
                let limit = (6.0 / (2 * outputs) as f64).sqrt();
                (0..outputs * outputs)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect()
            });
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                recurrent,
                bias: vec![0.0; outputs],
                activation: spec.activation,
            });
            inputs = outputs;
        }
        let mut net = Self::new(layers)?;
        net.seed = Some(seed);
        Ok(net)
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if i > 0 && self.layers[i - 1].outputs != layer.inputs {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i - 1,
                    self.layers[i - 1].outputs,
                    i,
                    layer.inputs
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Config(
                    "softmax is only allowed on the final layer".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_classifier(&self) -> bool {
        self.layers[self.layers.len() - 1].activation == Activation::Softmax
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Layer shapes for re-initializing a structurally identical network.
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                outputs: l.outputs,
                activation: l.activation,
                recurrent: l.recurrent.is_some(),
            })
            .collect()
    }

    /// All parameters in a fixed order: per layer weights, recurrent, bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(u) = &l.recurrent {
                out.extend_from_slice(u);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrites all parameters from the order used by [`NetworkParams::flat`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            if let Some(u) = &mut l.recurrent {
                u.iter_mut().for_each(|w| *w = it.next().unwrap());
            }
            l.bias.iter_mut().for_each(|w| *w = it.next().unwrap());
        }
        self.version += 1;
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    /// Absorbs the input map `x ↦ M (x − shift)` into the first layer, so
    /// the network can be fed untransformed inputs. `matrix` is n×n,
    /// row-major.
    pub fn fold_input_transform(&mut self, shift: &[f64], matrix: &[f64]) -> Result<()> {
        let n = self.input_dim();
        if shift.len() != n || matrix.len() != n * n {
            return Err(Error::Shape(format!(
                "input transform with shift {} and matrix {} for {n} inputs",
                shift.len(),
                matrix.len()
            )));
        }
        if matrix.iter().chain(shift).any(|v| !v.is_finite()) {
            return Err(Error::Config("input transform must be finite".into()));
        }
        let first = &mut self.layers_mut()[0];
        for o in 0..first.outputs {
            let row = &mut first.weights[o * n..(o + 1) * n];
            let folded: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| row[i] * matrix[i * n + j]).sum())
                .collect();
            first.bias[o] -= folded.iter().zip(shift).map(|(w, m)| w * m).sum::<f64>();
            row.copy_from_slice(&folded);
        }
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: NetworkParams = serde_json::from_str(text)?;
        net.check()?;
        Ok(net)
    }

    /// Order-sensitive digest of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw f64 bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.flat() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradients laid out like [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub recurrent: Option<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    recurrent: l.recurrent.as_ref().map(|u| vec![0.0; u.len()]),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn congruent_with(&self, params: &NetworkParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len()
                    && g.bias.len() == l.bias.len()
                    && g.recurrent.as_ref().map(Vec::len) == l.recurrent.as_ref().map(Vec::len)
            })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            if let Some(u) = &l.recurrent {
                out.extend_from_slice(u);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            l.weights
                .iter_mut()
                .chain(l.recurrent.iter_mut().flatten())
                .chain(l.bias.iter_mut())
        })
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
struct LayerTrace {
    input: Tensor3,
    pre: Tensor3,
    output: Tensor3,
}

/// Activations retained by [`forward`] for the matching [`backward`] call.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    version: u64,
    param_count: usize,
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor3 {
        &self.layers[self.layers.len() - 1].output
    }
}

/// Runs the network over a B × T × d batch. Recurrent layers scan
/// t = 0..T from a zero hidden state, so the output at t depends only on
/// inputs up to t; dense layers act on each (b, t) independently.
pub fn forward(params: &NetworkParams, input: &Tensor3) -> Result<(Tensor3, ForwardTrace)> {
    if input.features() != params.input_dim() {
        return Err(Error::Shape(format!(
            "network expects {} input features, got {}",
            params.input_dim(),
            input.features()
        )));
    }
    let (nb, nt, _) = input.shape();
    let mut traces = Vec::with_capacity(params.layers.len());
    let mut current = input.clone();
    for layer in &params.layers {
        let mut pre = Tensor3::zeros(nb, nt, layer.outputs);
        let mut out = Tensor3::zeros(nb, nt, layer.outputs);
        for b in 0..nb {
            for t in 0..nt {
                let x = current.row(b, t);
                let mut a = layer.bias.clone();
                for (o, ao) in a.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    *ao += w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                }
                if let (Some(u), true) = (&layer.recurrent, t > 0) {
                    let h_prev = out.row(b, t - 1).to_vec();
                    for (o, ao) in a.iter_mut().enumerate() {
                        let ur = &u[o * layer.outputs..(o + 1) * layer.outputs];
                        *ao += ur.iter().zip(&h_prev).map(|(u, h)| u * h).sum::<f64>();
                    }
                }
                layer.activation.apply(&a, out.row_mut(b, t));
                pre.row_mut(b, t).copy_from_slice(&a);
            }
        }
        traces.push(LayerTrace {
            input: current,
            pre,
            output: out.clone(),
        });
        current = out;
    }
    Ok((
        current,
        ForwardTrace {
            version: params.version,
            param_count: params.param_count(),
            layers: traces,
        },
    ))
}

/// Reverse-mode gradients of a scalar loss, given `d loss / d output`.
/// Returns the parameter gradients and `d loss / d input`.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    output_grad: &Tensor3,
) -> Result<(Gradients, Tensor3)> {
    if trace.version != params.version
        || trace.param_count != params.param_count()
        || trace.layers.len() != params.layers.len()
    {
        return Err(Error::StaleTrace);
    }
    trace
        .output()
        .ensure_same_shape(output_grad, "output gradient")?;
    let mut grads = Gradients::zeros_like(params);
    let mut upstream = output_grad.clone();

    for (li, layer) in params.layers.iter().enumerate().rev() {
        let lt = &trace.layers[li];
        let (nb, nt, _) = lt.output.shape();
        let g = &mut grads.layers[li];
        let mut input_grad = Tensor3::zeros(nb, nt, layer.inputs);
        let n_out = layer.outputs;
        for b in 0..nb {
            // gradient flowing into h_t from step t + 1
            let mut carry = vec![0.0; n_out];
            for t in (0..nt).rev() {
                let mut da: Vec<f64> = upstream
                    .row(b, t)
                    .iter()
                    .zip(&carry)
                    .map(|(u, c)| u + c)
                    .collect();
                layer
                    .activation
                    .backprop(lt.pre.row(b, t), lt.output.row(b, t), &mut da);
                let x = lt.input.row(b, t);
                for (o, &d) in da.iter().enumerate() {
                    g.bias[o] += d;
                    let gw = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    gw.iter_mut().zip(x).for_each(|(gw, x)| *gw += d * x);
                }
                let dx = input_grad.row_mut(b, t);
                for (o, &d) in da.iter().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    dx.iter_mut().zip(w).for_each(|(dx, w)| *dx += d * w);
                }
                carry.iter_mut().for_each(|c| *c = 0.0);
                if let (Some(u), Some(gu)) = (&layer.recurrent, g.recurrent.as_mut()) {
                    if t > 0 {
                        let h_prev = lt.output.row(b, t - 1);
                        for (o, &d) in da.iter().enumerate() {
                            let ur = &u[o * n_out..(o + 1) * n_out];
                            let gur = &mut gu[o * n_out..(o + 1) * n_out];
                            for k in 0..n_out {
                                gur[k] += d * h_prev[k];
                                carry[k] += d * ur[k];
                            }
                        }
                    }
                }
            }
        }
        upstream = input_grad;
    }
    Ok((grads, upstream))
}
