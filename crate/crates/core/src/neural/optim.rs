use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkParams};
use crate::error::{Error, Result};

/// SGD with classical momentum: `v ← μ v + g`, `θ ← θ − η v`.
///
/// When `clip_norm` is set, the gradient is rescaled to at most that
/// Euclidean norm before it enters the velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(skip)]
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            clip_norm: None,
            velocity: None,
        })
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn reset(&mut self) {
        self.velocity = None;
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(params) {
            return Err(Error::Shape("gradients do not match the network".into()));
        }
        let mut g = grads.flat();
        if let Some(clip) = self.clip_norm {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        let velocity = self.velocity.get_or_insert_with(|| vec![0.0; g.len()]);
        if velocity.len() != g.len() {
            return Err(Error::Shape(
                "optimizer state belongs to a different network".into(),
            ));
        }
        for (v, gi) in velocity.iter_mut().zip(&g) {
            *v = self.momentum * *v + gi;
        }
        let lr = self.learning_rate;
        let mut it = velocity.iter();
        for layer in params.layers_mut() {
            let values = layer
                .weights
                .iter_mut()
                .chain(layer.recurrent.iter_mut().flatten())
                .chain(layer.bias.iter_mut());
            for w in values {
                *w -= lr * it.next().expect("velocity covers every parameter");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::{Activation, Layer};
    use approx::assert_abs_diff_eq;

    fn scalar_net(w: f64) -> NetworkParams {
        NetworkParams::new(vec![Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![w],
            recurrent: None,
            bias: vec![0.0],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    fn grad(g: f64) -> Gradients {
        let mut out = Gradients::zeros_like(&scalar_net(0.0));
        out.layers[0].weights[0] = g;
        out
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut net = scalar_net(0.3);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        opt.step(&mut net, &grad(0.0)).unwrap();
        assert_eq!(net.flat(), vec![0.3, 0.0]);
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut net = scalar_net(1.0);
        let mut opt = Sgd::new(1.0, 0.0).unwrap();
        opt.step(&mut net, &grad(0.5)).unwrap();
        assert_eq!(net.flat()[0], 0.5);
    }

    #[test]
    fn momentum_recurrence() {
        // v1 = 0.5, w1 = 1 − 0.1·0.5; v2 = 0.9·0.5 + 0.5, w2 = w1 − 0.1·v2
        let mut net = scalar_net(1.0);
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        opt.step(&mut net, &grad(0.5)).unwrap();
        opt.step(&mut net, &grad(0.5)).unwrap();
        assert_abs_diff_eq!(net.flat()[0], 1.0 - 0.05 - 0.095, epsilon = 1e-15);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut net = scalar_net(0.0);
        let mut opt = Sgd::new(1.0, 0.0).unwrap().with_clip_norm(Some(2.0));
        opt.step(&mut net, &grad(10.0)).unwrap();
        assert_abs_diff_eq!(net.flat()[0], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut net = scalar_net(0.0);
        let other = NetworkParams::init(
            2,
            &[crate::neural::network::LayerSpec::dense(
                2,
                Activation::Linear,
            )],
            0,
        )
        .unwrap();
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        assert!(opt.step(&mut net, &Gradients::zeros_like(&other)).is_err());
        assert!(Sgd::new(0.0, 0.5).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
