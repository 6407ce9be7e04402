use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble_observed, attach_side_information, ObservedMode};
use super::distortion::DistortionSpec;
use crate::error::{Error, Result};
use crate::experiments::data::DatasetBatch;
use crate::experiments::metrics::{balanced_accuracy, normalized_error};
use crate::info_measures::{Alpha, PosteriorBatch};
use crate::neural::{
    adversary_loss, backward, forward, releaser_loss, Activation, Gradients, LayerSpec,
    NetworkParams, ReleaserLoss, Sgd, UtilityTerm,
};
use crate::tensor::Tensor3;

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Hidden-layer widths of the three networks. Output layers are implied:
/// linear with Y's width for the releaser, softmax for the classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub releaser_hidden: Vec<usize>,
    pub adversary_hidden: Vec<usize>,
    pub utility_hidden: Vec<usize>,
    /// Use Elman cells for every hidden layer.
    pub recurrent: bool,
    pub hidden_activation: Activation,
    /// Releaser outputs a correction added to Y instead of Z itself.
    pub residual_releaser: bool,
    /// Put a parameter-free batch standardization in front of the
    /// adversary. The releaser gradient flows through the batch moments,
    /// so rescaling or shifting Z buys no privacy.
    pub normalize_adversary: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            releaser_hidden: Vec::new(),
            adversary_hidden: vec![16],
            utility_hidden: vec![16],
            recurrent: false,
            hidden_activation: Activation::Tanh,
            residual_releaser: false,
            normalize_adversary: false,
        }
    }
}

impl Architecture {
    fn hidden(&self, widths: &[usize]) -> Vec<LayerSpec> {
        widths
            .iter()
            .map(|&w| LayerSpec {
                outputs: w,
                activation: self.hidden_activation,
                recurrent: self.recurrent,
            })
            .collect()
    }

    pub fn releaser_specs(&self, outputs: usize) -> Vec<LayerSpec> {
        let mut specs = self.hidden(&self.releaser_hidden);
        specs.push(LayerSpec::dense(outputs, Activation::Linear));
        specs
    }

    pub fn adversary_specs(&self, classes: usize) -> Vec<LayerSpec> {
        let mut specs = self.hidden(&self.adversary_hidden);
        specs.push(LayerSpec::dense(classes, Activation::Softmax));
        specs
    }

    pub fn utility_specs(&self, classes: usize) -> Vec<LayerSpec> {
        let mut specs = self.hidden(&self.utility_hidden);
        specs.push(LayerSpec::dense(classes, Activation::Softmax));
        specs
    }
}

fn default_lr() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    0.9
}

/// Settings of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub alpha: Alpha,
    pub lambda: f64,
    pub batch_size: usize,
    /// Adversary (and utility) updates per releaser update.
    pub adversary_steps: usize,
    pub iterations: usize,
    /// Sequence length; checked against the data when given.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_lr")]
    pub releaser_lr: f64,
    #[serde(default = "default_lr")]
    pub adversary_lr: f64,
    #[serde(default = "default_lr")]
    pub utility_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Learning rates of the releaser and adversary decay linearly to this
    /// fraction of their initial value over the run.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_attacker_iterations")]
    pub attacker_iterations: usize,
    #[serde(default = "default_lr")]
    pub attacker_lr: f64,
    #[serde(default)]
    pub observed: ObservedMode,
    #[serde(default)]
    pub architecture: Architecture,
    pub seed: u64,
}

fn default_lr_decay() -> f64 {
    1.0
}

fn default_attacker_iterations() -> usize {
    1000
}

impl HyperParams {
    pub fn new(
        alpha: Alpha,
        lambda: f64,
        batch_size: usize,
        adversary_steps: usize,
        iterations: usize,
        seed: u64,
    ) -> Self {
        Self {
            alpha,
            lambda,
            batch_size,
            adversary_steps,
            iterations,
            steps: None,
            releaser_lr: default_lr(),
            adversary_lr: default_lr(),
            utility_lr: default_lr(),
            momentum: default_momentum(),
            clip_norm: None,
            lr_decay: default_lr_decay(),
            attacker_iterations: default_attacker_iterations(),
            attacker_lr: default_lr(),
            observed: ObservedMode::YOnly,
            architecture: Architecture::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.adversary_steps == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "batch_size, adversary_steps and iterations must be >= 1".into(),
            ));
        }
        if self.steps == Some(0) {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        for lr in [
            self.releaser_lr,
            self.adversary_lr,
            self.utility_lr,
            self.attacker_lr,
        ] {
            Sgd::new(lr, self.momentum)?;
        }
        Ok(())
    }

    fn optimizer(&self, lr: f64) -> Result<Sgd> {
        Ok(Sgd::new(lr, self.momentum)?.with_clip_norm(self.clip_norm))
    }
}

/// Independent stream seed from a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_BATCHES: u64 = 1;
const STREAM_RELEASER: u64 = 2;
const STREAM_ADVERSARY: u64 = 3;
const STREAM_UTILITY: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub releaser: usize,
    pub adversary: usize,
    pub utility: usize,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean adversary loss over the iteration's k steps.
    pub adversary_loss: f64,
    pub releaser_loss: f64,
    pub distortion: f64,
    pub entropy: f64,
    pub ne: f64,
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={}\tadv_loss={:.6}\trel_loss={:.6}\tdistortion={:.6}\tentropy={:.6}\tne={:.6}",
            self.iteration,
            self.adversary_loss,
            self.releaser_loss,
            self.distortion,
            self.entropy,
            self.ne
        )
    }
}

/// Borrowed view of the networks, handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct Networks<'a> {
    pub releaser: &'a NetworkParams,
    pub adversary: &'a NetworkParams,
    pub utility: Option<&'a NetworkParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// After adversary (and utility) update `step` of the iteration.
    AdversaryStep(usize),
    ReleaserBefore,
    ReleaserAfter,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn observe(&mut self, _iteration: usize, _phase: Phase, _nets: &Networks<'_>) {}
    fn log(&mut self, _entry: &IterationLog) {}
}

impl TrainObserver for () {}

/// Result of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedSystem {
    pub hyper: HyperParams,
    pub distortion: DistortionSpec,
    pub si_enabled: bool,
    pub releaser: NetworkParams,
    pub adversary: NetworkParams,
    pub utility: Option<NetworkParams>,
    /// One releaser loss per iteration.
    pub releaser_history: Vec<f64>,
    /// One adversary loss per adversary update.
    pub adversary_history: Vec<f64>,
    pub utility_history: Vec<f64>,
    /// Normalized error of the releaser batch, per iteration.
    pub ne_history: Vec<f64>,
    pub updates: UpdateCounts,
}

impl TrainedSystem {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Released data for a batch under this system's releaser.
    pub fn release(&self, batch: &DatasetBatch) -> Result<Tensor3> {
        release(
            &self.releaser,
            batch,
            self.hyper.observed,
            self.hyper.architecture.residual_releaser,
        )
    }

    pub fn networks(&self) -> Networks<'_> {
        Networks {
            releaser: &self.releaser,
            adversary: &self.adversary,
            utility: self.utility.as_ref(),
        }
    }
}

/// Per-feature moments over all (b, t) of a batch. `scale` includes a small
/// floor so constant features pass through as zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

const MOMENT_FLOOR: f64 = 1e-10;

impl BatchMoments {
    pub fn fit(x: &Tensor3) -> Self {
        let n = x.features();
        let rows = (x.batch() * x.steps()).max(1) as f64;
        let mut mean = vec![0.0; n];
        for row in x.data().chunks(n.max(1)) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / rows);
        }
        let mut var = vec![0.0; n];
        for row in x.data().chunks(n.max(1)) {
            var.iter_mut()
                .zip(row)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m).powi(2) / rows);
        }
        let scale = var.iter().map(|v| (v + MOMENT_FLOOR).sqrt()).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Tensor3) -> Tensor3 {
        Tensor3::from_fn(x.batch(), x.steps(), x.features(), |b, t, j| {
            (x.get(b, t, j) - self.mean[j]) / self.scale[j]
        })
    }

    /// Gradient with respect to the raw batch `x` of a loss on
    /// `apply(x)` when the moments themselves were fit on `x`.
    pub fn backward(&self, normalized: &Tensor3, grad: &Tensor3) -> Tensor3 {
        let n = grad.features();
        let rows = (grad.batch() * grad.steps()).max(1) as f64;
        let mut g_mean = vec![0.0; n];
        let mut gx_mean = vec![0.0; n];
        for (g, x) in grad
            .data()
            .chunks(n.max(1))
            .zip(normalized.data().chunks(n.max(1)))
        {
            for j in 0..n {
                g_mean[j] += g[j] / rows;
                gx_mean[j] += g[j] * x[j] / rows;
            }
        }
        Tensor3::from_fn(grad.batch(), grad.steps(), n, |b, t, j| {
            (grad.get(b, t, j) - g_mean[j] - normalized.get(b, t, j) * gx_mean[j]) / self.scale[j]
        })
    }

    /// Diagonal transform for [`NetworkParams::fold_input_transform`].
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.scale.len();
        let mut m = vec![0.0; n * n];
        for (j, s) in self.scale.iter().enumerate() {
            m[j * n + j] = 1.0 / s;
        }
        m
    }
}

/// Whitening map `x ↦ L⁻¹ (x − μ)` with `L Lᵀ` the feature covariance
/// over all (b, t). After it every linear direction of the input has unit
/// variance, so information cannot hide in a low-variance direction where
/// gradient training is slow to find it.
#[derive(Clone, Debug, PartialEq)]
pub struct Whitener {
    pub shift: Vec<f64>,
    /// n×n, row-major.
    pub matrix: Vec<f64>,
}

impl Whitener {
    pub fn fit(x: &Tensor3) -> Result<Self> {
        let n = x.features();
        let rows = (x.batch() * x.steps()).max(1) as f64;
        let mut shift = vec![0.0; n];
        for row in x.data().chunks(n.max(1)) {
            shift.iter_mut().zip(row).for_each(|(m, v)| *m += v / rows);
        }
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for row in x.data().chunks(n.max(1)) {
            for i in 0..n {
                for j in 0..=i {
                    cov[(i, j)] += (row[i] - shift[i]) * (row[j] - shift[j]) / rows;
                }
            }
        }
        let ridge = 1e-9 * (cov.trace() / n.max(1) as f64) + 1e-12;
        for i in 0..n {
            cov[(i, i)] += ridge;
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        let l = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("input covariance is not positive definite".into()))?
            .l();
        let inv = l
            .try_inverse()
            .ok_or_else(|| Error::Numerical("input covariance factor is singular".into()))?;
        let matrix = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|ij| inv[ij])
            .collect();
        Ok(Self { shift, matrix })
    }

    fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &Tensor3) -> Tensor3 {
        let n = self.dim();
        Tensor3::from_fn(x.batch(), x.steps(), n, |b, t, j| {
            (0..=j)
                .map(|i| self.matrix[j * n + i] * (x.get(b, t, i) - self.shift[i]))
                .sum()
        })
    }
}

/// Everything the releaser loss depends on apart from the releaser itself.
#[derive(Clone, Copy, Debug)]
pub struct ReleaserContext<'a> {
    pub adversary: &'a NetworkParams,
    pub utility: Option<&'a NetworkParams>,
    pub distortion: &'a DistortionSpec,
    pub lambda: f64,
    pub alpha: Alpha,
    pub mode: ObservedMode,
    pub residual: bool,
    pub si_enabled: bool,
    /// Batch standardization in front of the adversary.
    pub normalize_adversary: bool,
}

fn si_of(batch: &DatasetBatch, enabled: bool) -> Result<Option<&Tensor3>> {
    if !enabled {
        return Ok(None);
    }
    batch
        .s
        .as_ref()
        .map(Some)
        .ok_or_else(|| Error::Config("side information enabled but the dataset has none".into()))
}

fn utility_labels(batch: &DatasetBatch) -> Result<&[usize]> {
    batch.c.as_deref().ok_or_else(|| {
        Error::Config("utility network enabled but the dataset has no utility labels".into())
    })
}

/// Released data for a batch.
pub fn release(
    releaser: &NetworkParams,
    batch: &DatasetBatch,
    mode: ObservedMode,
    residual: bool,
) -> Result<Tensor3> {
    let w = assemble_observed(&batch.y, &batch.x, Some(&batch.u), mode)?;
    let mut z = forward(releaser, &w)?.0;
    if residual {
        z.add_assign(&batch.y)?;
    }
    Ok(z)
}

/// Releaser loss on a batch, and its gradient with respect to the releaser
/// parameters. The adversary and utility networks are only read.
pub fn releaser_gradient(
    releaser: &NetworkParams,
    ctx: &ReleaserContext<'_>,
    batch: &DatasetBatch,
) -> Result<(ReleaserLoss, Gradients, Tensor3)> {
    let w = assemble_observed(&batch.y, &batch.x, Some(&batch.u), ctx.mode)?;
    let (mut z, rtrace) = forward(releaser, &w)?;
    if ctx.residual {
        z.add_assign(&batch.y)?;
    }
    z.ensure_same_shape(&batch.y, "released vs useful data")?;
    let mut a_in = attach_side_information(&z, si_of(batch, ctx.si_enabled)?)?;
    let moments = ctx.normalize_adversary.then(|| BatchMoments::fit(&a_in));
    if let Some(m) = &moments {
        a_in = m.apply(&a_in);
    }
    let (p, atrace) = forward(ctx.adversary, &a_in)?;
    let posteriors = PosteriorBatch::new(p)?;

    let util = match (ctx.distortion.needs_utility(), ctx.utility) {
        (true, Some(net)) => {
            let (c, ctrace) = forward(net, &z)?;
            Some((PosteriorBatch::new(c)?, ctrace, net))
        }
        (true, None) => {
            return Err(Error::Config(
                "composite distortion needs a utility network".into(),
            ))
        }
        (false, _) => None,
    };
    let labels = match &util {
        Some(_) => Some(utility_labels(batch)?),
        None => None,
    };
    let term = util
        .as_ref()
        .zip(labels)
        .map(|((post, _, _), labels)| UtilityTerm {
            posteriors: post,
            labels,
        });
    let loss = releaser_loss(
        &z,
        &batch.y,
        &posteriors,
        ctx.distortion,
        ctx.lambda,
        ctx.alpha,
        term.as_ref(),
    )?;

    let mut dz = loss.released_grad.clone();
    let (_, mut da) = backward(ctx.adversary, &atrace, &loss.posterior_grad)?;
    if let Some(m) = &moments {
        da = m.backward(&a_in, &da);
    }
    let nz = z.features();
    dz.add_assign(&da.slice_features(0, nz)?)?;
    if let (Some((_, ctrace, net)), Some(ug)) = (&util, &loss.utility_grad) {
        let (_, dc) = backward(net, ctrace, ug)?;
        dz.add_assign(&dc)?;
    }
    let (grads, _) = backward(releaser, &rtrace, &dz)?;
    Ok((loss, grads, z))
}

fn guard(iteration: usize, phase: &'static str, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged {
            iteration,
            phase,
            loss,
        });
    }
    Ok(())
}

fn gather_labels(labels: &[usize], steps: usize, indices: &[usize]) -> Vec<usize> {
    indices
        .iter()
        .flat_map(|&b| labels[b * steps..(b + 1) * steps].iter().copied())
        .collect()
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// One cross-entropy step of a classifier on `(inputs, labels)`.
fn classifier_step(
    net: &mut NetworkParams,
    opt: &mut Sgd,
    inputs: &Tensor3,
    labels: &[usize],
) -> Result<f64> {
    let (p, trace) = forward(net, inputs)?;
    let loss = adversary_loss(&PosteriorBatch::new(p)?, labels)?;
    let (grads, _) = backward(net, &trace, &loss.grad)?;
    opt.step(net, &grads)?;
    Ok(loss.value)
}

/// Alternating training: per iteration, k adversary (and utility) updates
/// on fresh batches, then one releaser update on a fresh batch with the
/// classifiers frozen.
pub fn train(
    hyper: &HyperParams,
    data: &DatasetBatch,
    spec: &DistortionSpec,
    si_enabled: bool,
    utility_enabled: bool,
) -> Result<TrainedSystem> {
    train_observed(hyper, data, spec, si_enabled, utility_enabled, &mut ())
}

pub fn train_observed(
    hyper: &HyperParams,
    data: &DatasetBatch,
    spec: &DistortionSpec,
    si_enabled: bool,
    utility_enabled: bool,
    observer: &mut dyn TrainObserver,
) -> Result<TrainedSystem> {
    hyper.validate()?;
    spec.validate()?;
    data.validate()?;
    if let Some(t) = hyper.steps {
        if t != data.steps() {
            return Err(Error::Config(format!(
                "hyper-parameters expect T = {t}, data has T = {}",
                data.steps()
            )));
        }
    }
    if spec.needs_utility() && !utility_enabled {
        return Err(Error::Config(
            "composite distortion requires the utility network".into(),
        ));
    }
    if utility_enabled {
        utility_labels(data)?;
    }
    si_of(data, si_enabled)?;

    let arch = &hyper.architecture;
    let dy = data.y.features();
    let w_dim = dy + usize::from(hyper.observed == ObservedMode::ConcatXy) + data.u.features();
    let a_dim = dy + if si_enabled { data.si_dim() } else { 0 };
    let mut releaser = NetworkParams::init(
        w_dim,
        &arch.releaser_specs(dy),
        derive_seed(hyper.seed, STREAM_RELEASER),
    )?;
    let mut adversary = NetworkParams::init(
        a_dim,
        &arch.adversary_specs(data.num_private),
        derive_seed(hyper.seed, STREAM_ADVERSARY),
    )?;
    let mut utility = if utility_enabled {
        Some(NetworkParams::init(
            dy,
            &arch.utility_specs(data.num_classes),
            derive_seed(hyper.seed, STREAM_UTILITY),
        )?)
    } else {
        None
    };
    let mut r_opt = hyper.optimizer(hyper.releaser_lr)?;
    let mut a_opt = hyper.optimizer(hyper.adversary_lr)?;
    let mut u_opt = hyper.optimizer(hyper.utility_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, STREAM_BATCHES));

    let n = data.len();
    let k = hyper.adversary_steps;
    let mut out_hist = (
        Vec::with_capacity(hyper.iterations),
        Vec::with_capacity(hyper.iterations * k),
        Vec::new(),
        Vec::with_capacity(hyper.iterations),
    );
    let mut updates = UpdateCounts::default();
    let mut last_moments: Option<BatchMoments> = None;

    for it in 0..hyper.iterations {
        let progress = it as f64 / hyper.iterations.max(2).saturating_sub(1) as f64;
        let factor = 1.0 - (1.0 - hyper.lr_decay) * progress.min(1.0);
        r_opt.learning_rate = hyper.releaser_lr * factor;
        a_opt.learning_rate = hyper.adversary_lr * factor;
        let mut adv_sum = 0.0;
        for step in 0..k {
            let batch = data.select(&sample_indices(&mut rng, n, hyper.batch_size));
            let z = release(&releaser, &batch, hyper.observed, arch.residual_releaser)?;
            let mut a_in = attach_side_information(&z, si_of(&batch, si_enabled)?)?;
            if arch.normalize_adversary {
                let m = BatchMoments::fit(&a_in);
                a_in = m.apply(&a_in);
                last_moments = Some(m);
            }
            let a_loss = classifier_step(&mut adversary, &mut a_opt, &a_in, &batch.x)?;
            guard(it, "adversary", a_loss)?;
            adv_sum += a_loss;
            out_hist.1.push(a_loss);
            updates.adversary += 1;
            if let Some(net) = utility.as_mut() {
                let per_step: Vec<usize> = utility_labels(&batch)?
                    .iter()
                    .flat_map(|&c| std::iter::repeat_n(c, batch.steps()))
                    .collect();
                let u_loss = classifier_step(net, &mut u_opt, &z, &per_step)?;
                guard(it, "utility", u_loss)?;
                out_hist.2.push(u_loss);
                updates.utility += 1;
            }
            observer.observe(
                it,
                Phase::AdversaryStep(step),
                &Networks {
                    releaser: &releaser,
                    adversary: &adversary,
                    utility: utility.as_ref(),
                },
            );
        }

        let batch = data.select(&sample_indices(&mut rng, n, hyper.batch_size));
        observer.observe(
            it,
            Phase::ReleaserBefore,
            &Networks {
                releaser: &releaser,
                adversary: &adversary,
                utility: utility.as_ref(),
            },
        );
        let ctx = ReleaserContext {
            adversary: &adversary,
            utility: utility.as_ref(),
            distortion: spec,
            lambda: hyper.lambda,
            alpha: hyper.alpha,
            mode: hyper.observed,
            residual: arch.residual_releaser,
            si_enabled,
            normalize_adversary: arch.normalize_adversary,
        };
        let (loss, grads, z) = releaser_gradient(&releaser, &ctx, &batch)?;
        guard(it, "releaser", loss.value)?;
        r_opt.step(&mut releaser, &grads)?;
        updates.releaser += 1;
        observer.observe(
            it,
            Phase::ReleaserAfter,
            &Networks {
                releaser: &releaser,
                adversary: &adversary,
                utility: utility.as_ref(),
            },
        );
        let ne = normalized_error(&z, &batch.y).unwrap_or(f64::NAN);
        out_hist.0.push(loss.value);
        out_hist.3.push(ne);
        observer.log(&IterationLog {
            iteration: it,
            adversary_loss: adv_sum / k as f64,
            releaser_loss: loss.value,
            distortion: loss.distortion,
            entropy: loss.entropy,
            ne,
        });
    }

    if let Some(m) = &last_moments {
        adversary.fold_input_transform(&m.mean, &m.matrix())?;
    }
    Ok(TrainedSystem {
        hyper: hyper.clone(),
        distortion: *spec,
        si_enabled,
        releaser,
        adversary,
        utility,
        releaser_history: out_hist.0,
        adversary_history: out_hist.1,
        utility_history: out_hist.2,
        ne_history: out_hist.3,
        updates,
    })
}

/// Trains a classifier on precomputed inputs with minibatch SGD.
#[allow(clippy::too_many_arguments)]
pub fn fit_classifier(
    net: &mut NetworkParams,
    inputs: &Tensor3,
    labels: &[usize],
    iterations: usize,
    batch_size: usize,
    opt: &mut Sgd,
    seed: u64,
) -> Result<Vec<f64>> {
    let (nb, nt, _) = inputs.shape();
    if labels.len() != nb * nt {
        return Err(Error::Shape(format!(
            "{} labels for {nb}x{nt} inputs",
            labels.len()
        )));
    }
    if nb == 0 || batch_size == 0 {
        return Err(Error::Empty("no samples to fit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let idx = sample_indices(&mut rng, nb, batch_size);
        let loss = classifier_step(
            net,
            opt,
            &inputs.select(&idx),
            &gather_labels(labels, nt, &idx),
        )?;
        guard(it, "attacker", loss)?;
        history.push(loss);
    }
    Ok(history)
}

/// Attacker inputs: the frozen release plus SI when enabled.
pub fn attacker_inputs(
    system: &TrainedSystem,
    data: &DatasetBatch,
    si_enabled: bool,
) -> Result<Tensor3> {
    let z = system.release(data)?;
    attach_side_information(&z, si_of(data, si_enabled)?)
}

/// Trains a fresh network with the adversary's layer shapes on the
/// frozen releaser's output.
///
/// Inputs are whitened with training-set moments while fitting; the map
/// is folded into the first layer of the returned network.
pub fn train_attacker(
    system: &TrainedSystem,
    data: &DatasetBatch,
    si_enabled: bool,
    seed: u64,
) -> Result<NetworkParams> {
    let raw = attacker_inputs(system, data, si_enabled)?;
    let st = Whitener::fit(&raw)?;
    let inputs = st.apply(&raw);
    let mut net = NetworkParams::init(inputs.features(), &system.adversary.specs(), seed)?;
    let hyper = &system.hyper;
    let mut opt = hyper.optimizer(hyper.attacker_lr)?;
    fit_classifier(
        &mut net,
        &inputs,
        &data.x,
        hyper.attacker_iterations,
        hyper.batch_size,
        &mut opt,
        derive_seed(seed, STREAM_BATCHES),
    )?;
    net.fold_input_transform(&st.shift, &st.matrix)?;
    Ok(net)
}

/// Most probable class per (b, t), ties to the lowest index.
pub fn predict(net: &NetworkParams, inputs: &Tensor3) -> Result<Vec<usize>> {
    let (p, _) = forward(net, inputs)?;
    let (nb, nt, _) = p.shape();
    let mut out = Vec::with_capacity(nb * nt);
    for b in 0..nb {
        for t in 0..nt {
            let row = p.row(b, t);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out.push(best);
        }
    }
    Ok(out)
}

/// Balanced accuracy of an attacker on held-out data.
pub fn attacker_accuracy(
    system: &TrainedSystem,
    attacker: &NetworkParams,
    test: &DatasetBatch,
    si_enabled: bool,
) -> Result<f64> {
    let inputs = attacker_inputs(system, test, si_enabled)?;
    balanced_accuracy(&predict(attacker, &inputs)?, &test.x, test.num_private)
}

/// Balanced accuracy of the utility network on held-out data, if trained.
pub fn utility_accuracy(system: &TrainedSystem, test: &DatasetBatch) -> Result<Option<f64>> {
    let Some(net) = &system.utility else {
        return Ok(None);
    };
    let z = system.release(test)?;
    let labels: Vec<usize> = utility_labels(test)?
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, test.steps()))
        .collect();
    Ok(Some(balanced_accuracy(
        &predict(net, &z)?,
        &labels,
        test.num_classes,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::data::SynthConfig;

    fn small_hyper(lambda: f64) -> HyperParams {
        let mut h = HyperParams::new(Alpha::new(2.0).unwrap(), lambda, 16, 3, 6, 11);
        h.architecture.adversary_hidden = vec![4];
        h.architecture.utility_hidden = vec![3];
        h
    }

    fn clusters() -> DatasetBatch {
        SynthConfig::labeled_clusters(64, 3, 5).generate().unwrap()
    }

    fn releaser_fd_error(alpha: f64, normalize: bool, si: bool) -> f64 {
        let mut cfg = SynthConfig::markov_load(6, 3, 2);
        cfg.si_correlation = 0.7;
        let batch = cfg.generate().unwrap();
        let arch = Architecture {
            releaser_hidden: vec![3],
            adversary_hidden: vec![4],
            recurrent: true,
            ..Architecture::default()
        };
        let releaser = NetworkParams::init(2, &arch.releaser_specs(1), 1).unwrap();
        let a_dim = 1 + if si { 2 } else { 0 };
        let adversary = NetworkParams::init(a_dim, &arch.adversary_specs(2), 2).unwrap();
        let spec = DistortionSpec::TsL2;
        let ctx = ReleaserContext {
            adversary: &adversary,
            utility: None,
            distortion: &spec,
            lambda: 3.0,
            alpha: Alpha::new(alpha).unwrap(),
            mode: ObservedMode::YOnly,
            residual: false,
            si_enabled: si,
            normalize_adversary: normalize,
        };
        let (_, grads, _) = releaser_gradient(&releaser, &ctx, &batch).unwrap();
        let analytic = grads.flat();
        let theta = releaser.flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            let at = |d: f64| {
                let mut r = releaser.clone();
                let mut t = theta.clone();
                t[i] += d;
                r.set_flat(&t).unwrap();
                releaser_gradient(&r, &ctx, &batch).unwrap().0.value
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6));
        }
        worst
    }

    #[test]
    fn releaser_gradient_matches_finite_differences() {
        for (alpha, normalize, si) in [(0.9, false, false), (3.0, true, true), (1.0, true, false)] {
            let err = releaser_fd_error(alpha, normalize, si);
            assert!(
                err < 1e-4,
                "alpha {alpha} normalize {normalize} si {si}: {err}"
            );
        }
    }

    #[test]
    fn histories_and_counters_follow_the_alternation() {
        let data = clusters();
        let hyper = small_hyper(1.0);
        let sys = train(&hyper, &data, &DistortionSpec::CompositeImg, true, true).unwrap();
        assert_eq!(sys.releaser_history.len(), 6);
        assert_eq!(sys.adversary_history.len(), 18);
        assert_eq!(sys.utility_history.len(), 18);
        assert_eq!(
            sys.updates,
            UpdateCounts {
                releaser: 6,
                adversary: 18,
                utility: 18
            }
        );
    }

    #[derive(Default)]
    struct FreezeCheck {
        releaser_during_k: Vec<(usize, u64)>,
        classifiers_around_release: Vec<(u64, u64, u64, u64)>,
        releaser_changes: usize,
        last_releaser: Option<u64>,
        logs: Vec<String>,
    }

    impl TrainObserver for FreezeCheck {
        fn observe(&mut self, iteration: usize, phase: Phase, nets: &Networks<'_>) {
            let util = nets.utility.map_or(0, NetworkParams::fingerprint);
            match phase {
                Phase::AdversaryStep(_) => self
                    .releaser_during_k
                    .push((iteration, nets.releaser.fingerprint())),
                Phase::ReleaserBefore => {
                    self.classifiers_around_release.push((
                        nets.adversary.fingerprint(),
                        util,
                        0,
                        0,
                    ));
                    self.last_releaser = Some(nets.releaser.fingerprint());
                }
                Phase::ReleaserAfter => {
                    let last = self.classifiers_around_release.last_mut().unwrap();
                    last.2 = nets.adversary.fingerprint();
                    last.3 = util;
                    if self.last_releaser != Some(nets.releaser.fingerprint()) {
                        self.releaser_changes += 1;
                    }
                }
            }
        }

        fn log(&mut self, entry: &IterationLog) {
            self.logs.push(entry.to_string());
        }
    }

    #[test]
    fn parameters_are_frozen_in_the_other_phase() {
        let data = clusters();
        let mut check = FreezeCheck::default();
        train_observed(
            &small_hyper(1.0),
            &data,
            &DistortionSpec::CompositeImg,
            false,
            true,
            &mut check,
        )
        .unwrap();
        for it in 0..6 {
            let prints: Vec<u64> = check
                .releaser_during_k
                .iter()
                .filter(|(i, _)| *i == it)
                .map(|p| p.1)
                .collect();
            assert_eq!(prints.len(), 3);
            assert!(prints.windows(2).all(|w| w[0] == w[1]));
        }
        for (a0, u0, a1, u1) in &check.classifiers_around_release {
            assert_eq!((a0, u0), (a1, u1));
        }
        assert_eq!(check.releaser_changes, 6);
        assert_eq!(check.logs.len(), 6);
        assert!(check.logs[0].starts_with("iter=0\tadv_loss="));
        assert!(check.logs[5].contains("\tne="));
    }

    #[test]
    fn training_is_reproducible() {
        let data = clusters();
        let a = train(&small_hyper(0.5), &data, &DistortionSpec::TsL2, true, false).unwrap();
        let b = train(&small_hyper(0.5), &data, &DistortionSpec::TsL2, true, false).unwrap();
        assert_eq!(a, b);
        let mut other = small_hyper(0.5);
        other.seed = 12;
        let c = train(&other, &data, &DistortionSpec::TsL2, true, false).unwrap();
        assert_ne!(a.releaser, c.releaser);
    }

    #[test]
    fn disabled_si_ignores_si_columns() {
        let data = clusters();
        let hyper = small_hyper(0.5);
        let with = train(&hyper, &data, &DistortionSpec::TsL2, false, false).unwrap();
        let without = train(
            &hyper,
            &data.without_si(),
            &DistortionSpec::TsL2,
            false,
            false,
        )
        .unwrap();
        assert_eq!(with, without);
        assert!(train(
            &hyper,
            &data.without_si(),
            &DistortionSpec::TsL2,
            true,
            false
        )
        .is_err());
    }

    #[test]
    fn configuration_errors() {
        let data = clusters();
        let mut h = small_hyper(-1.0);
        assert!(train(&h, &data, &DistortionSpec::TsL2, false, false).is_err());
        h.lambda = 1.0;
        assert!(train(&h, &data, &DistortionSpec::CompositeImg, false, false).is_err());
        h.steps = Some(4);
        assert!(train(&h, &data, &DistortionSpec::TsL2, false, false).is_err());
        let markov = SynthConfig::markov_load(8, 24, 1).generate().unwrap();
        assert!(train(
            &small_hyper(1.0),
            &markov,
            &DistortionSpec::TsL2,
            false,
            true
        )
        .is_err());
    }

    #[test]
    fn divergence_is_reported_with_the_iteration() {
        let data = clusters();
        let mut h = small_hyper(1.0);
        h.releaser_lr = 1e9;
        h.momentum = 0.0;
        match train(&h, &data, &DistortionSpec::PNorm { p: 2.0 }, false, false) {
            Err(Error::Diverged { iteration, .. }) => assert!(iteration < 6),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reference_batch_settings_are_accepted() {
        let h: HyperParams = serde_json::from_str(
            r#"{"alpha": 1.0, "lambda": 0.5, "batch_size": 256, "adversary_steps": 3, "iterations": 10, "seed": 1}"#,
        )
        .unwrap();
        assert!(h.validate().is_ok());
        let h: HyperParams = serde_json::from_str(
            r#"{"alpha": 3.0, "lambda": 0.5, "batch_size": 128, "adversary_steps": 4, "iterations": 10, "steps": 24, "seed": 1}"#,
        )
        .unwrap();
        assert!(h.validate().is_ok());
        assert_eq!((h.batch_size, h.adversary_steps), (128, 4));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = clusters();
        let sys = train(
            &small_hyper(0.5),
            &data,
            &DistortionSpec::CompositeImg,
            true,
            true,
        )
        .unwrap();
        let back = TrainedSystem::from_json(&sys.to_json().unwrap()).unwrap();
        assert_eq!(back.releaser.flat(), sys.releaser.flat());
        assert_eq!(
            back.utility.as_ref().unwrap().flat(),
            sys.utility.as_ref().unwrap().flat()
        );
        assert_eq!(back.releaser_history, sys.releaser_history);
    }
}
