use crate::error::{Error, Result};
use crate::info_measures::{batch_sequence_arimoto_entropy_grad, Alpha, PosteriorBatch};
use crate::tensor::Tensor3;
use crate::training::distortion::{compute_distortion, norm_distortion_grad, DistortionSpec};

/// Floor applied to predicted probabilities inside cross-entropy.
pub const LOG_CLAMP: f64 = 1e-15;

/// Scalar loss with its derivative with respect to the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor3,
    /// Number of true-label probabilities that hit [`LOG_CLAMP`].
    pub clamped: usize,
}

/// Mean negative log-likelihood `(1/(B·T)) Σ −log p(x_bt)`.
///
/// `labels` holds one class per (b, t), row-major.
pub fn adversary_loss(posteriors: &PosteriorBatch, labels: &[usize]) -> Result<LossValue> {
    let (nb, nt, nk) = posteriors.tensor().shape();
    if labels.len() != nb * nt {
        return Err(Error::Shape(format!(
            "{} labels for a {}x{} posterior batch",
            labels.len(),
            nb,
            nt
        )));
    }
    if let Some(bad) = labels.iter().find(|&&x| x >= nk) {
        return Err(Error::Shape(format!(
            "label {bad} outside alphabet of size {nk}"
        )));
    }
    let scale = 1.0 / (nb * nt) as f64;
    let mut grad = Tensor3::zeros(nb, nt, nk);
    let mut value = 0.0;
    let mut clamped = 0;
    for b in 0..nb {
        for t in 0..nt {
            let x = labels[b * nt + t];
            let p = posteriors.tensor().get(b, t, x);
            let pc = if p < LOG_CLAMP {
                clamped += 1;
                LOG_CLAMP
            } else {
                p
            };
            value -= pc.ln();
            grad.set(b, t, x, -scale / pc);
        }
    }
    Ok(LossValue {
        value: value * scale,
        grad,
        clamped,
    })
}

/// Utility classifier output and per-sample class labels.
#[derive(Clone, Copy, Debug)]
pub struct UtilityTerm<'a> {
    pub posteriors: &'a PosteriorBatch,
    /// One class per batch element, shared by all time steps.
    pub labels: &'a [usize],
}

/// Cross-entropy of the utility classifier against per-sample labels.
pub fn utility_loss(term: &UtilityTerm<'_>) -> Result<LossValue> {
    let nt = term.posteriors.steps();
    if term.labels.len() != term.posteriors.batch() {
        return Err(Error::Shape(format!(
            "{} utility labels for batch of {}",
            term.labels.len(),
            term.posteriors.batch()
        )));
    }
    let per_step: Vec<usize> = term
        .labels
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, nt))
        .collect();
    adversary_loss(term.posteriors, &per_step)
}

/// Releaser loss and its partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct ReleaserLoss {
    pub value: f64,
    pub distortion: f64,
    /// Batch estimate of `(1/T) H^A_α(X̂^T | Z^T, S)`.
    pub entropy: f64,
    /// d loss / d released (distortion term only).
    pub released_grad: Tensor3,
    /// d loss / d adversary posteriors.
    pub posterior_grad: Tensor3,
    /// d loss / d utility posteriors, when a utility term is present.
    pub utility_grad: Option<Tensor3>,
}

/// `distortion − λ · (1/T) H^A_α(X̂^T | Z^T, S)`.
///
/// With the composite distortion the utility cross-entropy is part of the
/// distortion term.
pub fn releaser_loss(
    released: &Tensor3,
    target: &Tensor3,
    posteriors: &PosteriorBatch,
    distortion: &DistortionSpec,
    lambda: f64,
    alpha: Alpha,
    utility: Option<&UtilityTerm<'_>>,
) -> Result<ReleaserLoss> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if posteriors.batch() != released.batch() || posteriors.steps() != released.steps() {
        return Err(Error::Shape(
            "posteriors and release disagree on B or T".into(),
        ));
    }
    let util = match (distortion.needs_utility(), utility) {
        (true, Some(term)) => Some(utility_loss(term)?),
        (true, None) => {
            return Err(Error::Config(
                "composite distortion needs a utility term".into(),
            ))
        }
        (false, _) => None,
    };
    let d = compute_distortion(distortion, released, target, util.as_ref().map(|u| u.value))?;
    let released_grad = norm_distortion_grad(distortion.norm_order(), released, target)?;
    let (entropy, mut posterior_grad) = batch_sequence_arimoto_entropy_grad(posteriors, alpha);
    posterior_grad
        .data_mut()
        .iter_mut()
        .for_each(|g| *g *= -lambda);
    Ok(ReleaserLoss {
        value: d - lambda * entropy,
        distortion: d,
        entropy,
        released_grad,
        posterior_grad,
        utility_grad: util.map(|u| u.grad),
    })
}
