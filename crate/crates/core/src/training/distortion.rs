use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// How release distortion is scored against the useful data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionSpec {
    /// Batch mean of `(1/T) ‖z − y‖_p`.
    PNorm { p: f64 },
    /// Utility-network cross-entropy plus the batch mean of `(1/T) ‖z − y‖₁`.
    CompositeImg,
    /// Batch mean of `(1/T) ‖z − y‖₂`.
    TsL2,
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        if let DistortionSpec::PNorm { p } = self {
            if !(*p >= 1.0 && p.is_finite()) {
                return Err(Error::Config(format!("p-norm order must be >= 1, got {p}")));
            }
        }
        Ok(())
    }

    /// Order of the element-wise norm part.
    pub fn norm_order(&self) -> f64 {
        match self {
            DistortionSpec::PNorm { p } => *p,
            DistortionSpec::CompositeImg => 1.0,
            DistortionSpec::TsL2 => 2.0,
        }
    }

    pub fn needs_utility(&self) -> bool {
        matches!(self, DistortionSpec::CompositeImg)
    }
}

fn p_norm(v: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 1.0 {
        v.map(f64::abs).sum()
    } else if p == 2.0 {
        v.map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Batch mean of the per-sequence `(1/T) ‖z − y‖_p` term.
pub fn norm_distortion(p: f64, released: &Tensor3, target: &Tensor3) -> Result<f64> {
    released.ensure_same_shape(target, "released vs target")?;
    let (nb, nt, _) = released.shape();
    if nb == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    let total: f64 = (0..nb)
        .map(|b| {
            let diff = released
                .sequence(b)
                .iter()
                .zip(target.sequence(b))
                .map(|(z, y)| z - y);
            p_norm(diff, p) / nt as f64
        })
        .sum();
    Ok(total / nb as f64)
}

/// Derivative of [`norm_distortion`] with respect to `released`.
/// At a zero difference the subgradient 0 is used.
pub fn norm_distortion_grad(p: f64, released: &Tensor3, target: &Tensor3) -> Result<Tensor3> {
    released.ensure_same_shape(target, "released vs target")?;
    let (nb, nt, nf) = released.shape();
    let scale = 1.0 / (nb * nt) as f64;
    let mut grad = Tensor3::zeros(nb, nt, nf);
    let len = nt * nf;
    for b in 0..nb {
        let diff: Vec<f64> = released
            .sequence(b)
            .iter()
            .zip(target.sequence(b))
            .map(|(z, y)| z - y)
            .collect();
        let norm = p_norm(diff.iter().copied(), p);
        if norm == 0.0 {
            continue;
        }
        let out = &mut grad.data_mut()[b * len..(b + 1) * len];
        for (g, d) in out.iter_mut().zip(&diff) {
            *g = scale
                * if p == 1.0 {
                    d.signum() * (*d != 0.0) as u8 as f64
                } else {
                    d.signum() * (d.abs() / norm).powf(p - 1.0)
                };
        }
    }
    Ok(grad)
}

/// Distortion of a released batch. `utility_loss` must be present exactly
/// for the composite measure.
pub fn compute_distortion(
    spec: &DistortionSpec,
    released: &Tensor3,
    target: &Tensor3,
    utility_loss: Option<f64>,
) -> Result<f64> {
    spec.validate()?;
    let norm = norm_distortion(spec.norm_order(), released, target)?;
    match (spec.needs_utility(), utility_loss) {
        (true, Some(u)) => Ok(u + norm),
        (true, None) => Err(Error::Config(
            "composite distortion needs the utility network's loss".into(),
        )),
        (false, Some(_)) => Err(Error::Config(
            "utility loss given for a distortion without a utility term".into(),
        )),
        (false, None) => Ok(norm),
    }
}
