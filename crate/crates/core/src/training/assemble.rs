use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Which streams the releaser observes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedMode {
    #[default]
    YOnly,
    /// Y followed by the private label as one scalar feature.
    ConcatXy,
}

/// Releaser input `W`: the selected streams followed by the noise `U`.
///
/// Side information is deliberately not accepted here; it only ever reaches
/// the adversary and attacker through [`attach_side_information`].
pub fn assemble_observed(
    y: &Tensor3,
    x: &[usize],
    noise: Option<&Tensor3>,
    mode: ObservedMode,
) -> Result<Tensor3> {
    let (nb, nt, _) = y.shape();
    if x.len() != nb * nt {
        return Err(Error::Shape(format!(
            "{} private labels for {nb}x{nt} samples",
            x.len()
        )));
    }
    let xs;
    let mut parts = vec![y];
    if mode == ObservedMode::ConcatXy {
        xs = Tensor3::from_vec(nb, nt, 1, x.iter().map(|&v| v as f64).collect())?;
        parts.push(&xs);
    }
    if let Some(u) = noise.filter(|u| u.features() > 0) {
        parts.push(u);
    }
    Tensor3::concat_features(&parts)
}

/// Appends the per-sample side information `B × 1 × d_s`, broadcast over
/// time, to a `B × T × d` batch.
pub fn attach_side_information(z: &Tensor3, si: Option<&Tensor3>) -> Result<Tensor3> {
    let Some(s) = si else {
        return Ok(z.clone());
    };
    let (nb, nt, nz) = z.shape();
    if s.batch() != nb || s.steps() != 1 {
        return Err(Error::Shape(format!(
            "side information {:?} does not match a batch of {nb}",
            s.shape()
        )));
    }
    let ns = s.features();
    Ok(Tensor3::from_fn(nb, nt, nz + ns, |b, t, j| {
        if j < nz {
            z.get(b, t, j)
        } else {
            s.get(b, 0, j - nz)
        }
    }))
}
