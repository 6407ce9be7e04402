//! Rényi entropy, Arimoto conditional α-entropy and Arimoto α-mutual
//! information on finite alphabets, plus the batch estimator of the
//! sequence conditional entropy used by the releaser loss.
//!
//! All quantities are in nats. Order-α norms are evaluated in log space,
//! `log ‖p‖_α = (1/α) · logsumexp(α · log p)`, with probabilities below
//! [`ZERO_PROB`] masked out. The order α = 1 takes the Shannon branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Probabilities below this value count as exact zeros.
pub const ZERO_PROB: f64 = 1e-15;

/// Allowed deviation of a distribution's total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Order of an α-measure. Any finite positive value; `1.0` selects the
/// Shannon branch.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const SHANNON: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidAlpha(value))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_shannon(self) -> bool {
        self.0 == 1.0
    }

    /// The prefactor `α / (1 − α)`; undefined on the Shannon branch.
    #[inline]
    pub fn prefactor(self) -> f64 {
        self.0 / (1.0 - self.0)
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

impl std::fmt::Display for Alpha {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_probs(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what} is empty")));
    }
    let mut total = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "{what}: entry {i} is {p}"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what}: total mass {total} is not 1"
        )));
    }
    Ok(())
}

/// Probability mass function over a finite alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs, "pmf")?;
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pmf::new(v)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Vec<f64> {
        p.probs
    }
}

/// Dense joint distribution over a product of finite alphabets.
///
/// Entries are stored row-major: the last axis varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    shape: Vec<usize>,
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl JointPmf {
    pub fn new(shape: Vec<usize>, labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidDistribution(format!(
                "invalid joint shape {shape:?}"
            )));
        }
        if labels.len() != shape.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} labels for {} axes",
                labels.len(),
                shape.len()
            )));
        }
        let size: usize = shape.iter().product();
        if probs.len() != size {
            return Err(Error::InvalidDistribution(format!(
                "shape {shape:?} needs {size} entries, got {}",
                probs.len()
            )));
        }
        check_probs(&probs, "joint")?;
        Ok(Self {
            shape,
            labels,
            probs,
        })
    }

    /// Two-axis joint `p(x, z)` from a matrix with rows indexed by x.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let nx = rows.len();
        let nz = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nz) {
            return Err(Error::InvalidDistribution("ragged joint matrix".into()));
        }
        Self::new(
            vec![nx, nz],
            vec!["X".into(), "Z".into()],
            rows.iter().flatten().copied().collect(),
        )
    }

    /// Product distribution of independent marginals, one axis per factor.
    pub fn independent(factors: &[(&str, &Pmf)]) -> Result<Self> {
        let shape: Vec<usize> = factors.iter().map(|(_, p)| p.len()).collect();
        let labels = factors.iter().map(|(l, _)| l.to_string()).collect();
        let size: usize = shape.iter().product();
        let mut probs = vec![1.0; size];
        for (flat, value) in probs.iter_mut().enumerate() {
            let idx = unravel(flat, &shape);
            for (axis, (_, p)) in factors.iter().enumerate() {
                *value *= p.probs()[idx[axis]];
            }
        }
        Self::new(shape, labels, probs)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Position of the axis named `label`, if any.
    pub fn axis(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn axis_or(&self, label: &str, fallback: usize) -> Result<usize> {
        match self.axis(label) {
            Some(a) => Ok(a),
            None if fallback < self.ndim() => Ok(fallback),
            None => Err(Error::Shape(format!(
                "joint with labels {:?} has no axis {label}",
                self.labels
            ))),
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.probs[ravel(index, &self.shape)]
    }

    /// Sums out every axis not listed in `keep`; the result's axes follow
    /// the order given in `keep`.
    pub fn marginal(&self, keep: &[usize]) -> Result<JointPmf> {
        let probs = marginal_table(&self.probs, &self.shape, keep)?;
        let shape = keep.iter().map(|&a| self.shape[a]).collect();
        let labels = keep.iter().map(|&a| self.labels[a].clone()).collect();
        // marginalization only reorders additions, so the mass check stays valid
        Ok(JointPmf {
            shape,
            labels,
            probs,
        })
    }

    /// Marginal distribution of a single axis.
    pub fn marginal_pmf(&self, axis: usize) -> Result<Pmf> {
        let probs = marginal_table(&self.probs, &self.shape, &[axis])?;
        Ok(Pmf { probs })
    }
}

pub(crate) fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for axis in (0..shape.len()).rev() {
        idx[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
    idx
}

pub(crate) fn ravel(index: &[usize], shape: &[usize]) -> usize {
    index.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

fn marginal_table(probs: &[f64], shape: &[usize], keep: &[usize]) -> Result<Vec<f64>> {
    for (i, &a) in keep.iter().enumerate() {
        if a >= shape.len() || keep[..i].contains(&a) {
            return Err(Error::Shape(format!(
                "invalid axis selection {keep:?} for {} axes",
                shape.len()
            )));
        }
    }
    let out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
    let mut out = vec![0.0; out_shape.iter().product()];
    let mut sub = vec![0; keep.len()];
    for (flat, &p) in probs.iter().enumerate() {
        let idx = unravel(flat, shape);
        for (s, &a) in sub.iter_mut().zip(keep) {
            *s = idx[a];
        }
        out[ravel(&sub, &out_shape)] += p;
    }
    Ok(out)
}

/// `log Σ exp(v_i)` over the finite entries of `v`; `-inf` when none are.
pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values
        .into_iter()
        .filter(|v| *v > f64::NEG_INFINITY)
        .collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log ‖v‖_α` of a non-negative vector (need not be normalized).
pub fn log_alpha_norm(v: &[f64], alpha: Alpha) -> f64 {
    let a = alpha.value();
    log_sum_exp(v.iter().filter(|&&p| p >= ZERO_PROB).map(|&p| a * p.ln())) / a
}

/// `−Σ p log p` with the `0 · log 0 = 0` convention.
fn shannon(v: &[f64]) -> f64 {
    v.iter()
        .filter(|&&p| p >= ZERO_PROB)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Rényi entropy `H_α(p)` in nats.
pub fn renyi_entropy(p: &Pmf, alpha: Alpha) -> f64 {
    if alpha.is_shannon() {
        shannon(p.probs())
    } else {
        alpha.prefactor() * log_alpha_norm(p.probs(), alpha)
    }
}

/// Arimoto conditional entropy of axis `target` given the axes in `given`.
///
/// Uses `p(g) ‖p(·|g)‖_α = ‖p(·, g)‖_α`, so unnormalized slices of the joint
/// feed the norm directly and slices with zero mass drop out.
pub fn arimoto_conditional_entropy_axes(
    joint: &JointPmf,
    target: usize,
    given: &[usize],
    alpha: Alpha,
) -> Result<f64> {
    let mut keep = Vec::with_capacity(given.len() + 1);
    keep.extend_from_slice(given);
    keep.push(target);
    let table = marginal_table(joint.probs(), joint.shape(), &keep)?;
    let nx = joint.shape()[target];
    let slices = table.chunks(nx);
    if alpha.is_shannon() {
        let h = slices
            .map(|q| {
                let mass: f64 = q.iter().sum();
                if mass < ZERO_PROB {
                    return 0.0;
                }
                q.iter()
                    .filter(|&&p| p >= ZERO_PROB)
                    .map(|&p| -p * (p / mass).ln())
                    .sum::<f64>()
            })
            .sum();
        Ok(h)
    } else {
        let log_total = log_sum_exp(slices.map(|q| log_alpha_norm(q, alpha)));
        Ok(alpha.prefactor() * log_total)
    }
}

/// `H^A_α(X|Z)` for a two-axis joint over (X, Z).
pub fn arimoto_conditional_entropy(joint: &JointPmf, alpha: Alpha) -> Result<f64> {
    if joint.ndim() != 2 {
        return Err(Error::Shape(format!(
            "expected a joint over (X, Z), got {} axes",
            joint.ndim()
        )));
    }
    let x = joint.axis_or("X", 0)?;
    let z = joint.axis_or("Z", 1 - x)?;
    arimoto_conditional_entropy_axes(joint, x, &[z], alpha)
}

/// Arimoto α-mutual information `I^A_α(X;Z) = H_α(X) − H^A_α(X|Z)`.
pub fn alpha_mutual_information(joint: &JointPmf, alpha: Alpha) -> Result<f64> {
    let h_cond = arimoto_conditional_entropy(joint, alpha)?;
    let x = joint.axis_or("X", 0)?;
    let h = renyi_entropy(&joint.marginal_pmf(x)?, alpha);
    Ok((h - h_cond).max(0.0))
}

/// `I^A_α(X;Z|S) = H^A_α(X|S) − H^A_α(X|Z,S)` for a joint over (X, Z, S).
pub fn conditional_alpha_mi_given_s(joint: &JointPmf, alpha: Alpha) -> Result<f64> {
    if joint.ndim() != 3 {
        return Err(Error::Shape(format!(
            "expected a joint over (X, Z, S), got {} axes",
            joint.ndim()
        )));
    }
    let x = joint.axis_or("X", 0)?;
    let z = joint.axis_or("Z", 1)?;
    let s = joint.axis_or("S", 2)?;
    let given_s = arimoto_conditional_entropy_axes(joint, x, &[s], alpha)?;
    let given_zs = arimoto_conditional_entropy_axes(joint, x, &[z, s], alpha)?;
    Ok(given_s - given_zs)
}

/// Per-step posteriors `p(X̂_t | z^t, s)` for a batch, shape B × T × |X|.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorBatch {
    probs: Tensor3,
}

impl PosteriorBatch {
    pub fn new(probs: Tensor3) -> Result<Self> {
        if probs.batch() == 0 || probs.steps() == 0 {
            return Err(Error::Empty("posterior batch has no entries".into()));
        }
        for b in 0..probs.batch() {
            for t in 0..probs.steps() {
                check_probs(probs.row(b, t), &format!("posterior ({b}, {t})"))?;
            }
        }
        Ok(Self { probs })
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.probs
    }

    pub fn batch(&self) -> usize {
        self.probs.batch()
    }

    pub fn steps(&self) -> usize {
        self.probs.steps()
    }

    pub fn classes(&self) -> usize {
        self.probs.features()
    }
}

/// Batch estimate of `(1/T) H^A_α(X̂^T | Z^T, S)`.
///
/// The sequence posterior factorizes over steps, so its α-norm is the
/// product of per-step norms and the expectation over `Z^T` becomes the
/// batch mean inside the logarithm.
pub fn batch_sequence_arimoto_entropy(posteriors: &PosteriorBatch, alpha: Alpha) -> f64 {
    sequence_entropy_impl(posteriors.tensor(), alpha, false).0
}

/// As [`batch_sequence_arimoto_entropy`], also returning the derivative with
/// respect to every posterior entry (masked entries get zero).
pub fn batch_sequence_arimoto_entropy_grad(
    posteriors: &PosteriorBatch,
    alpha: Alpha,
) -> (f64, Tensor3) {
    let (h, g) = sequence_entropy_impl(posteriors.tensor(), alpha, true);
    (h, g.expect("gradient requested"))
}

fn sequence_entropy_impl(p: &Tensor3, alpha: Alpha, with_grad: bool) -> (f64, Option<Tensor3>) {
    let (nb, nt, _) = p.shape();
    let inv_bt = 1.0 / (nb * nt) as f64;
    if alpha.is_shannon() {
        let mut h = 0.0;
        for b in 0..nb {
            for t in 0..nt {
                h += shannon(p.row(b, t));
            }
        }
        let grad = with_grad.then(|| {
            Tensor3::from_fn(nb, nt, p.features(), |b, t, j| {
                let v = p.get(b, t, j);
                if v >= ZERO_PROB {
                    -(v.ln() + 1.0) * inv_bt
                } else {
                    0.0
                }
            })
        });
        return (h * inv_bt, grad);
    }

    let a = alpha.value();
    let c = alpha.prefactor();
    let seq_log_norm: Vec<f64> = (0..nb)
        .map(|b| (0..nt).map(|t| log_alpha_norm(p.row(b, t), alpha)).sum())
        .collect();
    let log_mean = log_sum_exp(seq_log_norm.iter().copied()) - (nb as f64).ln();
    let h = c * log_mean / nt as f64;

    let grad = with_grad.then(|| {
        let log_total = log_mean + (nb as f64).ln();
        let mut g = Tensor3::zeros(nb, nt, p.features());
        for (b, &log_norm) in seq_log_norm.iter().enumerate() {
            let weight = (log_norm - log_total).exp();
            let scale = c * weight / nt as f64;
            for t in 0..nt {
                let row = p.row(b, t);
                // log Σ p^α for this step
                let log_power_sum = a * log_alpha_norm(row, alpha);
                for (j, &v) in row.iter().enumerate() {
                    if v >= ZERO_PROB {
                        let d = ((a - 1.0) * v.ln() - log_power_sum).exp();
                        g.set(b, t, j, scale * d);
                    }
                }
            }
        }
        g
    });
    (h, grad)
}
