use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense batch × time × feature array, row-major with the feature axis innermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    batch: usize,
    steps: usize,
    features: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        Self {
            batch,
            steps,
            features,
            data: vec![0.0; batch * steps * features],
        }
    }

    pub fn from_vec(batch: usize, steps: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * steps * features {
            return Err(Error::Shape(format!(
                "expected {}x{}x{} = {} values, got {}",
                batch,
                steps,
                features,
                batch * steps * features,
                data.len()
            )));
        }
        Ok(Self {
            batch,
            steps,
            features,
            data,
        })
    }

    pub fn from_fn(
        batch: usize,
        steps: usize,
        features: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * steps * features);
        for b in 0..batch {
            for t in 0..steps {
                for j in 0..features {
                    data.push(f(b, t, j));
                }
            }
        }
        Self {
            batch,
            steps,
            features,
            data,
        }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn features(&self) -> usize {
        self.features
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.steps, self.features)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, b: usize, t: usize) -> usize {
        (b * self.steps + t) * self.features
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, j: usize) -> f64 {
        self.data[self.offset(b, t) + j]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, j: usize, v: f64) {
        let o = self.offset(b, t) + j;
        self.data[o] = v;
    }

    /// Feature vector at `(b, t)`.
    #[inline]
    pub fn row(&self, b: usize, t: usize) -> &[f64] {
        let o = self.offset(b, t);
        &self.data[o..o + self.features]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let o = self.offset(b, t);
        let f = self.features;
        &mut self.data[o..o + f]
    }

    /// All time steps of one batch element, `steps × features` values.
    pub fn sequence(&self, b: usize) -> &[f64] {
        let o = self.offset(b, 0);
        &self.data[o..o + self.steps * self.features]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Concatenates tensors along the feature axis.
    pub fn concat_features(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
        let (batch, steps) = (first.batch, first.steps);
        for p in parts {
            if p.batch != batch || p.steps != steps {
                return Err(Error::Shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let features: usize = parts.iter().map(|p| p.features).sum();
        let mut data = Vec::with_capacity(batch * steps * features);
        for b in 0..batch {
            for t in 0..steps {
                for p in parts {
                    data.extend_from_slice(p.row(b, t));
                }
            }
        }
        Ok(Tensor3 {
            batch,
            steps,
            features,
            data,
        })
    }

    /// Copies features `[start, start + len)` into a new tensor.
    pub fn slice_features(&self, start: usize, len: usize) -> Result<Tensor3> {
        if start + len > self.features {
            return Err(Error::Shape(format!(
                "feature slice {start}..{} out of range for {} features",
                start + len,
                self.features
            )));
        }
        Ok(Tensor3::from_fn(self.batch, self.steps, len, |b, t, j| {
            self.get(b, t, start + j)
        }))
    }

    /// Gathers batch elements by index.
    pub fn select(&self, indices: &[usize]) -> Tensor3 {
        let stride = self.steps * self.features;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Tensor3 {
            batch: indices.len(),
            steps: self.steps,
            features: self.features,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.ensure_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
