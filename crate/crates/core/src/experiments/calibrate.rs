use crate::error::{Error, Result};

use super::data::{si_symbol, DatasetBatch, SynthConfig};
use super::metrics::balanced_accuracy;

/// Likelihood-ratio lookup classifier from SI symbol to private label.
///
/// For each symbol it predicts the class with the largest `P(s | x)`,
/// which is the rule maximizing balanced accuracy. Symbols unseen in
/// training map to class 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SiLookup {
    pub table: Vec<usize>,
}

impl SiLookup {
    pub fn fit(data: &DatasetBatch) -> Result<Self> {
        let s = data
            .s
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no side information".into()))?;
        let (nt, k) = (data.steps(), data.num_private);
        let symbols = s.features();
        let mut counts = vec![vec![0usize; k]; symbols];
        let mut totals = vec![0usize; k];
        for b in 0..data.len() {
            let sym = si_symbol(s, b);
            for &x in &data.x[b * nt..(b + 1) * nt] {
                counts[sym][x] += 1;
                totals[x] += 1;
            }
        }
        let table = counts
            .iter()
            .map(|row| {
                let lik = |x: usize| {
                    if totals[x] == 0 {
                        0.0
                    } else {
                        row[x] as f64 / totals[x] as f64
                    }
                };
                (0..k).fold(0, |best, x| if lik(x) > lik(best) { x } else { best })
            })
            .collect();
        Ok(Self { table })
    }

    pub fn predict(&self, data: &DatasetBatch) -> Result<Vec<usize>> {
        let s = data
            .s
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no side information".into()))?;
        let nt = data.steps();
        Ok((0..data.len())
            .flat_map(|b| std::iter::repeat_n(self.table[si_symbol(s, b)], nt))
            .collect())
    }
}

/// Balanced accuracy of the SI-only lookup classifier, fit on `train`
/// and scored on `test`.
pub fn si_only_accuracy(train: &DatasetBatch, test: &DatasetBatch) -> Result<f64> {
    let model = SiLookup::fit(train)?;
    balanced_accuracy(&model.predict(test)?, &test.x, test.num_private)
}

/// SI-only accuracy of a generator configuration, on an 80/20 split.
pub fn si_accuracy_for(cfg: &SynthConfig) -> Result<f64> {
    let (train, test) = cfg.generate()?.split(0.8)?;
    si_only_accuracy(&train, &test)
}

/// Bisects `si_correlation` until the SI-only accuracy of `cfg` is within
/// `tolerance` of `target`. All other random draws are shared across
/// candidate correlations, so the accuracy is monotone in the search
/// variable up to sampling ties.
pub fn calibrate_si_correlation(cfg: &SynthConfig, target: f64, tolerance: f64) -> Result<f64> {
    let at = |rho: f64| {
        si_accuracy_for(&SynthConfig {
            si_correlation: rho,
            ..cfg.clone()
        })
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let top = at(hi)?;
    if top < target - tolerance {
        return Err(Error::Config(format!(
            "SI-only accuracy reaches only {top:.4} at full correlation; target {target} is unattainable"
        )));
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let acc = at(mid)?;
        let gap = (acc - target).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if gap <= tolerance / 4.0 {
            break;
        }
        if acc < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > tolerance {
        return Err(Error::Config(format!(
            "calibration missed the target by {:.4}",
            best.0
        )));
    }
    Ok(best.1)
}
