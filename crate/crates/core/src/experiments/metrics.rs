use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Energy-normalized squared error `Σ‖z − y‖² / Σ‖y‖²`.
pub fn normalized_error(released: &Tensor3, target: &Tensor3) -> Result<f64> {
    released.ensure_same_shape(target, "released vs target")?;
    let energy: f64 = target.data().iter().map(|y| y * y).sum();
    if energy == 0.0 {
        return Err(Error::Config(
            "normalized error is undefined for an all-zero target".into(),
        ));
    }
    let err: f64 = released
        .data()
        .iter()
        .zip(target.data())
        .map(|(z, y)| (z - y) * (z - y))
        .sum();
    Ok(err / energy)
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("balanced accuracy of no samples".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes || p >= num_classes {
            return Err(Error::Shape(format!(
                "class index out of range for {num_classes} classes"
            )));
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let (sum, present) = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &n)| n > 0)
        .fold((0.0, 0usize), |(s, k), (&h, &n)| {
            (s + h as f64 / n as f64, k + 1)
        });
    Ok(sum / present as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(
            "spearman needs two equally long series of length >= 2".into(),
        ));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalized_error_examples() {
        let y = Tensor3::from_fn(2, 3, 1, |b, t, _| (b + t + 1) as f64);
        assert_eq!(normalized_error(&y, &y).unwrap(), 0.0);
        assert_eq!(normalized_error(&Tensor3::zeros(2, 3, 1), &y).unwrap(), 1.0);
        let y = Tensor3::from_fn(2, 2, 1, |_, _, _| 2.0);
        let z = Tensor3::from_fn(2, 2, 1, |_, _, _| 3.0);
        assert_abs_diff_eq!(normalized_error(&z, &y).unwrap(), 0.25, epsilon = 1e-15);
        assert!(normalized_error(&z, &Tensor3::zeros(2, 2, 1)).is_err());
    }

    #[test]
    fn balanced_accuracy_examples() {
        let labels = [0, 1, 1, 0, 2];
        assert_eq!(balanced_accuracy(&labels, &labels, 3).unwrap(), 1.0);
        assert_eq!(
            balanced_accuracy(&[0; 6], &[0, 0, 1, 1, 1, 0], 2).unwrap(),
            0.5
        );
        // TPR 4/5, TNR 3/5
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 1, 0, 0, 0, 0, 1, 1];
        assert_abs_diff_eq!(
            balanced_accuracy(&preds, &labels, 2).unwrap(),
            0.7,
            epsilon = 1e-15
        );
        assert!(balanced_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn absent_classes_are_excluded() {
        assert_eq!(
            balanced_accuracy(&[0, 0, 1], &[0, 0, 0], 3).unwrap(),
            2.0 / 3.0
        );
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        // one adjacent swap among six: 1 − 6·2 / (6·35)
        let r = spearman(&[1., 2., 3., 4., 5., 6.], &[6., 5., 3., 4., 2., 1.]).unwrap();
        assert_abs_diff_eq!(r, -(1.0 - 12.0 / 210.0), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            rows in proptest::collection::vec((0usize..3, 0usize..3, 0.1f64..5.0, -2.0f64..2.0), 2..40),
            rot in 0usize..40,
        ) {
            let n = rows.len();
            let k = rot % n;
            let mut perm = rows.clone();
            perm.rotate_left(k);
            perm.reverse();
            let split = |r: &[(usize, usize, f64, f64)]| {
                let p: Vec<usize> = r.iter().map(|x| x.0).collect();
                let l: Vec<usize> = r.iter().map(|x| x.1).collect();
                let y = Tensor3::from_vec(r.len(), 1, 1, r.iter().map(|x| x.2).collect()).unwrap();
                let z = Tensor3::from_vec(r.len(), 1, 1, r.iter().map(|x| x.2 + x.3).collect()).unwrap();
                (p, l, y, z)
            };
            let (p1, l1, y1, z1) = split(&rows);
            let (p2, l2, y2, z2) = split(&perm);
            let a1 = balanced_accuracy(&p1, &l1, 3).unwrap();
            let a2 = balanced_accuracy(&p2, &l2, 3).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
            let e1 = normalized_error(&z1, &y1).unwrap();
            let e2 = normalized_error(&z2, &y2).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12 * e1.max(1.0));
        }
    }
}
