use ndarray::Array2;

use crate::error::{check_dim, Error, Result};

/// Mean relative error over a batch; targets with zero norm are skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Number of trajectories skipped for having a zero-norm target.
    pub excluded: usize,
}

/// `||pred - truth|| / ||truth||` over all entries, or `None` if `truth` vanishes.
pub(crate) fn relative_error(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let norm: f64 = truth.iter().map(|t| t * t).sum();
    if norm == 0.0 {
        return None;
    }
    let diff: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Some((diff / norm).sqrt())
}

fn mean_relative<'a>(pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> LossValue {
    let (mut sum, mut count, mut excluded) = (0.0, 0usize, 0usize);
    for (p, t) in pairs {
        match relative_error(p, t) {
            Some(e) => {
                sum += e;
                count += 1;
            }
            None => excluded += 1,
        }
    }
    LossValue { value: if count > 0 { sum / count as f64 } else { 0.0 }, excluded }
}

/// Mean over trajectories of the relative `L2(0, T)` stress error.
///
/// The `dt` weight of the discrete norm cancels in the ratio.
pub fn loss_accessible(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<LossValue> {
    check_dim(truth.len(), pred.len())?;
    for (p, t) in pred.iter().zip(truth) {
        check_dim(t.len(), p.len())?;
    }
    Ok(mean_relative(pred.iter().zip(truth).map(|(p, t)| (p.as_slice(), t.as_slice()))))
}

/// Stress term plus the mean relative error of the hidden channels, all
/// channels of one trajectory measured together.
pub fn loss_inaccessible(
    pred_sigma: &[Vec<f64>],
    true_sigma: &[Vec<f64>],
    pred_hidden: &[Array2<f64>],
    true_hidden: Option<&[Array2<f64>]>,
) -> Result<LossValue> {
    let true_hidden =
        true_hidden.ok_or_else(|| Error::Unsupported("the inaccessible loss needs internal-variable data".into()))?;
    let stress = loss_accessible(pred_sigma, true_sigma)?;
    check_dim(true_hidden.len(), pred_hidden.len())?;
    for (p, t) in pred_hidden.iter().zip(true_hidden) {
        if p.dim() != t.dim() {
            return Err(Error::Dimension { expected: t.len(), got: p.len() });
        }
    }
    let hidden = mean_relative(pred_hidden.iter().zip(true_hidden).map(|(p, t)| {
        (p.as_slice().expect("standard layout"), t.as_slice().expect("standard layout"))
    }));
    Ok(LossValue { value: stress.value + hidden.value, excluded: stress.excluded + hidden.excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0, -2.0], vec![0.5, 0.5, 0.1]]
    }

    fn hid() -> Vec<Array2<f64>> {
        vec![Array2::from_elem((3, 2), 0.3), Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64)]
    }

    fn scaled(v: &[Vec<f64>], k: f64) -> Vec<Vec<f64>> {
        v.iter().map(|x| x.iter().map(|y| y * k).collect()).collect()
    }

    #[test]
    fn accessible_examples() {
        let s = sig();
        assert_eq!(loss_accessible(&s, &s).unwrap().value, 0.0);
        assert!((loss_accessible(&scaled(&s, 2.0), &s).unwrap().value - 1.0).abs() < 1e-15);
        assert!((loss_accessible(&scaled(&s, 0.0), &s).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_targets_are_counted_and_skipped() {
        let truth = vec![vec![0.0; 3], vec![1.0, 1.0, 1.0]];
        let pred = vec![vec![5.0; 3], vec![2.0, 2.0, 2.0]];
        let l = loss_accessible(&pred, &truth).unwrap();
        assert_eq!(l.excluded, 1);
        assert!((l.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inaccessible_examples() {
        let (s, h) = (sig(), hid());
        assert_eq!(loss_inaccessible(&s, &s, &h, Some(&h)).unwrap().value, 0.0);
        let zero: Vec<Array2<f64>> = h.iter().map(|a| Array2::zeros(a.dim())).collect();
        assert!((loss_inaccessible(&s, &s, &zero, Some(&h)).unwrap().value - 1.0).abs() < 1e-15);
        let h2: Vec<Array2<f64>> = h.iter().map(|a| a * 2.0).collect();
        let l = loss_inaccessible(&scaled(&s, 2.0), &s, &h2, Some(&h)).unwrap();
        assert!((l.value - 2.0).abs() < 1e-15);
        assert!(matches!(loss_inaccessible(&s, &s, &h, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn shape_mismatch() {
        let s = sig();
        assert!(loss_accessible(&s[..1], &s).is_err());
        assert!(loss_accessible(&[vec![1.0]], &s[..1]).is_err());
    }
}
