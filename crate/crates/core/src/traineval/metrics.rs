use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Fraction of rows whose label ranks among the `k` highest logits. A class
/// outranks the label if its logit is larger, or equal with a lower index.
pub fn topk_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for {b} rows", labels.len())));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={n}")));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.data().chunks(n).zip(labels) {
        if label >= n {
            return Err(Error::LabelOutOfRange { label, n_classes: n });
        }
        let v = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &x)| x > v || (x == v && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / b as f64)
}

/// Centred moving average; windows are truncated at the ends.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidConfig(format!("window {window} must be odd and >= 1")));
    }
    let half = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Arithmetic mean and sample standard deviation.
pub fn aggregate_mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Fraction in `[0, 1]` as a two-decimal percentage.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let n = rows[0].len();
        Tensor::from_vec(&[rows.len(), n], rows.concat()).unwrap()
    }

    #[test]
    fn one_hot_is_perfect() {
        let l = logits(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(topk_accuracy(&l, &[0, 2], 1).unwrap(), 1.0);
    }

    #[test]
    fn hand_ranked_batch() {
        // row 0: label 2 ranks 1st; row 1: label 0 ranks 3rd;
        // row 2: label 1 ties class 0 and loses the tie, rank 2nd;
        // row 3: label 3 ranks 4th.
        let l = logits(&[
            &[0.1, 0.2, 0.9, 0.3],
            &[0.2, 0.5, 0.4, 0.1],
            &[0.7, 0.7, 0.1, 0.2],
            &[0.4, 0.3, 0.2, 0.1],
        ]);
        let y = [2, 0, 1, 3];
        assert_eq!(topk_accuracy(&l, &y, 1).unwrap(), 0.25);
        assert_eq!(topk_accuracy(&l, &y, 2).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&l, &y, 3).unwrap(), 0.75);
        assert_eq!(topk_accuracy(&l, &y, 4).unwrap(), 1.0);
        assert!(topk_accuracy(&l, &y, 5).is_err());
        assert!(matches!(
            topk_accuracy(&l, &[0, 0, 0, 4], 1),
            Err(Error::LabelOutOfRange { label: 4, n_classes: 4 })
        ));
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[0.0, 0.0, 5.0, 0.0, 0.0], 5).unwrap()[2], 1.0);
        assert_eq!(moving_average(&[3.0; 7], 5).unwrap(), vec![3.0; 7]);
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            moving_average(&s, 5).unwrap(),
            vec![2.0, 2.5, 3.0, 4.0, 4.5, 5.0]
        );
        assert!(matches!(moving_average(&[], 5), Err(Error::EmptySeries)));
        assert!(moving_average(&s, 4).is_err());
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
    }

    #[test]
    fn mean_std_examples() {
        let (m, s) = aggregate_mean_std(&[15.13, 15.38, 15.63]).unwrap();
        assert!((m - 15.38).abs() < 1e-12 && (s - 0.25).abs() < 1e-12);
        assert_eq!(format_mean_std(m, s), "15.38 ± 0.25");
        assert_eq!(format_mean_std(1.39, 0.18), "1.39 ± 0.18");
        assert_eq!(aggregate_mean_std(&[2.5, 2.5, 2.5]).unwrap(), (2.5, 0.0));
        assert!(matches!(
            aggregate_mean_std(&[1.0]),
            Err(Error::TooFewValues { needed: 2, got: 1 })
        ));
        assert_eq!(format_percent(0.15384), "15.38");
    }
}
