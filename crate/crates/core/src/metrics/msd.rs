//! Mean squared pairwise distance, the within-class diversity score.

use std::collections::BTreeMap;

use serde::Serialize;

use super::MetricsError;
use crate::parallel;

/// Mean of ‖xᵢ − xⱼ‖² over all unordered pairs i < j.
///
/// Uses Σ_{i<j} ‖xᵢ − xⱼ‖² = n · Σᵢ ‖xᵢ − x̄‖², which is O(n·d) and, because
/// the vectors are centered first, free of the cancellation the raw
/// sum-of-squares form suffers from.
pub fn pairwise_msd<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64, MetricsError> {
    let n = vectors.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    let d = vectors[0].as_ref().len();
    let mut mean = vec![0.0f64; d];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != d {
            return Err(MetricsError::DimMismatch { left: d, right: v.len() });
        }
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let scatter: f64 = vectors
        .iter()
        .map(|v| {
            v.as_ref()
                .iter()
                .zip(&mean)
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(n as f64 * scatter / pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsdReport {
    pub per_class: BTreeMap<String, f64>,
    pub mean_over_classes: f64,
    pub pair_counts: BTreeMap<String, u64>,
}

/// Per-class MSD and the unweighted mean across classes.
///
/// Classes are evaluated in parallel; the mean is accumulated in key order.
pub fn msd_report<V>(per_class: &BTreeMap<String, Vec<V>>) -> Result<MsdReport, MetricsError>
where
    V: AsRef<[f64]> + Sync,
{
    if per_class.is_empty() {
        return Err(MetricsError::NoClasses);
    }
    let entries: Vec<(&String, &Vec<V>)> = per_class.iter().collect();
    let values = parallel::try_map(&entries, |(name, vectors)| {
        pairwise_msd(vectors).map_err(|e| match e {
            MetricsError::TooFewSamples { got, .. } => MetricsError::ClassTooSmall {
                class: (*name).clone(),
                got,
            },
            other => other,
        })
    })?;
    let mut report = MsdReport {
        per_class: BTreeMap::new(),
        mean_over_classes: 0.0,
        pair_counts: BTreeMap::new(),
    };
    for ((name, vectors), msd) in entries.iter().zip(&values) {
        let n = vectors.len() as u64;
        report.per_class.insert((*name).clone(), *msd);
        report.pair_counts.insert((*name).clone(), n * (n - 1) / 2);
    }
    report.mean_over_classes = values.iter().sum::<f64>() / values.len() as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(pairwise_msd(&vec![vec![1.0, 2.0]; 4]).unwrap(), 0.0);
        assert_eq!(pairwise_msd(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(), 2.0);
        let v = pairwise_msd(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        assert!((v - 14.0 / 3.0).abs() < 1e-9);
        assert!(matches!(
            pairwise_msd(&[vec![0.0]]),
            Err(MetricsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn report_means() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        m.insert("b".to_string(), vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let r = msd_report(&m).unwrap();
        assert_eq!(r.per_class["a"], 2.0);
        assert_eq!(r.per_class["b"], 4.0);
        assert_eq!(r.mean_over_classes, 3.0);
        assert_eq!(r.pair_counts["a"], 1);

        m.remove("b");
        assert_eq!(msd_report(&m).unwrap().mean_over_classes, 2.0);

        m.insert("tiny".to_string(), vec![vec![1.0, 1.0]]);
        match msd_report(&m) {
            Err(MetricsError::ClassTooSmall { class, got: 1 }) => assert_eq!(class, "tiny"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
