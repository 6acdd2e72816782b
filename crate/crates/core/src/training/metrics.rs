use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;
use crate::error::{Error, Result};

/// Accuracy and one-vs-rest per-class scores derived from a confusion
/// matrix whose rows are gold labels and columns are predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: [[usize; 3]; 3],
    pub total: usize,
    pub accuracy: f64,
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..3).map(|c| confusion[c][c]).sum();
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        let mut f1 = [0.0; 3];
        for c in 0..3 {
            let tp = confusion[c][c];
            let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
            let gold: usize = confusion[c].iter().sum();
            precision[c] = ratio(tp, predicted);
            recall[c] = ratio(tp, gold);
            let (p, r) = (precision[c], recall[c]);
            f1[c] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        }
        MetricsReport {
            confusion,
            total,
            accuracy: ratio(trace, total),
            precision,
            recall,
            f1,
            macro_f1: f1.iter().sum::<f64>() / 3.0,
        }
    }

    pub fn from_pairs(gold: &[Polarity], predicted: &[Polarity]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::shape(
                "MetricsReport::from_pairs",
                format!("{} gold labels vs {} predictions", gold.len(), predicted.len()),
            ));
        }
        let mut confusion = [[0usize; 3]; 3];
        for (g, p) in gold.iter().zip(predicted) {
            confusion[g.index()][p.index()] += 1;
        }
        Ok(MetricsReport::from_confusion(confusion))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::*;

    #[test]
    fn perfect_predictions() {
        let gold = [Positive, Neutral, Negative, Negative];
        let m = MetricsReport::from_pairs(&gold, &gold).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn constant_prediction_on_balanced_data() {
        let gold = [Positive, Neutral, Negative, Positive, Neutral, Negative];
        let m = MetricsReport::from_pairs(&gold, &[Neutral; 6]).unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.f1[1] - 0.5).abs() < 1e-15);
        assert_eq!((m.f1[0], m.f1[2]), (0.0, 0.0));
        assert!((m.macro_f1 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn margins_match_label_counts() {
        let gold = [Positive, Positive, Neutral, Negative, Negative, Negative];
        let pred = [Positive, Negative, Negative, Negative, Neutral, Negative];
        let m = MetricsReport::from_pairs(&gold, &pred).unwrap();
        let rows: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<usize> = (0..3).map(|c| m.confusion.iter().map(|r| r[c]).sum()).collect();
        assert_eq!(rows, vec![2, 1, 3]);
        assert_eq!(cols, vec![1, 1, 4]);
        assert_eq!(m.total, 6);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let m = MetricsReport::from_pairs(&[], &[]).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (0.0, 0.0));
        assert!(MetricsReport::from_pairs(&[Positive], &[]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = MetricsReport::from_pairs(&[Positive, Negative], &[Positive, Neutral]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&s).unwrap(), m);
    }
}
