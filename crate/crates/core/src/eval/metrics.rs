use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EvalError, GroupAssignment};
use crate::labels::EmotionLabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub precision_s: f64,
    pub recall_s: f64,
    pub f_s: f64,
    /// |Y ∩ Ŷ|
    pub matched_groups: usize,
    /// |Ŷ|
    pub predicted_groups: usize,
    /// |Y|
    pub truth_groups: usize,
}

impl SetMetrics {
    pub const ZERO: SetMetrics = SetMetrics {
        precision_s: 0.0,
        recall_s: 0.0,
        f_s: 0.0,
        matched_groups: 0,
        predicted_groups: 0,
        truth_groups: 0,
    };
}

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn harmonic_f(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Set-level precision/recall over semantic group ids.
///
/// Ground-truth and predicted labels are first mapped to their group ids;
/// duplicates and synonyms collapse. An empty prediction scores zero.
pub fn set_metrics(
    gt: &EmotionLabelSet,
    pred: &EmotionLabelSet,
    assignment: &GroupAssignment,
) -> Result<SetMetrics, EvalError> {
    let ids = |labels: &EmotionLabelSet| -> Result<BTreeSet<usize>, EvalError> {
        labels
            .iter()
            .map(|l| {
                assignment
                    .group_of(l)
                    .ok_or_else(|| EvalError::Coverage { label: l.to_string() })
            })
            .collect()
    };
    let truth = ids(gt)?;
    let predicted = ids(pred)?;
    let matched = truth.intersection(&predicted).count();
    let precision_s = ratio(matched, predicted.len());
    let recall_s = ratio(matched, truth.len());
    Ok(SetMetrics {
        precision_s,
        recall_s,
        f_s: harmonic_f(precision_s, recall_s),
        matched_groups: matched,
        predicted_groups: predicted.len(),
        truth_groups: truth.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of per-sample metrics.
    #[default]
    Macro,
    /// Metrics from group counts pooled over samples.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean_precision_s: f64,
    pub mean_recall_s: f64,
    pub mean_f_s: f64,
    pub n_samples: usize,
    pub n_repeats: usize,
    pub invalid_prediction_count: usize,
}

/// Averages per-sample metrics within each repeat, then over repeats.
///
/// `per_repeat[r][s]` is `None` when repeat `r` produced no valid prediction
/// for sample `s`. Repeats without any valid sample are left out of the
/// final mean.
pub fn aggregate(per_repeat: &[Vec<Option<SetMetrics>>], averaging: Averaging) -> Result<AggregateMetrics, EvalError> {
    let mut repeat_means: Vec<(f64, f64, f64)> = Vec::new();
    let mut invalid = 0usize;
    for rep in per_repeat {
        let valid: Vec<&SetMetrics> = rep.iter().flatten().collect();
        invalid += rep.len() - valid.len();
        if valid.is_empty() {
            continue;
        }
        let n = valid.len() as f64;
        repeat_means.push(match averaging {
            Averaging::Macro => (
                valid.iter().map(|m| m.precision_s).sum::<f64>() / n,
                valid.iter().map(|m| m.recall_s).sum::<f64>() / n,
                valid.iter().map(|m| m.f_s).sum::<f64>() / n,
            ),
            Averaging::Micro => {
                let matched: usize = valid.iter().map(|m| m.matched_groups).sum();
                let p = ratio(matched, valid.iter().map(|m| m.predicted_groups).sum());
                let r = ratio(matched, valid.iter().map(|m| m.truth_groups).sum());
                (p, r, harmonic_f(p, r))
            }
        });
    }
    if repeat_means.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let k = repeat_means.len() as f64;
    Ok(AggregateMetrics {
        mean_precision_s: repeat_means.iter().map(|m| m.0).sum::<f64>() / k,
        mean_recall_s: repeat_means.iter().map(|m| m.1).sum::<f64>() / k,
        mean_f_s: repeat_means.iter().map(|m| m.2).sum::<f64>() / k,
        n_samples: per_repeat.iter().map(Vec::len).max().unwrap_or(0),
        n_repeats: per_repeat.len(),
        invalid_prediction_count: invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(groups: &[&[&str]]) -> GroupAssignment {
        GroupAssignment::from_groups(groups.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()).unwrap()
    }

    fn set(labels: &[&str]) -> EmotionLabelSet {
        EmotionLabelSet::from_terms(labels)
    }

    fn f(v: f64) -> SetMetrics {
        SetMetrics {
            f_s: v,
            precision_s: v,
            recall_s: v,
            ..SetMetrics::ZERO
        }
    }

    #[test]
    fn worked_case_three_of_four() {
        // groups 1..5 as labels g1..g5
        let a = assignment(&[&["g0"], &["g1"], &["g2"], &["g3"], &["g4"], &["g5"]]);
        let m = set_metrics(&set(&["g1", "g2", "g3"]), &set(&["g1", "g2", "g4", "g5"]), &a).unwrap();
        assert_eq!(m.precision_s, 0.5);
        assert!((m.recall_s - 0.6667).abs() < 1e-4);
        assert!((m.f_s - 0.5714).abs() < 1e-4);
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let a = assignment(&[&["angry", "furious"], &["happy"], &["sad"]]);
        let same = set_metrics(&set(&["angry", "happy"]), &set(&["furious", "happy"]), &a).unwrap();
        assert_eq!((same.precision_s, same.recall_s, same.f_s), (1.0, 1.0, 1.0));
        let disjoint = set_metrics(&set(&["angry"]), &set(&["sad", "happy"]), &a).unwrap();
        assert_eq!((disjoint.precision_s, disjoint.recall_s, disjoint.f_s), (0.0, 0.0, 0.0));
        let empty = set_metrics(&set(&["angry"]), &set(&[]), &a).unwrap();
        assert_eq!(empty, SetMetrics { truth_groups: 1, ..SetMetrics::ZERO });
    }

    #[test]
    fn uncovered_label_is_an_error() {
        let a = assignment(&[&["happy"]]);
        assert!(matches!(
            set_metrics(&set(&["happy"]), &set(&["joyful"]), &a),
            Err(EvalError::Coverage { label }) if label == "joyful"
        ));
    }

    #[test]
    fn aggregate_means() {
        let one = aggregate(&[vec![Some(f(1.0)), Some(f(0.5)), Some(f(0.0))]], Averaging::Macro).unwrap();
        assert_eq!(one.mean_f_s, 0.5);
        assert_eq!(one.n_repeats, 1);

        let two = aggregate(&[vec![Some(f(0.60))], vec![Some(f(0.62))]], Averaging::Macro).unwrap();
        assert!((two.mean_f_s - 0.61).abs() < 1e-12);

        let with_invalid = aggregate(&[vec![Some(f(1.0)), None]], Averaging::Macro).unwrap();
        assert_eq!(with_invalid.mean_f_s, 1.0);
        assert_eq!(with_invalid.invalid_prediction_count, 1);
        assert_eq!(with_invalid.n_samples, 2);

        assert!(matches!(aggregate(&[vec![None, None]], Averaging::Macro), Err(EvalError::EmptyEvaluation)));
        assert!(matches!(aggregate(&[], Averaging::Macro), Err(EvalError::EmptyEvaluation)));
    }

    #[test]
    fn aggregate_counts_full_protocol_shape() {
        let reps: Vec<Vec<Option<SetMetrics>>> = (0..5).map(|_| vec![Some(f(0.5)); 332]).collect();
        let a = aggregate(&reps, Averaging::Macro).unwrap();
        assert_eq!((a.n_samples, a.n_repeats), (332, 5));
    }

    #[test]
    fn micro_pools_counts() {
        let a = SetMetrics {
            matched_groups: 1,
            predicted_groups: 1,
            truth_groups: 2,
            ..SetMetrics::ZERO
        };
        let b = SetMetrics {
            matched_groups: 0,
            predicted_groups: 3,
            truth_groups: 2,
            ..SetMetrics::ZERO
        };
        let m = aggregate(&[vec![Some(a), Some(b)]], Averaging::Micro).unwrap();
        assert_eq!(m.mean_precision_s, 0.25);
        assert_eq!(m.mean_recall_s, 0.25);
    }
}
