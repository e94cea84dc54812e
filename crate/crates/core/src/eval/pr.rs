use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall at every distinct distance, thresholds increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub selected_threshold: f64,
    pub selected_f1: f64,
}

/// F1 from confusion counts, 0 when there are no true positives.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub(crate) fn check_labels(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Label(format!("label {l} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Sweeps "interact iff `D ≥ τ`" over every distinct distance and selects
/// the `τ` with the highest F1; ties go to the larger `τ`.
pub fn pr_curve(distances: &[f64], labels: &[u8]) -> Result<PrCurve> {
    check_labels(distances, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Label(
            "precision-recall needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&i, &j| distances[j].total_cmp(&distances[i]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let tau = distances[order[i]];
        while i < order.len() && distances[order[i]] == tau {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fn_ = positives - tp;
        points.push(PrPoint {
            threshold: tau,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
            f1: f1_from_counts(tp, fp, fn_),
        });
    }
    points.reverse();

    let best = points
        .iter()
        .rev()
        .fold(None::<&PrPoint>, |best, p| match best {
            Some(b) if b.f1 >= p.f1 => Some(b),
            _ => Some(p),
        })
        .expect("at least one point");
    Ok(PrCurve {
        selected_threshold: best.threshold,
        selected_f1: best.f1,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_gives_perfect_f1() {
        let c = pr_curve(&[0.1, 0.2, 0.9, 1.3], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.selected_f1, 1.0);
        assert_eq!(c.selected_threshold, 0.9);
        assert_eq!(c.points.len(), 4);
        assert!(c.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
    }

    #[test]
    fn tied_distances_form_one_point() {
        let c = pr_curve(&[0.5, 0.5, 0.5], &[0, 1, 1]).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].recall, 1.0);
    }

    #[test]
    fn f1_ties_prefer_larger_threshold() {
        // τ=0.3 → tp2 fp2 (f1 2/3); τ=0.7 → tp1 fp0 fn1 (f1 2/3)
        let c = pr_curve(&[0.3, 0.3, 0.7, 0.4], &[0, 1, 1, 0]).unwrap();
        let f1_low = c.points[0].f1;
        assert!((f1_low - c.selected_f1).abs() < 1e-15);
        assert_eq!(c.selected_threshold, 0.7);
    }

    #[test]
    fn single_class_errors() {
        assert!(pr_curve(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(pr_curve(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(pr_curve(&[0.1], &[0, 1]).is_err());
    }
}
