use serde::Serialize;

use super::Class;
use crate::error::{Error, Result};
use crate::rate::{harmonic, ratio};

/// Confusion-matrix metrics with damage as the positive class. A rate whose
/// denominator is zero is `None` (reported as NA), never 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
}

pub fn classification_metrics(predictions: &[Class], labels: &[Class]) -> Result<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Class::Damage, Class::Damage) => tp += 1,
            (Class::Damage, Class::Background) => fp += 1,
            (Class::Background, Class::Background) => tn += 1,
            (Class::Background, Class::Damage) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ClassificationMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, predictions.len()),
        precision,
        recall,
        fpr: ratio(fp, fp + tn),
        f1: harmonic(precision, recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Class::{Background as B, Damage as D};

    #[test]
    fn all_correct() {
        let labels = [D, B, D, B];
        let m = classification_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.fpr, Some(0.0));
        assert_eq!(m.f1, Some(1.0));
    }

    #[test]
    fn one_tp_one_fp() {
        let m = classification_metrics(&[D, D], &[D, B]).unwrap();
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(1.0));
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_na() {
        let m = classification_metrics(&[B, B], &[B, B]).unwrap();
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.fpr, Some(0.0));
        let m = classification_metrics(&[], &[]).unwrap();
        assert_eq!(m.accuracy, None);
        assert!(classification_metrics(&[D], &[]).is_err());
    }

    proptest! {
        #[test]
        fn identities_hold(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let to = |b: bool| if b { D } else { B };
            let preds: Vec<_> = pairs.iter().map(|p| to(p.0)).collect();
            let labels: Vec<_> = pairs.iter().map(|p| to(p.1)).collect();
            let m = classification_metrics(&preds, &labels).unwrap();
            // Independent confusion-matrix count.
            let tp = pairs.iter().filter(|p| p.0 && p.1).count();
            let tn = pairs.iter().filter(|p| !p.0 && !p.1).count();
            prop_assert_eq!(m.tp, tp);
            prop_assert_eq!(m.tn, tn);
            prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, pairs.len());
            prop_assert!((m.accuracy.unwrap() - (tp + tn) as f64 / pairs.len() as f64).abs() < 1e-15);
            if let (Some(p), Some(r), Some(f1)) = (m.precision, m.recall, m.f1) {
                if p + r > 0.0 {
                    prop_assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
                }
            }
        }
    }
}
