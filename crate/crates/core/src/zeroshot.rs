//! Frozen zero-shot classifier: cosine logits against per-class text
//! features, tempered probabilities, entropy and the pseudo-label.

use crate::error::{Result, TaeaError};
use crate::numerics::{argmax, dot, entropy, norm, softmax, Matrix};

/// CLIP's learned temperature.
pub const DEFAULT_LOGIT_SCALE: f32 = 100.0;

const UNIT_TOL: f32 = 1e-5;

/// Unit-norm text feature per class, in manifest class order.
#[derive(Debug, Clone)]
pub struct TextBank {
    omega: Matrix,
    class_names: Vec<String>,
}

impl TextBank {
    pub fn new(omega: Matrix, class_names: Vec<String>) -> Result<Self> {
        if omega.rows() < 2 {
            return Err(TaeaError::Shape(format!(
                "text bank needs at least 2 classes, got {}",
                omega.rows()
            )));
        }
        if class_names.len() != omega.rows() {
            return Err(TaeaError::Shape(format!(
                "{} class names for {} text rows",
                class_names.len(),
                omega.rows()
            )));
        }
        for (c, row) in omega.row_iter().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(TaeaError::Numeric(format!(
                    "text row {c} has norm {n}, expected 1"
                )));
            }
        }
        Ok(Self { omega, class_names })
    }

    /// Bank with placeholder class names.
    pub fn unnamed(omega: Matrix) -> Result<Self> {
        let names = (0..omega.rows()).map(|c| format!("class_{c}")).collect();
        Self::new(omega, names)
    }

    pub fn omega(&self) -> &Matrix {
        &self.omega
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.omega.rows()
    }

    pub fn dim(&self) -> usize {
        self.omega.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Cosine similarity per class.
    pub logits: Vec<f32>,
    /// `softmax(logit_scale · logits)`.
    pub probs: Vec<f32>,
    pub pseudo_class: usize,
    pub entropy_nats: f32,
}

/// `⟨f_test, ω_c⟩` for every class.
pub fn clip_logits(f_test: &[f32], bank: &TextBank) -> Result<Vec<f32>> {
    if f_test.len() != bank.dim() {
        return Err(TaeaError::Shape(format!(
            "feature of dim {} against a text bank of dim {}",
            f_test.len(),
            bank.dim()
        )));
    }
    Ok(bank.omega.row_iter().map(|w| dot(f_test, w)).collect())
}

/// Zero-shot prediction. Argmax ties go to the lowest class index.
pub fn predict(f_test: &[f32], bank: &TextBank, logit_scale: f32) -> Result<Prediction> {
    let logits = clip_logits(f_test, bank)?;
    prediction_from_logits(logits, logit_scale)
}

pub(crate) fn prediction_from_logits(logits: Vec<f32>, logit_scale: f32) -> Result<Prediction> {
    let probs = softmax(&logits, logit_scale)?;
    let entropy_nats = entropy(&probs)?;
    let pseudo_class = argmax(&logits);
    Ok(Prediction {
        logits,
        probs,
        pseudo_class,
        entropy_nats,
    })
}

pub fn pseudo_one_hot(pred: &Prediction, n_classes: usize) -> Result<Vec<f32>> {
    if pred.pseudo_class >= n_classes {
        return Err(TaeaError::Range(format!(
            "pseudo class {} with only {n_classes} classes",
            pred.pseudo_class
        )));
    }
    let mut v = vec![0.0; n_classes];
    v[pred.pseudo_class] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn bank(rows: &[&[f32]]) -> TextBank {
        TextBank::unnamed(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn logits_examples() {
        let b = bank(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(clip_logits(&[1.0, 0.0, 0.0], &b).unwrap(), vec![1.0, 0.0]);
        assert_eq!(clip_logits(&[0.0, 0.0, 1.0], &b).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            clip_logits(&[1.0, 0.0], &b),
            Err(TaeaError::Shape(_))
        ));

        let omega = Rng::new(4).unit_rows(6, 5);
        let b = TextBank::unnamed(omega.clone()).unwrap();
        let l = clip_logits(omega.row(3), &b).unwrap();
        assert!((l[3] - 1.0).abs() < 1e-6);
        assert_eq!(argmax(&l), 3);
    }

    #[test]
    fn saturated_prediction() {
        let p = prediction_from_logits(vec![1.0, 0.0], 100.0).unwrap();
        assert_eq!(p.pseudo_class, 0);
        assert!(p.entropy_nats < 1e-6);
        assert!(p.probs[1] < 1e-40);
    }

    #[test]
    fn uniform_prediction_breaks_ties_low() {
        let p = prediction_from_logits(vec![0.3; 4], 100.0).unwrap();
        assert_eq!(p.pseudo_class, 0);
        assert!((p.entropy_nats - 4f32.ln()).abs() < 1e-6);
        for q in &p.probs {
            assert!((q - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn two_class_probs_match_scalar_formula() {
        let p = prediction_from_logits(vec![0.30, 0.20], 100.0).unwrap();
        let e = (-10.0f64).exp();
        let want = [1.0 / (1.0 + e), e / (1.0 + e)];
        // 0.30 and 0.20 are not exact in f32, so the gap is 10 ± 3e-6.
        assert!((p.probs[0] as f64 - want[0]).abs() < 1e-7);
        assert!(((p.probs[1] as f64 - want[1]) / want[1]).abs() < 1e-4);
    }

    #[test]
    fn one_hot_examples() {
        let mk = |c| Prediction {
            logits: vec![],
            probs: vec![],
            pseudo_class: c,
            entropy_nats: 0.0,
        };
        assert_eq!(pseudo_one_hot(&mk(2), 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(pseudo_one_hot(&mk(0), 2).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(pseudo_one_hot(&mk(5), 3), Err(TaeaError::Range(_))));
    }

    #[test]
    fn bank_validation() {
        assert!(TextBank::unnamed(Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap()).is_err());
        assert!(TextBank::unnamed(Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 2.0]]).unwrap()).is_err());
    }
}
