//! Regression metrics.

use super::EvalError;

fn check(actual: &[f64], pred: &[f64], min: usize) -> Result<(), EvalError> {
    if actual.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: pred.len(),
        });
    }
    if actual.len() < min {
        return Err(EvalError::TooFewRows {
            n: actual.len(),
            needed: min,
        });
    }
    Ok(())
}

/// `1 − Σ(a−p)² / Σ(a−ā)²`.
pub fn r2(actual: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    check(actual, pred, 2)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantActuals);
    }
    let ss_res: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean absolute error, in the units of the inputs.
pub fn mae(actual: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    check(actual, pred, 1)?;
    Ok(actual.iter().zip(pred).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64)
}

/// Mean absolute percentage error relative to the actual values.
pub fn mape(actual: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    check(actual, pred, 1)?;
    if let Some(index) = actual.iter().position(|&a| !(a > 0.0)) {
        return Err(EvalError::NonPositiveActual { index });
    }
    let total: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p).abs() / a).sum();
    Ok(100.0 * total / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mae(&[100.0, 200.0], &[90.0, 210.0]).unwrap(), 10.0);
        assert_eq!(mae(&[5.0], &[2.0]).unwrap(), 3.0);
        assert!((mape(&[100.0, 200.0], &[90.0, 210.0]).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(r2(&[2.0, 2.0], &[1.0, 3.0]), Err(EvalError::ConstantActuals));
        assert_eq!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(EvalError::NonPositiveActual { index: 1 }));
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(mae(&[], &[]), Err(EvalError::TooFewRows { .. })));
        assert!(matches!(r2(&[1.0], &[1.0]), Err(EvalError::TooFewRows { .. })));
    }
}
