use rand::Rng;

use super::{NdError, Tensor};

/// Bound `√(6 / fan_in)` of the Kaiming uniform scheme (gain √2).
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Weights of shape `[fan_out × fan_in]` drawn from `U[-b, b]`, `b = √(6/fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor, NdError> {
    let fan_in = match shape {
        [_, fan_in] => *fan_in,
        _ => {
            return Err(NdError::NotMatrix {
                op: "kaiming_uniform",
                shape: shape.to_vec(),
            })
        }
    };
    if fan_in == 0 {
        return Err(NdError::EmptyDimension {
            op: "kaiming_uniform",
        });
    }
    let b = kaiming_bound(fan_in);
    uniform(shape, -b, b, rng)
}

/// Entries i.i.d. uniform on `[lo, hi]`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Tensor, NdError> {
    if !(lo < hi) {
        return Err(NdError::InvalidRange { lo, hi });
    }
    let len = shape.iter().product();
    let data = (0..len).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kaiming_bounds() {
        assert!((kaiming_bound(128) - 0.216_506_350_946_109_66).abs() < 1e-12);
        assert_eq!(kaiming_bound(6), 1.0);
    }

    #[test]
    fn kaiming_samples_stay_in_bound_and_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = kaiming_uniform(&[1000, 100], &mut rng).unwrap();
        let b = kaiming_bound(100);
        assert!(t.data().iter().all(|v| v.abs() <= b));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let sigma = b / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn uniform_rejects_empty_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            uniform(&[3], 1.0, 1.0, &mut rng),
            Err(NdError::InvalidRange { .. })
        ));
        let lo = 1.0;
        let hi = lo + 1e-9;
        let t = uniform(&[1000], lo, hi, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| (lo..=hi).contains(&v)));
    }

    #[test]
    fn embedding_style_init_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = uniform(&[100_000], -1.0, 1.0, &mut rng).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02);
    }
}
