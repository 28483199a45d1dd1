//! Learned-width quantisation of the latent and rate estimation.

use crate::coding::cdf::CdfTables;
use crate::error::{invalid, shape, Result};
use crate::tensor::Tensor;

/// Reconstruction `q * k + mu` of one element.
#[inline]
pub fn dequantize_value(k: i32, mu: f32, q: f32) -> f32 {
    q * k as f32 + mu
}

/// `round((y - mu) / q)`, ties away from zero. The rounded index is nudged by
/// one when float rounding of the reconstruction would push the error past
/// `q / 2`, so the bound holds exactly on the values actually decoded.
#[inline]
pub fn quantize_value(y: f32, mu: f32, q: f32) -> i32 {
    let r = (y as f64 - mu as f64) / q as f64;
    let k = r.round();
    let k = k.clamp(i32::MIN as f64, i32::MAX as f64) as i32;
    let half = q as f64 * 0.5;
    let err = |k: i32| (dequantize_value(k, mu, q) as f64 - y as f64).abs();
    if err(k) <= half {
        return k;
    }
    [k - 1, k + 1]
        .into_iter()
        .find(|&c| err(c) <= half)
        .unwrap_or(k)
}

fn check(y: &Tensor, mu: &Tensor, q: &Tensor) -> Result<()> {
    if y.shape() != mu.shape() || y.shape() != q.shape() {
        return Err(shape(format!(
            "y {} / mu {} / q {} differ",
            y.shape(),
            mu.shape(),
            q.shape()
        )));
    }
    if q.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("quantisation width must be positive"));
    }
    Ok(())
}

pub fn quantize_latent(y: &Tensor, mu: &Tensor, q: &Tensor) -> Result<Vec<i32>> {
    check(y, mu, q)?;
    Ok(y
        .data()
        .iter()
        .zip(mu.data())
        .zip(q.data())
        .map(|((&y, &m), &q)| quantize_value(y, m, q))
        .collect())
}

pub fn dequantize_latent(y_hat: &[i32], mu: &Tensor, q: &Tensor) -> Result<Tensor> {
    check(mu, mu, q)?;
    if y_hat.len() != mu.len() {
        return Err(shape(format!("{} indices for {} elements", y_hat.len(), mu.len())));
    }
    let data = y_hat
        .iter()
        .zip(mu.data())
        .zip(q.data())
        .map(|((&k, &m), &q)| dequantize_value(k, m, q))
        .collect();
    Tensor::from_vec(mu.shape(), data)
}

/// Ideal code length of `y_hat` under the per-element scale indices.
pub fn estimate_rate_bits(y_hat: &[i32], sigma_indices: &[u8], tables: &CdfTables) -> Result<f64> {
    if y_hat.len() != sigma_indices.len() {
        return Err(shape(format!(
            "{} symbols but {} scale indices",
            y_hat.len(),
            sigma_indices.len()
        )));
    }
    y_hat
        .iter()
        .zip(sigma_indices)
        .map(|(&s, &i)| {
            tables
                .tables
                .get(i as usize)
                .map(|t| t.cost_bits(s))
                .ok_or_else(|| invalid(format!("scale index {i} out of range")))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::cdf::{build_cdf_tables, CdfTable, ScaleTable, TOTAL};
    use crate::coding::range::range_encode;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_examples() {
        assert_eq!(quantize_value(3.7, 0.2, 1.0), 4);
        assert_eq!(dequantize_value(4, 0.2, 1.0), 4.2);
        assert_eq!(quantize_value(3.7, 0.2, 0.5), 7);
        assert_eq!(dequantize_value(7, 0.2, 0.5), 3.7);
        assert_eq!(quantize_value(-2.5, 0.0, 1.0), -3);
        assert_eq!(quantize_value(2.5, 0.0, 1.0), 3);
    }

    #[test]
    fn non_positive_width_rejected() {
        let s = Shape::new(1, 1, 1, 2);
        let y = Tensor::zeros(s);
        assert!(quantize_latent(&y, &y, &Tensor::from_vec(s, vec![1.0, 0.0]).unwrap()).is_err());
        assert!(quantize_latent(&y, &y, &Tensor::from_vec(s, vec![1.0, -1.0]).unwrap()).is_err());
    }

    #[test]
    fn rate_of_uniform_table() {
        // four near-uniform symbols, a rare +2 and the escape bucket
        let freqs = vec![16383, 16383, 16383, 16383, 1, 3];
        let t = CdfTable::from_frequencies(2, freqs).unwrap();
        assert_eq!(t.freqs().iter().sum::<u32>(), TOTAL);
        let tabs = CdfTables {
            scales: ScaleTable::new(),
            tables: vec![t],
        };
        let bits = estimate_rate_bits(&[-2, -1, 0, 1], &[0; 4], &tabs).unwrap();
        assert!((bits / 4.0 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn estimate_tracks_coded_length() {
        let tabs = build_cdf_tables(&ScaleTable::new(), 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50_000;
        let ids: Vec<u8> = (0..n).map(|_| rng.gen_range(0..64)).collect();
        let symbols: Vec<i32> = ids
            .iter()
            .map(|&i| {
                let t = &tabs.tables[i as usize];
                let b = t.find(rng.gen_range(0..TOTAL));
                if b == t.escape_index() {
                    40
                } else {
                    t.symbol(b)
                }
            })
            .collect();
        let est = estimate_rate_bits(&symbols, &ids, &tabs).unwrap() / 8.0;
        let ids_usize: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let actual = range_encode(&symbols, &ids_usize, &tabs).unwrap().len() as f64;
        assert!((actual - est).abs() <= 0.01 * est + 64.0, "{actual} vs {est}");
    }

    proptest! {
        #[test]
        fn error_bounded_by_half_width(
            y in -300.0f32..300.0,
            mu in -50.0f32..50.0,
            q in 0.25f32..=4.0,
        ) {
            let k = quantize_value(y, mu, q);
            let e = (dequantize_value(k, mu, q) as f64 - y as f64).abs();
            prop_assert!(e <= q as f64 / 2.0, "y={} mu={} q={} k={} e={}", y, mu, q, k, e);
        }

        #[test]
        fn exact_when_residual_is_multiple(k in -1000i32..1000, mu in -8.0f32..8.0, e in -4i32..=4) {
            let q = 2f32.powi(e).clamp(0.25, 4.0);
            let mu = (mu * 16.0).round() / 16.0;
            let y = q * k as f32 + mu;
            prop_assert_eq!(quantize_value(y, mu, q), k);
        }
    }
}
