//! Causal prefix DFT: the token-mixing primitive of the stage-I architecture.
//! Per embedding channel, position i carries the real part of the last bin of
//! the length-i DFT taken over positions 1..i.

use super::{LinalgError, LinalgResult};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Real part of bin `i-1` of the length-`i` DFT over the first `i` vectors of
/// `x`, per channel. `i` is 1-based; `1 <= i <= x.len()`.
pub fn prefix_dft_last_bin(x: &[Vec<f64>], i: usize) -> LinalgResult<Vec<f64>> {
    if i == 0 || i > x.len() {
        return Err(LinalgError::Range(format!(
            "prefix position {i} out of range 1..={}",
            x.len()
        )));
    }
    let dim = x[0].len();
    if x[..i].iter().any(|v| v.len() != dim) {
        return Err(LinalgError::Dimension(
            "prefix_dft_last_bin: ragged input vectors".into(),
        ));
    }
    let coeffs = prefix_coefficients(i);
    let mut out = vec![0.0; dim];
    for (s, xv) in x[..i].iter().enumerate() {
        let w = coeffs[s];
        for (o, &v) in out.iter_mut().zip(xv) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// cos(2π·(n−1)·s / n) for s = 0..n−1: the real weights of the last DFT bin.
pub fn prefix_coefficients(n: usize) -> Vec<f64> {
    let k = (n - 1) as f64;
    (0..n)
        .map(|s| (std::f64::consts::TAU * k * s as f64 / n as f64).cos())
        .collect()
}

/// Shared coefficient table for all prefix lengths up to `n`, cached per
/// maximum length. Row i holds the weights for prefix length i+1.
pub fn prefix_table(n: usize) -> Arc<Vec<Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<Vec<f64>>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("prefix table cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| Arc::new((1..=n).map(prefix_coefficients).collect()))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::naive_dft_last_bin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_point_dft_is_identity() {
        let x = vec![vec![3.0]];
        assert_eq!(prefix_dft_last_bin(&x, 1).unwrap(), vec![3.0]);
    }

    #[test]
    fn two_point_last_bin_is_difference() {
        let x = vec![vec![1.0], vec![4.0]];
        let got = prefix_dft_last_bin(&x, 2).unwrap();
        assert!((got[0] - (-3.0)).abs() < 1e-14);
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        for i in 1..=9 {
            let got = prefix_dft_last_bin(&x, i).unwrap();
            let want = naive_dft_last_bin(&x, i);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "i={i}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn out_of_range_positions_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(prefix_dft_last_bin(&x, 0).is_err());
        assert!(prefix_dft_last_bin(&x, 3).is_err());
    }

    #[test]
    fn table_rows_match_direct_coefficients() {
        let table = prefix_table(6);
        for (i, row) in table.iter().enumerate() {
            assert_eq!(row, &prefix_coefficients(i + 1));
        }
    }
}
