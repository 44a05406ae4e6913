//! Small numeric helpers shared by the estimators.

/// Compensated (Neumaier) summation.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut total = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = total + v;
        if total.abs() >= v.abs() {
            carry += (total - t) + v;
        } else {
            carry += (v - t) + total;
        }
        total = t;
    }
    total + carry
}

/// Sample mean and unbiased variance (n - 1 denominator).
///
/// A single observation has variance 0. Returns `None` for an empty slice.
pub fn mean_var(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let rough = sum(values.iter().copied()) / n;
    // one refinement pass; makes the mean of a constant sample exact
    let mean = rough + sum(values.iter().map(|v| v - rough)) / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss = sum(values.iter().map(|v| (v - mean) * (v - mean)));
    Some((mean, ss / (n - 1.0)))
}

/// Sign of a value as -1, 0 or 1.
pub fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Deterministic 64-bit mixer (splitmix64 finalizer) used to derive child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1e16, 1.0, -1e16];
        assert_eq!(sum(values), 1.0);
    }

    #[test]
    fn mean_var_small_cases() {
        assert_eq!(mean_var(&[]), None);
        assert_eq!(mean_var(&[5.0]), Some((5.0, 0.0)));
        let (m, v) = mean_var(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(v, 2.0);
    }

    #[test]
    fn constant_sample_mean_is_exact() {
        for x in [0.1, 0.3, 2.0 / 3.0, -1.7, 1e-8] {
            for n in [3, 7, 997] {
                let (m, v) = mean_var(&vec![x; n]).unwrap();
                assert_eq!(m, x);
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_eq!(mix_seed(42, 3), mix_seed(42, 3));
    }
}
