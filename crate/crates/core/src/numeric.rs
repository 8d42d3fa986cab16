//! Order statistics, quantiles and extended-real serialization.

const INDEX_EPS: f64 = 1e-9;

/// `ceil(x)` that ignores floating-point noise just above an integer,
/// e.g. `(9 + 1) * (1 - 0.1)`.
pub fn ceil_index(x: f64) -> usize {
    let c = (x - INDEX_EPS).ceil();
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

/// `floor(x)` that ignores floating-point noise just below an integer.
pub fn floor_index(x: f64) -> usize {
    let f = (x + INDEX_EPS).floor();
    if f <= 0.0 {
        0
    } else {
        f as usize
    }
}

/// The `k`-th smallest value (1-based) of `values`, or `None` when `k` is
/// out of `1..=len`.
pub fn kth_smallest(values: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k > values.len() {
        return None;
    }
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    Some(*kth)
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Quantile by linear interpolation between order statistics: position
/// `q * (n - 1)` in the sorted sample.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Serializes `f64` allowing the infinities as the strings `"inf"` / `"-inf"`.
pub mod ext_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("invalid extended real `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_helpers_absorb_rounding_noise() {
        assert_eq!(ceil_index(10.0 * (1.0 - 0.1)), 9);
        assert_eq!(ceil_index(10.0 * (1.0 - 0.05)), 10);
        assert_eq!(floor_index(0.2 * 5.0), 1);
        assert_eq!(floor_index(0.1 * 3.0), 0);
        assert_eq!(ceil_index(9.2), 10);
    }

    #[test]
    fn linear_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_linear(&s, 0.25), 1.75);
        assert_eq!(quantile_linear(&s, 0.75), 3.25);
        assert_eq!(quantile_linear(&[5.0], 0.3), 5.0);
    }

    #[test]
    fn kth_smallest_bounds() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(kth_smallest(&v, 1), Some(1.0));
        assert_eq!(kth_smallest(&v, 3), Some(3.0));
        assert_eq!(kth_smallest(&v, 0), None);
        assert_eq!(kth_smallest(&v, 4), None);
    }
}
