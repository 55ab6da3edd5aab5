use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Interleaved `[sin(t·ω₀), cos(t·ω₀), sin(t·ω₁), …]` with `dim / 2`
/// frequencies `ω_k = 10000^(−k / (dim/2 − 1))`, i.e. periods spanning 1 to 10000.
pub fn sinusoidal_time_embedding<T: Scalar>(t: usize, dim: usize, steps: usize) -> Result<Vec<T>> {
    if t == 0 || t > steps {
        return Err(Error::InvalidParameter(format!("time step {t} outside [1, {steps}]")));
    }
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidParameter(format!("embedding dim must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let arg = t as f64 * 10000f64.powf(-exponent);
        out.push(T::lit(arg.sin()));
        out.push(T::lit(arg.cos()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_determinism() {
        for t in [1, 17, 500, 1000] {
            let e = sinusoidal_time_embedding::<f64>(t, 32, 1000).unwrap();
            assert_eq!(e.len(), 32);
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(e, sinusoidal_time_embedding::<f64>(t, 32, 1000).unwrap());
        }
    }

    #[test]
    fn first_and_last_step_are_far_apart() {
        let a = sinusoidal_time_embedding::<f64>(1, 32, 1000).unwrap();
        let b = sinusoidal_time_embedding::<f64>(1000, 32, 1000).unwrap();
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.1 * 32f64.sqrt(), "{dist}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(sinusoidal_time_embedding::<f64>(0, 32, 1000).is_err());
        assert!(sinusoidal_time_embedding::<f64>(1001, 32, 1000).is_err());
        assert!(sinusoidal_time_embedding::<f64>(5, 31, 1000).is_err());
    }
}
