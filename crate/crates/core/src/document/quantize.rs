//! Uniform-width binning of continuous values.

use crate::error::{Error, Result};

/// Maps `value` to one of `bins` equal-width bins over `[lo, hi]`.
///
/// Values below `lo` land in bin 0 and values at or above `hi` land in the
/// last bin.
pub fn quantize(value: f64, lo: f64, hi: f64, bins: usize) -> Result<usize> {
    check_range(lo, hi, bins)?;
    if !value.is_finite() {
        return Err(Error::invalid(format!("cannot quantize non-finite value {value}")));
    }
    let scaled = ((value - lo) / (hi - lo) * bins as f64).floor();
    Ok(scaled.clamp(0.0, (bins - 1) as f64) as usize)
}

/// Returns the center of bin `bin`.
pub fn dequantize(bin: usize, lo: f64, hi: f64, bins: usize) -> Result<f64> {
    check_range(lo, hi, bins)?;
    if bin >= bins {
        return Err(Error::invalid(format!("bin {bin} out of range for {bins} bins")));
    }
    Ok(lo + (bin as f64 + 0.5) * (hi - lo) / bins as f64)
}

fn check_range(lo: f64, hi: f64, bins: usize) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("invalid quantization range [{lo}, {hi}]")));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edges_and_midpoint() {
        assert_eq!(quantize(0.0, 0.0, 1.0, 64).unwrap(), 0);
        assert_eq!(quantize(1.0, 0.0, 1.0, 64).unwrap(), 63);
        assert_eq!(quantize(0.5, 0.0, 1.0, 64).unwrap(), 32);
        assert_eq!(quantize(-3.0, 0.0, 1.0, 64).unwrap(), 0);
        assert_eq!(quantize(7.0, 0.0, 1.0, 64).unwrap(), 63);
    }

    #[test]
    fn bin_centers() {
        assert_eq!(dequantize(0, 0.0, 1.0, 64).unwrap(), 0.0078125);
        assert_eq!(dequantize(63, 0.0, 1.0, 64).unwrap(), 0.9921875);
        for b in 0..64 {
            let c = dequantize(b, 0.0, 1.0, 64).unwrap();
            assert_eq!(quantize(c, 0.0, 1.0, 64).unwrap(), b);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize(f64::NAN, 0.0, 1.0, 64).is_err());
        assert!(quantize(f64::INFINITY, 0.0, 1.0, 64).is_err());
        assert!(quantize(0.5, 1.0, 1.0, 64).is_err());
        assert!(quantize(0.5, 0.0, 1.0, 1).is_err());
        assert!(dequantize(64, 0.0, 1.0, 64).is_err());
    }

    #[test]
    fn uniform_samples_fill_bins_evenly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let bins = 64;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let v: f64 = rng.gen_range(0.0..1.0);
            counts[quantize(v, 0.0, 1.0, bins).unwrap()] += 1;
        }
        let p = 1.0 / bins as f64;
        let expected = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * sd, "bin count {c} vs {expected}");
        }
    }

    proptest! {
        #[test]
        fn centers_round_trip(bins in prop::sample::select(vec![8usize, 16, 64]), frac in 0.0f64..1.0, lo in -10.0f64..10.0, width in 0.1f64..50.0) {
            let bin = ((frac * bins as f64) as usize).min(bins - 1);
            let hi = lo + width;
            let c = dequantize(bin, lo, hi, bins).unwrap();
            prop_assert_eq!(quantize(c, lo, hi, bins).unwrap(), bin);
        }

        #[test]
        fn monotone(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(x, 0.0, 1.0, 64).unwrap() <= quantize(y, 0.0, 1.0, 64).unwrap());
        }
    }
}
