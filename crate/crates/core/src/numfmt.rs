//! Fixed-significance decimal formatting for emitted CSV files.

/// Significant digits used for every float written to CSV.
pub const CSV_SIG_DIGITS: usize = 9;

/// Formats `x` with `sig` significant digits, like C's `%.{sig}g`: plain
/// decimal for moderate magnitudes, scientific otherwise, trailing zeros
/// trimmed.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Round through scientific notation first so the exponent accounts for
    // carries like 9.9999999995 -> 1.00000000e1.
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

/// Shorthand for [`fmt_sig`] at [`CSV_SIG_DIGITS`].
pub fn fmt9(x: f64) -> String {
    fmt_sig(x, CSV_SIG_DIGITS)
}

/// Rounds `x` to the value its 9-significant-digit text form parses back to.
pub fn quantize9(x: f64) -> f64 {
    fmt9(x).parse().expect("formatted float parses")
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats_like_percent_g() {
        assert_eq!(fmt_sig(0.463, 9), "0.463");
        assert_eq!(fmt_sig(1.0, 9), "1");
        assert_eq!(fmt_sig(-2.5, 9), "-2.5");
        assert_eq!(fmt_sig(123456789.4, 9), "123456789");
        assert_eq!(fmt_sig(1234567890.0, 9), "1.23456789e9");
        assert_eq!(fmt_sig(1.0e-7, 9), "1e-7");
        assert_eq!(fmt_sig(9.9999999995, 9), "10");
        assert_eq!(fmt_sig(1.0 / 3.0, 9), "0.333333333");
    }

    proptest! {
        #[test]
        fn quantized_values_are_fixed_points(x in -1.0e6f64..1.0e6) {
            let q = quantize9(x);
            prop_assert_eq!(quantize9(q), q);
            prop_assert_eq!(fmt9(q), fmt9(x));
            prop_assert!((q - x).abs() <= 1e-8 * x.abs().max(1e-300) + 1e-300);
        }
    }
}
