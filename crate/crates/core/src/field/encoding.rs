use std::f64::consts::PI;

use crate::nn::Real;

/// Encoded width for `dim` input components and `freqs` frequency bands.
pub const fn encoded_len(dim: usize, freqs: usize) -> usize {
    dim * (1 + 2 * freqs)
}

/// Per component `p`: `p, sin(2⁰πp), cos(2⁰πp), …, sin(2^{L-1}πp), cos(2^{L-1}πp)`.
pub fn positional_encoding(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(x.len(), freqs)];
    encode_into(x, freqs, &mut out);
    out
}

/// Writes the encoding of `x` into `out`, which must be exactly `encoded_len` long.
///
/// Higher bands come from the double-angle identities in `f64`; the error
/// after ten doublings stays below 1e-13.
#[inline]
pub fn encode_into<T: Real>(x: &[T], freqs: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), encoded_len(x.len(), freqs));
    let stride = 1 + 2 * freqs;
    for (c, &p) in x.iter().enumerate() {
        let o = &mut out[c * stride..(c + 1) * stride];
        o[0] = p;
        if freqs == 0 {
            continue;
        }
        let (mut s, mut co) = (PI * p.f64()).sin_cos();
        for l in 0..freqs {
            o[1 + 2 * l] = T::of(s);
            o[2 + 2 * l] = T::of(co);
            (s, co) = (2.0 * s * co, (co - s) * (co + s));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_values() {
        assert_eq!(positional_encoding(&[0.0], 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        let e = positional_encoding(&[0.5], 1);
        assert_eq!(e[0], 0.5);
        assert!((e[1] - 1.0).abs() < 1e-15 && e[2].abs() < 1e-15);
        assert_eq!(positional_encoding(&[0.1, 0.2, 0.3], 10).len(), 63);
        assert_eq!(positional_encoding(&[0.1, 0.2], 0), vec![0.1, 0.2]);
    }

    #[test]
    fn matches_direct_formula() {
        let x = [0.37, -0.81, 0.05];
        let e = positional_encoding(&x, 6);
        for (c, &p) in x.iter().enumerate() {
            for l in 0..6 {
                let f = 2f64.powi(l as i32) * PI * p;
                assert!((e[c * 13 + 1 + 2 * l] - f.sin()).abs() < 1e-13);
                assert!((e[c * 13 + 2 + 2 * l] - f.cos()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ten_bands_stay_accurate() {
        let mut worst: f64 = 0.0;
        for i in 0..2001 {
            let p = -1.0 + i as f64 * 1e-3;
            let e = positional_encoding(&[p], 10);
            for l in 0..10 {
                let f = 2f64.powi(l as i32) * PI * p;
                worst = worst.max((e[1 + 2 * l] - f.sin()).abs()).max((e[2 + 2 * l] - f.cos()).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }
}
