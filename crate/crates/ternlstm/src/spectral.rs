//! FFT-based spectra, Fourier distance matrices and Hilbert envelopes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use ternlstm_core::analysis::{log_power, DistanceMatrix};

use crate::error::{data, Result};

pub const MIN_SIGNAL_LEN: usize = 8;

fn spectrum(planner: &mut FftPlanner<f64>, signal: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// `|X[k]|²` for `k = 0..=n/2`.
pub fn power_spectrum(signal: &[f64]) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    one_sided_power(&mut planner, signal)
}

fn one_sided_power(planner: &mut FftPlanner<f64>, signal: &[f64]) -> Vec<f64> {
    let spec = spectrum(planner, signal);
    spec[..signal.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Distance between the log power spectra of equal-length signals, with
/// bins `1/n` cycles per sample wide.
pub fn fourier_distance(signals: &[Vec<f64>], classes: Vec<usize>) -> Result<DistanceMatrix> {
    let n = signals.first().map_or(0, Vec::len);
    if signals.iter().any(|s| s.len() != n) {
        return Err(data("signals differ in length"));
    }
    if n < MIN_SIGNAL_LEN {
        return Err(data(format!("signals of {n} samples are shorter than {MIN_SIGNAL_LEN}")));
    }
    let mut planner = FftPlanner::new();
    let spectra: Vec<Vec<f64>> = signals.iter().map(|s| log_power(&one_sided_power(&mut planner, s))).collect();
    Ok(DistanceMatrix::from_log_spectra(&spectra, classes, 1.0 / n as f64)?)
}

/// Magnitude of the analytic signal.
pub fn hilbert_envelope(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf = spectrum(&mut planner, signal);
    // keep DC and Nyquist, double positive, zero negative frequencies
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        if k < half || (k == half && n % 2 == 1) {
            *v *= 2.0;
        } else if k > half {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn naive_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn distance_matches_bin_loop() {
        let n = 256;
        let a: Vec<f64> = (0..n).map(|t| (2.0 * PI * 10.0 * t as f64 / n as f64).sin()).collect();
        let b: Vec<f64> = (0..n).map(|t| (2.0 * PI * 37.0 * t as f64 / n as f64).sin() + 0.1).collect();
        let d = fourier_distance(&[a.clone(), b.clone()], vec![0, 1]).unwrap();
        let (pa, pb) = (naive_power(&a), naive_power(&b));
        let mut expect = 0.0;
        for k in 0..pa.len() {
            let la = (pa[k] + 1e-12).ln().abs();
            let lb = (pb[k] + 1e-12).ln().abs();
            expect += (la - lb) * (la - lb);
        }
        expect /= n as f64;
        assert!(d.get(0, 1) > 0.0);
        assert!((d.get(0, 1) - expect).abs() <= 1e-6 * expect);
    }

    #[test]
    fn sign_flip_and_identity_give_zero() {
        let a: Vec<f64> = (0..64).map(|t| ((t * t) as f64 * 0.01).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let d = fourier_distance(&[a.clone(), neg, a], vec![0, 0, 0]).unwrap();
        assert!(d.get(0, 1) < 1e-9);
        assert_eq!(d.get(0, 2), 0.0);
        assert!(fourier_distance(&[vec![0.0; 8], vec![0.0; 9]], vec![0, 0]).is_err());
        assert!(fourier_distance(&[vec![0.0; 4]], vec![0]).is_err());
    }

    #[test]
    fn envelope_of_sinusoid_and_constant() {
        let n = 2000;
        // 97 whole periods
        let x: Vec<f64> = (0..n).map(|t| 1.7 * (2.0 * PI * 97.0 * t as f64 / n as f64).sin()).collect();
        let e = hilbert_envelope(&x);
        for v in &e[n / 20..n - n / 20] {
            assert!((v - 1.7).abs() < 0.02 * 1.7, "{v}");
        }
        let c = hilbert_envelope(&[-0.4; 16]);
        assert!(c.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn envelope_tracks_modulator() {
        let n = 4000;
        let m = |t: f64| 1.0 + 0.5 * (0.01 * t).sin();
        let x: Vec<f64> = (0..n).map(|t| m(t as f64) * (t as f64).sin()).collect();
        let e = hilbert_envelope(&x);
        for t in n / 20..n - n / 20 {
            assert!((e[t] - m(t as f64)).abs() < 0.05 * m(t as f64), "t={t}");
        }
    }

    proptest! {
        #[test]
        fn envelope_non_negative(x in proptest::collection::vec(-5.0f64..5.0, 4..64)) {
            prop_assert!(hilbert_envelope(&x).iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn fft_power_matches_dft(x in proptest::collection::vec(-1.0f64..1.0, 8..40)) {
            let a = power_spectrum(&x);
            let b = naive_power(&x);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-9 * (1.0 + q));
            }
        }
    }
}
