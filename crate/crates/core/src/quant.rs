//! Binary and ternary weight quantization with straight-through gradients.
//!
//! Training keeps full-precision shadow weights; the forward pass sees their
//! quantized codes, and the backward pass routes the code gradient back to
//! the shadow through [`ste_backward`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Weight precision of the gate and convolution tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    #[default]
    Full,
    Binary,
    Ternary,
}

impl Precision {
    pub fn is_quantized(self) -> bool {
        !matches!(self, Precision::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Full => "full",
            Precision::Binary => "binary",
            Precision::Ternary => "ternary",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "binary" => Some(Self::Binary),
            "ternary" => Some(Self::Ternary),
            _ => None,
        }
    }

    /// Quantizer applied in the forward pass; identity for full precision.
    pub fn quantize(self, r: f64) -> f64 {
        match self {
            Precision::Full => r,
            Precision::Binary => quantize_binary(r) as f64,
            Precision::Ternary => quantize_ternary(r) as f64,
        }
    }
}

/// `sign(r)` with `sign(0) = +1`.
pub fn quantize_binary(r: f64) -> i8 {
    if r < 0.0 {
        -1
    } else {
        1
    }
}

/// `round(r)` with ties away from zero, confined to `{-1, 0, +1}`.
pub fn quantize_ternary(r: f64) -> i8 {
    libm::round(r).clamp(-1.0, 1.0) as i8
}

/// Straight-through estimator: pass `g_q` when `|r| ≤ 1`, cancel otherwise.
pub fn ste_backward(g_q: f64, r: f64) -> f64 {
    if libm::fabs(r) <= 1.0 {
        g_q
    } else {
        0.0
    }
}

/// Full-precision weights accumulated during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowWeights {
    real: Vec<f64>,
    mode: Precision,
}

impl ShadowWeights {
    pub fn new(real: Vec<f64>, mode: Precision) -> Self {
        let mut w = Self { real, mode };
        w.clamp();
        w
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn mode(&self) -> Precision {
        self.mode
    }

    /// Adds `delta` elementwise, then re-applies the `[-1, 1]` clamp in
    /// quantized modes.
    pub fn apply_delta(&mut self, delta: &[f64]) {
        for (w, d) in self.real.iter_mut().zip(delta) {
            *w += d;
        }
        self.clamp();
    }

    fn clamp(&mut self) {
        if self.mode.is_quantized() {
            clamp_unit(&mut self.real);
        }
    }

    /// Current codes; `None` in full precision.
    pub fn quantized(&self) -> Option<QuantizedWeights> {
        QuantizedWeights::from_real(&self.real, self.mode)
    }
}

/// Clamps every element to `[-1, 1]`.
pub fn clamp_unit(values: &mut [f64]) {
    for v in values {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// 2-bit weight codes in `{-1, 0, +1}` (ternary) or `{-1, +1}` (binary).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedWeights {
    codes: Vec<i8>,
    mode: Precision,
}

impl QuantizedWeights {
    pub fn from_real(real: &[f64], mode: Precision) -> Option<Self> {
        let codes = match mode {
            Precision::Full => return None,
            Precision::Binary => real.iter().map(|&r| quantize_binary(r)).collect(),
            Precision::Ternary => real.iter().map(|&r| quantize_ternary(r)).collect(),
        };
        Some(Self { codes, mode })
    }

    pub fn from_codes(codes: Vec<i8>, mode: Precision) -> Result<Self> {
        let ok = match mode {
            Precision::Full => false,
            Precision::Binary => codes.iter().all(|&c| c == 1 || c == -1),
            Precision::Ternary => codes.iter().all(|&c| (-1..=1).contains(&c)),
        };
        if !ok {
            return Err(invalid(format!("codes are not valid {} codes", mode.name())));
        }
        Ok(Self { codes, mode })
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn mode(&self) -> Precision {
        self.mode
    }

    pub fn pack(&self) -> Vec<u8> {
        pack_codes(&self.codes)
    }
}

/// Packs codes four per byte; code `k` of a byte occupies bits `2k..2k+2`,
/// encoded as 2-bit two's complement (`+1 → 01`, `0 → 00`, `-1 → 11`).
pub fn pack_codes(codes: &[i8]) -> Vec<u8> {
    codes
        .chunks(4)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |byte, (k, &c)| byte | (((c as u8) & 0b11) << (2 * k)))
        })
        .collect()
}

/// Inverse of [`pack_codes`]; the reserved pattern `10` is rejected.
pub fn unpack_codes(bytes: &[u8], n: usize) -> Result<Vec<i8>> {
    if bytes.len() != n.div_ceil(4) {
        return Err(invalid(format!(
            "{} packed bytes cannot hold exactly {n} codes",
            bytes.len()
        )));
    }
    (0..n)
        .map(|i| match (bytes[i / 4] >> (2 * (i % 4))) & 0b11 {
            0b00 => Ok(0),
            0b01 => Ok(1),
            0b11 => Ok(-1),
            _ => Err(invalid(format!("reserved 2-bit pattern at code {i}"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn binary_examples() {
        assert_eq!(quantize_binary(0.3), 1);
        assert_eq!(quantize_binary(-0.2), -1);
        assert_eq!(quantize_binary(0.0), 1);
        assert_eq!(quantize_binary(-0.0), 1);
    }

    #[test]
    fn ternary_examples() {
        assert_eq!(quantize_ternary(0.4), 0);
        assert_eq!(quantize_ternary(0.6), 1);
        assert_eq!(quantize_ternary(-0.6), -1);
        assert_eq!(quantize_ternary(0.5), 1);
        assert_eq!(quantize_ternary(-0.5), -1);
        assert_eq!(quantize_ternary(0.0), 0);
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_backward(2.0, 0.5), 2.0);
        assert_eq!(ste_backward(2.0, 1.5), 0.0);
        assert_eq!(ste_backward(-3.1, -1.0), -3.1);
        assert_eq!(ste_backward(-3.1, 1.0), -3.1);
    }

    #[test]
    fn quantizer_idempotence() {
        for c in [-1.0, 0.0, 1.0] {
            assert_eq!(quantize_ternary(c) as f64, c);
            assert_eq!(Precision::Ternary.quantize(Precision::Ternary.quantize(c)), Precision::Ternary.quantize(c));
        }
        for c in [-1.0, 1.0] {
            assert_eq!(quantize_binary(c) as f64, c);
        }
    }

    #[test]
    fn shadow_is_clamped_and_codes_follow() {
        let mut w = ShadowWeights::new(vec![0.2, -3.0, 0.9], Precision::Ternary);
        assert_eq!(w.real(), &[0.2, -1.0, 0.9]);
        w.apply_delta(&[0.4, 0.1, 5.0]);
        assert!(w.real().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(w.quantized().unwrap().codes(), &[1, -1, 1]);
        let full = ShadowWeights::new(vec![3.0], Precision::Full);
        assert_eq!(full.real(), &[3.0]);
        assert!(full.quantized().is_none());
    }

    #[test]
    fn packing_layout() {
        assert_eq!(pack_codes(&[1, 0, -1, 1]), vec![0b01_11_00_01]);
        assert_eq!(pack_codes(&[-1]), vec![0b11]);
        assert!(unpack_codes(&[0b10], 1).is_err());
        assert!(unpack_codes(&[0, 0], 4).is_err());
        assert!(QuantizedWeights::from_codes(vec![0], Precision::Binary).is_err());
    }

    proptest! {
        #[test]
        fn pack_round_trip(codes in proptest::collection::vec(-1i8..=1, 0..200)) {
            let bytes = pack_codes(&codes);
            prop_assert_eq!(bytes.len(), codes.len().div_ceil(4));
            prop_assert_eq!(unpack_codes(&bytes, codes.len()).unwrap(), codes);
        }

        #[test]
        fn ste_zero_set(g in -1e6f64..1e6, r in 1.0f64..1e6) {
            let r = r + f64::EPSILON * 4.0;
            prop_assert_eq!(ste_backward(g, r), 0.0);
            prop_assert_eq!(ste_backward(g, -r), 0.0);
        }

        #[test]
        fn shadow_clamp_holds_under_updates(
            updates in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 8), 1..20)
        ) {
            let mut w = ShadowWeights::new(vec![0.0; 8], Precision::Ternary);
            for u in &updates {
                w.apply_delta(u);
                prop_assert!(w.real().iter().all(|v| v.abs() <= 1.0));
                let q = w.quantized().unwrap();
                let expect: Vec<i8> = w.real().iter().map(|&r| quantize_ternary(r)).collect();
                prop_assert_eq!(q.codes(), &expect[..]);
            }
        }
    }
}
