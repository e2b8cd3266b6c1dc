//! Saturating signed fixed-point arithmetic and lookup-table nonlinearities.
//!
//! Every intermediate signal of the inference datapath (feature maps, gate
//! pre-activations, gate values, cell and hidden state) is a [`Fixed`] in the
//! activation format, by default Q4.8: 12 bits, 8 of them fractional. Dot
//! products accumulate exactly in `i64` and are requantized once with
//! [`QFormat::requantize`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Signed two's-complement fixed-point layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl QFormat {
    /// 12-bit activation/state format used by the accelerator datapath.
    pub const Q4_8: QFormat = QFormat {
        total_bits: 12,
        frac_bits: 8,
    };

    /// 10-bit lookup-table entry format. Shares the activation fraction so an
    /// entry sign-extends into the 12-bit datapath without shifting.
    pub const LUT_ENTRY: QFormat = QFormat {
        total_bits: 10,
        frac_bits: 8,
    };

    /// 2-bit integer weight codes.
    pub const CODE: QFormat = QFormat {
        total_bits: 2,
        frac_bits: 0,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(Error::InvalidFormat {
                total_bits,
                frac_bits,
            });
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn max_raw(self) -> i32 {
        ((1i64 << (self.total_bits - 1)) - 1) as i32
    }

    pub fn min_raw(self) -> i32 {
        (-(1i64 << (self.total_bits - 1))) as i32
    }

    /// Weight of the least significant bit, `2^-frac_bits`.
    pub fn lsb(self) -> f64 {
        libm::ldexp(1.0, -(self.frac_bits as i32))
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn saturate(self, raw: i64) -> i32 {
        raw.clamp(self.min_raw() as i64, self.max_raw() as i64) as i32
    }

    /// Rescales an exact accumulator holding `acc_frac` fractional bits into
    /// this format, rounding half away from zero and saturating.
    pub fn requantize(self, acc: i64, acc_frac: u32) -> i32 {
        let target = self.frac_bits;
        let scaled = if acc_frac > target {
            round_shift(acc, acc_frac - target)
        } else {
            let up = target - acc_frac;
            if up >= 63 {
                if acc == 0 {
                    0
                } else if acc > 0 {
                    i64::MAX
                } else {
                    i64::MIN
                }
            } else {
                acc.saturating_mul(1i64 << up)
            }
        };
        self.saturate(scaled)
    }
}

impl Default for QFormat {
    fn default() -> Self {
        Self::Q4_8
    }
}

/// Arithmetic right shift with round-half-away-from-zero.
pub fn round_shift(value: i64, shift: u32) -> i64 {
    if shift == 0 {
        return value;
    }
    if shift >= 63 {
        return 0;
    }
    let half = 1i64 << (shift - 1);
    let magnitude = (value.unsigned_abs() + half as u64) >> shift;
    if value < 0 {
        -(magnitude as i64)
    } else {
        magnitude as i64
    }
}

/// A fixed-point scalar: `raw · 2^-frac_bits` with `raw` confined to the
/// format's two's-complement range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fixed {
    raw: i32,
    format: QFormat,
}

impl Fixed {
    pub fn zero(format: QFormat) -> Self {
        Self { raw: 0, format }
    }

    /// Builds a value from a raw integer, saturating into range.
    pub fn from_raw(raw: i64, format: QFormat) -> Self {
        Self {
            raw: format.saturate(raw),
            format,
        }
    }

    /// Nearest representable value (ties away from zero), saturating at the
    /// format bounds. NaN maps to zero.
    pub fn from_f64(x: f64, format: QFormat) -> Self {
        if x.is_nan() {
            return Self::zero(format);
        }
        let scaled = libm::round(libm::ldexp(x, format.frac_bits as i32));
        let raw = if scaled >= format.max_raw() as f64 {
            format.max_raw()
        } else if scaled <= format.min_raw() as f64 {
            format.min_raw()
        } else {
            scaled as i32
        };
        Self { raw, format }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn value(self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }

    pub fn saturating_add(self, rhs: Fixed) -> Fixed {
        debug_assert_eq!(self.format, rhs.format);
        Self::from_raw(self.raw as i64 + rhs.raw as i64, self.format)
    }

    pub fn saturating_sub(self, rhs: Fixed) -> Fixed {
        debug_assert_eq!(self.format, rhs.format);
        Self::from_raw(self.raw as i64 - rhs.raw as i64, self.format)
    }

    /// Full-width product requantized to `self`'s format.
    pub fn saturating_mul(self, rhs: Fixed) -> Fixed {
        let acc = self.raw as i64 * rhs.raw as i64;
        let frac = self.format.frac_bits + rhs.format.frac_bits;
        Self {
            raw: self.format.requantize(acc, frac),
            format: self.format,
        }
    }

    pub fn relu(self) -> Fixed {
        Self {
            raw: self.raw.max(0),
            format: self.format,
        }
    }

    /// Re-expresses the value in another format (rounding and saturating).
    pub fn convert(self, format: QFormat) -> Fixed {
        Self {
            raw: format.requantize(self.raw as i64, self.format.frac_bits),
            format,
        }
    }
}

/// Converts a real to the nearest fixed-point value in `format`.
pub fn to_fixed(x: f64, format: QFormat) -> Fixed {
    Fixed::from_f64(x, format)
}

/// Nonlinearities realized by the NF lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Nonlinearity {
    Sigmoid,
    Tanh,
}

impl Nonlinearity {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Sigmoid => sigmoid(x),
            Nonlinearity::Tanh => libm::tanh(x),
        }
    }

    /// Input domain `[u_min, u_max)` sampled by the hardware tables.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            Nonlinearity::Sigmoid => (-8.0, 8.0),
            Nonlinearity::Tanh => (-4.0, 4.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sigmoid" => Some(Nonlinearity::Sigmoid),
            "tanh" => Some(Nonlinearity::Tanh),
            _ => None,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Default number of entries per table.
pub const DEFAULT_LUT_SIZE: usize = 64;

/// Piecewise-constant table of a nonlinearity over `[u_min, u_max)`.
///
/// Addressing is `floor((u - u_min) / Δu)` with `Δu = (u_max - u_min) / N`,
/// clamped to `[0, N-1]`. Both `N` and the span must be powers of two so the
/// division reduces to a shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    kind: Nonlinearity,
    entries: Vec<Fixed>,
    u_min: f64,
    u_max: f64,
    cell_log2: i32,
}

impl LutTable {
    /// 64-entry table over the kind's default range in the 10-bit entry format.
    pub fn standard(kind: Nonlinearity) -> Self {
        let (lo, hi) = kind.default_range();
        Self::build(kind, DEFAULT_LUT_SIZE, lo, hi, QFormat::LUT_ENTRY)
            .expect("default table parameters are valid")
    }

    /// Samples `kind` at every cell midpoint.
    pub fn build(
        kind: Nonlinearity,
        n: usize,
        u_min: f64,
        u_max: f64,
        entry_format: QFormat,
    ) -> Result<Self> {
        let cell_log2 = Self::check_geometry(n, u_min, u_max)?;
        let delta = (u_max - u_min) / n as f64;
        let entries = (0..n)
            .map(|i| {
                let mid = u_min + (i as f64 + 0.5) * delta;
                Fixed::from_f64(kind.eval(mid), entry_format)
            })
            .collect();
        Ok(Self {
            kind,
            entries,
            u_min,
            u_max,
            cell_log2,
        })
    }

    /// Wraps externally supplied entries (e.g. an imported table).
    pub fn from_entries(
        kind: Nonlinearity,
        u_min: f64,
        u_max: f64,
        entries: Vec<Fixed>,
    ) -> Result<Self> {
        let cell_log2 = Self::check_geometry(entries.len(), u_min, u_max)?;
        if let Some(first) = entries.first() {
            if entries.iter().any(|e| e.format() != first.format()) {
                return Err(Error::InvalidLut("entries use mixed formats".into()));
            }
        }
        Ok(Self {
            kind,
            entries,
            u_min,
            u_max,
            cell_log2,
        })
    }

    fn check_geometry(n: usize, u_min: f64, u_max: f64) -> Result<i32> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidLut(format!("size {n} is not a power of two")));
        }
        let span = u_max - u_min;
        if !(span > 0.0) || !span.is_finite() {
            return Err(Error::InvalidLut(format!("empty range [{u_min}, {u_max})")));
        }
        let (mantissa, exp) = libm::frexp(span);
        if mantissa != 0.5 {
            return Err(Error::InvalidLut(format!("span {span} is not a power of two")));
        }
        // span = 2^(exp-1); cell = span / n
        Ok(exp - 1 - n.trailing_zeros() as i32)
    }

    pub fn kind(&self) -> Nonlinearity {
        self.kind
    }

    pub fn entries(&self) -> &[Fixed] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn cell_width(&self) -> f64 {
        libm::ldexp(1.0, self.cell_log2)
    }

    pub fn entry_format(&self) -> QFormat {
        self.entries
            .first()
            .map(|e| e.format())
            .unwrap_or(QFormat::LUT_ENTRY)
    }

    /// Table address of `u`, computed with integer shifts on the raw value.
    pub fn index(&self, u: Fixed) -> usize {
        let frac = u.format().frac_bits() as i32;
        // u_min is a multiple of the cell width, hence of the input lsb for
        // any sensible format.
        let u_min_raw = libm::round(libm::ldexp(self.u_min, frac)) as i64;
        let diff = u.raw() as i64 - u_min_raw;
        let shift = self.cell_log2 + frac;
        let idx = if shift >= 0 {
            diff >> shift
        } else {
            diff << (-shift)
        };
        idx.clamp(0, self.entries.len() as i64 - 1) as usize
    }

    /// Looks up `u` and returns the entry sign-extended into `u`'s format.
    pub fn eval(&self, u: Fixed) -> Fixed {
        self.entries[self.index(u)].convert(u.format())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q: QFormat = QFormat::Q4_8;

    #[test]
    fn format_validation() {
        assert!(QFormat::new(1, 0).is_err());
        assert!(QFormat::new(12, 12).is_err());
        assert!(QFormat::new(33, 8).is_err());
        let q = QFormat::new(12, 8).unwrap();
        assert_eq!(q, QFormat::Q4_8);
        assert_eq!(q.max_raw(), 2047);
        assert_eq!(q.min_raw(), -2048);
        assert_eq!(q.min_value(), -8.0);
        assert_eq!(q.max_value(), 8.0 - 1.0 / 256.0);
    }

    #[test]
    fn to_fixed_examples() {
        assert_eq!(to_fixed(0.5, Q).raw(), 128);
        assert_eq!(to_fixed(10.0, Q).raw(), 2047);
        assert!((to_fixed(10.0, Q).value() - 7.996).abs() < 1e-3);
        assert_eq!(to_fixed(-8.0, Q).raw(), -2048);
        assert_eq!(to_fixed(-1e9, Q).raw(), -2048);
        assert_eq!(to_fixed(f64::NAN, Q).raw(), 0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let half_lsb = 0.5 / 256.0;
        assert_eq!(to_fixed(half_lsb, Q).raw(), 1);
        assert_eq!(to_fixed(-half_lsb, Q).raw(), -1);
        assert_eq!(round_shift(3, 1), 2);
        assert_eq!(round_shift(-3, 1), -2);
        assert_eq!(round_shift(5, 2), 1);
        assert_eq!(round_shift(-6, 2), -2);
    }

    #[test]
    fn requantize_saturates_wide_accumulators() {
        assert_eq!(Q.requantize(1 << 40, 16), 2047);
        assert_eq!(Q.requantize(-(1 << 40), 16), -2048);
        assert_eq!(Q.requantize(3, 0), 3 * 256);
        assert_eq!(Q.requantize(128 * 256, 16), 128);
    }

    #[test]
    fn fixed_arithmetic_saturates() {
        let a = to_fixed(7.0, Q);
        let b = to_fixed(3.0, Q);
        assert_eq!(a.saturating_add(b).raw(), 2047);
        assert_eq!(to_fixed(-7.0, Q).saturating_sub(b).raw(), -2048);
        assert_eq!(to_fixed(0.5, Q).saturating_mul(to_fixed(0.5, Q)).value(), 0.25);
        assert_eq!(a.saturating_mul(b).raw(), 2047);
        assert_eq!(to_fixed(-1.5, Q).relu().raw(), 0);
    }

    #[test]
    fn lut_index_examples() {
        let sig = LutTable::standard(Nonlinearity::Sigmoid);
        let tanh = LutTable::standard(Nonlinearity::Tanh);
        assert_eq!(sig.cell_width(), 0.25);
        assert_eq!(sig.index(to_fixed(0.0, Q)), 32);
        assert_eq!(sig.index(to_fixed(-8.0, Q)), 0);
        assert_eq!(tanh.index(to_fixed(5.0, Q)), 63);
        assert_eq!(tanh.index(to_fixed(-5.0, Q)), 0);
        assert_eq!(sig.index(to_fixed(7.999, Q)), 63);
    }

    #[test]
    fn lut_eval_examples() {
        let sig = LutTable::standard(Nonlinearity::Sigmoid);
        let tanh = LutTable::standard(Nonlinearity::Tanh);
        assert!((sig.eval(to_fixed(0.0, Q)).value() - 0.5).abs() <= sig.cell_width());
        assert!(tanh.eval(to_fixed(0.0, Q)).value().abs() <= tanh.cell_width());
        // Cell 63 is sampled at u = 7.875, sigma = 0.99962..., which rounds
        // to exactly 1.0 at 8 fractional bits.
        let top = sig.eval(to_fixed(7.999, Q));
        assert_eq!(top, sig.entries()[63].convert(Q));
        let expected = to_fixed(sigmoid(7.875), QFormat::LUT_ENTRY);
        assert_eq!(sig.entries()[63], expected);
        assert!(top.value() > 0.999 && top.value() <= 1.0);
    }

    #[test]
    fn lut_rejects_bad_geometry() {
        assert!(LutTable::build(Nonlinearity::Sigmoid, 48, -8.0, 8.0, Q).is_err());
        assert!(LutTable::build(Nonlinearity::Sigmoid, 64, -6.0, 6.0, Q).is_err());
        assert!(LutTable::build(Nonlinearity::Tanh, 64, 4.0, -4.0, Q).is_err());
        assert!(LutTable::build(Nonlinearity::Tanh, 64, -2.0, 2.0, Q).is_ok());
    }

    #[test]
    fn lut_entries_are_monotone_and_tanh_is_odd() {
        for kind in [Nonlinearity::Sigmoid, Nonlinearity::Tanh] {
            let t = LutTable::standard(kind);
            assert!(t.entries().windows(2).all(|w| w[0].raw() <= w[1].raw()));
        }
        let t = LutTable::standard(Nonlinearity::Tanh);
        let n = t.len();
        let lsb = t.entry_format().lsb();
        for i in 0..n {
            let s = t.entries()[i].value() + t.entries()[n - 1 - i].value();
            assert!(s.abs() <= lsb);
        }
    }

    #[test]
    fn sigmoid_lut_worst_case_error_within_bound() {
        let t = LutTable::standard(Nonlinearity::Sigmoid);
        let bound = 0.25 * t.cell_width() / 2.0 + Q.lsb();
        let mut worst: f64 = 0.0;
        for raw in Q.min_raw()..=Q.max_raw() {
            let u = Fixed::from_raw(raw as i64, Q);
            let err = (t.eval(u).value() - sigmoid(u.value())).abs();
            worst = worst.max(err);
        }
        assert!(worst <= bound, "worst {worst} bound {bound}");
    }

    proptest! {
        #[test]
        fn saturation_and_monotonicity(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let fl = to_fixed(lo, Q);
            let fh = to_fixed(hi, Q);
            prop_assert!(fl.raw() <= fh.raw());
            prop_assert!(fh.value() <= Q.max_value() && fl.value() >= Q.min_value());
        }

        #[test]
        fn round_trip(raw in -2048i64..=2047, total in 2u32..=32, frac_sel in 0u32..32) {
            let fmt = QFormat::new(total, frac_sel % total).unwrap();
            let f = Fixed::from_raw(raw, fmt);
            prop_assert_eq!(to_fixed(f.value(), fmt), f);
        }

        #[test]
        fn lut_index_matches_real_formula(raw in -2048i64..=2047) {
            let u = Fixed::from_raw(raw, Q);
            for kind in [Nonlinearity::Sigmoid, Nonlinearity::Tanh] {
                let t = LutTable::standard(kind);
                let real = libm::floor((u.value() - t.u_min()) / t.cell_width());
                let expected = real.clamp(0.0, (t.len() - 1) as f64) as usize;
                prop_assert_eq!(t.index(u), expected);
            }
        }
    }
}
