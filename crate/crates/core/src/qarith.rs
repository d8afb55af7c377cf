//! Fixed-point quantization primitives.
//!
//! Formats are written `s<frac>` (sign + `frac` fraction bits, range [-1, 1 - 2^-frac]),
//! `u<frac>` (unsigned fraction) and `s16q9` for the 16-bit accumulator with six
//! integer bits. Rounding is half-away-from-zero everywhere; out-of-range values
//! saturate.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    fraction_bits: u8,
    integer_bits: u8,
    signed: bool,
}

/// Input units and weights: 4 fraction bits plus sign.
pub const S4: QFormat = QFormat::signed_fraction(4);
/// Hidden activations after the quantized ReLU.
pub const U4: QFormat = QFormat::unsigned_fraction(4);
/// Signed 16-bit accumulator, 6 integer and 9 fraction bits.
pub const ACC: QFormat = QFormat {
    fraction_bits: 9,
    integer_bits: 6,
    signed: true,
};

impl QFormat {
    pub fn new(fraction_bits: u8, integer_bits: u8, signed: bool) -> Result<Self> {
        let total = u32::from(signed) + u32::from(integer_bits) + u32::from(fraction_bits);
        if fraction_bits == 0 || total > 32 {
            return Err(Error::Config(format!(
                "fixed-point format with {fraction_bits} fraction / {integer_bits} integer bits is not representable"
            )));
        }
        Ok(QFormat {
            fraction_bits,
            integer_bits,
            signed,
        })
    }

    pub const fn signed_fraction(fraction_bits: u8) -> Self {
        QFormat {
            fraction_bits,
            integer_bits: 0,
            signed: true,
        }
    }

    pub const fn unsigned_fraction(fraction_bits: u8) -> Self {
        QFormat {
            fraction_bits,
            integer_bits: 0,
            signed: false,
        }
    }

    pub fn fraction_bits(self) -> u32 {
        u32::from(self.fraction_bits)
    }

    pub fn integer_bits(self) -> u32 {
        u32::from(self.integer_bits)
    }

    pub fn is_signed(self) -> bool {
        self.signed
    }

    pub fn total_bits(self) -> u32 {
        u32::from(self.signed) + self.integer_bits() + self.fraction_bits()
    }

    fn magnitude_bits(self) -> u32 {
        self.integer_bits() + self.fraction_bits()
    }

    pub fn code_min(self) -> i64 {
        if self.signed {
            -(1i64 << self.magnitude_bits())
        } else {
            0
        }
    }

    pub fn code_max(self) -> i64 {
        (1i64 << self.magnitude_bits()) - 1
    }

    pub fn step(self) -> f64 {
        (-(self.fraction_bits() as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        self.code_min() as f64 * self.step()
    }

    pub fn max_value(self) -> f64 {
        self.code_max() as f64 * self.step()
    }

    pub fn value(self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    pub fn contains(self, code: i64) -> bool {
        (self.code_min()..=self.code_max()).contains(&code)
    }

    /// Clamp a wide code into range; the flag reports whether clamping happened.
    pub fn saturate(self, code: i64) -> (i64, bool) {
        let c = code.clamp(self.code_min(), self.code_max());
        (c, c != code)
    }

    pub fn quantize(self, x: f64) -> QValue {
        debug_assert!(x.is_finite(), "quantize expects a finite input");
        let scaled = (x * (self.fraction_bits() as f64).exp2()).round();
        let code = if scaled.is_nan() {
            0
        } else {
            // saturating float->int cast, then clamp into the format
            (scaled as i64).clamp(self.code_min(), self.code_max())
        };
        QValue { code, format: self }
    }

    /// Re-express a code carrying `from_frac` fraction bits in this format,
    /// rounding half away from zero and saturating. Integer-only.
    pub fn requantize(self, code: i64, from_frac: u32) -> i64 {
        let aligned = align(code, from_frac, self.fraction_bits());
        self.saturate(aligned).0
    }

    /// Short tag used in weight files.
    pub fn tag(self) -> String {
        match (self.signed, self.integer_bits) {
            (true, 0) => format!("s{}", self.fraction_bits),
            (false, 0) => format!("u{}", self.fraction_bits),
            _ => format!(
                "{}{}q{}",
                if self.signed { "s" } else { "u" },
                self.total_bits(),
                self.fraction_bits
            ),
        }
    }

    pub fn parse_tag(tag: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown fixed-point format `{tag}`"));
        let (signed, rest) = match tag.as_bytes().first() {
            Some(b's') => (true, &tag[1..]),
            Some(b'u') => (false, &tag[1..]),
            _ => return Err(bad()),
        };
        match rest.split_once('q') {
            None => {
                let frac: u8 = rest.parse().map_err(|_| bad())?;
                QFormat::new(frac, 0, signed)
            }
            Some((total, frac)) => {
                let total: u8 = total.parse().map_err(|_| bad())?;
                let frac: u8 = frac.parse().map_err(|_| bad())?;
                let int = total.checked_sub(frac + u8::from(signed)).ok_or_else(bad)?;
                QFormat::new(frac, int, signed)
            }
        }
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QValue {
    pub code: i64,
    pub format: QFormat,
}

impl QValue {
    pub fn value(self) -> f64 {
        self.format.value(self.code)
    }
}

/// Standalone form of [`QFormat::quantize`].
pub fn quantize(x: f64, fmt: QFormat) -> QValue {
    fmt.quantize(x)
}

/// ReLU followed by quantization into an unsigned format.
pub fn quantized_relu(x: f64, fmt: QFormat) -> QValue {
    fmt.quantize(x.max(0.0))
}

/// Arithmetic right shift rounding half away from zero.
pub fn round_shift_right(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        return v;
    }
    let half = 1i64 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

/// Move a code from `from_frac` to `to_frac` fraction bits.
pub fn align(code: i64, from_frac: u32, to_frac: u32) -> i64 {
    if to_frac >= from_frac {
        code << (to_frac - from_frac)
    } else {
        round_shift_right(code, from_frac - to_frac)
    }
}

/// Saturating accumulator. Saturation is counted, never raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    format: QFormat,
    code: i64,
    saturations: u32,
}

impl Accumulator {
    pub fn new(format: QFormat) -> Self {
        Accumulator {
            format,
            code: 0,
            saturations: 0,
        }
    }

    pub fn with_code(format: QFormat, code: i64) -> Self {
        let (code, sat) = format.saturate(code);
        Accumulator {
            format,
            code,
            saturations: u32::from(sat),
        }
    }

    /// Add a term already expressed at the accumulator's scale.
    #[inline]
    pub fn add(&mut self, term: i64) {
        let (code, sat) = self.format.saturate(self.code + term);
        self.code = code;
        self.saturations += u32::from(sat);
    }

    pub fn code(&self) -> i64 {
        self.code
    }

    pub fn saturations(&self) -> u32 {
        self.saturations
    }

    pub fn value(&self) -> QValue {
        QValue {
            code: self.code,
            format: self.format,
        }
    }
}

/// One-shot saturating add in the accumulator format.
pub fn acc_add(acc: QValue, term: i64) -> (QValue, bool) {
    let (code, sat) = acc.format.saturate(acc.code + term);
    (
        QValue {
            code,
            format: acc.format,
        },
        sat,
    )
}
