//! bfloat16 scalar: 1 sign, 8 exponent, 7 mantissa bits.
//!
//! This is the storage type for activations and weights. All arithmetic
//! happens in f32; bf16 values only ever enter a computation through
//! [`Bf16::to_f32`], which is exact.

/// A bfloat16 value stored as its raw bit pattern.
///
/// `PartialEq`/`Eq` compare bit patterns, which is what the determinism
/// contracts need (`-0.0 != 0.0`, NaN payloads distinguish).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ZERO: Bf16 = Bf16(0);
    pub const ONE: Bf16 = Bf16(0x3F80);

    /// Convert with round-to-nearest-even. Total: NaN inputs map to a
    /// sign-preserving quiet NaN, infinities and zeros pass through.
    #[inline]
    pub fn from_f32(x: f32) -> Self {
        let bits = x.to_bits();
        if x.is_nan() {
            // Rounding could carry a payload into the infinity pattern.
            return Bf16(((bits >> 16) as u16 & 0x8000) | 0x7FC0);
        }
        // Round to nearest even: bias by 0x7FFF plus the parity of the
        // bit that becomes the new LSB.
        let bias = 0x7FFF + ((bits >> 16) & 1);
        Bf16(((bits + bias) >> 16) as u16)
    }

    /// Exact widening back to f32 (zero-fill the dropped mantissa bits).
    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    #[inline]
    pub fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    #[inline]
    pub fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        (self.0 & 0x7F80) == 0x7F80 && (self.0 & 0x007F) != 0
    }
}

impl From<f32> for Bf16 {
    fn from(x: f32) -> Self {
        Bf16::from_f32(x)
    }
}

impl From<Bf16> for f32 {
    fn from(x: Bf16) -> f32 {
        x.to_f32()
    }
}

impl std::fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.0, self.to_f32())
    }
}

/// Round an f32 to the nearest bf16 value and widen back. The result is
/// the f32 the rest of the pipeline sees for a bf16-stored number.
#[inline]
pub fn quantize_f32(x: f32) -> f32 {
    Bf16::from_f32(x).to_f32()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_and_signed_zero_patterns() {
        assert_eq!(Bf16::from_f32(1.0).to_bits(), 0x3F80);
        assert_eq!(Bf16::from_f32(0.0).to_bits(), 0x0000);
        assert_eq!(Bf16::from_f32(-0.0).to_bits(), 0x8000);
    }

    #[test]
    fn tie_rounds_to_even_mantissa() {
        // 1.0 + 2^-8 sits exactly between 0x3F80 and 0x3F81; the even
        // mantissa wins. Built bit-level so the tie is exact.
        let tie = f32::from_bits(0x3F80_8000);
        assert_eq!(tie, 1.0 + 2f32.powi(-8));
        assert_eq!(Bf16::from_f32(tie).to_bits(), 0x3F80);
        // One ulp above the tie rounds up.
        let above = f32::from_bits(0x3F80_8001);
        assert_eq!(Bf16::from_f32(above).to_bits(), 0x3F81);
        // A tie whose even neighbour is above: 1.0 + 3*2^-8.
        let tie_up = f32::from_bits(0x3F81_8000);
        assert_eq!(Bf16::from_f32(tie_up).to_bits(), 0x3F82);
    }

    #[test]
    fn round_trip_touches_only_low_mantissa_bits() {
        // f32 -> bf16 -> f32 may change the f32 pattern only in a way
        // consistent with rounding at bit 16: the widened result always
        // has zero low bits, and |result - x| is at most half a bf16 ulp.
        let mut x = 0x0000_0001u32;
        for _ in 0..2000 {
            let f = f32::from_bits(x);
            if f.is_finite() {
                let back = quantize_f32(f);
                assert_eq!(back.to_bits() & 0xFFFF, 0, "low bits must clear for {f}");
                let ulp = (f32::from_bits(back.to_bits().wrapping_add(1 << 16))
                    - f32::from_bits(back.to_bits()))
                .abs();
                assert!((back - f).abs() <= ulp, "rounded too far for {f}");
            }
            x = x.wrapping_mul(2654435761).wrapping_add(12345);
        }
    }

    #[test]
    fn nan_becomes_quiet_nan() {
        let q = Bf16::from_f32(f32::NAN);
        assert!(q.is_nan());
        assert_eq!(q.to_bits() & 0x7FC0, 0x7FC0);
        let neg = Bf16::from_f32(f32::from_bits(0xFF80_0001));
        assert!(neg.is_nan());
        assert_eq!(neg.to_bits() & 0x8000, 0x8000);
    }

    #[test]
    fn infinities_pass_through() {
        assert_eq!(Bf16::from_f32(f32::INFINITY).to_f32(), f32::INFINITY);
        assert_eq!(Bf16::from_f32(f32::NEG_INFINITY).to_f32(), f32::NEG_INFINITY);
        // f32::MAX is closer to 2^128 than to the largest finite bf16.
        assert_eq!(Bf16::from_f32(f32::MAX).to_f32(), f32::INFINITY);
    }
}
