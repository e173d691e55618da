//! Bit-level floating-point primitives.
//!
//! Everything in the summation machinery is built from three ingredients:
//! the unit in the first place (`ufp`), the unit in the last place (`ulp`),
//! and the error-free extraction step that splits a value into a coarse
//! contribution plus an exact remainder. All of them are exact bit
//! manipulations; no rounding happens outside the two additions inside
//! [`eft_extract`].

use crate::error::Error;

/// Description of a binary floating-point format.
///
/// `m` counts the fractional mantissa bits (23 for binary32, 52 for
/// binary64), matching the convention `x = M · 2^E`, `M ∈ [1, 2)`,
/// `ulp(x) = 2^(E−m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatFormat {
    pub m: u32,
    pub e_min: i32,
    pub e_max: i32,
}

impl FloatFormat {
    pub const BINARY32: FloatFormat = FloatFormat {
        m: 23,
        e_min: -126,
        e_max: 127,
    };

    pub const BINARY64: FloatFormat = FloatFormat {
        m: 52,
        e_min: -1022,
        e_max: 1023,
    };

    /// Small software-emulated format used by golden tests.
    pub const fn toy(m: u32) -> FloatFormat {
        FloatFormat {
            m,
            e_min: -40,
            e_max: 40,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.m < 2 {
            return Err(Error::InvalidParams(format!("mantissa bits {} < 2", self.m)));
        }
        if self.e_min >= self.e_max {
            return Err(Error::InvalidParams(format!(
                "exponent range [{}, {}] is empty",
                self.e_min, self.e_max
            )));
        }
        Ok(())
    }
}

/// Scalar type usable by the reproducible summation kernels.
///
/// Implemented by `f32` and `f64` (native hardware arithmetic,
/// round-to-nearest-even) and by the emulated [`toy::Toy`] formats used in
/// golden tests. All arithmetic must round to the format described by
/// [`ReproScalar::format`].
pub trait ReproScalar:
    Copy + PartialEq + PartialOrd + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Default extractor-ratio exponent W for this precision.
    const DEFAULT_W: u32;
    /// Default lane count V for this precision.
    const DEFAULT_LANES: usize;
    /// Serialized width in bytes.
    const BYTE_WIDTH: usize;

    fn format() -> FloatFormat;

    fn zero() -> Self;
    /// Exact 2^k. `k` must lie within the format's exponent range.
    fn pow2(k: i32) -> Self;
    fn from_f64(x: f64) -> Self;
    /// Exact widening conversion (every value of the format is an f64).
    fn to_f64(self) -> f64;

    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;

    fn abs(self) -> Self;
    fn floor(self) -> Self;
    fn is_finite(self) -> bool;

    /// Unit in the first place: 2^E for `x = M·2^E`, `M ∈ [1,2)`; +0 for ±0.
    /// Caller must pass a finite value.
    fn ufp_raw(self) -> Self;

    /// Unit in the last place: 2^(E−m); denormals map to 2^(e_min−m).
    /// Caller must pass a finite nonzero value.
    fn ulp_raw(self) -> Self;

    /// Unbiased exponent E of a finite nonzero value.
    fn exponent(self) -> i32;

    /// Bit pattern widened to 64 bits, for bit-exact comparisons.
    fn to_bits_u64(self) -> u64;
    fn from_bits_u64(bits: u64) -> Self;
}

macro_rules! impl_native_scalar {
    ($t:ty, $bits:ty, $fmt:expr, $w:expr, $lanes:expr, $mant_bits:expr, $exp_bias:expr) => {
        impl ReproScalar for $t {
            const DEFAULT_W: u32 = $w;
            const DEFAULT_LANES: usize = $lanes;
            const BYTE_WIDTH: usize = std::mem::size_of::<$t>();

            #[inline]
            fn format() -> FloatFormat {
                $fmt
            }

            #[inline]
            fn zero() -> Self {
                0.0
            }

            #[inline]
            fn pow2(k: i32) -> Self {
                debug_assert!(k >= $fmt.e_min && k <= $fmt.e_max);
                <$t>::from_bits((((k + $exp_bias) as $bits) << $mant_bits) as $bits)
            }

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn add(self, rhs: Self) -> Self {
                self + rhs
            }

            #[inline]
            fn sub(self, rhs: Self) -> Self {
                self - rhs
            }

            #[inline]
            fn mul(self, rhs: Self) -> Self {
                self * rhs
            }

            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }

            #[inline]
            fn floor(self) -> Self {
                <$t>::floor(self)
            }

            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            #[inline]
            fn ufp_raw(self) -> Self {
                debug_assert!(self.is_finite());
                let bits = self.to_bits() & !(1 << (<$bits>::BITS - 1));
                if bits == 0 {
                    return 0.0;
                }
                let exp_field = bits >> $mant_bits;
                if exp_field > 0 {
                    <$t>::from_bits(exp_field << $mant_bits)
                } else {
                    // Denormal: the highest set mantissa bit is the ufp.
                    <$t>::from_bits(1 << (<$bits>::BITS - 1 - bits.leading_zeros()))
                }
            }

            #[inline]
            fn ulp_raw(self) -> Self {
                debug_assert!(self.is_finite() && self != 0.0);
                let e = self.exponent();
                let shifted = e - $fmt.m as i32;
                if shifted >= $fmt.e_min {
                    Self::pow2(shifted)
                } else {
                    // 2^shifted is denormal; clamp denormal inputs to the
                    // format quantum 2^(e_min - m).
                    let pos = (shifted - ($fmt.e_min - $fmt.m as i32)).max(0);
                    <$t>::from_bits(1 << pos)
                }
            }

            #[inline]
            fn exponent(self) -> i32 {
                debug_assert!(self.is_finite() && self != 0.0);
                let bits = self.to_bits() & !(1 << (<$bits>::BITS - 1));
                let exp_field = bits >> $mant_bits;
                if exp_field > 0 {
                    exp_field as i32 - $exp_bias
                } else {
                    ($fmt.e_min - $fmt.m as i32) + (<$bits>::BITS - 1 - bits.leading_zeros()) as i32
                }
            }

            #[inline]
            fn to_bits_u64(self) -> u64 {
                self.to_bits() as u64
            }

            #[inline]
            fn from_bits_u64(bits: u64) -> Self {
                <$t>::from_bits(bits as $bits)
            }
        }
    };
}

impl_native_scalar!(f32, u32, FloatFormat::BINARY32, 18, 8, 23, 127);
impl_native_scalar!(f64, u64, FloatFormat::BINARY64, 40, 4, 52, 1023);

/// Unit in the first place of a finite value; `ufp(±0) = +0`.
pub fn ufp<T: ReproScalar>(x: T) -> Result<T, Error> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(x.ufp_raw())
}

/// Unit in the last place of a finite nonzero value.
pub fn ulp<T: ReproScalar>(x: T) -> Result<T, Error> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    if x == T::zero() {
        return Err(Error::UlpOfZero);
    }
    Ok(x.ulp_raw())
}

/// Error-free extraction of `b` against `extractor`.
///
/// Computes `q := (extractor ⊕ b) ⊖ extractor` and `r := b ⊖ q`. `q` is an
/// integer multiple of `ulp(extractor)`. When `|b|` is small enough relative
/// to the extractor (the summation kernels guarantee
/// `|b| ≤ 2^W · ulp(extractor)` with `W ≤ m−2`), both results are exact:
/// `q + r = b` with no rounding, and `extractor ⊕ q` is exact.
pub fn eft_extract<T: ReproScalar>(extractor: T, b: T) -> Result<(T, T), Error> {
    if !extractor.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite);
    }
    let q = extractor.add(b).sub(extractor);
    let r = b.sub(q);
    Ok((q, r))
}

pub mod toy {
    //! Software-emulated small floating-point formats.
    //!
    //! Used by golden tests to replay worked examples in formats with a
    //! handful of mantissa bits. Values are stored as exact `f64`; every
    //! operation re-rounds to the emulated format. The emulation is exact as
    //! long as intermediate real results fit in an `f64` mantissa, which
    //! holds for every format with `m ≤ 20` and moderate exponents.

    use super::{FloatFormat, ReproScalar};

    /// Round an exact `f64` value to the given format.
    ///
    /// `trunc` selects truncation instead of round-to-nearest-even; it exists
    /// only to replay textbook examples that use a truncating rounder.
    pub fn round_to_format(fmt: &FloatFormat, x: f64, trunc: bool) -> f64 {
        if x == 0.0 {
            return x;
        }
        let e = x.abs().exponent().max(fmt.e_min);
        let grid = f64::pow2(e - fmt.m as i32);
        let scaled = x / grid;
        let units = if trunc {
            scaled.trunc()
        } else {
            scaled.round_ties_even()
        };
        let v = units * grid;
        assert!(
            v == 0.0 || v.abs().exponent() <= fmt.e_max,
            "toy-format overflow: {x}"
        );
        v
    }

    /// A value of the toy format with `M` fractional mantissa bits.
    #[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
    pub struct Toy<const M: u32>(f64);

    impl<const M: u32> Toy<M> {
        pub fn new(x: f64) -> Self {
            Toy(round_to_format(&FloatFormat::toy(M), x, false))
        }

        pub fn get(self) -> f64 {
            self.0
        }
    }

    impl<const M: u32> std::fmt::Display for Toy<M> {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, "{}", self.0)
        }
    }

    impl<const M: u32> ReproScalar for Toy<M> {
        const DEFAULT_W: u32 = 2;
        const DEFAULT_LANES: usize = 1;
        const BYTE_WIDTH: usize = 8;

        fn format() -> FloatFormat {
            FloatFormat::toy(M)
        }

        fn zero() -> Self {
            Toy(0.0)
        }

        fn pow2(k: i32) -> Self {
            Toy(f64::pow2(k))
        }

        fn from_f64(x: f64) -> Self {
            Toy::new(x)
        }

        fn to_f64(self) -> f64 {
            self.0
        }

        fn add(self, rhs: Self) -> Self {
            Toy::new(self.0 + rhs.0)
        }

        fn sub(self, rhs: Self) -> Self {
            Toy::new(self.0 - rhs.0)
        }

        fn mul(self, rhs: Self) -> Self {
            Toy::new(self.0 * rhs.0)
        }

        fn abs(self) -> Self {
            Toy(self.0.abs())
        }

        fn floor(self) -> Self {
            Toy(self.0.floor())
        }

        fn is_finite(self) -> bool {
            self.0.is_finite()
        }

        fn ufp_raw(self) -> Self {
            Toy(self.0.ufp_raw())
        }

        fn ulp_raw(self) -> Self {
            let e = self.0.exponent();
            Toy(f64::pow2(e.max(Self::format().e_min) - M as i32))
        }

        fn exponent(self) -> i32 {
            self.0.exponent()
        }

        fn to_bits_u64(self) -> u64 {
            self.0.to_bits()
        }

        fn from_bits_u64(bits: u64) -> Self {
            Toy(f64::from_bits(bits))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::{round_to_format, Toy};
    use super::*;

    #[test]
    fn ufp_basics() {
        assert_eq!(ufp(1.5f64).unwrap(), 1.0);
        assert_eq!(ufp(-6.5f64).unwrap(), 4.0);
        assert_eq!(ufp(0.15625f64).unwrap(), 0.125);
        assert_eq!(ufp(0.0f64).unwrap().to_bits(), 0.0f64.to_bits());
        assert_eq!(ufp(-0.0f64).unwrap().to_bits(), 0.0f64.to_bits());
        assert!(ufp(f64::NAN).is_err());
        assert!(ufp(f64::INFINITY).is_err());
    }

    #[test]
    fn ufp_denormal() {
        let d = f64::from_bits(0b1011); // 11 * 2^-1074
        assert_eq!(ufp(d).unwrap(), f64::from_bits(0b1000));
    }

    #[test]
    fn ulp_basics() {
        assert_eq!(ulp(1.0f64).unwrap(), (2.0f64).powi(-52));
        assert_eq!(ulp(0.5f32).unwrap(), (2.0f32).powi(-24));
        assert_eq!(ulp(Toy::<4>::new(27.0)).unwrap().get(), 1.0);
        assert!(ulp(0.0f64).is_err());
        assert!(ulp(f64::NAN).is_err());
    }

    #[test]
    fn ufp_bounds_hold_on_samples() {
        for &x in &[1.0f64, 1.5, 1.9999, 2.0, 3.75, 1e-300, 123456.789, -0.1] {
            let u = ufp(x).unwrap();
            assert!(u <= x.abs() && x.abs() < 2.0 * u, "x={x}");
            assert_eq!(ulp(x).unwrap(), u * (2.0f64).powi(-52));
        }
    }

    #[test]
    fn exponent_matches_ufp() {
        for &x in &[1.0f64, -6.5, 0.15625, 1e300, 2.2250738585072014e-308] {
            assert_eq!(f64::pow2(x.exponent()), ufp(x).unwrap());
        }
    }

    // Worked three-bit example: a = 1.010_2, b = 1.101_2 · 2^-2.
    #[test]
    fn eft_extract_toy_m3() {
        let a = Toy::<3>::new(1.25);
        let b = Toy::<3>::new(0.40625);
        let (q, r) = eft_extract(a, b).unwrap();
        assert_eq!(q.get(), 0.375);
        assert_eq!(r.get(), 0.03125);
        assert_eq!(q.get() + r.get(), b.get());
    }

    #[test]
    fn eft_extract_zero() {
        let (q, r) = eft_extract(24.0f64, 0.0).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(r, 0.0);
    }

    // Half precision (m = 10): 26.046875 + 2.8125 is exact.
    #[test]
    fn half_precision_exact_sum() {
        let a = Toy::<10>::new(26.046875);
        let b = Toy::<10>::new(2.8125);
        assert_eq!(a.get(), 26.046875);
        assert_eq!(b.get(), 2.8125);
        assert_eq!(a.add(b).get(), 28.859375);
    }

    // Two-bit truncating format: (a ⊕ b) ⊕ c is exact while a ⊕ (b ⊕ c)
    // rounds twice; the results differ although the inputs are identical.
    #[test]
    fn truncating_toy_m2_associativity_failure() {
        let fmt = FloatFormat::toy(2);
        let tadd = |x: f64, y: f64| round_to_format(&fmt, x + y, true);
        let a = 1.25;
        let b = 1.25;
        let c = 3.5;
        let left = tadd(tadd(a, b), c);
        let right = tadd(a, tadd(b, c));
        assert_eq!(left, 6.0);
        assert_eq!(right, 5.0);
        assert_ne!(left, right);
    }

    // Exhaustive check of the extraction identity over a small toy format:
    // for every representable (able) pair in the guaranteed region, q + r
    // reproduces b exactly and the extractor absorbs q without rounding.
    #[test]
    fn eft_identity_brute_force_m4() {
        let m = 4u32;
        let e_a = 4i32;
        // W = 2 = m - 2, the widest allowed ratio: |b| <= 2^W * ulp(a) = 4.
        let a_vals: Vec<f64> = (16..32).map(|k| k as f64 * 2f64.powi(e_a - m as i32)).collect();
        let mut b_vals = vec![0.0];
        for e in -6..=2i32 {
            for k in 16..32 {
                let v = k as f64 * 2f64.powi(e - m as i32);
                if v <= 4.0 {
                    b_vals.push(v);
                    b_vals.push(-v);
                }
            }
        }
        for &av in &a_vals {
            // Extractors sit in [1.5u, 1.75u) during summation.
            if !(1.5 * 16.0..1.75 * 16.0).contains(&av) {
                continue;
            }
            let a = Toy::<4>::new(av);
            for &bv in &b_vals {
                let b = Toy::<4>::new(bv);
                let (q, r) = eft_extract(a, b).unwrap();
                // Exact recovery, checked in f64 which is exact here.
                assert_eq!(
                    q.get() + r.get(),
                    b.get(),
                    "a={av} b={bv} q={} r={}",
                    q.get(),
                    r.get()
                );
                // q is a multiple of ulp(a) and the absorption is exact.
                let ulp_a = a.ulp_raw().get();
                assert_eq!(q.get() % ulp_a, 0.0, "a={av} b={bv}");
                assert_eq!(a.add(q).get(), a.get() + q.get(), "a={av} b={bv}");
            }
        }
    }

    #[test]
    fn toy_round_ties_even() {
        let fmt = FloatFormat::toy(4);
        // 1.00001_2 is a tie between 1.0000 and 1.0001; even wins.
        assert_eq!(round_to_format(&fmt, 1.03125, false), 1.0);
        // 1.00011_2 ties between 1.0001 and 1.0010; even wins (1.0010).
        assert_eq!(round_to_format(&fmt, 1.09375, false), 1.125);
    }
}
