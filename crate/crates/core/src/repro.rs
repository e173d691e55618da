//! Drop-in reproducible accumulator.
//!
//! [`ReproValue`] wraps one summation state and exposes the three
//! operations an aggregation engine needs from an intermediate aggregate:
//! accumulate a scalar, accumulate another aggregate, read the result out.
//! Under those operations it is a commutative monoid whose read-out bits
//! depend only on the accumulated multiset.

use crate::error::Error;
use crate::float_core::ReproScalar;
use crate::rsum::{RSumParams, RSumState};

#[derive(Debug, Clone, Copy)]
pub struct ReproValue<T> {
    state: RSumState<T>,
}

impl<T: ReproScalar> ReproValue<T> {
    pub fn new(params: RSumParams) -> Result<Self, Error> {
        Ok(ReproValue {
            state: RSumState::new(params)?,
        })
    }

    pub fn from_state(state: RSumState<T>) -> Self {
        ReproValue { state }
    }

    pub fn state(&self) -> &RSumState<T> {
        &self.state
    }

    pub fn params(&self) -> &RSumParams {
        self.state.params()
    }

    /// Add one finite scalar.
    #[inline]
    pub fn accumulate(&mut self, x: T) -> Result<(), Error> {
        self.state.add_scalar(std::slice::from_ref(&x))
    }

    /// Add a slice of finite scalars through the lane-parallel kernel.
    #[inline]
    pub fn accumulate_slice(&mut self, values: &[T]) -> Result<(), Error> {
        self.state.add_lanes(values)
    }

    /// Merge another accumulator built with compatible parameters.
    pub fn accumulate_repro(&mut self, other: &ReproValue<T>) -> Result<(), Error> {
        self.state.merge(&other.state)
    }

    /// Finalized value; does not mutate the accumulator.
    pub fn read_out(&self) -> T {
        self.state.finalize()
    }

    /// Stable spill format: little-endian `S[0..L)` then `C[0..L)` in the
    /// native precision width.
    pub fn to_bytes(&self) -> Vec<u8> {
        let levels = self.params().levels;
        let width = T::BYTE_WIDTH;
        let mut out = Vec::with_capacity(2 * levels * width);
        for &s in self.state.sums() {
            out.extend_from_slice(&s.to_bits_u64().to_le_bytes()[..width]);
        }
        for &c in self.state.carries() {
            out.extend_from_slice(&c.to_bits_u64().to_le_bytes()[..width]);
        }
        out
    }

    /// Restore a spilled accumulator, validating every state invariant.
    pub fn from_bytes(params: RSumParams, bytes: &[u8]) -> Result<Self, Error> {
        let width = T::BYTE_WIDTH;
        let expect = 2 * params.levels * width;
        if bytes.len() != expect {
            return Err(Error::InvalidState(format!(
                "serialized state is {} bytes, expected {expect}",
                bytes.len()
            )));
        }
        let read = |chunk: &[u8]| {
            let mut raw = [0u8; 8];
            raw[..width].copy_from_slice(chunk);
            T::from_bits_u64(u64::from_le_bytes(raw))
        };
        let values: Vec<T> = bytes.chunks_exact(width).map(read).collect();
        let (sums, carries) = values.split_at(params.levels);
        Ok(ReproValue {
            state: RSumState::from_parts(params, sums, carries)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RSumParams {
        RSumParams::for_precision::<f64>(2)
    }

    fn values(n: usize, seed: u64) -> Vec<f64> {
        let mut x = seed | 1;
        (0..n)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                1.0 + (x >> 12) as f64 * 2f64.powi(-52)
            })
            .collect()
    }

    #[test]
    fn single_value_read_out() {
        let mut rv = ReproValue::<f64>::new(params()).unwrap();
        rv.accumulate(5.0).unwrap();
        assert_eq!(rv.read_out(), 5.0);
    }

    #[test]
    fn toy_walkthrough_via_repro_value() {
        use crate::float_core::toy::Toy;
        let p = RSumParams {
            levels: 2,
            w: 2,
            first_exp: 4,
            lanes: 1,
            block: 1,
        };
        let mut rv = ReproValue::<Toy<4>>::new(p).unwrap();
        for v in [1.3125, 9.0, 4.25] {
            rv.accumulate(Toy::new(v)).unwrap();
        }
        assert_eq!(rv.read_out().to_f64(), 14.0);
    }

    #[test]
    fn cancellation_is_exact() {
        for x in [5.0f64, 0.1, 9.75e-200, 1.6e12] {
            let mut rv = ReproValue::<f64>::new(params()).unwrap();
            rv.accumulate(x).unwrap();
            rv.accumulate(-x).unwrap();
            assert_eq!(rv.read_out().to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn fresh_is_identity_and_merge_trees_agree() {
        let vals = values(4096, 99);
        let mut whole = ReproValue::<f64>::new(params()).unwrap();
        whole.accumulate_slice(&vals).unwrap();

        let mut with_fresh = whole;
        with_fresh
            .accumulate_repro(&ReproValue::new(params()).unwrap())
            .unwrap();
        assert_eq!(
            with_fresh.state().level_bits(),
            whole.state().level_bits()
        );

        // Eight thread-local accumulators folded in two tree shapes.
        let parts: Vec<ReproValue<f64>> = vals
            .chunks(512)
            .map(|c| {
                let mut rv = ReproValue::<f64>::new(params()).unwrap();
                rv.accumulate_slice(c).unwrap();
                rv
            })
            .collect();

        // Left fold.
        let mut left = parts[0];
        for p in &parts[1..] {
            left.accumulate_repro(p).unwrap();
        }
        // Pairwise tree.
        let mut layer = parts.clone();
        while layer.len() > 1 {
            layer = layer
                .chunks(2)
                .map(|pair| {
                    let mut m = pair[0];
                    if pair.len() == 2 {
                        m.accumulate_repro(&pair[1]).unwrap();
                    }
                    m
                })
                .collect();
        }
        assert_eq!(left.state().level_bits(), layer[0].state().level_bits());
        assert_eq!(left.state().level_bits(), whole.state().level_bits());
        assert_eq!(left.read_out().to_bits(), whole.read_out().to_bits());
    }

    #[test]
    fn per_level_precision_is_permutation_invariant() {
        let vals = values(512, 3);
        let mut rev = vals.clone();
        rev.reverse();
        for levels in 1..=4 {
            let p = RSumParams::for_precision::<f64>(levels);
            let mut a = ReproValue::<f64>::new(p).unwrap();
            let mut b = ReproValue::<f64>::new(p).unwrap();
            for &v in &vals {
                a.accumulate(v).unwrap();
            }
            for &v in &rev {
                b.accumulate(v).unwrap();
            }
            assert_eq!(a.read_out().to_bits(), b.read_out().to_bits());
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut rv = ReproValue::<f64>::new(params()).unwrap();
        rv.accumulate_slice(&values(1000, 5)).unwrap();
        let bytes = rv.to_bytes();
        assert_eq!(bytes.len(), 2 * 2 * 8);
        let back = ReproValue::<f64>::from_bytes(*rv.params(), &bytes).unwrap();
        assert_eq!(back.state().level_bits(), rv.state().level_bits());

        let mut rv32 = ReproValue::<f32>::new(RSumParams::for_precision::<f32>(3)).unwrap();
        rv32.accumulate(7.5f32).unwrap();
        let bytes = rv32.to_bytes();
        assert_eq!(bytes.len(), 2 * 3 * 4);
        let back = ReproValue::<f32>::from_bytes(*rv32.params(), &bytes).unwrap();
        assert_eq!(back.read_out(), 7.5f32);
    }

    #[test]
    fn deserialization_rejects_corruption() {
        let mut rv = ReproValue::<f64>::new(params()).unwrap();
        rv.accumulate(2.0).unwrap();
        let mut bytes = rv.to_bytes();
        assert!(ReproValue::<f64>::from_bytes(*rv.params(), &bytes[1..]).is_err());
        bytes[7] ^= 0x80; // flip the sign of S[0]
        assert!(ReproValue::<f64>::from_bytes(*rv.params(), &bytes).is_err());
    }
}
