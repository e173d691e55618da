//! Reproducible summation state machine.
//!
//! The accumulator keeps `L` running sums `S^(l)` spaced `2^W` apart in
//! magnitude, each confined to `[1.5·ufp, 1.75·ufp)`, plus `L` carry
//! counters `C^(l)` recording the `0.25·ufp` quanta moved out to keep them
//! there. Every input value is split across the levels by error-free
//! extraction against the fixed per-level extractor value `1.5·2^(E_l)`,
//! starting at the level matching the value's own magnitude, so each
//! value's contribution to a given exponent grid is a function of the value
//! alone. All level arithmetic is exact grid arithmetic; the finalized
//! result therefore depends only on the input multiset, never on the
//! order, chunking, lane width, or merge tree.

use crate::error::Error;
use crate::float_core::ReproScalar;

/// Largest supported level count.
pub const MAX_LEVELS: usize = 4;

/// Configuration of the summation state.
///
/// Everything here participates in the bitwise-agreement contract: two
/// states agree bit-for-bit on the same input multiset only if `levels`,
/// `w`, `first_exp` and the scalar format are identical. `lanes` and
/// `block` merely select the execution path and never change result bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RSumParams {
    /// Level count L (1..=4).
    pub levels: usize,
    /// Extractor-ratio exponent W: consecutive levels are 2^W apart.
    pub w: u32,
    /// Exponent f of the first-level extractor in a fresh state.
    pub first_exp: i32,
    /// Lane count V of the lane-parallel kernel (power of two, <= 8).
    pub lanes: usize,
    /// Block length NB between carry propagations in the lane kernel.
    pub block: usize,
}

impl RSumParams {
    /// Default parameters for a native precision: W = 18 (single) or
    /// W = 40 (double), first level at 1.5·2^0, one vector register of
    /// lanes, and the largest safe block length capped at 256.
    pub fn for_precision<T: ReproScalar>(levels: usize) -> RSumParams {
        let fmt = T::format();
        let w = T::DEFAULT_W;
        RSumParams {
            levels,
            w,
            first_exp: 0,
            lanes: T::DEFAULT_LANES,
            block: Self::block_bound(fmt.m, w).min(256),
        }
    }

    /// Largest block length for which deferred carry propagation provably
    /// cannot push a running sum out of its `0.25·ufp` slack: with
    /// per-element contributions bounded by `2^W·ulp`, that is
    /// `2^(m−W−2)` (1024 for binary64 at W = 40, 8 for binary32 at W = 18).
    pub fn block_bound(m: u32, w: u32) -> usize {
        1usize << (m - w - 2)
    }

    pub fn validate<T: ReproScalar>(&self) -> Result<(), Error> {
        let fmt = T::format();
        fmt.validate()?;
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::InvalidParams(format!(
                "level count {} outside 1..={MAX_LEVELS}",
                self.levels
            )));
        }
        if self.w == 0 || self.w > fmt.m - 2 {
            return Err(Error::InvalidParams(format!(
                "W = {} outside 1..={} for m = {}",
                self.w,
                fmt.m - 2,
                fmt.m
            )));
        }
        if !matches!(self.lanes, 1 | 2 | 4 | 8) {
            return Err(Error::InvalidParams(format!(
                "lane count {} is not a power of two <= 8",
                self.lanes
            )));
        }
        let bound = Self::block_bound(fmt.m, self.w);
        if self.block == 0 || self.block > bound {
            return Err(Error::InvalidParams(format!(
                "block length {} outside 1..={bound}",
                self.block
            )));
        }
        let lowest = self.first_exp - (self.levels as i32 - 1) * self.w as i32;
        if lowest < fmt.e_min + fmt.m as i32 {
            return Err(Error::InvalidParams(format!(
                "lowest level exponent {lowest} below representable floor {}",
                fmt.e_min + fmt.m as i32
            )));
        }
        if self.first_exp > fmt.e_max {
            return Err(Error::InvalidParams(format!(
                "first level exponent {} above e_max {}",
                self.first_exp, fmt.e_max
            )));
        }
        Ok(())
    }

    fn compatible(&self, other: &RSumParams) -> bool {
        self.levels == other.levels && self.w == other.w && self.first_exp == other.first_exp
    }
}

/// Per-level derived constants for the current level-1 exponent.
#[derive(Clone, Copy)]
struct Lattice<T> {
    e_top: i32,
    /// Fixed extractor 1.5·2^(e_l); also the home position of S^(l).
    a: [T; MAX_LEVELS],
    /// 0.25·2^(e_l), the carry quantum.
    quarter: [T; MAX_LEVELS],
    /// 2^(2 - e_l), exact reciprocal of `quarter`.
    inv_quarter: [T; MAX_LEVELS],
    /// Level-shift guard threshold 2^(W + e_top - m).
    threshold: T,
    /// ulp of the first level, 2^(e_top - m). Values at least this large
    /// start their extraction cascade at level 1.
    ulp_top: T,
}

impl<T: ReproScalar> Lattice<T> {
    fn new(params: &RSumParams, e_top: i32) -> Lattice<T> {
        let m = T::format().m as i32;
        let mut a = [T::zero(); MAX_LEVELS];
        let mut quarter = [T::zero(); MAX_LEVELS];
        let mut inv_quarter = [T::zero(); MAX_LEVELS];
        let three_halves = T::from_f64(1.5);
        for l in 0..params.levels {
            let e = e_top - l as i32 * params.w as i32;
            a[l] = T::pow2(e).mul(three_halves);
            quarter[l] = T::pow2(e - 2);
            inv_quarter[l] = T::pow2(2 - e);
        }
        Lattice {
            e_top,
            a,
            quarter,
            inv_quarter,
            threshold: T::pow2(params.w as i32 + e_top - m),
            ulp_top: T::pow2(e_top - m),
        }
    }

    /// First level a value deposits into: the level whose grid the value's
    /// own magnitude snaps to. Values below the bottom grid return
    /// `levels` and contribute nothing. Caller guarantees `b` finite,
    /// nonzero, `|b| < threshold`.
    #[inline]
    fn start_level(&self, b: T, w: i32, m: i32, levels: usize) -> usize {
        if b.abs() >= self.ulp_top {
            return 0;
        }
        let off = (self.e_top + w - m - 1 - b.exponent()) / w;
        (off as usize).min(levels)
    }
}

/// Restore one running sum to `[home, home + quarter)` by moving whole
/// `quarter` steps into the carry counter. `home` is the level extractor
/// `1.5·ufp`; the represented value `(S - home) + quarter·C` is unchanged.
#[inline]
fn normalize_level<T: ReproScalar>(s: &mut T, c: &mut T, home: T, quarter: T, inv_quarter: T) {
    let dev = s.sub(home);
    if dev >= T::zero() && dev < quarter {
        return;
    }
    let d = dev.mul(inv_quarter).floor();
    *s = s.sub(d.mul(quarter));
    *c = c.add(d);
}

/// Fold lane-expanded running sums of one level back into a single
/// `(S, C)` pair.
///
/// Per-lane deviations from the shared extractor are multiples of the level
/// ulp and below `0.25·ufp`, so every partial fold stays exact; carries are
/// normalized after each lane so the fold cannot leave the level's
/// exponent. The result is the unique normalized decomposition of the
/// summed lane values and matches the plain per-lane deviation sum wherever
/// that sum is itself exact.
pub fn reduce_lanes<T: ReproScalar>(lane_sums: &[T], lane_carries: &[T]) -> Result<(T, T), Error> {
    if lane_sums.is_empty() || lane_sums.len() != lane_carries.len() {
        return Err(Error::InvalidParams(
            "lane reduction needs equally many sums and carries".into(),
        ));
    }
    for &s in lane_sums {
        if !s.is_finite() || s == T::zero() {
            return Err(Error::NonFinite);
        }
        if s.exponent() != lane_sums[0].exponent() {
            return Err(Error::InvalidState(
                "lane sums do not share one exponent".into(),
            ));
        }
    }
    let e = lane_sums[0].exponent();
    let home = T::pow2(e).mul(T::from_f64(1.5));
    let quarter = T::pow2(e - 2);
    let inv_quarter = T::pow2(2 - e);
    let mut s = lane_sums[0];
    let mut c = lane_carries[0];
    normalize_level(&mut s, &mut c, home, quarter, inv_quarter);
    for v in 1..lane_sums.len() {
        let mut sv = lane_sums[v];
        let mut cv = lane_carries[v];
        normalize_level(&mut sv, &mut cv, home, quarter, inv_quarter);
        let dev = sv.sub(home);
        s = s.add(dev);
        normalize_level(&mut s, &mut c, home, quarter, inv_quarter);
        c = c.add(cv);
    }
    Ok((s, c))
}

/// The complete reproducible summation state: `L` running sums and `L`
/// carry counters plus the parameters they were built with.
#[derive(Debug, Clone, Copy)]
pub struct RSumState<T> {
    s: [T; MAX_LEVELS],
    c: [T; MAX_LEVELS],
    params: RSumParams,
}

impl<T: ReproScalar> RSumState<T> {
    /// Fresh state: `S^(l) = 1.5·2^(f-(l-1)W)`, `C^(l) = 0`.
    pub fn new(params: RSumParams) -> Result<Self, Error> {
        params.validate::<T>()?;
        let three_halves = T::from_f64(1.5);
        let mut s = [T::zero(); MAX_LEVELS];
        let c = [T::zero(); MAX_LEVELS];
        for l in 0..params.levels {
            let e = params.first_exp - l as i32 * params.w as i32;
            s[l] = T::pow2(e).mul(three_halves);
        }
        Ok(RSumState { s, c, params })
    }

    /// Rebuild a state from stored level values, validating all invariants.
    pub fn from_parts(params: RSumParams, sums: &[T], carries: &[T]) -> Result<Self, Error> {
        params.validate::<T>()?;
        if sums.len() != params.levels || carries.len() != params.levels {
            return Err(Error::InvalidState(format!(
                "expected {} levels, got {} sums / {} carries",
                params.levels,
                sums.len(),
                carries.len()
            )));
        }
        let mut s = [T::zero(); MAX_LEVELS];
        let mut c = [T::zero(); MAX_LEVELS];
        s[..params.levels].copy_from_slice(sums);
        c[..params.levels].copy_from_slice(carries);
        let state = RSumState { s, c, params };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn params(&self) -> &RSumParams {
        &self.params
    }

    /// Running sums `S^(1)..S^(L)`.
    pub fn sums(&self) -> &[T] {
        &self.s[..self.params.levels]
    }

    /// Carry counters `C^(1)..C^(L)`.
    pub fn carries(&self) -> &[T] {
        &self.c[..self.params.levels]
    }

    /// Verify the public state invariants: every level normalized to
    /// `[1.5·ufp, 1.75·ufp)`, levels spaced by W, level-1 exponent on the
    /// `f (mod W)` lattice, carries exactly integral.
    pub fn check_invariants(&self) -> Result<(), Error> {
        let p = &self.params;
        let e_top = self.s[0].exponent();
        if (e_top - p.first_exp) % p.w as i32 != 0 || e_top < p.first_exp {
            return Err(Error::InvalidState(format!(
                "level-1 exponent {e_top} not on the f = {} lattice",
                p.first_exp
            )));
        }
        for l in 0..p.levels {
            let sv = self.s[l];
            if !sv.is_finite() || sv <= T::zero() {
                return Err(Error::InvalidState(format!("S[{l}] not positive finite")));
            }
            if sv.exponent() != e_top - l as i32 * p.w as i32 {
                return Err(Error::InvalidState(format!(
                    "S[{l}] exponent {} off the level lattice",
                    sv.exponent()
                )));
            }
            let u = sv.ufp_raw();
            let home = u.mul(T::from_f64(1.5));
            let dev = sv.sub(home);
            if !(dev >= T::zero() && dev < T::pow2(sv.exponent() - 2)) {
                return Err(Error::InvalidState(format!(
                    "S[{l}] = {sv} outside [1.5·ufp, 1.75·ufp)"
                )));
            }
            let cv = self.c[l];
            if !cv.is_finite() || cv.sub(cv.floor()) != T::zero() {
                return Err(Error::InvalidState(format!("C[{l}] = {cv} not integral")));
            }
        }
        Ok(())
    }

    fn lattice(&self) -> Lattice<T> {
        Lattice::new(&self.params, self.s[0].exponent())
    }

    /// Demote all levels until the first level's grid can absorb `b`,
    /// creating fresh coarser first levels; the old bottom levels are
    /// discarded.
    ///
    /// No-op when `b` already fits. Fails without mutating if the required
    /// first-level exponent exceeds the format's `e_max`.
    pub fn level_shift(&mut self, b: T) -> Result<(), Error> {
        if !b.is_finite() {
            return Err(Error::NonFinite);
        }
        let mut lat = self.lattice();
        if b.abs() >= lat.threshold {
            self.shift_to_fit(&mut lat, b.abs())?;
        }
        Ok(())
    }

    /// Number of W-steps a magnitude of the given exponent demands beyond
    /// the current lattice top; fails if that exceeds the exponent range.
    fn shift_steps(params: &RSumParams, e_top: i32, mag_exp: i32) -> Result<i32, Error> {
        let fmt = T::format();
        let w = params.w as i32;
        // mag < 2^X  <=>  exponent(mag) < X; find the smallest k >= 1 with
        // exponent(mag) < W + e_top + k·W - m.
        let have = w + e_top - fmt.m as i32;
        let k = (mag_exp - have + w) / w;
        debug_assert!(k >= 1);
        let e_new = e_top + k * w;
        if e_new > fmt.e_max {
            return Err(Error::Overflow {
                exponent: e_new,
                max: fmt.e_max,
            });
        }
        Ok(k)
    }

    /// Demote by as many W-steps as `mag` requires. `mag` must be finite,
    /// positive and >= the current threshold.
    fn shift_to_fit(&mut self, lat: &mut Lattice<T>, mag: T) -> Result<(), Error> {
        let p = self.params;
        let k = Self::shift_steps(&p, lat.e_top, mag.exponent())?;
        let e_new = lat.e_top + k * p.w as i32;
        let kk = (k as usize).min(p.levels);
        for l in (kk..p.levels).rev() {
            self.s[l] = self.s[l - kk];
            self.c[l] = self.c[l - kk];
        }
        *lat = Lattice::new(&p, e_new);
        for l in 0..kk {
            self.s[l] = lat.a[l];
            self.c[l] = T::zero();
        }
        Ok(())
    }

    /// Restore every level to `[1.5·ufp, 1.75·ufp)`, folding whole
    /// `0.25·ufp` steps into the carry counters.
    pub fn carry_propagate(&mut self) {
        for l in 0..self.params.levels {
            let e = self.s[l].exponent();
            let home = T::pow2(e).mul(T::from_f64(1.5));
            normalize_level(
                &mut self.s[l],
                &mut self.c[l],
                home,
                T::pow2(e - 2),
                T::pow2(2 - e),
            );
        }
    }

    /// Absorb values one at a time (the scalar kernel): per element, a
    /// level check, the extraction cascade, and carry propagation.
    pub fn add_scalar(&mut self, values: &[T]) -> Result<(), Error> {
        let levels = self.params.levels;
        let w = self.params.w as i32;
        let m = T::format().m as i32;
        let mut lat = self.lattice();
        for (i, &b) in values.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::NonFiniteInput { index: i });
            }
            if b == T::zero() {
                continue;
            }
            if b.abs() >= lat.threshold {
                self.shift_to_fit(&mut lat, b.abs())?;
            }
            let start = lat.start_level(b, w, m, levels);
            let mut r = b;
            for l in start..levels {
                let a = lat.a[l];
                let q = r.add(a).sub(a);
                self.s[l] = self.s[l].add(q);
                r = r.sub(q);
            }
            for l in start..levels {
                normalize_level(
                    &mut self.s[l],
                    &mut self.c[l],
                    lat.a[l],
                    lat.quarter[l],
                    lat.inv_quarter[l],
                );
            }
        }
        Ok(())
    }

    /// Absorb values with the lane-parallel kernel: V lanes per level,
    /// blocks of V·NB values between level checks and carry propagations,
    /// and a horizontal lane reduction at the end. Bit-identical to
    /// [`RSumState::add_scalar`] on the same values.
    pub fn add_lanes(&mut self, values: &[T]) -> Result<(), Error> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        if values.is_empty() {
            return Ok(());
        }
        match self.params.lanes {
            1 => self.add_lanes_v::<1>(values),
            2 => self.add_lanes_v::<2>(values),
            4 => self.add_lanes_v::<4>(values),
            8 => self.add_lanes_v::<8>(values),
            v => Err(Error::InvalidParams(format!("unsupported lane count {v}"))),
        }
    }

    fn add_lanes_v<const V: usize>(&mut self, values: &[T]) -> Result<(), Error> {
        let levels = self.params.levels;
        let block = self.params.block;
        let w = self.params.w as i32;
        let m = T::format().m as i32;
        let mut lat = self.lattice();

        // Lane expansion: lane 0 carries the stored state, the other lanes
        // start at the level extractor with zero carries.
        let mut sv = [[T::zero(); V]; MAX_LEVELS];
        let mut cv = [[T::zero(); V]; MAX_LEVELS];
        for l in 0..levels {
            sv[l] = [lat.a[l]; V];
            sv[l][0] = self.s[l];
            cv[l][0] = self.c[l];
        }

        for chunk in values.chunks(V * block) {
            // One level check per block, against the block maximum. The
            // minimum decides whether the uniform from-level-1 kernel
            // applies to the whole block.
            let mut max_abs = T::zero();
            let mut min_abs = chunk[0].abs();
            for &b in chunk {
                let a = b.abs();
                if a > max_abs {
                    max_abs = a;
                }
                if a < min_abs {
                    min_abs = a;
                }
            }
            if max_abs >= lat.threshold {
                self.shift_lanes::<V>(&mut lat, &mut sv, &mut cv, max_abs)?;
            }

            if min_abs >= lat.ulp_top {
                // Uniform path: every value deposits from level 1.
                let mut groups = chunk.chunks_exact(V);
                for group in &mut groups {
                    let mut r = [T::zero(); V];
                    r.copy_from_slice(group);
                    for l in 0..levels {
                        let a = lat.a[l];
                        for v in 0..V {
                            let q = r[v].add(a).sub(a);
                            sv[l][v] = sv[l][v].add(q);
                            r[v] = r[v].sub(q);
                        }
                    }
                }
                let tail = groups.remainder();
                if !tail.is_empty() {
                    // Zero-padded final group; zeros contribute nothing.
                    let mut r = [T::zero(); V];
                    r[..tail.len()].copy_from_slice(tail);
                    for l in 0..levels {
                        let a = lat.a[l];
                        for v in 0..V {
                            let q = r[v].add(a).sub(a);
                            sv[l][v] = sv[l][v].add(q);
                            r[v] = r[v].sub(q);
                        }
                    }
                }
            } else {
                // Mixed-magnitude block: per-element start levels.
                for (i, &b) in chunk.iter().enumerate() {
                    if b == T::zero() {
                        continue;
                    }
                    let v = i % V;
                    let start = lat.start_level(b, w, m, levels);
                    let mut r = b;
                    for l in start..levels {
                        let a = lat.a[l];
                        let q = r.add(a).sub(a);
                        sv[l][v] = sv[l][v].add(q);
                        r = r.sub(q);
                    }
                }
            }

            // One carry propagation per block.
            for l in 0..levels {
                for v in 0..V {
                    normalize_level(
                        &mut sv[l][v],
                        &mut cv[l][v],
                        lat.a[l],
                        lat.quarter[l],
                        lat.inv_quarter[l],
                    );
                }
            }
        }

        // Horizontal reduction back into the stored state.
        for l in 0..levels {
            let (s, c) = reduce_lanes(&sv[l], &cv[l])?;
            self.s[l] = s;
            self.c[l] = c;
        }
        Ok(())
    }

    /// Lane-bank version of the level shift: demotes whole lane arrays.
    fn shift_lanes<const V: usize>(
        &mut self,
        lat: &mut Lattice<T>,
        sv: &mut [[T; V]; MAX_LEVELS],
        cv: &mut [[T; V]; MAX_LEVELS],
        mag: T,
    ) -> Result<(), Error> {
        let p = self.params;
        let k = Self::shift_steps(&p, lat.e_top, mag.exponent())?;
        let e_new = lat.e_top + k * p.w as i32;
        let kk = (k as usize).min(p.levels);
        for l in (kk..p.levels).rev() {
            sv[l] = sv[l - kk];
            cv[l] = cv[l - kk];
        }
        *lat = Lattice::new(&p, e_new);
        for l in 0..kk {
            sv[l] = [lat.a[l]; V];
            cv[l] = [T::zero(); V];
        }
        Ok(())
    }

    /// Collapse the state into one float:
    /// `Q = Σ_l (S^(l) ⊖ 1.5·ufp(S^(l))) ⊕ 0.25·ufp(S^(l))·C^(l)`,
    /// accumulated from the finest level up to avoid cancellation.
    /// Does not mutate the state.
    pub fn finalize(&self) -> T {
        let three_halves = T::from_f64(1.5);
        let quarter = T::from_f64(0.25);
        let mut q = T::zero();
        for l in (0..self.params.levels).rev() {
            let u = self.s[l].ufp_raw();
            let dev = self.s[l].sub(u.mul(three_halves));
            let term = dev.add(u.mul(quarter).mul(self.c[l]));
            q = q.add(term);
        }
        q
    }

    /// Absorb another state built with compatible parameters. The result is
    /// bit-equal to having summed both input multisets into one state.
    pub fn merge(&mut self, src: &RSumState<T>) -> Result<(), Error> {
        if !self.params.compatible(&src.params) {
            return Err(Error::ParamMismatch);
        }
        let levels = self.params.levels;
        let w = self.params.w as i32;
        let e_src = src.s[0].exponent();
        let mut lat = self.lattice();
        if e_src > lat.e_top {
            // Align by demoting this state onto the coarser lattice.
            let delta = e_src - lat.e_top;
            debug_assert!(delta % w == 0);
            let kk = ((delta / w) as usize).min(levels);
            for l in (kk..levels).rev() {
                self.s[l] = self.s[l - kk];
                self.c[l] = self.c[l - kk];
            }
            lat = Lattice::new(&self.params, e_src);
            for l in 0..kk {
                self.s[l] = lat.a[l];
                self.c[l] = T::zero();
            }
        }
        let delta = lat.e_top - e_src;
        debug_assert!(delta >= 0 && delta % w == 0);
        let offset = (delta / w) as usize;
        let three_halves = T::from_f64(1.5);
        for l_src in 0..levels {
            let l_dst = l_src + offset;
            if l_dst >= levels {
                break; // finer source levels fall below this lattice
            }
            let dev = src.s[l_src].sub(src.s[l_src].ufp_raw().mul(three_halves));
            self.s[l_dst] = self.s[l_dst].add(dev);
            normalize_level(
                &mut self.s[l_dst],
                &mut self.c[l_dst],
                lat.a[l_dst],
                lat.quarter[l_dst],
                lat.inv_quarter[l_dst],
            );
            self.c[l_dst] = self.c[l_dst].add(src.c[l_src]);
        }
        Ok(())
    }

    /// Bit patterns of the state levels, for exact comparisons in tests.
    pub fn level_bits(&self) -> Vec<(u64, u64)> {
        (0..self.params.levels)
            .map(|l| (self.s[l].to_bits_u64(), self.c[l].to_bits_u64()))
            .collect()
    }
}
