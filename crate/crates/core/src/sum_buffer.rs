//! Buffered reproducible accumulator.
//!
//! Per-element accumulation pays the full extraction cascade on every
//! value. A [`BufferedAccumulator`] instead appends raw values to a small
//! per-group array and flushes full arrays through the lane-parallel
//! kernel, amortizing the per-call overhead. Buffering never changes
//! result bits; it only changes when work happens.

use crate::error::Error;
use crate::float_core::ReproScalar;
use crate::repro::ReproValue;
use crate::rsum::RSumParams;

/// Inputs to the buffer-size model: the cache budget of one thread, the
/// largest buffer worth using, and the payload width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferPolicy {
    pub cache_bytes: usize,
    pub bsz_max: usize,
    pub scalar_width: usize,
}

/// Largest buffer length the sizing model will pick.
pub const DEFAULT_BSZ_MAX: usize = 1024;

impl BufferPolicy {
    /// Policy for the given scalar, probing the last-level cache. The
    /// budget is half of one core's share of the last-level cache; the
    /// fallback when the platform exposes no cache topology is 1 MiB,
    /// which is where shared 20 MiB / 8-core parts land.
    pub fn detect<T: ReproScalar>() -> BufferPolicy {
        let per_core = detect_llc_per_core().unwrap_or(2 << 20);
        BufferPolicy {
            cache_bytes: per_core / 2,
            bsz_max: DEFAULT_BSZ_MAX,
            scalar_width: T::BYTE_WIDTH,
        }
    }

    pub fn with_cache_bytes(self, cache_bytes: usize) -> BufferPolicy {
        BufferPolicy {
            cache_bytes,
            ..self
        }
    }
}

/// Last-level cache size divided by the number of cores sharing it, from
/// sysfs; `None` off Linux or in stripped-down containers.
pub fn detect_llc_per_core() -> Option<usize> {
    let base = "/sys/devices/system/cpu/cpu0/cache";
    let mut best: Option<(u32, usize, usize)> = None;
    for idx in 0..8 {
        let dir = format!("{base}/index{idx}");
        let level: u32 = std::fs::read_to_string(format!("{dir}/level"))
            .ok()?
            .trim()
            .parse()
            .ok()?;
        let size_raw = std::fs::read_to_string(format!("{dir}/size")).ok();
        let shared = std::fs::read_to_string(format!("{dir}/shared_cpu_list")).ok();
        if let (Some(size_raw), Some(shared)) = (size_raw, shared) {
            let size = parse_size(size_raw.trim())?;
            let sharers = count_cpu_list(shared.trim());
            if best.map_or(true, |(l, _, _)| level > l) {
                best = Some((level, size, sharers.max(1)));
            }
        } else {
            break;
        }
    }
    best.map(|(_, size, sharers)| size / sharers)
}

fn parse_size(s: &str) -> Option<usize> {
    if let Some(k) = s.strip_suffix('K') {
        k.parse::<usize>().ok().map(|v| v << 10)
    } else if let Some(m) = s.strip_suffix('M') {
        m.parse::<usize>().ok().map(|v| v << 20)
    } else {
        s.parse().ok()
    }
}

fn count_cpu_list(s: &str) -> usize {
    s.split(',')
        .map(|part| match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().unwrap_or(0);
                let b: usize = b.trim().parse().unwrap_or(a);
                b.saturating_sub(a) + 1
            }
            None => 1,
        })
        .sum()
}

/// Buffer length that fills the cache budget:
/// `bsz = min(⌈cache / ((n_groups/F) · width)⌉, bsz_max)`, at least 1.
pub fn choose_buffer_size(policy: &BufferPolicy, n_groups: usize, fan_out: usize) -> usize {
    let groups_per_partition = n_groups.div_ceil(fan_out.max(1)).max(1);
    let per_slot = groups_per_partition * policy.scalar_width;
    let by_cache = policy.cache_bytes.div_ceil(per_slot);
    by_cache.min(policy.bsz_max).max(1)
}

/// Modeled memory footprint of one buffered aggregate.
pub fn accumulator_footprint<T: ReproScalar>(bsz: usize) -> usize {
    bsz * T::BYTE_WIDTH + std::mem::size_of::<ReproValue<T>>() + std::mem::size_of::<usize>()
}

/// A reproducible accumulator plus a pending-value array and the offset of
/// its next free slot.
#[derive(Debug, Clone)]
pub struct BufferedAccumulator<T> {
    rv: ReproValue<T>,
    next: usize,
    buf: Box<[T]>,
}

impl<T: ReproScalar> BufferedAccumulator<T> {
    pub fn new(params: RSumParams, bsz: usize) -> Result<Self, Error> {
        if bsz == 0 {
            return Err(Error::InvalidParams("buffer size must be >= 1".into()));
        }
        Ok(BufferedAccumulator {
            rv: ReproValue::new(params)?,
            next: 0,
            buf: vec![T::zero(); bsz].into_boxed_slice(),
        })
    }

    /// Clone of a template accumulator; avoids re-validating parameters on
    /// every hash-table insert.
    pub fn from_template(template: &BufferedAccumulator<T>) -> Self {
        BufferedAccumulator {
            rv: template.rv,
            next: 0,
            buf: vec![T::zero(); template.buf.len()].into_boxed_slice(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    pub fn pending(&self) -> usize {
        self.next
    }

    /// Store one value; when the buffer fills up it is aggregated through
    /// the lane kernel and the offset resets to 0.
    #[inline]
    pub fn append(&mut self, x: T) -> Result<(), Error> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput { index: self.next });
        }
        self.buf[self.next] = x;
        self.next += 1;
        if self.next == self.buf.len() {
            self.flush()?;
        }
        Ok(())
    }

    /// Aggregate all pending values; idempotent on an empty buffer.
    pub fn flush(&mut self) -> Result<(), Error> {
        if self.next > 0 {
            let n = self.next;
            self.next = 0;
            self.rv.accumulate_slice(&self.buf[..n])?;
        }
        Ok(())
    }

    /// Flush and read the accumulated value.
    pub fn value(&mut self) -> Result<T, Error> {
        self.flush()?;
        Ok(self.rv.read_out())
    }

    /// Flush and hand over the underlying reproducible accumulator.
    pub fn into_repro(mut self) -> Result<ReproValue<T>, Error> {
        self.flush()?;
        Ok(self.rv)
    }

    pub fn repro(&self) -> &ReproValue<T> {
        &self.rv
    }
}
