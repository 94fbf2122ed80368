//! Deterministic, splittable random number stream.
//!
//! SplitMix64 core with Box–Muller for Gaussian draws. The same seed and the
//! same draw sequence produce the same values on every platform: integer
//! draws are bit-exact, Gaussian draws depend on libm `ln`/`cos`/`sin` and
//! may differ by up to 1 ulp across platforms.

/// Counter-based random stream. Cheap to clone; clones continue the sequence
/// independently from the point of the clone.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    draws: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            state: mix64(seed ^ GOLDEN_GAMMA),
            draws: 0,
        }
    }

    /// Derive an independent sub-stream labelled by `tag`. Sub-streams with
    /// different tags never overlap in practice; the parent is not advanced.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream {
            state: mix64(self.state ^ mix64(tag.wrapping_mul(GOLDEN_GAMMA) ^ 0xd6e8_feb8_6659_fd93)),
            draws: 0,
        }
    }

    /// Number of raw 64-bit draws consumed so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        self.draws += 1;
        mix64(self.state)
    }

    /// Uniform integer in `[0, bound]` (inclusive). `bound + 1` must not wrap.
    pub fn next_below_inclusive(&mut self, bound: u64) -> u64 {
        self.next_u64() % (bound + 1)
    }

    /// Uniform in the half-open interval [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the half-open interval (0, 1]; safe to pass to `ln`.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard normal draw via Box–Muller (consumes two raw draws).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fill `out` with standard normal draws, using both halves of each
    /// Box–Muller pair.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let u1 = self.next_f64_open();
            let u2 = self.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            out[i] = r * theta.cos();
            out[i + 1] = r * theta.sin();
            i += 2;
        }
        if i < out.len() {
            out[i] = self.next_gaussian();
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below_inclusive(i as u64) as usize;
            items.swap(i, j);
        }
    }
}
