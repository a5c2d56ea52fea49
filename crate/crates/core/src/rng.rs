//! Counter-based random number generation.
//!
//! Every stochastic routine in this crate draws from an [`RngStream`], a
//! stateless-draw generator addressed by `(seed, stream_id, counter)`. The
//! value of a draw is a pure function of those three integers, which buys two
//! properties that ordinary sequential generators make awkward:
//!
//! * the same `(seed, stream_id)` always replays the same sequence, on any
//!   platform, regardless of what other streams were used in between;
//! * work items (images in a batch, layers at init, epochs in a shuffle) can
//!   each fork their own stream keyed by index, so results do not depend on
//!   evaluation order or worker count.
//!
//! The draw function is the SplitMix64 finalizer applied to an affine walk of
//! the counter in a stream-specific key space. It is not cryptographic; it is
//! fast, splittable, and statistically fine for simulation use.

/// Weyl-sequence increment for the counter walk (2^64 / golden ratio).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A forkable counter-based random stream.
///
/// Draws advance `counter`; `seed` and `stream_id` never change after
/// construction. Cloning replays: a clone continues from the same counter,
/// producing the same future draws as the original would have.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    /// Cached key derived from `(seed, stream_id)`.
    key: u64,
}

/// Creates the stream addressed by `(seed, stream_id)`.
///
/// Streams with distinct `stream_id`s under the same seed are statistically
/// independent, as are equal `stream_id`s under distinct seeds.
#[must_use]
pub fn rng_fork(seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(seed, stream_id)
}

impl RngStream {
    /// Equivalent to [`rng_fork`].
    #[must_use]
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix(mix(seed ^ GAMMA).wrapping_add(mix(stream_id)));
        RngStream { seed, stream_id, counter: 0, key }
    }

    /// Derives a child stream keyed by this stream's identity and `lane`.
    ///
    /// Forking does not consume any draws from `self`, so the set of child
    /// streams is independent of how many values the parent has produced.
    #[must_use]
    pub fn fork(&self, lane: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: self.stream_id,
            counter: 0,
            key: mix(self.key ^ mix(lane ^ GAMMA)),
        }
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[must_use]
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of raw draws consumed so far.
    #[must_use]
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        let z = self.key.wrapping_add(self.counter.wrapping_mul(GAMMA));
        self.counter += 1;
        mix(z)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer draw in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Multiply-shift bounded draw; bias is < 2^-53 for any n we use.
        (((self.next_u64() >> 11) as u128 * n as u128) >> 53) as u64
    }

    /// Standard normal draw via Box-Muller. Consumes two raw draws.
    pub fn normal(&mut self) -> f64 {
        // Shift into (0, 1] so the log is always finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal draw with the given mean and standard deviation.
    pub fn normal_scaled(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
