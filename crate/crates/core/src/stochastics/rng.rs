use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Independent, reproducible stream identified by `(seed, stream)`.
///
/// Concurrent tasks each take their own stream index so results do not
/// depend on scheduling.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
