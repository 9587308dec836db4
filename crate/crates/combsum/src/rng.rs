//! Random number streams.
//!
//! Every stochastic routine in this crate draws from ChaCha12 (the
//! `rand_chacha` implementation). ChaCha is a counter-based generator: the
//! key comes from the user seed, the block counter advances the stream, and
//! the 64-bit stream field splits one seed into independent streams. Worker
//! `k` of a parallel computation always owns stream `k`, and work is
//! assigned to streams by fixed-size chunk index rather than by thread, so
//! results are bit-identical for every worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream `stream_id` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// In-place uniform shuffle: classic backward swap loop, one uniform index
/// per position.
pub fn shuffle<R: Rng + ?Sized>(perm: &mut [usize], rng: &mut R) {
    for i in (1..perm.len()).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
}
