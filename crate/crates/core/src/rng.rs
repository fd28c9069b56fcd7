//! Seeded random streams.
//!
//! Every stochastic step draws from ChaCha8 seeded with the user seed and a
//! fixed stream id, so independent steps never share state and results are
//! identical across platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    FakeNoise = 2,
    LineDirections = 3,
    Ransac = 4,
    ScenePoints = 5,
    SceneCameras = 6,
    SceneDescriptors = 7,
    DepthNoise = 8,
    PixelNoise = 9,
    Outliers = 10,
    Placeholder = 11,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream for one item of a batch (e.g. one query of many).
pub fn indexed_stream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream as u64);
    rng
}
