//! Seeded random streams.
//!
//! Every entity draws from its own ChaCha8 stream: the seed selects the key,
//! and the stream number packs a purpose tag (top byte) with the entity
//! index. Adding a landmark or a frame leaves the draws of every other
//! entity untouched.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    StaticPosition { point: u32 },
    StaticMeasurement { point: u32, frame: u32 },
    /// `object` and `part` below 256, `point` below 65536, `frame` below 2^24.
    DynamicMeasurement { object: u32, part: u32, point: u32, frame: u32 },
    InitPose { frame: u32 },
    Corruption,
}

impl Stream {
    fn id(self) -> u64 {
        let (tag, entity): (u64, u64) = match self {
            Stream::StaticPosition { point } => (1, point as u64),
            Stream::StaticMeasurement { point, frame } => (2, ((point as u64) << 24) | frame as u64),
            Stream::DynamicMeasurement { object, part, point, frame } => (
                3,
                ((object as u64 & 0xff) << 48)
                    | ((part as u64 & 0xff) << 40)
                    | ((point as u64 & 0xffff) << 24)
                    | (frame as u64 & 0xff_ffff),
            ),
            Stream::InitPose { frame } => (4, frame as u64),
            Stream::Corruption => (5, 0),
        };
        (tag << 56) | (entity & ((1 << 56) - 1))
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Three independent N(0, sigma^2) draws.
pub fn gaussian3(rng: &mut impl Rng, sigma: f64) -> Vector3<f64> {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vector3::new(x, y, z) * sigma
}
