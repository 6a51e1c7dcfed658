//! Seeded randomness. Every stream is derived from one root seed plus a stream id, so
//! sub-runs can be reproduced independently of each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::image::Image;
use crate::scalar::Scalar;

pub type DiffRng = ChaCha8Rng;

/// Well-known stream ids used by the pipeline.
pub mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const TRAIN_NOISE: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const SAMPLING: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
    pub const ORACLE: u64 = 6;
}

pub fn rng_from_seed(seed: u64) -> DiffRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under the root seed `seed`.
pub fn substream(seed: u64, stream: u64) -> DiffRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    let z: f64 = rng.sample(StandardNormal);
    S::of(z)
}

/// Image of i.i.d. standard normal values, drawn in storage order.
pub fn normal_image<S: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    channels: usize,
    height: usize,
    width: usize,
) -> Image<S> {
    let data = (0..channels * height * width)
        .map(|_| standard_normal(rng))
        .collect();
    Image::from_vec(channels, height, width, data).expect("length matches by construction")
}

pub fn normal_like<S: Scalar, R: Rng + ?Sized>(rng: &mut R, like: &Image<S>) -> Image<S> {
    let (c, h, w) = like.shape();
    normal_image(rng, c, h, w)
}
