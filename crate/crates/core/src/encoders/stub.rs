//! Weightless stand-in for the pretrained dual encoder.
//!
//! Image features are strided average pools of the normalized pixels (one
//! per stride 8/16/32, plus a global pool) pushed through fixed random
//! linear maps. The text embedding is the mean of fixed random vectors, one
//! per token id. Every random quantity is derived from the seed alone.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BackboneDims, ImageBatch, TextFeatures, TokenSequence, VisualFeatures};
use crate::ops;

const TEXT_STREAM: u64 = 0x7e47;

#[derive(Clone, Debug)]
pub struct StubBackbone {
    seed: u64,
    dims: BackboneDims,
    /// Random `3 × width` maps for f1, f2, f3 and the global vector.
    level_maps: [Array2<f64>; 4],
}

fn gaussian_matrix(seed: u64, stream: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

impl StubBackbone {
    pub fn new(seed: u64, dims: BackboneDims) -> Self {
        let level_maps = [
            gaussian_matrix(seed, 1, 3, dims.c1),
            gaussian_matrix(seed, 2, 3, dims.c2),
            gaussian_matrix(seed, 3, 3, dims.c3),
            gaussian_matrix(seed, 4, 3, dims.embed),
        ];
        StubBackbone {
            seed,
            dims,
            level_maps,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> BackboneDims {
        self.dims
    }

    fn project(pooled: &Array4<f64>, map: &Array2<f64>) -> Array4<f64> {
        let (b, h, w, _) = pooled.dim();
        let rows = ops::as_rows(pooled).dot(map);
        ops::from_rows(rows, (b, h, w, map.ncols()))
    }

    pub fn encode_image(&self, images: &ImageBatch) -> VisualFeatures {
        let px = images.pixels();
        let p8 = ops::avg_pool(px, 8);
        let p16 = ops::avg_pool(&p8, 2);
        let p32 = ops::avg_pool(&p16, 2);
        let mean = px
            .mean_axis(Axis(1))
            .and_then(|m| m.mean_axis(Axis(1)))
            .expect("non-empty image");
        VisualFeatures {
            f1: Self::project(&p8, &self.level_maps[0]),
            f2: Self::project(&p16, &self.level_maps[1]),
            f3: Self::project(&p32, &self.level_maps[2]),
            global: mean.dot(&self.level_maps[3]),
        }
    }

    /// Fixed random embedding of one token id, entries `N(0, 1/C)`.
    pub fn token_vector(&self, id: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ TEXT_STREAM.rotate_left(32));
        rng.set_stream(u64::from(id));
        let scale = 1.0 / (self.dims.embed as f64).sqrt();
        (0..self.dims.embed)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect::<Vec<f64>>()
    }

    pub fn encode_text(&self, tokens: &[TokenSequence]) -> TextFeatures {
        let c = self.dims.embed;
        let len = tokens.iter().map(|t| t.ids.len()).max().unwrap_or(0);
        let mut per_token = Array3::<f64>::zeros((tokens.len(), len, c));
        let mut global = Array2::<f64>::zeros((tokens.len(), c));
        for (b, seq) in tokens.iter().enumerate() {
            for (pos, &id) in seq.valid().iter().enumerate() {
                let v = self.token_vector(id);
                for (k, x) in v.iter().enumerate() {
                    per_token[[b, pos, k]] = *x;
                    global[[b, k]] += x / seq.valid_len as f64;
                }
            }
        }
        TextFeatures {
            tokens: per_token,
            global,
        }
    }

    pub fn parameter_digest(&self) -> String {
        let seed = [self.seed as f64];
        super::digest_f64(
            std::iter::once(&seed[..]).chain(
                self.level_maps
                    .iter()
                    .map(|m| m.as_slice().expect("standard layout")),
            ),
        )
    }
}
