//! Seeded, platform-independent random streams.
//!
//! Every stochastic step in the crate draws from a ChaCha stream keyed by a
//! 64-bit seed and, where several independent streams are needed from one
//! user seed, a stream id. ChaCha is counter based, so a (seed, stream, word
//! position) triple identifies each draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::sphharm::Direction;

pub type SeededRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under a user seed.
pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Directions uniform on S² (normalised Gaussian triples).
pub fn uniform_directions(rng: &mut impl Rng, n: usize) -> Vec<Direction> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if let Ok(d) = Direction::from_vector(v) {
            out.push(d);
        }
    }
    out
}

/// Uniformly random rotation matrix (row-major), from a random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: Vec<f64> = standard_normals(rng, 4);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn rotate(q: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        q[0][0] * v[0] + q[0][1] * v[1] + q[0][2] * v[2],
        q[1][0] * v[0] + q[1][1] * v[1] + q[1][2] * v[2],
        q[2][0] * v[0] + q[2][1] * v[1] + q[2][2] * v[2],
    ]
}
