//! Reproducible parallel Monte Carlo plumbing.
//!
//! Every sample `i` draws from its own ChaCha stream keyed by `(seed, i)`, results are
//! collected in index order and reduced with a fixed pairwise tree, so estimates are
//! bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::BoxRegion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, workers: 0 }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Self { workers, ..self }
    }

    /// Same sample budget on an independent family of streams.
    pub fn derive(self, salt: u64) -> Self {
        Self { seed: self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15), ..self }
    }
}

/// Random stream for sample `index`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform point in a box.
pub fn uniform_in<R: Rng>(rng: &mut R, b: &BoxRegion) -> Vec<f64> {
    b.axes().iter().map(|a| a.lo() + rng.gen::<f64>() * a.width()).collect()
}

/// `f(i)` for `i in 0..n`, in index order, on `workers` threads.
pub fn par_collect<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
    if workers == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Fixed-shape pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    let stderr = if n > 1 {
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        (pairwise_sum(&dev) / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanEstimate { mean, stderr, samples: n }
}
