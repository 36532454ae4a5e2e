//! Deterministic generation of discretized Brownian motion ensembles and
//! the shared time grid.
//!
//! Increment tensors are stored step-major, `(step, coordinate, path)`,
//! so every cross-path operation (regression targets, adjoint updates)
//! works on contiguous slices. Each path's random stream is derived from
//! `(seed, path index)` alone, which makes the output independent of how
//! generation is scheduled across threads.

use crate::error::{Result, SolverError};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Uniform partition of [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<S: Scalar> {
    times: Vec<S>,
    dt: S,
    horizon: S,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn times(&self) -> &[S] {
        &self.times
    }

    #[inline]
    pub fn time(&self, step: usize) -> S {
        self.times[step]
    }

    #[inline]
    pub fn dt(&self) -> S {
        self.dt
    }

    #[inline]
    pub fn horizon(&self) -> S {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Builds the uniform grid t_k = T k / N, so the endpoints are exact.
pub fn make_grid<S: Scalar>(horizon: S, n_steps: usize) -> Result<TimeGrid<S>> {
    if !(horizon > S::zero()) || !horizon.is_finite() {
        return Err(SolverError::invalid_argument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if n_steps == 0 {
        return Err(SolverError::invalid_argument("n_steps must be at least 1"));
    }
    let n = S::from_count(n_steps);
    let times: Vec<S> = (0..=n_steps)
        .map(|k| horizon * S::from_count(k) / n)
        .collect();
    Ok(TimeGrid {
        dt: horizon / n,
        horizon,
        times,
    })
}

/// A seeded ensemble of Brownian increments on a time grid.
///
/// Immutable after construction; safe to share across threads and across
/// every solver stage of one run (common random numbers).
#[derive(Debug, Clone)]
pub struct PathBundle<S: Scalar> {
    grid: TimeGrid<S>,
    dim: usize,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
    /// Step-major layout: entry (k, j, i) lives at ((k*dim + j)*n_paths + i).
    increments: Vec<S>,
}

impl<S: Scalar> PathBundle<S> {
    #[inline]
    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    /// All increments for step k, coordinate j: one value per path.
    #[inline]
    pub fn dw(&self, step: usize, coord: usize) -> &[S] {
        debug_assert!(step < self.n_steps() && coord < self.dim);
        let base = (step * self.dim + coord) * self.n_paths;
        &self.increments[base..base + self.n_paths]
    }

    pub fn raw_increments(&self) -> &[S] {
        &self.increments
    }

    /// Brownian levels W_{t_k} by prefix sums, laid out like the
    /// increments but with N+1 step slots; level 0 is zero.
    pub fn brownian_levels(&self) -> Vec<S> {
        let n = self.n_paths;
        let d = self.dim;
        let steps = self.n_steps();
        let mut levels = vec![S::zero(); (steps + 1) * d * n];
        for k in 0..steps {
            for j in 0..d {
                let src = (k * d + j) * n;
                let prev = src; // level slot k, coord j has the same offset
                let dst = ((k + 1) * d + j) * n;
                // levels[k+1] = levels[k] + dw[k]
                let (head, tail) = levels.split_at_mut(dst);
                let prev_col = &head[prev..prev + n];
                let dw_col = &self.increments[src..src + n];
                tail[..n]
                    .par_chunks_mut(CHUNK)
                    .zip(prev_col.par_chunks(CHUNK).zip(dw_col.par_chunks(CHUNK)))
                    .for_each(|(out, (p, w))| {
                        for ((o, &a), &b) in out.iter_mut().zip(p).zip(w) {
                            *o = a + b;
                        }
                    });
            }
        }
        levels
    }
}

/// Fixed reduction chunk: all chunked parallel loops in the crate use this
/// size so results never depend on the worker count.
pub(crate) const CHUNK: usize = 8192;

fn path_stream_seed(seed: u64, path: u64) -> u64 {
    // SplitMix64-style finalizer over a golden-ratio stride.
    let mut z = seed.wrapping_add(path.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the Brownian increment ensemble.
///
/// With `antithetic` set, paths come in pairs: path 2k+1 is the exact
/// negation of path 2k, which zeroes the Monte Carlo error of odd moments.
pub fn simulate_paths<S: Scalar>(
    grid: &TimeGrid<S>,
    dim: usize,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBundle<S>> {
    if dim == 0 {
        return Err(SolverError::invalid_argument("dim must be at least 1"));
    }
    if n_paths < 2 {
        return Err(SolverError::invalid_argument("n_paths must be at least 2"));
    }
    if antithetic && n_paths % 2 != 0 {
        return Err(SolverError::invalid_argument(
            "antithetic sampling needs an even n_paths",
        ));
    }
    let steps = grid.n_steps();
    let row = steps * dim;
    let sqrt_dt = grid.dt().sqrt();

    // Draw path-major first (each path's stream is contiguous), then
    // transpose into the step-major solver layout.
    let mut tmp = vec![S::zero(); n_paths * row];
    if antithetic {
        tmp.par_chunks_mut(2 * row).enumerate().for_each(|(pair, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_stream_seed(seed, 2 * pair as u64));
            let (even, odd) = chunk.split_at_mut(row);
            for (e, o) in even.iter_mut().zip(odd.iter_mut()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e = S::lit(z) * sqrt_dt;
                *o = -*e;
            }
        });
    } else {
        tmp.par_chunks_mut(row).enumerate().for_each(|(i, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_stream_seed(seed, i as u64));
            for e in chunk.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e = S::lit(z) * sqrt_dt;
            }
        });
    }

    let mut increments = vec![S::zero(); n_paths * row];
    increments
        .par_chunks_mut(n_paths)
        .enumerate()
        .for_each(|(col, out)| {
            // column `col` is (step k, coord j) with col = k*dim + j
            for (i, o) in out.iter_mut().enumerate() {
                *o = tmp[i * row + col];
            }
        });

    Ok(PathBundle {
        grid: grid.clone(),
        dim,
        n_paths,
        seed,
        antithetic,
        increments,
    })
}
