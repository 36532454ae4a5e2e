//! Deterministic parallel reductions. Work is split into fixed-size
//! chunks whose partial results are combined in chunk order, so sums
//! never depend on thread count or scheduling.

use crate::paths::CHUNK;
use crate::scalar::Scalar;
use rayon::prelude::*;

/// Sum of `part(lo, hi)` over fixed chunks of `0..n`, combined in order.
pub(crate) fn sum_partials<S, F>(n: usize, part: F) -> S
where
    S: Scalar,
    F: Fn(usize, usize) -> S + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    if n_chunks <= 1 {
        return part(0, n);
    }
    let parts: Vec<S> = (0..n_chunks)
        .into_par_iter()
        .map(|c| part(c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect();
    parts.into_iter().sum()
}

/// Vector-valued variant: `part` accumulates into a zeroed buffer of
/// `width` entries per chunk; chunk buffers are added in chunk order.
pub(crate) fn sum_partials_vec<S, F>(n: usize, width: usize, part: F) -> Vec<S>
where
    S: Scalar,
    F: Fn(usize, usize, &mut [S]) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    if n_chunks <= 1 {
        let mut acc = vec![S::zero(); width];
        part(0, n, &mut acc);
        return acc;
    }
    let parts: Vec<Vec<S>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![S::zero(); width];
            part(c * CHUNK, ((c + 1) * CHUNK).min(n), &mut acc);
            acc
        })
        .collect();
    let mut out = vec![S::zero(); width];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o = *o + v;
        }
    }
    out
}

pub(crate) fn mean<S: Scalar>(xs: &[S]) -> S {
    sum_partials(xs.len(), |lo, hi| xs[lo..hi].iter().copied().sum::<S>())
        / S::from_count(xs.len())
}

/// mean(a_i * b_i)
pub(crate) fn dot_mean<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    sum_partials(a.len(), |lo, hi| {
        a[lo..hi]
            .iter()
            .zip(&b[lo..hi])
            .map(|(&x, &y)| x * y)
            .sum::<S>()
    }) / S::from_count(a.len())
}

/// mean((a_i - b_i)^2)
pub(crate) fn mean_sq_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    sum_partials(a.len(), |lo, hi| {
        a[lo..hi]
            .iter()
            .zip(&b[lo..hi])
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<S>()
    }) / S::from_count(a.len())
}

/// (min, max) over the slice. Order-independent, so chunking is free.
pub(crate) fn extremes<S: Scalar>(xs: &[S]) -> (S, S) {
    let n_chunks = xs.len().div_ceil(CHUNK);
    let fold = |lo: usize, hi: usize| {
        xs[lo..hi]
            .iter()
            .fold((S::infinity(), S::neg_infinity()), |(mn, mx), &v| {
                (mn.min(v), mx.max(v))
            })
    };
    if n_chunks <= 1 {
        return fold(0, xs.len());
    }
    let parts: Vec<(S, S)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| fold(c * CHUNK, ((c + 1) * CHUNK).min(xs.len())))
        .collect();
    parts
        .into_iter()
        .fold((S::infinity(), S::neg_infinity()), |(amn, amx), (bmn, bmx)| {
            (amn.min(bmn), amx.max(bmx))
        })
}

pub(crate) fn max_abs<S: Scalar>(xs: &[S]) -> S {
    let n_chunks = xs.len().div_ceil(CHUNK);
    let fold = |lo: usize, hi: usize| {
        xs[lo..hi]
            .iter()
            .fold(S::zero(), |acc, &v| acc.max(v.abs()))
    };
    if n_chunks <= 1 {
        return fold(0, xs.len());
    }
    let parts: Vec<S> = (0..n_chunks)
        .into_par_iter()
        .map(|c| fold(c * CHUNK, ((c + 1) * CHUNK).min(xs.len())))
        .collect();
    parts.into_iter().fold(S::zero(), |a, b| a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_sequential_sums() {
        let xs: Vec<f64> = (0..30_000).map(|i| (i as f64).sin()).collect();
        let ys: Vec<f64> = (0..30_000).map(|i| (i as f64).cos()).collect();
        let seq: f64 = xs.iter().sum();
        let par = sum_partials(xs.len(), |lo, hi| xs[lo..hi].iter().sum::<f64>());
        assert!((seq - par).abs() < 1e-9);
        let dm = dot_mean(&xs, &ys);
        let seq_dm: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / xs.len() as f64;
        assert!((dm - seq_dm).abs() < 1e-12);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let xs: Vec<f64> = (0..50_000).map(|i| ((i * 37) % 1000) as f64 * 0.37).collect();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| mean(&xs));
        let b = pool4.install(|| mean(&xs));
        assert_eq!(a.to_bits(), b.to_bits());
        let va = pool1.install(|| {
            sum_partials_vec(xs.len(), 2, |lo, hi, acc: &mut [f64]| {
                for &v in &xs[lo..hi] {
                    acc[0] += v;
                    acc[1] += v * v;
                }
            })
        });
        let vb = pool4.install(|| {
            sum_partials_vec(xs.len(), 2, |lo, hi, acc: &mut [f64]| {
                for &v in &xs[lo..hi] {
                    acc[0] += v;
                    acc[1] += v * v;
                }
            })
        });
        assert_eq!(va[0].to_bits(), vb[0].to_bits());
        assert_eq!(va[1].to_bits(), vb[1].to_bits());
    }

    #[test]
    fn extremes_cover_both_ends() {
        let xs: Vec<f64> = (0..20_000).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let (mn, mx) = extremes(&xs);
        assert_eq!(mn, -50.0);
        assert_eq!(mx, 50.0);
    }

    #[test]
    fn max_abs_finds_extreme() {
        let mut xs = vec![0.5f64; 20_000];
        xs[17_345] = -9.25;
        assert_eq!(max_abs(&xs), 9.25);
    }
}
