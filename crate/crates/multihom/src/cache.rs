//! Memoized and parallel evaluation of the effective flux.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use multihom_core::effective::{
    monotone_quotient, monotone_sample_pairs, monotonicity_report, EffectiveError, EffectiveFlux, FluxTable,
    MonotonicityReport, MIN_MONOTONE_PAIRS,
};
use rayon::prelude::*;

/// Wraps an evaluator with a map from the bit pattern of ξ to b(ξ).
///
/// Solves run outside the lock. When two threads race on the same ξ the
/// first insert wins and both return the stored value.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<Vec<u64>, Vec<f64>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<E: EffectiveFlux> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CachedEvaluator {
            inner,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (hits, misses)
    pub fn stats(&self) -> (usize, usize) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

fn key(xi: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 give the same b
    xi.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

impl<E: EffectiveFlux> EffectiveFlux for CachedEvaluator<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        let k = key(xi);
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(&k) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            out.copy_from_slice(v);
            return Ok(());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut fresh = vec![0.0; self.dim()];
        self.inner.eval(xi, &mut fresh)?;
        let mut map = self.cache.lock().expect("cache poisoned");
        out.copy_from_slice(map.entry(k).or_insert(fresh));
        Ok(())
    }
}

/// Same table as [`FluxTable::tabulate`], with nodes evaluated in parallel
/// on the current rayon pool.
pub fn tabulate_parallel<E: EffectiveFlux + ?Sized>(ev: &E, bound: f64, resolution: usize) -> Result<FluxTable, EffectiveError> {
    let dim = ev.dim();
    let nodes = FluxTable::node_points(dim, bound, resolution);
    let rows = nodes
        .par_iter()
        .map(|xi| {
            let mut out = vec![0.0; dim];
            ev.eval(xi, &mut out).map(|_| out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    FluxTable::from_values(dim, bound, resolution, rows.concat())
}

/// Same report as `check_monotone`, with the pairs evaluated in parallel.
pub fn check_monotone_parallel<E: EffectiveFlux + ?Sized>(
    ev: &E,
    pair_count: usize,
    seed: u64,
    radius: f64,
) -> Result<MonotonicityReport, EffectiveError> {
    if pair_count < MIN_MONOTONE_PAIRS {
        return Err(EffectiveError::Invalid(format!("{pair_count} pairs requested; at least {MIN_MONOTONE_PAIRS} are required")));
    }
    let dim = ev.dim();
    let quotients = monotone_sample_pairs(dim, pair_count, seed, radius)
        .par_iter()
        .map(|(x, y)| {
            let (mut a, mut b) = (vec![0.0; dim], vec![0.0; dim]);
            ev.eval(x, &mut a)?;
            ev.eval(y, &mut b)?;
            Ok(monotone_quotient(x, y, &a, &b))
        })
        .collect::<Result<Vec<_>, EffectiveError>>()?;
    Ok(monotonicity_report(&quotients))
}
