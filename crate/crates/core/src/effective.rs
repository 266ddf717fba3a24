//! The homogenized flux b(ξ): exact evaluation through the local system,
//! tabulation on a box with multilinear interpolation, and a sampled
//! monotonicity audit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{CellError, CellOptions, LocalSystem, LocalSystemSolution, PeriodicGrid};
use crate::flux::Flux;
use crate::scale::ScaleExponents;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EffectiveError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("gradient {xi:?} outside the table box [-{bound}, {bound}]")]
    OutOfTableRange { xi: Vec<f64>, bound: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Anything that evaluates a homogenized flux.
pub trait EffectiveFlux: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError>;
}

impl<T: EffectiveFlux + ?Sized> EffectiveFlux for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        (**self).eval(xi, out)
    }
}

/// b(ξ) = Bξ with a constant N×N matrix B (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEffectiveFlux {
    pub dim: usize,
    pub matrix: Vec<f64>,
}

impl LinearEffectiveFlux {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), dim * dim, "matrix must be {dim}x{dim}");
        LinearEffectiveFlux { dim, matrix }
    }

    pub fn isotropic(dim: usize, c: f64) -> Self {
        let mut m = vec![0.0; dim * dim];
        for k in 0..dim {
            m[k * dim + k] = c;
        }
        LinearEffectiveFlux { dim, matrix: m }
    }

    /// Recovers B from N evaluations of a flux that is linear in ξ.
    pub fn probe<E: EffectiveFlux + ?Sized>(ev: &E) -> Result<Self, EffectiveError> {
        let dim = ev.dim();
        let mut matrix = vec![0.0; dim * dim];
        let mut out = vec![0.0; dim];
        for c in 0..dim {
            let mut e = vec![0.0; dim];
            e[c] = 1.0;
            ev.eval(&e, &mut out)?;
            for r in 0..dim {
                matrix[r * dim + c] = out[r];
            }
        }
        Ok(LinearEffectiveFlux { dim, matrix })
    }
}

impl EffectiveFlux for LinearEffectiveFlux {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        for r in 0..self.dim {
            out[r] = (0..self.dim).map(|c| self.matrix[r * self.dim + c] * xi[c]).sum();
        }
        Ok(())
    }
}

/// Evaluates b by solving the local system at every query.
pub struct EffectiveFluxEvaluator<'a, F: Flux> {
    system: LocalSystem<'a, F>,
    pub opts: CellOptions,
}

impl<'a, F: Flux> EffectiveFluxEvaluator<'a, F> {
    pub fn new(flux: &'a F, exps: &ScaleExponents, grid: PeriodicGrid, opts: CellOptions) -> Result<Self, EffectiveError> {
        Ok(EffectiveFluxEvaluator {
            system: LocalSystem::new(flux, exps, grid)?,
            opts,
        })
    }

    pub fn system(&self) -> &LocalSystem<'a, F> {
        &self.system
    }

    pub fn solve(&self, xi: &[f64]) -> Result<LocalSystemSolution, EffectiveError> {
        Ok(self.system.solve(xi, &self.opts)?)
    }
}

impl<F: Flux> EffectiveFlux for EffectiveFluxEvaluator<'_, F> {
    fn dim(&self) -> usize {
        self.system.grid().dim
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        let sol = self.solve(xi)?;
        out.copy_from_slice(&sol.mean_flux);
        Ok(())
    }
}

pub fn effective_flux<E: EffectiveFlux + ?Sized>(ev: &E, xi: &[f64]) -> Result<Vec<f64>, EffectiveError> {
    let mut out = vec![0.0; ev.dim()];
    ev.eval(xi, &mut out)?;
    Ok(out)
}

/// b sampled on the nodes of [−Ξ, Ξ]^N, R nodes per axis, row-major with
/// the first axis most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTable {
    pub dim: usize,
    pub bound: f64,
    pub resolution: usize,
    /// R^N nodes × N components.
    pub values: Vec<f64>,
}

impl FluxTable {
    fn check_shape(dim: usize, bound: f64, resolution: usize) -> Result<(), EffectiveError> {
        if !(bound > 0.0 && bound.is_finite()) || resolution < 3 || !(1..=2).contains(&dim) {
            return Err(EffectiveError::Invalid(alloc::format!(
                "table needs bound > 0, resolution >= 3 and dimension 1 or 2 (got {bound}, {resolution}, {dim})"
            )));
        }
        Ok(())
    }

    /// Gradients at the table nodes, in storage order.
    pub fn node_points(dim: usize, bound: f64, resolution: usize) -> Vec<Vec<f64>> {
        let count = resolution.pow(dim as u32);
        (0..count)
            .map(|idx| {
                let mut xi = vec![0.0; dim];
                let mut r = idx;
                for c in (0..dim).rev() {
                    xi[c] = node_coord(bound, resolution, r % resolution);
                    r /= resolution;
                }
                xi
            })
            .collect()
    }

    /// Builds a table from values computed elsewhere (in storage order).
    pub fn from_values(dim: usize, bound: f64, resolution: usize, values: Vec<f64>) -> Result<Self, EffectiveError> {
        Self::check_shape(dim, bound, resolution)?;
        if values.len() != resolution.pow(dim as u32) * dim {
            return Err(EffectiveError::Invalid(alloc::format!(
                "{} table values for {} nodes of dimension {dim}",
                values.len(),
                resolution.pow(dim as u32)
            )));
        }
        Ok(FluxTable {
            dim,
            bound,
            resolution,
            values,
        })
    }

    /// Evaluates b at every node, sequentially.
    pub fn tabulate<E: EffectiveFlux + ?Sized>(ev: &E, bound: f64, resolution: usize) -> Result<Self, EffectiveError> {
        let dim = ev.dim();
        Self::check_shape(dim, bound, resolution)?;
        let mut values = Vec::with_capacity(resolution.pow(dim as u32) * dim);
        let mut out = vec![0.0; dim];
        for xi in Self::node_points(dim, bound, resolution) {
            ev.eval(&xi, &mut out)?;
            values.extend_from_slice(&out);
        }
        Self::from_values(dim, bound, resolution, values)
    }

    pub fn node_value(&self, multi_index: &[usize]) -> &[f64] {
        let mut flat = 0;
        for &k in multi_index {
            flat = flat * self.resolution + k;
        }
        &self.values[flat * self.dim..(flat + 1) * self.dim]
    }

    /// Multilinear interpolation, exact at nodes.
    pub fn interp(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        let r = self.resolution;
        let mut cell = [0usize; 2];
        let mut frac = [0.0; 2];
        for c in 0..self.dim {
            let x = xi[c];
            if !(libm::fabs(x) <= self.bound * (1.0 + 1e-12)) {
                return Err(EffectiveError::OutOfTableRange {
                    xi: xi.to_vec(),
                    bound: self.bound,
                });
            }
            let mut t = (x + self.bound) / (2.0 * self.bound) * (r - 1) as f64;
            let nearest = libm::round(t);
            // exact at nodes without flattening b near them
            if nearest >= 0.0 && nearest < r as f64 && node_coord(self.bound, r, nearest as usize) == x {
                t = nearest;
            }
            t = t.clamp(0.0, (r - 1) as f64);
            let k = (libm::floor(t) as usize).min(r - 2);
            cell[c] = k;
            frac[c] = t - k as f64;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = [0usize; 2];
            for c in 0..self.dim {
                let up = (corner >> c) & 1 == 1;
                idx[c] = cell[c] + up as usize;
                w *= if up { frac[c] } else { 1.0 - frac[c] };
            }
            if w == 0.0 {
                continue;
            }
            let v = self.node_value(&idx[..self.dim]);
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        Ok(())
    }
}

fn node_coord(bound: f64, resolution: usize, k: usize) -> f64 {
    if 2 * k + 1 == resolution {
        return 0.0;
    }
    -bound + 2.0 * bound * k as f64 / (resolution - 1) as f64
}

impl EffectiveFlux for FluxTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), EffectiveError> {
        self.interp(xi, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub min_quotient: f64,
    pub max_quotient: f64,
    /// Ten equal bins over [min, max]: (lower edge, count).
    pub histogram: Vec<(f64, usize)>,
    pub pass: bool,
}

/// The gradient pairs audited by [`check_monotone`]: uniform in
/// [−radius, radius]^N, skipping nearly coincident pairs.
pub fn monotone_sample_pairs(dim: usize, pair_count: usize, seed: u64, radius: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(pair_count);
    while pairs.len() < pair_count {
        let x: Vec<f64> = (0..dim).map(|_| radius * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let y: Vec<f64> = (0..dim).map(|_| radius * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let d2: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
        if d2 >= 1e-12 * radius * radius {
            pairs.push((x, y));
        }
    }
    pairs
}

/// (b(ξ)−b(ξ'))·(ξ−ξ')/|ξ−ξ'|² for one pair.
pub fn monotone_quotient(x: &[f64], y: &[f64], bx: &[f64], by: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut d2 = 0.0;
    for k in 0..x.len() {
        dot += (bx[k] - by[k]) * (x[k] - y[k]);
        d2 += (x[k] - y[k]) * (x[k] - y[k]);
    }
    dot / d2
}

/// Summarizes quotients in sample order.
pub fn monotonicity_report(quotients: &[f64]) -> MonotonicityReport {
    let min = quotients.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = quotients.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / 10.0;
    let mut histogram: Vec<(f64, usize)> = (0..10).map(|k| (min + k as f64 * width, 0)).collect();
    for q in quotients {
        let k = if width > 0.0 { (((q - min) / width) as usize).min(9) } else { 0 };
        histogram[k].1 += 1;
    }
    MonotonicityReport {
        pairs: quotients.len(),
        min_quotient: min,
        max_quotient: max,
        histogram,
        pass: min > 0.0,
    }
}

pub const MIN_MONOTONE_PAIRS: usize = 100;

/// Samples pairs in [−radius, radius]^N and reports the quotients
/// (b(ξ)−b(ξ'))·(ξ−ξ')/|ξ−ξ'|².
pub fn check_monotone<E: EffectiveFlux + ?Sized>(
    ev: &E,
    pair_count: usize,
    seed: u64,
    radius: f64,
) -> Result<MonotonicityReport, EffectiveError> {
    if pair_count < MIN_MONOTONE_PAIRS {
        return Err(EffectiveError::Invalid(alloc::format!("{pair_count} pairs requested; at least 100 are required")));
    }
    let n = ev.dim();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    let mut quotients = Vec::with_capacity(pair_count);
    for (x, y) in monotone_sample_pairs(n, pair_count, seed, radius) {
        ev.eval(&x, &mut a)?;
        ev.eval(&y, &mut b)?;
        quotients.push(monotone_quotient(&x, &y, &a, &b));
    }
    Ok(monotonicity_report(&quotients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::FluxSpec;

    fn one_scale() -> ScaleExponents {
        ScaleExponents::given(vec![0], vec![0.0], 0)
    }

    #[test]
    fn harmonic_mean_benchmark() {
        let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
        let grid = PeriodicGrid::new(1, 256, 8).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flux, &one_scale(), grid, CellOptions::default()).unwrap();
        let b = effective_flux(&ev, &[1.0]).unwrap();
        assert!((b[0] / libm::sqrt(3.0) - 1.0).abs() < 1e-6);
        assert_eq!(effective_flux(&ev, &[0.0]).unwrap(), [0.0]);
    }

    #[test]
    fn table_nodes_and_interpolation() {
        let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
        let grid = PeriodicGrid::new(1, 64, 8).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flux, &one_scale(), grid, CellOptions::default()).unwrap();
        let t = FluxTable::tabulate(&ev, 2.0, 5).unwrap();
        let s3 = libm::sqrt(3.0);
        for (k, v) in t.values.iter().enumerate() {
            assert!((v - s3 * (k as f64 - 2.0)).abs() < 1e-9);
        }
        let mut out = [0.0];
        t.interp(&[1.0], &mut out).unwrap();
        assert_eq!(out[0], t.values[3]);
        t.interp(&[0.37], &mut out).unwrap();
        assert!((out[0] - effective_flux(&ev, &[0.37]).unwrap()[0]).abs() < 1e-9);
        assert!(matches!(t.interp(&[2.5], &mut out), Err(EffectiveError::OutOfTableRange { .. })));

        let small = FluxTable::tabulate(&ev, 1.0, 3).unwrap();
        assert_eq!(FluxTable::node_points(1, 1.0, 3), [[-1.0], [0.0], [1.0]]);
        assert_eq!(small.values[1], 0.0);
    }

    #[test]
    fn table_in_two_dimensions_is_odd_and_exact_on_linear_data() {
        let flux = FluxSpec::linear("2+sin(2*pi*y1_1)", 2, 1, 0).unwrap();
        let grid = PeriodicGrid::new(2, 8, 8).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flux, &one_scale(), grid, CellOptions::default()).unwrap();
        let t = FluxTable::tabulate(&ev, 1.0, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (p, m) = (t.node_value(&[i, j]), t.node_value(&[2 - i, 2 - j]));
                assert!((p[0] + m[0]).abs() < 1e-10 && (p[1] + m[1]).abs() < 1e-10);
            }
        }
        let mut out = [0.0; 2];
        t.interp(&[0.3, -0.8], &mut out).unwrap();
        let direct = effective_flux(&ev, &[0.3, -0.8]).unwrap();
        assert!((out[0] - direct[0]).abs() < 1e-9 && (out[1] - direct[1]).abs() < 1e-9);
    }

    #[test]
    fn monotonicity_audit() {
        let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
        let grid = PeriodicGrid::new(1, 64, 8).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flux, &one_scale(), grid, CellOptions::default()).unwrap();
        let r = check_monotone(&ev, 100, 1, 3.0).unwrap();
        assert!(r.pass && (r.min_quotient - libm::sqrt(3.0)).abs() < 1e-4);
        assert_eq!(r.histogram.iter().map(|h| h.1).sum::<usize>(), 100);

        let flat = FluxSpec::linear("1.25", 1, 1, 0).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flat, &one_scale(), grid, CellOptions::default()).unwrap();
        let r = check_monotone(&ev, 100, 2, 3.0).unwrap();
        assert!((r.min_quotient - 1.25).abs() < 1e-12);

        let ql = FluxSpec::quasilinear("1", 0.1, 1, 1, 0).unwrap();
        let ev = EffectiveFluxEvaluator::new(&ql, &one_scale(), grid, CellOptions::default()).unwrap();
        assert!(check_monotone(&ev, 200, 3, 3.0).unwrap().pass);
    }
}
