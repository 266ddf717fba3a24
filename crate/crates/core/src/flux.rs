//! Monotone fluxes a(y^n, s^m, ξ).
//!
//! [`Flux`] is what the solvers consume. [`FluxSpec`] provides the two
//! built-in families, both of the form a = A(y, s)·φ(|ξ|)·ξ with a positive
//! coefficient expression A that is periodized by coordinate wrapping:
//!
//! * `Linear`: φ ≡ 1,
//! * `QuasilinearBounded`: φ(r) = 1 + β/(1 + r²) with 0 ≤ β < 1/3.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{Expr, ExprError};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FluxError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid flux specification: {0}")]
    InvalidSpec(String),
    #[error("structure condition {condition} violated: {detail}")]
    StructureViolation {
        condition: &'static str,
        detail: String,
        witness: Option<Witness>,
    },
}

/// Sample point at which a structure check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub xi: Vec<f64>,
    pub xi_other: Vec<f64>,
}

/// A flux satisfying the monotonicity and growth conditions.
///
/// Evaluation is split in two: [`Flux::point`] freezes the microstructure at
/// (y, s), and [`Flux::apply`] evaluates the frozen map at a gradient. Cell
/// solvers freeze every quadrature point once and then apply many times.
pub trait Flux: Sync {
    type Point: Copy + Send + Sync;

    /// Spatial dimension N.
    fn dim(&self) -> usize;
    /// Number of spatial cell variables n.
    fn spatial_scales(&self) -> usize;
    /// Number of temporal cell variables m.
    fn temporal_scales(&self) -> usize;

    /// `y` holds n·N coordinates (cell by cell), `s` holds m.
    fn point(&self, y: &[f64], s: &[f64]) -> Result<Self::Point, FluxError>;

    fn apply(&self, p: &Self::Point, xi: &[f64], out: &mut [f64]);

    fn eval(&self, y: &[f64], s: &[f64], xi: &[f64], out: &mut [f64]) -> Result<(), FluxError> {
        let p = self.point(y, s)?;
        self.apply(&p, xi, out);
        Ok(())
    }

    /// ∂a/∂ξ, row-major N×N, by central differences.
    fn tangent(&self, p: &Self::Point, xi: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut xp = [0.0; MAX_DIM];
        let mut xm = [0.0; MAX_DIM];
        let mut ap = [0.0; MAX_DIM];
        let mut am = [0.0; MAX_DIM];
        for k in 0..n {
            xp[..n].copy_from_slice(xi);
            xm[..n].copy_from_slice(xi);
            let h = fd_step(xi[k]);
            xp[k] += h;
            xm[k] -= h;
            let width = xp[k] - xm[k];
            self.apply(p, &xp[..n], &mut ap[..n]);
            self.apply(p, &xm[..n], &mut am[..n]);
            for r in 0..n {
                out[r * n + k] = (ap[r] - am[r]) / width;
            }
        }
    }
}

/// Central-difference step balancing truncation and rounding.
pub(crate) fn fd_step(x: f64) -> f64 {
    6e-6 * (1.0 + libm::fabs(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Linear,
    QuasilinearBounded { beta: f64 },
}

/// Constants C₀, C₁, α of the monotonicity and continuity conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureConstants {
    pub c0: f64,
    pub c1: f64,
    pub alpha: f64,
}

/// Sampled range of the coefficient A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub min: f64,
    pub max: f64,
}

/// Built-in flux a = A(y, s)·φ(|ξ|)·ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSpec {
    pub family: Family,
    coefficient: Expr,
    dim: usize,
    n: usize,
    m: usize,
    bounds: CoefficientBounds,
    pub constants: StructureConstants,
}

/// Names of the coefficient variables: `y1..yn` (or `y1_1, y1_2, ...` when
/// N = 2) followed by `s1..sm`.
pub fn coefficient_variables(dim: usize, n: usize, m: usize) -> Vec<String> {
    let mut v = Vec::with_capacity(n * dim + m);
    for i in 1..=n {
        if dim == 1 {
            v.push(alloc::format!("y{i}"));
        } else {
            for c in 1..=dim {
                v.push(alloc::format!("y{i}_{c}"));
            }
        }
    }
    for j in 1..=m {
        v.push(alloc::format!("s{j}"));
    }
    v
}

fn wrap(x: f64) -> f64 {
    let w = x - libm::floor(x);
    // x slightly below an integer can round up to exactly 1
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl FluxSpec {
    /// Parses the coefficient, checks admissibility and samples A on a
    /// grid. Without declared constants, C₀ and C₁ are derived from the
    /// sampled bounds (widened by 0.1%) and α = 1.
    pub fn new(
        family: Family,
        coefficient: &str,
        dim: usize,
        n: usize,
        m: usize,
        declared: Option<StructureConstants>,
    ) -> Result<Self, FluxError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(FluxError::InvalidSpec(alloc::format!("dimension {dim} not in 1..=2")));
        }
        if n == 0 || n > 2 {
            return Err(FluxError::InvalidSpec(alloc::format!(
                "{n} spatial scales; between 1 and 2 are supported"
            )));
        }
        if m > 3 {
            return Err(FluxError::InvalidSpec(alloc::format!(
                "{m} temporal scales; at most 3 are supported"
            )));
        }
        if let Family::QuasilinearBounded { beta } = family {
            check_beta(beta)?;
        }
        let names = coefficient_variables(dim, n, m);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let coefficient = Expr::parse(coefficient, &refs)?;
        let mut spec = FluxSpec {
            family,
            coefficient,
            dim,
            n,
            m,
            bounds: CoefficientBounds { min: 0.0, max: 0.0 },
            constants: StructureConstants {
                c0: 0.0,
                c1: 0.0,
                alpha: 1.0,
            },
        };
        spec.bounds = spec.sample_bounds()?;
        spec.constants = declared.unwrap_or_else(|| spec.derived_constants());
        let c = spec.constants;
        if !(c.c0 > 0.0 && c.c1 >= c.c0 && c.alpha > 0.0 && c.alpha <= 1.0) {
            return Err(FluxError::InvalidSpec(alloc::format!(
                "constants C0 = {}, C1 = {}, alpha = {} are not admissible",
                c.c0,
                c.c1,
                c.alpha
            )));
        }
        Ok(spec)
    }

    pub fn linear(coefficient: &str, dim: usize, n: usize, m: usize) -> Result<Self, FluxError> {
        FluxSpec::new(Family::Linear, coefficient, dim, n, m, None)
    }

    pub fn quasilinear(coefficient: &str, beta: f64, dim: usize, n: usize, m: usize) -> Result<Self, FluxError> {
        FluxSpec::new(Family::QuasilinearBounded { beta }, coefficient, dim, n, m, None)
    }

    pub fn coefficient(&self) -> &Expr {
        &self.coefficient
    }

    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }

    /// Whether A depends on any temporal variable.
    pub fn is_time_dependent(&self) -> bool {
        (1..=self.m).any(|j| self.coefficient.depends_on(&alloc::format!("s{j}")))
    }

    fn derived_constants(&self) -> StructureConstants {
        let lo = self.bounds.min * (1.0 - 1e-3);
        let hi = self.bounds.max * (1.0 + 1e-3);
        match self.family {
            Family::Linear => StructureConstants {
                c0: lo,
                c1: hi,
                alpha: 1.0,
            },
            Family::QuasilinearBounded { beta } => StructureConstants {
                c0: lo * (1.0 - 3.0 * beta),
                c1: hi * (1.0 + beta),
                alpha: 1.0,
            },
        }
    }

    /// Evaluates A on a tensor grid over the unit cell.
    fn sample_bounds(&self) -> Result<CoefficientBounds, FluxError> {
        let vars = self.n * self.dim + self.m;
        let per_axis = if vars == 0 {
            1
        } else {
            let mut p = 64usize;
            while p > 2 && p.checked_pow(vars as u32).map_or(true, |t| t > 1 << 16) {
                p /= 2;
            }
            p
        };
        let total = per_axis.pow(vars as u32);
        let mut env = alloc::vec![0.0; vars];
        let mut bounds = CoefficientBounds {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for idx in 0..total {
            let mut r = idx;
            for v in env.iter_mut() {
                *v = (r % per_axis) as f64 / per_axis as f64;
                r /= per_axis;
            }
            let a = self.coefficient.eval(&env)?;
            if !(a > 0.0) || !a.is_finite() {
                return Err(FluxError::InvalidSpec(alloc::format!(
                    "coefficient `{}` is not positive at {:?}: {}",
                    self.coefficient,
                    env,
                    a
                )));
            }
            bounds.min = bounds.min.min(a);
            bounds.max = bounds.max.max(a);
        }
        Ok(bounds)
    }

    /// Runs the admissibility rule and then the sampled structure audit
    /// against the declared constants.
    pub fn verify_structure(&self, sample_count: usize, seed: u64) -> Result<StructureReport, FluxError> {
        if let Family::QuasilinearBounded { beta } = self.family {
            check_beta(beta)?;
        }
        verify_structure(self, &self.constants, sample_count, seed)
    }
}

fn check_beta(beta: f64) -> Result<(), FluxError> {
    if !(0.0..1.0 / 3.0).contains(&beta) {
        return Err(FluxError::StructureViolation {
            condition: "(iv)",
            detail: alloc::format!("beta = {beta} is outside the admissible range [0, 1/3)"),
            witness: None,
        });
    }
    Ok(())
}

/// Frozen coefficient value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient(pub f64);

impl Flux for FluxSpec {
    type Point = Coefficient;

    fn dim(&self) -> usize {
        self.dim
    }

    fn spatial_scales(&self) -> usize {
        self.n
    }

    fn temporal_scales(&self) -> usize {
        self.m
    }

    fn point(&self, y: &[f64], s: &[f64]) -> Result<Coefficient, FluxError> {
        let mut env = [0.0; 2 * MAX_DIM + 3];
        let ny = self.n * self.dim;
        for (e, v) in env.iter_mut().zip(&y[..ny]) {
            *e = wrap(*v);
        }
        for (e, v) in env[ny..].iter_mut().zip(&s[..self.m]) {
            *e = wrap(*v);
        }
        Ok(Coefficient(self.coefficient.eval(&env[..ny + self.m])?))
    }

    #[inline]
    fn apply(&self, p: &Coefficient, xi: &[f64], out: &mut [f64]) {
        let scale = match self.family {
            Family::Linear => p.0,
            Family::QuasilinearBounded { beta } => {
                let r2: f64 = xi.iter().map(|x| x * x).sum();
                p.0 * (1.0 + beta / (1.0 + r2))
            }
        };
        for (o, x) in out.iter_mut().zip(xi) {
            *o = scale * x;
        }
    }
}

/// Measured structure constants.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub samples: usize,
    pub declared: StructureConstants,
    /// Minimum of (a(ξ)−a(ξ'))·(ξ−ξ')/|ξ−ξ'|².
    pub measured_c0: f64,
    /// Maximum of |a(ξ)−a(ξ')| / ((1+|ξ|+|ξ'|)^{1−α} |ξ−ξ'|^α).
    pub measured_c1: f64,
    /// Maximum of |a(ξ)| / (1+|ξ|).
    pub max_growth: f64,
    /// Largest deviation under integer shifts of (y, s).
    pub max_periodicity_dev: f64,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Monte Carlo audit of conditions (i), (ii), (iv), (v) and the growth bound.
pub fn verify_structure<F: Flux>(
    flux: &F,
    declared: &StructureConstants,
    sample_count: usize,
    seed: u64,
) -> Result<StructureReport, FluxError> {
    if sample_count < 1000 {
        return Err(FluxError::InvalidSpec(alloc::format!(
            "{sample_count} samples requested; at least 1000 are required"
        )));
    }
    let n = flux.dim();
    let ny = flux.spatial_scales() * n;
    let m = flux.temporal_scales();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = alloc::vec![0.0; ny];
    let mut s = alloc::vec![0.0; m];
    let mut ys = alloc::vec![0.0; ny];
    let mut ss = alloc::vec![0.0; m];
    let mut xi = [0.0; MAX_DIM];
    let mut xj = [0.0; MAX_DIM];
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    let mut report = StructureReport {
        samples: sample_count,
        declared: *declared,
        measured_c0: f64::INFINITY,
        measured_c1: 0.0,
        max_growth: 0.0,
        max_periodicity_dev: 0.0,
    };
    let zero = [0.0; MAX_DIM];
    for _ in 0..sample_count {
        y.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        s.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let magnitude = if rng.gen_bool(0.25) { 0.01 } else { 5.0 };
        for k in 0..n {
            xi[k] = magnitude * (2.0 * rng.gen::<f64>() - 1.0);
            xj[k] = magnitude * (2.0 * rng.gen::<f64>() - 1.0);
        }
        let witness = |y: &[f64], s: &[f64]| {
            Some(Witness {
                y: y.to_vec(),
                s: s.to_vec(),
                xi: xi[..n].to_vec(),
                xi_other: xj[..n].to_vec(),
            })
        };
        let p = flux.point(&y, &s)?;

        flux.apply(&p, &zero[..n], &mut a[..n]);
        if a[..n].iter().any(|v| *v != 0.0) {
            return Err(FluxError::StructureViolation {
                condition: "(i)",
                detail: alloc::format!("a(y, s, 0) = {:?}", &a[..n]),
                witness: witness(&y, &s),
            });
        }

        flux.apply(&p, &xi[..n], &mut a[..n]);
        flux.apply(&p, &xj[..n], &mut b[..n]);

        for (dst, src) in ys.iter_mut().zip(&y) {
            *dst = src + rng.gen_range(-2i32..=2) as f64;
        }
        for (dst, src) in ss.iter_mut().zip(&s) {
            *dst = src + rng.gen_range(-2i32..=2) as f64;
        }
        let mut shifted = [0.0; MAX_DIM];
        flux.eval(&ys, &ss, &xi[..n], &mut shifted[..n])?;
        let dev = (0..n).map(|k| libm::fabs(shifted[k] - a[k])).fold(0.0, f64::max);
        let dev = dev / (1.0 + norm(&a[..n]));
        report.max_periodicity_dev = report.max_periodicity_dev.max(dev);
        if dev > 1e-10 {
            return Err(FluxError::StructureViolation {
                condition: "(ii)",
                detail: alloc::format!("relative deviation {dev:e} under an integer shift"),
                witness: witness(&ys, &ss),
            });
        }

        let mut dxi = [0.0; MAX_DIM];
        let mut da = [0.0; MAX_DIM];
        for k in 0..n {
            dxi[k] = xi[k] - xj[k];
            da[k] = a[k] - b[k];
        }
        let dist = norm(&dxi[..n]);
        if dist > 0.0 {
            let q = (0..n).map(|k| da[k] * dxi[k]).sum::<f64>() / (dist * dist);
            report.measured_c0 = report.measured_c0.min(q);
            if q < declared.c0 - 1e-9 {
                return Err(FluxError::StructureViolation {
                    condition: "(iv)",
                    detail: alloc::format!("monotonicity quotient {q} below C0 = {}", declared.c0),
                    witness: witness(&y, &s),
                });
            }
            let alpha = declared.alpha;
            let denom = libm::pow(1.0 + norm(&xi[..n]) + norm(&xj[..n]), 1.0 - alpha) * libm::pow(dist, alpha);
            let c1 = norm(&da[..n]) / denom;
            report.measured_c1 = report.measured_c1.max(c1);
            if c1 > declared.c1 + 1e-9 {
                return Err(FluxError::StructureViolation {
                    condition: "(v)",
                    detail: alloc::format!("continuity quotient {c1} above C1 = {}", declared.c1),
                    witness: witness(&y, &s),
                });
            }
        }
        let growth = norm(&a[..n]) / (1.0 + norm(&xi[..n]));
        report.max_growth = report.max_growth.max(growth);
        if growth > declared.c1 + 1e-9 {
            return Err(FluxError::StructureViolation {
                condition: "growth",
                detail: alloc::format!("|a(xi)| / (1 + |xi|) = {growth} above C1 = {}", declared.c1),
                witness: witness(&y, &s),
            });
        }
    }
    Ok(report)
}

impl core::fmt::Display for FluxSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let family = match self.family {
            Family::Linear => "linear".to_string(),
            Family::QuasilinearBounded { beta } => alloc::format!("quasilinear-bounded(beta={beta})"),
        };
        write!(
            f,
            "{} flux, A = {}, N = {}, n = {}, m = {}",
            family, self.coefficient, self.dim, self.n, self.m
        )
    }
}
