//! Direct simulation of the oscillating problem at fixed ε (1D), and the
//! comparison against the homogenized solution.

use alloc::vec;
use alloc::vec::Vec;

use crate::effective::EffectiveFlux;
use crate::expr::Expr;
use crate::flux::Flux;
use crate::macro_solver::{
    l2_spacetime_error, march, solve_homogenized, ElementFlux, Geometry, MacroError, MacroMesh, MacroOptions,
    ProblemData, SpaceTimeField,
};
use crate::scale::SCALE_VAR;

#[derive(Debug, Clone, PartialEq)]
pub struct DnsConfig {
    /// Spatial scale functions of `eps`, slowest first.
    pub spatial: Vec<Expr>,
    /// Temporal scale functions of `eps`.
    pub temporal: Vec<Expr>,
    pub eps: f64,
    /// Mesh points per period of the fastest spatial scale.
    pub k_x: usize,
    /// Time steps per period of the fastest temporal scale.
    pub k_t: usize,
    pub max_m_x: usize,
    pub max_m_t: usize,
}

impl DnsConfig {
    pub fn new(spatial: Vec<Expr>, temporal: Vec<Expr>, eps: f64) -> Self {
        DnsConfig {
            spatial,
            temporal,
            eps,
            k_x: 16,
            k_t: 16,
            max_m_x: 200_000,
            max_m_t: 200_000,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        DnsConfig { eps, ..self.clone() }
    }

    fn values(list: &[Expr], eps: f64) -> Result<Vec<f64>, MacroError> {
        list.iter()
            .map(|e| {
                let mut env = alloc::collections::BTreeMap::new();
                env.insert(SCALE_VAR.into(), eps);
                let v = e.eval_map(&env)?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(MacroError::Invalid(alloc::format!("scale {e} is {v} at eps = {eps}")));
                }
                Ok(v)
            })
            .collect()
    }

    pub fn spatial_values(&self) -> Result<Vec<f64>, MacroError> {
        Self::values(&self.spatial, self.eps)
    }

    pub fn temporal_values(&self) -> Result<Vec<f64>, MacroError> {
        Self::values(&self.temporal, self.eps)
    }

    /// The coarsest mesh at least as fine as `hint` that resolves every
    /// scale, or ResolutionCapExceeded.
    pub fn resolve(&self, hint: &MacroMesh) -> Result<MacroMesh, MacroError> {
        if hint.dim != 1 {
            return Err(MacroError::Invalid("direct simulation is one dimensional".into()));
        }
        if self.k_x == 0 || self.k_t == 0 {
            return Err(MacroError::Invalid("K_x and K_t must be positive".into()));
        }
        let len = hint.upper[0] - hint.lower[0];
        let fastest = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
        let need = |extent: f64, period: f64, per: usize| {
            let c = libm::ceil(extent * per as f64 / period);
            if c.is_finite() && c < 1e15 {
                c as usize
            } else {
                usize::MAX
            }
        };
        let mut cells = hint.m_x[0] + 1;
        let hs = fastest(self.spatial_values()?);
        if hs.is_finite() {
            cells = cells.max(need(len, hs, self.k_x));
        }
        let mut steps = hint.m_t;
        let ht = fastest(self.temporal_values()?);
        if ht.is_finite() {
            steps = steps.max(need(hint.t_end, ht, self.k_t));
        }
        let m_x = cells.saturating_sub(1);
        if m_x > self.max_m_x || steps > self.max_m_t {
            return Err(MacroError::ResolutionCapExceeded {
                required_m_x: m_x,
                required_m_t: steps,
                cap_m_x: self.max_m_x,
                cap_m_t: self.max_m_t,
            });
        }
        MacroMesh::interval(hint.lower[0], hint.upper[0], m_x, hint.t_end, steps)
    }
}

/// a(x/ε̂, t/ε̌, ·) on each element, material sampled at the element
/// midpoint and the new time level.
struct Oscillating<'a, F: Flux> {
    flux: &'a F,
    coords: Vec<f64>,
    spatial: Vec<f64>,
    temporal: Vec<f64>,
    points: Vec<F::Point>,
}

impl<'a, F: Flux> Oscillating<'a, F> {
    fn new(flux: &'a F, geo: &Geometry, spatial: Vec<f64>, temporal: Vec<f64>) -> Result<Self, MacroError> {
        let mut s = Self {
            flux,
            coords: geo.centroids().iter().map(|c| c[0]).collect(),
            spatial,
            temporal,
            points: Vec::new(),
        };
        s.refresh(0.0)?;
        Ok(s)
    }

    fn refresh(&mut self, t: f64) -> Result<(), MacroError> {
        let s: Vec<f64> = self.temporal.iter().map(|e| t / e).collect();
        let mut y = vec![0.0; self.spatial.len()];
        self.points.clear();
        for &x in &self.coords {
            for (yk, e) in y.iter_mut().zip(&self.spatial) {
                *yk = x / e;
            }
            self.points.push(self.flux.point(&y, &s)?);
        }
        Ok(())
    }
}

impl<F: Flux> ElementFlux for Oscillating<'_, F> {
    fn dim(&self) -> usize {
        1
    }

    fn set_time(&mut self, t: f64) -> Result<(), MacroError> {
        if self.temporal.is_empty() {
            Ok(())
        } else {
            self.refresh(t)
        }
    }

    fn eval(&self, elem: usize, g: &[f64], out: &mut [f64]) -> Result<(), MacroError> {
        self.flux.apply(&self.points[elem], g, out);
        Ok(())
    }
}

/// Solves the ε-problem on `cfg.resolve(hint)`.
pub fn solve_eps<F: Flux>(
    flux: &F,
    cfg: &DnsConfig,
    data: &ProblemData,
    hint: &MacroMesh,
    opts: &MacroOptions,
) -> Result<SpaceTimeField, MacroError> {
    if flux.dim() != 1 || flux.spatial_scales() != cfg.spatial.len() || flux.temporal_scales() != cfg.temporal.len() {
        return Err(MacroError::Invalid(alloc::format!(
            "flux with N = {}, n = {}, m = {} does not match {} spatial and {} temporal scales in 1D",
            flux.dim(),
            flux.spatial_scales(),
            flux.temporal_scales(),
            cfg.spatial.len(),
            cfg.temporal.len()
        )));
    }
    let mesh = cfg.resolve(hint)?;
    let geo = Geometry::new(&mesh);
    let mut osc = Oscillating::new(flux, &geo, cfg.spatial_values()?, cfg.temporal_values()?)?;
    march(&mesh, data, &mut osc, opts, &alloc::format!("dns eps={}", cfg.eps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub eps: f64,
    pub m_x: usize,
    pub m_t: usize,
    pub error: f64,
}

/// For each ε: the direct solution, the homogenized solution on the same
/// mesh, and their space-time L² distance.
pub fn convergence_study<F: Flux, E: EffectiveFlux + ?Sized>(
    flux: &F,
    template: &DnsConfig,
    eps_list: &[f64],
    data: &ProblemData,
    homogenized: &E,
    hint: &MacroMesh,
    opts: &MacroOptions,
) -> Result<Vec<StudyRow>, MacroError> {
    if eps_list.len() < 3 {
        return Err(MacroError::Invalid("a study needs at least three values of eps".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(MacroError::Invalid("eps values must be positive and strictly decreasing".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let cfg = template.with_eps(eps);
        let mesh = cfg.resolve(hint)?;
        let dns = solve_eps(flux, &cfg, data, hint, opts)?;
        let hom = solve_homogenized(data, homogenized, &mesh, opts)?;
        rows.push(StudyRow {
            eps,
            m_x: mesh.m_x[0],
            m_t: mesh.m_t,
            error: l2_spacetime_error(&dns, &hom)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::LinearEffectiveFlux;
    use crate::flux::FluxSpec;

    fn eps_scale() -> Vec<Expr> {
        vec![Expr::parse("eps", &[SCALE_VAR]).unwrap()]
    }

    #[test]
    fn tiny_eps_exceeds_the_caps() {
        let cfg = DnsConfig::new(eps_scale(), vec![], 1e-6);
        let hint = MacroMesh::interval(0.0, 1.0, 15, 0.5, 20).unwrap();
        assert!(matches!(cfg.resolve(&hint), Err(MacroError::ResolutionCapExceeded { .. })));
        let ok = cfg.with_eps(1.0 / 16.0).resolve(&hint).unwrap();
        assert_eq!(ok.m_x[0], 255);
        assert_eq!(ok.m_t, 20);
    }

    #[test]
    fn constant_coefficient_matches_the_macro_solution() {
        let flux = FluxSpec::linear("1.5", 1, 1, 0).unwrap();
        let data = ProblemData::parse("1", "0", 1).unwrap();
        let hint = MacroMesh::interval(0.0, 1.0, 15, 0.5, 20).unwrap();
        let template = DnsConfig::new(eps_scale(), vec![], 0.1);
        let b = LinearEffectiveFlux::isotropic(1, 1.5);
        let rows = convergence_study(&flux, &template, &[0.125, 0.0625, 0.03125], &data, &b, &hint, &MacroOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.error < 1e-10), "{rows:?}");
    }

    #[test]
    fn oscillating_solution_approaches_the_homogenized_one() {
        let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
        let data = ProblemData::parse("1", "0", 1).unwrap();
        let hint = MacroMesh::interval(0.0, 1.0, 15, 0.5, 20).unwrap();
        let template = DnsConfig::new(eps_scale(), vec![], 0.1);
        let b = LinearEffectiveFlux::isotropic(1, libm::sqrt(3.0));
        let rows = convergence_study(&flux, &template, &[0.125, 0.0625, 0.03125], &data, &b, &hint, &MacroOptions::default()).unwrap();
        assert!(rows[0].error > 0.0);
        assert!(rows.windows(2).all(|w| w[1].error < w[0].error), "{rows:?}");
    }
}
