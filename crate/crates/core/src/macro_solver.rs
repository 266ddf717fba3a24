//! Implicit Euler with damped Newton for
//! ∂_t u − ∇·b(∇u) = f in Ω × (0, T), u = 0 on ∂Ω, u(·, 0) = u⁰.
//!
//! Space: P1 elements on a uniform grid of the interval or rectangle (in
//! 2D each square is cut along its rising diagonal), one-point quadrature
//! of the flux per element, lumped mass. In 1D this is the staggered
//! difference scheme with fluxes at cell midpoints.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::effective::{EffectiveError, EffectiveFlux};
use crate::expr::{Expr, ExprError};
use crate::flux::{fd_step, FluxError, MAX_DIM};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MacroError {
    #[error(transparent)]
    Flux(#[from] EffectiveError),
    #[error(transparent)]
    Material(#[from] FluxError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("Newton stalled at step {step} (t = {time}) with residual {residual:e}")]
    NewtonStalled { step: usize, time: f64, residual: f64 },
    #[error("linear solve failed at step {step}")]
    LinearSolveFailed { step: usize },
    #[error("invalid macro problem: {0}")]
    Invalid(String),
    #[error("fields live on different domains: {0}")]
    DomainMismatch(String),
    #[error(
        "resolving the scales needs M_x = {required_m_x}, M_t = {required_m_t}; caps are {cap_m_x}, {cap_m_t}"
    )]
    ResolutionCapExceeded {
        required_m_x: usize,
        required_m_t: usize,
        cap_m_x: usize,
        cap_m_t: usize,
    },
}

/// Uniform space-time mesh. `m_x` counts interior nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroMesh {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub m_x: [usize; 2],
    pub t_end: f64,
    pub m_t: usize,
}

impl MacroMesh {
    pub fn interval(a: f64, b: f64, m_x: usize, t_end: f64, m_t: usize) -> Result<Self, MacroError> {
        MacroMesh {
            dim: 1,
            lower: [a, 0.0],
            upper: [b, 0.0],
            m_x: [m_x, 0],
            t_end,
            m_t,
        }
        .validated()
    }

    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], m_x: [usize; 2], t_end: f64, m_t: usize) -> Result<Self, MacroError> {
        MacroMesh {
            dim: 2,
            lower,
            upper,
            m_x,
            t_end,
            m_t,
        }
        .validated()
    }

    fn validated(self) -> Result<Self, MacroError> {
        for c in 0..self.dim {
            if !(self.upper[c] > self.lower[c]) || !(self.lower[c].is_finite() && self.upper[c].is_finite()) {
                return Err(MacroError::Invalid(alloc::format!(
                    "empty domain along axis {}: [{}, {}]",
                    c + 1,
                    self.lower[c],
                    self.upper[c]
                )));
            }
            if self.m_x[c] < 4 {
                return Err(MacroError::Invalid(alloc::format!("M_x = {} is below 4", self.m_x[c])));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || self.m_t < 2 {
            return Err(MacroError::Invalid(alloc::format!(
                "need T > 0 and M_t >= 2 (got {}, {})",
                self.t_end,
                self.m_t
            )));
        }
        Ok(self)
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.m_x[axis] + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.m_t as f64
    }

    /// Nodes per axis including the boundary.
    pub fn axis_nodes(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.m_x[axis] + 2
        } else {
            1
        }
    }

    /// Nodes per time level including the boundary.
    pub fn level_nodes(&self) -> usize {
        self.axis_nodes(0) * self.axis_nodes(1)
    }

    pub fn unknowns(&self) -> usize {
        (0..self.dim).map(|c| self.m_x[c]).product()
    }

    /// Coordinates of the node with level index `idx`.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        let nx = self.axis_nodes(0);
        let (i, j) = (idx % nx, idx / nx);
        [
            self.lower[0] + i as f64 * self.h(0),
            if self.dim == 2 { self.lower[1] + j as f64 * self.h(1) } else { 0.0 },
        ]
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.m_t {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    fn is_boundary(&self, idx: usize) -> bool {
        let nx = self.axis_nodes(0);
        let (i, j) = (idx % nx, idx / nx);
        i == 0 || i == nx - 1 || (self.dim == 2 && (j == 0 || j == self.axis_nodes(1) - 1))
    }

    fn same_domain(&self, other: &MacroMesh) -> bool {
        let close = |a: f64, b: f64| libm::fabs(a - b) <= 1e-12 * (1.0 + libm::fabs(a));
        self.dim == other.dim
            && (0..self.dim).all(|c| close(self.lower[c], other.lower[c]) && close(self.upper[c], other.upper[c]))
            && close(self.t_end, other.t_end)
    }
}

/// Nodal values at every time level, boundary nodes included.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub mesh: MacroMesh,
    /// (M_t + 1) levels × level_nodes.
    pub values: Vec<f64>,
    pub provenance: String,
}

impl SpaceTimeField {
    pub fn from_values(mesh: MacroMesh, values: Vec<f64>, provenance: &str) -> Result<Self, MacroError> {
        if values.len() != (mesh.m_t + 1) * mesh.level_nodes() {
            return Err(MacroError::Invalid(alloc::format!(
                "{} values for {} levels of {} nodes",
                values.len(),
                mesh.m_t + 1,
                mesh.level_nodes()
            )));
        }
        Ok(SpaceTimeField {
            mesh,
            values,
            provenance: provenance.into(),
        })
    }

    pub fn levels(&self) -> usize {
        self.mesh.m_t + 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.mesh.level_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    /// Discrete L² norm of one level (lumped quadrature).
    pub fn level_l2(&self, k: usize) -> f64 {
        let area: f64 = (0..self.mesh.dim).map(|c| self.mesh.h(c)).product();
        libm::sqrt(self.level(k).iter().map(|v| v * v).sum::<f64>() * area)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(libm::fabs(*v)))
    }

    /// Multilinear interpolation in (x, t).
    pub fn sample(&self, x: &[f64], t: f64) -> f64 {
        let mesh = &self.mesh;
        let locate = |v: f64, lo: f64, h: f64, cells: usize| {
            let s = ((v - lo) / h).clamp(0.0, cells as f64);
            let k = (libm::floor(s) as usize).min(cells - 1);
            (k, s - k as f64)
        };
        let (kt, ft) = locate(t, 0.0, mesh.dt(), mesh.m_t);
        let mut cell = [(0usize, 0.0f64); 2];
        for c in 0..mesh.dim {
            cell[c] = locate(x[c], mesh.lower[c], mesh.h(c), mesh.m_x[c] + 1);
        }
        let nx = mesh.axis_nodes(0);
        let mut acc = 0.0;
        for corner in 0..(1usize << (mesh.dim + 1)) {
            let up_x = corner & 1;
            let mut w = if up_x == 1 { cell[0].1 } else { 1.0 - cell[0].1 };
            let ix = cell[0].0 + up_x;
            let iy = if mesh.dim == 2 {
                let up = (corner >> 1) & 1;
                w *= if up == 1 { cell[1].1 } else { 1.0 - cell[1].1 };
                cell[1].0 + up
            } else {
                0
            };
            let up_t = (corner >> mesh.dim) & 1;
            w *= if up_t == 1 { ft } else { 1.0 - ft };
            if w == 0.0 {
                continue;
            }
            acc += w * self.level(kt + up_t)[iy * nx + ix];
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MacroInitial {
    /// Newton starts from the previous time level.
    Previous,
    /// Previous level plus a random perturbation of size 0.1.
    Perturbed { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroOptions {
    /// Step accepted when max |strong residual| < tol.
    pub tol: f64,
    pub max_iter: usize,
    pub damping_floor: f64,
    pub cg_tol: f64,
    pub initial: MacroInitial,
}

impl Default for MacroOptions {
    fn default() -> Self {
        MacroOptions {
            tol: 1e-9,
            max_iter: 50,
            damping_floor: 1.0 / 1024.0,
            cg_tol: 1e-13,
            initial: MacroInitial::Previous,
        }
    }
}

/// Source and initial data as expressions over `x, t` (1D) or
/// `x1, x2, t` (2D).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub f: Expr,
    pub u0: Expr,
}

pub fn data_variables(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["x", "t"]
    } else {
        &["x1", "x2", "t"]
    }
}

impl ProblemData {
    pub fn parse(f: &str, u0: &str, dim: usize) -> Result<Self, MacroError> {
        let vars = data_variables(dim);
        Ok(ProblemData {
            f: Expr::parse(f, vars)?,
            u0: Expr::parse(u0, vars)?,
        })
    }

    fn eval(e: &Expr, dim: usize, x: [f64; 2], t: f64) -> Result<f64, MacroError> {
        let env = if dim == 1 { [x[0], t, 0.0] } else { [x[0], x[1], t] };
        Ok(e.eval(&env[..dim + 1])?)
    }
}

/// Flux per element, possibly time dependent.
pub trait ElementFlux {
    fn dim(&self) -> usize;
    /// Called before solving for the level at time t.
    fn set_time(&mut self, t: f64) -> Result<(), MacroError>;
    fn eval(&self, elem: usize, g: &[f64], out: &mut [f64]) -> Result<(), MacroError>;
}

/// The homogenized flux, the same on every element.
pub struct Homogeneous<'a, E: EffectiveFlux + ?Sized>(pub &'a E);

impl<E: EffectiveFlux + ?Sized> ElementFlux for Homogeneous<'_, E> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn set_time(&mut self, _: f64) -> Result<(), MacroError> {
        Ok(())
    }
    fn eval(&self, _: usize, g: &[f64], out: &mut [f64]) -> Result<(), MacroError> {
        Ok(self.0.eval(g, out)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Elem {
    nodes: [usize; 3],
    grad: [[f64; 2]; 3],
}

/// Element geometry of a macro mesh.
pub struct Geometry {
    dim: usize,
    level_nodes: usize,
    elems: Vec<Elem>,
    centroids: Vec<[f64; 2]>,
    weight: f64,
    lumped: f64,
    /// Level index of each unknown.
    interior: Vec<usize>,
}

impl Geometry {
    pub fn new(mesh: &MacroMesh) -> Self {
        let mut elems = Vec::new();
        let mut centroids = Vec::new();
        let hx = mesh.h(0);
        let (ix, mut interior) = (1.0 / hx, Vec::new());
        if mesh.dim == 1 {
            let cells = mesh.m_x[0] + 1;
            for k in 0..cells {
                elems.push(Elem {
                    nodes: [k, k + 1, 0],
                    grad: [[-ix, 0.0], [ix, 0.0], [0.0; 2]],
                });
                centroids.push([mesh.lower[0] + (k as f64 + 0.5) * hx, 0.0]);
            }
            interior.extend(1..=mesh.m_x[0]);
            Geometry {
                dim: 1,
                level_nodes: mesh.level_nodes(),
                elems,
                centroids,
                weight: hx,
                lumped: hx,
                interior,
            }
        } else {
            let hy = mesh.h(1);
            let iy = 1.0 / hy;
            let nx = mesh.axis_nodes(0);
            let id = |i: usize, j: usize| j * nx + i;
            for j in 0..=mesh.m_x[1] {
                for i in 0..=mesh.m_x[0] {
                    let (x, y) = (mesh.lower[0] + i as f64 * hx, mesh.lower[1] + j as f64 * hy);
                    elems.push(Elem {
                        nodes: [id(i, j), id(i + 1, j), id(i + 1, j + 1)],
                        grad: [[-ix, 0.0], [ix, -iy], [0.0, iy]],
                    });
                    centroids.push([x + 2.0 * hx / 3.0, y + hy / 3.0]);
                    elems.push(Elem {
                        nodes: [id(i, j), id(i + 1, j + 1), id(i, j + 1)],
                        grad: [[0.0, -iy], [ix, 0.0], [-ix, iy]],
                    });
                    centroids.push([x + hx / 3.0, y + 2.0 * hy / 3.0]);
                }
            }
            for j in 1..=mesh.m_x[1] {
                for i in 1..=mesh.m_x[0] {
                    interior.push(id(i, j));
                }
            }
            Geometry {
                dim: 2,
                level_nodes: mesh.level_nodes(),
                elems,
                centroids,
                weight: 0.5 * hx * hy,
                lumped: hx * hy,
                interior,
            }
        }
    }

    pub fn elements(&self) -> usize {
        self.elems.len()
    }

    /// Quadrature point of each element.
    pub fn centroids(&self) -> &[[f64; 2]] {
        &self.centroids
    }

    fn arity(&self) -> usize {
        self.dim + 1
    }

    fn gradient(&self, e: &Elem, full: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..self.arity() {
            g[0] += full[e.nodes[a]] * e.grad[a][0];
            g[1] += full[e.nodes[a]] * e.grad[a][1];
        }
        g
    }

    fn scatter(&self, u: &[f64], full: &mut [f64]) {
        full.iter_mut().for_each(|v| *v = 0.0);
        for (k, &idx) in self.interior.iter().enumerate() {
            full[idx] = u[k];
        }
    }
}

/// One implicit Euler step: unknowns are the interior values at t_{k+1}.
struct Step<'g, M: ElementFlux> {
    geo: &'g Geometry,
    flux: &'g M,
    dt: f64,
    prev: &'g [f64],
    source: &'g [f64],
}

impl<M: ElementFlux> Step<'_, M> {
    fn element_fluxes(&self, u: &[f64], fluxes: &mut [f64], mut tangents: Option<&mut [f64]>) -> Result<(), MacroError> {
        let dim = self.geo.dim;
        let mut full = vec![0.0; self.geo.level_nodes];
        self.geo.scatter(u, &mut full);
        let (mut gp, mut bp, mut bm) = ([0.0; MAX_DIM], [0.0; MAX_DIM], [0.0; MAX_DIM]);
        for (k, e) in self.geo.elems.iter().enumerate() {
            let g = self.geo.gradient(e, &full);
            self.flux.eval(k, &g[..dim], &mut fluxes[k * dim..(k + 1) * dim])?;
            if let Some(t) = tangents.as_deref_mut() {
                for c in 0..dim {
                    let mut gm = g;
                    gp[..dim].copy_from_slice(&g[..dim]);
                    let h = fd_step(g[c]);
                    gp[c] += h;
                    gm[c] -= h;
                    let width = gp[c] - gm[c];
                    self.flux.eval(k, &gp[..dim], &mut bp[..dim])?;
                    self.flux.eval(k, &gm[..dim], &mut bm[..dim])?;
                    for r in 0..dim {
                        t[k * dim * dim + r * dim + c] = (bp[r] - bm[r]) / width;
                    }
                }
            }
        }
        Ok(())
    }

    fn residual_from(&self, u: &[f64], fluxes: &[f64], out: &mut [f64]) {
        let dim = self.geo.dim;
        let mut full = vec![0.0; self.geo.level_nodes];
        for (k, e) in self.geo.elems.iter().enumerate() {
            for a in 0..self.geo.arity() {
                let c = e.grad[a];
                let mut dotp = 0.0;
                for r in 0..dim {
                    dotp += fluxes[k * dim + r] * c[r];
                }
                full[e.nodes[a]] += self.geo.weight * dotp;
            }
        }
        for (k, &idx) in self.geo.interior.iter().enumerate() {
            out[k] = (u[k] - self.prev[k]) / self.dt + full[idx] / self.geo.lumped - self.source[k];
        }
    }

    fn residual(&self, u: &[f64], out: &mut [f64]) -> Result<(), MacroError> {
        let mut fl = vec![0.0; self.geo.elements() * self.geo.dim];
        self.element_fluxes(u, &mut fl, None)?;
        self.residual_from(u, &fl, out);
        Ok(())
    }

    fn jacobian_apply(&self, tangents: &[f64], v: &[f64], out: &mut [f64], symmetrize: bool) {
        let dim = self.geo.dim;
        let mut full = vec![0.0; self.geo.level_nodes];
        self.geo.scatter(v, &mut full);
        let mut acc = vec![0.0; self.geo.level_nodes];
        for (k, e) in self.geo.elems.iter().enumerate() {
            let g = self.geo.gradient(e, &full);
            let t = &tangents[k * dim * dim..(k + 1) * dim * dim];
            let mut tg = [0.0; 2];
            for r in 0..dim {
                for c in 0..dim {
                    let trc = if symmetrize { 0.5 * (t[r * dim + c] + t[c * dim + r]) } else { t[r * dim + c] };
                    tg[r] += trc * g[c];
                }
            }
            for a in 0..self.geo.arity() {
                let c = e.grad[a];
                acc[e.nodes[a]] += self.geo.weight * (tg[0] * c[0] + tg[1] * c[1]);
            }
        }
        for (k, &idx) in self.geo.interior.iter().enumerate() {
            out[k] = v[k] / self.dt + acc[idx] / self.geo.lumped;
        }
    }

    fn solve_linear(&self, tangents: &[f64], rhs: &mut [f64], step: usize, opts: &MacroOptions) -> Result<(), MacroError> {
        let n = rhs.len();
        if self.geo.dim == 1 {
            // interior node k has level index k + 1; element k joins nodes k, k+1
            let s = self.geo.weight / self.geo.lumped;
            let mut diag = vec![1.0 / self.dt; n];
            let mut sub = vec![0.0; n];
            let mut sup = vec![0.0; n];
            for (k, e) in self.geo.elems.iter().enumerate() {
                let t = tangents[k];
                let (ca, cb) = (e.grad[0][0], e.grad[1][0]);
                let (a, b) = (e.nodes[0], e.nodes[1]);
                if a >= 1 && a <= n {
                    diag[a - 1] += s * ca * t * ca;
                }
                if b >= 1 && b <= n {
                    diag[b - 1] += s * cb * t * cb;
                }
                if a >= 1 && b <= n {
                    sup[a - 1] += s * ca * t * cb;
                    sub[b - 1] += s * cb * t * ca;
                }
            }
            if !linalg::thomas(&sub, &diag, &sup, rhs) {
                return Err(MacroError::LinearSolveFailed { step });
            }
        } else {
            let mut diag = vec![1.0 / self.dt; self.geo.level_nodes];
            for (k, e) in self.geo.elems.iter().enumerate() {
                let t = &tangents[k * 4..k * 4 + 4];
                for a in 0..3 {
                    let c = e.grad[a];
                    let q = c[0] * (t[0] * c[0] + t[1] * c[1]) + c[1] * (t[2] * c[0] + t[3] * c[1]);
                    diag[e.nodes[a]] += self.geo.weight * q / self.geo.lumped;
                }
            }
            let d: Vec<f64> = self.geo.interior.iter().map(|&i| diag[i]).collect();
            let b = rhs.to_vec();
            linalg::pcg(|x, y| self.jacobian_apply(tangents, x, y, true), &d, &b, rhs, opts.cg_tol, 20 * n + 100, false)
                .ok_or(MacroError::LinearSolveFailed { step })?;
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(MacroError::LinearSolveFailed { step });
        }
        Ok(())
    }

    fn newton(&self, u: &mut [f64], step: usize, time: f64, opts: &MacroOptions) -> Result<usize, MacroError> {
        let n = u.len();
        let ne = self.geo.elements() * self.geo.dim;
        let mut fl = vec![0.0; ne];
        let mut tg = vec![0.0; ne * self.geo.dim];
        let mut r = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut r_trial = vec![0.0; n];
        let max = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
        let l2 = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        self.element_fluxes(u, &mut fl, Some(&mut tg))?;
        self.residual_from(u, &fl, &mut r);
        for it in 0..opts.max_iter {
            let res = max(&r);
            if res <= opts.tol {
                return Ok(it);
            }
            let norm = l2(&r);
            let mut delta: Vec<f64> = r.iter().map(|x| -x).collect();
            self.solve_linear(&tg, &mut delta, step, opts)?;
            let mut lambda = 1.0;
            loop {
                for k in 0..n {
                    trial[k] = u[k] + lambda * delta[k];
                }
                self.residual(&trial, &mut r_trial)?;
                if l2(&r_trial) <= (1.0 - 1e-4 * lambda) * norm || max(&r_trial) <= opts.tol {
                    break;
                }
                lambda *= 0.5;
                if lambda < opts.damping_floor {
                    return Err(MacroError::NewtonStalled { step, time, residual: res });
                }
            }
            u.copy_from_slice(&trial);
            self.element_fluxes(u, &mut fl, Some(&mut tg))?;
            self.residual_from(u, &fl, &mut r);
        }
        let res = max(&r);
        if res <= opts.tol {
            Ok(opts.max_iter)
        } else {
            Err(MacroError::NewtonStalled { step, time, residual: res })
        }
    }
}

fn interior_values(geo: &Geometry, full: &[f64]) -> Vec<f64> {
    geo.interior.iter().map(|&i| full[i]).collect()
}

fn source_at(geo: &Geometry, mesh: &MacroMesh, data: &ProblemData, t: f64) -> Result<Vec<f64>, MacroError> {
    geo.interior
        .iter()
        .map(|&i| ProblemData::eval(&data.f, mesh.dim, mesh.node(i), t))
        .collect()
}

/// Marches the scheme over all time levels with the given element flux.
pub fn march<M: ElementFlux>(mesh: &MacroMesh, data: &ProblemData, flux: &mut M, opts: &MacroOptions, provenance: &str) -> Result<SpaceTimeField, MacroError> {
    if flux.dim() != mesh.dim {
        return Err(MacroError::Invalid(alloc::format!(
            "flux dimension {} != mesh dimension {}",
            flux.dim(),
            mesh.dim
        )));
    }
    let geo = Geometry::new(mesh);
    let nl = mesh.level_nodes();
    let mut values = vec![0.0; (mesh.m_t + 1) * nl];
    for idx in 0..nl {
        if !mesh.is_boundary(idx) {
            values[idx] = ProblemData::eval(&data.u0, mesh.dim, mesh.node(idx), 0.0)?;
        }
    }
    let mut rng = match opts.initial {
        MacroInitial::Perturbed { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        MacroInitial::Previous => None,
    };
    let mut prev = interior_values(&geo, &values[..nl]);
    for k in 0..mesh.m_t {
        let t1 = mesh.time(k + 1);
        let mut u = prev.clone();
        if let Some(rng) = rng.as_mut() {
            u.iter_mut().for_each(|v| *v += 0.1 * (2.0 * rng.gen::<f64>() - 1.0));
        }
        flux.set_time(t1)?;
        let source = source_at(&geo, mesh, data, t1)?;
        let step = Step {
            geo: &geo,
            flux: &*flux,
            dt: mesh.dt(),
            prev: &prev,
            source: &source,
        };
        match step.newton(&mut u, k, t1, opts) {
            Ok(_) => {}
            Err(MacroError::NewtonStalled { .. }) => {
                // retry once with two half steps
                let t_half = mesh.time(k) + 0.5 * mesh.dt();
                flux.set_time(t_half)?;
                let src_half = source_at(&geo, mesh, data, t_half)?;
                let mut mid = prev.clone();
                Step {
                    geo: &geo,
                    flux: &*flux,
                    dt: 0.5 * mesh.dt(),
                    prev: &prev,
                    source: &src_half,
                }
                .newton(&mut mid, k, t_half, opts)?;
                flux.set_time(t1)?;
                u.copy_from_slice(&mid);
                Step {
                    geo: &geo,
                    flux: &*flux,
                    dt: 0.5 * mesh.dt(),
                    prev: &mid,
                    source: &source,
                }
                .newton(&mut u, k, t1, opts)?;
            }
            Err(e) => return Err(e),
        }
        let level = &mut values[(k + 1) * nl..(k + 2) * nl];
        geo.scatter(&u, level);
        prev = u;
    }
    SpaceTimeField::from_values(*mesh, values, provenance)
}

/// Solves the homogenized problem with flux b.
pub fn solve_homogenized<E: EffectiveFlux + ?Sized>(
    data: &ProblemData,
    flux: &E,
    mesh: &MacroMesh,
    opts: &MacroOptions,
) -> Result<SpaceTimeField, MacroError> {
    march(mesh, data, &mut Homogeneous(flux), opts, "homogenized")
}

/// Residual of one implicit Euler step (interior unknowns).
pub fn step_residual<M: ElementFlux>(flux: &M, mesh: &MacroMesh, prev: &[f64], source: &[f64], u: &[f64]) -> Result<Vec<f64>, MacroError> {
    let geo = Geometry::new(mesh);
    let step = Step {
        geo: &geo,
        flux,
        dt: mesh.dt(),
        prev,
        source,
    };
    let mut out = vec![0.0; u.len()];
    step.residual(u, &mut out)?;
    Ok(out)
}

/// Newton operator of one step at u applied to v.
pub fn step_jacobian_apply<M: ElementFlux>(flux: &M, mesh: &MacroMesh, u: &[f64], v: &[f64]) -> Result<Vec<f64>, MacroError> {
    let geo = Geometry::new(mesh);
    let zeros = vec![0.0; u.len()];
    let step = Step {
        geo: &geo,
        flux,
        dt: mesh.dt(),
        prev: &zeros,
        source: &zeros,
    };
    let ne = geo.elements() * geo.dim;
    let mut fl = vec![0.0; ne];
    let mut tg = vec![0.0; ne * geo.dim];
    step.element_fluxes(u, &mut fl, Some(&mut tg))?;
    let mut out = vec![0.0; u.len()];
    step.jacobian_apply(&tg, v, &mut out, false);
    Ok(out)
}

/// Space-time L² norm of the difference of two fields on the same domain.
/// Both are interpolated onto the finer of the two grids (per axis and in
/// time) and integrated with the trapezoid rule.
pub fn l2_spacetime_error(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64, MacroError> {
    if !a.mesh.same_domain(&b.mesh) {
        return Err(MacroError::DomainMismatch(alloc::format!("{:?} vs {:?}", a.mesh, b.mesh)));
    }
    let dim = a.mesh.dim;
    let pick = |c: usize| a.mesh.m_x[c].max(b.mesh.m_x[c]);
    let cells = [pick(0) + 1, if dim == 2 { pick(1) + 1 } else { 0 }];
    let steps = a.mesh.m_t.max(b.mesh.m_t);
    let (lo, hi, t_end) = (a.mesh.lower, a.mesh.upper, a.mesh.t_end);
    let h = [(hi[0] - lo[0]) / cells[0] as f64, if dim == 2 { (hi[1] - lo[1]) / cells[1] as f64 } else { 1.0 }];
    let dt = t_end / steps as f64;
    let trap = |k: usize, n: usize| if n > 0 && (k == 0 || k == n) { 0.5 } else { 1.0 };
    let ny = if dim == 2 { cells[1] } else { 0 };
    let mut total = 0.0;
    for kt in 0..=steps {
        let t = if kt == steps { t_end } else { kt as f64 * dt };
        let mut level = 0.0;
        for j in 0..=ny {
            for i in 0..=cells[0] {
                let x = [lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]];
                let d = a.sample(&x[..dim], t) - b.sample(&x[..dim], t);
                level += trap(i, cells[0]) * trap(j, ny) * d * d;
            }
        }
        total += trap(kt, steps) * level;
    }
    Ok(libm::sqrt(total * h[0] * h[1] * dt))
}
