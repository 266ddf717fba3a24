//! Local (cell) problems.
//!
//! Each spatial scale i owns a corrector u_i that is periodic on its cell
//! Y_i and depends parametrically on the slower cells y_1..y_{i-1} and on
//! the kept temporal variables s_1..s_{m-d_i}. The problem for u_i averages
//! the flux over every faster variable. In the resonance case the last kept
//! temporal variable is an evolution variable and u_i is time periodic in it.
//!
//! Discretization: P1 elements on the periodic cell (intervals in 1D, a
//! diagonal-split square lattice in 2D) with one-point quadrature, nodal
//! rectangle rule in s, implicit Euler plus lumped mass in the resonance
//! case. Parameters in y_j (j < i) live on the elements of Y_j, because
//! that is where the gradient of u_j is defined.

mod mesh;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flux::{Flux, FluxError, MAX_DIM};
use crate::linalg;
use crate::scale::ScaleExponents;
use mesh::CellMesh;

/// Below this a resonance constant is treated as zero.
pub const DEGENERATE_RHO: f64 = 1e-8;

/// Largest number of quadrature points a local system may allocate.
pub const MAX_QUADRATURE_POINTS: usize = 1 << 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CellError {
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error("invalid cell problem: {0}")]
    Invalid(String),
    #[error("Newton stalled on scale {scale} with residual {residual:e}")]
    NewtonStalled { scale: usize, residual: f64 },
    #[error("linear solve failed on scale {scale}")]
    LinearSolveFailed { scale: usize },
    #[error("period map not contracting on scale {scale}; last gaps {gaps:?}")]
    PoincareNotContracting { scale: usize, gaps: Vec<f64> },
    #[error("Gauss-Seidel did not converge in {sweeps} sweeps; last increment {increment:e}")]
    GaussSeidelNotConverging { sweeps: usize, increment: f64 },
}

/// Uniform periodic grid used for every cell Y_i and S_j.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    pub dim: usize,
    /// Nodes per spatial axis of each cell.
    pub m_y: usize,
    /// Time steps per temporal cell.
    pub m_s: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, m_y: usize, m_s: usize) -> Result<Self, CellError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(CellError::Invalid(alloc::format!("dimension {dim}")));
        }
        if m_y < 8 || m_s < 8 {
            return Err(CellError::Invalid(alloc::format!(
                "grid {m_y}x{m_s} is below the minimum of 8 nodes per axis"
            )));
        }
        Ok(PeriodicGrid { dim, m_y, m_s })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m_y as f64
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.m_s as f64
    }

    pub fn nodes(&self) -> usize {
        self.m_y.pow(self.dim as u32)
    }

    pub fn elements(&self) -> usize {
        if self.dim == 1 {
            self.m_y
        } else {
            2 * self.m_y * self.m_y
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialGuess {
    Zero,
    /// Random mean-zero field with amplitude 0.1.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOptions {
    /// Newton stops when max |residual| < res_tol·max(1, |ξ|).
    pub res_tol: f64,
    pub newton_max_iter: usize,
    pub damping_floor: f64,
    pub gs_tol: f64,
    pub max_sweeps: usize,
    pub poincare_tol: f64,
    pub max_periods: usize,
    /// Relative tolerance of the inner conjugate gradient solves (2D).
    pub cg_tol: f64,
    pub initial: InitialGuess,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            res_tol: 1e-10,
            newton_max_iter: 50,
            damping_floor: 1.0 / 1024.0,
            gs_tol: 1e-9,
            max_sweeps: 100,
            poincare_tol: 1e-9,
            max_periods: 500,
            cg_tol: 1e-12,
            initial: InitialGuess::Zero,
        }
    }
}

/// Discrete corrector u_i.
///
/// Values are stored as `params × nodes`. The parameter index is mixed
/// radix over (s_{k}, s_1, …, s_{k-1}, e_1, …, e_{i-1}) with the first
/// digit most significant, where k = m − d_i is the number of kept temporal
/// variables and e_j are elements of the slower cells. Temporal variables
/// beyond s_k are not stored at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrector {
    pub scale: usize,
    pub dim: usize,
    pub m_y: usize,
    pub m_s: usize,
    pub kept_temporal: usize,
    pub resonant: bool,
    pub params: usize,
    pub nodes: usize,
    pub values: Vec<f64>,
    /// Distance between the states one period apart (resonance case).
    pub periodicity_gap: Option<f64>,
}

impl Corrector {
    pub fn at(&self, param: usize) -> &[f64] {
        &self.values[param * self.nodes..(param + 1) * self.nodes]
    }

    /// Largest |cell average| over all parameter points.
    pub fn max_abs_mean(&self) -> f64 {
        (0..self.params)
            .map(|p| libm::fabs(self.at(p).iter().sum::<f64>() / self.nodes as f64))
            .fold(0.0, f64::max)
    }

    /// Root mean square over all stored values.
    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }

    pub fn rms_distance(&self, other: &Corrector) -> f64 {
        let d: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        rms(&d)
    }

    /// Gradient on every element at one parameter point.
    pub fn element_gradients(&self, param: usize) -> Vec<[f64; 2]> {
        let mesh = CellMesh::new(self.dim, self.m_y);
        let u = self.at(param);
        mesh.elems
            .iter()
            .map(|e| {
                let mut g = [0.0; 2];
                mesh.gradient(e, u, &mut g);
                g
            })
            .collect()
    }

    /// Element centroids, in the order of [`Corrector::element_gradients`].
    pub fn element_centroids(&self) -> Vec<[f64; 2]> {
        CellMesh::new(self.dim, self.m_y).elems.iter().map(|e| e.centroid).collect()
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64)
}

fn project_mean(u: &mut [f64]) {
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|x| *x -= mean);
}

/// Result of the Gauss–Seidel iteration over all scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystemSolution {
    pub xi: Vec<f64>,
    pub correctors: Vec<Corrector>,
    /// Largest RMS corrector increment of each sweep.
    pub increments: Vec<f64>,
    /// Final max |weak residual| per scale.
    pub residuals: Vec<f64>,
    pub newton_iterations: usize,
    /// Average of a(y, s, ξ + Σ∇u_j) over all cells: the effective flux.
    pub mean_flux: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LocalSystemSolution {
    pub fn sweeps(&self) -> usize {
        self.increments.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct ScaleLayout {
    kept: usize,
    params: usize,
    fast: usize,
    /// Parameter stride of the last kept temporal digit.
    time_stride: usize,
}

struct State {
    u: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

/// Precomputed geometry and material of a local system, reusable across ξ.
pub struct LocalSystem<'a, F: Flux> {
    flux: &'a F,
    exps: ScaleExponents,
    grid: PeriodicGrid,
    mesh: CellMesh,
    n: usize,
    q_count: usize,
    scales: Vec<ScaleLayout>,
    materials: Vec<F::Point>,
    /// Per scale: quadrature indices ordered by (parameter, element, fast).
    orders: Vec<Vec<u32>>,
    warnings: Vec<String>,
}

impl<'a, F: Flux> LocalSystem<'a, F> {
    pub fn new(flux: &'a F, exps: &ScaleExponents, grid: PeriodicGrid) -> Result<Self, CellError> {
        let n = flux.spatial_scales();
        let m = flux.temporal_scales();
        let dim = flux.dim();
        if exps.d.len() != n || exps.rho.len() != n {
            return Err(CellError::Invalid(alloc::format!(
                "exponents describe {} spatial scales, flux has {n}",
                exps.d.len()
            )));
        }
        if exps.temporal_count != m {
            return Err(CellError::Invalid(alloc::format!(
                "exponents describe {} temporal scales, flux has {m}",
                exps.temporal_count
            )));
        }
        if grid.dim != dim {
            return Err(CellError::Invalid(alloc::format!("grid dimension {} != flux dimension {dim}", grid.dim)));
        }
        let mesh = CellMesh::new(dim, grid.m_y);
        let e = mesh.elems.len();
        let ms = grid.m_s;
        let q_count = e
            .checked_pow(n as u32)
            .and_then(|a| ms.checked_pow(m as u32).and_then(|b| a.checked_mul(b)))
            .filter(|&q| q <= MAX_QUADRATURE_POINTS)
            .ok_or_else(|| {
                CellError::Invalid(alloc::format!(
                    "{e}^{n} x {ms}^{m} quadrature points exceed the limit of {MAX_QUADRATURE_POINTS}"
                ))
            })?;

        let mut warnings = Vec::new();
        let mut scales = Vec::with_capacity(n);
        for i in 0..n {
            let d = exps.d[i];
            if d > m {
                return Err(CellError::Invalid(alloc::format!("d_{} = {d} exceeds m = {m}", i + 1)));
            }
            let kept = m - d;
            let rho = exps.rho[i];
            if !(rho >= 0.0) || !rho.is_finite() {
                return Err(CellError::Invalid(alloc::format!("rho_{} = {rho}", i + 1)));
            }
            if rho > 0.0 && kept == 0 {
                return Err(CellError::Invalid(alloc::format!(
                    "rho_{} > 0 but no temporal variable is kept",
                    i + 1
                )));
            }
            if rho > 0.0 && rho < DEGENERATE_RHO {
                warnings.push(alloc::format!(
                    "rho_{} = {rho:e} is below {DEGENERATE_RHO:e}; solving the elliptic problem instead",
                    i + 1
                ));
            }
            let slow_e = e.pow(i as u32);
            scales.push(ScaleLayout {
                kept,
                params: ms.pow(kept as u32) * slow_e,
                fast: e.pow((n - i - 1) as u32) * ms.pow((m - kept) as u32),
                time_stride: ms.pow(kept.saturating_sub(1) as u32) * slow_e,
            });
        }

        let tau = grid.tau();
        let mut materials = Vec::with_capacity(q_count);
        let mut digits = vec![0usize; n + m];
        let mut y = vec![0.0; n * dim];
        let mut s = vec![0.0; m];
        for q in 0..q_count {
            decode(q, e, ms, n, &mut digits);
            for j in 0..n {
                let c = mesh.elems[digits[j]].centroid;
                y[j * dim..(j + 1) * dim].copy_from_slice(&c[..dim]);
            }
            for j in 0..m {
                s[j] = digits[n + j] as f64 * tau;
            }
            materials.push(flux.point(&y, &s)?);
        }

        let mut orders = Vec::with_capacity(n);
        for (i, sl) in scales.iter().enumerate() {
            let mut order = vec![0u32; q_count];
            for q in 0..q_count {
                decode(q, e, ms, n, &mut digits);
                let (p, el, f) = split(&digits, i, sl.kept, n, m, e, ms);
                order[(p * e + el) * sl.fast + f] = q as u32;
            }
            orders.push(order);
        }

        Ok(LocalSystem {
            flux,
            exps: exps.clone(),
            grid,
            mesh,
            n,
            q_count,
            scales,
            materials,
            orders,
            warnings,
        })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn exponents(&self) -> &ScaleExponents {
        &self.exps
    }

    pub fn flux(&self) -> &F {
        self.flux
    }

    pub fn quadrature_points(&self) -> usize {
        self.q_count
    }

    /// Number of parameter points of the corrector for scale i.
    pub fn corrector_params(&self, i: usize) -> usize {
        self.scales[i].params
    }

    fn dim(&self) -> usize {
        self.grid.dim
    }

    fn effective_rho(&self, i: usize) -> f64 {
        let r = self.exps.rho[i];
        if r < DEGENERATE_RHO {
            0.0
        } else {
            r
        }
    }

    fn empty_state(&self) -> State {
        let v = self.mesh.nodes;
        State {
            u: self.scales.iter().map(|s| vec![0.0; s.params * v]).collect(),
            grads: (0..self.n).map(|_| vec![0.0; self.q_count * self.dim()]).collect(),
        }
    }

    fn state_from(&self, correctors: &[Corrector]) -> Result<State, CellError> {
        let mut st = self.empty_state();
        for c in correctors {
            if c.scale >= self.n || c.values.len() != st.u[c.scale].len() {
                return Err(CellError::Invalid(alloc::format!(
                    "corrector for scale {} does not fit this system",
                    c.scale + 1
                )));
            }
            st.u[c.scale].copy_from_slice(&c.values);
        }
        for i in 0..self.n {
            self.update_grads(&mut st, i);
        }
        Ok(st)
    }

    fn update_grads(&self, st: &mut State, i: usize) {
        let sl = self.scales[i];
        let e_count = self.mesh.elems.len();
        let v = self.mesh.nodes;
        let dim = self.dim();
        let order = &self.orders[i];
        let (u, grads) = (&st.u[i], &mut st.grads[i]);
        let mut g = [0.0; 2];
        for p in 0..sl.params {
            let up = &u[p * v..(p + 1) * v];
            for (el, elem) in self.mesh.elems.iter().enumerate() {
                self.mesh.gradient(elem, up, &mut g);
                let base = (p * e_count + el) * sl.fast;
                for &q in &order[base..base + sl.fast] {
                    let q = q as usize;
                    grads[q * dim..(q + 1) * dim].copy_from_slice(&g[..dim]);
                }
            }
        }
    }

    /// Per element of Y_i at parameter p: flux (and tangent) averaged over
    /// the faster variables, with u as the current u_i.
    fn averages(&self, st: &State, xi: &[f64], i: usize, p: usize, u: &[f64], fbar: &mut [f64], mut tbar: Option<&mut [f64]>) {
        let sl = self.scales[i];
        let dim = self.dim();
        let e_count = self.mesh.elems.len();
        let order = &self.orders[i];
        let inv = 1.0 / sl.fast as f64;
        let mut gi = [0.0; 2];
        let mut g = [0.0; MAX_DIM];
        let mut a = [0.0; MAX_DIM];
        let mut t = [0.0; MAX_DIM * MAX_DIM];
        for (el, elem) in self.mesh.elems.iter().enumerate() {
            self.mesh.gradient(elem, u, &mut gi);
            let mut sa = [0.0; MAX_DIM];
            let mut stn = [0.0; MAX_DIM * MAX_DIM];
            let base = (p * e_count + el) * sl.fast;
            for &q in &order[base..base + sl.fast] {
                let q = q as usize;
                for c in 0..dim {
                    g[c] = xi[c] + gi[c];
                }
                for (j, gr) in st.grads.iter().enumerate() {
                    if j != i {
                        for c in 0..dim {
                            g[c] += gr[q * dim + c];
                        }
                    }
                }
                let mat = &self.materials[q];
                self.flux.apply(mat, &g[..dim], &mut a[..dim]);
                for c in 0..dim {
                    sa[c] += a[c];
                }
                if tbar.is_some() {
                    self.flux.tangent(mat, &g[..dim], &mut t[..dim * dim]);
                    for c in 0..dim * dim {
                        stn[c] += t[c];
                    }
                }
            }
            for c in 0..dim {
                fbar[el * dim + c] = sa[c] * inv;
            }
            if let Some(tb) = tbar.as_deref_mut() {
                for c in 0..dim * dim {
                    tb[el * dim * dim + c] = stn[c] * inv;
                }
            }
        }
    }

    fn assemble_residual(&self, fbar: &[f64], u: &[f64], mass: Option<(f64, &[f64])>, r: &mut [f64]) {
        let dim = self.dim();
        let w = self.mesh.weight;
        r.iter_mut().for_each(|x| *x = 0.0);
        for (el, elem) in self.mesh.elems.iter().enumerate() {
            let fb = &fbar[el * dim..(el + 1) * dim];
            for a in 0..self.mesh.arity() {
                let c = elem.grad[a];
                let mut dotp = 0.0;
                for k in 0..dim {
                    dotp += fb[k] * c[k];
                }
                r[elem.nodes[a]] += w * dotp;
            }
        }
        if let Some((coef, prev)) = mass {
            for k in 0..r.len() {
                r[k] += coef * (u[k] - prev[k]);
            }
        }
    }

    /// y = (coef·I + Σ_e w Gᵀ T̄_e G) x, with T̄_e symmetrized.
    fn apply_tangent(&self, tbar: &[f64], coef: f64, x: &[f64], y: &mut [f64]) {
        let dim = self.dim();
        let w = self.mesh.weight;
        for k in 0..y.len() {
            y[k] = coef * x[k];
        }
        let mut g = [0.0; 2];
        for (el, elem) in self.mesh.elems.iter().enumerate() {
            self.mesh.gradient(elem, x, &mut g);
            let t = &tbar[el * dim * dim..(el + 1) * dim * dim];
            let mut tg = [0.0; 2];
            for r in 0..dim {
                for c in 0..dim {
                    tg[r] += 0.5 * (t[r * dim + c] + t[c * dim + r]) * g[c];
                }
            }
            for a in 0..self.mesh.arity() {
                let cv = elem.grad[a];
                let mut dotp = 0.0;
                for k in 0..dim {
                    dotp += tg[k] * cv[k];
                }
                y[elem.nodes[a]] += w * dotp;
            }
        }
    }

    /// Solves the Newton system; `rhs` is overwritten by the step.
    fn solve_step(&self, i: usize, tbar: &[f64], coef: f64, rhs: &mut [f64], opts: &CellOptions) -> Result<(), CellError> {
        let v = self.mesh.nodes;
        let w = self.mesh.weight;
        if self.dim() == 1 {
            let mut diag = vec![coef; v];
            let mut upper = vec![0.0; v];
            for (el, elem) in self.mesh.elems.iter().enumerate() {
                let (a, b) = (elem.nodes[0], elem.nodes[1]);
                let (ca, cb) = (elem.grad[0][0], elem.grad[1][0]);
                let t = tbar[el];
                diag[a] += w * ca * t * ca;
                diag[b] += w * cb * t * cb;
                upper[a] += w * ca * t * cb;
            }
            let ok = if coef == 0.0 {
                // pin node 0; the residual has zero sum so this is exact
                let k = v - 1;
                let d = &diag[1..];
                let mut sub = vec![0.0; k];
                let mut sup = vec![0.0; k];
                for t in 1..k {
                    sub[t] = upper[t];
                }
                for t in 0..k - 1 {
                    sup[t] = upper[t + 1];
                }
                let ok = linalg::thomas(&sub, d, &sup, &mut rhs[1..]);
                rhs[0] = 0.0;
                ok
            } else {
                linalg::cyclic_symmetric(&diag, &upper, rhs)
            };
            if !ok || rhs.iter().any(|x| !x.is_finite()) {
                return Err(CellError::LinearSolveFailed { scale: i });
            }
            Ok(())
        } else {
            let mut diag = vec![coef; v];
            for (el, elem) in self.mesh.elems.iter().enumerate() {
                let t = &tbar[el * 4..el * 4 + 4];
                for a in 0..3 {
                    let c = elem.grad[a];
                    let q = c[0] * (t[0] * c[0] + t[1] * c[1]) + c[1] * (t[2] * c[0] + t[3] * c[1]);
                    diag[elem.nodes[a]] += w * q;
                }
            }
            if diag.iter().any(|d| !(*d > 0.0)) {
                return Err(CellError::LinearSolveFailed { scale: i });
            }
            let b = rhs.to_vec();
            linalg::pcg(
                |x, y| self.apply_tangent(tbar, coef, x, y),
                &diag,
                &b,
                rhs,
                opts.cg_tol,
                20 * v,
                coef == 0.0,
            )
            .ok_or(CellError::LinearSolveFailed { scale: i })?;
            Ok(())
        }
    }

    fn tolerance(xi: &[f64], opts: &CellOptions) -> f64 {
        let norm = libm::sqrt(xi.iter().map(|x| x * x).sum::<f64>());
        opts.res_tol * norm.max(1.0)
    }

    /// Damped Newton for the nodal values of u_i at one parameter point.
    fn newton(
        &self,
        st: &State,
        xi: &[f64],
        i: usize,
        p: usize,
        u: &mut [f64],
        mass: Option<(f64, &[f64])>,
        opts: &CellOptions,
    ) -> Result<usize, CellError> {
        let v = self.mesh.nodes;
        let dim = self.dim();
        let ne = self.mesh.elems.len();
        let tol = Self::tolerance(xi, opts);
        let coef = mass.map_or(0.0, |m| m.0);
        let mut fbar = vec![0.0; ne * dim];
        let mut tbar = vec![0.0; ne * dim * dim];
        let mut r = vec![0.0; v];
        let mut trial = vec![0.0; v];
        let mut r_trial = vec![0.0; v];
        let mut step = vec![0.0; v];
        if mass.is_none() {
            project_mean(u);
        }
        self.averages(st, xi, i, p, u, &mut fbar, Some(&mut tbar));
        self.assemble_residual(&fbar, u, mass, &mut r);
        for it in 0..opts.newton_max_iter {
            let res = r.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
            if res <= tol {
                return Ok(it);
            }
            let norm = l2(&r);
            for k in 0..v {
                step[k] = -r[k];
            }
            self.solve_step(i, &tbar, coef, &mut step, opts)?;
            let mut lambda = 1.0;
            loop {
                for k in 0..v {
                    trial[k] = u[k] + lambda * step[k];
                }
                if mass.is_none() {
                    project_mean(&mut trial);
                }
                self.averages(st, xi, i, p, &trial, &mut fbar, None);
                self.assemble_residual(&fbar, &trial, mass, &mut r_trial);
                let nt = l2(&r_trial);
                let max_t = r_trial.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
                if nt <= (1.0 - 1e-4 * lambda) * norm || max_t <= tol {
                    break;
                }
                lambda *= 0.5;
                if lambda < opts.damping_floor {
                    return Err(CellError::NewtonStalled { scale: i, residual: res });
                }
            }
            u.copy_from_slice(&trial);
            self.averages(st, xi, i, p, u, &mut fbar, Some(&mut tbar));
            self.assemble_residual(&fbar, u, mass, &mut r);
        }
        let res = r.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
        if res <= tol {
            return Ok(opts.newton_max_iter);
        }
        Err(CellError::NewtonStalled { scale: i, residual: res })
    }

    /// Solves the problem of scale i with the other correctors frozen.
    /// Returns Newton iterations and the final periodicity gap.
    fn solve_scale(&self, st: &mut State, xi: &[f64], i: usize, rho: f64, opts: &CellOptions) -> Result<(usize, Option<f64>), CellError> {
        let sl = self.scales[i];
        let v = self.mesh.nodes;
        let mut ui = core::mem::take(&mut st.u[i]);
        let mut iters = 0;
        let result = if rho == 0.0 {
            let mut res = Ok(None);
            for p in 0..sl.params {
                match self.newton(st, xi, i, p, &mut ui[p * v..(p + 1) * v], None, opts) {
                    Ok(k) => iters += k,
                    Err(e) => {
                        res = Err(e);
                        break;
                    }
                }
            }
            res
        } else {
            self.poincare(st, xi, i, rho, &mut ui, &mut iters, opts).map(Some)
        };
        st.u[i] = ui;
        let gap = result?;
        self.update_grads(st, i);
        Ok((iters, gap))
    }

    fn mass_coef(&self, rho: f64) -> f64 {
        rho / (self.mesh.nodes as f64 * self.grid.tau())
    }

    /// Period-map fixed point iteration with implicit Euler in the last kept
    /// temporal variable, chain by chain.
    #[allow(clippy::too_many_arguments)]
    fn poincare(&self, st: &State, xi: &[f64], i: usize, rho: f64, ui: &mut [f64], iters: &mut usize, opts: &CellOptions) -> Result<f64, CellError> {
        let sl = self.scales[i];
        let v = self.mesh.nodes;
        let ms = self.grid.m_s;
        let stride = sl.time_stride;
        let coef = self.mass_coef(rho);
        let mut worst: f64 = 0.0;
        for r in 0..stride {
            let at = |k: usize| (k * stride + r) * v;
            let mut prev = ui[at(ms - 1)..at(ms - 1) + v].to_vec();
            let mut gaps: Vec<f64> = Vec::new();
            let mut growing = 0;
            let mut converged = false;
            for _ in 0..opts.max_periods {
                let start = prev.clone();
                for k in 0..ms {
                    let p = k * stride + r;
                    let slot = &mut ui[at(k)..at(k) + v];
                    *iters += self.newton(st, xi, i, p, slot, Some((coef, &prev)), opts)?;
                    project_mean(slot);
                    prev.copy_from_slice(slot);
                }
                let d: Vec<f64> = prev.iter().zip(&start).map(|(a, b)| a - b).collect();
                let gap = rms(&d);
                if let Some(&last) = gaps.last() {
                    growing = if gap >= last { growing + 1 } else { 0 };
                }
                gaps.push(gap);
                if gap < opts.poincare_tol {
                    worst = worst.max(gap);
                    converged = true;
                    break;
                }
                if growing >= 5 {
                    let tail = gaps[gaps.len().saturating_sub(6)..].to_vec();
                    return Err(CellError::PoincareNotContracting { scale: i, gaps: tail });
                }
            }
            if !converged {
                let tail = gaps[gaps.len().saturating_sub(6)..].to_vec();
                return Err(CellError::PoincareNotContracting { scale: i, gaps: tail });
            }
        }
        Ok(worst)
    }

    fn residual_of_scale(&self, st: &State, xi: &[f64], i: usize, rho: f64, out: &mut Vec<f64>) {
        let sl = self.scales[i];
        let v = self.mesh.nodes;
        let dim = self.dim();
        let ms = self.grid.m_s;
        let coef = self.mass_coef(rho);
        let mut fbar = vec![0.0; self.mesh.elems.len() * dim];
        out.clear();
        out.resize(sl.params * v, 0.0);
        for p in 0..sl.params {
            let u = &st.u[i][p * v..(p + 1) * v];
            self.averages(st, xi, i, p, u, &mut fbar, None);
            let prev_slot;
            let mass = if rho > 0.0 {
                let k = p / sl.time_stride;
                let r = p % sl.time_stride;
                let pk = ((k + ms - 1) % ms) * sl.time_stride + r;
                prev_slot = &st.u[i][pk * v..(pk + 1) * v];
                Some((coef, prev_slot))
            } else {
                None
            };
            self.assemble_residual(&fbar, u, mass, &mut out[p * v..(p + 1) * v]);
        }
    }

    fn corrector(&self, st: &State, i: usize, rho: f64, gap: Option<f64>) -> Corrector {
        let sl = self.scales[i];
        Corrector {
            scale: i,
            dim: self.dim(),
            m_y: self.grid.m_y,
            m_s: self.grid.m_s,
            kept_temporal: sl.kept,
            resonant: rho > 0.0,
            params: sl.params,
            nodes: self.mesh.nodes,
            values: st.u[i].clone(),
            periodicity_gap: gap,
        }
    }

    fn check_xi(&self, xi: &[f64]) -> Result<(), CellError> {
        if xi.len() != self.dim() || xi.iter().any(|x| !x.is_finite()) {
            return Err(CellError::Invalid(alloc::format!("gradient {xi:?} does not match dimension {}", self.dim())));
        }
        Ok(())
    }

    fn randomize(&self, st: &mut State, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = self.mesh.nodes;
        for u in st.u.iter_mut() {
            for chunk in u.chunks_mut(v) {
                chunk.iter_mut().for_each(|x| *x = 0.1 * (2.0 * rng.gen::<f64>() - 1.0));
                project_mean(chunk);
            }
        }
        for i in 0..self.n {
            self.update_grads(st, i);
        }
    }

    /// Solves the full system by Gauss–Seidel sweeps, slowest scale first.
    pub fn solve(&self, xi: &[f64], opts: &CellOptions) -> Result<LocalSystemSolution, CellError> {
        self.check_xi(xi)?;
        let mut st = self.empty_state();
        if let InitialGuess::Random { seed } = opts.initial {
            self.randomize(&mut st, seed);
        }
        let mut increments = Vec::new();
        let mut gaps = vec![None; self.n];
        let mut newton_iterations = 0;
        loop {
            let mut max_inc: f64 = 0.0;
            for i in 0..self.n {
                let old = st.u[i].clone();
                let (it, gap) = self.solve_scale(&mut st, xi, i, self.effective_rho(i), opts)?;
                newton_iterations += it;
                gaps[i] = gap;
                let d: Vec<f64> = st.u[i].iter().zip(&old).map(|(a, b)| a - b).collect();
                max_inc = max_inc.max(rms(&d));
            }
            increments.push(max_inc);
            if self.n == 1 || max_inc < opts.gs_tol {
                break;
            }
            if increments.len() >= opts.max_sweeps {
                return Err(CellError::GaussSeidelNotConverging {
                    sweeps: increments.len(),
                    increment: max_inc,
                });
            }
        }
        let mut residuals = Vec::with_capacity(self.n);
        let mut buf = Vec::new();
        for i in 0..self.n {
            self.residual_of_scale(&st, xi, i, self.effective_rho(i), &mut buf);
            residuals.push(buf.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x))));
        }
        let correctors = (0..self.n).map(|i| self.corrector(&st, i, self.effective_rho(i), gaps[i])).collect();
        Ok(LocalSystemSolution {
            xi: xi.to_vec(),
            correctors,
            increments,
            residuals,
            newton_iterations,
            mean_flux: self.mean_flux(&st, xi),
            warnings: self.warnings.clone(),
        })
    }

    /// Solves only scale i, other correctors frozen at `frozen` (missing
    /// ones are zero). ρ = 0 gives the elliptic problem, ρ > 0 the time
    /// periodic one in the last kept temporal variable.
    pub fn solve_corrector(&self, xi: &[f64], i: usize, rho: f64, frozen: &[Corrector], opts: &CellOptions) -> Result<Corrector, CellError> {
        self.check_xi(xi)?;
        if i >= self.n {
            return Err(CellError::Invalid(alloc::format!("scale index {i} out of range")));
        }
        if rho > 0.0 && self.scales[i].kept == 0 {
            return Err(CellError::Invalid(alloc::format!(
                "scale {} keeps no temporal variable to evolve in",
                i + 1
            )));
        }
        let others: Vec<Corrector> = frozen.iter().filter(|c| c.scale != i).cloned().collect();
        let mut st = self.state_from(&others)?;
        if let InitialGuess::Random { seed } = opts.initial {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = self.mesh.nodes;
            for chunk in st.u[i].chunks_mut(v) {
                chunk.iter_mut().for_each(|x| *x = 0.1 * (2.0 * rng.gen::<f64>() - 1.0));
                project_mean(chunk);
            }
        }
        let rho = if rho < DEGENERATE_RHO { 0.0 } else { rho };
        let (_, gap) = self.solve_scale(&mut st, xi, i, rho, opts)?;
        Ok(self.corrector(&st, i, rho, gap))
    }

    fn mean_flux(&self, st: &State, xi: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut sum = [0.0; MAX_DIM];
        let mut g = [0.0; MAX_DIM];
        let mut a = [0.0; MAX_DIM];
        for q in 0..self.q_count {
            g[..dim].copy_from_slice(xi);
            for gr in &st.grads {
                for c in 0..dim {
                    g[c] += gr[q * dim + c];
                }
            }
            self.flux.apply(&self.materials[q], &g[..dim], &mut a[..dim]);
            for c in 0..dim {
                sum[c] += a[c];
            }
        }
        sum[..dim].iter().map(|s| s / self.q_count as f64).collect()
    }

    /// Weak residual of the problem for scale i over all its parameter
    /// points, given every corrector.
    pub fn weak_residual(&self, xi: &[f64], correctors: &[Corrector], i: usize) -> Result<Vec<f64>, CellError> {
        self.check_xi(xi)?;
        let st = self.state_from(correctors)?;
        let mut out = Vec::new();
        self.residual_of_scale(&st, xi, i, self.effective_rho(i), &mut out);
        Ok(out)
    }

    /// The Newton operator of scale i applied to `direction` (same layout as
    /// the corrector values), parameter point by parameter point. In the
    /// resonance case only the diagonal (current time level) block is
    /// applied, so `direction` should vary one time level at a time.
    pub fn tangent_apply(&self, xi: &[f64], correctors: &[Corrector], i: usize, direction: &[f64]) -> Result<Vec<f64>, CellError> {
        self.check_xi(xi)?;
        let st = self.state_from(correctors)?;
        let sl = self.scales[i];
        let v = self.mesh.nodes;
        let dim = self.dim();
        let ne = self.mesh.elems.len();
        let rho = self.effective_rho(i);
        let coef = if rho > 0.0 { self.mass_coef(rho) } else { 0.0 };
        let mut fbar = vec![0.0; ne * dim];
        let mut tbar = vec![0.0; ne * dim * dim];
        let mut out = vec![0.0; sl.params * v];
        for p in 0..sl.params {
            let u = &st.u[i][p * v..(p + 1) * v];
            self.averages(&st, xi, i, p, u, &mut fbar, Some(&mut tbar));
            self.apply_tangent(&tbar, coef, &direction[p * v..(p + 1) * v], &mut out[p * v..(p + 1) * v]);
        }
        Ok(out)
    }
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// q → (e_1..e_n, k_1..k_m), row-major with e_1 most significant.
fn decode(mut q: usize, e: usize, ms: usize, n: usize, digits: &mut [usize]) {
    for j in (0..digits.len()).rev() {
        let radix = if j < n { e } else { ms };
        digits[j] = q % radix;
        q /= radix;
    }
}

/// Digits → (parameter, element of Y_i, fast index) for scale i.
fn split(digits: &[usize], i: usize, kept: usize, n: usize, m: usize, e: usize, ms: usize) -> (usize, usize, usize) {
    let ks = &digits[n..n + m];
    let mut p = 0;
    if kept >= 1 {
        p = ks[kept - 1];
        for &k in &ks[..kept - 1] {
            p = p * ms + k;
        }
    }
    for &el in &digits[..i] {
        p = p * e + el;
    }
    let mut f = 0;
    for &el in &digits[i + 1..n] {
        f = f * e + el;
    }
    for &k in &ks[kept..m] {
        f = f * ms + k;
    }
    (p, digits[i], f)
}

/// Solves the elliptic corrector problem for scale i with the others frozen.
pub fn solve_elliptic_corrector<F: Flux>(
    flux: &F,
    xi: &[f64],
    exps: &ScaleExponents,
    i: usize,
    frozen: &[Corrector],
    grid: PeriodicGrid,
    opts: &CellOptions,
) -> Result<Corrector, CellError> {
    LocalSystem::new(flux, exps, grid)?.solve_corrector(xi, i, 0.0, frozen, opts)
}

/// Solves the time periodic corrector problem for scale i with resonance
/// constant `rho`, evolving in the last kept temporal variable.
#[allow(clippy::too_many_arguments)]
pub fn solve_parabolic_corrector<F: Flux>(
    flux: &F,
    xi: &[f64],
    exps: &ScaleExponents,
    i: usize,
    rho: f64,
    frozen: &[Corrector],
    grid: PeriodicGrid,
    opts: &CellOptions,
) -> Result<Corrector, CellError> {
    if !(rho > 0.0) {
        return Err(CellError::Invalid(alloc::format!("rho = {rho} must be positive")));
    }
    LocalSystem::new(flux, exps, grid)?.solve_corrector(xi, i, rho, frozen, opts)
}

pub fn solve_local_system<F: Flux>(
    flux: &F,
    xi: &[f64],
    exps: &ScaleExponents,
    grid: PeriodicGrid,
    opts: &CellOptions,
) -> Result<LocalSystemSolution, CellError> {
    LocalSystem::new(flux, exps, grid)?.solve(xi, opts)
}
