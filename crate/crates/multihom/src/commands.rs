//! The subcommands. Each one reads a [`Prepared`] configuration, writes its
//! artifacts into the output directory and a human readable report to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use multihom_core::cell::LocalSystem;
use multihom_core::dns::{solve_eps, StudyRow};
use multihom_core::effective::{EffectiveError, EffectiveFlux, EffectiveFluxEvaluator, FluxTable};
use multihom_core::flux::FluxSpec;
use multihom_core::macro_solver::{l2_spacetime_error, solve_homogenized, MacroError, SpaceTimeField};
use multihom_core::scale::{classify, ScaleError, ScaleExponents};
use rayon::prelude::*;

use crate::cache::{check_monotone_parallel, tabulate_parallel, CachedEvaluator};
use crate::{io, Failure, Prepared};

/// How many times a too small table box is doubled before giving up.
pub const MAX_WIDENINGS: usize = 6;

pub fn output_dir(p: &Prepared) -> Result<PathBuf, Failure> {
    let dir = p.config.output_dir();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Classification or the matching failure; the report is printed either way.
pub fn exponents(p: &Prepared, out: &mut dyn Write) -> Result<ScaleExponents, Failure> {
    match classify(&p.spatial, &p.temporal, &p.config.tolerances.classify_opts()) {
        Ok((_, ex)) => Ok(ex),
        Err(ScaleError::NotJointlySeparated(j)) => {
            writeln!(out, "merged list: {:?}", j.merged.iter().map(|m| m.expr.to_string()).collect::<Vec<_>>())?;
            Err(ScaleError::NotJointlySeparated(j).into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_classify(p: &Prepared, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    let (joint, ex) = match classify(&p.spatial, &p.temporal, &p.config.tolerances.classify_opts()) {
        Ok(r) => r,
        Err(ScaleError::NotJointlySeparated(j)) => {
            let empty = ScaleExponents::given(vec![], vec![], p.temporal.len());
            write!(out, "{}", io::classification_report(&j, &empty))?;
            return Err(ScaleError::NotJointlySeparated(j).into());
        }
        Err(e) => return Err(e.into()),
    };
    let report = io::classification_report(&joint, &ex);
    write!(out, "{report}")?;
    std::fs::write(dir.join("classification.txt"), &report)?;
    io::write_classification(&dir.join("classification.csv"), &ex)?;
    Ok(())
}

pub fn cmd_verify_flux(p: &Prepared, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    writeln!(out, "{}", p.flux)?;
    let r = p.flux.verify_structure(p.config.tolerances.structure_samples, p.config.seed)?;
    io::write_structure_report(&dir.join("flux_structure.csv"), &r)?;
    writeln!(
        out,
        "{} samples: measured C0 = {:.6} (declared {:.6}), measured C1 = {:.6} (declared {:.6}), growth {:.6}, periodicity deviation {:e}",
        r.samples, r.measured_c0, r.declared.c0, r.measured_c1, r.declared.c1, r.max_growth, r.max_periodicity_dev
    )?;
    writeln!(out, "PASS structure conditions")?;
    Ok(())
}

pub fn cmd_cell(p: &Prepared, xi: Option<Vec<f64>>, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    let xi = xi.unwrap_or_else(|| p.xi());
    if xi.len() != p.dim {
        return Err(Failure::Config(format!("xi has {} components in dimension {}", xi.len(), p.dim)));
    }
    let ex = exponents(p, out)?;
    let sys = LocalSystem::new(&p.flux, &ex, p.grid)?;
    let sol = sys.solve(&xi, &p.config.tolerances.cell_opts())?;
    for w in &sol.warnings {
        writeln!(out, "warning: {w}")?;
    }
    let mut summary = csv::Writer::from_path(dir.join("cell_summary.csv"))?;
    summary.write_record(["quantity", "value"])?;
    for (k, b) in sol.mean_flux.iter().enumerate() {
        summary.write_record([format!("b{}", k + 1), b.to_string()])?;
    }
    summary.write_record(["sweeps".into(), sol.sweeps().to_string()])?;
    for (i, c) in sol.correctors.iter().enumerate() {
        let path = dir.join(format!("corrector_{}.csv", i + 1));
        io::write_corrector(&path, c)?;
        summary.write_record([format!("residual_{}", i + 1), sol.residuals[i].to_string()])?;
        summary.write_record([format!("max_abs_mean_{}", i + 1), c.max_abs_mean().to_string()])?;
        if let Some(g) = c.periodicity_gap {
            summary.write_record([format!("periodicity_gap_{}", i + 1), g.to_string()])?;
        }
        writeln!(
            out,
            "corrector {}: {} nodes x {} parameter points, {}, residual {:e} -> {}",
            i + 1,
            c.nodes,
            c.params,
            if c.resonant { "time periodic" } else { "elliptic" },
            sol.residuals[i],
            path.display()
        )?;
    }
    summary.flush()?;
    writeln!(out, "xi = {:?}: b = {:?} after {} sweep(s)", xi, sol.mean_flux, sol.sweeps())?;
    Ok(())
}

/// The effective flux as used by the macro solver: exact evaluation with a
/// cache, or a table over [−Ξ, Ξ]^N that is widened when a gradient leaves
/// it.
pub struct Homogenized<'a> {
    pub exact: CachedEvaluator<EffectiveFluxEvaluator<'a, FluxSpec>>,
    pub use_table: bool,
    pub bound: f64,
    pub resolution: usize,
    pub table: Option<FluxTable>,
}

impl<'a> Homogenized<'a> {
    pub fn new(p: &'a Prepared, ex: &ScaleExponents) -> Result<Self, Failure> {
        let d = &p.config.discretization;
        Ok(Homogenized {
            exact: CachedEvaluator::new(EffectiveFluxEvaluator::new(&p.flux, ex, p.grid, p.config.tolerances.cell_opts())?),
            use_table: d.table,
            bound: d.xi_bound,
            resolution: d.resolution,
            table: None,
        })
    }

    fn table(&mut self) -> Result<&FluxTable, Failure> {
        let stale = self.table.as_ref().is_none_or(|t| t.bound != self.bound || t.resolution != self.resolution);
        if stale {
            self.table = Some(tabulate_parallel(&self.exact, self.bound, self.resolution)?);
        }
        Ok(self.table.as_ref().expect("just built"))
    }

    /// Runs `f` with the flux, widening the table on OutOfTableRange.
    pub fn run<T>(&mut self, f: impl Fn(&dyn EffectiveFlux) -> Result<T, MacroError>) -> Result<T, Failure> {
        if !self.use_table {
            return Ok(f(&self.exact)?);
        }
        let mut widenings = 0;
        loop {
            let table = self.table()?;
            match f(table) {
                Err(MacroError::Flux(EffectiveError::OutOfTableRange { .. })) if widenings < MAX_WIDENINGS => {
                    widenings += 1;
                    self.bound *= 2.0;
                    self.resolution = 2 * self.resolution - 1;
                }
                r => return Ok(r?),
            }
        }
    }
}

pub fn cmd_flux_table(p: &Prepared, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    let ex = exponents(p, out)?;
    let h = Homogenized::new(p, &ex)?;
    let table = tabulate_parallel(&h.exact, h.bound, h.resolution)?;
    let path = dir.join("flux_table.csv");
    io::write_flux_table(&path, &table)?;
    writeln!(
        out,
        "tabulated b on [-{}, {}]^{} with {} nodes per axis -> {}",
        table.bound,
        table.bound,
        table.dim,
        table.resolution,
        path.display()
    )?;
    let t = &p.config.tolerances;
    let mono = check_monotone_parallel(&table, t.monotone_pairs, p.config.seed, table.bound)?;
    io::write_monotonicity(&dir.join("flux_table_monotonicity.csv"), &mono)?;
    writeln!(
        out,
        "{} monotonicity of the table: {} pairs, quotient in [{:.6}, {:.6}]",
        if mono.pass { "PASS" } else { "FAIL" },
        mono.pairs,
        mono.min_quotient,
        mono.max_quotient
    )?;
    Ok(())
}

fn write_field(dir: &Path, stem: &str, u: &SpaceTimeField) -> Result<(), Failure> {
    io::write_field_csv(&dir.join(format!("{stem}.csv")), u)?;
    io::write_field_plot(&dir.join(format!("{stem}.dat")), u)
}

pub fn cmd_solve(p: &Prepared, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    let ex = exponents(p, out)?;
    let mut h = Homogenized::new(p, &ex)?;
    let opts = p.config.tolerances.macro_opts();
    let u = h.run(|b| solve_homogenized(&p.data, b, &p.mesh, &opts))?;
    write_field(&dir, "field", &u)?;
    if h.use_table {
        writeln!(out, "flux table on [-{}, {}] with {} nodes per axis", h.bound, h.bound, h.resolution)?;
    }
    let (hits, misses) = h.exact.stats();
    writeln!(out, "cell solves: {misses} (cache hits {hits})")?;
    writeln!(
        out,
        "solved {} levels of {} nodes; max |u| = {:.6}, final L2 norm = {:.6} -> {}",
        u.levels(),
        u.mesh.level_nodes(),
        u.max_abs(),
        u.level_l2(u.levels() - 1),
        dir.join("field.csv").display()
    )?;
    Ok(())
}

/// One row per ε: direct simulation against the homogenized solution on
/// the same mesh. Rows are computed in parallel and returned in order.
pub fn study(p: &Prepared, h: &mut Homogenized<'_>) -> Result<Vec<StudyRow>, Failure> {
    let eps = &p.config.dns.eps_list;
    if p.dim != 1 {
        return Err(Failure::Config("dns-compare needs a one dimensional domain".into()));
    }
    if eps.len() < 3 || eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Failure::Config("dns.eps_list needs at least three strictly decreasing values".into()));
    }
    let opts = p.config.tolerances.macro_opts();
    h.run(|b| {
        eps.par_iter()
            .map(|&e| {
                let cfg = p.dns.with_eps(e);
                let mesh = cfg.resolve(&p.mesh)?;
                let direct = solve_eps(&p.flux, &cfg, &p.data, &p.mesh, &opts)?;
                let hom = solve_homogenized(&p.data, b, &mesh, &opts)?;
                Ok(StudyRow {
                    eps: e,
                    m_x: mesh.m_x[0],
                    m_t: mesh.m_t,
                    error: l2_spacetime_error(&direct, &hom)?,
                })
            })
            .collect()
    })
}

pub fn cmd_dns_compare(p: &Prepared, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = output_dir(p)?;
    let ex = exponents(p, out)?;
    let mut h = Homogenized::new(p, &ex)?;
    let rows = study(p, &mut h)?;
    io::write_study(&dir.join("study.csv"), &dir.join("study.dat"), &rows)?;
    writeln!(out, "{:>12} {:>8} {:>8} {:>14}", "eps", "M_x", "M_t", "error")?;
    for r in &rows {
        writeln!(out, "{:>12} {:>8} {:>8} {:>14.6e}", r.eps, r.m_x, r.m_t, r.error)?;
    }
    let decreasing = rows.windows(2).all(|w| w[1].error < w[0].error);
    writeln!(out, "error strictly decreasing: {}", if decreasing { "yes" } else { "no" })?;
    Ok(())
}
