//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails or runs over its time limit.

use std::error::Error;
use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use multihom::cache::{check_monotone_parallel, CachedEvaluator};
use multihom::commands::{self, Homogenized};
use multihom::{benchmarks, showcase, Prepared};
use multihom_core::cell::{CellOptions, InitialGuess, LocalSystem};
use multihom_core::effective::{EffectiveFlux, EffectiveFluxEvaluator, LinearEffectiveFlux};
use multihom_core::expr::Expr;
use multihom_core::flux::Family;
use multihom_core::macro_solver::{
    solve_homogenized, step_jacobian_apply, step_residual, Homogeneous, MacroMesh, MacroOptions, ProblemData,
};
use multihom_core::scale::{limit_ratio, Limit, LimitOpts, SCALE_VAR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, Box<dyn Error>>;

fn fail(msg: String) -> Box<dyn Error> {
    msg.into()
}

fn bench(name: &str, overrides: &[&str]) -> Result<Prepared, Box<dyn Error>> {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Ok(benchmarks::get(name).ok_or_else(|| fail(format!("no benchmark {name}")))?.prepared(&o)?)
}

fn exps(p: &Prepared) -> Result<multihom_core::scale::ScaleExponents, Box<dyn Error>> {
    Ok(commands::exponents(p, &mut std::io::sink())?)
}

/// Periodic trapezoid rule, spectrally accurate for smooth periodic g.
fn periodic_mean(g: impl Fn(f64) -> f64) -> f64 {
    let n = 4096;
    (0..n).map(|k| g(k as f64 / n as f64)).sum::<f64>() / n as f64
}

fn harmonic_mean(a: impl Fn(f64) -> f64) -> f64 {
    1.0 / periodic_mean(|y| 1.0 / a(y))
}

fn wavy(y: f64) -> f64 {
    2.0 + (2.0 * PI * y).sin()
}

fn showcase_example() -> Outcome {
    let checks = showcase::reproduce(&showcase::opts_from_env()?, &mut std::io::sink())?;
    let bad: Vec<_> = checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if !bad.is_empty() {
        return Err(fail(bad.join("; ")));
    }
    let status = Command::new(env!("CARGO_BIN_EXE_multihom"))
        .arg("reproduce-paper-example")
        .env_remove(showcase::P_TOL_ENV)
        .env_remove(showcase::SAMPLES_ENV)
        .output()?
        .status;
    if status.code() != Some(0) {
        return Err(fail(format!("binary exited with {status}")));
    }
    Ok(format!("{} checks pass, binary exit 0", checks.len()))
}

fn limit_calibration() -> Outcome {
    let grid: Vec<f64> = (1..=16).map(|k| 0.25 * k as f64).collect();
    let opts = LimitOpts::default();
    let mut equal = 0;
    for i in 0..200 {
        let idx = (i * 37) % 256;
        let (a, b) = (grid[idx / 16], grid[idx % 16]);
        let f = Expr::parse(&format!("{SCALE_VAR}^{a}"), &[SCALE_VAR])?;
        let g = Expr::parse(&format!("{SCALE_VAR}^{b}"), &[SCALE_VAR])?;
        let got = limit_ratio(&f, &g, &opts)?.limit;
        let ok = match got {
            Limit::Zero => a > b,
            Limit::Infinite => a < b,
            Limit::Finite(c) => a == b && (c - 1.0).abs() < 1e-9,
            Limit::Indeterminate => false,
        };
        if !ok {
            return Err(fail(format!("eps^{a}/eps^{b} classified as {got:?}")));
        }
        equal += usize::from(a == b);
    }
    Ok(format!("200/200 pairs correct, {equal} with a = b"))
}

fn harmonic_benchmark() -> Outcome {
    let p = bench("harmonic", &["discretization.M_y=256"])?;
    let sys = LocalSystem::new(&p.flux, &exps(&p)?, p.grid)?;
    let b = sys.solve(&[1.0], &p.config.tolerances.cell_opts())?.mean_flux[0];
    let oracle = harmonic_mean(wavy);
    let rel = (b - oracle).abs() / oracle;
    if rel >= 1e-6 {
        return Err(fail(format!("b = {b}, oracle {oracle}, relative error {rel:e}")));
    }
    Ok(format!("b = {b:.12}, oracle {oracle:.12}, relative error {rel:.2e}"))
}

fn two_scale_benchmark() -> Outcome {
    let p = bench("two_scale", &[])?;
    let sys = LocalSystem::new(&p.flux, &exps(&p)?, p.grid)?;
    let sol = sys.solve(&[1.0], &p.config.tolerances.cell_opts())?;
    let b = sol.mean_flux[0];
    // innermost scale first: for fixed y1 the fast cell sees a1(y1)·a2(·)
    let oracle = harmonic_mean(|y1| harmonic_mean(|y2| wavy(y1) * wavy(y2)));
    if (b - 3.0).abs() >= 1e-5 || (b - oracle).abs() >= 1e-5 {
        return Err(fail(format!("b = {b}, oracle {oracle}")));
    }
    Ok(format!("b = {b:.10}, nested oracle {oracle:.10}, {} sweeps", sol.sweeps()))
}

fn corrector_properties() -> Outcome {
    let mut worst = [0.0f64; 5];
    let mut resonant = 0;
    for b in benchmarks::ALL {
        let p = b.prepared(&[])?;
        let sys = LocalSystem::new(&p.flux, &exps(&p)?, p.grid)?;
        let xi = p.xi();
        let mut opts = p.config.tolerances.cell_opts();
        opts.res_tol = opts.res_tol.min(1e-12);
        opts.gs_tol = opts.gs_tol.min(1e-12);
        let sol = sys.solve(&xi, &opts)?;
        let random = sys.solve(&xi, &CellOptions { initial: InitialGuess::Random { seed: 7 }, ..opts })?;
        for (i, c) in sol.correctors.iter().enumerate() {
            let mean = c.max_abs_mean();
            let res = sys.weak_residual(&xi, &sol.correctors, i)?.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            let gap = c.periodicity_gap.unwrap_or(0.0);
            let uniq = c.rms_distance(&random.correctors[i]);
            let mut degen = 0.0;
            if c.kept_temporal > 0 {
                let small = sys.solve_corrector(&xi, i, 1e-7, &sol.correctors, &opts)?;
                let elliptic = sys.solve_corrector(&xi, i, 0.0, &sol.correctors, &opts)?;
                degen = small.rms_distance(&elliptic);
                resonant += 1;
            }
            let vals = [mean, res, gap, uniq, degen];
            let limits = [1e-12, 1e-10, 1e-9, 1e-7, 1e-6];
            for k in 0..5 {
                if !(vals[k] < limits[k]) {
                    return Err(fail(format!(
                        "{} corrector {}: mean {mean:e}, residual {res:e}, gap {gap:e}, uniqueness {uniq:e}, rho->0 {degen:e}",
                        b.name,
                        i + 1
                    )));
                }
                worst[k] = worst[k].max(vals[k]);
            }
        }
    }
    Ok(format!(
        "{} benchmarks; worst mean {:.1e}, residual {:.1e}, gap {:.1e}, uniqueness {:.1e}, rho->0 {:.1e} ({resonant} time dependent)",
        benchmarks::ALL.len(),
        worst[0],
        worst[1],
        worst[2],
        worst[3],
        worst[4]
    ))
}

fn effective_structure() -> Outcome {
    let mut min_q = f64::INFINITY;
    for b in benchmarks::ALL {
        let p = b.prepared(&[])?;
        let ev = CachedEvaluator::new(EffectiveFluxEvaluator::new(&p.flux, &exps(&p)?, p.grid, p.config.tolerances.cell_opts())?);
        let dim = p.dim;
        let mut out = vec![0.0; dim];
        ev.eval(&vec![0.0; dim], &mut out)?;
        let zero = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if zero >= 1e-12 {
            return Err(fail(format!("{}: |b(0)| = {zero:e}", b.name)));
        }
        let report = check_monotone_parallel(&ev, 1000, p.config.seed, p.config.discretization.xi_bound)?;
        if !(report.pairs == 1000 && report.min_quotient > 0.0) {
            return Err(fail(format!("{}: {} pairs, min quotient {}", b.name, report.pairs, report.min_quotient)));
        }
        min_q = min_q.min(report.min_quotient);
        if p.flux.family == Family::Linear {
            let xi: Vec<f64> = (0..dim).map(|k| 0.7 - 0.4 * k as f64).collect();
            let mut base = vec![0.0; dim];
            ev.eval(&xi, &mut base)?;
            for lambda in [2.5, -1.5] {
                let scaled: Vec<f64> = xi.iter().map(|x| lambda * x).collect();
                ev.eval(&scaled, &mut out)?;
                for (o, v) in out.iter().zip(&base) {
                    if (o - lambda * v).abs() >= 1e-8 * (1.0 + (lambda * v).abs()) {
                        return Err(fail(format!("{}: b({lambda} xi) = {out:?}, {lambda} b(xi) = {base:?}", b.name)));
                    }
                }
            }
        }
    }
    Ok(format!("{} fluxes, b(0) = 0, min monotonicity quotient {min_q:.4}", benchmarks::ALL.len()))
}

fn manufactured_error(cells: usize) -> Result<f64, Box<dyn Error>> {
    let mesh = MacroMesh::interval(0.0, 1.0, cells - 1, 0.1, cells * cells / 4)?;
    let data = ProblemData::parse("(pi^2-1)*sin(pi*x)*exp(-t)", "sin(pi*x)", 1)?;
    let u = solve_homogenized(&data, &LinearEffectiveFlux::isotropic(1, 1.0), &mesh, &MacroOptions::default())?;
    let mut err = 0.0f64;
    for k in 0..u.levels() {
        for (i, v) in u.level(k).iter().enumerate() {
            let x = mesh.node(i)[0];
            err = err.max((v - (PI * x).sin() * (-mesh.time(k)).exp()).abs());
        }
    }
    Ok(err)
}

fn macro_verification() -> Outcome {
    let errs = [8, 16, 32].map(manufactured_error);
    let errs: Vec<f64> = errs.into_iter().collect::<Result<_, _>>()?;
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    if orders.iter().any(|o| !(1.8..=2.2).contains(o)) {
        return Err(fail(format!("errors {errs:?}, orders {orders:?}")));
    }

    let p = bench("quasilinear", &["data.f=\"0\"", "data.u0=\"sin(pi*x)\""])?;
    let ex = exps(&p)?;
    let mut h = Homogenized::new(&p, &ex)?;
    let opts = p.config.tolerances.macro_opts();
    let u = h.run(|b| solve_homogenized(&p.data, b, &p.mesh, &opts))?;
    for k in 1..u.levels() {
        if u.level_l2(k) > u.level_l2(k - 1) + 1e-12 {
            return Err(fail(format!("energy grows at level {k}: {} -> {}", u.level_l2(k - 1), u.level_l2(k))));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = p.mesh.level_nodes();
    let state: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let zero = vec![0.0; n];
    let worst = h.run(|b| {
        let m = Homogeneous(b);
        let jv = step_jacobian_apply(&m, &p.mesh, &state, &dir)?;
        let h = 1e-6;
        let shift = |s: f64| state.iter().zip(&dir).map(|(u, v)| u + s * v).collect::<Vec<f64>>();
        let rp = step_residual(&m, &p.mesh, &zero, &zero, &shift(h))?;
        let rm = step_residual(&m, &p.mesh, &zero, &zero, &shift(-h))?;
        let scale = jv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(jv
            .iter()
            .zip(rp.iter().zip(&rm))
            .map(|(j, (a, b))| (j - (a - b) / (2.0 * h)).abs() / scale)
            .fold(0.0, f64::max))
    })?;
    if worst >= 1e-5 {
        return Err(fail(format!("Jacobian vs finite differences: relative {worst:e}")));
    }
    Ok(format!(
        "orders {:.3}, {:.3}; energy non-increasing over {} levels; Jacobian relative {worst:.1e}",
        orders[0],
        orders[1],
        u.levels()
    ))
}

fn homogenization_convergence() -> Outcome {
    let mut parts = Vec::new();
    for name in ["harmonic", "quasilinear", "constant"] {
        let p = bench(name, &[])?;
        let ex = exps(&p)?;
        let mut h = Homogenized::new(&p, &ex)?;
        let rows = commands::study(&p, &mut h)?;
        let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let ok = if name == "constant" {
            errs.iter().all(|e| *e < 1e-9)
        } else {
            errs.windows(2).all(|w| w[1] < w[0])
        };
        if !ok {
            return Err(fail(format!("{name}: errors {errs:?}")));
        }
        parts.push(format!("{name} {}", errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" > ")));
    }
    Ok(parts.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 8] = [
        ("1 scale classification example", 1, showcase_example),
        ("2 limit engine calibration", 5, limit_calibration),
        ("3 harmonic-mean benchmark", 10, harmonic_benchmark),
        ("4 iterated two-scale benchmark", 60, two_scale_benchmark),
        ("5 corrector properties", 60, corrector_properties),
        ("6 effective-flux structure", 120, effective_structure),
        ("7 macro solver verification", 60, macro_verification),
        ("8 homogenization convergence", 600, homogenization_convergence),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= Duration::from_secs(limit) => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit} s limit")),
            Err(e) => (false, e.to_string()),
        };
        failed += usize::from(!pass);
        println!("{} [{name}] {:.2} s: {detail}", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
