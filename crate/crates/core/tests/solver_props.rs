use multihom_core::cell::{CellOptions, PeriodicGrid};
use multihom_core::dns::{solve_eps, DnsConfig};
use multihom_core::effective::{effective_flux, EffectiveFlux, EffectiveFluxEvaluator, LinearEffectiveFlux};
use multihom_core::flux::FluxSpec;
use multihom_core::macro_solver::{
    l2_spacetime_error, solve_homogenized, step_jacobian_apply, step_residual, Homogeneous, MacroInitial, MacroMesh,
    MacroOptions, ProblemData,
};
use multihom_core::scale::ScaleExponents;
use multihom_core::Expr;
use proptest::prelude::*;

/// b(ξ) = (2 + |ξ|²/(1+|ξ|²)) ξ, strongly monotone and smooth.
struct Saturating(usize);

impl EffectiveFlux for Saturating {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), multihom_core::effective::EffectiveError> {
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        let c = 2.0 + r2 / (1.0 + r2);
        for (o, v) in out.iter_mut().zip(xi) {
            *o = c * v;
        }
        Ok(())
    }
}

fn elliptic(n: usize) -> ScaleExponents {
    ScaleExponents::given(vec![0; n], vec![0.0; n], 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn macro_jacobian_matches_differences(seed in 0u64..10_000, two_d in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mesh = if two_d {
            MacroMesh::rectangle([0.0, 0.0], [1.0, 1.0], [5, 4], 0.1, 4).unwrap()
        } else {
            MacroMesh::interval(0.0, 1.0, 9, 0.1, 4).unwrap()
        };
        let flux = Homogeneous(&Saturating(mesh.dim));
        let n = mesh.unknowns();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (u, v, prev, src) = (draw(n), draw(n), draw(n), draw(n));
        let jv = step_jacobian_apply(&flux, &mesh, &u, &v).unwrap();
        let h = 1e-6;
        let shift = |s: f64| {
            let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + s * h * b).collect();
            step_residual(&flux, &mesh, &prev, &src, &w).unwrap()
        };
        let (rp, rm) = (shift(1.0), shift(-1.0));
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = rp.iter().zip(&rm).zip(&jv).map(|((a, b), j)| (a - b) / (2.0 * h) - j).collect();
        prop_assert!(norm(&diff) < 1e-5 * norm(&jv), "{} vs {}", norm(&diff), norm(&jv));
    }

    #[test]
    fn linear_effective_flux_is_homogeneous(c in -3.0..3.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let flux = FluxSpec::linear("2+sin(2*pi*y1_1)+0.5*cos(2*pi*(y1_1+y1_2))", 2, 1, 0).unwrap();
        let ev = EffectiveFluxEvaluator::new(&flux, &elliptic(1), PeriodicGrid::new(2, 8, 8).unwrap(), CellOptions::default()).unwrap();
        let a = effective_flux(&ev, &[x, y]).unwrap();
        let b = effective_flux(&ev, &[c * x, c * y]).unwrap();
        for k in 0..2 {
            prop_assert!((b[k] - c * a[k]).abs() < 1e-8 * (1.0 + a[k].abs()));
        }
    }
}

#[test]
fn effective_flux_vanishes_at_zero_and_recovers_the_matrix() {
    let flux = FluxSpec::linear("2+sin(2*pi*y1_1)+0.5*cos(2*pi*(y1_1+y1_2))", 2, 1, 0).unwrap();
    let ev = EffectiveFluxEvaluator::new(&flux, &elliptic(1), PeriodicGrid::new(2, 12, 8).unwrap(), CellOptions::default()).unwrap();
    assert!(effective_flux(&ev, &[0.0, 0.0]).unwrap().iter().all(|v| *v == 0.0));
    let lin = LinearEffectiveFlux::probe(&ev).unwrap();
    let xi = [0.7, -1.3];
    let direct = effective_flux(&ev, &xi).unwrap();
    let mut via = [0.0; 2];
    lin.eval(&xi, &mut via).unwrap();
    for k in 0..2 {
        assert!((direct[k] - via[k]).abs() < 1e-8);
    }
    // symmetric coefficient gives a symmetric positive matrix
    assert!((lin.matrix[1] - lin.matrix[2]).abs() < 1e-8);
    assert!(lin.matrix[0] > 0.0 && lin.matrix[3] > 0.0);
}

#[test]
fn cell_resolution_study_converges() {
    let flux = FluxSpec::linear("2+sin(2*pi*y1_1)*cos(2*pi*y1_2)", 2, 1, 0).unwrap();
    let b = |m: usize| {
        let ev = EffectiveFluxEvaluator::new(&flux, &elliptic(1), PeriodicGrid::new(2, m, 8).unwrap(), CellOptions::default()).unwrap();
        effective_flux(&ev, &[1.0, 0.0]).unwrap()[0]
    };
    let (b8, b16, b32) = (b(8), b(16), b(32));
    let (d1, d2) = ((b16 - b8).abs(), (b32 - b16).abs());
    assert!(d2 < d1, "{b8} {b16} {b32}");
    // bounded by the arithmetic and harmonic means of the coefficient
    assert!(b32 < 2.0 && b32 > 1.9);
}

#[test]
fn macro_solution_is_unique() {
    let mesh = MacroMesh::interval(0.0, 1.0, 15, 0.2, 10).unwrap();
    let data = ProblemData::parse("1+x", "sin(pi*x)", 1).unwrap();
    let b = Saturating(1);
    let a = solve_homogenized(&data, &b, &mesh, &MacroOptions::default()).unwrap();
    for seed in [1, 2, 3] {
        let opts = MacroOptions {
            initial: MacroInitial::Perturbed { seed },
            ..MacroOptions::default()
        };
        let p = solve_homogenized(&data, &b, &mesh, &opts).unwrap();
        let d = a.values.iter().zip(&p.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-8, "{d}");
    }
}

fn eps_scale() -> Vec<Expr> {
    vec![Expr::parse("eps", &["eps"]).unwrap()]
}

#[test]
fn dns_energy_decays_without_source() {
    let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
    let data = ProblemData::parse("0", "sin(pi*x)", 1).unwrap();
    let hint = MacroMesh::interval(0.0, 1.0, 15, 0.3, 30).unwrap();
    let cfg = DnsConfig::new(eps_scale(), vec![], 0.1);
    let u = solve_eps(&flux, &cfg, &data, &hint, &MacroOptions::default()).unwrap();
    let energies: Vec<f64> = (0..u.levels()).map(|k| u.level_l2(k)).collect();
    assert!(energies.windows(2).all(|w| w[1] < w[0]), "{energies:?}");
}

#[test]
fn mesh_refinement_moves_less_than_homogenization_error() {
    let flux = FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap();
    let data = ProblemData::parse("1", "0", 1).unwrap();
    let hint = MacroMesh::interval(0.0, 1.0, 15, 0.5, 20).unwrap();
    let cfg = DnsConfig::new(eps_scale(), vec![], 0.125);
    let opts = MacroOptions::default();
    let coarse = solve_eps(&flux, &cfg, &data, &hint, &opts).unwrap();
    let fine = solve_eps(&flux, &DnsConfig { k_x: 32, ..cfg.clone() }, &data, &hint, &opts).unwrap();
    let hom = solve_homogenized(&data, &LinearEffectiveFlux::isotropic(1, 3f64.sqrt()), &fine.mesh, &opts).unwrap();
    let refinement = l2_spacetime_error(&coarse, &fine).unwrap();
    let modelling = l2_spacetime_error(&fine, &hom).unwrap();
    assert!(refinement < modelling, "{refinement} vs {modelling}");
}
