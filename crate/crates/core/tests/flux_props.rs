use multihom_core::flux::{Flux, FluxSpec};
use proptest::prelude::*;

fn fluxes() -> Vec<FluxSpec> {
    vec![
        FluxSpec::linear("2+sin(2*pi*y1)", 1, 1, 0).unwrap(),
        FluxSpec::linear("(2+sin(2*pi*y1))*(1.5+cos(2*pi*y2))*(2+sin(2*pi*s1))", 1, 2, 1).unwrap(),
        FluxSpec::quasilinear("2+sin(2*pi*y1_1)*cos(2*pi*y1_2)", 0.2, 2, 1, 0).unwrap(),
        FluxSpec::linear("3+sin(2*pi*(y1_1-y1_2))+cos(2*pi*s1)", 2, 1, 1).unwrap(),
    ]
}

/// Dyadic coordinates k/1024 stay exact under integer shifts.
fn dyadic() -> impl Strategy<Value = f64> {
    (0u32..1024).prop_map(|k| k as f64 / 1024.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn unit_shifts_leave_the_flux_unchanged(
        which in 0usize..4,
        coords in prop::collection::vec(dyadic(), 5),
        shifts in prop::collection::vec(-3i32..=3, 5),
        xi in prop::collection::vec(-4.0..4.0f64, 2),
    ) {
        let f = &fluxes()[which];
        let ny = f.spatial_scales() * f.dim();
        let m = f.temporal_scales();
        let n = f.dim();
        let y: Vec<f64> = coords[..ny].to_vec();
        let s: Vec<f64> = coords[ny..ny + m].to_vec();
        let ys: Vec<f64> = y.iter().zip(&shifts).map(|(v, k)| v + *k as f64).collect();
        let ss: Vec<f64> = s.iter().zip(&shifts[ny..]).map(|(v, k)| v + *k as f64).collect();
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        f.eval(&y, &s, &xi[..n], &mut a[..n]).unwrap();
        f.eval(&ys, &ss, &xi[..n], &mut b[..n]).unwrap();
        prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
        prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn linear_family_is_homogeneous(
        y in 0.0..1.0f64,
        xi in -5.0..5.0f64,
        c in -10.0..10.0f64,
    ) {
        let f = &fluxes()[0];
        let (mut a, mut b) = ([0.0], [0.0]);
        f.eval(&[y], &[], &[xi], &mut a).unwrap();
        f.eval(&[y], &[], &[c * xi], &mut b).unwrap();
        prop_assert!((b[0] - c * a[0]).abs() <= 1e-14 * (c * a[0]).abs().max(1e-300));
    }

    #[test]
    fn sampled_monotonicity_respects_declared_c0(
        which in 0usize..4,
        seed in 0u64..1000,
    ) {
        let f = &fluxes()[which];
        let r = f.verify_structure(1000, seed).unwrap();
        prop_assert!(r.measured_c0 >= f.constants.c0 - 1e-9);
        prop_assert!(r.measured_c1 <= f.constants.c1 + 1e-9);
    }
}
