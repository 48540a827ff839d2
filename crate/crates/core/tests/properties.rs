use malab_core::families::{random_psh, random_trig};
use malab_core::{
    build_reference_density, interpolation_check, lp_norm, ma_density, BarrierConstants, Density, ForcingSpec,
    HermitianForm, NormalizedVolume, ScalarField, TorusGrid,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_strategy() -> impl Strategy<Value = TorusGrid> {
    prop_oneof![
        Just(TorusGrid::new(1, 8).unwrap()),
        Just(TorusGrid::new(1, 16).unwrap()),
        Just(TorusGrid::new(2, 8).unwrap()),
    ]
}

fn psh(grid: TorusGrid, seed: u64, strength: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_psh(grid, &HermitianForm::identity(grid.n_complex()), 3, strength, &mut rng).unwrap()
}

fn positive(grid: TorusGrid, seed: u64, amp: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_trig(grid, 2, &mut rng).unwrap().map(|v| (amp * v).exp()).unwrap()
}

fn forcing_strategy() -> impl Strategy<Value = ForcingSpec> {
    prop_oneof![
        Just(ForcingSpec::Zero),
        (0.0..2.0f64).prop_map(|alpha| ForcingSpec::LinearR { alpha }),
        (0.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(alpha, beta, gamma)| ForcingSpec::Affine {
            alpha,
            beta,
            gamma
        }),
        (0.0..2.0f64, -1.0..1.0f64).prop_map(|(alpha, sigma)| ForcingSpec::SpatialSine { alpha, sigma }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ma_measure_has_unit_mass(grid in grid_strategy(), seed in any::<u64>(), strength in 0.0..0.9f64) {
        let phi = psh(grid, seed, strength);
        let ma = ma_density(&HermitianForm::identity(grid.n_complex()), &phi).unwrap();
        prop_assert!((ma.mean() - 1.0).abs() < 1e-10);
        prop_assert!(ma.min() > 0.0);
    }

    #[test]
    fn ma_root_is_concave(grid in grid_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), alpha in 0.0..1.0f64) {
        let theta = HermitianForm::identity(grid.n_complex());
        let n = grid.n_complex() as f64;
        let u = psh(grid, s1, 0.8);
        let v = psh(grid, s2, 0.8);
        let mix = u.zip_map(&v, |a, b| alpha * a + (1.0 - alpha) * b).unwrap();
        let mu = ma_density(&theta, &u).unwrap();
        let mv = ma_density(&theta, &v).unwrap();
        let mm = ma_density(&theta, &mix).unwrap();
        for i in 0..grid.len() {
            let lhs = mm.values()[i].powf(1.0 / n);
            let rhs = alpha * mu.values()[i].powf(1.0 / n) + (1.0 - alpha) * mv.values()[i].powf(1.0 / n);
            prop_assert!(lhs >= rhs - 1e-12, "{lhs} < {rhs}");
        }
    }

    #[test]
    fn ma_commutes_with_translation(grid in grid_strategy(), seed in any::<u64>(), k in 0isize..8) {
        let theta = HermitianForm::identity(grid.n_complex());
        let phi = psh(grid, seed, 0.7);
        let mut shift = vec![0isize; grid.real_dim()];
        shift[grid.real_dim() - 1] = k;
        let a = ma_density(&theta, &phi.translate(&shift).unwrap()).unwrap();
        let b = ma_density(&theta, &phi).unwrap().translate(&shift).unwrap();
        prop_assert!(a.sup_distance(&b).unwrap() < 1e-12);
    }

    #[test]
    fn ma_ignores_constants(grid in grid_strategy(), seed in any::<u64>(), c in -5.0..5.0f64) {
        let theta = HermitianForm::identity(grid.n_complex());
        let phi = psh(grid, seed, 0.7);
        let a = ma_density(&theta, &phi).unwrap();
        let b = ma_density(&theta, &phi.add_scalar(c)).unwrap();
        prop_assert!(a.sup_distance(&b).unwrap() < 1e-10);
    }

    #[test]
    fn mafld1_round_trip(grid in grid_strategy(), values in proptest::collection::vec(-1e6..1e6f64, 4096)) {
        let field = ScalarField::new(grid, values[..grid.len()].to_vec()).unwrap();
        let back = ScalarField::from_mafld1(&field.to_mafld1()).unwrap();
        prop_assert_eq!(back.values(), field.values());
        prop_assert_eq!(back.grid(), field.grid());
    }

    #[test]
    fn lp_norms_increase_with_p(grid in grid_strategy(), seed in any::<u64>(), p in 1.0..4.0f64, dq in 0.0..3.0f64) {
        let h = positive(grid, seed, 1.0);
        let dv = NormalizedVolume::new(grid);
        prop_assert!(lp_norm(&h, p, &dv).unwrap() <= lp_norm(&h, p + dq, &dv).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn interpolation_holds(grid in grid_strategy(), seed in any::<u64>(), p in 1.5..6.0f64, frac in 0.05..0.95f64) {
        let h = positive(grid, seed, 2.0);
        let r = 1.0 + frac * (p - 1.0);
        let v = interpolation_check(&h, p, r, grid.n_complex()).unwrap();
        prop_assert!(v.holds && v.consequence_holds, "{v:?}");
    }

    #[test]
    fn reference_density_is_normalized(grid in grid_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), p in 1.2..4.0f64) {
        let f = Density::new(positive(grid, s1, 0.5), p).unwrap();
        let g = Density::new(positive(grid, s2, 0.5), p).unwrap();
        let r = build_reference_density(&f, &g, p).unwrap();
        let dv = NormalizedVolume::new(grid);
        prop_assert!((dv.integrate(&r.h) - 1.0).abs() < 1e-12);
        prop_assert!(r.h.min() > 0.0 && r.a > 0.0);
    }

    #[test]
    fn forcing_box_suprema_dominate_samples(
        a in forcing_strategy(),
        b in forcing_strategy(),
        t in 0.0..1.0f64,
        x in 0.0..1.0f64,
        r in -3.0..3.0f64,
    ) {
        let diff = b.eval(t, x, r) - a.eval(t, x, r);
        let pos = a.sup_positive_excess(&b, (0.0, 1.0), Some((-3.0, 3.0)));
        prop_assert!(diff <= pos + 1e-12);
        let abs = a.sup_abs_difference(&b, (0.0, 1.0), Some((-3.0, 3.0)));
        prop_assert_eq!(abs, b.sup_abs_difference(&a, (0.0, 1.0), Some((-3.0, 3.0))));
        prop_assert!(diff.abs() <= abs + 1e-12);
        prop_assert!(a.eval(t, x, r) <= a.sup_at_level((0.0, 1.0), r) + 1e-12);
    }

    #[test]
    fn barrier_constants_json_round_trip(delta in 0.0..1.0f64, m in 0.0..10.0f64, infinite in any::<bool>()) {
        let c = BarrierConstants {
            delta,
            m,
            m_all_r: if infinite { f64::INFINITY } else { m },
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        let back: BarrierConstants = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, c);
    }
}
