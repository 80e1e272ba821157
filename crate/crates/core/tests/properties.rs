//! Property tests for invariants that must hold for any input.

use exostab_core::config::RunConfig;
use exostab_core::controller::{condition_grid, trapezoid_torque, TrapezoidProfile, DURATION_LEVELS, MAGNITUDE_LEVELS};
use exostab_core::dataset::{ConditionDataset, Outcome, TrialRecord};
use exostab_core::signal::ButterworthLowpass;
use exostab_core::stats::{icc_from_variances, linear_regression, rm_anova, RmTable};
use exostab_core::surface::{find_optimum_with, fit_rbf_with, OptimumMode, RbfConfig, SearchConfig};
use exostab_core::synth::{ClosedFormBody, Perturbation, SyntheticWalker, WalkerScenario};
use exostab_core::wbam::{compute_wbam_series, SegmentStateSeries};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn table(rows: &[Vec<f64>]) -> RmTable {
    let subjects = (0..rows.len()).map(|i| format!("s{i}")).collect();
    let conditions = (0..rows[0].len()).map(|j| format!("c{j}")).collect();
    RmTable::new(subjects, conditions, rows.to_vec()).unwrap()
}

fn rm_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..10, 2usize..6).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(-50.0..50.0f64, k), n))
}

fn planted_records(values: &[f64], subjects: usize) -> Vec<TrialRecord> {
    let grid = condition_grid(&MAGNITUDE_LEVELS, &DURATION_LEVELS).unwrap();
    let mut out = Vec::new();
    let mut it = values.iter().cycle();
    for s in 0..subjects {
        for c in &grid {
            for rep in 1..=2 {
                out.push(TrialRecord {
                    subject_id: format!("S{s:02}"),
                    condition: *c,
                    repetition: rep,
                    value: *it.next().unwrap(),
                });
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trapezoid_is_bounded_and_lipschitz(t_max in 0.0..40.0f64, d in 0.05..3.0f64, u in -0.5..1.5f64, h in 1e-6..1e-2f64) {
        let p = TrapezoidProfile::new(t_max, d).unwrap();
        let t = u * d;
        let (a, b) = (trapezoid_torque(t, &p), trapezoid_torque(t + h, &p));
        prop_assert!((0.0..=t_max).contains(&a));
        // slope never exceeds the ramp slope
        prop_assert!((b - a).abs() <= t_max * h / (0.2 * d) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn regression_is_affine_equivariant(
        pts in prop::collection::vec((-10.0..10.0f64, -100.0..100.0f64), 4..30),
        a in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 7.0]),
        b in -50.0..50.0f64,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let base = linear_regression(&x, &y).unwrap();
        let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let r = linear_regression(&x, &ty).unwrap();
        prop_assert!(close(r.slope, a * base.slope, 1e-9));
        prop_assert!(close(r.intercept, a * base.intercept + b, 1e-9));
        prop_assert!(close(r.p_value, base.p_value, 1e-6));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn anova_f_ignores_subject_shifts_and_scale(
        rows in rm_rows(),
        shift in -100.0..100.0f64,
        scale in 0.1..10.0f64,
        per_subject in prop::collection::vec(-40.0..40.0f64, 10),
    ) {
        let base = rm_anova(&table(&rows)).unwrap();
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .zip(&per_subject)
            .map(|(r, s)| r.iter().map(|v| scale * v + shift + s).collect())
            .collect();
        let r = rm_anova(&table(&moved)).unwrap();
        prop_assert_eq!((r.df_effect, r.df_error), (base.df_effect, base.df_error));
        prop_assert!(close(r.f, base.f, 1e-7), "{} vs {}", r.f, base.f);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn icc_lies_in_unit_interval_and_grows_with_between_variance(b in 0.0..1e4f64, w in 1e-3..1e4f64, extra in 1e-3..1e3f64) {
        let icc = icc_from_variances(b, w).unwrap();
        prop_assert!((0.0..=1.0).contains(&icc));
        prop_assert!(icc_from_variances(b + extra, w).unwrap() > icc);
    }

    #[test]
    fn lowpass_preserves_constants(level in -1e3..1e3f64, n in 32usize..400, cutoff in 2.0..20.0f64) {
        let f = ButterworthLowpass::design(cutoff, 4, 100.0).unwrap();
        let y = f.filtfilt(&vec![level; n]);
        prop_assert!(y.iter().all(|v| (v - level).abs() <= 1e-9 * level.abs().max(1.0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_is_invariant_to_record_order(values in prop::collection::vec(-20.0..80.0f64, 7..40), seed in any::<u64>()) {
        let records = planted_records(&values, 3);
        let mut shuffled = records.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = ConditionDataset::new(Outcome::Wbam, records);
        let b = ConditionDataset::new(Outcome::Wbam, shuffled);
        prop_assert_eq!(a.aggregated(), b.aggregated());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn surface_optimum_ignores_constant_offsets(values in prop::collection::vec(-20.0..80.0f64, 11..30), c in -500.0..500.0f64) {
        let base = ConditionDataset::new(Outcome::Wbam, planted_records(&values, 2));
        let moved = base.map_values(|r| r.value + c);
        let cfg = RbfConfig::default();
        let (s0, s1) = (fit_rbf_with(&base, &cfg).unwrap(), fit_rbf_with(&moved, &cfg).unwrap());
        for (m, d) in [(0.07, 0.8), (0.15, 2.25), (0.22, 3.7)] {
            prop_assert!(close(s1.eval(m, d), s0.eval(m, d) + c, 1e-7));
        }
        let search = SearchConfig::default();
        let (o0, o1) = (
            find_optimum_with(&s0, None, OptimumMode::Min, &search).unwrap(),
            find_optimum_with(&s1, None, OptimumMode::Min, &search).unwrap(),
        );
        prop_assert!((o0.magnitude - o1.magnitude).abs() < 1e-4 && (o0.duration - o1.duration).abs() < 1e-3, "{o0:?} {o1:?}");
    }

    #[test]
    fn wbam_ignores_fixed_lab_offset(dx in -5.0..5.0f64, dz in -2.0..2.0f64, seed in 0u64..50) {
        let anthro = exostab_core::body::SubjectAnthropometry::new(70.0, 1.75, exostab_core::body::Sex::Male).unwrap();
        let sc = WalkerScenario::new(anthro, seed).with_perturbation(Perturbation::new(7.0, exostab_core::signal::Side::Left));
        let w = SyntheticWalker::new(&sc).unwrap();
        let mut kin = w.generate().kinematics;
        let states = SegmentStateSeries::from_kinematics(sc.rate, 0.0, &kin, None).unwrap();
        let base = compute_wbam_series(&states, w.inertials(), &w.anthropometry()).unwrap();
        for k in &mut kin {
            k.x.iter_mut().for_each(|x| *x += dx);
            k.z.iter_mut().for_each(|z| *z += dz);
        }
        let states = SegmentStateSeries::from_kinematics(sc.rate, 0.0, &kin, None).unwrap();
        let moved = compute_wbam_series(&states, w.inertials(), &w.anthropometry()).unwrap();
        let peak = base.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in moved.samples().iter().zip(base.samples()) {
            prop_assert!((a - b).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn config_survives_toml_round_trip(seed in any::<u64>(), workers in 0usize..32, n in 100usize..5000, pts in 3usize..300) {
        let mut c = RunConfig { seed, workers, ..Default::default() };
        c.bootstrap.n_resamples = n;
        c.report.grid_points = pts;
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
