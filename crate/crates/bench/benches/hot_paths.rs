use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use exostab_core::analysis::{analyze_trial, AnalysisConfig};
use exostab_core::body::{SegmentParameterTable, Sex, SubjectAnthropometry};
use exostab_core::controller::{trapezoid_torque, AssistanceCondition, TrapezoidProfile};
use exostab_core::figure::{emit_contour_svg, Annotations};
use exostab_core::signal::ButterworthLowpass;
use exostab_core::stats::{fit_random_intercept_lmm, LmmConfig};
use exostab_core::surface::{bootstrap_optimum, find_optimum_with, fit_rbf_with, OptimumMode, RbfConfig, SearchConfig};
use exostab_core::synth::{plant_response_surface, Perturbation, PlantedSurfaceSpec, SyntheticWalker, WalkerScenario};

fn controller(c: &mut Criterion) {
    let p = TrapezoidProfile::new(20.0, 0.6).unwrap();
    let ts: Vec<f64> = (0..10_000).map(|i| i as f64 * 1e-4 * 0.7).collect();
    c.bench_function("trapezoid_torque_10k", |b| {
        b.iter(|| ts.iter().map(|&t| trapezoid_torque(black_box(t), &p)).sum::<f64>())
    });
}

fn signal(c: &mut Criterion) {
    let f = ButterworthLowpass::design(6.0, 4, 100.0).unwrap();
    let x: Vec<f64> = (0..3000).map(|i| (i as f64 * 0.07).sin() + 0.1 * (i as f64 * 1.3).cos()).collect();
    c.bench_function("filtfilt_3000", |b| b.iter(|| f.filtfilt(black_box(&x))));
}

fn wbam(c: &mut Criterion) {
    let anthro = SubjectAnthropometry::new(70.0, 1.75, Sex::Male).unwrap();
    let mut sc =
        WalkerScenario::new(anthro, 5).with_perturbation(Perturbation::new(7.3, exostab_core::signal::Side::Left));
    sc.exo_mass = 4.5;
    let mut trial = SyntheticWalker::new(&sc).unwrap().generate();
    trial.condition = AssistanceCondition::trapezoid(0.15, 2.0).unwrap();
    let table = SegmentParameterTable::default_table();
    let cfg = AnalysisConfig::default();
    c.bench_function("analyze_walker_trial", |b| {
        b.iter(|| analyze_trial(black_box(&trial), &sc.anthropometry, sc.exo_mass, &table, &cfg).unwrap())
    });
}

fn surface(c: &mut Criterion) {
    let data = plant_response_surface(&PlantedSurfaceSpec::default()).unwrap();
    let rbf = RbfConfig::default();
    c.bench_function("rbf_fit_and_optimum", |b| {
        b.iter(|| {
            let s = fit_rbf_with(black_box(&data), &rbf).unwrap();
            find_optimum_with(&s, None, OptimumMode::Min, &SearchConfig::default()).unwrap()
        })
    });
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("bootstrap_100", |b| {
        b.iter(|| bootstrap_optimum(black_box(&data), 100, 7, OptimumMode::Min).unwrap())
    });
    g.finish();
    let s = fit_rbf_with(&data, &rbf).unwrap();
    let grid = s.grid(&s.bounds, 200, 200);
    let ann = Annotations { title: "bench".into(), ..Default::default() };
    c.bench_function("contour_svg_200x200", |b| b.iter(|| emit_contour_svg(black_box(&grid), &ann).unwrap()));
}

fn stats(c: &mut Criterion) {
    let data = plant_response_surface(&PlantedSurfaceSpec::default()).unwrap();
    c.bench_function("lmm_fit", |b| {
        b.iter(|| fit_random_intercept_lmm(black_box(&data), &LmmConfig::default()).unwrap())
    });
}

criterion_group!(benches, controller, signal, wbam, surface, stats);
criterion_main!(benches);
