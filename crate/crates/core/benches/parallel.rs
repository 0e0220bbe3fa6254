use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mobiscope_core::inference::cross_sectional_corr;
use mobiscope_core::par::Execution;
use mobiscope_core::simgen::{generate, CityConfig};
use mobiscope_core::synthctl::{cohort_treatment_days, staggered_ascm, StaggeredConfig};
use mobiscope_core::tsclust::{distance_matrix_with, fill_missing, DtwConfig};
use mobiscope_core::{InterventionKind, Variable};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let city = generate(&CityConfig::default()).expect("default config is valid");
    let (region, _) = city.region().expect("generated tables assemble");
    let series: Vec<Vec<f64>> =
        region.variable(Variable::Score).values().map(|s| fill_missing(s).expect("scores observed")).collect();
    let cohort = cohort_treatment_days(&region, &city.truth.cohort, InterventionKind::Phase2Transition).expect("cohort known");
    let scm = StaggeredConfig::default();

    let mut g = c.benchmark_group("dtw_matrix_52x249");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| distance_matrix_with(&series, &DtwConfig::default(), exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("cross_sectional_corr");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| cross_sectional_corr(&region, Variable::MobilityIndex, Variable::CumCasesPer100k, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("staggered_ascm");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| staggered_ascm(&region, &cohort, &scm, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
