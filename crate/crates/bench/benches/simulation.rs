use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polmz_core::analysis::analyze_series;
use polmz_core::config::{ScenarioConfig, ScenarioId};
use polmz_core::detection::{gate_detection_prob, sample_counts, SpcmConfig};
use polmz_core::{run_scenario, Simulation};

fn fast_loop(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::for_scenario(ScenarioId::PolOn);
    cfg.warmup_s = 2.0;
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.warm_up().unwrap();
    // One second of simulated time per iteration.
    c.bench_function("fast_step x 10^4", |b| {
        b.iter(|| {
            for _ in 0..10_000 {
                black_box(sim.fast_step().unwrap());
            }
        })
    });
}

fn detection(c: &mut Criterion) {
    let spcm = SpcmConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("binomial bin of 10^5 gates", |b| {
        b.iter(|| {
            let p = gate_detection_prob(black_box(0.03), &spcm).unwrap();
            sample_counts(p, 100_000, &mut rng).unwrap()
        })
    });
}

fn scenario(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::for_scenario(ScenarioId::PolOn);
    cfg.duration_s = 20.0;
    cfg.warmup_s = 5.0;
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    group.bench_function("pol_on 20 s", |b| b.iter(|| run_scenario(&cfg).unwrap()));
    let series = run_scenario(&ScenarioConfig::for_scenario(ScenarioId::PolOn))
        .map(|r| r.counts.net)
        .unwrap_or_default();
    group.bench_function("analyze 5100 bins", |b| {
        b.iter_batched(
            || series.clone(),
            |s| analyze_series(&s, 1.0, &cfg.analysis).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, fast_loop, detection, scenario);
criterion_main!(benches);
