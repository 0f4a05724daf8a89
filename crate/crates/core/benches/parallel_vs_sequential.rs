use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfmtensor::mfm::LabelVector;
use mfmtensor::postprocess::similarity_matrix;
use mfmtensor::sampler::{chain_rng, Model, SamplerConfig};
use mfmtensor::simbench::{generate_design, run_replicates, BaselineConfig, DesignSpec};
use mfmtensor::tensor::Direction;
use mfmtensor::Execution;
use rand::Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn replicates(c: &mut Criterion) {
    let spec = DesignSpec::design1(0);
    let cfg = SamplerConfig { n_iter: 200, thin: 2, burn_in: 20, ..Default::default() };
    let mut g = c.benchmark_group("replicates");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| run_replicates(&spec, 8, &cfg, &BaselineConfig::default(), 1, exec).unwrap())
        });
    }
    g.finish();
}

fn label_weights(c: &mut Criterion) {
    let (data, _) = generate_design(&DesignSpec::design2(0), 3).unwrap();
    let mut g = c.benchmark_group("label_log_weights");
    for (name, exec) in MODES {
        let model = Model::new(&data, SamplerConfig { label_execution: exec, ..Default::default() }).unwrap();
        let state = model.initial_state(&mut chain_rng(1, 0)).unwrap();
        let cands = state.dir(Direction::Distance).effects.clone();
        g.bench_function(name, |b| b.iter(|| model.label_log_weights(&state, Direction::Distance, &cands)));
    }
    g.finish();
}

fn similarity(c: &mut Criterion) {
    let mut rng = chain_rng(2, 0);
    let samples: Vec<LabelVector> = (0..500)
        .map(|_| LabelVector { direction: Direction::Angle, labels: (0..191).map(|_| rng.gen_range(1..=3)).collect() })
        .collect();
    let mut g = c.benchmark_group("similarity_matrix");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| similarity_matrix(&samples, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, replicates, label_weights, similarity);
criterion_main!(benches);
