use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use blockdiff::backbone::Model;
use blockdiff::exec::Execution;
use blockdiff::harness::train::batch_grad;
use blockdiff::harness::{problem_for, RunConfig};
use blockdiff::samplers::decode_batch;

fn setup(paradigm: &str) -> (RunConfig, Model<f32>, Vec<blockdiff::tasks::Example>) {
    let cfg = RunConfig::parse(&format!("preset = tiny-star\nparadigm = {paradigm}\nblock_size = 2\n")).unwrap();
    let model = Model::<f32>::new(cfg.model_config(), 0).unwrap();
    let batch = (0..cfg.batch_size as u64)
        .map(|i| {
            let ex = cfg.task.generate(0, "train", i).unwrap();
            blockdiff::harness::eval::prepare_example(&cfg, &ex).unwrap()
        })
        .collect();
    (cfg, model, batch)
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_grad(c: &mut Criterion) {
    let mut g = c.benchmark_group("batch_grad");
    for paradigm in ["ar", "mdm", "jigsaw"] {
        let (cfg, model, batch) = setup(paradigm);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, paradigm), &exec, |b, &exec| {
                b.iter(|| batch_grad(&model, &cfg, &batch, 0, 0, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_decode(c: &mut Criterion) {
    let mut g = c.benchmark_group("decode_batch");
    for paradigm in ["ar", "mdm", "jigsaw"] {
        let (cfg, model, batch) = setup(paradigm);
        let problems: Vec<_> = batch.iter().map(|ex| problem_for(&cfg, ex).unwrap()).collect();
        let dc = cfg.decode_config().unwrap();
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, paradigm), &exec, |b, &exec| {
                b.iter(|| decode_batch(&model, &problems, &dc, exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_grad, bench_decode);
criterion_main!(benches);
