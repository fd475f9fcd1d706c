use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use salsa_core::acquisition::{sample_round, AcquisitionConfig, StrategyKind};
use salsa_core::oracle::{score_batch, ScoreLedger, SyntheticOracle, SyntheticOracleSpec};
use salsa_core::space::ProductSpace;
use salsa_core::surrogate::{
    FeedForwardModel, GaussianPrediction, ModelKind, NetworkConfig, SurrogateBank, SurrogateConfig, SynthonDataset,
};
use salsa_core::driver::random_unseen;

fn trained_bank(space: &ProductSpace, n: usize) -> SurrogateBank {
    let oracle = SyntheticOracle::new(&SyntheticOracleSpec::default(), space).unwrap();
    let mut ledger = ScoreLedger::new(n as u64);
    let batch = random_unseen(space, &ledger, n, 0, 1);
    score_batch(&mut ledger, &oracle, space, &batch, 1).unwrap();
    let mut config = SurrogateConfig::default();
    config.network.max_epochs = 2;
    let mut bank = SurrogateBank::new(config, space.n_vectors());
    bank.fit(space, &SynthonDataset::from_ledger(&ledger), 0, 2).unwrap();
    bank
}

fn predict_all(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_all");
    group.sample_size(10);
    for &n in &[1_000usize, 10_000] {
        let space = ProductSpace::generate(&[n, n], 8, 0).unwrap();
        let bank = trained_bank(&space, 500);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| bank.predict_all(space.set(0), 0).unwrap())
        });
    }
    group.finish();
}

fn acquisition(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_round");
    group.sample_size(10);
    for &n in &[1_000usize, 100_000] {
        let preds: Vec<Vec<GaussianPrediction>> = (0..2)
            .map(|v| {
                (0..n)
                    .map(|i| GaussianPrediction {
                        mean: ((i * 7919 + v) % 1000) as f64 / 1000.0,
                        std: 0.1 + ((i * 104_729) % 100) as f64 / 1000.0,
                    })
                    .collect()
            })
            .collect();
        let ledger = ScoreLedger::new(1000);
        for strategy in [StrategyKind::Ts, StrategyKind::Ei] {
            let cfg = AcquisitionConfig::new(strategy);
            group.bench_with_input(BenchmarkId::new(strategy.name(), n), &n, |b, _| {
                b.iter(|| sample_round(&cfg, &preds, &ledger, 100, 1000, 0, 2).unwrap())
            });
        }
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("training_epoch");
    group.sample_size(10);
    for &rows in &[1_000usize, 10_000] {
        let x = Array2::from_shape_fn((rows, 10), |(r, k)| ((r * 31 + k * 17) % 97) as f64 / 97.0);
        let y: Vec<f64> = (0..rows).map(|r| x[[r, 0]] + 0.5 * x[[r, 1]]).collect();
        let config = NetworkConfig {
            max_epochs: 1,
            ..NetworkConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(rows), &rows, |b, _| {
            b.iter(|| FeedForwardModel::fit(&config, ModelKind::Mve, x.view(), &y, 0, &[0]).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, predict_all, acquisition, training_epoch);
criterion_main!(benches);
