//! Benchmarks for the numeric hot paths: the volatility filter evaluated
//! inside every likelihood call, the classifier's mini-batch gradient, the
//! daily double-sort, and the headline hash encoder.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use finreport_core::classifier::{batch_loss_and_grads, Label, MlpParams};
use finreport_core::factor_model::{
    factor_returns_ff5news, sort_groups, DailyCrossSection, FirmCharacteristics,
};
use finreport_core::news_encoding::fallback_hash_encoder;
use finreport_core::risk::{egarch_filter, EgarchParams, ShockForm};

fn bench_egarch_filter(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let residuals: Vec<f64> = (0..2_000).map(|_| rng.gen_range(-0.03..0.03)).collect();
    let params = EgarchParams {
        omega: -0.4,
        alpha: vec![0.1],
        beta: vec![0.94],
        gamma: vec![0.02],
    };
    let init_var = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    c.bench_function("egarch_filter_2000_obs", |b| {
        b.iter(|| egarch_filter(&params, &residuals, init_var, ShockForm::SquaredShock).unwrap())
    });
}

fn bench_classifier_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input_dim = 28;
    let params = MlpParams::init(input_dim, 64, 0.0, 3);
    let inputs: Vec<Vec<f64>> = (0..128)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<Label> = (0..128)
        .map(|i| match i % 3 {
            0 => Label::Positive,
            1 => Label::Neutral,
            _ => Label::Negative,
        })
        .collect();
    c.bench_function("mlp_batch_grads_128x28", |b| {
        b.iter(|| batch_loss_and_grads(&params, &inputs, &labels).unwrap())
    });
}

fn synthetic_day(rng: &mut ChaCha8Rng, n: usize) -> (Vec<FirmCharacteristics>, BTreeMap<String, Label>) {
    let mut firms = Vec::with_capacity(n);
    let mut labels = BTreeMap::new();
    for i in 0..n {
        let symbol = format!("S{i:04}");
        firms.push(FirmCharacteristics {
            symbol: symbol.clone(),
            mktcap: rng.gen_range(1e8..1e11),
            bp: rng.gen_range(0.1..3.0),
            profitability: rng.gen_range(-0.2..0.5),
            investment: rng.gen_range(-0.3..0.6),
        });
        if rng.gen_bool(0.4) {
            let label = match rng.gen_range(0..3) {
                0 => Label::Positive,
                1 => Label::Neutral,
                _ => Label::Negative,
            };
            labels.insert(symbol, label);
        }
    }
    (firms, labels)
}

fn bench_daily_sorts(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (firms, labels) = synthetic_day(&mut rng, 500);
    c.bench_function("double_sort_500_stocks", |b| {
        b.iter(|| sort_groups(&firms, Some(&labels)).unwrap())
    });
}

fn bench_factor_series(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
    let mut days = Vec::new();
    let mut risk_free = BTreeMap::new();
    for d in 0..252u64 {
        let date = start + chrono::Days::new(d);
        let (firms, labels) = synthetic_day(&mut rng, 100);
        let groups = sort_groups(&firms, Some(&labels)).unwrap();
        let returns = firms
            .iter()
            .map(|f| (f.symbol.clone(), rng.gen_range(-0.05..0.05)))
            .collect();
        days.push(DailyCrossSection { date, returns, groups });
        risk_free.insert(date, 0.0001);
    }
    c.bench_function("factor_series_252d_100_stocks", |b| {
        b.iter_batched(
            || (days.clone(), risk_free.clone()),
            |(days, rf)| factor_returns_ff5news(&days, &rf).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_hash_encoder(c: &mut Criterion) {
    let headline = "ACME beats quarterly earnings estimates and raises full year guidance";
    c.bench_function("hash_encode_headline", |b| {
        b.iter(|| fallback_hash_encoder(headline, 8, 4, 42))
    });
}

criterion_group!(
    benches,
    bench_egarch_filter,
    bench_classifier_batch,
    bench_daily_sorts,
    bench_factor_series,
    bench_hash_encoder,
);
criterion_main!(benches);
