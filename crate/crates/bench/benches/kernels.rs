// SPDX-License-Identifier: Apache-2.0

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use headcount_core::constructions::{build_relu_max, build_softmin_model, exact_component_nets, verify_softmin_bound};
use headcount_core::model::{BatchWorkspace, ModelConfig, TransformerParams};
use headcount_core::numerics::{rng, Matrix};
use headcount_core::tasks::{
    make_synthetic_task, sample_dataset, sample_sequence, toy_max_plus_min, TokenDistribution,
};

fn model_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    for t in [8, 32, 128] {
        let task = make_synthetic_task(0);
        let data = sample_dataset(&task, t, 128, 1, 0).unwrap();
        let cfg = ModelConfig {
            heads: 4,
            head_dim: 8,
            hidden: 32,
            input_dim: 4,
            seq_len: t,
            beta: 1.0,
        };
        let params = TransformerParams::init(cfg, &mut rng::stream(0, &[])).unwrap();
        let inputs: Vec<_> = data.train.iter().map(|r| &r.tokens).collect();
        let labels: Vec<f64> = data.train.iter().map(|r| r.label).collect();
        let mut ws = BatchWorkspace::new(&params, inputs.len());
        let mut grads = TransformerParams::zeros(cfg).unwrap();

        g.bench_function(format!("forward_b128_T{t}"), |b| {
            b.iter(|| black_box(ws.forward(&params, &inputs).unwrap()[0]))
        });
        g.bench_function(format!("loss_and_grad_b128_T{t}"), |b| {
            b.iter(|| black_box(ws.loss_and_grad(&params, &inputs, &labels, &mut grads).unwrap()))
        });
    }
    g.finish();
}

fn matmul(c: &mut Criterion) {
    let a = Matrix::from_fn(128, 64, |r, c| ((r * 7 + c) % 13) as f64 / 13.0);
    let b = Matrix::from_fn(64, 256, |r, c| ((r + 3 * c) % 11) as f64 / 11.0);
    c.bench_function("matmul_128x64x256", |bch| bch.iter(|| black_box(a.matmul(&b).unwrap())));
}

fn constructions(c: &mut Criterion) {
    let net = build_relu_max(8, 0.01).unwrap();
    let mut r = rng::stream(1, &[]);
    let x: Vec<f64> = sample_sequence(&mut r, 8, 1, TokenDistribution::UnitCube)
        .tokens()
        .as_slice()
        .to_vec();
    c.bench_function("relu_max_eval_T8_n100", |b| b.iter(|| black_box(net.eval(&x).unwrap())));

    let task = toy_max_plus_min(16);
    let model = build_softmin_model(&task, 16, 0.05, exact_component_nets(&task).unwrap()).unwrap();
    c.bench_function("softmin_verify_1000_T16", |b| {
        b.iter_batched(
            || {
                let mut r = rng::stream(2, &[]);
                (0..1000)
                    .map(|_| sample_sequence(&mut r, 16, 1, TokenDistribution::UnitCube))
                    .collect::<Vec<_>>()
            },
            |seqs| black_box(verify_softmin_bound(&model, &seqs).unwrap().max_observed),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, model_batch, matmul, constructions);
criterion_main!(benches);
