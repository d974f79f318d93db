use criterion::{criterion_group, criterion_main, Criterion};
use ftseg::elastic::DisplacementField;
use ftseg::segnet::{backward, forward, init_params, predict, NetConfig};
use ftseg::trainer::{student_objective, StepInput, TermWeights, TrainConfig};
use ftseg::MaskSlice;
use ftseg_bench::random_image;
use ndarray::Array2;
use std::hint::black_box;

fn bench_net(c: &mut Criterion) {
    let cfg = NetConfig::default();
    let params = init_params(cfg, 0).unwrap();
    let img = random_image(64, 64, 1);
    c.bench_function("segnet_forward_64", |b| {
        b.iter(|| predict(&params, black_box(img.view())).unwrap())
    });
    let upstream = Array2::from_elem((64, 64), 1e-3);
    c.bench_function("segnet_forward_backward_64", |b| {
        b.iter(|| {
            let (_, cache) = forward(&params, img.view()).unwrap();
            backward(&params, &cache, upstream.view()).unwrap()
        })
    });

    let train_cfg = TrainConfig::default();
    let mask = MaskSlice::from_probs(random_image(64, 64, 2).view(), 0.9);
    let target = random_image(64, 64, 3);
    let field = DisplacementField::zeros(64, 64);
    let w = TermWeights {
        dice: 1.0,
        con: 1.0,
        ent: 1.0,
    };
    c.bench_function("student_objective_64", |b| {
        b.iter(|| {
            let input = StepInput {
                source: img.view(),
                mask: &mask,
                target: target.view(),
            };
            student_objective(&params, &params, input, &field, &train_cfg, w).unwrap()
        })
    });
}

criterion_group!(benches, bench_net);
criterion_main!(benches);
