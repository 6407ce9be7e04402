use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use alphami::channel_opt::{
    binary_copy_world, optimize_channel, project_to_simplex, ChannelOptConfig,
};
use alphami::experiments::SynthConfig;
use alphami::info_measures::{
    arimoto_conditional_entropy, batch_sequence_arimoto_entropy_grad, Alpha, JointPmf,
    PosteriorBatch,
};
use alphami::neural::{backward, forward, Activation, LayerSpec, NetworkParams};
use alphami::tensor::Tensor3;
use alphami::training::{train, DistortionSpec, HyperParams};

fn measures(c: &mut Criterion) {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|x| {
            (0..5)
                .map(|z| ((x * 5 + z) % 7 + 1) as f64 / 100.0)
                .collect()
        })
        .collect();
    let total: f64 = rows.iter().flatten().sum();
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|v| v / total).collect())
        .collect();
    let joint = JointPmf::from_matrix(&rows).unwrap();
    let a = Alpha::new(3.0).unwrap();
    c.bench_function("arimoto_conditional_entropy 5x5", |b| {
        b.iter(|| arimoto_conditional_entropy(black_box(&joint), a).unwrap())
    });

    let p = Tensor3::from_fn(256, 24, 2, |b, t, x| {
        let q = 0.05 + 0.9 * (((b * 31 + t * 7) % 97) as f64 / 97.0);
        if x == 0 {
            q
        } else {
            1.0 - q
        }
    });
    let batch = PosteriorBatch::new(p).unwrap();
    c.bench_function("sequence entropy + grad 256x24x2", |b| {
        b.iter(|| batch_sequence_arimoto_entropy_grad(black_box(&batch), a))
    });
}

fn channel(c: &mut Criterion) {
    let world = binary_copy_world(0.3).unwrap();
    let cfg = ChannelOptConfig::new(Alpha::new(2.0).unwrap(), 1.0);
    c.bench_function("optimize_channel binary", |b| {
        b.iter(|| optimize_channel(black_box(&world), &cfg, 1).unwrap())
    });
    let v: Vec<f64> = (0..64)
        .map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0)
        .collect();
    c.bench_function("project_to_simplex 64", |b| {
        b.iter(|| project_to_simplex(black_box(&v)).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let specs = [
        LayerSpec::recurrent(16, Activation::Tanh),
        LayerSpec::dense(2, Activation::Softmax),
    ];
    let net = NetworkParams::init(2, &specs, 1).unwrap();
    let x = Tensor3::from_fn(128, 24, 2, |b, t, j| {
        ((b + 3 * t + 5 * j) % 13) as f64 / 13.0
    });
    c.bench_function("elman forward+backward 128x24", |b| {
        b.iter(|| {
            let (out, trace) = forward(&net, black_box(&x)).unwrap();
            backward(&net, &trace, &out).unwrap()
        })
    });
}

fn training(c: &mut Criterion) {
    let data = SynthConfig::labeled_clusters(2000, 4, 1)
        .generate()
        .unwrap();
    let hyper = HyperParams::new(Alpha::new(1.0).unwrap(), 1.0, 256, 3, 20, 7);
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("20 iterations B=256 k=3", |b| {
        b.iter(|| {
            train(
                &hyper,
                &data,
                &DistortionSpec::PNorm { p: 2.0 },
                false,
                false,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, measures, channel, network, training);
criterion_main!(benches);
