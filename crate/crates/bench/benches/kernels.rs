use criterion::{criterion_group, criterion_main, Criterion};

use hdt_core::model::dt::{dt_forward, DtLayers};
use hdt_core::model::params::Builder;
use hdt_core::ops::{conv2d, deform_conv2d, Conv2dOptions};
use hdt_core::{HdtConfig, Model, Tape, Tensor};

fn ramp(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).unwrap()
}

fn kernels(c: &mut Criterion) {
    let tape = Tape::<f32>::no_grad();
    let x = tape.constant(ramp(&[2, 64, 64, 32]));
    let w = tape.constant(ramp(&[3, 3, 32, 32]));
    let off = tape.constant(ramp(&[2, 64, 64, 18]));
    c.bench_function("conv2d 3x3 64x64x32", |b| {
        b.iter(|| conv2d(&x, &w, None, Conv2dOptions::default()).unwrap())
    });
    c.bench_function("deform_conv2d 3x3 64x64x32", |b| {
        b.iter(|| deform_conv2d(&x, &w, None, &off).unwrap())
    });
}

fn blocks(c: &mut Criterion) {
    let cfg = HdtConfig::tiny();
    let mut builder = Builder::default();
    let dt = DtLayers::build(&mut builder, "dt", &cfg, cfg.window / 2);
    let store = builder.finish::<f32>(0);
    let x = ramp(&[1, 32, 32, cfg.embed]);
    c.bench_function("dt block forward tiny 32x32", |b| {
        b.iter(|| {
            let tape = Tape::no_grad();
            let p = store.bind(&tape);
            dt_forward(&p, &dt, &tape.constant(x.clone())).unwrap().value().sum()
        })
    });

    let model = Model::<f32>::new(cfg, 0).unwrap();
    let inputs: Vec<Tensor<f32>> = (0..3).map(|_| ramp(&[1, 32, 32, 6]).map(|v| v + 0.5)).collect();
    c.bench_function("tiny model forward 32x32", |b| {
        b.iter(|| model.predict([&inputs[0], &inputs[1], &inputs[2]]).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels, blocks
}
criterion_main!(benches);
