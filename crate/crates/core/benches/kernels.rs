//! Rayon kernels against the sequential path.
//!
//! `cargo bench -p unetseg` times the default rayon pool and a one-thread
//! pool; `cargo bench -p unetseg --no-default-features` times the
//! sequential fallback under the same benchmark ids.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use unetseg::loss::LossConfig;
use unetseg::nn::{self, Mode};
use unetseg::optim::{adam_step, AdamConfig, AdamState};
use unetseg::unet::{UNetConfig, UNetModel};
use unetseg::{Tape, Tensor};

fn conv_step() {
    let x = Tensor::<f32>::from_fn([4, 16, 64, 64], |i| ((i % 97) as f32 - 48.0) / 97.0);
    let w = Tensor::<f32>::from_fn([16, 16, 3, 3], |i| ((i % 13) as f32 - 6.0) / 40.0);
    let tape = Tape::new();
    let (xv, wv) = (tape.param(x), tape.param(w));
    let y = nn::conv2d(xv, wv, None, 1, 1).unwrap().sum().unwrap();
    black_box(tape.backward(y).unwrap());
}

struct StepFixture {
    model: UNetModel<f32>,
    adam: AdamState<f32>,
    x: Tensor<f32>,
    y: Tensor<f32>,
}

impl StepFixture {
    fn new() -> Self {
        let cfg = UNetConfig { base_channels: 8, depth: 3, ..Default::default() };
        Self {
            model: UNetModel::build(cfg, 0).unwrap(),
            adam: AdamState::new(AdamConfig::default()),
            x: Tensor::from_fn([4, 1, 64, 64], |i| ((i * 31) % 101) as f32 / 101.0),
            y: Tensor::from_fn([4, 1, 64, 64], |i| ((i / 64 + i % 64) % 3 == 0) as u8 as f32),
        }
    }

    fn step(&mut self) {
        let tape = Tape::new();
        let pass = self.model.forward(&tape, tape.constant(self.x.clone()), Mode::Train).unwrap();
        let loss = LossConfig::default().apply(pass.output, &self.y).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let named = pass.named_grads(&mut grads);
        adam_step(self.model.params_mut(), &named, &mut self.adam, 1e-3).unwrap();
    }
}

#[cfg(feature = "parallel")]
type Pool = Option<rayon::ThreadPool>;
#[cfg(not(feature = "parallel"))]
type Pool = ();

/// Every execution mode this build supports, labelled.
fn modes() -> Vec<(String, Pool)> {
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        vec![(format!("rayon-pool-{}", rayon::current_num_threads()), None), ("rayon-single".to_string(), Some(one))]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential".to_string(), ())]
    }
}

fn run_in(pool: &Pool, f: impl FnOnce() + Send) {
    #[cfg(feature = "parallel")]
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
    #[cfg(not(feature = "parallel"))]
    {
        let () = pool;
        f()
    }
}

fn kernels(c: &mut Criterion) {
    let mut conv = c.benchmark_group("conv2d_3x3_fwd_bwd_4x16x64x64");
    for (label, pool) in modes() {
        conv.bench_function(BenchmarkId::from_parameter(&label), |b| b.iter(|| run_in(&pool, conv_step)));
    }
    conv.finish();

    let mut unet = c.benchmark_group("unet_train_step_base8_depth3_4x64x64");
    unet.sample_size(10);
    for (label, pool) in modes() {
        let mut fx = StepFixture::new();
        unet.bench_function(BenchmarkId::from_parameter(&label), |b| b.iter(|| run_in(&pool, || fx.step())));
    }
    unet.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
