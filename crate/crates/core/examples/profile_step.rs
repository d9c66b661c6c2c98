//! Wall-clock profile of one joint-loss step at the desk configuration.

use std::cell::RefCell;
use std::time::Instant;
use vital_core::data::teacher::{FaultPlan, MockTeacher};
use vital_core::data::vocab::SynthVocab;
use vital_core::data::{build_dataset, DataConfig, Dataset};
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::numerics::graph::Graph;
use vital_core::numerics::store::{Binder, Fwd};
use vital_core::train::{compute_joint_loss, LossOverrides, TrainSample};
use vital_core::util;

fn main() {
    let vocab = SynthVocab::standard();
    let mut config = VitalConfig::default();
    config.backbone.vocab = vocab.len();
    let model = VitalModel::new(config).unwrap();
    let store = model.init_params::<f32>(1);
    let dir = tempfile::tempdir().unwrap();
    let mut teacher = MockTeacher::new(FaultPlan::none());
    build_dataset(
        &DataConfig {
            n: 8,
            seed: 5,
            ..DataConfig::default()
        },
        &mut teacher,
        dir.path(),
    )
    .unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let samples: Vec<TrainSample> = ds
        .load_all()
        .unwrap()
        .iter()
        .map(|s| TrainSample::from_loaded(s, &vocab))
        .collect();
    let overrides = LossOverrides {
        loop_depth: Some(4),
        ..LossOverrides::default()
    };
    let rng = RefCell::new(util::rng_from(0, "profile"));

    // forward only
    let t0 = Instant::now();
    let reps = 30;
    for _ in 0..reps {
        for s in &samples {
            let g = Graph::<f32>::inference();
            let b = Binder::new(&g, &store);
            let fwd = Fwd::eval(&b);
            let _ = compute_joint_loss(&model, &fwd, s, &overrides).unwrap();
        }
    }
    let fwd_ms = t0.elapsed().as_secs_f64() * 1000.0 / (reps * samples.len()) as f64;

    // forward + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        for s in &samples {
            let g = Graph::<f32>::new();
            let b = Binder::new(&g, &store);
            let fwd = Fwd::train(&b, &rng);
            let parts = compute_joint_loss(&model, &fwd, s, &overrides).unwrap();
            let grads = g.backward(parts.total_var);
            let _ = b.trainable_grads(&grads).unwrap();
        }
    }
    let full_ms = t0.elapsed().as_secs_f64() * 1000.0 / (reps * samples.len()) as f64;
    println!("forward only: {fwd_ms:.2} ms/sample");
    println!("forward+backward: {full_ms:.2} ms/sample");
    println!(
        "estimated epoch over 400 samples: {:.1}s",
        full_ms * 400.0 / 1000.0
    );
}
