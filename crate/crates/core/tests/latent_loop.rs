//! Latent loop contracts: definitional unrolling, cache growth,
//! train-inference parity, the single-code-path identity, and full
//! inference with detached or attached scaffolding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use vital_core::checkpoint::Checkpoint;
use vital_core::image::{Rect, TargetKind, TargetMeta, ToyImage};
use vital_core::latent::{latent_loop_fn, run_full_inference, run_latent_loop, DeployMode};
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::numerics::graph::Graph;
use vital_core::numerics::store::{Binder, Fwd, ParamStore};
use vital_core::tensor::cosine;
use vital_core::{Error, Tensor};

fn small_model() -> (VitalModel, ParamStore<f32>) {
    let mut c = VitalConfig::default();
    c.backbone.hidden = 32;
    c.backbone.layers = 2;
    c.backbone.heads = 4;
    c.backbone.ffn = 64;
    c.backbone.vocab = 40;
    c.backbone.max_positions = 64;
    c.backbone.image_size = 16;
    c.backbone.grid = 4;
    c.backbone.lora_rank = 4;
    c.backbone.lora_alpha = 8.0;
    c.backbone.lora_dropout = 0.0;
    c.decoder.hidden = 16;
    c.decoder.layers = 1;
    c.decoder.heads = 2;
    c.decoder.ffn = 32;
    c.visual.feature_dim = 8;
    let model = VitalModel::new(c).unwrap();
    let store = model.init_params::<f32>(404);
    (model, store)
}

fn sample_image(size: usize, seed: u64) -> ToyImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let mut img = ToyImage::blank(size);
    for r in 0..size {
        for c in 0..size {
            img.set(r, c, rng.gen_range(0.3..0.7));
        }
    }
    img.target = Some(TargetMeta {
        name: "liver".into(),
        kind: TargetKind::Organ,
        rect: Rect { row: 3, col: 4, height: 6, width: 5 },
        bright: true,
    });
    img
}

#[test]
fn k_zero_leaves_cache_unchanged_with_empty_trace() {
    let (model, store) = small_model();
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let image = sample_image(16, 1);
    let enc = model.backbone.encode_prefix(&fwd, &image, &[3, 4]).unwrap();
    let mut cache = enc.cache.snapshot();
    let out = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 0).unwrap();
    assert_eq!(out.trace.depth(), 0);
    assert_eq!(cache.len(), enc.len);
}

#[test]
fn k_two_equals_manual_unrolling() {
    let (model, store) = small_model();
    let image = sample_image(16, 2);

    let looped = {
        let g = Graph::inference();
        let b = Binder::new(&g, &store);
        let fwd = Fwd::eval(&b);
        let enc = model.backbone.encode_prefix(&fwd, &image, &[5]).unwrap();
        let mut cache = enc.cache.snapshot();
        let out = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 2).unwrap();
        out.trace.states
    };
    let manual = {
        let g = Graph::inference();
        let b = Binder::new(&g, &store);
        let fwd = Fwd::eval(&b);
        let enc = model.backbone.encode_prefix(&fwd, &image, &[5]).unwrap();
        let mut cache = enc.cache.snapshot();
        let z1 = model.backbone.forward_step(&fwd, &mut cache, enc.z0).unwrap();
        let z2 = model.backbone.forward_step(&fwd, &mut cache, z1).unwrap();
        vec![g.value(z1), g.value(z2)]
    };
    assert_eq!(looped, manual, "the loop is two chained forward steps");
}

#[test]
fn cache_grows_by_exactly_k() {
    let (model, store) = small_model();
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let image = sample_image(16, 3);
    let enc = model.backbone.encode_prefix(&fwd, &image, &[7, 2, 9]).unwrap();
    for k in [1usize, 3, 4] {
        let mut cache = enc.cache.snapshot();
        let out = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, k).unwrap();
        assert_eq!(cache.len(), enc.len + k);
        assert_eq!(out.trace.depth(), k);
    }
}

#[test]
fn loop_requires_cache_holding_exactly_the_prefix() {
    let (model, store) = small_model();
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let image = sample_image(16, 4);
    let enc = model.backbone.encode_prefix(&fwd, &image, &[1]).unwrap();
    let mut cache = enc.cache.snapshot();
    let _ = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 1).unwrap();
    // cache is now prefix + 1: a second call must refuse it
    let err = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 1).unwrap_err();
    assert!(matches!(err, Error::Argument(_)));
}

#[test]
fn training_path_trace_is_bitwise_identical_to_inference_path() {
    let (model, store) = small_model();
    let image = sample_image(16, 5);
    let question = [4usize, 8, 2];

    // training path: recording graph, train mode (dropout rates are zero)
    let train_trace = {
        let g = Graph::new();
        let b = Binder::new(&g, &store);
        let rng = RefCell::new(ChaCha8Rng::seed_from_u64(0));
        let fwd = Fwd::train(&b, &rng);
        let enc = model.backbone.encode_prefix(&fwd, &image, &question).unwrap();
        let mut cache = enc.cache.snapshot();
        run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 3)
            .unwrap()
            .trace
    };
    // inference path: non-recording graph, eval mode
    let infer_trace = {
        let g = Graph::inference();
        let b = Binder::new(&g, &store);
        let fwd = Fwd::eval(&b);
        let enc = model.backbone.encode_prefix(&fwd, &image, &question).unwrap();
        let mut cache = enc.cache.snapshot();
        run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 3)
            .unwrap()
            .trace
    };
    assert!(train_trace.train_mode);
    assert!(!infer_trace.train_mode);
    assert_eq!(train_trace.states, infer_trace.states, "bitwise parity");
}

#[test]
fn trainer_and_inference_use_the_same_loop_entity() {
    // both sides hand out the function pointer they call
    let a = latent_loop_fn::<f32>();
    let b = run_latent_loop::<f32> as vital_core::latent::LatentLoopFn<f32>;
    assert!(std::ptr::fn_addr_eq(a, b), "single latent-loop code path");
}

#[test]
fn random_init_latents_are_pairwise_distinct() {
    let (model, store) = small_model();
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let image = sample_image(16, 6);
    let enc = model.backbone.encode_prefix(&fwd, &image, &[6, 3]).unwrap();
    let mut cache = enc.cache.snapshot();
    let out = run_latent_loop(&model.backbone, &fwd, &enc, &mut cache, 2).unwrap();
    let c = cosine(out.trace.states[0].data(), out.trace.states[1].data());
    assert!(
        c < 1.0 - 1e-6,
        "z1 and z2 nearly identical under random init (cos {c})"
    );
}

#[test]
fn full_inference_is_deterministic_and_scaffold_blind() {
    let (model, store) = small_model();
    let image = sample_image(16, 7);
    let question = [9usize, 1];

    let (ans1, trace1) = run_full_inference(
        &model, &store, &image, &question, 4, 8, DeployMode::Tolerant,
    )
    .unwrap();
    let (ans2, trace2) = run_full_inference(
        &model, &store, &image, &question, 4, 8, DeployMode::Tolerant,
    )
    .unwrap();
    assert_eq!(ans1, ans2);
    assert_eq!(trace1.states, trace2.states);

    // identical answers with the scaffolding stripped out
    let ckpt = Checkpoint::from_store(&model.config, &store);
    let (deployed, _) = ckpt.detach_scaffolding();
    let bare: ParamStore<f32> = deployed.to_store().unwrap();
    let (ans3, _) = run_full_inference(
        &model, &bare, &image, &question, 4, 8, DeployMode::Deployed,
    )
    .unwrap();
    assert_eq!(ans1, ans3, "scaffolding is unused on the inference path");
}

#[test]
fn deployed_mode_rejects_contaminated_store() {
    let (model, store) = small_model();
    let image = sample_image(16, 8);
    let err = run_full_inference(&model, &store, &image, &[2], 2, 4, DeployMode::Deployed)
        .unwrap_err();
    assert!(matches!(err, Error::Contamination(_)));
}
