//! Checkpoint container: canonical byte round-trips, namespace-based
//! detach/re-attach, and deployment bookkeeping.

use vital_core::checkpoint::{Checkpoint, DetachOutcome};
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::numerics::store::ParamStore;

fn micro_model() -> (VitalModel, ParamStore<f32>) {
    let mut c = VitalConfig::default();
    c.backbone.hidden = 16;
    c.backbone.layers = 1;
    c.backbone.heads = 2;
    c.backbone.ffn = 32;
    c.backbone.vocab = 24;
    c.backbone.max_positions = 48;
    c.backbone.image_size = 8;
    c.backbone.grid = 2;
    c.backbone.lora_rank = 2;
    c.backbone.lora_alpha = 4.0;
    c.decoder.hidden = 8;
    c.decoder.layers = 1;
    c.decoder.heads = 2;
    c.decoder.ffn = 16;
    c.visual.feature_dim = 4;
    let model = VitalModel::new(c).unwrap();
    let store = model.init_params::<f32>(7);
    (model, store)
}

#[test]
fn save_load_save_is_byte_identical() {
    let (model, store) = micro_model();
    let ckpt = Checkpoint::from_store(&model.config, &store);
    let bytes = ckpt.to_bytes();
    let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(reloaded.to_bytes(), bytes);

    // through the store and back is also exact
    let store2: ParamStore<f32> = reloaded.to_store().unwrap();
    let again = Checkpoint::from_store(&model.config, &store2);
    assert_eq!(again.to_bytes(), bytes);
}

#[test]
fn file_round_trip() {
    let (model, store) = micro_model();
    let ckpt = Checkpoint::from_store(&model.config, &store);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
}

#[test]
fn dtype_mismatch_is_rejected() {
    let (model, store) = micro_model();
    let ckpt = Checkpoint::from_store(&model.config, &store);
    let err = ckpt.to_store::<f64>().unwrap_err();
    assert!(matches!(err, vital_core::Error::Format(_)));
}

#[test]
fn detach_drops_scaffolding_and_shrinks_bytes() {
    let (model, store) = micro_model();
    let ckpt = Checkpoint::from_store(&model.config, &store);
    assert!(ckpt.has_scaffolding());
    let (deployed, outcome) = ckpt.detach_scaffolding();
    match outcome {
        DetachOutcome::Detached { removed } => assert!(removed > 0),
        other => panic!("expected detach, got {other:?}"),
    }
    assert!(!deployed.has_scaffolding());
    assert!(
        deployed.to_bytes().len() < ckpt.to_bytes().len(),
        "deployed checkpoint must be strictly smaller"
    );

    // deployed trainable parameters are exactly the adapters
    let store: ParamStore<f32> = deployed.to_store().unwrap();
    for name in store.trainable_names() {
        assert!(name.starts_with("adapter."), "unexpected trainable {name}");
    }
    let adapters = store.value_count(|n, _| n.starts_with("adapter."));
    assert_eq!(store.trainable_value_count(), adapters);
}

#[test]
fn detach_is_idempotent_and_warns_by_outcome() {
    let (model, store) = micro_model();
    let ckpt = Checkpoint::from_store(&model.config, &store);
    let (once, _) = ckpt.detach_scaffolding();
    let (twice, outcome) = once.detach_scaffolding();
    assert_eq!(outcome, DetachOutcome::AlreadyDetached);
    assert_eq!(once, twice, "detach of a detached checkpoint is a no-op");
}

#[test]
fn reattach_restores_the_original_bytes() {
    let (model, store) = micro_model();
    let original = Checkpoint::from_store(&model.config, &store);
    let (deployed, _) = original.detach_scaffolding();
    let restored = deployed.reattach_scaffolding(&original).unwrap();
    assert_eq!(restored.to_bytes(), original.to_bytes());

    // re-attaching from a scaffold-free donor is an error
    let err = deployed.reattach_scaffolding(&deployed).unwrap_err();
    assert!(matches!(err, vital_core::Error::Detached(_)));
}
