//! Decode inspection: train a dual model briefly, then print predictions
//! against gold answers at several eval depths, on train and eval samples.

use vital_core::data::teacher::{FaultPlan, MockTeacher};
use vital_core::data::vocab::SynthVocab;
use vital_core::data::{build_dataset, DataConfig, Dataset};
use vital_core::latent::{run_full_inference, DeployMode};
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::train::{run_curriculum, CurriculumStrategy, TrainConfig, TrainSample};

fn build(n: usize, seed: u64, dir: &std::path::Path) -> Vec<TrainSample> {
    let config = DataConfig {
        n,
        seed,
        ..DataConfig::default()
    };
    let mut teacher = MockTeacher::new(FaultPlan::none());
    build_dataset(&config, &mut teacher, dir).unwrap();
    let ds = Dataset::load(dir).unwrap();
    let vocab = SynthVocab::standard();
    ds.load_all()
        .unwrap()
        .iter()
        .map(|s| TrainSample::from_loaded(s, &vocab))
        .collect()
}

fn main() {
    let vocab = SynthVocab::standard();
    let mut config = VitalConfig::default();
    config.backbone.vocab = vocab.len();
    let model = VitalModel::new(config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let train_data = build(300, 42, dir.path());
    let cfg = TrainConfig {
        seed: 42,
        phase_epochs: vec![3, 3, 6],
        ..TrainConfig::default()
    };
    let mut store = model.init_params::<f32>(42);
    run_curriculum(CurriculumStrategy::ThreePhase, &model, &mut store, &train_data, &cfg).unwrap();

    for sample in train_data.iter().take(8) {
        println!(
            "[{}] K_train={} gold: {}",
            sample.qtype.as_str(),
            sample.k,
            sample.answer_text
        );
        for k in [sample.k, 0, 2, 4] {
            let (tokens, _) = run_full_inference(
                &model,
                &store,
                &sample.image,
                &sample.question_tokens,
                k,
                16,
                DeployMode::Tolerant,
            )
            .unwrap();
            println!("    K={k}: {}", vocab.detokenize(&tokens));
        }
    }
}
