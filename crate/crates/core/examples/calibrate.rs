//! Calibration harness: trains the supervision variants and the depth
//! ladder on the synthetic task and prints the orderings the diagnostics
//! care about. Knobs come from env vars so runs are easy to sweep.

use std::time::Instant;
use vital_core::data::teacher::{FaultPlan, MockTeacher};
use vital_core::data::template::QuestionType;
use vital_core::data::vocab::SynthVocab;
use vital_core::data::{build_dataset, DataConfig, Dataset};
use vital_core::diag::eval::evaluate;
use vital_core::diag::similarity::interstep_similarity;
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::train::{run_curriculum, CurriculumStrategy, DepthBinding, TrainConfig, TrainSample};

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn build(n: usize, seed: u64, dir: &std::path::Path, closed_only: bool) -> Vec<TrainSample> {
    let mut config = DataConfig {
        n,
        seed,
        ..DataConfig::default()
    };
    if closed_only {
        config.type_weights = vec![
            (QuestionType::YesNo, 1.0 / 3.0),
            (QuestionType::Identify, 1.0 / 3.0),
            (QuestionType::LocationChoice, 1.0 / 3.0),
        ];
    }
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
    let n_train = env_usize("CAL_TRAIN", 360);
    let n_eval = env_usize("CAL_EVAL", 180);
    let lr = env_f64("CAL_LR", 3e-3);
    let e1 = env_usize("CAL_E1", 2);
    let e2 = env_usize("CAL_E2", 2);
    let e3 = env_usize("CAL_E3", 3);
    let batch = env_usize("CAL_BATCH", 8);
    let seed = env_usize("CAL_SEED", 42) as u64;
    let eval_k = env_usize("CAL_EVALK", 4);

    let vocab = SynthVocab::standard();
    let mut config = VitalConfig::default();
    config.backbone.vocab = vocab.len();
    let model = VitalModel::new(config).unwrap();

    let train_dir = tempfile::tempdir().unwrap();
    let eval_dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let train_data = build(n_train, seed, train_dir.path(), false);
    let eval_data = build(n_eval, seed + 1, eval_dir.path(), true);
    println!(
        "data: {} train, {} eval (closed) in {:.1}s",
        train_data.len(),
        eval_data.len(),
        t0.elapsed().as_secs_f64()
    );

    let base = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        seed,
        phase_epochs: vec![e1, e2, e3],
        depth_binding: DepthBinding::Augmented { max: 4 },
        ..TrainConfig::default()
    };

    let variants: Vec<(&str, f64, f64, usize)> = vec![
        ("task-only", 0.0, 0.0, 4),
        ("+semantic", 1.0, 0.0, 4),
        ("+visual", 0.0, 0.1, 4),
        ("dual", 1.0, 0.1, 4),
        ("dual-k0", 1.0, 0.1, 0),
        ("dual-k2", 1.0, 0.1, 2),
    ];

    let mut stores = Vec::new();
    for (name, l1, l2, k_cap) in &variants {
        let cfg = TrainConfig {
            lambda_text: *l1,
            lambda_visual: *l2,
            k_cap: *k_cap,
            ..base.clone()
        };
        let mut store = model.init_params::<f32>(seed);
        let t = Instant::now();
        let outcome =
            run_curriculum(CurriculumStrategy::ThreePhase, &model, &mut store, &train_data, &cfg)
                .unwrap();
        let train_secs = t.elapsed().as_secs_f64();
        if std::env::var("CAL_VERBOSE").is_ok() {
            for log in &outcome.logs {
                println!(
                    "  phase {} epoch means: {:?}",
                    log.phase,
                    log.epoch_means
                        .iter()
                        .map(|v| format!("{v:.3}"))
                        .collect::<Vec<_>>()
                );
            }
        }
        let t = Instant::now();
        let k_eval = if *k_cap == 0 { 0 } else if *k_cap < eval_k { *k_cap } else { eval_k };
        let summary = evaluate(&model, &store, &eval_data, &vocab, k_eval, 16).unwrap();
        println!(
            "{name:10} closed {:5.1}%  overall {:5.1}%  f1 {:.3}  (train {:.0}s, eval {:.0}s, evalK {k_eval})",
            100.0 * summary.closed_accuracy,
            100.0 * summary.overall_accuracy,
            summary.mean_token_f1,
            train_secs,
            t.elapsed().as_secs_f64()
        );
        stores.push((name.to_string(), store));
    }

    // modality-collapse comparison at K=4
    let task_only = &stores[0].1;
    let dual = &stores[3].1;
    let sim_task = interstep_similarity(&model, task_only, &eval_data[..60.min(eval_data.len())], 4).unwrap();
    let sim_dual = interstep_similarity(&model, dual, &eval_data[..60.min(eval_data.len())], 4).unwrap();
    println!(
        "off-diagonal similarity: task-only {:.4}, dual {:.4}, gap {:.4}",
        sim_task.mean_off_diagonal(),
        sim_dual.mean_off_diagonal(),
        sim_task.mean_off_diagonal() - sim_dual.mean_off_diagonal()
    );
    println!("total wall clock {:.1}s", t0.elapsed().as_secs_f64());
}
