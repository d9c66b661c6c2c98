//! Scaffolding contracts: pj_in, the visual projector against a
//! hand-composed evaluation of its defining formula, semantic and visual
//! losses, and latent interpretation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vital_core::data::vocab::PAD;
use vital_core::model::{VitalConfig, VitalModel};
use vital_core::numerics::gradcheck::grad_check_graph;
use vital_core::numerics::graph::Graph;
use vital_core::numerics::store::{Binder, Fwd, ParamStore};
use vital_core::scaffold::{
    interpret_latent, per_step_alpha, per_step_targets, VisualTargetMode,
};
use vital_core::{Error, Tensor};

fn micro_config() -> VitalConfig {
    let mut c = VitalConfig::default();
    c.backbone.hidden = 8;
    c.backbone.layers = 1;
    c.backbone.heads = 2;
    c.backbone.ffn = 16;
    c.backbone.vocab = 24;
    c.backbone.max_positions = 32;
    c.backbone.image_size = 8;
    c.backbone.grid = 2;
    c.backbone.lora_rank = 2;
    c.backbone.lora_alpha = 4.0;
    c.backbone.lora_dropout = 0.0;
    c.decoder.hidden = 8;
    c.decoder.layers = 1;
    c.decoder.heads = 2;
    c.decoder.ffn = 16;
    c.decoder.max_chain_len = 8;
    c.visual.feature_dim = 4;
    c.visual.dropout = 0.0;
    c
}

fn model_and_store(seed: u64) -> (VitalModel, ParamStore<f64>) {
    let model = VitalModel::new(micro_config()).unwrap();
    let store = model.init_params::<f64>(seed);
    (model, store)
}

#[test]
fn pj_in_zero_weights_give_zero_vector() {
    let (model, mut store) = model_and_store(1);
    let d_dec = model.config.decoder.hidden;
    *store.get_mut("scaffold.pj_in.w") =
        Tensor::zeros(vec![d_dec, model.config.backbone.hidden]);
    *store.get_mut("scaffold.pj_in.b") = Tensor::zeros(vec![d_dec]);
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(Tensor::vector(vec![1.0f64; model.config.backbone.hidden]));
    let out = g.value(model.scaffold.pj_in_project(&fwd, z));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn pj_in_identity_block_truncates_z() {
    let (model, mut store) = model_and_store(2);
    let d = model.config.backbone.hidden;
    let d_dec = model.config.decoder.hidden;
    *store.get_mut("scaffold.pj_in.w") =
        Tensor::from_fn(d_dec, d, |r, c| if r == c { 1.0 } else { 0.0 });
    *store.get_mut("scaffold.pj_in.b") = Tensor::zeros(vec![d_dec]);
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let zdata: Vec<f64> = (0..d).map(|i| i as f64 * 0.5 - 1.0).collect();
    let z = g.constant(Tensor::vector(zdata.clone()));
    let out = g.value(model.scaffold.pj_in_project(&fwd, z));
    assert_eq!(out.row(0), &zdata[..d_dec]);
}

#[test]
fn pj_in_gradient_matches_finite_differences() {
    let (model, mut store) = model_and_store(3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    store.insert(
        "z",
        Tensor::randn(vec![model.config.backbone.hidden], 1.0, &mut rng),
        true,
    );
    let scaffold = model.scaffold.clone();
    let report = grad_check_graph(
        &move |b: &Binder<f64>| {
            let g = b.graph();
            let fwd = Fwd::eval(b);
            let out = scaffold.pj_in_project(&fwd, b.var("z"));
            Ok(g.sum_elems(out))
        },
        &store,
        &["z".to_string(), "scaffold.pj_in.w".to_string()],
        1e-6,
        1e-3,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn visual_project_zero_input_gives_zero_vector() {
    let (model, store) = model_and_store(4);
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(Tensor::vector(vec![0.0f64; model.config.backbone.hidden]));
    let out = g.value(model.scaffold.visual_project(&fwd, z));
    for &v in out.data() {
        assert!(v.abs() < 1e-9, "expected zero vector, got {v}");
    }
}

#[test]
fn visual_project_eval_mode_is_bitwise_deterministic() {
    let (model, store) = model_and_store(5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let zt = Tensor::randn(vec![model.config.backbone.hidden], 1.0, &mut rng);
    let run = || {
        let g = Graph::inference();
        let b = Binder::new(&g, &store);
        let fwd = Fwd::eval(&b);
        let z = g.constant(zt.clone());
        g.value(model.scaffold.visual_project(&fwd, z))
    };
    assert_eq!(run(), run());
}

#[test]
fn visual_project_matches_hand_composition_of_its_formula() {
    // d=8, d_v=4: LN_out(W2(GELU(W1 LN_in(z)) + LN_in(z))), composed here
    // step by step with independent two-pass layer norms.
    let (model, store) = model_and_store(6);
    let d = model.config.backbone.hidden;
    let d_v = model.config.visual.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let zt = Tensor::<f64>::randn(vec![d], 1.0, &mut rng);

    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(zt.clone());
    let got = g.value(model.scaffold.visual_project(&fwd, z));

    let ln = |x: &[f64], gain: &[f64], bias: &[f64]| -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        x.iter()
            .zip(gain.iter().zip(bias))
            .map(|(&v, (&gn, &bs))| gn * (v - mean) / (var + 1e-5).sqrt() + bs)
            .collect()
    };
    let matvec = |w: &Tensor<f64>, x: &[f64]| -> Vec<f64> {
        (0..w.rows())
            .map(|r| w.row(r).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    };
    let gelu = |x: f64| {
        0.5 * x
            * (1.0
                + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    };

    let ln_in = ln(
        zt.data(),
        store.get("scaffold.vp.ln_in.g").data(),
        store.get("scaffold.vp.ln_in.b").data(),
    );
    let mid: Vec<f64> = matvec(store.get("scaffold.vp.w1"), &ln_in)
        .into_iter()
        .map(gelu)
        .collect();
    let summed: Vec<f64> = mid.iter().zip(&ln_in).map(|(m, l)| m + l).collect();
    let projected = matvec(store.get("scaffold.vp.w2"), &summed);
    let want = ln(
        &projected,
        store.get("scaffold.vp.ln_out.g").data(),
        store.get("scaffold.vp.ln_out.b").data(),
    );

    assert_eq!(got.len(), d_v);
    for i in 0..d_v {
        assert!(
            (got.data()[i] - want[i]).abs() < 1e-10,
            "dim {i}: {} vs {}",
            got.data()[i],
            want[i]
        );
    }
}

#[test]
fn visual_loss_zero_when_projector_pinned_to_target() {
    // gain 0 / bias f makes LN_out output f for any input
    let (model, mut store) = model_and_store(7);
    let d_v = model.config.visual.feature_dim;
    let f_roi = {
        let v: Vec<f64> = (0..d_v).map(|i| (i as f64 + 1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Tensor::vector(v.into_iter().map(|x| x / n).collect())
    };
    *store.get_mut("scaffold.vp.ln_out.g") = Tensor::zeros(vec![d_v]);
    *store.get_mut("scaffold.vp.ln_out.b") = f_roi.clone();

    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z1 = g.constant(Tensor::randn(vec![8], 1.0, &mut rng));
    let z2 = g.constant(Tensor::randn(vec![8], 1.0, &mut rng));
    let loss = model
        .scaffold
        .visual_loss(&fwd, &[z1, z2], &f_roi, VisualTargetMode::Shared, None)
        .unwrap();
    assert_eq!(g.scalar(loss), 0.0);
}

#[test]
fn visual_loss_shared_matches_hand_average() {
    let (model, store) = model_and_store(8);
    let d_v = model.config.visual.feature_dim;
    let mut f = vec![0.0; d_v];
    f[0] = 0.6;
    f[1] = 0.8;
    let f_roi = Tensor::vector(f);
    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z1t = Tensor::<f64>::randn(vec![8], 1.0, &mut rng);
    let z2t = Tensor::<f64>::randn(vec![8], 1.0, &mut rng);
    let z1 = g.constant(z1t.clone());
    let z2 = g.constant(z2t.clone());
    let loss = model
        .scaffold
        .visual_loss(&fwd, &[z1, z2], &f_roi, VisualTargetMode::Shared, None)
        .unwrap();

    // hand average of the two per-step mean-absolute distances
    let vp = |z: vital_core::numerics::graph::VarId| {
        g.value(model.scaffold.visual_project(&fwd, z))
    };
    let l1 = |p: &Tensor<f64>| -> f64 {
        p.data()
            .iter()
            .zip(f_roi.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<f64>()
            / d_v as f64
    };
    let want = (l1(&vp(z1)) + l1(&vp(z2))) / 2.0;
    assert!((g.scalar(loss) - want).abs() < 1e-12);
}

#[test]
fn visual_loss_rejects_non_unit_target() {
    let (model, store) = model_and_store(9);
    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(Tensor::vector(vec![0.5f64; 8]));
    let bad = Tensor::vector(vec![1.0, 1.0, 0.0, 0.0]);
    let err = model
        .scaffold
        .visual_loss(&fwd, &[z], &bad, VisualTargetMode::Shared, None)
        .unwrap_err();
    assert!(matches!(err, Error::TargetNorm(_)));
}

#[test]
fn per_step_alphas_match_published_schedule() {
    assert_eq!(per_step_alpha(0, 4), 0.0);
    assert_eq!(per_step_alpha(1, 4), 0.33);
    assert_eq!(per_step_alpha(2, 4), 0.67);
    assert_eq!(per_step_alpha(3, 4), 1.0);
    // K=4, k=1 target is exactly the global feature (alpha = 0)
    let f_roi = Tensor::vector(vec![1.0f64, 0.0, 0.0, 0.0]);
    let f_global = Tensor::vector(vec![0.0f64, 1.0, 0.0, 0.0]);
    let targets = per_step_targets(&f_roi, &f_global, 4).unwrap();
    assert_eq!(targets[0], f_global);
    assert_eq!(targets[3], f_roi);
    for t in &targets {
        assert!((t.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn per_step_mode_requires_global_feature() {
    let (model, store) = model_and_store(10);
    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(Tensor::vector(vec![0.5f64; 8]));
    let f_roi = Tensor::vector(vec![1.0f64, 0.0, 0.0, 0.0]);
    let err = model
        .scaffold
        .visual_loss(&fwd, &[z], &f_roi, VisualTargetMode::PerStep, None)
        .unwrap_err();
    assert!(matches!(err, Error::Argument(_)));
}

#[test]
fn semantic_loss_shapes_and_errors() {
    let (model, store) = model_and_store(11);
    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z1 = g.constant(Tensor::randn(vec![8], 1.0, &mut rng));
    let z2 = g.constant(Tensor::randn(vec![8], 1.0, &mut rng));

    // K mismatch -> alignment error
    let err = model
        .scaffold
        .semantic_loss(&fwd, &[z1, z2], &[vec![3, 4]])
        .unwrap_err();
    assert!(matches!(err, Error::Alignment(_)));

    // K = 0 -> empty loss
    let err = model.scaffold.semantic_loss(&fwd, &[], &[]).unwrap_err();
    assert!(matches!(err, Error::EmptyLoss));

    // K = 1 equals the unaveraged single-step loss
    let single = model
        .scaffold
        .semantic_loss(&fwd, &[z1], &[vec![3, 4, 5]])
        .unwrap();
    let pair = model
        .scaffold
        .semantic_loss(&fwd, &[z1, z1], &[vec![3, 4, 5], vec![3, 4, 5]])
        .unwrap();
    assert!((g.scalar(single) - g.scalar(pair)).abs() < 1e-12);
}

#[test]
fn semantic_loss_ignores_padding_beyond_chain_end() {
    let (model, store) = model_and_store(12);
    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = g.constant(Tensor::randn(vec![8], 1.0, &mut rng));
    let bare = model
        .scaffold
        .semantic_loss(&fwd, &[z], &[vec![5, 6, 7]])
        .unwrap();
    let padded = model
        .scaffold
        .semantic_loss(&fwd, &[z], &[vec![5, 6, 7, PAD, PAD, PAD]])
        .unwrap();
    assert_eq!(g.scalar(bare), g.scalar(padded));
}

#[test]
fn semantic_loss_below_uniform_with_rigged_decoder() {
    // Hand-set weights: zero out the decoder blocks so the hidden state is
    // just the layer-normed input, then point the target token's embedding
    // row at the dimension pj_in's bias activates. The argmax continuation
    // is then the chain itself and the loss sits far below ln V.
    let (model, mut store) = model_and_store(13);
    let vocab = model.config.backbone.vocab;
    let d_dec = model.config.decoder.hidden;
    for site in ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.in", "ffn.out"] {
        let name = format!("scaffold.dec.l0.{site}.w");
        let shape = store.get(&name).shape().to_vec();
        *store.get_mut(&name) = Tensor::zeros(shape);
    }
    // zero pj_in so every decoder input position 0 is the bias
    *store.get_mut("scaffold.pj_in.w") =
        Tensor::zeros(vec![d_dec, model.config.backbone.hidden]);
    let mut bias = vec![0.0f64; d_dec];
    bias[0] = 5.0;
    *store.get_mut("scaffold.pj_in.b") = Tensor::vector(bias);
    let mut embed = Tensor::zeros(vec![vocab, d_dec]);
    // token 3 reads strongly along dim 0 and wins every position; the end
    // token trails just behind so its own loss positions stay cheap
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    embed.add_assign(&Tensor::randn(vec![vocab, d_dec], 0.01, &mut rng));
    embed.data_mut()[3 * d_dec] = 6.0;
    embed.data_mut()[vital_core::data::vocab::EOS * d_dec] = 5.7;
    *store.get_mut("scaffold.dec.embed") = embed;

    let g = Graph::new();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let z = g.constant(Tensor::vector(vec![0.3f64; 8]));
    let loss = model
        .scaffold
        .semantic_loss(&fwd, &[z], &[vec![3]])
        .unwrap();
    assert!(
        g.scalar(loss) < (vocab as f64).ln(),
        "loss {} should beat uniform {}",
        g.scalar(loss),
        (vocab as f64).ln()
    );
}

#[test]
fn dual_losses_route_gradient_into_latents_and_scaffold() {
    let (model, mut store) = model_and_store(15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    store.insert("z_probe", Tensor::randn(vec![8], 1.0, &mut rng), true);
    let d_v = model.config.visual.feature_dim;
    let f_roi = {
        let v = Tensor::<f64>::randn(vec![d_v], 1.0, &mut rng);
        let n = v.norm();
        v.scale(1.0 / n)
    };
    let scaffold = model.scaffold.clone();
    let check = [
        "z_probe".to_string(),
        "scaffold.pj_in.w".to_string(),
        "scaffold.dec.embed".to_string(),
        "scaffold.vp.w1".to_string(),
        "scaffold.vp.ln_out.g".to_string(),
    ];
    let report = grad_check_graph(
        &move |b: &Binder<f64>| {
            let g = b.graph();
            let fwd = Fwd::eval(b);
            let z = b.var("z_probe");
            let sem = scaffold.semantic_loss(&fwd, &[z], &[vec![4, 9, 2]])?;
            let vis = scaffold.visual_loss(&fwd, &[z], &f_roi, VisualTargetMode::Shared, None)?;
            Ok(g.weighted_sum(&[(1.0, sem), (0.1, vis)]))
        },
        &store,
        &check,
        1e-6,
        1e-3,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
    // gradient genuinely reaches the latent
    let nonzero = report
        .per_param
        .iter()
        .find(|p| p.name == "z_probe")
        .unwrap();
    assert!(nonzero.max_rel_err.is_finite());
}

#[test]
fn interpret_latent_heatmap_contract() {
    let (model, store) = model_and_store(17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let z = Tensor::<f64>::randn(vec![8], 1.0, &mut rng);

    // compute VP(z) to build a matching patch
    let g = Graph::inference();
    let b = Binder::new(&g, &store);
    let fwd = Fwd::eval(&b);
    let zv = g.constant(z.clone());
    let vp: Vec<f64> = g
        .value(model.scaffold.visual_project(&fwd, zv))
        .data()
        .to_vec();

    let mut patches: Vec<Vec<f64>> = vec![vec![0.5, -0.25, 1.0, 0.0]; 4];
    patches[2] = vp.iter().map(|v| v * 3.0).collect(); // same direction

    let interp = interpret_latent(&model.scaffold, &store, &z, &patches).unwrap();
    assert!((interp.heatmap[2] - 1.0).abs() < 1e-9, "aligned patch cell = 1");
    for &v in &interp.heatmap {
        assert!((-1.0..=1.0 + 1e-12).contains(&v));
    }

    // all-equal patches -> constant heatmap
    let equal = vec![vec![0.3, 0.4, -0.2, 0.8]; 4];
    let interp = interpret_latent(&model.scaffold, &store, &z, &equal).unwrap();
    let first = interp.heatmap[0];
    assert!(interp.heatmap.iter().all(|&v| (v - first).abs() < 1e-12));
}

#[test]
fn interpret_latent_requires_scaffolding() {
    let (model, store) = model_and_store(19);
    let config = model.config.clone();
    let ckpt = vital_core::checkpoint::Checkpoint::from_store(&config, &store);
    let (deployed, _) = ckpt.detach_scaffolding();
    let bare: ParamStore<f64> = deployed.to_store().unwrap();
    let z = Tensor::vector(vec![0.1f64; 8]);
    let err = interpret_latent(&model.scaffold, &bare, &z, &[vec![0.0; 4]]).unwrap_err();
    assert!(matches!(err, Error::Detached(_)));
}
