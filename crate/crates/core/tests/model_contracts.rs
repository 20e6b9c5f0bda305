//! End-to-end contracts of the full model: gradient correctness against
//! central differences, attention algebra, pooling/aggregation behavior,
//! and checkpoint fidelity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdt_core::check::finite_diff_check_coords;
use mdt_core::interpret::{attention_rollout, modality_shares, AttentionTrace};
use mdt_core::model::{ForwardCtx, MdtConfig, MdtModel, Pooling};
use mdt_core::record::{Case, ChiefComplaint, ImagePlane, Modality, Task};
use mdt_core::tape::Tape;
use mdt_core::tensor::Tensor;
use mdt_core::train::{batch_loss, TrainableModel};

/// Tiny configuration: 4x4 image with patch 2 (4 image tokens), 4 cc words,
/// 4 lab items, D=16, two heads, 2 bidirectional + 2 self blocks.
fn tiny_config(task: Task) -> MdtConfig {
    MdtConfig {
        image_size: 4,
        patch: 2,
        n_cc: 4,
        n_lab: 4,
        vocab_size: 16,
        ..MdtConfig::desk(task)
    }
}

fn tiny_case(cfg: &MdtConfig, seed: u64, n_slices: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let npx = cfg.image_size * cfg.image_size * cfg.channels;
    let mut images = Vec::new();
    for _ in 0..n_slices {
        let pixels: Vec<f32> = (0..npx).map(|_| rng.gen_range(0.0..1.0)).collect();
        images.push(ImagePlane::new(cfg.image_size, cfg.image_size, cfg.channels, pixels).unwrap());
    }
    let cc = match cfg.task {
        Task::One => ChiefComplaint::WordIds(
            (0..cfg.n_cc).map(|_| rng.gen_range(2..cfg.vocab_size as u32)).collect(),
        ),
        Task::Two => {
            ChiefComplaint::Structured((0..cfg.n_cc).map(|_| rng.gen_range(0.0..1.0)).collect())
        }
    };
    let mut labels = vec![0.0f32; cfg.class_count];
    labels[rng.gen_range(0..cfg.class_count)] = 1.0;
    Case {
        id: format!("case-{seed}"),
        images,
        cc,
        lab: (0..cfg.n_lab).map(|_| rng.gen_range(0.0..1.0)).collect(),
        sex: 1.0,
        age: 52.0,
        labels,
    }
}

fn eval_logits(model: &MdtModel, case: &Case) -> Vec<f32> {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, None);
    model.forward(&tape, case, &mut ctx).unwrap().data().to_vec()
}

#[test]
fn full_model_gradient_matches_central_differences() {
    let cfg = tiny_config(Task::One);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = MdtModel::build(cfg.clone(), &mut rng).unwrap();
    let case = tiny_case(&cfg, 3, 1);

    // Move away from the tiny-sigma init point: the loss is stored in f32,
    // so central differences can only resolve gradients well above the
    // quantization floor of ~eps(loss)/2h.
    let mut inflate = ChaCha8Rng::seed_from_u64(21);
    for (name, handle) in model.params.iter() {
        if name.ends_with(".g") {
            continue;
        }
        let n = handle.borrow().len();
        let v: Vec<f32> = (0..n).map(|_| inflate.gen_range(-0.3..0.3)).collect();
        model.params.set_value(name, v).unwrap();
    }

    let loss_fn = |m: &MdtModel| -> f32 {
        let tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx::new(false, 0.0, &mut r, None);
        batch_loss(m, &tape, &[&case], &mut ctx).unwrap().item().unwrap()
    };

    // analytic gradients from one backward pass
    let tape = Tape::new();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::new(false, 0.0, &mut r, None);
    let loss = batch_loss(&model, &tape, &[&case], &mut ctx).unwrap();
    let grads = tape.backward(&loss).unwrap();

    // probe >= 20 parameters spread across the whole stack
    let names: Vec<String> = model
        .params
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| !n.ends_with(".g")) // skip layer-norm gains near the flat point
        .collect();
    let mut checked = 0usize;
    let mut step = names.len() / 20;
    if step == 0 {
        step = 1;
    }
    for name in names.iter().step_by(step) {
        let handle = model.params.get(name).unwrap();
        let current = handle.borrow().clone();
        let analytic = match grads.get(&current) {
            Some(g) => g.clone(),
            None => continue, // e.g. unused vocabulary rows
        };
        // probe where the signal is strongest; tiny-gradient coordinates
        // drown in f32 quantization noise, not in backward errors
        let (coord, strongest) = analytic
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, g)| (i, g.abs()))
            .unwrap();
        if strongest < 1e-4 {
            // e.g. key-projection biases: softmax shift invariance makes the
            // true gradient exactly zero, leaving only unresolvable noise
            continue;
        }
        let f = |t: &Tensor| {
            model.params.set_value(name, t.data().to_vec()).unwrap();
            let v = loss_fn(&model);
            Ok(v)
        };
        let err = finite_diff_check_coords(f, &current, &analytic, &[coord], 1e-2).unwrap();
        model.params.set_value(name, current.data().to_vec()).unwrap();
        assert!(err < 1e-2, "{name}[{coord}]: rel err {err}");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} parameters probed");
}

#[test]
fn lambda_zero_decouples_the_streams() {
    let cfg = MdtConfig {
        lambda: 0.0,
        ..tiny_config(Task::One)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = MdtModel::build(cfg.clone(), &mut rng).unwrap();
    let d = cfg.dim;
    let mut data_rng = ChaCha8Rng::seed_from_u64(7);
    let mut rand_mat = |rows: usize| -> Tensor {
        let v: Vec<f32> = (0..rows * d).map(|_| data_rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(&[rows, d], v).unwrap()
    };
    let x_img = rand_mat(4);
    let x_txt_a = rand_mat(6);
    let x_txt_b = rand_mat(6);

    let run = |xi: &Tensor, xt: &Tensor| {
        let tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx::new(false, 0.0, &mut r, None);
        let (oi, ot) = model.bidir_forward(&tape, 0, xi, xt, &mut ctx).unwrap();
        (oi.data().to_vec(), ot.data().to_vec())
    };
    let (img_a, txt_a) = run(&x_img, &x_txt_a);
    let (img_b, _) = run(&x_img, &x_txt_b);
    // at lambda = 0 the image stream cannot see the text stream
    for (a, b) in img_a.iter().zip(&img_b) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    // and the text stream keeps its own content: changing the image input
    // leaves it untouched
    let x_img_b = rand_mat(4);
    let (_, txt_c) = run(&x_img_b, &x_txt_a);
    for (a, b) in txt_a.iter().zip(&txt_c) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn lambda_sign_convention_is_not_degenerate() {
    // identical parameters (same init stream), different lambda: outputs differ
    let base = tiny_config(Task::One);
    let cfg0 = MdtConfig { lambda: 0.0, ..base.clone() };
    let cfg1 = MdtConfig { lambda: 1.0, ..base.clone() };
    let m0 = MdtModel::build(cfg0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let m1 = MdtModel::build(cfg1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let case = tiny_case(&base, 8, 1);
    let l0 = eval_logits(&m0, &case);
    let l1 = eval_logits(&m1, &case);
    assert!(l0.iter().zip(&l1).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn uni_directional_mode_changes_only_the_image_stream_mixing() {
    let base = tiny_config(Task::One);
    let uni = MdtConfig {
        uni_directional: true,
        ..base.clone()
    };
    let m_bi = MdtModel::build(base.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let m_uni = MdtModel::build(uni, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let case = tiny_case(&base, 8, 1);
    let a = eval_logits(&m_bi, &case);
    let b = eval_logits(&m_uni, &case);
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn captured_attention_is_row_stochastic_everywhere() {
    let cfg = MdtConfig {
        pooling: Pooling::Cls,
        ..tiny_config(Task::One)
    };
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let case = tiny_case(&cfg, 4, 1);
    let sink = mdt_core::model::AttnSink::new();
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, Some(&sink));
    model.forward(&tape, &case, &mut ctx).unwrap();
    let records = sink.take();
    // 2 bidir blocks x 3 matrices (intra x2, cross x2 = 4 actually) + 2 self
    assert!(!records.is_empty());
    for rec in &records {
        for r in 0..rec.rows {
            let s: f64 = rec.weights[r * rec.cols..(r + 1) * rec.cols]
                .iter()
                .map(|&v| v as f64)
                .sum();
            assert!(
                (s - 1.0).abs() < 1e-5,
                "block {} {:?} row {r} sums to {s}",
                rec.block,
                rec.kind
            );
        }
    }
}

#[test]
fn rollout_and_shares_from_a_real_trace() {
    let cfg = MdtConfig {
        pooling: Pooling::Cls,
        ..tiny_config(Task::One)
    };
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let case = tiny_case(&cfg, 4, 1);
    let sink = mdt_core::model::AttnSink::new();
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, Some(&sink));
    model.forward(&tape, &case, &mut ctx).unwrap();
    let tags = model.bag_tags(&case).unwrap();
    let trace = AttentionTrace::from_records(&sink.take(), &tags).unwrap();
    assert_eq!(trace.self_blocks.len(), cfg.n_self);
    assert_eq!(trace.cross_text_to_image.len(), cfg.n_bidirectional);
    let map = attention_rollout(&trace).unwrap();
    let total: f64 = map.relevance.iter().sum();
    assert!((total - 1.0).abs() < 1e-4);
    let shares = modality_shares(&map).unwrap();
    let s = shares.image + shares.cc + shares.lab + shares.demographics;
    assert!((s - 1.0).abs() < 1e-6);
}

#[test]
fn zero_weights_reduce_logits_to_head_bias() {
    let cfg = tiny_config(Task::One);
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (name, handle) in model.params.iter() {
        let n = handle.borrow().len();
        if name.ends_with(".g") {
            continue; // keep layer-norm gains at one; zero works too but is less standard
        }
        model.params.set_value(name, vec![0.0; n]).unwrap();
    }
    model.params.set_value("head.fc2.b", vec![0.3, -0.7]).unwrap();
    let case = tiny_case(&cfg, 5, 1);
    let logits = eval_logits(&model, &case);
    assert!((logits[0] - 0.3).abs() < 1e-6, "{logits:?}");
    assert!((logits[1] + 0.7).abs() < 1e-6, "{logits:?}");
}

#[test]
fn unified_bag_has_the_expected_token_counts() {
    let cfg = tiny_config(Task::One);
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let case = tiny_case(&cfg, 5, 1);
    let tags = model.bag_tags(&case).unwrap();
    let count = |m: Modality| tags.iter().filter(|&&t| t == m).count();
    assert_eq!(count(Modality::Image), 4);
    assert_eq!(count(Modality::Cc), 4);
    assert_eq!(count(Modality::Lab), 4);
    assert_eq!(count(Modality::Sex), 1);
    assert_eq!(count(Modality::Age), 1);
    assert_eq!(count(Modality::Cls), 0); // average pooling: no CLS token
    assert_eq!(tags.len(), cfg.n_image_tokens() + cfg.n_text_tokens());
}

#[test]
fn sixteen_identical_slices_match_the_single_slice_pipeline() {
    let cfg = MdtConfig {
        class_count: 3,
        ..tiny_config(Task::Two)
    };
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut case = tiny_case(&cfg, 12, 1);
    case.labels = vec![1.0, 0.0, 0.0];
    let single = eval_logits(&model, &case);
    let mut stacked = case.clone();
    stacked.images = vec![case.images[0].clone(); 16];
    let multi = eval_logits(&model, &stacked);
    for (a, b) in single.iter().zip(&multi) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn slice_order_does_not_change_the_loss() {
    let cfg = MdtConfig {
        class_count: 3,
        ..tiny_config(Task::Two)
    };
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut case = tiny_case(&cfg, 13, 4);
    case.labels = vec![0.0, 1.0, 0.0];
    let mut swapped = case.clone();
    swapped.images.swap(1, 3);
    // fixed reduction order means permuting identical-shaped slices only
    // permutes the summands of a mean computed in f64: identical result
    let a = eval_logits(&model, &case);
    let b = eval_logits(&model, &swapped);
    let la = {
        let t = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut c = ForwardCtx::new(false, 0.0, &mut r, None);
        batch_loss(&model, &t, &[&case], &mut c).unwrap().item().unwrap()
    };
    let lb = {
        let t = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut c = ForwardCtx::new(false, 0.0, &mut r, None);
        batch_loss(&model, &t, &[&swapped], &mut c).unwrap().item().unwrap()
    };
    assert_eq!(la, lb);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x, y);
    }
}

#[test]
fn checkpoint_restores_exact_behavior() {
    let cfg = tiny_config(Task::One);
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let case = tiny_case(&cfg, 2, 1);
    let before = eval_logits(&model, &case);
    let bytes = model.checkpoint().unwrap();
    // scramble every parameter, then restore
    for (name, handle) in model.params.iter() {
        let n = handle.borrow().len();
        model.params.set_value(name, vec![0.25; n]).unwrap();
    }
    assert_ne!(before, eval_logits(&model, &case));
    model.load_checkpoint(&bytes).unwrap();
    assert_eq!(before, eval_logits(&model, &case));
}

#[test]
fn dropout_makes_finite_difference_checking_refuse() {
    let cfg = tiny_config(Task::One);
    let model = MdtModel::build(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let case = tiny_case(&cfg, 1, 1);
    let mut shared_rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::new(&[1], vec![0.0]).unwrap();
    let f = |_: &Tensor| {
        let tape = Tape::new();
        // train mode: the dropout stream advances between evaluations
        let mut ctx = ForwardCtx::new(true, cfg.dropout, &mut shared_rng, None);
        Ok(batch_loss(&model, &tape, &[&case], &mut ctx).unwrap().item().unwrap())
    };
    let err = finite_diff_check_coords(f, &x, &[0.0], &[0], 1e-3);
    assert!(err.is_err(), "non-deterministic objective must be rejected");
}
