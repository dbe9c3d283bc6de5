use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rulforge::checkpoint::{from_bytes, to_bytes};
use rulforge::dataset::{generate_synthetic, SynthConfig};
use rulforge::model::{compute_receptive_field, Model, Preset, TcnConfig};
use rulforge::preprocess::{fit_normalizer, trim_random_end, LabeledSequence, PaddedBatch, Supervision, R_MAX};
use rulforge::tensorcore::{masked_mse_loss, Mask, Mode, PaddingMode, Tensor};
use rulforge::train::{split_train_val, train, Optimizer, OptimizerKind, TrainConfig};

fn random_seq(unit: u32, len: usize, f: usize, rng: &mut ChaCha8Rng) -> LabeledSequence {
    LabeledSequence {
        unit_id: unit,
        n_features: f,
        features: (0..len * f).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        labels: (0..len).map(|_| rng.gen_range(0.0..125.0)).collect(),
        original_length: len,
        supervision: Supervision::Dense,
    }
}

fn small_cfg(blocks: usize, in_features: usize) -> TcnConfig {
    TcnConfig {
        num_blocks: blocks,
        channels: 8,
        head_widths: vec![4, 1],
        ..TcnConfig::tiny(in_features)
    }
}

/// Output timesteps that move when input step `t0` is perturbed, pooled over
/// several random inputs so a unit that happens to sit below its ReLU
/// threshold does not hide a path.
fn influenced(model: &Model, len: usize, t0: usize) -> Vec<usize> {
    let f = model.config().in_features;
    let mask = Mask::all_valid(1, len);
    let mut hit = vec![false; len];
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![1, f, len], (0..f * len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let base = model.predict_tensor(&x, &mask).unwrap();
        let mut bumped = x.clone();
        for c in 0..f {
            bumped.data_mut()[c * len + t0] += 0.5;
        }
        let moved = model.predict_tensor(&bumped, &mask).unwrap();
        for t in 0..len {
            hit[t] |= base.data()[t] != moved.data()[t];
        }
    }
    (0..len).filter(|&t| hit[t]).collect()
}

#[test]
fn perturbation_probe_matches_receptive_field() {
    for (blocks, expected) in [(1usize, 63usize), (2, 125)] {
        let model = Model::with_seed(small_cfg(blocks, 3), 4).unwrap();
        assert_eq!(compute_receptive_field(model.config()), expected);
        let (len, t0) = (expected + 80, 20);
        let hit = influenced(&model, len, t0);
        // causal: nothing before the perturbed step moves, nothing past the field either
        assert_eq!(hit.first(), Some(&t0));
        assert_eq!(*hit.last().unwrap(), t0 + expected - 1);
        assert!(hit.len() * 10 >= expected * 9, "only {} of {expected} steps moved", hit.len());
    }
}

#[test]
fn symmetric_padding_sees_the_future() {
    let mut cfg = small_cfg(1, 3);
    cfg.padding_mode = PaddingMode::Symmetric;
    let model = Model::with_seed(cfg, 4).unwrap();
    let hit = influenced(&model, 150, 75);
    assert_eq!(hit.first(), Some(&(75 - 31)));
    assert_eq!(hit.last(), Some(&(75 + 31)));
}

fn grads(model: &mut Model) -> Vec<(String, Vec<f64>)> {
    model
        .named_params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect()
}

#[test]
fn doubling_padding_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cfg = TcnConfig::tiny(5);
    cfg.dropout = 0.3;
    let model = Model::with_seed(cfg, 8).unwrap();
    let seqs: Vec<LabeledSequence> = [17usize, 40, 9].iter().enumerate().map(|(i, &l)| random_seq(i as u32, l, 5, &mut rng)).collect();
    let refs: Vec<&LabeledSequence> = seqs.iter().collect();
    let run = |pad: usize| {
        let batch = PaddedBatch::from_sequences(&refs, Some(pad)).unwrap();
        let mut m = model.clone();
        let (pred, tape) = m.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (loss, g) = masked_mse_loss(&pred, &batch.labels, &batch.loss_mask).unwrap();
        m.zero_grad();
        let dx = m.backward(&tape, &g).unwrap();
        let l = batch.max_len();
        // rows of a [B, C, L] or [B, L] tensor, cut back to each sequence's length
        let valid = |t: &Tensor, per_seq: usize| -> Vec<f64> {
            let mut v = Vec::new();
            for r in 0..seqs.len() * per_seq {
                let len = seqs[r / per_seq].len();
                v.extend_from_slice(&t.data()[r * l..r * l + len]);
            }
            v
        };
        let pred_valid = valid(&pred, 1);
        let dx_valid = valid(&dx, 5);
        (pred_valid, loss, grads(&mut m), dx_valid, m.state())
    };
    let (p1, l1, g1, dx1, s1) = run(40);
    let (p2, l2, g2, dx2, s2) = run(80);
    assert_eq!(p1, p2);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);
    assert_eq!(dx1, dx2);
    // batch-norm running statistics see the same valid positions
    assert_eq!(s1, s2);
}

#[test]
fn one_small_adam_step_lowers_the_batch_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = Model::with_seed(TcnConfig::tiny(4), 3).unwrap();
    let seqs: Vec<LabeledSequence> = (0..4).map(|i| random_seq(i, 30 + i as usize, 4, &mut rng)).collect();
    let refs: Vec<&LabeledSequence> = seqs.iter().collect();
    let batch = PaddedBatch::from_sequences(&refs, None).unwrap();
    let loss_now = |m: &Model| {
        let (pred, _) = m.clone().forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        masked_mse_loss(&pred, &batch.labels, &batch.loss_mask).unwrap().0
    };
    let before = loss_now(&model);
    let (pred, tape) = model.forward(&batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, g) = masked_mse_loss(&pred, &batch.labels, &batch.loss_mask).unwrap();
    model.zero_grad();
    model.backward(&tape, &g).unwrap();
    Optimizer::new(OptimizerKind::Adam, 1e-4, None).step(&mut model.named_params_mut());
    assert!(loss_now(&model) < before);
}

fn synthetic_sets(seed: u64) -> (Vec<LabeledSequence>, Vec<LabeledSequence>, usize) {
    let bundle = generate_synthetic(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let stats = fit_normalizer(&bundle.train, true).unwrap();
    let seqs: Vec<LabeledSequence> = bundle
        .train
        .iter()
        .map(|t| LabeledSequence::from_trajectory(&stats, t, R_MAX).unwrap())
        .collect();
    let (tr, va) = split_train_val(&seqs, 0.1, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tr = tr.iter().map(|s| trim_random_end(s, &mut rng)).collect();
    (tr, va, stats.n_retained())
}

#[test]
fn training_reduces_loss_tenfold() {
    let (tr, va, f) = synthetic_sets(0);
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 60,
        ..TrainConfig::default()
    };
    let model = Model::with_seed(Preset::Tiny.config(f), 0).unwrap();
    let (_, report) = train(model, &tr, &va, &cfg, |_| {}).unwrap();
    let first = report.train_loss_curve[0];
    let last = *report.train_loss_curve.last().unwrap();
    assert!(last * 10.0 < first, "train loss {first} -> {last}");
    assert_eq!(report.epochs_run, 60);
    assert!(report.best_val_loss <= report.val_loss_curve[0]);
}

#[test]
fn training_is_deterministic() {
    let (tr, va, f) = synthetic_sets(1);
    let cfg = TrainConfig {
        max_epochs: 6,
        seed: 9,
        retrim_each_epoch: true,
        ..TrainConfig::default()
    };
    let mut cfg_model = Preset::Tiny.config(f);
    cfg_model.dropout = 0.2;
    let go = || train(Model::with_seed(cfg_model.clone(), 9).unwrap(), &tr, &va, &cfg, |_| {}).unwrap();
    let (m1, r1) = go();
    let (m2, r2) = go();
    assert_eq!(to_bytes(&m1).unwrap(), to_bytes(&m2).unwrap());
    assert_eq!(r1, r2);
}

#[test]
fn reloaded_checkpoint_predicts_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (tr, va, f) = synthetic_sets(2);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train(Model::with_seed(Preset::Tiny.config(f), 1).unwrap(), &tr, &va, &cfg, |_| {}).unwrap();
    let back = from_bytes(&to_bytes(&model).unwrap()).unwrap();
    let s = random_seq(1, 50, f, &mut rng);
    let batch = PaddedBatch::from_sequences(&[&s], None).unwrap();
    assert_eq!(model.predict(&batch).unwrap(), back.predict(&batch).unwrap());
}
