use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::{mean_loss, train_epoch};
use super::*;
use crate::gradcore::{Graph, Tensor};
use crate::synthdata::{make_dataset, Dataset, RoiScope, SynthConfig};

fn small() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| make_dataset(&SynthConfig::small()).unwrap())
}

fn noiseless() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let mut cfg = SynthConfig::small();
        cfg.noise.sigma = Some(0.0);
        make_dataset(&cfg).unwrap()
    })
}

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn quick(lr: f64) -> TrainConfig {
    TrainConfig { learning_rate: lr, epochs: 1, batch_trs: 10, ..TrainConfig::default() }
}

#[test]
fn loss_examples() {
    let r = random(5, 7, 1);
    assert!((spatial_corr_loss(&r, &r).unwrap().0 + 1.0).abs() < 1e-12);
    assert!((spatial_corr_loss(&r, &r.scale(-2.0)).unwrap().0 - 1.0).abs() < 1e-12);
    // a flat predicted volume contributes zero and is counted
    let mut flat = r.clone();
    flat.data_mut()[..7].iter_mut().for_each(|x| *x = 0.3);
    let (l, degenerate) = spatial_corr_loss(&r, &flat).unwrap();
    assert_eq!(degenerate, 1);
    let (rest, _) = spatial_corr_loss(&r.select_rows(&[1, 2, 3, 4]), &r.select_rows(&[1, 2, 3, 4])).unwrap();
    assert!((l - rest * 4.0 / 5.0).abs() < 1e-12);
    assert!(spatial_corr_loss(&r, &random(5, 6, 2)).is_err());
    assert!(spatial_corr_loss(&random(3, 1, 0), &random(3, 1, 1)).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let r = random(6, 9, 3);
    let r_hat = random(6, 9, 4);
    let mut g = Graph::new();
    let p = g.param(r_hat.clone());
    let t = g.constant(r.clone());
    let loss = g.custom(Box::new(SpatialCorrLoss::default()), &[p, t]).unwrap();
    let grad = g.backward(loss).unwrap().wrt(p).clone();
    let h = 1e-5;
    for i in 0..r_hat.numel() {
        let mut up = r_hat.clone();
        up.data_mut()[i] += h;
        let mut dn = r_hat.clone();
        dn.data_mut()[i] -= h;
        let fd = (spatial_corr_loss(&r, &up).unwrap().0 - spatial_corr_loss(&r, &dn).unwrap().0) / (2.0 * h);
        let an = grad.data()[i];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-6, "entry {i}: analytic {an} vs fd {fd}");
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = random(3, 4, 5);
    let before = p.clone();
    let zero = Tensor::zeros(&[3, 4]);
    let mut adam = AdamState::new(&[&p]);
    for _ in 0..3 {
        adam.update(vec![&mut p], &[&zero], 0.1).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = Tensor::vector(vec![1.0, -1.0]);
    let g = Tensor::vector(vec![3.0, -0.5]);
    let mut adam = AdamState::new(&[&p]);
    adam.update(vec![&mut p], &[&g], 0.01).unwrap();
    assert!((p.data()[0] - 0.99).abs() < 1e-8);
    assert!((p.data()[1] + 0.99).abs() < 1e-8);
}

#[test]
fn cosine_schedule_decays_to_zero() {
    let cfg = TrainConfig { use_lora: false, learning_rate: 0.2, ..TrainConfig::default() };
    assert_eq!(cfg.schedule(), LrSchedule::Cosine);
    assert!((cfg.lr_at(0, 10) - 0.2).abs() < 1e-15);
    assert!((cfg.lr_at(5, 10) - 0.1).abs() < 1e-12);
    assert!(cfg.lr_at(10, 10).abs() < 1e-15);
    assert_eq!(TrainConfig::default().lr_at(7, 10), 1e-4);
}

fn report(epoch: usize, val: f64) -> EpochReport {
    EpochReport { epoch, train_loss: None, val_rho: Some(val), test_rho: None, degenerate_volumes: 0, wall_s: 0.0 }
}

#[test]
fn best_epoch_examples() {
    let up: Vec<_> = (0..4).map(|e| report(e, e as f64 * 0.1)).collect();
    assert_eq!(select_best_epoch(&up).unwrap(), 3);
    let tie = vec![report(0, 0.1), report(1, 0.3), report(2, 0.3)];
    assert_eq!(select_best_epoch(&tie).unwrap(), 1);
    assert_eq!(select_best_epoch(&[report(0, -0.2)]).unwrap(), 0);
    assert!(select_best_epoch(&[]).is_err());
}

proptest! {
    #[test]
    fn best_epoch_never_worse_than_start(vals in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let reports: Vec<_> = vals.iter().enumerate().map(|(e, &v)| report(e, v)).collect();
        let best = select_best_epoch(&reports).unwrap();
        prop_assert!(vals[best] >= vals[0]);
        prop_assert!(vals.iter().all(|&v| v <= vals[best]));
        prop_assert!(vals[..best].iter().all(|&v| v < vals[best]));
    }
}

#[test]
fn teacher_targets_check_alignment() {
    let v = vec![random(10, 3, 1), random(8, 3, 2)];
    let t = build_teacher_targets(&v, &[10, 8]).unwrap();
    assert_eq!(t[1].shape(), &[8, 3]);
    assert!(crate::stats::mean(t[0].select_cols(&[2]).data()).abs() < 1e-12);
    assert!(build_teacher_targets(&v, &[10, 9]).is_err());
    assert!(build_teacher_targets(&v, &[10]).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let ds = small();
    let cfg = quick(0.0);
    let mut s = prepare_session(ds, "S1", &cfg).unwrap();
    let before = s.model.clone();
    let mut step = 0;
    train_epoch(ds, &cfg, &mut s.model, &s.norm, &s.stories, &mut s.adam, 1, &mut step, 10).unwrap();
    assert_eq!(s.model, before);
}

#[test]
fn lora_training_keeps_base_frozen() {
    let ds = small();
    let cfg = quick(1e-2);
    let mut s = prepare_session(ds, "S1", &cfg).unwrap();
    let base = s.model.base.checksum();
    let adapters = s.model.adapters.clone();
    let mut step = 0;
    train_epoch(ds, &cfg, &mut s.model, &s.norm, &s.stories, &mut s.adam, 1, &mut step, 10).unwrap();
    assert_eq!(s.model.base.checksum(), base);
    assert_ne!(s.model.adapters, adapters);
}

#[test]
fn full_training_changes_the_encoder() {
    let ds = small();
    let cfg = TrainConfig { use_lora: false, ..quick(1e-3) };
    let mut s = prepare_session(ds, "S1", &cfg).unwrap();
    assert!(s.model.adapters.is_none());
    let base = s.model.base.checksum();
    let mut step = 0;
    train_epoch(ds, &cfg, &mut s.model, &s.norm, &s.stories, &mut s.adam, 1, &mut step, 10).unwrap();
    assert_ne!(s.model.base.checksum(), base);
}

#[test]
fn roi_mask_matches_column_subset() {
    let ds = small();
    let ac = ds.subject("S1").unwrap().rois.indices(RoiScope::Ac);
    let mut sliced = ds.clone();
    let sub = &mut sliced.subjects[0];
    sub.responses = sub.responses.iter().map(|r| r.select_cols(&ac)).collect();
    sub.rois.ac = vec![true; ac.len()];
    sub.rois.left = ac.iter().map(|&i| ds.subjects[0].rois.left[i]).collect();

    let masked = TrainConfig { roi: RoiScope::Ac, ..quick(1e-2) };
    let whole = TrainConfig { roi: RoiScope::All, ..quick(1e-2) };
    let mut a = prepare_session(ds, "S1", &masked).unwrap();
    let mut b = prepare_session(&sliced, "S1", &whole).unwrap();
    assert_eq!(a.model, b.model);
    let (mut sa, mut sb) = (0, 0);
    let la = train_epoch(ds, &masked, &mut a.model, &a.norm, &a.stories, &mut a.adam, 1, &mut sa, 10).unwrap();
    let lb = train_epoch(&sliced, &whole, &mut b.model, &b.norm, &b.stories, &mut b.adam, 1, &mut sb, 10).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.model, b.model);
}

#[test]
fn column_subset_selects_head_outputs() {
    let ds = small();
    let cfg = quick(1e-2);
    let s = prepare_session(ds, "S1", &cfg).unwrap();
    let cols = [0, 3, 5];
    let full = train::batch_loss(ds, &cfg, &s.model, &s.norm, &s.stories[0], 4, 14, None).unwrap();
    let part = train::batch_loss(ds, &cfg, &s.model, &s.norm, &s.stories[0], 4, 14, Some(&cols)).unwrap();
    assert_eq!(part.prediction, full.prediction.select_cols(&cols));
    assert_ne!(part.loss, full.loss);
}

#[test]
fn training_loss_does_not_rise_above_epoch_zero() {
    let ds = noiseless();
    for seed in 0..2 {
        let cfg = TrainConfig { seed, lora: crate::encoder::LoraConfig { seed, ..Default::default() }, ..quick(3e-3) };
        let mut s = prepare_session(ds, "S1", &cfg).unwrap();
        let start = mean_loss(ds, &cfg, &s.model, &s.norm, &s.stories).unwrap();
        let mut step = 0;
        for epoch in 1..=3 {
            train_epoch(ds, &cfg, &mut s.model, &s.norm, &s.stories, &mut s.adam, epoch, &mut step, 30).unwrap();
            let now = mean_loss(ds, &cfg, &s.model, &s.norm, &s.stories).unwrap();
            assert!(now <= start, "seed {seed} epoch {epoch}: {now} > {start}");
        }
    }
}

#[test]
fn self_distillation_starts_near_perfect() {
    let mut cfg = SynthConfig::small();
    cfg.teacher.magnitude = 0.0;
    cfg.n_subjects = 1;
    // slow word drift keeps adjacent volumes alike; the lag-one ceiling depends on it
    cfg.schedule.salience_gain = 2.0;
    let ds = make_dataset(&cfg).unwrap();
    let tc = TrainConfig { target_kind: TargetKind::TeacherFeatures, ..quick(1e-3) };
    let s = prepare_session(&ds, "S1", &tc).unwrap();
    assert_eq!(s.stories[0].targets.cols(), cfg.encoder.d_model);
    let loss = mean_loss(&ds, &tc, &s.model, &s.norm, &s.stories).unwrap();
    // delays start at one TR, so the same-volume state is never in the design
    assert!(loss < -0.75, "self-distillation loss {loss}");
}

#[test]
fn run_writes_logs_and_matches_baseline_at_epoch_zero() {
    let ds = small();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 2, ..quick(1e-2) };
    let run = run_finetune(ds, "S1", &cfg, Some(dir.path())).unwrap();
    assert_eq!(run.reports.len(), 3);
    assert_eq!(run.reports[0].val_rho, Some(run.baseline.val.mean()));
    let base = ds.base_encoder().unwrap();
    let feats = story_features(ds, &base, None).unwrap();
    let plain = fit_and_score(ds, &ds.subject("S1").unwrap().responses, &feats).unwrap();
    for (a, b) in plain.test.rho.iter().zip(&run.baseline.test.rho) {
        assert!((a - b).abs() < 1e-12);
    }
    let lines = std::fs::read_to_string(dir.path().join("epochs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(dir.path().join("adapters/epoch_02.bin").exists());
    let best: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("best.json")).unwrap()).unwrap();
    assert_eq!(best["best_epoch"], run.best_epoch);
}
