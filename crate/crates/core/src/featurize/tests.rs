use super::*;
use crate::encoder::{EncoderConfig, LoraConfig};
use proptest::prelude::*;
use std::f64::consts::PI;

fn tone(seconds: f64, rate: u32) -> Waveform {
    let n = (seconds * rate as f64).round() as usize;
    let s = (0..n).map(|i| (i as f64 * 0.37).sin() * 0.5 + (i as f64 * 0.011).cos() * 0.3).collect();
    Waveform::new(s, rate).unwrap()
}

#[test]
fn two_second_waveform_gives_one_window() {
    let plan = slide_windows(&tone(2.0, 1000), 2.0, 0.1).unwrap();
    assert_eq!(plan.len(), 1);
    assert!((plan.segments[0].time - 2.0).abs() < 1e-12);
}

#[test]
fn three_second_waveform_gives_eleven_windows() {
    let w = tone(3.0, 1000);
    let plan = slide_windows(&w, 2.0, 0.1).unwrap();
    let expected = ((3.0f64 - 2.0) / 0.1 + 1e-9).floor() as usize + 1;
    assert_eq!(plan.len(), expected);
    assert_eq!(plan.len(), 11);
    for (k, seg) in plan.segments.iter().enumerate() {
        assert!((seg.time - (2.0 + 0.1 * k as f64)).abs() < 1e-9);
        assert_eq!(seg.samples(&w), &w.samples[k * 100..k * 100 + 2000]);
    }
}

#[test]
fn short_waveform_is_rejected() {
    assert!(slide_windows(&tone(1.5, 1000), 2.0, 0.1).is_err());
}

fn sinusoid_case(first_target: f64, last_target: f64) -> f64 {
    let f = 0.05;
    let src: Vec<f64> = (0..=1200).map(|i| i as f64 / 10.0).collect();
    let col: Vec<f64> = src.iter().map(|t| (2.0 * PI * f * t).sin()).collect();
    let m = Tensor::matrix(src.len(), 1, col);
    let n = ((last_target - first_target) / 2.0).round() as usize + 1;
    let tgt: Vec<f64> = (0..n).map(|i| first_target + 2.0 * i as f64).collect();
    let out = lanczos_resample(&src, &m, &tgt, &LanczosConfig::default()).unwrap();
    tgt.iter().enumerate().map(|(i, t)| (out.get(i, 0) - (2.0 * PI * f * t).sin()).abs()).fold(0.0, f64::max)
}

#[test]
fn sinusoid_matches_analytic_signal() {
    // Targets whose ±3 s kernel support lies inside the 10 Hz source.
    let err = sinusoid_case(4.0, 116.0);
    assert!(err < 1e-3, "max abs error {err}");
}

#[test]
fn constants_are_preserved() {
    let src: Vec<f64> = (0..200).map(|i| 0.3 + i as f64 * 0.1).collect();
    let m = Tensor::filled(&[200, 3], 4.25);
    let tgt: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 2.0).collect();
    let out = lanczos_resample(&src, &m, &tgt, &LanczosConfig::default()).unwrap();
    assert!(out.data().iter().all(|v| (v - 4.25).abs() < 1e-10));
    let w = lanczos_weights(&src, &tgt, &LanczosConfig::default()).unwrap();
    for i in 0..w.rows() {
        assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn source_time_target_reproduces_sample() {
    let src: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
    let col: Vec<f64> = (0..100).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
    let m = Tensor::matrix(100, 1, col.clone());
    let cfg = LanczosConfig { lobes: 3, cutoff_hz: Some(10.0) };
    let out = lanczos_resample(&src, &m, &[src[37], src[0], src[99]], &cfg).unwrap();
    assert!((out.get(0, 0) - col[37]).abs() < 1e-10);
    assert!((out.get(1, 0) - col[0]).abs() < 1e-10);
    assert!((out.get(2, 0) - col[99]).abs() < 1e-10);
}

#[test]
fn target_outside_support_is_an_error() {
    let src: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
    let m = Tensor::zeros(&[50, 1]);
    assert!(lanczos_resample(&src, &m, &[0.0, 2.0], &LanczosConfig::default()).is_err());
    assert!(lanczos_resample(&src, &m, &[2.0, 5.5], &LanczosConfig::default()).is_err());
}

#[test]
fn paper_delays_are_shifts_one_to_four() {
    assert_eq!(delay_shifts(2.0, &DEFAULT_DELAYS).unwrap(), vec![1, 2, 3, 4]);
    assert!(delay_shifts(2.0, &[3.0]).is_err());
}

#[test]
fn impulse_moves_down_each_block() {
    let mut v = Tensor::zeros(&[6, 1]);
    v.set(0, 0, 1.0);
    let d = delay_stack(&v, 2.0, &DEFAULT_DELAYS).unwrap();
    assert_eq!(d.shape(), &[6, 4]);
    for i in 0..6 {
        for b in 0..4 {
            let want = if i == b + 1 { 1.0 } else { 0.0 };
            assert_eq!(d.get(i, b), want, "row {i} block {b}");
        }
    }
}

#[test]
fn shifted_rows_match_stack() {
    let v = Tensor::matrix(5, 2, (0..10).map(|x| x as f64 + 1.0).collect());
    let d = delay_stack(&v, 2.0, &[4.0]).unwrap();
    for (i, src) in shifted_rows(5, 2).into_iter().enumerate() {
        let want = src.map_or(vec![0.0, 0.0], |r| v.row(r).to_vec());
        assert_eq!(d.row(i), &want[..]);
    }
}

fn small_cfg() -> EncoderConfig {
    EncoderConfig { n_layers: 2, readout_layer: 2, ..EncoderConfig::default() }
}

#[test]
fn extraction_matches_single_window_forward() {
    let cfg = small_cfg();
    let w = EncoderWeights::init(&cfg).unwrap();
    let wave = tone(2.5, cfg.sample_rate);
    let plan = slide_windows(&wave, 2.0, 0.1).unwrap();
    let feats = extract_layers(&w, None, &wave, &plan, &[0, 2]).unwrap();
    for (k, seg) in plan.segments.iter().enumerate() {
        let hidden = crate::encoder::forward(&w, None, seg.samples(&wave)).unwrap();
        for (fi, &l) in [0usize, 2].iter().enumerate() {
            let r = crate::encoder::readout(&hidden, l).unwrap();
            for (a, b) in feats[fi].matrix.row(k).iter().zip(&r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_lora_extraction_is_identical() {
    let cfg = small_cfg();
    let w = EncoderWeights::init(&cfg).unwrap();
    let a = LoraAdapterSet::init(&w, &LoraConfig::default()).unwrap();
    let wave = tone(2.4, cfg.sample_rate);
    let plan = slide_windows(&wave, 2.0, 0.1).unwrap();
    let base = extract_features(&w, None, &wave, &plan, 2).unwrap();
    let with = extract_features(&w, Some(&a), &wave, &plan, 2).unwrap();
    assert_eq!(base, with);
}

#[test]
fn identical_windows_give_identical_rows() {
    let cfg = small_cfg();
    let w = EncoderWeights::init(&cfg).unwrap();
    let one = tone(2.0, cfg.sample_rate).samples;
    let wave = Waveform::new([one.clone(), one].concat(), cfg.sample_rate).unwrap();
    let plan = slide_windows(&wave, 2.0, 2.0).unwrap();
    let f = extract_features(&w, None, &wave, &plan, 2).unwrap();
    assert_eq!(f.matrix.row(0), f.matrix.row(1));
}

#[test]
fn feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ff = FeatureFile {
        matrix: Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-9, 7.0]),
        tr: 2.0,
        delays: DEFAULT_DELAYS.to_vec(),
        layer: 9,
        source_model_checksum: "abc".into(),
    };
    let p = dir.path().join("f.bin");
    ff.write(&p).unwrap();
    assert_eq!(FeatureFile::read(&p).unwrap(), ff);
}

proptest! {
    #[test]
    fn resampling_is_linear(
        f in proptest::collection::vec(-5.0f64..5.0, 60),
        g in proptest::collection::vec(-5.0f64..5.0, 60),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let src: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let tgt = [0.5, 2.5, 4.5];
        let cfg = LanczosConfig::default();
        let fm = Tensor::matrix(60, 1, f.clone());
        let gm = Tensor::matrix(60, 1, g.clone());
        let mix = Tensor::matrix(60, 1, f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect());
        let lhs = lanczos_resample(&src, &mix, &tgt, &cfg).unwrap();
        let rf = lanczos_resample(&src, &fm, &tgt, &cfg).unwrap();
        let rg = lanczos_resample(&src, &gm, &tgt, &cfg).unwrap();
        for i in 0..3 {
            prop_assert!((lhs.get(i, 0) - (a * rf.get(i, 0) + b * rg.get(i, 0))).abs() < 1e-10);
        }
    }

    #[test]
    fn unshifting_recovers_original(
        data in proptest::collection::vec(-10.0f64..10.0, 24),
    ) {
        let v = Tensor::matrix(8, 3, data);
        let d = delay_stack(&v, 2.0, &DEFAULT_DELAYS).unwrap();
        for (b, s) in [1usize, 2, 3, 4].iter().enumerate() {
            for i in *s..8 {
                for j in 0..3 {
                    prop_assert_eq!(d.get(i, b * 3 + j), v.get(i - s, j));
                }
            }
        }
    }
}

