//! Desk-scale speech encoder: strided linear frame projection, sinusoidal
//! positions, and a stack of post-norm transformer layers. Attention
//! projections may carry LoRA adapters; a rank-bottlenecked head maps
//! encoder features to voxels.

pub mod checkpoint;
mod config;
mod head;
mod lora;
pub mod model;
mod weights;

pub use config::EncoderConfig;
pub use head::{head_predict, BottleneckHead};
pub use lora::{lora_parameter_count, merge_lora, LoraAdapterSet, LoraConfig, LoraPair, Target};
pub use model::{forward, readout};
pub use weights::{EncoderWeights, LayerWeights};

pub(crate) use weights::hex_digest;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{Tensor, LAYER_NORM_EPS};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(seed: u64) -> EncoderConfig {
        EncoderConfig {
            n_layers: 3,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            sample_rate: 100,
            window_samples: 40,
            frame_size: 10,
            frame_stride: 5,
            frame_gain: 1.0,
            readout_layer: 3,
            seed,
        }
    }

    fn random_window(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn randomize_b(adapters: &mut LoraAdapterSet, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut adapters.pairs {
            for x in p.b.data_mut() {
                *x = rng.random_range(-std..std);
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = EncoderWeights::init(&small_config(1)).unwrap();
        let b = EncoderWeights::init(&small_config(1)).unwrap();
        let c = EncoderWeights::init(&small_config(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.frame_proj, c.frame_proj);
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_config(0);
        cfg.n_heads = 3;
        assert!(EncoderWeights::init(&cfg).is_err());
        let mut cfg = small_config(0);
        cfg.readout_layer = 4;
        assert!(EncoderWeights::init(&cfg).is_err());
        let mut cfg = small_config(0);
        cfg.frame_stride = 7;
        assert!(EncoderWeights::init(&cfg).is_err());
    }

    #[test]
    fn hidden_state_variance_is_sane_at_init() {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::init(&cfg).unwrap();
        let x = random_window(3, cfg.window_samples);
        let hidden = forward(&w, None, &x).unwrap();
        assert_eq!(hidden.len(), cfg.n_layers + 1);
        for h in &hidden {
            let n = h.numel() as f64;
            let mean = h.sum() / n;
            let var = h.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!((0.1..=10.0).contains(&var), "variance {var}");
        }
    }

    #[test]
    fn zero_b_adapters_leave_outputs_bit_identical() {
        let cfg = small_config(4);
        let w = EncoderWeights::init(&cfg).unwrap();
        let lora = LoraAdapterSet::init(&w, &LoraConfig { seed: 9, ..Default::default() }).unwrap();
        let x = random_window(5, cfg.window_samples);
        assert_eq!(forward(&w, None, &x).unwrap(), forward(&w, Some(&lora), &x).unwrap());
    }

    #[test]
    fn alpha_scales_the_update() {
        let cfg = small_config(4);
        let w = EncoderWeights::init(&cfg).unwrap();
        let mut lora = LoraAdapterSet::init(&w, &LoraConfig::default()).unwrap();
        let x = random_window(6, cfg.window_samples);
        let mut doubled = lora.clone();
        doubled.alpha *= 2.0;
        // B = 0: alpha is irrelevant
        assert_eq!(forward(&w, Some(&lora), &x).unwrap(), forward(&w, Some(&doubled), &x).unwrap());
        randomize_b(&mut lora, 1, 0.3);
        let mut doubled = lora.clone();
        doubled.alpha *= 2.0;
        assert_ne!(forward(&w, Some(&lora), &x).unwrap(), forward(&w, Some(&doubled), &x).unwrap());
    }

    #[test]
    fn wrong_window_length_is_an_error() {
        let cfg = small_config(0);
        let w = EncoderWeights::init(&cfg).unwrap();
        assert!(forward(&w, None, &[0.0; 39]).is_err());
    }

    fn dense_layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = (var + LAYER_NORM_EPS).sqrt();
        x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) / s * g + b).collect()
    }

    fn dense_gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    fn apply(w: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..w.rows()).map(|i| (0..w.cols()).map(|j| w.get(i, j) * x[j]).sum()).collect()
    }

    /// Straight-line single-head encoder over one window.
    fn dense_oracle(w: &EncoderWeights, window: &[f64]) -> Vec<Vec<f64>> {
        let cfg = &w.config;
        let f = cfg.frames_per_window();
        let d = cfg.d_model;
        let pos = model::positional_table(f, d);
        let mut h: Vec<Vec<f64>> = (0..f)
            .map(|j| {
                let frame = &window[j * cfg.frame_stride..j * cfg.frame_stride + cfg.frame_size];
                let e: Vec<f64> = apply(&w.frame_proj, frame).iter().zip(pos.row(j)).map(|(a, p)| a + p).collect();
                dense_layer_norm(&e, w.input_gain.data(), w.input_bias.data())
            })
            .collect();
        for l in &w.layers {
            let q: Vec<Vec<f64>> = h.iter().map(|x| apply(&l.wq, x)).collect();
            let k: Vec<Vec<f64>> = h.iter().map(|x| apply(&l.wk, x)).collect();
            let v: Vec<Vec<f64>> = h.iter().map(|x| apply(&l.wv, x)).collect();
            let mut next = Vec::new();
            for i in 0..f {
                let s: Vec<f64> = (0..f)
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                let att: Vec<f64> = (0..d).map(|c| (0..f).map(|j| e[j] / z * v[j][c]).sum()).collect();
                let o = apply(&l.wo, &att);
                let r1: Vec<f64> = h[i].iter().zip(&o).map(|(a, b)| a + b).collect();
                let h1 = dense_layer_norm(&r1, l.norm1_gain.data(), l.norm1_bias.data());
                let mid: Vec<f64> = apply(&l.ff_in, &h1).into_iter().map(dense_gelu).collect();
                let ff = apply(&l.ff_out, &mid);
                let r2: Vec<f64> = h1.iter().zip(&ff).map(|(a, b)| a + b).collect();
                next.push(dense_layer_norm(&r2, l.norm2_gain.data(), l.norm2_bias.data()));
            }
            h = next;
        }
        h
    }

    #[test]
    fn matches_dense_attention_oracle() {
        let cfg = EncoderConfig {
            n_layers: 1,
            d_model: 2,
            n_heads: 1,
            d_ff: 3,
            sample_rate: 10,
            window_samples: 12,
            frame_size: 4,
            frame_stride: 4,
            frame_gain: 1.0,
            readout_layer: 1,
            seed: 17,
        };
        let mut w = EncoderWeights::init(&cfg).unwrap();
        // non-trivial norm parameters
        w.layers[0].norm1_gain = Tensor::vector(vec![1.3, 0.7]);
        w.layers[0].norm2_bias = Tensor::vector(vec![0.1, -0.2]);
        let x = random_window(8, 12);
        let hidden = forward(&w, None, &x).unwrap();
        let want = dense_oracle(&w, &x);
        assert_eq!(hidden[1].shape(), &[3, 2]);
        for (i, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((hidden[1].get(i, j) - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn readout_is_final_frame() {
        let cfg = small_config(2);
        let w = EncoderWeights::init(&cfg).unwrap();
        let x = random_window(1, cfg.window_samples);
        let hidden = forward(&w, None, &x).unwrap();
        let r = readout(&hidden, 2).unwrap();
        assert_eq!(r, hidden[2].row(hidden[2].rows() - 1));
        assert!(readout(&hidden, 4).is_err());
        assert_eq!(EncoderConfig::default().readout_layer, 9);

        let mut one = small_config(2);
        one.frame_size = 40;
        one.frame_stride = 40;
        let w = EncoderWeights::init(&one).unwrap();
        let hidden = forward(&w, None, &x).unwrap();
        assert_eq!(hidden[3].rows(), 1);
        assert_eq!(readout(&hidden, 3).unwrap(), hidden[3].row(0));
    }

    #[test]
    fn merge_matches_dynamic_adapters() {
        let cfg = small_config(5);
        let w = EncoderWeights::init(&cfg).unwrap();
        let fresh = LoraAdapterSet::init(&w, &LoraConfig { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(merge_lora(&w, &fresh).unwrap(), w);

        let mut lora = fresh.clone();
        randomize_b(&mut lora, 4, 0.5);
        let merged = merge_lora(&w, &lora).unwrap();
        for s in 0..5 {
            let x = random_window(100 + s, cfg.window_samples);
            let a = forward(&merged, None, &x).unwrap();
            let b = forward(&w, Some(&lora), &x).unwrap();
            for (ha, hb) in a.iter().zip(&b) {
                assert!(ha.zip_map(hb, |p, q| p - q).unwrap().max_abs() < 1e-10);
            }
        }
        for (lw, mw) in w.layers.iter().zip(&merged.layers) {
            for (base, m) in [(&lw.wq, &mw.wq), (&lw.wk, &mw.wk), (&lw.wv, &mw.wv)] {
                let diff = m.zip_map(base, |p, q| p - q).unwrap();
                let dm = nalgebra::DMatrix::from_row_slice(diff.rows(), diff.cols(), diff.data());
                assert!(dm.rank(1e-9) <= 4);
            }
            assert_eq!(lw.wo, mw.wo);
        }
    }

    #[test]
    fn merge_rejects_mismatched_adapters() {
        let w = EncoderWeights::init(&small_config(5)).unwrap();
        let mut other_cfg = small_config(5);
        other_cfg.d_model = 4;
        let other = EncoderWeights::init(&other_cfg).unwrap();
        let lora = LoraAdapterSet::init(&other, &LoraConfig::default()).unwrap();
        assert!(merge_lora(&w, &lora).is_err());
    }

    #[test]
    fn lora_parameter_count_matches_formula() {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::init(&cfg).unwrap();
        let lora = LoraAdapterSet::init(&w, &LoraConfig::default()).unwrap();
        assert_eq!(lora.parameter_count(), lora_parameter_count(9, 3, 4, 16));
        assert_eq!(lora.parameter_count(), 9 * 3 * 2 * 4 * 16);
        assert!(LoraAdapterSet::init(&w, &LoraConfig { rank: 0, ..Default::default() }).is_err());
        let b_zero = lora.pairs.iter().all(|p| p.b.data().iter().all(|&x| x == 0.0));
        assert!(b_zero);
        let a: Vec<f64> = lora.pairs.iter().flat_map(|p| p.a.data().to_vec()).collect();
        let std = (a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.003, "A std {std}");
    }

    #[test]
    fn head_identity_and_rank() {
        let feats = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let head = BottleneckHead::new(Tensor::identity(2), Tensor::identity(2)).unwrap();
        assert_eq!(head_predict(&head, &feats).unwrap(), feats);
        assert!(head_predict(&head, &Tensor::zeros(&[3, 3])).is_err());
        assert!(BottleneckHead::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3, 5])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rnd = |r, c| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let head = BottleneckHead::new(rnd(10, 3), rnd(3, 12)).unwrap();
        let map = head.down.matmul(&head.up).unwrap();
        let dm = nalgebra::DMatrix::from_row_slice(10, 12, map.data());
        assert!(dm.rank(1e-9) <= 3);

        let beta = rnd(6, 5);
        let full = BottleneckHead::from_full(&beta, 100).unwrap();
        assert_eq!(full.rank(), 5);
        let rebuilt = full.down.matmul(&full.up).unwrap();
        assert!(rebuilt.zip_map(&beta, |a, b| a - b).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = small_config(3);
        let w = EncoderWeights::init(&cfg).unwrap();
        let mut lora = LoraAdapterSet::init(&w, &LoraConfig { layers: Some(vec![0, 2]), ..Default::default() }).unwrap();
        randomize_b(&mut lora, 2, 0.1);
        let c = checkpoint::adapters_to_container(&lora, &cfg);
        let (back, back_cfg) = checkpoint::adapters_from_container(&crate::container::Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, lora);
        assert_eq!(back_cfg, cfg);

        let merged = merge_lora(&w, &lora).unwrap();
        let c = checkpoint::weights_to_container(&merged);
        let back = checkpoint::weights_from_container(&crate::container::Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, merged);
    }
}
