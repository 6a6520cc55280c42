use neuroencode::encoder::checkpoint::{load_adapters, save_adapters};
use neuroencode::encoder::{merge_lora, LoraAdapterSet, LoraConfig};
use neuroencode::featurize::{FeatureFile, Waveform};
use neuroencode::finetune::story_features;
use neuroencode::synthdata::{make_dataset, SynthConfig};

#[test]
fn adapters_round_trip_and_merge_like_runtime_lora() {
    let ds = make_dataset(&SynthConfig::small()).unwrap();
    let base = ds.base_encoder().unwrap();
    let mut a = LoraAdapterSet::init(&base, &LoraConfig::default()).unwrap();
    for (k, t) in a.tensors_mut().into_iter().enumerate() {
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x = 0.01 * (((k * 31 + i * 7) % 13) as f64 - 6.0);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.bin");
    save_adapters(&p, &a, &base.config).unwrap();
    let (back, cfg) = load_adapters(&p).unwrap();
    assert_eq!((&back, &cfg), (&a, &base.config));

    let runtime = story_features(&ds, &base, Some(&back)).unwrap();
    let merged = story_features(&ds, &merge_lora(&base, &back).unwrap(), None).unwrap();
    for (x, y) in runtime.iter().zip(&merged) {
        let d = x.volumes.data().iter().zip(y.volumes.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "merged vs runtime adapters differ by {d}");
    }
}

#[test]
fn feature_files_and_wavs_survive_disk() {
    let ds = make_dataset(&SynthConfig::small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = ds.base_encoder().unwrap();
    let f = &story_features(&ds, &base, None).unwrap()[0];
    let file = FeatureFile {
        matrix: f.volumes.clone(),
        tr: ds.tr(),
        delays: vec![],
        layer: base.config.readout_layer,
        source_model_checksum: base.checksum(),
    };
    file.write(dir.path().join("f.bin")).unwrap();
    assert_eq!(FeatureFile::read(dir.path().join("f.bin")).unwrap(), file);

    let w = &ds.stories[0].wave;
    w.write_wav(dir.path().join("s.wav")).unwrap();
    let back = Waveform::read_wav(dir.path().join("s.wav")).unwrap();
    assert_eq!(&back, w);
}
