//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Fine-tuning runs are shared between criteria 4, 5 and 6.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cpu_time::ProcessTime;
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neuroencode::featurize::{extract_layers, lanczos_resample, slide_windows, LanczosConfig};
use neuroencode::finetune::train::batch_loss;
use neuroencode::finetune::{fit_and_score, prepare_session, run_finetune, story_features, FinetuneRun, TrainConfig};
use neuroencode::gradcore::Tensor;
use neuroencode::pipeline::{pct_improvement, run_all, transfer_report, BaselineRecord, RunConfig};
use neuroencode::probes::{fit_probe, probe_sweep, ProbeKind, ProbeSweepConfig};
use neuroencode::ridge::{fit_ridge, log_grid, CvConfig};
use neuroencode::synthdata::{make_dataset, Dataset, RoiScope, SynthConfig};

/// Learning rate of the 20-epoch LoRA runs.
const LR: f64 = 1e-2;
const EPOCHS: usize = 20;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn gradient_integrity() -> Outcome {
    let ds = make_dataset(&SynthConfig::small()).unwrap();
    let cfg = TrainConfig { batch_trs: 8, ..TrainConfig::default() };
    let mut s = prepare_session(&ds, "S1", &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // non-zero B so that gradients reach A
    for t in s.model.adapters.as_mut().unwrap().tensors_mut() {
        for x in t.data_mut() {
            *x = 0.05 * rng.random_range(-1.0..1.0);
        }
    }
    let story = &s.stories[0];
    let loss = |m: &neuroencode::finetune::train::TrainableModel| {
        batch_loss(&ds, &cfg, m, &s.norm, story, 4, 12, None).unwrap()
    };
    let grads = loss(&s.model).grads;
    let sizes: Vec<usize> = s.model.params(true).iter().map(|t| t.numel()).collect();
    let n_lora = s.model.adapters.as_ref().unwrap().tensors().len();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        // 80 adapter entries, 20 head entries
        let ti = if k < 80 { rng.random_range(0..n_lora) } else { rng.random_range(n_lora..sizes.len()) };
        let i = rng.random_range(0..sizes[ti]);
        let mut up = s.model.clone();
        up.params_mut(true)[ti].data_mut()[i] += h;
        let mut dn = s.model.clone();
        dn.params_mut(true)[ti].data_mut()[i] -= h;
        let fd = (loss(&up).loss - loss(&dn).loss) / (2.0 * h);
        let an = grads[ti].data()[i];
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-7));
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 100 parameters"))
}

fn ridge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alphas = log_grid(1e-3, 1e3, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = uniform(40, 12, &mut rng);
        let y = uniform(40, 8, &mut rng);
        let xm = DMatrix::from_row_slice(40, 12, x.data());
        let ym = DMatrix::from_row_slice(40, 8, y.data());
        for &a in &alphas {
            let svd = fit_ridge(&x, &y, &[a]).unwrap().beta;
            let lhs = xm.transpose() * &xm + DMatrix::identity(12, 12) * a;
            let normal = lhs.lu().solve(&(xm.transpose() * &ym)).unwrap();
            for i in 0..12 {
                for v in 0..8 {
                    worst = worst.max((svd.get(i, v) - normal[(i, v)]).abs());
                }
            }
        }
    }
    outcome(worst < 1e-8, format!("max abs difference {worst:.2e} over 50 systems x 10 alphas"))
}

fn zero_lora_identity() -> Outcome {
    let ds = make_dataset(&SynthConfig::small()).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_trs: 10, learning_rate: LR, ..TrainConfig::default() };
    let run = run_finetune(&ds, "S1", &cfg, None).unwrap();
    let plain = fit_and_score(&ds, &ds.subject("S1").unwrap().responses, &story_features(&ds, &ds.base_encoder().unwrap(), None).unwrap())
        .unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d = diff(&plain.val.rho, &run.baseline.val.rho).max(diff(&plain.test.rho, &run.baseline.test.rho));
    let reported = run.reports[0].val_rho == Some(plain.val.mean());
    outcome(d < 1e-12 && reported, format!("max per-voxel difference {d:.1e}, epoch-0 log matches: {reported}"))
}

/// Datasets and 20-epoch runs keyed by `(seed, subject, roi)`.
#[derive(Default)]
struct Runs {
    datasets: BTreeMap<u64, Dataset>,
    runs: BTreeMap<(u64, String, RoiScope), FinetuneRun>,
}

impl Runs {
    fn dataset(&mut self, seed: u64) -> &Dataset {
        self.datasets.entry(seed).or_insert_with(|| {
            let cfg = RunConfig { seed: Some(seed), ..RunConfig::default() }.resolved();
            make_dataset(&cfg.synth).unwrap()
        })
    }

    fn run(&mut self, seed: u64, subject: &str, roi: RoiScope) -> &FinetuneRun {
        let key = (seed, subject.to_string(), roi);
        if !self.runs.contains_key(&key) {
            let mut rc = RunConfig { seed: Some(seed), roi, ..RunConfig::default() };
            rc.train.learning_rate = LR;
            rc.train.epochs = EPOCHS;
            let rc = rc.resolved();
            let ds = self.dataset(seed).clone();
            let run = run_finetune(&ds, subject, &rc.train, None).unwrap();
            self.runs.insert(key.clone(), run);
        }
        &self.runs[&key]
    }
}

fn scope_gain(run: &FinetuneRun, idx: &[usize]) -> f64 {
    pct_improvement(run.best.test.mean_over(idx), run.baseline.test.mean_over(idx))
}

fn planted_recovery(runs: &mut Runs) -> Outcome {
    let gains: Vec<f64> = SEEDS.iter().map(|&s| {
        let r = runs.run(s, "S1", RoiScope::All);
        pct_improvement(r.best.test.mean(), r.baseline.test.mean())
    }).collect();
    let ok = gains.iter().filter(|&&g| g >= 10.0).count();
    let list: Vec<String> = gains.iter().map(|g| format!("{g:.1}%")).collect();
    outcome(ok >= 4, format!("test-story gain per seed [{}], {ok}/5 at least 10%", list.join(", ")))
}

fn roi_selectivity(runs: &mut Runs) -> Outcome {
    let mut ok = 0;
    let mut rows = Vec::new();
    for &s in &SEEDS {
        let rois = runs.dataset(s).subject("S1").unwrap().rois.clone();
        let (ac, non) = (rois.indices(RoiScope::Ac), rois.indices(RoiScope::NonAc));
        let whole = scope_gain(runs.run(s, "S1", RoiScope::All), &ac);
        let only = runs.run(s, "S1", RoiScope::Ac);
        let (only_ac, only_non) = (scope_gain(only, &ac), scope_gain(only, &non));
        if only_ac > whole && only_non > 0.0 {
            ok += 1;
        }
        rows.push(format!("AC {only_ac:.1}% vs {whole:.1}%, non-AC {only_non:.1}%"));
    }
    outcome(ok >= 4, format!("{ok}/5 seeds; {}", rows.join("; ")))
}

fn transfer_positivity(runs: &mut Runs) -> Outcome {
    let seed = SEEDS[0];
    let subjects: Vec<String> = runs.dataset(seed).subjects.iter().map(|s| s.id.clone()).collect();
    let mut models = Vec::new();
    let mut baselines = Vec::new();
    for s in &subjects {
        let rois = runs.dataset(seed).subject(s).unwrap().rois.clone();
        let r = runs.run(seed, s, RoiScope::All);
        models.push((s.clone(), r.best_weights.clone()));
        baselines.push(BaselineRecord::from_evaluation(s, &rois, &r.baseline));
    }
    let report = transfer_report(&runs.datasets[&seed], RoiScope::All, &models, &subjects, &baselines).unwrap();
    let m = report.matrix(RoiScope::All);
    let n = m.len();
    let mut pass = n == 3;
    for (i, row) in m.iter().enumerate() {
        let off: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| row[j]).collect();
        let mean = off.iter().sum::<f64>() / off.len() as f64;
        pass &= off.iter().all(|&x| x > 0.0) && row[i] >= mean;
    }
    let text: Vec<String> =
        m.iter().map(|r| r.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ")).collect();
    outcome(pass, format!("matrix (% gain, rows = trained on) [{}]", text.join(" | ")))
}

fn resampling() -> Outcome {
    let f = 0.05;
    let src: Vec<f64> = (0..=1200).map(|i| i as f64 / 10.0).collect();
    let sig = Tensor::matrix(src.len(), 1, src.iter().map(|t| (2.0 * std::f64::consts::PI * f * t).sin()).collect());
    // targets whose kernel support lies inside the source
    let tgt: Vec<f64> = (2..=58).map(|i| 2.0 * i as f64).collect();
    let out = lanczos_resample(&src, &sig, &tgt, &LanczosConfig::default()).unwrap();
    let err = tgt
        .iter()
        .enumerate()
        .map(|(i, t)| (out.get(i, 0) - (2.0 * std::f64::consts::PI * f * t).sin()).abs())
        .fold(0.0, f64::max);
    let c = lanczos_resample(&src, &Tensor::filled(&[src.len(), 2], -1.75), &tgt, &LanczosConfig::default()).unwrap();
    let cerr = c.data().iter().map(|x| (x + 1.75).abs()).fold(0.0, f64::max);
    outcome(err < 1e-3 && cerr < 1e-10, format!("sinusoid max error {err:.2e}, constant max error {cerr:.1e}"))
}

fn probe_integrity() -> Outcome {
    let ds = make_dataset(&SynthConfig::small()).unwrap();
    let base = ds.base_encoder().unwrap();
    let layer = |i: usize| {
        let s = &ds.stories[i];
        let plan = slide_windows(&s.wave, 2.0, 0.1).unwrap();
        extract_layers(&base, None, &s.wave, &plan, &[1]).unwrap().remove(0).matrix
    };
    let (x, xt) = (layer(0), layer(1));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = uniform(x.cols(), 6, &mut rng);
    let cv = CvConfig { n_folds: 4, chunk_length: 50, ..CvConfig::default() };
    let linear = fit_probe(&x, &x.matmul(&w).unwrap(), &xt, &xt.matmul(&w).unwrap(), &cv).unwrap().scores.r2;
    let noise = fit_probe(&x, &uniform(x.rows(), 6, &mut rng), &xt, &uniform(xt.rows(), 6, &mut rng), &cv)
        .unwrap()
        .scores
        .r2;
    let teacher = ds.teacher().unwrap().weights;
    let cfg = ProbeSweepConfig { cv: CvConfig { n_folds: 3, chunk_length: 50, ..CvConfig::default() }, ..Default::default() };
    let cells = probe_sweep(&ds, &base, &[("teacher".into(), teacher)], &cfg).unwrap();
    let expected = 2 * (base.config.readout_layer + 1) * ProbeKind::ALL.len();
    let pass = linear >= 0.99 && noise <= 0.05 && cells.len() == expected;
    outcome(pass, format!("linear R2 {linear:.4}, noise R2 {noise:.4}, grid {}/{expected} cells", cells.len()))
}

fn csv_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let cfg = RunConfig { seed: Some(7), ..RunConfig::small(d.path()) };
        run_all(&cfg).unwrap();
    }
    let (ca, cb) = (csv_files(a.path()), csv_files(b.path()));
    let same = ca == cb && !ca.is_empty();
    outcome(same, format!("{} CSV files compared, identical: {same}", ca.len()))
}

/// How a criterion's runtime bound is measured.
#[derive(Clone, Copy)]
enum Limit {
    Wall(f64),
    Cpu(f64),
    None,
}

fn main() {
    let mut runs = Runs::default();
    type Check<'a> = Box<dyn FnMut(&mut Runs) -> Outcome + 'a>;
    let mut criteria: Vec<(&str, Limit, Check)> = vec![
        ("1 gradient integrity", Limit::Wall(120.0), Box::new(|_| gradient_integrity())),
        ("2 ridge oracle equivalence", Limit::Wall(10.0), Box::new(|_| ridge_oracle())),
        ("3 zero-LoRA baseline identity", Limit::Wall(120.0), Box::new(|_| zero_lora_identity())),
        ("7 resampling correctness", Limit::Wall(1.0), Box::new(|_| resampling())),
        ("8 probe protocol integrity", Limit::Wall(300.0), Box::new(|_| probe_integrity())),
        ("9 determinism", Limit::None, Box::new(|_| determinism())),
        ("4 planted-recovery improvement", Limit::Cpu(1200.0), Box::new(planted_recovery)),
        ("5 ROI selectivity", Limit::Wall(1800.0), Box::new(roi_selectivity)),
        ("6 transfer positivity", Limit::Wall(2400.0), Box::new(transfer_positivity)),
    ];
    if let Ok(only) = std::env::var("ACCEPTANCE_ONLY") {
        let keep: Vec<&str> = only.split(',').collect();
        criteria.retain(|(name, _, _)| keep.iter().any(|k| name.starts_with(k)));
    }
    let mut failed = 0;
    for (name, limit, f) in criteria.iter_mut() {
        let (t, cpu) = (Instant::now(), ProcessTime::now());
        let o = f(&mut runs);
        let (wall, cpu) = (t.elapsed().as_secs_f64(), cpu.elapsed().as_secs_f64());
        let (in_time, budget) = match *limit {
            Limit::Wall(s) => (wall < s, format!("{wall:.1} s wall, limit {s} s")),
            Limit::Cpu(s) => (cpu < s, format!("{cpu:.1} s cpu, limit {s} s; {wall:.1} s wall")),
            Limit::None => (true, format!("{wall:.1} s wall")),
        };
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let late = if in_time { "" } else { " [over time]" };
        println!("[{}] {name}: {} ({budget}){late}", if pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
