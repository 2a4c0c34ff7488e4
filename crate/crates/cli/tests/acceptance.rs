//! Acceptance run: one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mrsvs_core::acoustic_model::{AcousticInputs, AcousticModel, ModelConfig};
use mrsvs_core::autodiff::{finite_difference_check, Mat, ParamStore};
use mrsvs_core::corpus::{generate_toy_corpus, CorpusManifest, PHONES_FILE};
use mrsvs_core::exec::Exec;
use mrsvs_core::pitch_shift::{shift, PitchShiftConfig};
use mrsvs_core::signal::{extract_f0, voiced_mean, voiced_mean_many, FeatureConfig, PitchContour};
use mrsvs_core::speaker_encoders::{
    fixed_embed, FixedBackend, FlattenedReferenceSequence, MultiRefConfig, MultiRefEncoder,
    ReferenceMel, SpeakerEmbedding,
};
use mrsvs_core::synth::{SynthConfig, Synthesizer};
use mrsvs_core::training::{lr_schedule, masked_l1, OptimizerConfig, TrainSet, Trainer};
use mrsvs_core::wav::read_wav;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let t = elapsed.as_secs_f64();
    ensure(t < limit_s, format!("{detail}; {t:.1} s of {limit_s} s"))
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn max_abs(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn contour(len: usize, voiced: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if rng.random_bool(voiced) {
                rng.random_range(lo..hi)
            } else {
                0.0
            }
        })
        .collect()
}

fn pitch_shift_invariants() -> Outcome {
    let t0 = Instant::now();
    let cfg = PitchShiftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let (mut cases, mut mean_err, mut idem_err) = (0, 0.0f64, 0.0f64);
    while cases < 200 {
        let src = contour(rng.random_range(10..300), 0.7, 70.0, 400.0, &mut rng);
        let n_refs = rng.random_range(1..5);
        let refs: Vec<PitchContour> = (0..n_refs)
            .map(|_| {
                PitchContour::new(contour(
                    rng.random_range(10..300),
                    0.6,
                    90.0,
                    700.0,
                    &mut rng,
                ))
            })
            .collect();
        let (Ok(src_mean), Ok(ref_mean)) = (
            voiced_mean(&src),
            voiced_mean_many(refs.iter().map(|r| r.values.as_slice())),
        ) else {
            continue;
        };
        let lowest = src
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if lowest + ref_mean - src_mean <= cfg.f0_lower_bound + 1e-6 {
            continue;
        }
        let src = PitchContour::new(src);
        let out = shift(&src, &refs, &cfg).map_err(|e| e.to_string())?;
        mean_err = mean_err.max((voiced_mean(&out.values).unwrap() - ref_mean).abs());
        let mask_kept = src
            .values
            .iter()
            .zip(&out.values)
            .all(|(a, b)| (*a > 0.0) == (*b > 0.0) && (*a != 0.0 || *b == 0.0));
        if !mask_kept {
            return Err(format!("case {cases}: voicing mask changed"));
        }
        let twice = shift(&out, &refs, &cfg).map_err(|e| e.to_string())?;
        let d = out
            .values
            .iter()
            .zip(&twice.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        idem_err = idem_err.max(d);
        cases += 1;
    }
    let detail = format!("{cases} pairs, max |mean(shifted) - mean(refs)| {mean_err:.2e} Hz, idempotence drift {idem_err:.2e} Hz");
    ensure(mean_err < 1e-6 && idem_err < 1e-6, detail.clone())?;
    within(t0.elapsed(), 5.0, detail)
}

fn small_mr(heads: usize, d_m: usize, lstm_hidden: usize) -> MultiRefConfig {
    MultiRefConfig {
        conv_channels: 6,
        lstm_hidden,
        d_m,
        heads,
        ..MultiRefConfig::default()
    }
}

fn build_mr(cfg: &MultiRefConfig, query: usize, seed: u64) -> (ParamStore, MultiRefEncoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc =
        MultiRefEncoder::new(&mut store, "mr", cfg, 80, query, &mut rng).expect("encoder builds");
    (store, enc)
}

fn attention_oracle() -> Outcome {
    let t0 = Instant::now();
    let (mut store, enc) = build_mr(&small_mr(1, 2, 1), 2, 1);
    let eye = Mat::eye(2);
    *store.get_mut(enc.w_q) = eye.clone();
    *store.get_mut(enc.w_k) = eye.clone();
    *store.get_mut(enc.w_v) = Mat::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, -1.0]).unwrap();
    *store.get_mut(enc.w_o) = eye;
    let s = FlattenedReferenceSequence {
        s: Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        boundaries: vec![0, 2],
    };
    let h = Mat::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let out = enc.attend(&store, &h, &s).map_err(|e| e.to_string())?;
    // q = [1, 0]; scores = [1, 0] / sqrt(2); softmax weights mix the rows of w_v.
    let a = (1.0f64 / 2f64.sqrt()).exp();
    let (w0, w1) = (a / (a + 1.0), 1.0 / (a + 1.0));
    let want = [w0 + 3.0 * w1, 2.0 * w0 - w1];
    let oracle_err = (out.e[[0, 0]] - want[0])
        .abs()
        .max((out.e[[0, 1]] - want[1]).abs());

    let (store, enc) = build_mr(&small_mr(2, 4, 3), 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let refs = vec![random(24, 80, &mut rng), random(17, 80, &mut rng)];
    let seq = enc
        .encode_references(&store, &refs)
        .map_err(|e| e.to_string())?;
    let out = enc
        .attend(&store, &random(9, 5, &mut rng), &seq)
        .map_err(|e| e.to_string())?;
    let row_err = out
        .weights
        .iter()
        .flat_map(|w| {
            w.rows()
                .into_iter()
                .map(|r| (r.sum() - 1.0).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    let one = FlattenedReferenceSequence {
        s: random(1, 6, &mut rng),
        boundaries: vec![0, 1],
    };
    let single = enc
        .attend(&store, &random(4, 5, &mut rng), &one)
        .map_err(|e| e.to_string())?;
    let v = one.s.dot(store.get(enc.w_v));
    let ctx_err = single
        .context
        .rows()
        .into_iter()
        .flat_map(|r| {
            r.iter()
                .zip(v.row(0))
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    let detail = format!("oracle error {oracle_err:.1e}, softmax row error {row_err:.1e}, single-key error {ctx_err:.1e}");
    ensure(
        oracle_err < 1e-6 && row_err < 1e-6 && ctx_err < 1e-6,
        detail.clone(),
    )?;
    within(t0.elapsed(), 5.0, detail)
}

fn permutation_invariance() -> Outcome {
    let t0 = Instant::now();
    let (store, enc) = build_mr(&small_mr(2, 4, 3), 5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let refs: Vec<Mat> = [31, 22, 40]
        .iter()
        .map(|&n| random(n, 80, &mut rng).mapv(|v| 0.5 + 0.4 * v))
        .collect();
    let ids = ["a", "b", "c"];
    let h = random(12, 5, &mut rng);
    let backend = FixedBackend::builtin(80);
    let attend = |order: &[usize]| -> Result<(Mat, SpeakerEmbedding), String> {
        let perm: Vec<Mat> = order.iter().map(|&i| refs[i].clone()).collect();
        let s = enc
            .encode_references(&store, &perm)
            .map_err(|e| e.to_string())?;
        let e = enc.attend(&store, &h, &s).map_err(|e| e.to_string())?.e;
        let mels: Vec<ReferenceMel> = order
            .iter()
            .map(|&i| ReferenceMel {
                id: ids[i],
                mel: &refs[i],
            })
            .collect();
        Ok((e, fixed_embed(&mels, &backend).map_err(|e| e.to_string())?))
    };
    let (base_e, base_spk) = attend(&[0, 1, 2])?;
    let (mut worst_e, mut worst_spk) = (0.0f64, 0.0f64);
    let mut order = vec![0, 1, 2];
    for _ in 0..10 {
        order.shuffle(&mut rng);
        let (e, spk) = attend(&order)?;
        worst_e = worst_e.max(max_abs(&e, &base_e));
        let d = spk
            .as_slice()
            .iter()
            .zip(base_spk.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_spk = worst_spk.max(d);
    }
    let detail = format!(
        "10 permutations, attend max-abs {worst_e:.1e}, fixed_embed max-abs {worst_spk:.1e}"
    );
    ensure(worst_e < 1e-5 && worst_spk < 1e-5, detail.clone())?;
    within(t0.elapsed(), 30.0, detail)
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig {
        hidden: 8,
        encoder_blocks: 1,
        decoder_blocks: 1,
        heads: 2,
        filter: 6,
        kernel: 3,
        n_mels: 5,
        pitch_bins: 6,
        dropout: 0.0,
        n_phonemes: 4,
        spk_dim: 3,
        hf_dim: 4,
        ..ModelConfig::toy(4)
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = AcousticModel::new(&mut store, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let x = AcousticInputs {
        phonemes: vec![1, 0, 3],
        durations: vec![2, 3, 1],
        pitch_bins: vec![0, 2, 2, 5, 5, 1],
    };
    let spk = SpeakerEmbedding::from_raw(vec![0.3, -0.8, 0.5]).map_err(|e| e.to_string())?;
    let hf = random(6, 4, &mut rng);
    let target = model
        .forward(&store, &x, &spk, Some(&hf))
        .map_err(|e| e.to_string())?
        - 0.5;
    let cells = target.len() as f64;
    let am = finite_difference_check(&store, 1e-5, |g| {
        let y = model
            .forward_graph(g, &x, &spk, Some(&hf))
            .expect("forward");
        let l = g.l1_sum(y, target.clone(), 6);
        g.scale(l, 1.0 / cells)
    });

    let mr_cfg = MultiRefConfig {
        conv_channels: 3,
        lstm_hidden: 2,
        d_m: 4,
        heads: 2,
        ..MultiRefConfig::default()
    };
    let mut store = ParamStore::new();
    let enc = MultiRefEncoder::new(&mut store, "mr", &mr_cfg, 80, 3, &mut rng)
        .map_err(|e| e.to_string())?;
    let refs = vec![
        random(16, 80, &mut rng).mapv(|v| 0.3 * v),
        random(13, 80, &mut rng).mapv(|v| 0.3 * v),
    ];
    let h = random(4, 3, &mut rng);
    let s0 = enc
        .encode_references(&store, &refs)
        .map_err(|e| e.to_string())?;
    let target = enc.attend(&store, &h, &s0).map_err(|e| e.to_string())?.e - 0.5;
    let cells = target.len() as f64;
    let mr = finite_difference_check(&store, 1e-5, |g| {
        let (s, _) = enc.encode_graph(g, &refs).expect("encode");
        let hv = g.constant(h.clone());
        let (e, _, _) = enc.attend_graph(g, hv, s).expect("attend");
        let l = g.l1_sum(e, target.clone(), 4);
        g.scale(l, 1.0 / cells)
    });
    let detail = format!(
        "acoustic model {} params max rel {:.1e}; multi-ref encoder + attention {} params max rel {:.1e}",
        am.checked, am.max_rel_error, mr.checked, mr.max_rel_error
    );
    ensure(
        am.max_rel_error < 1e-4 && mr.max_rel_error < 1e-4,
        format!("{detail} (worst {} / {})", am.worst, mr.worst),
    )?;
    within(t0.elapsed(), 300.0, detail)
}

fn shapes_and_determinism() -> Outcome {
    let t0 = Instant::now();
    let n_ph = 9;
    let toy = SynthConfig::toy(n_ph);
    let configs = [
        ("toy", toy.clone()),
        (
            "toy without multi-ref",
            SynthConfig {
                use_multi_ref: false,
                ..toy
            },
        ),
        ("full size", SynthConfig::paper(n_ph)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut shapes = Vec::new();
    for (name, cfg) in &configs {
        let a = Synthesizer::new(cfg).map_err(|e| e.to_string())?;
        let b = Synthesizer::new(cfg).map_err(|e| e.to_string())?;
        let durations: Vec<usize> = (0..5).map(|_| rng.random_range(1..9)).collect();
        let total: usize = durations.iter().sum();
        let x = AcousticInputs {
            phonemes: (0..5).map(|_| rng.random_range(0..n_ph)).collect(),
            durations,
            pitch_bins: (0..total).map(|_| rng.random_range(0..256)).collect(),
        };
        let refs: Vec<Mat> = [20, 33]
            .iter()
            .map(|&n| random(n, 80, &mut rng).mapv(|v| 0.5 + 0.5 * v))
            .collect();
        let spk =
            SpeakerEmbedding::from_raw((0..256).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        let y1 = a.predict(&x, &spk, &refs).map_err(|e| e.to_string())?;
        let y2 = a.predict(&x, &spk, &refs).map_err(|e| e.to_string())?;
        let y3 = b.predict(&x, &spk, &refs).map_err(|e| e.to_string())?;
        if y1.dim() != (total, 80) {
            return Err(format!("{name}: shape {:?}, want ({total}, 80)", y1.dim()));
        }
        let same = |p: &Mat, q: &Mat| p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits());
        if !same(&y1, &y2) || !same(&y1, &y3) {
            return Err(format!("{name}: repeated evaluation differs"));
        }
        shapes.push(format!("{name} {}x{}", y1.nrows(), y1.ncols()));
    }
    within(
        t0.elapsed(),
        60.0,
        format!("{}; repeated calls bit-identical", shapes.join(", ")),
    )
}

struct Trained {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    run: PathBuf,
}

fn eval_l1(synth: &Synthesizer, set: &TrainSet, n_refs: usize) -> Result<f64, String> {
    let longest = (0..set.len()).map(|i| set.frames(i)).max().unwrap_or(0);
    let pad = |m: &Mat, fill: f64| {
        let mut out = Mat::from_elem((longest, m.ncols()), fill);
        out.slice_mut(ndarray::s![..m.nrows(), ..]).assign(m);
        out
    };
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut lengths = Vec::new();
    for item in &set.items {
        let refs: Vec<Mat> = item
            .candidates
            .iter()
            .cycle()
            .take(n_refs)
            .map(|&j| set.items[j].target.clone())
            .collect();
        let y = synth
            .predict(&item.inputs, &item.spk, &refs)
            .map_err(|e| e.to_string())?;
        preds.push(pad(&y, 0.0));
        targets.push(pad(&item.target, 1.0));
        lengths.push(item.target.nrows());
    }
    masked_l1(&preds, &targets, &lengths).map_err(|e| e.to_string())
}

const MIN_STEPS: u64 = 400;

fn toy_overfit(trained: &mut Option<Trained>) -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    let manifest = generate_toy_corpus(&corpus, 2, 4, 7).map_err(|e| e.to_string())?;
    let cfg = SynthConfig::toy(manifest.inventory.len());
    let synth = Synthesizer::new(&cfg).map_err(|e| e.to_string())?;
    let set = TrainSet::from_manifest(&synth, &manifest).map_err(|e| e.to_string())?;
    let ocfg = OptimizerConfig::toy();
    let mut tr = Trainer::new(synth, &ocfg).map_err(|e| e.to_string())?;
    let baseline = eval_l1(&tr.synth, &set, ocfg.n_refs)?;
    let mut reached: Option<(u64, f64)> = None;
    let mut last = baseline;
    while tr.step < ocfg.max_steps && (reached.is_none() || tr.step < MIN_STEPS) {
        let batch = tr.next_batch(&set).map_err(|e| e.to_string())?;
        tr.train_step(&set, &batch, Exec::default())
            .map_err(|e| e.to_string())?;
        if tr.step % 25 == 0 {
            last = eval_l1(&tr.synth, &set, ocfg.n_refs)?;
            if reached.is_none() && last < 0.08 {
                reached = Some((tr.step, last));
            }
        }
    }
    tr.save_checkpoint(&run).map_err(|e| e.to_string())?;
    fs::copy(corpus.join(PHONES_FILE), run.join(PHONES_FILE)).map_err(|e| e.to_string())?;
    *trained = Some(Trained {
        _dir: dir,
        corpus,
        run,
    });
    let elapsed = t0.elapsed();
    let Some((step, l1)) = reached else {
        return Err(format!(
            "mel L1 {last:.4} after {} steps (baseline {baseline:.4})",
            tr.step
        ));
    };
    let detail = format!(
        "mel L1 {l1:.4} at step {step} (baseline {baseline:.4}, ratio {:.1}x); {last:.4} at step {}",
        baseline / l1,
        tr.step
    );
    ensure(baseline >= 3.0 * l1, detail.clone())?;
    within(elapsed, 900.0, detail)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mrsvs"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`mrsvs {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn summary(dir: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(dir.join("summary.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn conversion_self_consistency(trained: &Option<Trained>) -> Outcome {
    let t0 = Instant::now();
    let t = trained.as_ref().ok_or("no trained toy model")?;
    let fc = FeatureConfig::default();
    let m = CorpusManifest::read(&t.corpus).map_err(|e| e.to_string())?;
    let out_root = t.run.join("convert");
    let mut lines = Vec::new();
    let mut ok = true;
    for e in m.entries.iter().filter(|e| e.speaker == "spk00") {
        let wav = t.corpus.join(e.wav.as_ref().ok_or("missing wav")?);
        let mut dev = [0.0; 2];
        for (k, flag) in [None, Some("--no-pitch-shift")].into_iter().enumerate() {
            let out = out_root.join(format!("{}_{k}", e.id));
            let mut args = vec![
                "convert",
                "--source-audio",
                p(&wav),
                "--refs",
                p(&t.corpus),
                "--ref-speaker",
                "spk01",
                "--ckpt",
                p(&t.run),
                "--out",
                p(&out),
            ];
            args.extend(flag);
            cli(&args)?;
            let s = summary(&out)?;
            let target = s["reference_voiced_mean"]
                .as_f64()
                .ok_or("no reference mean")?;
            let audio =
                read_wav(&out.join("converted.wav"), fc.sample_rate).map_err(|e| e.to_string())?;
            let est = extract_f0(&audio, &fc).map_err(|e| e.to_string())?;
            dev[k] = voiced_mean(&est.values)
                .map(|v| (v - target).abs() / target)
                .unwrap_or(1.0);
        }
        ok &= dev[0] < 0.10 && dev[1] > dev[0];
        lines.push(format!(
            "{} {:.1}% vs {:.1}%",
            e.id,
            100.0 * dev[0],
            100.0 * dev[1]
        ));
    }
    if lines.is_empty() {
        return Err("no male source utterances".into());
    }
    let detail = format!("deviation with vs without shift: {}", lines.join(", "));
    ensure(ok, detail.clone())?;
    within(t0.elapsed(), 300.0, detail)
}

fn schedule_check() -> Outcome {
    let lr = lr_schedule(4000, 256, 4000).map_err(|e| e.to_string())?;
    let formula = 256f64.powf(-0.5) * 4000f64.powf(-0.5);
    let oracle = 1.0 / (1_024_000f64).sqrt();
    let detail =
        format!("lr(4000) = {lr:.6e}, formula {formula:.6e}, 1/sqrt(256*4000) = {oracle:.6e}");
    ensure(
        lr == formula && (lr - 9.8821e-4).abs() < 1e-8 && (lr - oracle).abs() < 1e-15,
        detail,
    )
}

fn controllability_sweep(trained: &Option<Trained>) -> Outcome {
    let t = trained.as_ref().ok_or("no trained toy model")?;
    let fc = FeatureConfig::default();
    let m = CorpusManifest::read(&t.corpus).map_err(|e| e.to_string())?;
    let e = m
        .entries
        .iter()
        .find(|e| e.speaker == "spk00")
        .ok_or("no utterance")?;
    let utt = m.load_utterance(e, &fc, false).map_err(|e| e.to_string())?;
    let mut score = String::new();
    let mut frame = 0;
    for (&ph, &d) in utt.alignment.phonemes.iter().zip(&utt.alignment.durations) {
        let f0: Vec<String> = utt.f0.values[frame..frame + d]
            .iter()
            .map(|v| v.to_string())
            .collect();
        score.push_str(&format!(
            "{} {d} {}\n",
            m.inventory.label(ph).unwrap(),
            f0.join(",")
        ));
        frame += d;
    }
    let score_path = t.run.join("score.txt");
    fs::write(&score_path, score).map_err(|e| e.to_string())?;
    let mut bins = Vec::new();
    let mut plots = Vec::new();
    for offset in ["-2", "0", "2"] {
        let out = t.run.join(format!("sweep{offset}"));
        cli(&[
            "synthesize",
            "--score",
            p(&score_path),
            "--refs",
            p(&t.corpus),
            "--ref-speaker",
            "spk01",
            "--ckpt",
            p(&t.run),
            "--pitch-offset",
            offset,
            "--out",
            p(&out),
        ])?;
        let s = summary(&out)?;
        let b: Vec<u64> = s["pitch_bins"]
            .as_array()
            .ok_or("no bins")?
            .iter()
            .filter_map(Value::as_u64)
            .collect();
        bins.push(b);
        plots.push(fs::read(out.join("mel.png")).map_err(|e| e.to_string())?);
    }
    let top = (ModelConfig::toy(9).pitch_bins - 1) as u64;
    let mut voiced = 0;
    for (f, &hz) in utt.f0.values.iter().enumerate() {
        let (lo, mid, hi) = (bins[0][f], bins[1][f], bins[2][f]);
        if hz > 0.0 {
            let strict = lo < mid && mid < hi;
            if !(strict || (hi == top && lo <= mid && mid <= hi)) {
                return Err(format!("frame {f}: bins {lo}, {mid}, {hi} not increasing"));
            }
            voiced += 1;
        } else if !(lo == 0 && mid == 0 && hi == 0) {
            return Err(format!("unvoiced frame {f} got bins {lo}, {mid}, {hi}"));
        }
    }
    let distinct = plots[0] != plots[1] && plots[1] != plots[2] && plots[0] != plots[2];
    let shift = |a: &[u64], b: &[u64]| {
        let v: Vec<f64> = a
            .iter()
            .zip(b)
            .filter(|(x, _)| **x > 0)
            .map(|(x, y)| *y as f64 - *x as f64)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let detail = format!(
        "{voiced} voiced frames rise monotonically (mean +{:.1} and +{:.1} bins per 2 semitones); {} distinct mel plots",
        shift(&bins[0], &bins[1]),
        shift(&bins[1], &bins[2]),
        if distinct { 3 } else { 0 }
    );
    ensure(distinct && voiced > 0, detail)
}

fn run(n: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] {n}. {title}: {detail} [{secs:.1} s]");
    outcome.is_ok()
}

fn main() {
    let mut trained = None;
    let results = [
        run(1, "pitch-shift invariants", pitch_shift_invariants),
        run(2, "attention oracle", attention_oracle),
        run(
            3,
            "reference permutation invariance",
            permutation_invariance,
        ),
        run(4, "gradient checks", gradient_checks),
        run(5, "shapes and determinism", shapes_and_determinism),
        run(6, "toy overfit", || toy_overfit(&mut trained)),
        run(7, "conversion self-consistency", || {
            conversion_self_consistency(&trained)
        }),
        run(8, "learning-rate schedule", schedule_check),
        run(9, "controllability sweep", || {
            controllability_sweep(&trained)
        }),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
