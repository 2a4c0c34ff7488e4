//! Deterministic "toy singer" corpus.
//!
//! Each speaker has a pitch center and an 80-band spectral envelope over mel
//! band centers. Utterances are sequences of constant-pitch notes separated
//! by silences; audio is a phase-continuous harmonic sum whose partial
//! amplitudes follow the speaker's envelope. Alignments and f0 are exact by
//! construction.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, PhonemeAlignment, PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{extract_mel_with, hz_to_mel, mel_filterbank, FeatureConfig, PitchContour};
use crate::wav;

/// Note symbols `n0..n{K-1}`; the inventory adds `sil` as id `K`.
pub const TOY_NOTE_SYMBOLS: usize = 8;
pub const SPEAKERS_FILE: &str = "speakers.json";

const FADE_SAMPLES: usize = 64;
const PEAK_LEVEL: f64 = 0.45;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

pub fn toy_inventory() -> PhonemeInventory {
    let mut labels: Vec<String> = (0..TOY_NOTE_SYMBOLS).map(|i| format!("n{i}")).collect();
    labels.push("sil".into());
    PhonemeInventory::new(labels).expect("toy labels are unique")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpeakerSpec {
    pub speaker_id: String,
    pub gender: String,
    pub base_f0: f64,
    /// Width in Hz of the note range centered (in log pitch) on `base_f0`.
    pub f0_range: f64,
    /// Harmonic amplitude template over the 80 mel band centers.
    pub envelope: Vec<f64>,
    pub seed: u64,
}

/// One segment of an utterance plan: a note or a silence.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub phoneme: usize,
    pub frames: usize,
    /// Commanded pitch; `0.0` for silence.
    pub f0: f64,
}

const SEMITONE_SPAN: f64 = 5.0;

impl ToySpeakerSpec {
    /// Even indices are "male" (lower center), odd indices "female".
    pub fn draw(index: usize, seed: u64, n_mels: usize) -> Self {
        let spk_seed = sub_seed(seed, index as u64, u64::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(spk_seed);
        let male = index.is_multiple_of(2);
        let base_f0 = if male {
            rng.random_range(115.0..150.0)
        } else {
            rng.random_range(250.0..320.0)
        };
        let f0_range =
            base_f0 * (2f64.powf(SEMITONE_SPAN / 12.0) - 2f64.powf(-SEMITONE_SPAN / 12.0));
        let formants: Vec<(f64, f64, f64)> = [(8.0, 22.0), (26.0, 42.0), (46.0, 62.0)]
            .iter()
            .map(|&(lo, hi)| {
                (
                    rng.random_range(lo..hi),
                    rng.random_range(2.0..5.0),
                    rng.random_range(0.4..1.0),
                )
            })
            .collect();
        let tilt = rng.random_range(18.0..32.0);
        let envelope = (0..n_mels)
            .map(|m| {
                let m = m as f64;
                let bumps: f64 = formants
                    .iter()
                    .map(|&(c, w, a)| a * (-(m - c) * (m - c) / (2.0 * w * w)).exp())
                    .sum();
                (-m / tilt).exp() * (0.1 + bumps)
            })
            .collect();
        ToySpeakerSpec {
            speaker_id: format!("spk{index:02}"),
            gender: if male { "male" } else { "female" }.into(),
            base_f0,
            f0_range,
            envelope,
            seed: spk_seed,
        }
    }

    fn envelope_at(&self, hz: f64, centers_mel: &[f64]) -> f64 {
        let m = hz_to_mel(hz);
        let n = centers_mel.len();
        if m <= centers_mel[0] {
            return self.envelope[0];
        }
        if m >= centers_mel[n - 1] {
            return self.envelope[n - 1];
        }
        let j = centers_mel.partition_point(|&c| c <= m);
        let (a, b) = (centers_mel[j - 1], centers_mel[j]);
        let w = (m - a) / (b - a);
        self.envelope[j - 1] * (1.0 - w) + self.envelope[j] * w
    }

    /// Random note plan with leading and trailing silence.
    pub fn plan(&self, rng: &mut impl Rng) -> Vec<Segment> {
        let sil = TOY_NOTE_SYMBOLS;
        let mut segs = vec![Segment {
            phoneme: sil,
            frames: rng.random_range(6..=12),
            f0: 0.0,
        }];
        let notes = rng.random_range(4..=7).min(TOY_NOTE_SYMBOLS);
        for k in 0..notes {
            let semis = rng.random_range(-SEMITONE_SPAN..SEMITONE_SPAN);
            let f0 = (self.base_f0 * 2f64.powf(semis / 12.0)) as f32 as f64;
            segs.push(Segment {
                phoneme: k,
                frames: rng.random_range(14..=28),
                f0,
            });
            if k + 1 < notes && rng.random_bool(0.5) {
                segs.push(Segment {
                    phoneme: sil,
                    frames: rng.random_range(3..=6),
                    f0: 0.0,
                });
            }
        }
        segs.push(Segment {
            phoneme: sil,
            frames: rng.random_range(6..=12),
            f0: 0.0,
        });
        segs
    }

    /// Renders `(T - 1) * hop` samples for a plan covering `T` frames.
    pub fn synthesize(&self, plan: &[Segment], cfg: &FeatureConfig) -> Vec<f64> {
        let frames: usize = plan.iter().map(|s| s.frames).sum();
        let hop = cfg.hop_size;
        let n = frames.saturating_sub(1) * hop;
        let (_, centers) = mel_filterbank(cfg);
        let centers_mel: Vec<f64> = centers.iter().map(|&c| hz_to_mel(c)).collect();
        let sr = cfg.sample_rate as f64;
        let top = 0.95 * cfg.fmax.min(sr / 2.0);

        let mut frame_seg = Vec::with_capacity(frames);
        for (i, s) in plan.iter().enumerate() {
            frame_seg.extend(std::iter::repeat_n(i, s.frames));
        }
        // sample i belongs to the frame whose center is nearest
        let seg_of = |i: usize| frame_seg[((i + hop / 2) / hop).min(frames - 1)];

        let mut out = vec![0.0; n];
        let mut phase = 0.0f64;
        let mut i = 0;
        while i < n {
            let s = seg_of(i);
            let mut j = i;
            while j < n && seg_of(j) == s {
                j += 1;
            }
            let f0 = plan[s].f0;
            if f0 > 0.0 {
                let partials: Vec<(f64, f64)> = (1..)
                    .map(|k| k as f64)
                    .take_while(|k| k * f0 < top)
                    .map(|k| (k, self.envelope_at(k * f0, &centers_mel)))
                    .collect();
                let norm: f64 = partials.iter().map(|p| p.1).sum::<f64>().max(1e-12);
                let gain = PEAK_LEVEL / norm;
                let len = j - i;
                let fade = FADE_SAMPLES.min(len / 2);
                for (off, o) in out[i..j].iter_mut().enumerate() {
                    let mut v = 0.0;
                    for &(k, a) in &partials {
                        v += a * (k * phase).sin();
                    }
                    let edge = off.min(len - 1 - off);
                    let ramp = if edge < fade {
                        0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos()
                    } else {
                        1.0
                    };
                    *o = gain * v * ramp;
                    phase = (phase + TAU * f0 / sr) % TAU;
                }
            }
            i = j;
        }
        out
    }
}

pub fn generate_toy_corpus(
    out: &Path,
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
) -> Result<CorpusManifest> {
    generate_toy_corpus_with(
        out,
        n_speakers,
        utts_per_speaker,
        seed,
        &FeatureConfig::default(),
        Exec::default(),
    )
}

/// Writes a complete corpus directory. Identical arguments give a
/// byte-identical directory.
pub fn generate_toy_corpus_with(
    out: &Path,
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
    cfg: &FeatureConfig,
    exec: Exec,
) -> Result<CorpusManifest> {
    if n_speakers == 0 || utts_per_speaker == 0 {
        return Err(Error::invalid(
            "need at least one speaker and one utterance per speaker",
        ));
    }
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let speakers: Vec<ToySpeakerSpec> = (0..n_speakers)
        .map(|i| ToySpeakerSpec::draw(i, seed, cfg.n_mels))
        .collect();
    let spk_path = out.join(SPEAKERS_FILE);
    let json = serde_json::to_string_pretty(&speakers).expect("speaker specs serialize");
    fs::write(&spk_path, json).map_err(|e| Error::io(&spk_path, e))?;

    let mut manifest = CorpusManifest::new(out, cfg, toy_inventory());
    let jobs: Vec<(usize, usize)> = (0..n_speakers)
        .flat_map(|s| (0..utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let m = &manifest;
    manifest.entries = exec.try_map(&jobs, |&(s, u)| {
        let spk = &speakers[s];
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, s as u64, u as u64));
        let plan = spk.plan(&mut rng);
        let utt = render_utterance(spk, &format!("{}_utt{u:03}", spk.speaker_id), &plan, cfg)?;
        m.save_utterance(&utt, cfg)
    })?;
    manifest.write()?;
    Ok(manifest)
}

/// Builds the utterance for a plan; features come from the 16-bit audio so
/// re-extraction from the stored wav reproduces them.
pub fn render_utterance(
    spk: &ToySpeakerSpec,
    id: &str,
    plan: &[Segment],
    cfg: &FeatureConfig,
) -> Result<Utterance> {
    let audio: Vec<f64> = spk
        .synthesize(plan, cfg)
        .iter()
        .map(|&v| wav::to_i16(v) as f64 / i16::MAX as f64)
        .collect();
    let mel = extract_mel_with(&audio, cfg, Exec::Sequential)?;
    let alignment = PhonemeAlignment::new(
        plan.iter().map(|s| s.phoneme).collect(),
        plan.iter().map(|s| s.frames).collect(),
    )?;
    let f0 = PitchContour::new(
        plan.iter()
            .flat_map(|s| std::iter::repeat_n(s.f0, s.frames))
            .collect(),
    );
    debug_assert_eq!(mel.frames(), alignment.total_frames());
    Ok(Utterance {
        id: id.to_string(),
        speaker_id: spk.speaker_id.clone(),
        alignment,
        f0,
        mel,
        waveform: Some(audio),
    })
}

pub fn read_speaker_specs(root: &Path) -> Result<Vec<ToySpeakerSpec>> {
    let p = root.join(SPEAKERS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("speakers.json", e.to_string()))
}
