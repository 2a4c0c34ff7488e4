//! Score files for `synthesize`.
//!
//! One segment per line: `label frames f0`, where `f0` is a single Hz
//! value held for the segment or a comma-separated per-frame list. `0`
//! marks unvoiced frames. Blank lines and `#` comments are skipped.

use mrsvs_core::corpus::{PhonemeAlignment, PhonemeInventory};
use mrsvs_core::signal::PitchContour;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub alignment: PhonemeAlignment,
    pub f0: PitchContour,
}

pub fn parse_score(text: &str, inventory: &PhonemeInventory) -> CliResult<Score> {
    let mut phonemes = Vec::new();
    let mut durations = Vec::new();
    let mut f0 = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |why: &str| CliError::usage(format!("score line {}: {why}: {raw:?}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [label, frames, pitch] = fields[..] else {
            return Err(bad("expected `label frames f0`"));
        };
        let id = inventory.id(label).ok_or_else(|| bad("unknown phoneme"))?;
        let frames: usize = frames
            .parse()
            .map_err(|_| bad("frames must be a positive integer"))?;
        if frames == 0 {
            return Err(bad("frames must be a positive integer"));
        }
        let values = pitch
            .split(',')
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("f0 must be non-negative Hz"))?;
        match values.len() {
            1 => f0.extend(std::iter::repeat_n(values[0], frames)),
            k if k == frames => f0.extend(values),
            k => return Err(bad(&format!("{k} f0 values for {frames} frames"))),
        }
        phonemes.push(id);
        durations.push(frames);
    }
    if phonemes.is_empty() {
        return Err(CliError::usage("score has no segments"));
    }
    let alignment =
        PhonemeAlignment::new(phonemes, durations).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(Score {
        alignment,
        f0: PitchContour::new(f0),
    })
}
