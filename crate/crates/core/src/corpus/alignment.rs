//! Plain-text interval alignments.
//!
//! ```text
//! # frames 173
//! sil    0.000000000    0.046439909
//! n0    0.046439909    0.203174603
//! ```
//!
//! One `label start_s end_s` row per phoneme, tab or space separated. The
//! optional `# frames N` header pins the frame count of the paired features.

use std::fmt::Write as _;
use std::path::Path;

use super::{PhonemeAlignment, PhonemeInventory};
use crate::error::{Error, Result};

const EPS_S: f64 = 1e-6;

/// Converts intervals to frame counts by rounding each boundary to the
/// nearest frame. When a header frame count is present, any rounding drift is
/// absorbed by the final phoneme.
pub fn parse_alignment(
    text: &str,
    hop_s: f64,
    inventory: &PhonemeInventory,
) -> Result<PhonemeAlignment> {
    if hop_s.is_nan() || hop_s <= 0.0 {
        return Err(Error::invalid("hop must be positive"));
    }
    let mut header_frames = None;
    let mut phonemes = Vec::new();
    let mut bounds: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("frames") {
                let n = it
                    .next()
                    .and_then(|v| v.parse::<usize>().ok())
                    .ok_or_else(|| Error::Alignment {
                        row,
                        detail: "bad frames header".into(),
                    })?;
                header_frames = Some(n);
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(Error::Alignment {
                row,
                detail: format!("expected 3 columns, found {}", cols.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Alignment {
                    row,
                    detail: format!("bad time {s:?}"),
                })
        };
        let (start, end) = (parse(cols[1])?, parse(cols[2])?);
        if start < 0.0 || end + EPS_S < start {
            return Err(Error::Alignment {
                row,
                detail: format!("non-monotonic interval {start}..{end}"),
            });
        }
        if let Some(&(_, prev_end)) = bounds.last() {
            if start + EPS_S < prev_end {
                return Err(Error::Alignment {
                    row,
                    detail: format!(
                        "interval starting at {start} overlaps previous end {prev_end}"
                    ),
                });
            }
        }
        let id = inventory
            .id(cols[0])
            .ok_or_else(|| Error::UnknownPhoneme(cols[0].to_string()))?;
        phonemes.push(id);
        bounds.push((start, end));
    }
    if phonemes.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    let to_frame = |t: f64| (t / hop_s).round() as i64;
    let mut durations: Vec<i64> = bounds
        .iter()
        .map(|&(s, e)| (to_frame(e) - to_frame(s)).max(0))
        .collect();
    if let Some(total) = header_frames {
        let sum: i64 = durations.iter().sum();
        let last = durations.last_mut().expect("non-empty");
        *last += total as i64 - sum;
        if *last < 0 {
            return Err(Error::Alignment {
                row: phonemes.len(),
                detail: format!("cannot match header frame count {total} (sum {sum})"),
            });
        }
    }
    PhonemeAlignment::new(
        phonemes,
        durations.into_iter().map(|d| d as usize).collect(),
    )
}

pub fn load_alignment(
    path: &Path,
    hop_s: f64,
    inventory: &PhonemeInventory,
) -> Result<PhonemeAlignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&text, hop_s, inventory)
}

pub fn format_alignment(
    a: &PhonemeAlignment,
    inventory: &PhonemeInventory,
    hop_s: f64,
) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# frames {}", a.total_frames()).expect("string write");
    let mut at = 0usize;
    for (&p, &d) in a.phonemes.iter().zip(&a.durations) {
        let label = inventory.label(p).ok_or(Error::PhonemeOutOfRange {
            id: p,
            inventory: inventory.len(),
        })?;
        writeln!(
            out,
            "{label}\t{:.9}\t{:.9}",
            at as f64 * hop_s,
            (at + d) as f64 * hop_s
        )
        .expect("string write");
        at += d;
    }
    Ok(out)
}

pub fn write_alignment(
    path: &Path,
    a: &PhonemeAlignment,
    inventory: &PhonemeInventory,
    hop_s: f64,
) -> Result<()> {
    let text = format_alignment(a, inventory, hop_s)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
