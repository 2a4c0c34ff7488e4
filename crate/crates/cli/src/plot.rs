//! Static PNG diagnostics: mel heatmaps with f0 lines.

use std::path::Path;

use image::{Rgb, RgbImage};
use mrsvs_core::autodiff::Mat;
use mrsvs_core::signal::hz_to_mel;

use crate::error::{CliError, CliResult};

const PX_PER_FRAME: u32 = 2;
const PX_PER_BAND: u32 = 3;
const F0_PANEL: u32 = 160;
const GAP: u32 = 6;

/// Anchors of a perceptually ordered dark-to-bright colormap.
const RAMP: [[f64; 3]; 5] = [
    [0.050, 0.030, 0.200],
    [0.330, 0.060, 0.430],
    [0.710, 0.210, 0.330],
    [0.970, 0.550, 0.040],
    [0.990, 0.990, 0.640],
];

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const CYAN: Rgb<u8> = Rgb([40, 220, 240]);
const ORANGE: Rgb<u8> = Rgb([250, 140, 20]);
const GREY: Rgb<u8> = Rgb([70, 70, 70]);

pub fn colormap(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = v * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let t = x - i as f64;
    let c = |k: usize| {
        let y = RAMP[i][k] * (1.0 - t) + RAMP[i + 1][k] * t;
        (y * 255.0).round() as u8
    };
    Rgb([c(0), c(1), c(2)])
}

/// Where an f0 lands among the mel bands, as a fraction of the axis.
fn mel_fraction(hz: f64, fmax: f64) -> f64 {
    (hz_to_mel(hz) / hz_to_mel(fmax)).clamp(0.0, 1.0)
}

fn draw_mel(img: &mut RgbImage, top: u32, mel: &Mat) {
    let bands = mel.ncols() as u32;
    for (t, row) in mel.rows().into_iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            let colour = colormap(v);
            let y0 = top + (bands - 1 - b as u32) * PX_PER_BAND;
            for dx in 0..PX_PER_FRAME {
                for dy in 0..PX_PER_BAND {
                    img.put_pixel(t as u32 * PX_PER_FRAME + dx, y0 + dy, colour);
                }
            }
        }
    }
}

/// Draws a contour into the band `[top, top + height)`; unvoiced frames
/// break the line.
fn draw_contour(
    img: &mut RgbImage,
    top: u32,
    height: u32,
    f0: &[f64],
    y_of: impl Fn(f64) -> f64,
    colour: Rgb<u8>,
) {
    let to_px = |hz: f64| {
        let y = (1.0 - y_of(hz)) * (height - 1) as f64;
        top + y.round().clamp(0.0, (height - 1) as f64) as u32
    };
    let mut prev: Option<u32> = None;
    for (t, &hz) in f0.iter().enumerate() {
        if hz <= 0.0 || !hz.is_finite() {
            prev = None;
            continue;
        }
        let y = to_px(hz);
        let (lo, hi) = match prev {
            Some(p) => (p.min(y), p.max(y)),
            None => (y, y),
        };
        for x in t as u32 * PX_PER_FRAME..(t as u32 + 1) * PX_PER_FRAME {
            for yy in lo..=hi {
                img.put_pixel(x, yy, colour);
            }
        }
        prev = Some(y);
    }
}

fn save(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path)
        .map_err(|e| CliError::runtime(format!("cannot write plot {}: {e}", path.display())))
}

/// Mel heatmap (time left to right, low bands at the bottom) with the
/// input f0 drawn at its mel-axis position.
pub fn mel_with_f0(path: &Path, mel: &Mat, f0: &[f64], fmax: f64) -> CliResult<()> {
    let frames = mel.nrows().max(1) as u32;
    let height = mel.ncols() as u32 * PX_PER_BAND;
    let mut img = RgbImage::from_pixel(frames * PX_PER_FRAME, height.max(1), GREY);
    draw_mel(&mut img, 0, mel);
    draw_contour(&mut img, 0, height, f0, |hz| mel_fraction(hz, fmax), WHITE);
    save(&img, path)
}

/// Top panel: input and shifted f0 on a log-frequency axis. Bottom panel:
/// output mel.
pub fn conversion(path: &Path, input_f0: &[f64], shifted_f0: &[f64], mel: &Mat) -> CliResult<()> {
    let frames = mel.nrows().max(input_f0.len()).max(1) as u32;
    let mel_h = mel.ncols() as u32 * PX_PER_BAND;
    let mut img = RgbImage::from_pixel(
        frames * PX_PER_FRAME,
        F0_PANEL + GAP + mel_h,
        Rgb([20, 20, 20]),
    );
    let voiced = input_f0
        .iter()
        .chain(shifted_f0)
        .copied()
        .filter(|&v| v > 0.0);
    let (lo, hi) = voiced.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() {
        (lo.ln() - 0.1, hi.ln() + 0.1)
    } else {
        (0.0, 1.0)
    };
    let y_of = |hz: f64| (hz.ln() - lo) / (hi - lo);
    draw_contour(&mut img, 0, F0_PANEL, input_f0, y_of, CYAN);
    draw_contour(&mut img, 0, F0_PANEL, shifted_f0, y_of, ORANGE);
    draw_mel(&mut img, F0_PANEL + GAP, mel);
    save(&img, path)
}
