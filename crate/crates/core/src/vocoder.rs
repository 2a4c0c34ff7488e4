//! Vocoder input stack: a discrete pitch embedding concatenated with the mel
//! and fused by a fully connected layer, followed by a waveform backend.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{invert_mel_with, FeatureConfig};

const TABLE_SEED: u64 = 0x766f_636f_6465_7231;

/// Conditioning weights: pitch table `[bins x W]`, fuse `[(n_mels + W) x n_mels]`
/// and bias `[1 x n_mels]`, with `W` the pitch embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct VocoderFrontEnd {
    pub table: Mat,
    pub fuse: Mat,
    pub bias: Mat,
}

impl VocoderFrontEnd {
    pub fn new(table: Mat, fuse: Mat, bias: Mat) -> Result<Self> {
        let n_mels = fuse.ncols();
        if fuse.nrows() != n_mels + table.ncols() || bias.dim() != (1, n_mels) {
            return Err(Error::Shape(format!(
                "fuse {:?} and bias {:?} do not match a {}-wide pitch table",
                fuse.dim(),
                bias.dim(),
                table.ncols()
            )));
        }
        Ok(VocoderFrontEnd { table, fuse, bias })
    }

    /// Untrained front end: seeded random pitch table and fuse `[I; 0]`,
    /// so the fused output equals the mel.
    pub fn untrained(pitch_bins: usize, n_mels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
        let n = Normal::new(0.0, 0.1).expect("valid std");
        let table = Array2::from_shape_fn((pitch_bins, n_mels), |_| n.sample(&mut rng));
        let mut fuse = Array2::zeros((2 * n_mels, n_mels));
        fuse.slice_mut(s![..n_mels, ..])
            .assign(&Array2::eye(n_mels));
        VocoderFrontEnd {
            table,
            fuse,
            bias: Array2::zeros((1, n_mels)),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.fuse.ncols()
    }

    pub fn pitch_bins(&self) -> usize {
        self.table.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderConditioning {
    /// `[T x n_mels]`.
    pub fused: Mat,
    pub mel: Mat,
    pub pitch_bins: Vec<usize>,
}

impl VocoderConditioning {
    pub fn frames(&self) -> usize {
        self.fused.nrows()
    }
}

/// `concat(mel_t, table[bin_t]) * fuse + bias` for every frame.
pub fn build_conditioning(
    mel: &Mat,
    pitch_bins: &[usize],
    front: &VocoderFrontEnd,
) -> Result<VocoderConditioning> {
    if mel.nrows() != pitch_bins.len() {
        return Err(Error::LengthMismatch {
            stream: "pitch_bins",
            expected: mel.nrows(),
            actual: pitch_bins.len(),
        });
    }
    if mel.ncols() != front.n_mels() {
        return Err(Error::Shape(format!(
            "mel has {} bands, expected {}",
            mel.ncols(),
            front.n_mels()
        )));
    }
    if let Some(&b) = pitch_bins.iter().find(|&&b| b >= front.pitch_bins()) {
        return Err(Error::invalid(format!(
            "pitch bin {b} outside table of {}",
            front.pitch_bins()
        )));
    }
    let pitch = front.table.select(Axis(0), pitch_bins);
    let joined = concatenate(Axis(1), &[mel.view(), pitch.view()]).expect("equal row counts");
    let fused = joined.dot(&front.fuse) + &front.bias;
    Ok(VocoderConditioning {
        fused,
        mel: mel.clone(),
        pitch_bins: pitch_bins.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocoderBackend {
    /// Treats fused features as a normalized mel and runs Griffin-Lim.
    GriffinLim { iters: usize },
}

impl Default for VocoderBackend {
    fn default() -> Self {
        VocoderBackend::GriffinLim { iters: 60 }
    }
}

impl FromStr for VocoderBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "griffin-lim" | "griffin_lim" => Ok(VocoderBackend::default()),
            other => Err(Error::invalid(format!("unknown vocoder backend {other:?}"))),
        }
    }
}

impl fmt::Display for VocoderBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocoderBackend::GriffinLim { .. } => f.write_str("griffin-lim"),
        }
    }
}

pub fn vocode(
    cond: &VocoderConditioning,
    backend: VocoderBackend,
    cfg: &FeatureConfig,
    exec: Exec,
) -> Result<Vec<f64>> {
    match backend {
        VocoderBackend::GriffinLim { iters } => {
            invert_mel_with(&cfg.denormalize(&cond.fused), cfg, iters, exec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn identity_fuse_passes_mel_through() {
        let front = VocoderFrontEnd::untrained(256, 80);
        let mel = random(7, 80, 1);
        let c = build_conditioning(&mel, &[0, 3, 3, 9, 255, 1, 1], &front).unwrap();
        assert_eq!(c.fused, mel);
    }

    #[test]
    fn constant_bin_adds_one_row_to_every_frame() {
        let mut front = VocoderFrontEnd::untrained(8, 80);
        front.fuse = random(160, 80, 2);
        let mel = random(5, 80, 3);
        let c = build_conditioning(&mel, &[4; 5], &front).unwrap();
        let from_mel = mel.dot(&front.fuse.slice(s![..80, ..]));
        let offset = &c.fused - &from_mel;
        for r in 1..5 {
            for k in 0..80 {
                assert!((offset[[r, k]] - offset[[0, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_frame_hand_multiply() {
        let table = ndarray::array![[0.5], [-1.0]];
        let fuse = ndarray::array![[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]];
        let bias = ndarray::array![[0.1, 0.2]];
        let front = VocoderFrontEnd::new(table, fuse, bias).unwrap();
        let mel = ndarray::array![[1.0, 2.0], [0.5, 0.0]];
        let c = build_conditioning(&mel, &[1, 0], &front).unwrap();
        // row 0: [1, 2, -1]; row 1: [0.5, 0, 0.5]
        let want = [
            [1.0 - 3.0 + 0.1, 2.0 + 2.0 + 1.0 + 0.2],
            [0.5 + 1.5 + 0.1, 1.0 - 0.5 + 0.2],
        ];
        for (r, row) in want.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                assert!((c.fused[[r, k]] - w).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let front = VocoderFrontEnd::untrained(4, 80);
        let mel = random(3, 80, 4);
        assert!(build_conditioning(&mel, &[0, 1], &front).is_err());
        assert!(build_conditioning(&mel, &[0, 1, 4], &front).is_err());
        assert!(VocoderFrontEnd::new(
            Array2::zeros((4, 80)),
            Array2::zeros((150, 80)),
            Array2::zeros((1, 80))
        )
        .is_err());
        assert!("wavenet".parse::<VocoderBackend>().is_err());
        assert_eq!(
            "griffin-lim".parse::<VocoderBackend>().unwrap().to_string(),
            "griffin-lim"
        );
    }

    #[test]
    fn vocoded_length_and_determinism() {
        let cfg = FeatureConfig::default();
        let front = VocoderFrontEnd::untrained(256, 80);
        let mel = random(20, 80, 5).mapv(|v| v * 0.6);
        let c = build_conditioning(&mel, &[10; 20], &front).unwrap();
        let backend = VocoderBackend::GriffinLim { iters: 4 };
        let a = vocode(&c, backend, &cfg, Exec::Sequential).unwrap();
        assert_eq!(a.len(), 19 * 128);
        assert_eq!(a, vocode(&c, backend, &cfg, Exec::default()).unwrap());
    }

    proptest! {
        #[test]
        fn linear_in_mel_and_local_in_pitch(seed in 0u64..1000, k in -3.0f64..3.0, frame in 0usize..6) {
            let mut front = VocoderFrontEnd::untrained(16, 80);
            front.fuse = random(160, 80, seed);
            let (a, b) = (random(6, 80, seed + 1), random(6, 80, seed + 2));
            let bins = vec![3usize; 6];
            let f = |m: &Mat| build_conditioning(m, &bins, &front).unwrap().fused;
            let lhs = f(&(&a + &(&b * k)));
            let zero = f(&Array2::zeros((6, 80)));
            let rhs = &f(&a) + &((&f(&b) - &zero) * k);
            prop_assert!((&lhs - &rhs).iter().all(|d| d.abs() < 1e-9));

            let mut moved = bins.clone();
            moved[frame] = 7;
            let c2 = build_conditioning(&a, &moved, &front).unwrap().fused;
            let c1 = f(&a);
            for r in 0..6 {
                let same = c1.row(r) == c2.row(r);
                prop_assert_eq!(same, r != frame);
            }
        }
    }
}
