//! 16-bit PCM mono WAV in and out.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Quantizes to 16-bit with clipping.
pub fn to_i16(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in samples {
        w.write_sample(to_i16(s)).map_err(wav_err(path))?;
    }
    w.finalize().map_err(wav_err(path))
}

/// Reads a mono 16-bit file recorded at `expected_rate`.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f64>> {
    let mut r = WavReader::open(path).map_err(wav_err(path))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::format(
            "wav",
            format!(
                "{}: expected 16-bit PCM mono, found {} ch / {} bit",
                path.display(),
                spec.channels,
                spec.bits_per_sample
            ),
        ));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::format(
            "wav",
            format!(
                "{}: sample rate {} != {}",
                path.display(),
                spec.sample_rate,
                expected_rate
            ),
        ));
    }
    r.samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() * 0.7).collect();
        write_wav(&p, &x, 22050).unwrap();
        let y = read_wav(&p, 22050).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
        let p2 = dir.path().join("y.wav");
        write_wav(&p2, &y, 22050).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_rate_and_garbage_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        write_wav(&p, &[0.0; 10], 16000).unwrap();
        assert!(read_wav(&p, 22050).is_err());
        std::fs::write(&p, b"not a wav").unwrap();
        assert!(read_wav(&p, 22050).is_err());
    }
}
