use std::path::Path;

use super::{AudioWave, FrontendError};

/// Reads a 16-bit PCM mono WAV file, scaling samples to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioWave, FrontendError> {
    let reader = hound::WavReader::open(path).map_err(|e| FrontendError::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(FrontendError::Wav(format!(
            "expected 16-bit PCM mono, found {} channel(s) of {}-bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| FrontendError::Wav(e.to_string()))?;
    Ok(AudioWave::new(samples, spec.sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, wave: &AudioWave) -> Result<(), FrontendError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| FrontendError::Wav(e.to_string());
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in &wave.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .map_err(err)?;
    }
    w.finalize().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = AudioWave::new(vec![0.0, 0.5, -0.25, -1.0], 16_000);
        write_wav(&p, &w).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(FrontendError::Wav(_))));
    }
}
