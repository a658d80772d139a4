use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};
use crate::signal::AudioBuffer;

/// Mono 32-bit float WAV.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    audio.validate()?;
    let rate = audio.sample_rate.round();
    if (rate - audio.sample_rate).abs() > 1e-9 || rate > u32::MAX as f64 {
        return Err(Error::Config(format!("WAV needs an integer sample rate, got {}", audio.sample_rate)));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads float or integer PCM; multi-channel files use the first channel.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let ch = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r
            .samples::<f32>()
            .step_by(ch)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            r.samples::<i32>()
                .step_by(ch)
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if ch > 1 {
        log::warn!("{}: {ch} channels, using the first", path.display());
    }
    Ok(AudioBuffer::new(samples, spec.sample_rate as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_and_int_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let audio = AudioBuffer::new(vec![0.0, 0.5, -0.25, 0.125], 48_000.0);
        write_wav(&p, &audio).unwrap();
        assert_eq!(read_wav(&p).unwrap(), audio);

        let q = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&q, spec).unwrap();
        for s in [16384i16, 0, -16384, 0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let back = read_wav(&q).unwrap();
        assert_eq!(back.samples, vec![0.5, -0.5]);
        assert_eq!(back.sample_rate, 8000.0);
    }
}
