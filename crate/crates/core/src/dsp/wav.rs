use std::io::Cursor;

use super::DspError;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::Format("empty audio clip".into()));
        }
        if sample_rate == 0 {
            return Err(DspError::Format("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a 16-bit PCM mono RIFF/WAVE file; samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, DspError> {
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| DspError::Format(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::Format(format!(
            "expected 16-bit integer PCM, got {:?} {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(DspError::Format(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DspError::Format(format!("truncated or corrupt data chunk: {e}")))?;
    if samples.len() != declared {
        return Err(DspError::Format(format!(
            "data chunk truncated: {} of {declared} samples",
            samples.len()
        )));
    }
    AudioClip::new(samples, spec.sample_rate)
}

/// Encodes a clip as 16-bit PCM mono, clipping to the representable range.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::new());
    {
        let mut writer =
            hound::WavWriter::new(&mut out, spec).map_err(|e| DspError::Format(e.to_string()))?;
        for &s in &clip.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(v)
                .map_err(|e| DspError::Format(e.to_string()))?;
        }
        writer
            .finalize()
            .map_err(|e| DspError::Format(e.to_string()))?;
    }
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut out = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut out, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        out.into_inner()
    }

    #[test]
    fn one_second_at_8k() {
        let clip = decode_wav(&pcm(&vec![0; 8000], 1, 8000)).unwrap();
        assert_eq!(clip.samples.len(), 8000);
        assert_eq!(clip.sample_rate, 8000);
        assert!(clip.samples.iter().all(|s| *s == 0.0));
        assert_eq!(clip.duration(), 1.0);
    }

    #[test]
    fn scaling_convention() {
        let clip = decode_wav(&pcm(&[32767, -32768, 16384], 1, 8000)).unwrap();
        assert_eq!(clip.samples, vec![32767.0 / 32768.0, -1.0, 0.5]);
    }

    #[test]
    fn rejects_stereo_float_and_truncated() {
        assert!(decode_wav(&pcm(&[0, 0, 0, 0], 2, 8000)).is_err());

        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut out = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut out, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(decode_wav(&out.into_inner()).is_err());

        let full = pcm(&vec![100; 400], 1, 8000);
        assert!(decode_wav(&full[..full.len() - 100]).is_err());
        assert!(decode_wav(b"not a wav file").is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let samples: Vec<f32> = (0..800).map(|i| ((i % 64) as f32 - 32.0) / 64.0).collect();
        let clip = AudioClip::new(samples, 8000).unwrap();
        let back = decode_wav(&encode_wav(&clip).unwrap()).unwrap();
        assert_eq!(back, clip);
    }
}
