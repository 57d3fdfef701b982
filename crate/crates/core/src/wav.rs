//! Integer PCM audio in RIFF/WAVE containers, and the two waveform
//! transforms used by corpus synthesis.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("invalid audio: {0}")]
    Invalid(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Codec(#[from] hound::Error),
}

/// Interleaved integer PCM frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveAudio {
    sample_rate: u32,
    channels: u16,
    bits_per_sample: u16,
    samples: Vec<i32>,
}

impl WaveAudio {
    pub fn new(sample_rate: u32, channels: u16, bits_per_sample: u16, samples: Vec<i32>) -> Result<Self, WavError> {
        if channels == 0 {
            return Err(WavError::Invalid("channel count must be >= 1".into()));
        }
        if !matches!(bits_per_sample, 8 | 16 | 24 | 32) {
            return Err(WavError::Unsupported(format!("{bits_per_sample}-bit PCM")));
        }
        if samples.is_empty() || !samples.len().is_multiple_of(channels as usize) {
            return Err(WavError::Invalid(format!(
                "{} samples do not form whole {channels}-channel frames",
                samples.len()
            )));
        }
        Ok(Self {
            sample_rate,
            channels,
            bits_per_sample,
            samples,
        })
    }

    /// 16-bit audio from per-frame channel tuples.
    pub fn from_frames(sample_rate: u32, frames: &[Vec<i16>]) -> Result<Self, WavError> {
        let channels = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != channels) {
            return Err(WavError::Invalid("frames differ in channel count".into()));
        }
        let samples = frames.iter().flatten().map(|&s| i32::from(s)).collect();
        Self::new(sample_rate, channels as u16, 16, samples)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn bits_per_sample(&self) -> u16 {
        self.bits_per_sample
    }

    pub fn samples(&self) -> &[i32] {
        &self.samples
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn frames(&self) -> impl Iterator<Item = &[i32]> {
        self.samples.chunks_exact(self.channels as usize)
    }

    fn spec(&self) -> WavSpec {
        WavSpec {
            channels: self.channels,
            sample_rate: self.sample_rate,
            bits_per_sample: self.bits_per_sample,
            sample_format: SampleFormat::Int,
        }
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, WavError> {
        let reader = WavReader::new(reader)?;
        let spec = reader.spec();
        if spec.sample_format != SampleFormat::Int {
            return Err(WavError::Unsupported("floating-point samples".into()));
        }
        let samples = reader.into_samples::<i32>().collect::<Result<Vec<_>, _>>()?;
        Self::new(spec.sample_rate, spec.channels, spec.bits_per_sample, samples)
    }

    pub fn write_to<W: Write + Seek>(&self, writer: W) -> Result<(), WavError> {
        let mut w = WavWriter::new(writer, self.spec())?;
        match self.bits_per_sample {
            8 => self.samples.iter().try_for_each(|&s| w.write_sample(s as i8))?,
            16 => self.samples.iter().try_for_each(|&s| w.write_sample(s as i16))?,
            _ => self.samples.iter().try_for_each(|&s| w.write_sample(s))?,
        }
        w.finalize()?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WavError> {
        Self::read_from(Cursor::new(bytes))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WavError> {
        let mut cursor = Cursor::new(Vec::new());
        self.write_to(&mut cursor)?;
        Ok(cursor.into_inner())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, WavError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path).map_err(hound::Error::from)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WavError> {
        let file = std::fs::File::create(path).map_err(hound::Error::from)?;
        self.write_to(std::io::BufWriter::new(file))
    }
}

/// Reverses frame order. Channel order inside each frame is kept.
pub fn reverse_audio(audio: &WaveAudio) -> WaveAudio {
    let samples = audio
        .samples
        .rchunks_exact(audio.channels as usize)
        .flatten()
        .copied()
        .collect();
    WaveAudio {
        samples,
        ..audio.clone()
    }
}

/// Splits the audio into `segments` contiguous chunks, concatenates them in
/// order, then crops or zero-pads the tail to `target_frames`.
pub fn segment_and_pad(audio: &WaveAudio, segments: usize, target_frames: usize) -> Result<WaveAudio, WavError> {
    if segments == 0 || target_frames == 0 {
        return Err(WavError::Invalid("segments and target length must be >= 1".into()));
    }
    let ch = audio.channels as usize;
    let frames = audio.frame_count();
    let mut joined = Vec::with_capacity(target_frames * ch);
    // segment k spans frames [k*F/T, (k+1)*F/T)
    for k in 0..segments {
        let start = k * frames / segments;
        let end = (k + 1) * frames / segments;
        joined.extend_from_slice(&audio.samples[start * ch..end * ch]);
    }
    joined.resize(target_frames * ch, 0);
    Ok(WaveAudio {
        samples: joined,
        ..audio.clone()
    })
}
