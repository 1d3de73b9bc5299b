//! Waveform loading and slicing into 0.1-second pieces.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples in one 0.1 s piece at [`SAMPLE_RATE`].
pub const PIECE_SAMPLES: usize = 1_600;

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of whole pieces the clip holds.
    pub fn num_pieces(&self) -> usize {
        self.samples.len() / PIECE_SAMPLES
    }

    /// The clip cut down to a whole number of pieces.
    pub fn trimmed(&self) -> AudioClip {
        AudioClip::new(
            self.samples[..self.num_pieces() * PIECE_SAMPLES].to_vec(),
            self.sample_rate,
        )
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// `T` contiguous pieces of [`PIECE_SAMPLES`] samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicPieceBatch {
    pieces: Vec<f32>,
    num_pieces: usize,
}

impl MusicPieceBatch {
    pub fn from_samples(pieces: Vec<f32>) -> Result<Self> {
        if pieces.len() % PIECE_SAMPLES != 0 || pieces.is_empty() {
            return Err(Error::shape(format!(
                "{} samples is not a positive whole number of pieces",
                pieces.len()
            )));
        }
        Ok(MusicPieceBatch {
            num_pieces: pieces.len() / PIECE_SAMPLES,
            pieces,
        })
    }

    pub fn num_pieces(&self) -> usize {
        self.num_pieces
    }

    pub fn piece(&self, t: usize) -> &[f32] {
        &self.pieces[t * PIECE_SAMPLES..(t + 1) * PIECE_SAMPLES]
    }

    /// All samples, pieces concatenated.
    pub fn samples(&self) -> &[f32] {
        &self.pieces
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pieces.iter().map(|&v| v as f64).collect()
    }
}

/// First `count` non-overlapping pieces of the clip.
pub fn slice_pieces(clip: &AudioClip, count: usize) -> Result<MusicPieceBatch> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "clip is at {} Hz, expected {SAMPLE_RATE} Hz",
            clip.sample_rate
        )));
    }
    if count == 0 {
        return Err(Error::config("piece count must be positive"));
    }
    let needed = count * PIECE_SAMPLES;
    if clip.samples.len() < needed {
        return Err(Error::InsufficientAudio {
            needed,
            available: clip.samples.len(),
        });
    }
    MusicPieceBatch::from_samples(clip.samples[..needed].to_vec())
}

/// Linear-interpolation resampler; output length is `floor(n · to / from)`.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = (samples.len() as u64 * to as u64 / from as u64) as usize;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * from as f64 / to as f64;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let w = pos - lo as f64;
            (samples[lo] as f64 * (1.0 - w) + samples[hi] as f64 * w) as f32
        })
        .collect()
}

/// Reads a PCM WAV file, downmixes to mono and resamples to 16 kHz.
pub fn load_audio(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    decode(reader)
}

pub fn load_audio_bytes(bytes: &[u8]) -> Result<AudioClip> {
    decode(hound::WavReader::new(std::io::Cursor::new(bytes))?)
}

fn decode<R: std::io::Read>(mut reader: hound::WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Format(format!("{channels} channels (1 or 2 supported)")));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Format(format!("{}-bit float", spec.bits_per_sample)));
            }
            reader.samples::<f32>().collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !(8..=32).contains(&bits) {
                return Err(Error::Format(format!("{bits}-bit integer samples")));
            }
            let scale = (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let mut samples = resample_linear(&mono, spec.sample_rate, SAMPLE_RATE);
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_bytes(channels: u16, rate: u32, frames: usize, f: impl Fn(usize, u16) -> i16) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for i in 0..frames {
                for c in 0..channels {
                    w.write_sample(f(i, c)).unwrap();
                }
            }
            w.finalize().unwrap();
        }
        cursor.into_inner()
    }

    #[test]
    fn five_second_stereo_cd_rate_gives_eighty_thousand_samples() {
        // floor(220500 · 16000 / 44100) = 80000
        let bytes = wav_bytes(2, 44_100, 220_500, |i, c| ((i % 200) as i16 - 100) * (c as i16 + 1));
        let clip = load_audio_bytes(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 80_000);
        assert_eq!(clip.sample_rate, SAMPLE_RATE);
        assert!(clip.peak() <= 1.0);
    }

    #[test]
    fn mono_sixteen_k_is_only_rescaled() {
        let bytes = wav_bytes(1, 16_000, 3_200, |i, _| (i as i16) - 1600);
        let clip = load_audio_bytes(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 3_200);
        for (i, s) in clip.samples.iter().enumerate() {
            assert_eq!(*s, ((i as i16) - 1600) as f32 / 32768.0);
        }
    }

    #[test]
    fn silence_stays_silent() {
        let clip = load_audio_bytes(&wav_bytes(2, 22_050, 11_025, |_, _| 0)).unwrap();
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        assert_eq!(clip.samples.len(), 8_000);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = load_audio_bytes(&wav_bytes(2, 16_000, 10, |_, c| if c == 0 { 16384 } else { 0 })).unwrap();
        assert!(clip.samples.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(load_audio_bytes(b"RIFFnonsense"), Err(Error::Format(_) | Error::Io(_))));
    }

    #[test]
    fn slicing_fifty_pieces() {
        let clip = AudioClip::new(vec![0.1; 80_000], SAMPLE_RATE);
        let b = slice_pieces(&clip, 50).unwrap();
        assert_eq!(b.num_pieces(), 50);
        assert_eq!(b.samples().len(), 50 * PIECE_SAMPLES);
    }

    #[test]
    fn one_piece_is_the_clip() {
        let samples: Vec<f32> = (0..1600).map(|i| i as f32 / 1600.0).collect();
        let b = slice_pieces(&AudioClip::new(samples.clone(), SAMPLE_RATE), 1).unwrap();
        assert_eq!(b.piece(0), &samples[..]);
    }

    #[test]
    fn short_clip_is_insufficient() {
        let err = slice_pieces(&AudioClip::new(vec![0.0; 1599], SAMPLE_RATE), 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientAudio { needed: 1600, available: 1599 }));
    }

    proptest! {
        #[test]
        fn flattened_pieces_are_the_clip_prefix(extra in 0usize..3000, count in 1usize..4) {
            let n = count * PIECE_SAMPLES + extra;
            let samples: Vec<f32> = (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
            let clip = AudioClip::new(samples.clone(), SAMPLE_RATE);
            let b = slice_pieces(&clip, count).unwrap();
            prop_assert_eq!(b.samples(), &samples[..count * PIECE_SAMPLES]);
        }

        #[test]
        fn resampled_length_follows_the_rate_ratio(n in 1usize..5000, from in 8000u32..48000) {
            let out = resample_linear(&vec![0.5; n], from, SAMPLE_RATE);
            prop_assert_eq!(out.len() as u64, n as u64 * 16000 / from as u64);
        }
    }
}
