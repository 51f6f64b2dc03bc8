//! Minimal RIFF/WAVE support: mono PCM16 and IEEE float32.

use std::path::Path;

use crate::error::{Error, Result};

use super::Utterance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Decoded `fmt ` chunk plus the location of the sample data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavHeader {
    pub format_tag: u16,
    pub channels: u16,
    pub sample_rate: u32,
    pub byte_rate: u32,
    pub block_align: u16,
    pub bits_per_sample: u16,
    pub data_offset: usize,
    pub data_len: usize,
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

impl WavHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
            return Err(fmt_err("missing RIFF/WAVE signature"));
        }
        let mut pos = 12;
        let mut fmt: Option<(u16, u16, u32, u32, u16, u16)> = None;
        while pos + 8 <= bytes.len() {
            let id = &bytes[pos..pos + 4];
            let size = u32_at(bytes, pos + 4) as usize;
            let body = pos + 8;
            if id == b"fmt " {
                if size < 16 || body + size > bytes.len() {
                    return Err(fmt_err("truncated fmt chunk"));
                }
                let mut tag = u16_at(bytes, body);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(fmt_err("truncated extensible fmt chunk"));
                    }
                    // sub-format GUID starts with the plain format tag
                    tag = u16_at(bytes, body + 24);
                }
                fmt = Some((
                    tag,
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u32_at(bytes, body + 8),
                    u16_at(bytes, body + 12),
                    u16_at(bytes, body + 14),
                ));
            } else if id == b"data" {
                let (format_tag, channels, sample_rate, byte_rate, block_align, bits_per_sample) =
                    fmt.ok_or_else(|| fmt_err("data chunk before fmt chunk"))?;
                let data_len = size.min(bytes.len() - body);
                return Ok(WavHeader {
                    format_tag,
                    channels,
                    sample_rate,
                    byte_rate,
                    block_align,
                    bits_per_sample,
                    data_offset: body,
                    data_len,
                });
            }
            pos = body + size + (size & 1);
        }
        Err(fmt_err("no data chunk"))
    }

    pub fn sample_format(&self) -> Result<SampleFormat> {
        match (self.format_tag, self.bits_per_sample) {
            (WAVE_FORMAT_PCM, 16) => Ok(SampleFormat::Pcm16),
            (WAVE_FORMAT_IEEE_FLOAT, 32) => Ok(SampleFormat::Float32),
            (tag, bits) => Err(fmt_err(format!("unsupported encoding: format tag {tag}, {bits} bits"))),
        }
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<Utterance> {
    let h = WavHeader::parse(bytes)?;
    if h.channels != 1 {
        return Err(fmt_err(format!("expected mono audio, found {} channels", h.channels)));
    }
    if h.sample_rate == 0 {
        return Err(fmt_err("sample rate of zero"));
    }
    let data = &bytes[h.data_offset..h.data_offset + h.data_len];
    let samples = match h.sample_format()? {
        SampleFormat::Pcm16 => {
            data.chunks_exact(2).map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0).collect()
        }
        SampleFormat::Float32 => {
            data.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect()
        }
    };
    Utterance::new(samples, h.sample_rate)
}

/// Canonical 44-byte header followed by the samples.
pub fn encode_wav(samples: &[f64], sample_rate: u32, format: SampleFormat) -> Vec<u8> {
    let (tag, bytes_per) = match format {
        SampleFormat::Pcm16 => (WAVE_FORMAT_PCM, 2u16),
        SampleFormat::Float32 => (WAVE_FORMAT_IEEE_FLOAT, 4u16),
    };
    let data_len = samples.len() as u32 * u32::from(bytes_per);
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * u32::from(bytes_per)).to_le_bytes());
    out.extend_from_slice(&bytes_per.to_le_bytes());
    out.extend_from_slice(&(bytes_per * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in samples {
        match format {
            SampleFormat::Pcm16 => {
                let q = (x * 32768.0).round().clamp(-32767.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Utterance> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.as_ref().display())),
        other => other,
    })
}

/// Writes samples as mono WAV. Float32 output rounds each sample to `f32`.
pub fn write_wav(utt: &Utterance, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
    std::fs::write(path.as_ref(), encode_wav(&utt.samples, utt.sample_rate, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_lossless() {
        let samples: Vec<f64> = (0..300).map(|i| f64::from(((i as f32) * 0.37).sin() * 0.8)).collect();
        let bytes = encode_wav(&samples, 16_000, SampleFormat::Float32);
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.samples, samples);
        assert_eq!(back.sample_rate, 16_000);
    }

    #[test]
    fn pcm16_full_scale_sine_clips_to_max_code() {
        let samples: Vec<f64> = (0..160).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 16.0).sin()).collect();
        let back = decode_wav(&encode_wav(&samples, 8000, SampleFormat::Pcm16)).unwrap();
        let peak = back.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert_eq!(peak, 32767.0 / 32768.0);
        for (a, b) in back.samples.iter().zip(&samples) {
            // rounding error, one code at the clipped extremes
            assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn canonical_header_offsets() {
        let bytes = encode_wav(&[0.0; 10], 16_000, SampleFormat::Pcm16);
        assert_eq!(bytes.len(), 44 + 20);
        // byte-offset table of the canonical header
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(u32_at(&bytes, 4), 36 + 20);
        assert_eq!(&bytes[8..16], b"WAVEfmt ");
        assert_eq!(u32_at(&bytes, 16), 16);
        assert_eq!(u16_at(&bytes, 20), 1);
        assert_eq!(u16_at(&bytes, 22), 1);
        assert_eq!(u32_at(&bytes, 24), 16_000);
        assert_eq!(u32_at(&bytes, 28), 32_000);
        assert_eq!(u16_at(&bytes, 32), 2);
        assert_eq!(u16_at(&bytes, 34), 16);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 20);
        let h = WavHeader::parse(&bytes).unwrap();
        assert_eq!(
            h,
            WavHeader {
                format_tag: 1,
                channels: 1,
                sample_rate: 16_000,
                byte_rate: 32_000,
                block_align: 2,
                bits_per_sample: 16,
                data_offset: 44,
                data_len: 20
            }
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(Error::Format(_))));
        let mut stereo = encode_wav(&[0.0; 4], 16_000, SampleFormat::Pcm16);
        stereo[22] = 2;
        assert!(matches!(decode_wav(&stereo), Err(Error::Format(_))));
        let mut pcm8 = encode_wav(&[0.0; 4], 16_000, SampleFormat::Pcm16);
        pcm8[34] = 8;
        assert!(matches!(decode_wav(&pcm8), Err(Error::Format(_))));
        let bytes = encode_wav(&[0.0; 4], 16_000, SampleFormat::Pcm16);
        assert!(matches!(decode_wav(&bytes[..30]), Err(Error::Format(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = encode_wav(&[0.25, -0.5], 8000, SampleFormat::Float32);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&bytes).unwrap().samples, vec![0.25, -0.5]);
    }
}
