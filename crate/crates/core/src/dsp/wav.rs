//! RIFF/WAVE PCM16 mono reader and writer.

use std::fs;
use std::path::Path;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

/// Parses an in-memory WAV file; `path` is only used in error messages.
pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let format = |field: String| Error::WavFormat {
        path: path.to_path_buf(),
        field,
    };
    let parse = |reason: &str| Error::WavParse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    if bytes.len() < 12 {
        return Err(parse("file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format("not a RIFF/WAVE file".into()));
    }

    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| parse("chunk runs past end of file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse("fmt chunk shorter than 16 bytes"));
                }
                let audio_format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let sample_rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if audio_format != 1 {
                    return Err(format(format!("audio_format={audio_format}, expected 1 (PCM)")));
                }
                if channels != 1 {
                    return Err(format(format!("channels={channels}, expected 1")));
                }
                if sample_rate != SAMPLE_RATE {
                    return Err(format(format!("sample_rate={sample_rate}, expected {SAMPLE_RATE}")));
                }
                if bits != 16 {
                    return Err(format(format!("bits_per_sample={bits}, expected 16")));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(parse("data chunk before fmt chunk"));
                }
                if !size.is_multiple_of(2) {
                    return Err(parse("odd byte count in 16-bit data chunk"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return AudioClip::new(samples, SAMPLE_RATE);
            }
            _ => {}
        }
        // chunks are padded to even length
        pos = end + (size & 1);
    }
    Err(parse(if fmt_seen {
        "missing data chunk"
    } else {
        "missing fmt chunk"
    }))
}

/// Encodes samples as 16-bit PCM, clamping to the representable range.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip.samples(), clip.sample_rate())).map_err(|e| Error::io(path, e))
}
