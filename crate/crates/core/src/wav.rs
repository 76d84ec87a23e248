//! Minimal RIFF/WAVE reader and writer for mono 16-bit PCM.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dsp::Pcm;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("truncated {what} at byte offset {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("expected {expected:?} at byte offset {offset}")]
    BadTag {
        expected: &'static str,
        offset: usize,
    },
    #[error("unsupported WAV: {0}")]
    Unsupported(String),
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
}

fn u16_at(bytes: &[u8], offset: usize, what: &'static str) -> Result<u16, WavError> {
    bytes
        .get(offset..offset + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(WavError::Truncated { what, offset })
}

fn u32_at(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32, WavError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(WavError::Truncated { what, offset })
}

fn expect_tag(bytes: &[u8], offset: usize, tag: &'static str) -> Result<(), WavError> {
    match bytes.get(offset..offset + 4) {
        None => Err(WavError::Truncated {
            what: "header",
            offset: bytes.len().min(offset),
        }),
        Some(b) if b == tag.as_bytes() => Ok(()),
        Some(_) => Err(WavError::BadTag {
            expected: tag,
            offset,
        }),
    }
}

/// Decode a mono PCM16 WAV image; samples are scaled by 1/32768.
pub fn decode(bytes: &[u8]) -> Result<Pcm, WavError> {
    expect_tag(bytes, 0, "RIFF")?;
    u32_at(bytes, 4, "header")?;
    expect_tag(bytes, 8, "WAVE")?;

    let mut offset = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while offset < bytes.len() {
        if bytes.len() - offset < 8 {
            return Err(WavError::Truncated {
                what: "chunk header",
                offset,
            });
        }
        let id = &bytes[offset..offset + 4];
        let size = u32_at(bytes, offset + 4, "chunk header")? as usize;
        let body = offset + 8;
        if id == b"fmt " {
            if size < 16 {
                return Err(WavError::Truncated {
                    what: "fmt chunk",
                    offset: body,
                });
            }
            let audio_format = u16_at(bytes, body, "fmt chunk")?;
            let channels = u16_at(bytes, body + 2, "fmt chunk")?;
            let rate = u32_at(bytes, body + 4, "fmt chunk")?;
            let bits = u16_at(bytes, body + 14, "fmt chunk")?;
            format = Some((audio_format, channels, rate, bits));
        } else if id == b"data" {
            let (audio_format, channels, rate, bits) = format.ok_or(WavError::MissingChunk("fmt"))?;
            if audio_format != 1 {
                return Err(WavError::Unsupported(format!(
                    "compressed or non-PCM format tag {audio_format}"
                )));
            }
            if channels != 1 {
                return Err(WavError::Unsupported(format!("{channels} channels, expected mono")));
            }
            if bits != 16 {
                return Err(WavError::Unsupported(format!("{bits}-bit samples, expected 16")));
            }
            if rate == 0 {
                return Err(WavError::Unsupported("sample rate 0".into()));
            }
            let end = body.checked_add(size).filter(|e| *e <= bytes.len()).ok_or(
                WavError::Truncated {
                    what: "data chunk",
                    offset: bytes.len(),
                },
            )?;
            if size % 2 != 0 {
                return Err(WavError::Truncated {
                    what: "sample",
                    offset: end - 1,
                });
            }
            let samples = bytes[body..end]
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                .collect();
            return Ok(Pcm { samples, rate });
        }
        offset = body + size + (size & 1);
    }
    Err(WavError::MissingChunk(if format.is_some() { "data" } else { "fmt" }))
}

/// Encode as mono PCM16; samples are clamped to the representable range.
pub fn encode(pcm: &Pcm) -> Vec<u8> {
    let data_len = pcm.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&pcm.rate.to_le_bytes());
    out.extend_from_slice(&(pcm.rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &pcm.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read(path: &Path) -> Result<Pcm, WavError> {
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write(path: &Path, pcm: &Pcm) -> Result<(), WavError> {
    fs::write(path, encode(pcm)).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })
}
