//! Minimal audio decoding: RIFF/WAVE (PCM 16/24/32 and float32) and NIST
//! SPHERE headers, mono downmix, and linear resampling.
//!
//! This is deliberately small — enough to read corpus layouts and to build
//! test fixtures — not a general audio library.

use std::io::Read;
use std::path::Path;

use crate::error::{HarnessError, Result};

/// Decoded audio: mono samples in [-1, 1] at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate_hz: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz as f64
    }
}

fn bad(path: &Path, reason: &str) -> HarnessError {
    HarnessError::RawData {
        dataset: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

struct WavLayout {
    rate_hz: u32,
    channels: u16,
    bits: u16,
    is_float: bool,
    data_offset: usize,
    data_len: usize,
}

fn parse_wav_layout(path: &Path, bytes: &[u8]) -> Result<WavLayout> {
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_le(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if body + 16 > bytes.len() {
                return Err(bad(path, "truncated fmt chunk"));
            }
            fmt = Some((
                u16_le(&bytes[body..]),
                u16_le(&bytes[body + 2..]),
                u32_le(&bytes[body + 4..]),
                u16_le(&bytes[body + 14..]),
            ));
        } else if id == b"data" {
            // Keep the declared size: probing parses from a prefix of the
            // file, so the chunk body may not be present here.
            data = Some((body, size));
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
    }
    let (format, channels, rate_hz, bits) = fmt.ok_or_else(|| bad(path, "missing fmt chunk"))?;
    let (data_offset, data_len) = data.ok_or_else(|| bad(path, "missing data chunk"))?;
    let is_float = match format {
        1 => false,
        3 => true,
        0xFFFE => bits == 32, // extensible; treat 32-bit as float, else PCM
        _ => return Err(bad(path, "unsupported WAVE format tag")),
    };
    if channels == 0 || rate_hz == 0 {
        return Err(bad(path, "degenerate fmt chunk"));
    }
    if !matches!(bits, 16 | 24 | 32) {
        return Err(bad(path, "unsupported sample width"));
    }
    Ok(WavLayout {
        rate_hz,
        channels,
        bits,
        is_float,
        data_offset,
        data_len,
    })
}

/// Read a RIFF/WAVE file and downmix to mono by channel averaging.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path)?;
    let layout = parse_wav_layout(path, &bytes)?;
    let frame_bytes = layout.channels as usize * (layout.bits as usize / 8);
    // Clamp the declared chunk length to the bytes actually on disk.
    let avail = bytes.len().saturating_sub(layout.data_offset);
    let n_frames = layout.data_len.min(avail) / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    let data = &bytes[layout.data_offset..layout.data_offset + n_frames * frame_bytes];
    let width = layout.bits as usize / 8;
    for frame in 0..n_frames {
        let mut acc = 0.0f32;
        for ch in 0..layout.channels as usize {
            let at = frame * frame_bytes + ch * width;
            let v = match (layout.bits, layout.is_float) {
                (16, false) => i16::from_le_bytes([data[at], data[at + 1]]) as f32 / 32768.0,
                (24, false) => {
                    let raw =
                        i32::from_le_bytes([0, data[at], data[at + 1], data[at + 2]]) >> 8;
                    raw as f32 / 8_388_608.0
                }
                (32, false) => {
                    i32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]])
                        as f32
                        / 2_147_483_648.0
                }
                (32, true) => f32::from_le_bytes([
                    data[at],
                    data[at + 1],
                    data[at + 2],
                    data[at + 3],
                ]),
                _ => unreachable!("layout validated"),
            };
            acc += v;
        }
        samples.push(acc / layout.channels as f32);
    }
    Ok(Waveform {
        samples,
        rate_hz: layout.rate_hz,
    })
}

/// Write mono PCM16 (test-fixture helper).
pub fn write_wav_pcm16(path: &Path, wf: &Waveform) -> Result<()> {
    let n = wf.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wf.rate_hz.to_le_bytes());
    out.extend_from_slice(&(wf.rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wf.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a NIST SPHERE header: "NIST_1A\n<header-size>\n" followed by
/// "name -type value" lines until "end_head".
fn parse_sphere_header(path: &Path, head: &[u8]) -> Result<(u32, u64)> {
    let text = String::from_utf8_lossy(head);
    let mut rate = None;
    let mut count = None;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("sample_rate"), Some(_), Some(v)) => rate = v.parse::<u32>().ok(),
            (Some("sample_count"), Some(_), Some(v)) => count = v.parse::<u64>().ok(),
            (Some("end_head"), _, _) => break,
            _ => {}
        }
    }
    match (rate, count) {
        (Some(r), Some(c)) if r > 0 => Ok((r, c)),
        _ => Err(bad(path, "SPHERE header missing sample_rate/sample_count")),
    }
}

/// Sample rate and duration without decoding the payload. Dispatches on the
/// file magic: RIFF/WAVE or NIST SPHERE (both appear as `.wav` in corpora).
pub fn probe_duration(path: &Path) -> Result<(u32, f64)> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 1024];
    let mut read = 0;
    while read < head.len() {
        let n = file.read(&mut head[read..])?;
        if n == 0 {
            break;
        }
        read += n;
    }
    let head = &head[..read];
    if head.starts_with(b"NIST_1A") {
        let (rate, frames) = parse_sphere_header(path, head)?;
        return Ok((rate, frames as f64 / rate as f64));
    }
    if head.starts_with(b"RIFF") {
        // The fmt/data chunks of corpus files sit in the first KB; fall back
        // to a full read if not.
        let layout = match parse_wav_layout(path, head) {
            Ok(l) => l,
            Err(_) => {
                let bytes = std::fs::read(path)?;
                parse_wav_layout(path, &bytes)?
            }
        };
        let frame_bytes = layout.channels as u64 * (layout.bits as u64 / 8);
        let metadata_len = std::fs::metadata(path)?.len();
        // data_len from the header may exceed what was read into `head`.
        let payload = (metadata_len.saturating_sub(layout.data_offset as u64))
            .min(layout.data_len as u64);
        let frames = payload / frame_bytes;
        return Ok((layout.rate_hz, frames as f64 / layout.rate_hz as f64));
    }
    Err(bad(path, "unrecognized audio container"))
}

/// Linear-interpolation resampling (sufficient for probe-scale fixtures).
pub fn resample_linear(wf: &Waveform, target_rate: u32) -> Waveform {
    if wf.rate_hz == target_rate || wf.samples.is_empty() {
        return Waveform {
            samples: wf.samples.clone(),
            rate_hz: target_rate,
        };
    }
    let ratio = wf.rate_hz as f64 / target_rate as f64;
    let n_out = ((wf.samples.len() as f64) / ratio).floor() as usize;
    let mut samples = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as f64 * ratio;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(wf.samples.len() - 1);
        let frac = (pos - lo as f64) as f32;
        samples.push(wf.samples[lo] * (1.0 - frac) + wf.samples[hi] * frac);
    }
    Waveform {
        samples,
        rate_hz: target_rate,
    }
}
