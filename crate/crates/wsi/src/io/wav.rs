//! Minimal RIFF/WAVE reader for the one shape of audio the detector accepts:
//! 16-bit PCM, stereo, at the model's sample rate. Everything else is a
//! typed error, never a panic, so the parser can face untrusted files.

use std::path::Path;

use crate::model::ClipInput;
use crate::{Error, Result};

const BYTES_PER_FRAME: usize = 4; // 2 channels x 16 bits

struct Fmt {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn need(bytes: &[u8], at: usize, n: usize) -> Result<&[u8]> {
    at.checked_add(n)
        .filter(|end| *end <= bytes.len())
        .map(|end| &bytes[at..end])
        .ok_or_else(|| Error::MalformedWav(format!("file ends inside a field at byte {at}")))
}

fn u16_at(bytes: &[u8], at: usize) -> Result<u16> {
    Ok(u16::from_le_bytes(need(bytes, at, 2)?.try_into().unwrap()))
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    Ok(u32::from_le_bytes(need(bytes, at, 4)?.try_into().unwrap()))
}

/// Decode a WAV byte stream into a clip of exactly `samples_per_channel`
/// samples. Returns the clip and whether the file had extra audio that was
/// cut off. Samples map to [-1, 1) via division by 32768.
pub fn parse_wav_bytes(
    bytes: &[u8],
    sample_rate_hz: u32,
    samples_per_channel: usize,
) -> Result<(ClipInput, bool)> {
    if need(bytes, 0, 4)? != b"RIFF" {
        return Err(Error::MalformedWav("missing RIFF tag".into()));
    }
    if need(bytes, 8, 4)? != b"WAVE" {
        return Err(Error::MalformedWav("missing WAVE form type".into()));
    }

    let mut fmt: Option<Fmt> = None;
    let mut pos = 12usize;
    while pos < bytes.len() {
        let id = need(bytes, pos, 4)?;
        let size = u32_at(bytes, pos + 4)? as usize;
        let body_at = pos + 8;
        let body = need(bytes, body_at, size)
            .map_err(|_| Error::MalformedWav(format!("chunk {:?} overruns the file", chunk_name(id))))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav(format!("fmt chunk is {size} bytes")));
                }
                fmt = Some(Fmt {
                    format_tag: u16_at(bytes, body_at)?,
                    channels: u16_at(bytes, body_at + 2)?,
                    sample_rate: u32_at(bytes, body_at + 4)?,
                    bits: u16_at(bytes, body_at + 14)?,
                });
            }
            b"data" => {
                let fmt = fmt
                    .as_ref()
                    .ok_or_else(|| Error::MalformedWav("data chunk before fmt chunk".into()))?;
                if fmt.format_tag != 1 || fmt.bits != 16 {
                    return Err(Error::WavCodec {
                        format_tag: fmt.format_tag,
                        bits: fmt.bits,
                    });
                }
                if fmt.channels != 2 {
                    return Err(Error::WavChannels {
                        expected: 2,
                        got: fmt.channels,
                    });
                }
                if fmt.sample_rate != sample_rate_hz {
                    return Err(Error::WavSampleRate {
                        expected: sample_rate_hz,
                        got: fmt.sample_rate,
                    });
                }
                if size % BYTES_PER_FRAME != 0 {
                    return Err(Error::MalformedWav(format!(
                        "data chunk of {size} bytes is not whole stereo frames"
                    )));
                }
                let frames = size / BYTES_PER_FRAME;
                if frames < samples_per_channel {
                    return Err(Error::WavTooShort {
                        need: samples_per_channel,
                        got: frames,
                    });
                }
                let mut left = Vec::with_capacity(samples_per_channel);
                let mut right = Vec::with_capacity(samples_per_channel);
                for f in 0..samples_per_channel {
                    let at = f * BYTES_PER_FRAME;
                    let l = i16::from_le_bytes(body[at..at + 2].try_into().unwrap());
                    let r = i16::from_le_bytes(body[at + 2..at + 4].try_into().unwrap());
                    left.push(f32::from(l) / 32768.0);
                    right.push(f32::from(r) / 32768.0);
                }
                let clip = ClipInput::new(left, right)?;
                return Ok((clip, frames > samples_per_channel));
            }
            _ => {}
        }
        // RIFF pads odd-sized chunks to even boundaries.
        let advance = 8usize
            .checked_add(size)
            .map(|n| n + (size & 1))
            .ok_or_else(|| Error::MalformedWav("chunk size overflows".into()))?;
        pos = pos
            .checked_add(advance)
            .ok_or_else(|| Error::MalformedWav("chunk size overflows".into()))?;
    }
    Err(Error::MalformedWav("no data chunk".into()))
}

fn chunk_name(id: &[u8]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

/// Read a clip from disk; see [`parse_wav_bytes`].
pub fn load_clip(
    path: &Path,
    sample_rate_hz: u32,
    samples_per_channel: usize,
) -> Result<(ClipInput, bool)> {
    let bytes = std::fs::read(path)?;
    parse_wav_bytes(&bytes, sample_rate_hz, samples_per_channel)
}

/// Canonical 16-bit stereo WAV writer, used by tests and tools to make
/// inputs the reader accepts.
pub fn write_pcm16_stereo(
    path: &Path,
    left: &[i16],
    right: &[i16],
    sample_rate_hz: u32,
) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::InvalidArgument(format!(
            "channel lengths differ: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    std::fs::write(path, pcm16_stereo_bytes(left, right, sample_rate_hz))?;
    Ok(())
}

pub fn pcm16_stereo_bytes(left: &[i16], right: &[i16], sample_rate_hz: u32) -> Vec<u8> {
    assert_eq!(left.len(), right.len());
    let data_len = (left.len() * BYTES_PER_FRAME) as u32;
    let byte_rate = sample_rate_hz * BYTES_PER_FRAME as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&2u16.to_le_bytes()); // stereo
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(BYTES_PER_FRAME as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for (l, r) in left.iter().zip(right) {
        out.extend_from_slice(&l.to_le_bytes());
        out.extend_from_slice(&r.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> (Vec<i16>, Vec<i16>) {
        let left: Vec<i16> = (0..n).map(|i| (i as i16).wrapping_mul(3)).collect();
        let right: Vec<i16> = (0..n).map(|i| (i as i16).wrapping_mul(5).wrapping_sub(7)).collect();
        (left, right)
    }

    #[test]
    fn writer_output_round_trips() {
        let (l, r) = ramp(100);
        let bytes = pcm16_stereo_bytes(&l, &r, 16000);
        let (clip, truncated) = parse_wav_bytes(&bytes, 16000, 100).unwrap();
        assert!(!truncated);
        assert_eq!(clip.samples_per_channel(), 100);
        assert!((clip.left()[1] - 3.0 / 32768.0).abs() < 1e-9);
        assert!((clip.right()[0] + 7.0 / 32768.0).abs() < 1e-9);
    }

    #[test]
    fn longer_files_truncate_with_a_flag() {
        let (l, r) = ramp(150);
        let bytes = pcm16_stereo_bytes(&l, &r, 16000);
        let (clip, truncated) = parse_wav_bytes(&bytes, 16000, 100).unwrap();
        assert!(truncated);
        assert_eq!(clip.samples_per_channel(), 100);
    }

    #[test]
    fn shorter_files_are_rejected_with_counts() {
        let (l, r) = ramp(80);
        let bytes = pcm16_stereo_bytes(&l, &r, 16000);
        assert!(matches!(
            parse_wav_bytes(&bytes, 16000, 100),
            Err(Error::WavTooShort { need: 100, got: 80 })
        ));
    }

    #[test]
    fn wrong_rate_channels_codec_each_have_their_error() {
        let (l, r) = ramp(50);
        let bytes = pcm16_stereo_bytes(&l, &r, 44100);
        assert!(matches!(
            parse_wav_bytes(&bytes, 16000, 50),
            Err(Error::WavSampleRate { expected: 16000, got: 44100 })
        ));

        let mut mono = pcm16_stereo_bytes(&l, &r, 16000);
        mono[22..24].copy_from_slice(&1u16.to_le_bytes());
        assert!(matches!(
            parse_wav_bytes(&mono, 16000, 50),
            Err(Error::WavChannels { expected: 2, got: 1 })
        ));

        let mut float_fmt = pcm16_stereo_bytes(&l, &r, 16000);
        float_fmt[20..22].copy_from_slice(&3u16.to_le_bytes());
        assert!(matches!(
            parse_wav_bytes(&float_fmt, 16000, 50),
            Err(Error::WavCodec { format_tag: 3, bits: 16 })
        ));
    }

    #[test]
    fn skips_unknown_chunks_before_data() {
        let (l, r) = ramp(50);
        let tail = pcm16_stereo_bytes(&l, &r, 16000);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&0u32.to_le_bytes()); // size field is not trusted
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(b"junk!");
        bytes.push(0); // odd-size padding
        bytes.extend_from_slice(&tail[12..]);
        let (clip, _) = parse_wav_bytes(&bytes, 16000, 50).unwrap();
        assert_eq!(clip.samples_per_channel(), 50);
    }

    #[test]
    fn garbage_never_panics() {
        let mut rng = crate::rng::SplitMix64::new(11);
        for _ in 0..200 {
            let len = (rng.next_u64() % 256) as usize;
            let bytes: Vec<u8> = (0..len).map(|_| (rng.next_u64() & 0xff) as u8).collect();
            let _ = parse_wav_bytes(&bytes, 16000, 10);
        }
        // and hostile sizes in a valid-looking shell
        let mut shell = Vec::new();
        shell.extend_from_slice(b"RIFF\xff\xff\xff\xffWAVE");
        shell.extend_from_slice(b"fmt ");
        shell.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(parse_wav_bytes(&shell, 16000, 10).is_err());
    }
}
