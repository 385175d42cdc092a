//! 32-bit IEEE-float RIFF/WAVE reading and writing.
//!
//! Files with more than two channels use `WAVE_FORMAT_EXTENSIBLE`; mono and
//! stereo files use the plain `WAVE_FORMAT_IEEE_FLOAT` header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{data, invalid, Result};

const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const KSDATAFORMAT_SUBTYPE_IEEE_FLOAT: [u8; 16] = [
    0x03, 0x00, 0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
];

/// Channel-major audio as read from or written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    pub sample_rate_hz: u32,
    pub channels: Vec<Vec<f32>>,
}

pub fn write_wav(path: &Path, sample_rate_hz: u32, channels: &[Vec<f64>]) -> Result<()> {
    let n_ch = channels.len();
    if n_ch == 0 || n_ch > u16::MAX as usize {
        return Err(invalid(format!("cannot write a WAV file with {n_ch} channels")));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n) {
        return Err(invalid("all WAV channels must have equal length"));
    }
    let block_align = 4 * n_ch;
    let data_bytes = (n * block_align) as u64;
    let extensible = n_ch > 2;
    let fmt_len: u32 = if extensible { 40 } else { 16 };
    // fact chunk is required for non-PCM formats
    let riff_len = 4 + (8 + fmt_len as u64) + 12 + (8 + data_bytes);
    if riff_len > u32::MAX as u64 {
        return Err(invalid("WAV payload exceeds 4 GiB"));
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(riff_len as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&fmt_len.to_le_bytes())?;
    w.write_all(&(if extensible { FORMAT_EXTENSIBLE } else { FORMAT_IEEE_FLOAT }).to_le_bytes())?;
    w.write_all(&(n_ch as u16).to_le_bytes())?;
    w.write_all(&sample_rate_hz.to_le_bytes())?;
    w.write_all(&(sample_rate_hz * block_align as u32).to_le_bytes())?;
    w.write_all(&(block_align as u16).to_le_bytes())?;
    w.write_all(&32u16.to_le_bytes())?;
    if extensible {
        w.write_all(&22u16.to_le_bytes())?;
        w.write_all(&32u16.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?; // no speaker mapping
        w.write_all(&KSDATAFORMAT_SUBTYPE_IEEE_FLOAT)?;
    }
    w.write_all(b"fact")?;
    w.write_all(&4u32.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&(data_bytes as u32).to_le_bytes())?;
    for t in 0..n {
        for ch in channels {
            w.write_all(&(ch[t] as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

pub fn read_wav(path: &Path) -> Result<WavData> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_wav(&bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn parse_wav(b: &[u8]) -> std::result::Result<WavData, String> {
    if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32, u16)> = None;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let len = u32_at(b, pos + 4) as usize;
        let body = pos + 8;
        if body + len > b.len() {
            return Err(format!("truncated {:?} chunk", String::from_utf8_lossy(id)));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err("fmt chunk too short".into());
                }
                let mut tag = u16_at(b, body);
                let n_ch = u16_at(b, body + 2);
                let rate = u32_at(b, body + 4);
                let bits = u16_at(b, body + 14);
                if tag == FORMAT_EXTENSIBLE {
                    if len < 40 || b[body + 24..body + 40] != KSDATAFORMAT_SUBTYPE_IEEE_FLOAT {
                        return Err("unsupported extensible subformat".into());
                    }
                    tag = FORMAT_IEEE_FLOAT;
                }
                if tag != FORMAT_IEEE_FLOAT || bits != 32 {
                    return Err(format!("only 32-bit float WAV is supported (tag {tag}, {bits} bits)"));
                }
                if n_ch == 0 {
                    return Err("zero channels".into());
                }
                fmt = Some((n_ch, rate, bits));
            }
            b"data" => {
                let (n_ch, rate, _) = fmt.ok_or("data chunk before fmt chunk")?;
                let n_ch = n_ch as usize;
                let frames = len / (4 * n_ch);
                let mut channels = vec![Vec::with_capacity(frames); n_ch];
                for t in 0..frames {
                    for (c, ch) in channels.iter_mut().enumerate() {
                        let i = body + 4 * (t * n_ch + c);
                        ch.push(f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]));
                    }
                }
                return Ok(WavData { sample_rate_hz: rate, channels });
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err("no data chunk".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mono_and_multichannel() {
        let dir = std::env::temp_dir().join(format!("sonohazard-wav-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for n_ch in [1usize, 2, 5] {
            let chans: Vec<Vec<f64>> =
                (0..n_ch).map(|c| (0..37).map(|t| (t as f64 * 0.1 + c as f64).sin()).collect()).collect();
            let p = dir.join(format!("rt{n_ch}.wav"));
            write_wav(&p, 96_000, &chans).unwrap();
            let back = read_wav(&p).unwrap();
            assert_eq!(back.sample_rate_hz, 96_000);
            assert_eq!(back.channels.len(), n_ch);
            for (a, b) in chans.iter().zip(&back.channels) {
                let a32: Vec<f32> = a.iter().map(|v| *v as f32).collect();
                assert_eq!(&a32, b);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_wav(b"RIFX0000WAVE").is_err());
        assert!(parse_wav(b"").is_err());
    }
}
