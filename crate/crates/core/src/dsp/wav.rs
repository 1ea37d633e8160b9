use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("unexpected end of file reading {n} bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct Fmt {
    format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

/// Parses a RIFF/WAVE byte buffer (PCM16 or IEEE float32, any channel count).
pub fn read_wav_bytes(buf: &[u8]) -> Result<Waveform> {
    let mut r = Reader { buf, pos: 0 };
    let bad = |offset: usize, message: &str| Error::Format {
        offset: offset as u64,
        message: message.to_string(),
    };
    if r.take(4)? != b"RIFF" {
        return Err(bad(0, "missing RIFF magic"));
    }
    let _riff_len = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(bad(8, "missing WAVE form type"));
    }

    let mut fmt: Option<Fmt> = None;
    loop {
        if r.pos + 8 > buf.len() {
            return Err(bad(r.pos, "no data chunk"));
        }
        let id_at = r.pos;
        let id: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let len = r.u32()? as usize;
        let body_at = r.pos;
        match &id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad(id_at, "fmt chunk shorter than 16 bytes"));
                }
                let mut format = r.u16()?;
                let channels = r.u16()?;
                let rate = r.u32()?;
                let _byte_rate = r.u32()?;
                let _align = r.u16()?;
                let bits = r.u16()?;
                if format == FORMAT_EXTENSIBLE {
                    if len < 40 {
                        return Err(bad(body_at, "extensible fmt chunk shorter than 40 bytes"));
                    }
                    let _cb = r.u16()?;
                    let _valid = r.u16()?;
                    let _mask = r.u32()?;
                    format = r.u16()?;
                }
                if channels == 0 {
                    return Err(bad(body_at + 2, "zero channels"));
                }
                if rate == 0 {
                    return Err(bad(body_at + 4, "zero sample rate"));
                }
                fmt = Some(Fmt {
                    format,
                    channels,
                    rate,
                    bits,
                });
                r.pos = body_at + len + (len & 1);
            }
            b"data" => {
                let f = fmt.ok_or_else(|| bad(id_at, "data chunk before fmt chunk"))?;
                let avail = buf.len() - body_at;
                if len > avail {
                    return Err(bad(body_at, &format!("data chunk claims {len} bytes, {avail} present")));
                }
                return decode(&f, &buf[body_at..body_at + len]);
            }
            _ => {
                r.pos = body_at + len + (len & 1);
            }
        }
    }
}

fn decode(f: &Fmt, data: &[u8]) -> Result<Waveform> {
    let ch = usize::from(f.channels);
    let frames: Vec<f64> = match (f.format, f.bits) {
        (FORMAT_PCM, 16) => {
            let vals: Vec<f64> = data
                .chunks_exact(2)
                .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
                .collect();
            downmix(&vals, ch)
        }
        (FORMAT_FLOAT, 32) => {
            let vals: Vec<f64> = data
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            downmix(&vals, ch)
        }
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "WAV format tag {format:#06x} with {bits} bits per sample (only PCM16 and float32 are read)"
            )))
        }
    };
    Waveform::from_f64(&frames, f.rate)
}

fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|fr| fr.iter().sum::<f64>() / channels as f64)
        .collect()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav_bytes(&buf)
}

fn quantize(x: f32) -> i16 {
    let v = (f64::from(x) * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

/// Serializes a waveform as mono PCM16 WAV.
pub fn wav_bytes(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let rate = w.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, wav_bytes(w)).map_err(|e| Error::io(path, e))
}
