//! RIFF/WAVE reading and writing, PCM 16-bit mono only.

use super::Waveform;
use crate::container::{atomic_write, BinWriter};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

const SCALE: f64 = 32768.0;

/// Read a PCM16 mono WAV file. Samples are scaled by 1/32768 into [-1, 1).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::malformed(path, "file too short for RIFF header"))?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(Error::malformed(path, "not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk = [0u8; 8];
        match r.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(_) => break,
        }
        let id = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        let mut body = vec![0u8; size];
        r.read_exact(&mut body)
            .map_err(|_| Error::malformed(path, "truncated chunk body"))?;
        if size % 2 == 1 {
            // chunks are word-aligned
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
        match &id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::malformed(path, "fmt chunk too short"));
                }
                let format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::malformed(path, "missing fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only PCM 16-bit is supported (format={format}, bits={bits})",
            path.display()
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only mono audio is supported ({channels} channels)",
            path.display()
        )));
    }
    let data = data.ok_or_else(|| Error::malformed(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(Error::malformed(path, "odd data chunk length"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / SCALE)
        .collect();
    Waveform::new(samples, rate)
}

/// Write a PCM16 mono WAV file. Samples are clipped to [-1, 1 - 1/32768]
/// before quantization.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<()> {
    if !w.samples.iter().all(|s| s.is_finite()) {
        return Err(Error::InvalidInput("waveform has non-finite samples".into()));
    }
    let n = w.samples.len();
    let data_len = (n * 2) as u32;
    atomic_write(path, |out| {
        let mut b = BinWriter::new(out, path);
        b.bytes(b"RIFF")?;
        b.u32(36 + data_len)?;
        b.bytes(b"WAVE")?;
        b.bytes(b"fmt ")?;
        b.u32(16)?;
        b.bytes(&1u16.to_le_bytes())?; // PCM
        b.bytes(&1u16.to_le_bytes())?; // mono
        b.u32(w.sample_rate)?;
        b.u32(w.sample_rate * 2)?;
        b.bytes(&2u16.to_le_bytes())?; // block align
        b.bytes(&16u16.to_le_bytes())?;
        b.bytes(b"data")?;
        b.u32(data_len)?;
        for &s in &w.samples {
            let clipped = s.clamp(-1.0, (SCALE - 1.0) / SCALE);
            let q = (clipped * SCALE).round() as i32;
            b.bytes(&(q.clamp(i16::MIN as i32, i16::MAX as i32) as i16).to_le_bytes())?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn tmpwav() -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        (dir, path)
    }

    #[test]
    fn zeros_roundtrip() {
        let (_d, path) = tmpwav();
        let w = Waveform::new(vec![0.0; 16], 8000).unwrap();
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 8000);
        assert_eq!(r.samples, vec![0.0; 16]);
    }

    #[test]
    fn full_scale_sample_value() {
        let (_d, path) = tmpwav();
        let w = Waveform::new(vec![32767.0 / 32768.0], 8000).unwrap();
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        assert!((r.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_above_one() {
        let (_d, path) = tmpwav();
        let w = Waveform::new(vec![2.0, -3.0], 8000).unwrap();
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        assert!((r.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((r.samples[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_roundtrip_quantization_bound() {
        let (_d, path) = tmpwav();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples.clone(), 8000).unwrap();
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        let max_err = samples
            .iter()
            .zip(&r.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "max_err={max_err}");
    }

    #[test]
    fn rejects_stereo() {
        let (_d, path) = tmpwav();
        // hand-build a stereo header
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, bytes).unwrap();
        match read_wav(&path) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected unsupported format, got {other:?}"),
        }
    }

    #[test]
    fn rejects_garbage() {
        let (_d, path) = tmpwav();
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
