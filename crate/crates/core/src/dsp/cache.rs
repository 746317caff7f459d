//! `HVSPEC1` spectrogram cache records.
//!
//! `"HVSPEC1" u32 n_frames u32 n_bins f32 hop_s f32 win_s u8 normalized`
//! followed by row-major little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SPEC_MAGIC: &[u8; 7] = b"HVSPEC1";

pub fn write_spectrogram_to<W: Write, T: Scalar>(w: &mut W, s: &Spectrogram<T>) -> Result<()> {
    w.write_all(SPEC_MAGIC)?;
    w.write_u32::<LittleEndian>(s.n_frames as u32)?;
    w.write_u32::<LittleEndian>(s.n_bins as u32)?;
    w.write_f32::<LittleEndian>(s.hop_s as f32)?;
    w.write_f32::<LittleEndian>(s.win_s as f32)?;
    w.write_u8(s.normalized as u8)?;
    for &v in &s.values {
        w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
    }
    Ok(())
}

pub fn read_spectrogram_from<R: Read, T: Scalar>(r: &mut R) -> Result<Spectrogram<T>> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != SPEC_MAGIC {
        return Err(Error::malformed("spectrogram cache", "bad magic"));
    }
    let n_frames = r.read_u32::<LittleEndian>()? as usize;
    let n_bins = r.read_u32::<LittleEndian>()? as usize;
    let hop_s = r.read_f32::<LittleEndian>()? as f64;
    let win_s = r.read_f32::<LittleEndian>()? as f64;
    let normalized = match r.read_u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::malformed("spectrogram cache", format!("normalized flag {other}")))
        }
    };
    let n = n_frames * n_bins;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(T::lit(r.read_f32::<LittleEndian>()? as f64));
    }
    Ok(Spectrogram {
        values,
        n_frames,
        n_bins,
        hop_s,
        win_s,
        normalized,
    })
}

pub fn write_spectrogram<T: Scalar>(path: &Path, s: &Spectrogram<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectrogram_to(&mut w, s)?;
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram<T: Scalar>(path: &Path) -> Result<Spectrogram<T>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    read_spectrogram_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_roundtrip() {
        let s = Spectrogram {
            values: vec![0.5f32, 1.5, 2.5, 3.5, 4.5, 5.5],
            n_frames: 2,
            n_bins: 3,
            hop_s: 0.01f32 as f64,
            win_s: 0.025f32 as f64,
            normalized: true,
        };
        let mut buf = Vec::new();
        write_spectrogram_to(&mut buf, &s).unwrap();
        assert_eq!(buf.len(), 7 + 4 + 4 + 4 + 4 + 1 + 6 * 4);
        assert_eq!(&buf[..7], b"HVSPEC1");
        assert_eq!(u32::from_le_bytes(buf[7..11].try_into().unwrap()), 2);
        assert_eq!(buf[23], 1);
        let back: Spectrogram<f32> = read_spectrogram_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);

        buf[0] = b'Z';
        assert!(read_spectrogram_from::<_, f32>(&mut buf.as_slice()).is_err());
    }
}
