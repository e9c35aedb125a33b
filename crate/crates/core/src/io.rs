//! File formats: 8-bit PNG frames, binary undistortion remaps and dataset metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PixelCoord};
use crate::imgproc::{bilinear_weights, sample_channel, Frame};

/// Reads an 8-bit PNG. Gray images stay single-channel, everything else is RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img.color() {
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
            (1, img.into_luma8().into_raw())
        }
        _ => (3, img.into_rgb8().into_raw()),
    };
    let data = bytes.into_iter().map(|b| b as f32 / 255.0).collect();
    Frame::new(w, h, channels, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Float to byte with round-half-up.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn write_png(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize(v)).collect();
    let color = if frame.channels() == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer(path, &bytes, frame.width() as u32, frame.height() as u32, color)
        .map_err(|e| Error::Image { path: path.into(), source: e })
}

pub const REMAP_MAGIC: &[u8; 8] = b"AMCREMAP";

/// Precomputed undistortion: output pixel `(x, y)` samples the raw frame at
/// `coords[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<[f32; 2]>,
}

impl RemapTable {
    pub fn identity(width: usize, height: usize) -> Self {
        let coords = (0..height).flat_map(|y| (0..width).map(move |x| [x as f32, y as f32])).collect();
        RemapTable { width, height, coords }
    }

    /// Layout: magic `AMCREMAP`, `u32` height, `u32` width, then `height * width`
    /// little-endian `f32` (x, y) pairs.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != REMAP_MAGIC {
            return Err("missing AMCREMAP header".into());
        }
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + width * height * 8;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes for {width}x{height}, found {}", bytes.len()));
        }
        let coords = bytes[16..]
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                ]
            })
            .collect();
        Ok(RemapTable { width, height, coords })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.coords.len() * 8);
        out.extend_from_slice(REMAP_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for [x, y] in &self.coords {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Resamples a raw frame; coordinates outside it give 0.
    pub fn apply(&self, raw: &Frame) -> Result<Frame> {
        let ch = raw.channels();
        let mut data = vec![0.0f32; self.width * self.height * ch];
        for (i, &[x, y]) in self.coords.iter().enumerate() {
            let px = PixelCoord::new(x as f64, y as f64);
            if bilinear_weights(raw.width(), raw.height(), px.u, px.v).is_none() {
                continue;
            }
            for c in 0..ch {
                data[i * ch + c] = sample_channel(raw, px, c).unwrap_or(0.0).clamp(0.0, 1.0);
            }
        }
        Ok(Frame::new(self.width, self.height, ch, data)?.with_meta(raw.index, raw.timestamp))
    }
}

/// `meta.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    /// Suggested downsampling factor for processing; absent for camera
    /// recordings, which use the pipeline default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<u32>,
}

impl DatasetMeta {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        meta.intrinsics.validate().map_err(|e| Error::format(path, e.to_string()))?;
        if !(meta.fps > 0.0) {
            return Err(Error::format(path, "fps must be positive"));
        }
        if meta.width != meta.intrinsics.width || meta.height != meta.intrinsics.height {
            return Err(Error::format(path, "frame size disagrees with intrinsics"));
        }
        Ok(meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path, self)
    }
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn png_roundtrip_is_exact_on_the_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(16, 9, 3, |x, y, c| ((x * 7 + y * 13 + c * 29) % 256) as f32 / 255.0).unwrap();
        let p = dir.path().join("f.png");
        write_png(&p, &f).unwrap();
        let g = read_png(&p).unwrap();
        assert_eq!(g.channels(), 3);
        assert_eq!(f.data(), g.data());

        let gray = Frame::filled(8, 8, 1, 0.5).unwrap();
        write_png(&p, &gray).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back.get(0, 0, 0), 128.0 / 255.0);
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.5 / 255.0), 2);
    }

    #[test]
    fn remap_header_and_identity() {
        let t = RemapTable::identity(10, 8);
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..8], b"AMCREMAP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 10);
        assert_eq!(bytes.len(), 16 + 10 * 8 * 8);
        let f = Frame::from_fn(10, 8, 3, |x, y, c| ((x + y + c) % 5) as f32 / 4.0).unwrap();
        assert_eq!(t.apply(&f).unwrap().data(), f.data());
        assert!(RemapTable::from_bytes(&bytes[..20]).is_err());
        assert!(RemapTable::from_bytes(b"NOTREMAPxxxxxxxx").is_err());
    }

    #[test]
    fn remap_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = RemapTable::identity(9, 9);
        t.coords[5] = [-3.0, 2.5];
        let p = dir.path().join("remap.bin");
        t.write(&p).unwrap();
        assert_eq!(RemapTable::read(&p).unwrap(), t);
        let f = Frame::filled(9, 9, 1, 0.75).unwrap();
        let out = t.apply(&f).unwrap();
        assert_eq!(out.get(5, 0, 0), 0.0);
        assert_eq!(out.get(4, 0, 0), 0.75);
    }

    #[test]
    fn meta_and_intrinsics_json() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics::new(277.0, 277.0, 159.5, 89.5, 320, 180).unwrap();
        let meta = DatasetMeta { fps: 60.0, width: 320, height: 180, intrinsics: k, downsample: Some(1) };
        let p = dir.path().join("meta.json");
        meta.save(&p).unwrap();
        assert_eq!(DatasetMeta::load(&p).unwrap(), meta);

        let kp = dir.path().join("intrinsics.json");
        std::fs::write(&kp, r#"{"fx":277,"fy":277,"cx":159.5,"cy":89.5,"width":320,"height":180}"#).unwrap();
        assert_eq!(Intrinsics::load_json(&kp).unwrap(), k);
        std::fs::write(&kp, r#"{"fx":-1,"fy":277,"cx":159.5,"cy":89.5,"width":320,"height":180}"#).unwrap();
        assert!(Intrinsics::load_json(&kp).is_err());
    }

    proptest! {
        #[test]
        fn remap_bytes_roundtrip(w in 1usize..6, h in 1usize..6, seed in any::<u32>()) {
            let coords = (0..w * h).map(|i| [(seed as f32) * 0.001 + i as f32, -(i as f32) * 0.5]).collect();
            let t = RemapTable { width: w, height: h, coords };
            prop_assert_eq!(RemapTable::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
