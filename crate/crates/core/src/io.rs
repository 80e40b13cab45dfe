//! Image and float-map files.
//!
//! Float maps use a small lossless format (`.f64map`), little-endian:
//!
//! ```text
//! magic   8 bytes  "LIDFMAP\0"
//! version u32      currently 1
//! width   u32
//! height  u32
//! values  width·height f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{Mask, Plane};

pub const FLOAT_MAP_VERSION: u32 = 1;
const FLOAT_MAP_MAGIC: &[u8; 8] = b"LIDFMAP\0";

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any 8-bit image as grayscale scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Plane> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    Plane::from_vec(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    )
}

/// `[0, 1]` values to 8-bit gray, rounding to nearest and clamping.
pub fn to_gray8(plane: &Plane) -> GrayImage {
    GrayImage::from_fn(plane.width() as u32, plane.height() as u32, |x, y| {
        Luma([(plane.get(x as usize, y as usize) * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Writes a `[0, 1]` plane as 8-bit grayscale; format follows the
/// extension (`.png` or `.pgm`).
pub fn write_gray(path: &Path, plane: &Plane) -> Result<()> {
    to_gray8(plane).save(path).map_err(|e| image_err(path, e))
}

/// Min-max scaled 8-bit PNG for viewing.
pub fn write_heatmap_png(path: &Path, plane: &Plane) -> Result<()> {
    write_gray(path, &plane.min_max_normalized())
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    write_gray(path, &mask.map(|&b| if b { 1.0 } else { 0.0 }))
}

/// Any pixel above mid-gray is foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(read_gray(path)?.map(|&v| v > 0.5))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn rgb_from_plane(plane: &Plane) -> RgbImage {
    let gray = to_gray8(plane);
    RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    })
}

pub fn encode_float_map(out: &mut impl Write, plane: &Plane) -> std::io::Result<()> {
    out.write_all(FLOAT_MAP_MAGIC)?;
    out.write_all(&FLOAT_MAP_VERSION.to_le_bytes())?;
    out.write_all(&(plane.width() as u32).to_le_bytes())?;
    out.write_all(&(plane.height() as u32).to_le_bytes())?;
    for v in plane.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn decode_float_map(input: &mut impl Read) -> Result<Plane> {
    let bad = |msg: &str| Error::data(format!("float map: {msg}"));
    let mut head = [0u8; 20];
    input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..8] != FLOAT_MAP_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes"));
    if word(8) != FLOAT_MAP_VERSION {
        return Err(bad("unsupported version"));
    }
    let (w, h) = (word(12) as usize, word(16) as usize);
    let mut bytes = vec![0u8; w * h * 8];
    input.read_exact(&mut bytes).map_err(|_| bad("truncated values"))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Plane::from_vec(w, h, data)
}

pub fn write_float_map(path: &Path, plane: &Plane) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    encode_float_map(&mut out, plane)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_float_map(path: &Path) -> Result<Plane> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_float_map(&mut BufReader::new(file))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn float_map_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let plane = Plane::from_fn(w, h, |x, y| f64::from_bits(seed.rotate_left((x * 7 + y) as u32) & 0x7fef_ffff_ffff_ffff));
            let mut buf = Vec::new();
            encode_float_map(&mut buf, &plane).unwrap();
            let back = decode_float_map(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.dims(), plane.dims());
            for (a, b) in back.data().iter().zip(plane.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn gray_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plane = Plane::from_fn(5, 4, |x, y| ((x + 5 * y) * 12) as f64 / 255.0);
        for name in ["a.png", "a.pgm"] {
            let path = dir.path().join(name);
            write_gray(&path, &plane).unwrap();
            let back = read_gray(&path).unwrap();
            for (a, b) in back.data().iter().zip(plane.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(decode_float_map(&mut &b"nonsense"[..]).is_err());
    }
}
