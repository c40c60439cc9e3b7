//! Depth maps and the on-disk image codecs (PNG via `image`, PFM by hand).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

/// Row-major camera-frame depth in meters. `0` and non-finite values mark holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "depth buffer has {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        DepthMap {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    /// Depth at a pixel, or `None` for a hole.
    #[inline]
    pub fn measurement(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.get(x, y);
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

/// Writes a little-endian PFM (single channel `Pf`). Rows go bottom to top.
pub fn write_pfm(path: &Path, width: u32, height: u32, data: &[f32]) -> Result<()> {
    if data.len() != width as usize * height as usize {
        return Err(Error::DimensionMismatch(format!(
            "PFM payload has {} values for {width}x{height}",
            data.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "Pf\n{width} {height}\n-1.0\n")?;
        for row in (0..height as usize).rev() {
            let start = row * width as usize;
            for v in &data[start..start + width as usize] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

fn pfm_header_token<R: BufRead>(reader: &mut R) -> std::io::Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(String::from_utf8_lossy(&token).into_owned());
        }
        token.push(byte[0]);
    }
}

struct PfmHeader {
    width: u32,
    height: u32,
    little_endian: bool,
}

fn read_pfm_header<R: BufRead>(reader: &mut R, path: &Path) -> Result<PfmHeader> {
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let io = |e| Error::io(path, e);
    let magic = pfm_header_token(reader).map_err(io)?;
    if magic != "Pf" {
        return Err(bad("only single-channel 'Pf' PFM files are supported"));
    }
    let width: u32 = pfm_header_token(reader)
        .map_err(io)?
        .parse()
        .map_err(|_| bad("bad width"))?;
    let height: u32 = pfm_header_token(reader)
        .map_err(io)?
        .parse()
        .map_err(|_| bad("bad height"))?;
    let scale: f64 = pfm_header_token(reader)
        .map_err(io)?
        .parse()
        .map_err(|_| bad("bad scale"))?;
    if scale == 0.0 {
        return Err(bad("zero scale"));
    }
    Ok(PfmHeader {
        width,
        height,
        little_endian: scale < 0.0,
    })
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = read_pfm_header(&mut reader, path)?;
    let (w, h) = (header.width as usize, header.height as usize);
    let mut raw = vec![0u8; w * h * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let mut data = vec![0f32; w * h];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if header.little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (row, col) = (i / w, i % w);
        data[(h - 1 - row) * w + col] = v;
    }
    DepthMap::new(header.width, header.height, data)
}

pub fn pfm_dimensions(path: &Path) -> Result<(u32, u32)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_pfm_header(&mut BufReader::new(file), path)?;
    Ok((header.width, header.height))
}

/// Reads a depth map from `.pfm` (meters) or 16-bit `.png` (millimeters).
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    match extension(path).as_deref() {
        Some("pfm") => read_pfm(path),
        Some("png") => {
            let img = image::open(path).map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
            let img = match img {
                image::DynamicImage::ImageLuma16(i) => i,
                other => {
                    return Err(Error::Format(format!(
                        "{}: depth PNG must be 16-bit grayscale, got {:?}",
                        path.display(),
                        other.color()
                    )))
                }
            };
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect();
            DepthMap::new(w, h, data)
        }
        _ => Err(Error::Format(format!(
            "{}: depth must be .pfm or .png",
            path.display()
        ))),
    }
}

pub fn write_depth_png_mm(path: &Path, depth: &DepthMap) -> Result<()> {
    let data: Vec<u16> = depth
        .as_slice()
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), data)
            .expect("buffer length matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn depth_dimensions(path: &Path) -> Result<(u32, u32)> {
    match extension(path).as_deref() {
        Some("pfm") => pfm_dimensions(path),
        _ => image_dimensions(path),
    }
}

pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.into_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Mask PNG: 255 where `mask` is true (empty pixel), 0 elsewhere.
pub fn write_mask(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    let data = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(width, height, data).ok_or_else(|| {
        Error::DimensionMismatch(format!("mask has {} pixels for {width}x{height}", mask.len()))
    })?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_mask(path: &Path) -> Result<(u32, u32, Vec<bool>)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|v| v >= 128).collect()))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_keeps_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5 - 1.0).collect();
        write_pfm(&path, 4, 3, &data).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.dimensions(), (4, 3));
        assert_eq!(back.as_slice(), &data[..]);
        assert_eq!(pfm_dimensions(&path).unwrap(), (4, 3));
        // first stored row is the bottom image row
        let raw = std::fs::read(&path).unwrap();
        let header_len = "Pf\n4 3\n-1.0\n".len();
        let first = f32::from_le_bytes(raw[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, data[8]);
    }

    #[test]
    fn png_depth_is_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut d = DepthMap::filled(3, 2, 12.345);
        d.set(1, 1, 0.0);
        write_depth_png_mm(&path, &d).unwrap();
        let back = read_depth(&path).unwrap();
        assert_eq!(back.get(0, 0), 12.345);
        assert_eq!(back.measurement(1, 1), None);
    }

    #[test]
    fn holes_are_not_measurements() {
        let mut d = DepthMap::filled(2, 1, 5.0);
        d.set(0, 0, f32::NAN);
        assert_eq!(d.measurement(0, 0), None);
        assert_eq!(d.measurement(1, 0), Some(5.0));
        d.set(1, 0, f32::INFINITY);
        assert_eq!(d.measurement(1, 0), None);
    }

    #[test]
    fn unknown_depth_extension_rejected() {
        assert!(matches!(
            read_depth(Path::new("x.exr")),
            Err(Error::Format(_))
        ));
    }
}
