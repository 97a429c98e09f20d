//! Interleaved 8-bit rasters and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions {width}x{height}x{channels} do not match {len} bytes")]
    Size {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png decode: {source}")]
    Decode {
        path: String,
        #[source]
        source: png::DecodingError,
    },
    #[error("{path}: png encode: {source}")]
    Encode {
        path: String,
        #[source]
        source: png::EncodingError,
    },
    #[error("{path}: unsupported png layout ({0:?}, {1:?})", .detail.0, .detail.1)]
    Layout {
        path: String,
        detail: (png::ColorType, png::BitDepth),
    },
}

/// Row-major interleaved raster with 1, 3 or 4 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, ImageError> {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        check_channels(channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_channels(channels)?;
        if data.len() != width * height * channels {
            return Err(ImageError::Size {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels, "channel {c} of {}", self.channels);
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Drops the alpha channel of an RGBA image.
    pub fn rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            4 => Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            },
            1 => Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            },
            _ => unreachable!(),
        }
    }

    /// Expands to RGBA; `alpha` defaults to fully opaque.
    pub fn to_rgba(&self, alpha: Option<&[u8]>) -> Image {
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(n * 4);
        for i in 0..n {
            let p = &self.data[i * self.channels..(i + 1) * self.channels];
            let (r, g, b) = match self.channels {
                1 => (p[0], p[0], p[0]),
                _ => (p[0], p[1], p[2]),
            };
            let a = match (alpha, self.channels) {
                (Some(a), _) => a[i],
                (None, 4) => p[3],
                (None, _) => 255,
            };
            data.extend_from_slice(&[r, g, b, a]);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 4,
            data,
        }
    }

    /// Places `parts` left to right, top-aligned, on a black canvas.
    pub fn hstack(parts: &[&Image]) -> Image {
        let channels = parts.iter().map(|p| p.channels).max().unwrap_or(4);
        let width = parts.iter().map(|p| p.width).sum();
        let height = parts.iter().map(|p| p.height).max().unwrap_or(0);
        let mut out = Image::new(width, height, channels).unwrap();
        let mut x0 = 0;
        for p in parts {
            let p = if p.channels == channels {
                (*p).clone()
            } else {
                p.to_rgba(None)
            };
            out.blit(&p, x0, 0);
            x0 += p.width;
        }
        out
    }

    /// Copies `src` (same channel count) with its top-left corner at `(x0, y0)`,
    /// clipping at the canvas border.
    pub fn blit(&mut self, src: &Image, x0: usize, y0: usize) {
        assert_eq!(src.channels, self.channels);
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            let w = src.width.min(self.width.saturating_sub(x0));
            let s = &src.data[y * src.width * src.channels..][..w * src.channels];
            let d0 = ((y0 + y) * self.width + x0) * self.channels;
            self.data[d0..d0 + w * self.channels].copy_from_slice(s);
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = File::create(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_png(BufWriter::new(file))
            .map_err(|source| ImageError::Encode {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn write_png<W: std::io::Write>(&self, w: W) -> Result<(), png::EncodingError> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            _ => png::ColorType::Rgba,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()
    }

    pub fn load_png(path: &Path) -> Result<Image, ImageError> {
        let name = || path.display().to_string();
        let file = File::open(path).map_err(|source| ImageError::Io { path: name(), source })?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|source| ImageError::Decode { path: name(), source })?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|source| ImageError::Decode { path: name(), source })?;
        buf.truncate(info.buffer_size());
        let channels = match (info.color_type, info.bit_depth) {
            (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
            (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
            (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
            (png::ColorType::GrayscaleAlpha, png::BitDepth::Eight) => {
                let data = buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0], p[1]]).collect();
                return Image::from_raw(info.width as usize, info.height as usize, 4, data);
            }
            other => return Err(ImageError::Layout { path: name(), detail: other }),
        };
        Image::from_raw(info.width as usize, info.height as usize, channels, buf)
    }
}

fn check_channels(c: usize) -> Result<(), ImageError> {
    match c {
        1 | 3 | 4 => Ok(()),
        _ => Err(ImageError::Channels(c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_all_layouts() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3, 4] {
            let data = (0..5 * 3 * c).map(|i| (i * 7 % 256) as u8).collect();
            let img = Image::from_raw(5, 3, c, data).unwrap();
            let p = dir.path().join(format!("c{c}.png"));
            img.save_png(&p).unwrap();
            assert_eq!(Image::load_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn channel_and_stack() {
        let img = Image::from_raw(2, 1, 4, vec![1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(img.channel(1).data(), &[2, 6]);
        assert_eq!(img.rgb().data(), &[1, 2, 3, 5, 6, 7]);
        let s = Image::hstack(&[&img, &img.channel(0)]);
        assert_eq!((s.width(), s.height(), s.channels()), (4, 1, 4));
        assert_eq!(s.pixel(2, 0), &[1, 1, 1, 255]);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(Image::from_raw(2, 2, 3, vec![0; 11]).is_err());
        assert!(Image::new(2, 2, 2).is_err());
    }
}
