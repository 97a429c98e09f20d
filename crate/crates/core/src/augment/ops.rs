//! Individual transforms with explicit parameters. The sampling wrappers in
//! the parent module draw those parameters from an [`AugmentConfig`].
//!
//! [`AugmentConfig`]: super::AugmentConfig

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::homography::{self, Mat3};
use super::AugmentError;
use crate::image::Image;

/// An image with its coverage mask (0 = background, 255 = target).
#[derive(Clone, Debug, PartialEq)]
pub struct Masked {
    pub image: Image,
    pub alpha: Vec<u8>,
}

impl Masked {
    /// Splits an RGBA image into RGB and alpha.
    pub fn from_rgba(img: &Image) -> Self {
        assert_eq!(img.channels(), 4, "expected RGBA");
        Self {
            image: img.rgb(),
            alpha: img.channel(3).into_raw(),
        }
    }

    pub fn with_image(&self, image: Image) -> Self {
        Self {
            image,
            alpha: self.alpha.clone(),
        }
    }

    pub fn coverage(&self) -> u64 {
        self.alpha.iter().map(|&a| a as u64).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }
}

pub fn luma(r: f64, g: f64, b: f64) -> u8 {
    (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8
}

pub fn select_channel(img: &Image, channel: Channel) -> Result<Image, AugmentError> {
    if img.channels() < 3 {
        return Err(AugmentError::Channels {
            op: "select_channel",
            got: img.channels(),
        });
    }
    Ok(img.channel(channel.index()))
}

/// Scales brightness by `1 + brightness`, rotates hue by `hue_turns`, then
/// reduces to luma. Zero deltas give the plain luma image.
pub fn color_jitter_with(img: &Image, brightness: f64, hue_turns: f64) -> Result<Image, AugmentError> {
    if img.channels() < 3 {
        return Err(AugmentError::Channels {
            op: "color_jitter",
            got: img.channels(),
        });
    }
    let c = img.channels();
    let identity = brightness == 0.0 && hue_turns == 0.0;
    let data = img
        .data()
        .chunks_exact(c)
        .map(|p| {
            let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
            if identity {
                return luma(r, g, b);
            }
            let (h, s, v) = rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0);
            let h = (h + hue_turns).rem_euclid(1.0);
            let v = (v * (1.0 + brightness)).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            luma(r * 255.0, g * 255.0, b * 255.0)
        })
        .collect();
    Ok(Image::from_raw(img.width(), img.height(), 1, data).unwrap())
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Bilinear sample at continuous pixel coordinates (pixel centres at
/// integers). Out-of-frame neighbours contribute zero, to both colour and
/// alpha.
fn bilinear(m: &Masked, x: f64, y: f64, out: &mut [f64]) -> f64 {
    let (w, h, c) = (m.image.width() as i64, m.image.height() as i64, m.image.channels());
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut alpha = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wgt = wx * wy;
            let (sx, sy) = (x0 + dx, y0 + dy);
            if wgt == 0.0 || sx < 0 || sy < 0 || sx >= w || sy >= h {
                continue;
            }
            let i = (sy * w + sx) as usize;
            let px = &m.image.data()[i * c..(i + 1) * c];
            for k in 0..c {
                out[k] += wgt * px[k] as f64;
            }
            alpha += wgt * m.alpha[i] as f64;
        }
    }
    alpha
}

/// Resamples through `inverse`, which maps output pixel centres to input
/// pixel centres.
fn resample(m: &Masked, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Masked {
    let (w, h, c) = (m.image.width(), m.image.height(), m.image.channels());
    let mut img = Image::new(w, h, c).unwrap();
    let mut alpha = vec![0u8; w * h];
    let mut buf = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64, y as f64);
            let a = bilinear(m, sx, sy, &mut buf);
            let px = img.pixel_mut(x, y);
            for k in 0..c {
                px[k] = buf[k].round().clamp(0.0, 255.0) as u8;
            }
            alpha[y * w + x] = a.round().clamp(0.0, 255.0) as u8;
        }
    }
    Masked { image: img, alpha }
}

/// Scales by `scale` about the frame centre, then shifts by `(tx, ty)` px.
pub fn translate_scale_with(m: &Masked, tx: f64, ty: f64, scale: f64) -> Masked {
    let cx = (m.image.width() as f64 - 1.0) / 2.0;
    let cy = (m.image.height() as f64 - 1.0) / 2.0;
    resample(m, |x, y| (cx + (x - cx - tx) / scale, cy + (y - cy - ty) / scale))
}

/// Frame corners in pixel-centre coordinates, clockwise from top-left.
pub fn frame_corners(width: usize, height: usize) -> [[f64; 2]; 4] {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
}

/// Warps by `h`, which maps input coordinates to output coordinates.
pub fn warp_with(m: &Masked, h: &Mat3) -> Result<Masked, AugmentError> {
    let inv = homography::invert(h).ok_or(AugmentError::DegenerateHomography)?;
    Ok(resample(m, |x, y| {
        let p = homography::apply(&inv, [x, y]);
        (p[0], p[1])
    }))
}

/// Composites `background` (one value per pixel) behind the target and
/// drops the mask: `out = (a·img + (255 − a)·bg) / 255`.
pub fn composite_with(m: &Masked, background: &[u8]) -> Image {
    let c = m.image.channels();
    let mut out = m.image.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(c).enumerate() {
        let a = m.alpha[i] as u32;
        if a == 255 {
            continue;
        }
        let bg = background[i] as u32;
        for v in px.iter_mut() {
            *v = ((a * *v as u32 + (255 - a) * bg + 127) / 255) as u8;
        }
    }
    out
}

pub fn gaussian_noise_with<R: Rng + ?Sized>(img: &Image, sigma: f64, rng: &mut R) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Normalized Gaussian taps for radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur_with(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h, c) = (img.width() as i64, img.height() as i64, img.channels());
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = (x + j as i64 - r).clamp(0, w - 1);
                    acc += kv * src[((y * w + sx) as usize) * c + ch] as f64;
                }
                tmp[((y * w + x) as usize) * c + ch] = acc;
            }
        }
    }
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = (y + j as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * c + ch];
                }
                dst[((y * w + x) as usize) * c + ch] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// `out = clamp(gain·(in − 128) + 128 + offset)`.
pub fn gain_contrast_with(img: &Image, gain: f64, offset: f64) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (gain * (*v as f64 - 128.0) + 128.0 + offset).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Axis-aligned patch in pixels; may extend past the frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub x: i64,
    pub y: i64,
    pub width: usize,
    pub height: usize,
}

pub fn patch_dropout_with(img: &Image, patches: &[Patch]) -> Image {
    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    for p in patches {
        for y in p.y.max(0)..(p.y + p.height as i64).min(h) {
            for x in p.x.max(0)..(p.x + p.width as i64).min(w) {
                out.pixel_mut(x as usize, y as usize).iter_mut().for_each(|v| *v = 0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_rgb(n: usize) -> Image {
        let data = (0..n * n)
            .flat_map(|i| {
                let (x, y) = (i % n, i / n);
                [(x * 255 / n) as u8, (y * 255 / n) as u8, ((x + y) * 127 / n) as u8]
            })
            .collect();
        Image::from_raw(n, n, 3, data).unwrap()
    }

    fn disk(n: usize, r: f64) -> Masked {
        let c = (n as f64 - 1.0) / 2.0;
        let alpha: Vec<u8> = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 - c, (i / n) as f64 - c);
                if x * x + y * y <= r * r {
                    255
                } else {
                    0
                }
            })
            .collect();
        let data = alpha.iter().map(|&a| if a > 0 { 200 } else { 0 }).collect();
        Masked {
            image: Image::from_raw(n, n, 1, data).unwrap(),
            alpha,
        }
    }

    #[test]
    fn zero_jitter_is_reference_luma() {
        let img = gradient_rgb(16);
        let out = color_jitter_with(&img, 0.0, 0.0).unwrap();
        assert_eq!(out.channels(), 1);
        for (p, &g) in img.data().chunks_exact(3).zip(out.data()) {
            let want = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8;
            assert_eq!(g, want);
        }
        assert!(color_jitter_with(&img.channel(0), 0.0, 0.0).is_err());
    }

    #[test]
    fn full_turn_hue_and_hsv_round_trip() {
        let img = gradient_rgb(16);
        let plain = color_jitter_with(&img, 0.0, 0.0).unwrap();
        let turned = color_jitter_with(&img, 0.0, 1.0).unwrap();
        for (a, b) in plain.data().iter().zip(turned.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
        let darker = color_jitter_with(&img, -0.5, 0.0).unwrap();
        assert!(darker.data().iter().zip(plain.data()).all(|(d, p)| d <= p));
    }

    #[test]
    fn channel_selection() {
        let red = Image::from_raw(1, 1, 3, vec![255, 0, 0]).unwrap();
        assert_eq!(select_channel(&red, Channel::Red).unwrap().data(), &[255]);
        assert_eq!(select_channel(&red, Channel::Green).unwrap().data(), &[0]);
        let gray = Image::from_raw(2, 1, 3, vec![9, 9, 9, 40, 40, 40]).unwrap();
        let r = select_channel(&gray, Channel::Red).unwrap();
        assert_eq!(r, select_channel(&gray, Channel::Green).unwrap());
        assert_eq!(r, select_channel(&gray, Channel::Blue).unwrap());
        assert!(select_channel(&r, Channel::Red).is_err());
    }

    #[test]
    fn identity_translate_scale_is_exact() {
        let m = Masked {
            image: gradient_rgb(20),
            alpha: (0..400).map(|i| (i * 13 % 256) as u8).collect(),
        };
        assert_eq!(translate_scale_with(&m, 0.0, 0.0, 1.0), m);
    }

    #[test]
    fn doubling_scale_quadruples_area() {
        // area measured as alpha mass, so the bilinear rim counts fractionally
        let m = disk(64, 10.0);
        let before = m.coverage() as f64;
        let out = translate_scale_with(&m, 0.0, 0.0, 2.0);
        let after = out.coverage() as f64;
        assert!((after / before - 4.0).abs() < 0.4, "{before} -> {after}");
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let m = disk(32, 5.0);
        let out = translate_scale_with(&m, 3.0, -2.0, 1.0);
        for y in 2..30 {
            for x in 0..29 {
                assert_eq!(out.alpha[(y - 2) * 32 + x + 3], m.alpha[y * 32 + x]);
            }
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let m = Masked {
            image: gradient_rgb(24),
            alpha: vec![255; 576],
        };
        let c = frame_corners(24, 24);
        let h = homography::from_corners(&c, &c).unwrap();
        assert_eq!(warp_with(&m, &h).unwrap(), m);
    }

    #[test]
    fn composite_rules() {
        let m = Masked {
            image: Image::from_raw(3, 1, 1, vec![200, 200, 200]).unwrap(),
            alpha: vec![255, 0, 128],
        };
        let out = composite_with(&m, &[10, 10, 10]);
        assert_eq!(out.data(), &[200, 10, 105]);
        let opaque = Masked {
            alpha: vec![255; 3],
            ..m.clone()
        };
        assert_eq!(composite_with(&opaque, &[0, 0, 0]), opaque.image);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = gradient_rgb(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_noise_with(&img, 0.0, &mut rng), img);
        assert_eq!(gaussian_blur_with(&img, 0.0), img);
    }

    #[test]
    fn blur_kernel_and_interior_mean() {
        let k = gaussian_kernel(1.2);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let img = gradient_rgb(40).channel(0);
        let out = gaussian_blur_with(&img, 1.5);
        let mean = |im: &Image| {
            let mut s = 0.0;
            for y in 10..30 {
                for x in 10..30 {
                    s += im.pixel(x, y)[0] as f64;
                }
            }
            s / 400.0
        };
        assert!((mean(&img) - mean(&out)).abs() <= 1.0);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let img = Image::filled(1000, 1000, 1, 128).unwrap();
        let out = gaussian_noise_with(&img, 10.0, &mut ChaCha8Rng::seed_from_u64(5));
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 10.0).abs() < 0.5, "std {}", var.sqrt());
    }

    #[test]
    fn gain_contrast_arithmetic() {
        let img = Image::from_raw(3, 1, 1, vec![100, 128, 250]).unwrap();
        assert_eq!(gain_contrast_with(&img, 1.0, 0.0), img);
        assert_eq!(gain_contrast_with(&img, 0.0, 0.0).data(), &[128, 128, 128]);
        assert_eq!(gain_contrast_with(&img, 0.0, 7.0).data(), &[135, 135, 135]);
        assert_eq!(gain_contrast_with(&img, 2.0, 0.0).data(), &[72, 128, 255]);
    }

    #[test]
    fn patch_counts() {
        let img = Image::filled(64, 64, 1, 77).unwrap();
        assert_eq!(patch_dropout_with(&img, &[]), img);
        let p = Patch {
            x: 10,
            y: 20,
            width: 16,
            height: 16,
        };
        let out = patch_dropout_with(&img, &[p]);
        assert_eq!(out.data().iter().filter(|&&v| v == 0).count(), 256);
        let edge = Patch { x: 56, y: -4, ..p };
        let out = patch_dropout_with(&img, &[edge]);
        assert_eq!(out.data().iter().filter(|&&v| v == 0).count(), 8 * 12);
    }
}
