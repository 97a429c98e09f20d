//! Training-time augmentation of alpha-masked renders.
//!
//! The pipeline order is fixed: channel handling, translate/scale,
//! homography warp, Perlin background, blur, noise, gain/contrast, patch
//! dropout, then scaling to `[0, 1]`. Backgrounds go in before noise so the
//! noise covers them too, and dropout runs last so its patches stay empty.
//!
//! Every stage takes its randomness from an injected RNG. [`stream_rng`]
//! derives one independent stream per `(seed, epoch, sample index)`, so
//! augmenting samples in parallel gives the same result as a serial loop.

pub mod homography;
pub mod ops;
pub mod perlin;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use ops::{Channel, Masked, Patch};

use crate::image::Image;
use crate::scene::Sample;
use crate::tensor::Tensor;
use crate::viewsphere::ViewClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("{op} needs a 3-channel image, got {got} channel(s)")]
    Channels { op: &'static str, got: usize },
    #[error("target left the frame on {0} consecutive translate/scale draws")]
    OutOfFrame(usize),
    #[error("no usable homography after {0} corner draws")]
    Degenerate(usize),
    #[error("degenerate homography")]
    DegenerateHomography,
    #[error("invalid augmentation setting {key}: {msg}")]
    Config { key: &'static str, msg: String },
}

/// Redraw budget for the in-frame and convexity constraints.
pub const MAX_TRIES: usize = 10;
/// Minimum share of the scaled target mask that must stay in frame.
pub const MIN_IN_FRAME: f64 = 0.8;

/// Enable flags and parameter ranges for every transform. Ranges are
/// `(lo, hi)`; a collapsed range always yields `lo`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub seed: u64,
    pub color_jitter: bool,
    /// Brightness scale delta, drawn from `±brightness`.
    pub brightness: f64,
    /// Hue rotation in turns, drawn from `±hue`.
    pub hue: f64,
    pub translate_scale: bool,
    /// Shift as a fraction of the frame, drawn from `±translate` per axis.
    pub translate: f64,
    pub scale: (f64, f64),
    pub homography: bool,
    /// Corner displacement as a fraction of the frame, per axis.
    pub corner_jitter: f64,
    pub perlin: bool,
    /// Share of samples that get a Perlin background; the rest keep the
    /// black one.
    pub perlin_probability: f64,
    pub perlin_octaves: usize,
    /// Base frequency in cycles per frame.
    pub perlin_frequency: f64,
    pub blur: bool,
    pub blur_sigma: (f64, f64),
    pub noise: bool,
    pub noise_sigma: (f64, f64),
    pub gain_contrast: bool,
    pub gain: (f64, f64),
    pub offset: (f64, f64),
    pub patch_dropout: bool,
    pub patch_count: (usize, usize),
    /// Patch side length in pixels.
    pub patch_size: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            color_jitter: true,
            brightness: 0.25,
            hue: 0.1,
            translate_scale: true,
            translate: 0.15,
            scale: (0.7, 1.3),
            homography: true,
            corner_jitter: 0.1,
            perlin: true,
            perlin_probability: 1.0,
            perlin_octaves: 4,
            perlin_frequency: 4.0,
            blur: true,
            blur_sigma: (0.0, 1.5),
            noise: true,
            noise_sigma: (0.0, 12.0),
            gain_contrast: true,
            gain: (0.6, 1.4),
            offset: (-20.0, 20.0),
            patch_dropout: true,
            patch_count: (0, 8),
            patch_size: (8, 24),
        }
    }
}

impl AugmentConfig {
    /// Every transform switched off; the pipeline then only selects a
    /// channel (or converts to luma) and normalizes.
    pub fn disabled() -> Self {
        Self {
            color_jitter: false,
            translate_scale: false,
            homography: false,
            perlin: false,
            blur: false,
            noise: false,
            gain_contrast: false,
            patch_dropout: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        fn range(key: &'static str, r: (f64, f64), min: f64) -> Result<(), AugmentError> {
            if !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && r.0 >= min) {
                return Err(AugmentError::Config {
                    key,
                    msg: format!("({}, {}) must be finite, ordered and >= {min}", r.0, r.1),
                });
            }
            Ok(())
        }
        range("brightness", (0.0, self.brightness), 0.0)?;
        range("hue", (0.0, self.hue), 0.0)?;
        range("translate", (0.0, self.translate), 0.0)?;
        range("scale", self.scale, 1e-3)?;
        range("corner_jitter", (0.0, self.corner_jitter), 0.0)?;
        if self.corner_jitter >= 0.5 {
            return Err(AugmentError::Config {
                key: "corner_jitter",
                msg: "must be below 0.5".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.perlin_probability) {
            return Err(AugmentError::Config {
                key: "perlin_probability",
                msg: format!("{} not in [0, 1]", self.perlin_probability),
            });
        }
        range("perlin_frequency", (self.perlin_frequency, self.perlin_frequency), 1e-6)?;
        if self.perlin_octaves == 0 {
            return Err(AugmentError::Config {
                key: "perlin_octaves",
                msg: "must be at least 1".into(),
            });
        }
        range("blur_sigma", self.blur_sigma, 0.0)?;
        range("noise_sigma", self.noise_sigma, 0.0)?;
        range("gain", self.gain, 0.0)?;
        range("offset", self.offset, f64::NEG_INFINITY)?;
        if self.patch_count.0 > self.patch_count.1 {
            return Err(AugmentError::Config {
                key: "patch_count",
                msg: "lo > hi".into(),
            });
        }
        if self.patch_size.0 > self.patch_size.1 || self.patch_size.0 == 0 {
            return Err(AugmentError::Config {
                key: "patch_size",
                msg: "must be ordered and positive".into(),
            });
        }
        Ok(())
    }
}

/// How the colour render becomes a single channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    /// Take one colour channel as-is.
    Select(Channel),
    /// Colour jitter (when enabled) followed by luma.
    Gray,
}

/// Independent RNG stream for one sample in one epoch.
pub fn stream_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index);
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    uniform(rng, (-half, half))
}

pub fn color_jitter<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Result<Image, AugmentError> {
    let (b, h) = if cfg.color_jitter {
        (symmetric(rng, cfg.brightness), symmetric(rng, cfg.hue))
    } else {
        (0.0, 0.0)
    };
    ops::color_jitter_with(img, b, h)
}

/// Random shift and zoom; redrawn until at least [`MIN_IN_FRAME`] of the
/// scaled mask stays inside the frame.
pub fn translate_scale<R: Rng + ?Sized>(m: &Masked, cfg: &AugmentConfig, rng: &mut R) -> Result<Masked, AugmentError> {
    let (w, h) = (m.image.width() as f64, m.image.height() as f64);
    let before = m.coverage() as f64;
    for _ in 0..MAX_TRIES {
        let tx = symmetric(rng, cfg.translate) * w;
        let ty = symmetric(rng, cfg.translate) * h;
        let s = uniform(rng, cfg.scale);
        let out = ops::translate_scale_with(m, tx, ty, s);
        if before == 0.0 || out.coverage() as f64 >= MIN_IN_FRAME * s * s * before {
            return Ok(out);
        }
    }
    Err(AugmentError::OutOfFrame(MAX_TRIES))
}

/// Draws jittered frame corners until they form a convex quadrilateral and
/// returns the homography from the frame onto them.
pub fn sample_homography<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<homography::Mat3, AugmentError> {
    let src = ops::frame_corners(width, height);
    let (jx, jy) = (jitter * (width as f64 - 1.0), jitter * (height as f64 - 1.0));
    for _ in 0..MAX_TRIES {
        let mut dst = src;
        for c in dst.iter_mut() {
            c[0] += symmetric(rng, jx);
            c[1] += symmetric(rng, jy);
        }
        if !homography::is_convex(&dst) {
            continue;
        }
        if let Some(h) = homography::from_corners(&src, &dst) {
            return Ok(h);
        }
    }
    Err(AugmentError::Degenerate(MAX_TRIES))
}

pub fn homography_warp<R: Rng + ?Sized>(m: &Masked, cfg: &AugmentConfig, rng: &mut R) -> Result<Masked, AugmentError> {
    let h = sample_homography(m.image.width(), m.image.height(), cfg.corner_jitter, rng)?;
    ops::warp_with(m, &h)
}

/// Fills the background with a fresh Perlin field and drops the mask.
pub fn perlin_background<R: Rng + ?Sized>(m: &Masked, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let field = perlin::perlin_field(
        m.image.width(),
        m.image.height(),
        cfg.perlin_octaves,
        cfg.perlin_frequency,
        rng,
    );
    ops::composite_with(m, &field)
}

pub fn gaussian_blur<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    ops::gaussian_blur_with(img, uniform(rng, cfg.blur_sigma))
}

pub fn gaussian_noise<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let sigma = uniform(rng, cfg.noise_sigma);
    ops::gaussian_noise_with(img, sigma, rng)
}

pub fn gain_contrast<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let g = uniform(rng, cfg.gain);
    let o = uniform(rng, cfg.offset);
    ops::gain_contrast_with(img, g, o)
}

/// Square patches centred uniformly over the frame.
pub fn sample_patches<R: Rng + ?Sized>(width: usize, height: usize, cfg: &AugmentConfig, rng: &mut R) -> Vec<Patch> {
    let n = rng.random_range(cfg.patch_count.0..=cfg.patch_count.1);
    (0..n)
        .map(|_| {
            let side = rng.random_range(cfg.patch_size.0..=cfg.patch_size.1);
            let cx = rng.random_range(0..width) as i64;
            let cy = rng.random_range(0..height) as i64;
            Patch {
                x: cx - side as i64 / 2,
                y: cy - side as i64 / 2,
                width: side,
                height: side,
            }
        })
        .collect()
}

pub fn patch_dropout<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let patches = sample_patches(img.width(), img.height(), cfg, rng);
    ops::patch_dropout_with(img, &patches)
}

/// A training-ready `[1, H, W]` tensor in `[0, 1]` with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub tensor: Tensor<f32>,
    pub labels: ViewClass,
}

fn channel_step<R: Rng + ?Sized>(
    image: &Image,
    mode: ChannelMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Image, AugmentError> {
    let rgb = if image.channels() == 4 { image.rgb() } else { image.clone() };
    match mode {
        ChannelMode::Select(c) => ops::select_channel(&rgb, c),
        ChannelMode::Gray => color_jitter(&rgb, cfg, rng),
    }
}

/// Runs the full augmentation chain on an RGBA sample.
pub fn pipeline<R: Rng + ?Sized>(
    sample: &Sample,
    mode: ChannelMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented, AugmentError> {
    let gray = augment_image(&sample.image, mode, cfg, rng)?;
    Ok(Augmented {
        tensor: to_tensor(&gray),
        labels: sample.labels,
    })
}

/// The 8-bit stages of [`pipeline`], for previews.
pub fn augment_image<R: Rng + ?Sized>(
    rgba: &Image,
    mode: ChannelMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Image, AugmentError> {
    let alpha = if rgba.channels() == 4 {
        rgba.channel(3).into_raw()
    } else {
        vec![255; rgba.width() * rgba.height()]
    };
    let mut m = Masked {
        image: channel_step(rgba, mode, cfg, rng)?,
        alpha,
    };
    if cfg.translate_scale {
        m = translate_scale(&m, cfg, rng)?;
    }
    if cfg.homography {
        m = homography_warp(&m, cfg, rng)?;
    }
    // no draw at probability 1, so that setting consumes the stream as if
    // the option did not exist
    let background = cfg.perlin && (cfg.perlin_probability >= 1.0 || rng.random_bool(cfg.perlin_probability));
    let mut img = if background {
        perlin_background(&m, cfg, rng)
    } else {
        ops::composite_with(&m, &vec![0; m.alpha.len()])
    };
    if cfg.blur {
        img = gaussian_blur(&img, cfg, rng);
    }
    if cfg.noise {
        img = gaussian_noise(&img, cfg, rng);
    }
    if cfg.gain_contrast {
        img = gain_contrast(&img, cfg, rng);
    }
    if cfg.patch_dropout {
        img = patch_dropout(&img, cfg, rng);
    }
    Ok(img)
}

/// Un-augmented input for validation and evaluation: channel selection (or
/// luma), black background, scaled to `[0, 1]`.
pub fn prepare(sample: &Sample, mode: ChannelMode) -> Result<Tensor<f32>, AugmentError> {
    let mut rng = stream_rng(0, 0, 0);
    let img = augment_image(&sample.image, mode, &AugmentConfig::disabled(), &mut rng)?;
    Ok(to_tensor(&img))
}

/// Single-channel 8-bit image to a `[1, H, W]` tensor in `[0, 1]`.
pub fn to_tensor(img: &Image) -> Tensor<f32> {
    assert_eq!(img.channels(), 1);
    let data = img.data().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(&[1, img.height(), img.width()], data).expect("finite")
}

/// Contact sheet: one row per sample, the original render followed by
/// `variants` augmented copies.
pub fn preview(samples: &[Sample], mode: ChannelMode, cfg: &AugmentConfig, variants: usize) -> Result<Image, AugmentError> {
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut tiles = vec![s.image.to_rgba(None).rgb().to_rgba(None)];
        for v in 0..variants {
            let mut rng = stream_rng(cfg.seed, v as u64, i as u64);
            tiles.push(augment_image(&s.image, mode, cfg, &mut rng)?.to_rgba(None));
        }
        rows.push(Image::hstack(&tiles.iter().collect::<Vec<_>>()));
    }
    let width = rows.iter().map(Image::width).max().unwrap_or(0);
    let height = rows.iter().map(Image::height).sum();
    let mut sheet = Image::new(width, height, 4).expect("4 channels");
    let mut y = 0;
    for r in &rows {
        sheet.blit(r, 0, y);
        y += r.height();
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Modality, Renderer, Split, TargetModel};
    use crate::viewsphere::Viewpoint;

    fn sample(az: f64, el: f64) -> Sample {
        let r = Renderer::new(TargetModel::default(), 64, 1).unwrap();
        r.sample(Viewpoint::new(az, el).unwrap(), Modality::Visible, 2, Split::Train)
            .unwrap()
    }

    #[test]
    fn disabled_pipeline_is_normalized_luma() {
        let s = sample(30.0, 15.0);
        let mut rng = stream_rng(1, 0, 0);
        let out = pipeline(&s, ChannelMode::Gray, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out.tensor.shape(), &[1, 64, 64]);
        for (p, &v) in s.image.data().chunks_exact(4).zip(out.tensor.data()) {
            let l = ops::luma(p[0] as f64, p[1] as f64, p[2] as f64);
            assert_eq!(v, l as f32 / 255.0);
        }
        assert_eq!(out.tensor, prepare(&s, ChannelMode::Gray).unwrap());
    }

    #[test]
    fn full_pipeline_is_deterministic_bounded_and_label_preserving() {
        let s = sample(200.0, -35.0);
        let cfg = AugmentConfig::default();
        for i in 0..20 {
            let a = pipeline(&s, ChannelMode::Select(Channel::Red), &cfg, &mut stream_rng(9, 1, i)).unwrap();
            let b = pipeline(&s, ChannelMode::Select(Channel::Red), &cfg, &mut stream_rng(9, 1, i)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.labels, s.labels);
            assert!(a.tensor.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let a = pipeline(&s, ChannelMode::Gray, &cfg, &mut stream_rng(9, 1, 0)).unwrap();
        let b = pipeline(&s, ChannelMode::Gray, &cfg, &mut stream_rng(9, 1, 1)).unwrap();
        assert_ne!(a.tensor, b.tensor);
    }

    #[test]
    fn streams_are_independent_of_visit_order() {
        let s = sample(10.0, 5.0);
        let cfg = AugmentConfig::default();
        let forward: Vec<_> = (0..6)
            .map(|i| pipeline(&s, ChannelMode::Gray, &cfg, &mut stream_rng(3, 2, i)).unwrap())
            .collect();
        for i in (0..6).rev() {
            let again = pipeline(&s, ChannelMode::Gray, &cfg, &mut stream_rng(3, 2, i)).unwrap();
            assert_eq!(again, forward[i as usize]);
        }
    }

    #[test]
    fn translate_scale_keeps_target_in_frame() {
        let s = sample(0.0, 5.0);
        let m = Masked::from_rgba(&s.image);
        let cfg = AugmentConfig::default();
        let mut fails = 0;
        for i in 0..200 {
            match translate_scale(&m, &cfg, &mut stream_rng(4, 0, i)) {
                Ok(out) => assert!(out.coverage() > 0),
                Err(AugmentError::OutOfFrame(_)) => fails += 1,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(fails, 0);
    }

    #[test]
    fn impossible_frame_constraint_errors() {
        let s = sample(0.0, 5.0);
        let m = Masked::from_rgba(&s.image);
        let cfg = AugmentConfig {
            translate: 0.0,
            scale: (3.0, 3.0),
            ..AugmentConfig::default()
        };
        assert_eq!(
            translate_scale(&m, &cfg, &mut stream_rng(0, 0, 0)),
            Err(AugmentError::OutOfFrame(MAX_TRIES))
        );
    }

    #[test]
    fn patch_union_bound() {
        let cfg = AugmentConfig {
            patch_count: (1, 8),
            ..AugmentConfig::default()
        };
        let img = Image::filled(64, 64, 1, 50).unwrap();
        for i in 0..50 {
            let mut rng = stream_rng(5, 0, i);
            let patches = sample_patches(64, 64, &cfg, &mut rng);
            let out = ops::patch_dropout_with(&img, &patches);
            let zeroed = out.data().iter().filter(|&&v| v == 0).count();
            let area: usize = patches.iter().map(|p| p.width * p.height).sum();
            assert!(zeroed <= area);
            assert!(zeroed > 0);
        }
    }

    #[test]
    fn opaque_alpha_blocks_perlin() {
        let m = Masked {
            image: Image::filled(32, 32, 1, 99).unwrap(),
            alpha: vec![255; 1024],
        };
        let out = perlin_background(&m, &AugmentConfig::default(), &mut stream_rng(0, 0, 0));
        assert_eq!(out, m.image);
    }

    #[test]
    fn preview_layout() {
        let s = [sample(0.0, 5.0), sample(90.0, 45.0)];
        let sheet = preview(&s, ChannelMode::Select(Channel::Blue), &AugmentConfig::default(), 3).unwrap();
        assert_eq!((sheet.width(), sheet.height()), (4 * 64, 2 * 64));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            scale: (1.3, 0.7),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            patch_size: (0, 4),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
