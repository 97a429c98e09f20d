//! Grad-CAM attention maps for the dual-head classifier.
//!
//! For a target layer with activations `A_k` (`k` over channels), the
//! objective is the sum of the selected pre-softmax logits: one logit for a
//! single head, the azimuth and elevation logits together for both heads.
//! Channel weights are the spatial means of `∂objective/∂A_k`, the raw map
//! is `ReLU(Σ_k α_k·A_k)`, which is then bilinearly upsampled to the input
//! resolution and divided by its maximum.
//!
//! Because the objective is a sum, the channel weights of the two-head target
//! are exactly the sum of the single-head weights. The maps are not, since
//! the ReLU comes after the weighted sum.

use std::path::Path;

use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::net::{Logits, Mode, NetError, Network};
use crate::scene::{Modality, RenderError, Renderer, TargetModel};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};
use crate::viewsphere::{class_center, ViewClass};

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("unknown layer {name:?} (available: {})", .available.join(", "))]
    UnknownLayer { name: String, available: Vec<String> },
    #[error("class {class} out of range for the {head} head ({classes} classes)")]
    Class {
        head: &'static str,
        class: usize,
        classes: usize,
    },
    #[error("{0} target needs a two-head network")]
    Head(&'static str),
    #[error("expected a single [1, H, W] or [1, 1, H, W] image, got {0:?}")]
    Input(Vec<usize>),
    #[error("map is {map:?} but the image is {image:?}")]
    Resolution { map: (usize, usize), image: (usize, usize) },
    #[error("overlay alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GradCamError>;

/// Which head(s) to explain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadSelect {
    Both,
    Azimuth,
    Elevation,
}

impl std::str::FromStr for HeadSelect {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(HeadSelect::Both),
            "azimuth" => Ok(HeadSelect::Azimuth),
            "elevation" => Ok(HeadSelect::Elevation),
            _ => Err(format!("unknown head {s:?} (expected both, azimuth or elevation)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExplainTarget {
    /// Azimuth and elevation one-hots summed.
    BothHeads { az_class: usize, el_class: usize },
    /// The azimuth head; on a single-head network, its only head.
    AzimuthOnly(usize),
    ElevationOnly(usize),
}

impl ExplainTarget {
    /// The target for `select` at the predicted classes.
    pub fn predicted(select: HeadSelect, pred: ViewClass) -> Self {
        match select {
            HeadSelect::Both => ExplainTarget::BothHeads {
                az_class: pred.az_class,
                el_class: pred.el_class,
            },
            HeadSelect::Azimuth => ExplainTarget::AzimuthOnly(pred.az_class),
            HeadSelect::Elevation => ExplainTarget::ElevationOnly(pred.el_class),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f64>,
    /// Maximum of the upsampled map before normalization.
    pub raw_max: f64,
    pub layer: String,
    /// Channel weights `α_k`.
    pub alphas: Vec<f64>,
    /// `ReLU(Σ α_k A_k)` at the layer's own resolution, `[h, w]`.
    pub coarse: Vec<f64>,
    pub coarse_shape: (usize, usize),
}

impl AttentionMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// The upsampled map before normalization, as CSV rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.6}", v * self.raw_max)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| GradCamError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Mean attention inside and outside a mask (`mask[i] > 0` is inside).
    pub fn mass_split(&self, mask: &[u8]) -> (f64, f64) {
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.values.iter().zip(mask) {
            if m > 0 {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
        (inside / n_in.max(1) as f64, outside / n_out.max(1) as f64)
    }
}

/// Name of the default target layer: the network's last activation.
pub fn default_layer<T: Real>(net: &Network<T>) -> String {
    let cfg = net.config();
    if cfg.widths.is_empty() {
        "stem".into()
    } else {
        format!("stages.{}.blocks.{}", cfg.widths.len() - 1, cfg.blocks_per_stage - 1)
    }
}

fn as_batch<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    match img.shape() {
        [1, h, w] => Ok(img.clone().reshape(&[1, 1, *h, *w])?),
        [1, 1, _, _] => Ok(img.clone()),
        s => Err(GradCamError::Input(s.to_vec())),
    }
}

fn pick(tape: &mut Tape<impl Real>, logits: Var, class: usize, head: &'static str) -> Result<Var> {
    let classes = tape.value(logits).shape()[1];
    if class >= classes {
        return Err(GradCamError::Class { head, class, classes });
    }
    Ok(tape.gather(logits, vec![class], &[1])?)
}

/// Computes the attention map of `target` at `layer` (default: the last
/// activation). The network is only read.
pub fn gradcam<T: Real>(net: &Network<T>, img: &Tensor<T>, target: ExplainTarget, layer: Option<&str>) -> Result<AttentionMap> {
    let x = as_batch(img)?;
    let (res_h, res_w) = (x.shape()[2], x.shape()[3]);
    let layer = layer.map(str::to_string).unwrap_or_else(|| default_layer(net));

    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let fwd = net.forward(&mut tape, xv, Mode::Eval, true)?;
    let act = fwd
        .activations
        .iter()
        .find(|(n, _)| *n == layer)
        .map(|(_, v)| *v)
        .ok_or_else(|| GradCamError::UnknownLayer {
            name: layer.clone(),
            available: fwd.activations.iter().map(|(n, _)| n.clone()).collect(),
        })?;
    let objective = match (fwd.logits, target) {
        (Logits::Dual { az, el }, ExplainTarget::BothHeads { az_class, el_class }) => {
            let a = pick(&mut tape, az, az_class, "azimuth")?;
            let e = pick(&mut tape, el, el_class, "elevation")?;
            tape.add(a, e)?
        }
        (Logits::Dual { az, .. }, ExplainTarget::AzimuthOnly(c)) => pick(&mut tape, az, c, "azimuth")?,
        (Logits::Dual { el, .. }, ExplainTarget::ElevationOnly(c)) => pick(&mut tape, el, c, "elevation")?,
        (Logits::Single(cls), ExplainTarget::AzimuthOnly(c)) => pick(&mut tape, cls, c, "azimuth")?,
        (Logits::Single(_), ExplainTarget::BothHeads { .. }) => return Err(GradCamError::Head("both-heads")),
        (Logits::Single(_), ExplainTarget::ElevationOnly(_)) => return Err(GradCamError::Head("elevation")),
    };
    let objective = tape.sum(objective)?;
    tape.backward(objective)?;

    let a = tape.value(act);
    let [_, c, h, w]: [usize; 4] = a.shape().try_into().expect("activation is 4-d");
    let hw = h * w;
    let zeros = vec![T::ZERO; a.numel()];
    let grad = tape.grad(act).unwrap_or(&zeros);
    let alphas: Vec<f64> = (0..c)
        .map(|k| grad[k * hw..(k + 1) * hw].iter().map(|g| g.to_f64()).sum::<f64>() / hw as f64)
        .collect();
    let mut coarse = vec![0.0; hw];
    for (k, &alpha) in alphas.iter().enumerate() {
        for (m, v) in coarse.iter_mut().zip(&a.data()[k * hw..(k + 1) * hw]) {
            *m += alpha * v.to_f64();
        }
    }
    coarse.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut values = upsample_bilinear(&coarse, (h, w), (res_h, res_w));
    let raw_max = values.iter().copied().fold(0.0, f64::max);
    if raw_max > 0.0 {
        values.iter_mut().for_each(|v| *v /= raw_max);
    }
    Ok(AttentionMap {
        width: res_w,
        height: res_h,
        values,
        raw_max,
        layer,
        alphas,
        coarse,
        coarse_shape: (h, w),
    })
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn upsample_bilinear(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, oh, h);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, ow, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Blue (0) to red (1) through cyan, green and yellow.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let c = |v: f64| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    [c(4.0 * t - 2.0), c((4.0 * t).min(4.0 - 4.0 * t)), c(2.0 - 4.0 * t)]
}

/// Blends the ramp-coloured map over a grayscale image. `img` may be gray,
/// RGB or RGBA; colour inputs are reduced to luma first. Output is opaque RGBA.
pub fn overlay(img: &Image, map: &AttentionMap, alpha: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GradCamError::Alpha(alpha));
    }
    if (img.width(), img.height()) != (map.width, map.height) {
        return Err(GradCamError::Resolution {
            map: (map.width, map.height),
            image: (img.width(), img.height()),
        });
    }
    let gray = if img.channels() == 1 {
        img.clone()
    } else {
        crate::augment::ops::color_jitter_with(&img.rgb(), 0.0, 0.0).expect("rgb input")
    };
    let mut out = Image::new(img.width(), img.height(), 4)?;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let g = gray.pixel(x, y)[0] as f64;
            let c = ramp(map.get(x, y));
            let px = out.pixel_mut(x, y);
            for i in 0..3 {
                px[i] = ((1.0 - alpha) * g + alpha * c[i] as f64).round() as u8;
            }
            px[3] = 255;
        }
    }
    Ok(out)
}

/// Render of the predicted class centre, for side-by-side figures.
pub fn nearest_match(
    pred: ViewClass,
    modality: Modality,
    lighting_id: usize,
    resolution: usize,
    seed: u64,
) -> Result<Image> {
    let r = Renderer::new(TargetModel::default(), resolution, seed)?;
    let s = r.sample(class_center(pred), modality, lighting_id, crate::scene::Split::Test)?;
    Ok(s.image)
}

/// Two images next to each other on an opaque black canvas; transparent
/// pixels show as black.
pub fn side_by_side(left: &Image, right: &Image) -> Image {
    let opaque = |img: &Image| {
        let rgba = if img.channels() == 4 { img.clone() } else { img.to_rgba(None) };
        let mut out = rgba.clone();
        for (o, i) in out.data_mut().chunks_mut(4).zip(rgba.data().chunks(4)) {
            let a = i[3] as u32;
            for c in 0..3 {
                o[c] = ((i[c] as u32 * a + 127) / 255) as u8;
            }
            o[3] = 255;
        }
        out
    };
    Image::hstack(&[&opaque(left), &opaque(right)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    fn toy(seed: u64) -> Network<f64> {
        Network::<f64>::new(NetworkConfig {
            resolution: 16,
            stem_width: 3,
            widths: vec![],
            blocks_per_stage: 0,
            seed,
            ..NetworkConfig::default()
        })
        .unwrap()
    }

    fn image(seed: u64) -> Tensor<f64> {
        let data = (0..256).map(|i| (((i as u64 * 7919 + seed * 31) % 97) as f64) / 97.0).collect();
        Tensor::from_vec(&[1, 16, 16], data).unwrap()
    }

    #[test]
    fn zero_heads_give_an_empty_map() {
        let mut net = toy(1);
        for name in ["head.az.weight", "head.el.weight"] {
            net.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let m = gradcam(&net, &image(0), ExplainTarget::BothHeads { az_class: 3, el_class: 4 }, None).unwrap();
        assert_eq!(m.raw_max, 0.0);
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_to_unit_max() {
        let net = toy(2);
        let m = gradcam(&net, &image(1), ExplainTarget::AzimuthOnly(5), Some("stem")).unwrap();
        assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        if m.raw_max > 0.0 {
            assert_eq!(m.values.iter().copied().fold(0.0, f64::max), 1.0);
        }
        assert_eq!((m.width, m.height, m.coarse_shape), (16, 16, (8, 8)));
    }

    #[test]
    fn errors() {
        let net = toy(3);
        let img = image(0);
        assert!(matches!(
            gradcam(&net, &img, ExplainTarget::AzimuthOnly(36), None),
            Err(GradCamError::Class { .. })
        ));
        assert!(matches!(
            gradcam(&net, &img, ExplainTarget::AzimuthOnly(0), Some("stages.9")),
            Err(GradCamError::UnknownLayer { .. })
        ));
    }

    #[test]
    fn network_is_untouched() {
        let net = toy(4);
        let before = net.clone();
        gradcam(&net, &image(2), ExplainTarget::ElevationOnly(2), None).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let up = upsample_bilinear(&[2.5; 4], (2, 2), (8, 8));
        assert!(up.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let up = upsample_bilinear(&[0.0, 1.0], (1, 2), (1, 4));
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0, 0, 255]);
        assert_eq!(ramp(1.0), [255, 0, 0]);
    }

    fn flat_map(v: f64, n: usize) -> AttentionMap {
        AttentionMap {
            width: n,
            height: n,
            values: vec![v; n * n],
            raw_max: 0.0,
            layer: "stem".into(),
            alphas: vec![],
            coarse: vec![],
            coarse_shape: (0, 0),
        }
    }

    #[test]
    fn overlay_cases() {
        let gray = Image::from_raw(4, 4, 1, (0..16).map(|v| v * 10).collect()).unwrap();
        let same = overlay(&gray, &flat_map(0.7, 4), 0.0).unwrap();
        for (i, px) in same.data().chunks(4).enumerate() {
            assert_eq!(px, [gray.data()[i]; 3].iter().copied().chain([255]).collect::<Vec<_>>().as_slice());
        }
        let tinted = overlay(&Image::filled(4, 4, 1, 0).unwrap(), &flat_map(0.0, 4), 0.5).unwrap();
        assert!(tinted.data().chunks(4).all(|p| p == [0, 0, 128, 255]));
        assert!(overlay(&gray, &flat_map(0.0, 5), 0.5).is_err());
        assert!(overlay(&gray, &flat_map(0.0, 4), 1.5).is_err());
    }

    #[test]
    fn match_and_side_by_side() {
        let a = nearest_match(ViewClass::new(0, 9).unwrap(), Modality::Visible, 0, 32, 0).unwrap();
        let b = nearest_match(ViewClass::new(0, 9).unwrap(), Modality::Visible, 0, 32, 0).unwrap();
        assert_eq!(a, b);
        let s = side_by_side(&a, &b);
        assert_eq!((s.width(), s.height()), (64, 32));
    }
}
