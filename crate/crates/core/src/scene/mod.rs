//! Procedural scene generation: a mock spacecraft rendered from any
//! viewpoint in visible or pseudo-thermal shading, plus grid and trajectory
//! dataset writers.
//!
//! Visible renders use flat Lambert shading under one of 21 lighting
//! variants, a gold-foil noise texture on the bus and a grid texture on the
//! wing fronts. Pseudo-thermal renders drop all textures, replace lighting
//! with smooth per-material emission, draw the wings translucent so the
//! struts behind them show through, and write equal R, G and B values.
//! Both modalities rasterize the same triangles, so their alpha masks match.

mod dataset;
mod geom;
mod model;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    generate_grid, generate_trajectory, grid_viewpoints, load_samples, read_manifest, write_manifest, DatasetError,
    GridSpec, ManifestRow, TrajectorySpec, MANIFEST_FILE,
};
pub use model::{Material, TargetModel};

use crate::image::Image;
use crate::viewsphere::{bin_viewpoint, ViewClass, Viewpoint};
use geom::{add, dot, normalize, scale, V3};
use raster::{Camera, FrameBuffer};

pub const DEFAULT_RESOLUTION: usize = 128;
pub const MIN_RESOLUTION: usize = 32;
pub const LIGHTING_VARIANTS: usize = 21;
const CAMERA_DISTANCE: f64 = 8.0;
/// Fraction of the half-frame the bounding sphere may fill.
const FRAME_FILL: f64 = 0.94;
/// Wing weight when blended over geometry behind it in thermal mode.
const THERMAL_PANEL_OPACITY: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("resolution {0} must be even and at least {MIN_RESOLUTION}")]
    Resolution(usize),
    #[error("lighting id {0} out of range 0..{LIGHTING_VARIANTS}")]
    Lighting(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Thermal,
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "visible" => Ok(Modality::Visible),
            "thermal" => Ok(Modality::Thermal),
            _ => Err(format!("unknown modality {s:?} (expected visible or thermal)")),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Visible => "visible",
            Modality::Thermal => "thermal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A directional light. `direction` points towards the light and is given
/// in the camera frame `(right, up, towards camera)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalLight {
    pub direction: V3,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightingSetup {
    pub lights: Vec<DirectionalLight>,
    pub ambient: f64,
}

const KEY_DIRECTIONS: [V3; 7] = [
    [0.0, 0.0, 1.0],
    [0.6, 0.3, 0.74],
    [-0.6, 0.3, 0.74],
    [0.0, 0.8, 0.6],
    [0.0, -0.7, 0.71],
    [0.9, 0.1, 0.42],
    [-0.85, -0.3, 0.43],
];
const KEY_INTENSITIES: [f64; 3] = [0.85, 0.6, 1.1];

impl LightingSetup {
    /// Variant `id` in `0..21`: key direction `id / 3`, intensity
    /// `[0.85, 0.6, 1.1][id % 3]`, ambient 0.25.
    pub fn variant(id: usize) -> Result<Self, RenderError> {
        if id >= LIGHTING_VARIANTS {
            return Err(RenderError::Lighting(id));
        }
        Ok(Self {
            lights: vec![DirectionalLight {
                direction: normalize(KEY_DIRECTIONS[id / 3]),
                intensity: KEY_INTENSITIES[id % 3],
            }],
            ambient: 0.25,
        })
    }
}

/// A rendered, labelled view of the target. `image` is RGBA; alpha is 255
/// on target pixels and 0 elsewhere, where the colour is black.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub viewpoint: Viewpoint,
    pub labels: ViewClass,
    pub modality: Modality,
    pub lighting_id: usize,
    pub split: Split,
}

impl Sample {
    pub fn alpha(&self) -> Vec<u8> {
        self.image.channel(3).into_raw()
    }
}

/// Renders the target at a fixed resolution. `seed` fixes the bus foil
/// texture, which is a property of the target, not of a single frame.
#[derive(Clone, Debug)]
pub struct Renderer {
    model: TargetModel,
    tris: Vec<model::Tri>,
    resolution: usize,
    seed: u64,
    focal_px: f64,
}

impl Renderer {
    pub fn new(model: TargetModel, resolution: usize, seed: u64) -> Result<Self, RenderError> {
        if resolution < MIN_RESOLUTION || resolution % 2 != 0 {
            return Err(RenderError::Resolution(resolution));
        }
        let r = model.bounding_radius();
        let tan_half = r / (CAMERA_DISTANCE * CAMERA_DISTANCE - r * r).sqrt();
        let focal_px = FRAME_FILL * resolution as f64 / 2.0 / tan_half;
        Ok(Self {
            tris: model.mesh(),
            model,
            resolution,
            seed,
            focal_px,
        })
    }

    pub fn model(&self) -> &TargetModel {
        &self.model
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn camera(&self, vp: Viewpoint) -> Camera {
        let los = crate::viewsphere::los_vector(vp);
        let az = vp.azimuth_deg().to_radians();
        let forward = scale(los, -1.0);
        // defined everywhere, poles included
        let right = [-az.sin(), az.cos(), 0.0];
        let up = geom::cross(right, forward);
        Camera {
            eye: scale(los, CAMERA_DISTANCE),
            right,
            up,
            forward,
            focal_px: self.focal_px,
            width: self.resolution,
            height: self.resolution,
        }
    }

    /// Renders an RGBA image of the target.
    pub fn render(&self, vp: Viewpoint, modality: Modality, lighting: &LightingSetup) -> Image {
        let cam = self.camera(vp);
        let n = self.resolution;
        let mut solid = FrameBuffer::new(n, n);
        let mut wings = FrameBuffer::new(n, n);
        for (i, t) in self.tris.iter().enumerate() {
            let fb = if t.material == Material::Panel { &mut wings } else { &mut solid };
            raster::draw(fb, &cam, &t.v, i);
        }
        let lights: Vec<(V3, f64)> = lighting
            .lights
            .iter()
            .map(|l| {
                let d = l.direction;
                let world = add(add(scale(cam.right, d[0]), scale(cam.up, d[1])), scale(cam.forward, -d[2]));
                (normalize(world), l.intensity)
            })
            .collect();

        let mut img = Image::new(n, n, 4).unwrap();
        for idx in 0..n * n {
            let back = solid.frags[idx].map(|f| self.shade(f, &cam, modality, &lights, lighting.ambient));
            let front = wings.frags[idx]
                .filter(|_| wings.inv_depth[idx] > solid.inv_depth[idx])
                .map(|f| self.shade(f, &cam, modality, &lights, lighting.ambient));
            let rgb = match (front, back, modality) {
                (Some(w), Some(b), Modality::Thermal) => {
                    [0, 1, 2].map(|k| THERMAL_PANEL_OPACITY * w[k] + (1.0 - THERMAL_PANEL_OPACITY) * b[k])
                }
                (Some(w), _, _) => w,
                (None, Some(b), _) => b,
                (None, None, _) => continue,
            };
            let px = img.pixel_mut(idx % n, idx / n);
            for k in 0..3 {
                px[k] = to_u8(rgb[k]);
            }
            px[3] = 255;
        }
        img
    }

    fn shade(&self, f: raster::Fragment, cam: &Camera, modality: Modality, lights: &[(V3, f64)], ambient: f64) -> V3 {
        let tri = &self.tris[f.tri];
        let to_eye = normalize(geom::sub(cam.eye, f.point));
        let facing = dot(tri.normal, to_eye);
        // double-sided: shade with the normal turned towards the viewer
        let n = if facing >= 0.0 { tri.normal } else { scale(tri.normal, -1.0) };
        match modality {
            Modality::Visible => {
                let lit = ambient + lights.iter().map(|&(d, i)| i * dot(n, d).max(0.0)).sum::<f64>();
                let albedo = self.albedo(tri.material, f.point, facing >= 0.0);
                albedo.map(|a| a * lit)
            }
            Modality::Thermal => {
                let e = thermal_emission(tri.material);
                let v = e * (0.82 + 0.18 * dot(n, to_eye).abs());
                [v, v, v]
            }
        }
    }

    fn albedo(&self, m: Material, p: V3, front: bool) -> V3 {
        match m {
            Material::Bus => {
                let crinkle = 0.6 * geom::value_noise(self.seed, scale(p, 12.0))
                    + 0.4 * geom::value_noise(self.seed ^ 0x5151, scale(p, 29.0));
                [0.86, 0.64, 0.22].map(|c| c * (1.0 + 0.18 * crinkle))
            }
            Material::Radiator => {
                let fin = (p[2] * 9.0).rem_euclid(1.0) < 0.25;
                if fin {
                    [0.62, 0.63, 0.66]
                } else {
                    [0.93, 0.93, 0.95]
                }
            }
            Material::Antenna => [0.82, 0.82, 0.8],
            Material::Radiometer => [0.95, 0.94, 0.88],
            Material::Strut => [0.5, 0.5, 0.55],
            Material::Panel if front => {
                let line = (p[1] / 0.22).rem_euclid(1.0) < 0.14 || (p[2] / 0.18).rem_euclid(1.0) < 0.14;
                if line {
                    [0.78, 0.78, 0.82]
                } else {
                    [0.1, 0.15, 0.46]
                }
            }
            Material::Panel => [0.48, 0.48, 0.5],
        }
    }
}

fn thermal_emission(m: Material) -> f64 {
    match m {
        Material::Bus => 0.78,
        Material::Radiator => 0.5,
        Material::Antenna => 0.62,
        Material::Radiometer => 0.7,
        Material::Strut => 0.95,
        Material::Panel => 0.42,
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One-shot render into a labelled [`Sample`] with the default target.
pub fn render(
    vp: Viewpoint,
    modality: Modality,
    lighting_id: usize,
    resolution: usize,
    seed: u64,
) -> Result<Sample, RenderError> {
    let r = Renderer::new(TargetModel::default(), resolution, seed)?;
    r.sample(vp, modality, lighting_id, Split::Test)
}

impl Renderer {
    pub fn sample(&self, vp: Viewpoint, modality: Modality, lighting_id: usize, split: Split) -> Result<Sample, RenderError> {
        let lighting = LightingSetup::variant(lighting_id)?;
        Ok(Sample {
            image: self.render(vp, modality, &lighting),
            viewpoint: vp,
            labels: bin_viewpoint(vp),
            modality,
            lighting_id,
            split,
        })
    }
}
