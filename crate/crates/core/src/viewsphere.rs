//! Viewpoint geometry on the viewsphere.
//!
//! A viewpoint is the (azimuth, elevation) of the camera on an imaginary
//! sphere centred on the target. Camera roll and range are not modelled.
//!
//! Two binning schemes exist:
//!
//! * [`BinningScheme::Phase1`]: 10 azimuth classes of 36°, class `k` covering
//!   `[36k − 18, 36k + 18)`.
//! * [`BinningScheme::Phase2`]: 36 azimuth classes of 10° (class `k` covers
//!   `[10k − 5, 10k + 5)`, circular) and 18 elevation classes of 10° (class
//!   `i` covers `[−90 + 10i, −80 + 10i)` with centre `−85 + 10i`; +90° belongs
//!   to class 17).
//!
//! All bins are half-open with the lower edge inclusive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PHASE2_AZ_CLASSES: usize = 36;
pub const PHASE2_EL_CLASSES: usize = 18;
pub const PHASE1_AZ_CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("elevation {0}° outside [-90, 90]")]
    Elevation(f64),
    #[error("azimuth {0} is not finite")]
    Azimuth(f64),
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },
}

/// Camera position on the viewsphere, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Viewpoint {
    /// Azimuth is wrapped into `[0, 360)`; elevation outside `[−90, 90]` is
    /// rejected rather than clamped.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self, GeometryError> {
        if !azimuth_deg.is_finite() {
            return Err(GeometryError::Azimuth(azimuth_deg));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(GeometryError::Elevation(elevation_deg));
        }
        Ok(Self {
            azimuth_deg: wrap_azimuth(azimuth_deg),
            elevation_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }
}

/// Wraps any finite angle into `[0, 360)`.
pub fn wrap_azimuth(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to exactly 360
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Phase-2 label pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewClass {
    pub az_class: usize,
    pub el_class: usize,
}

impl ViewClass {
    pub fn new(az_class: usize, el_class: usize) -> Result<Self, GeometryError> {
        check_index(az_class, PHASE2_AZ_CLASSES)?;
        check_index(el_class, PHASE2_EL_CLASSES)?;
        Ok(Self { az_class, el_class })
    }
}

/// Phase-1 azimuth-only label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phase1Class {
    pub az_class: usize,
}

impl Phase1Class {
    pub fn new(az_class: usize) -> Result<Self, GeometryError> {
        check_index(az_class, PHASE1_AZ_CLASSES)?;
        Ok(Self { az_class })
    }
}

fn check_index(index: usize, classes: usize) -> Result<(), GeometryError> {
    if index < classes {
        Ok(())
    } else {
        Err(GeometryError::ClassIndex { index, classes })
    }
}

/// A class label under either scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Phase1(Phase1Class),
    Phase2(ViewClass),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinningScheme {
    Phase1,
    Phase2,
}

impl BinningScheme {
    pub fn az_classes(self) -> usize {
        match self {
            BinningScheme::Phase1 => PHASE1_AZ_CLASSES,
            BinningScheme::Phase2 => PHASE2_AZ_CLASSES,
        }
    }

    pub fn az_step_deg(self) -> f64 {
        360.0 / self.az_classes() as f64
    }

    /// Elevation classes, `None` when the scheme has no elevation axis.
    pub fn el_classes(self) -> Option<usize> {
        match self {
            BinningScheme::Phase1 => None,
            BinningScheme::Phase2 => Some(PHASE2_EL_CLASSES),
        }
    }

    pub fn el_step_deg(self) -> Option<f64> {
        self.el_classes().map(|n| 180.0 / n as f64)
    }

    pub fn bin(self, vp: Viewpoint) -> ClassLabel {
        match self {
            BinningScheme::Phase1 => ClassLabel::Phase1(bin_phase1(vp)),
            BinningScheme::Phase2 => ClassLabel::Phase2(bin_viewpoint(vp)),
        }
    }

    pub fn center(self, label: ClassLabel) -> Viewpoint {
        match label {
            ClassLabel::Phase1(c) => phase1_center(c),
            ClassLabel::Phase2(c) => class_center(c),
        }
    }
}

fn bin_azimuth(az: f64, classes: usize) -> usize {
    let step = 360.0 / classes as f64;
    let k = ((az + step / 2.0) / step).floor() as usize;
    k % classes
}

/// Phase-2 class of a viewpoint.
pub fn bin_viewpoint(vp: Viewpoint) -> ViewClass {
    let el_class = (((vp.elevation_deg + 90.0) / 10.0).floor() as usize).min(PHASE2_EL_CLASSES - 1);
    ViewClass {
        az_class: bin_azimuth(vp.azimuth_deg, PHASE2_AZ_CLASSES),
        el_class,
    }
}

pub fn bin_phase1(vp: Viewpoint) -> Phase1Class {
    Phase1Class {
        az_class: bin_azimuth(vp.azimuth_deg, PHASE1_AZ_CLASSES),
    }
}

/// Centre viewpoint of a phase-2 class: `(10·az, −85 + 10·el)`.
pub fn class_center(c: ViewClass) -> Viewpoint {
    Viewpoint {
        azimuth_deg: 10.0 * c.az_class as f64,
        elevation_deg: -85.0 + 10.0 * c.el_class as f64,
    }
}

/// Centre of a phase-1 class, at elevation 0.
pub fn phase1_center(c: Phase1Class) -> Viewpoint {
    Viewpoint {
        azimuth_deg: 36.0 * c.az_class as f64,
        elevation_deg: 0.0,
    }
}

/// Unit line-of-sight vector `(cos el·cos az, cos el·sin az, sin el)`.
pub fn los_vector(vp: Viewpoint) -> [f64; 3] {
    let (az, el) = (vp.azimuth_deg.to_radians(), vp.elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// Angle between the two lines of sight, in degrees, within `[0, 180]`.
pub fn angular_error(gt: Viewpoint, pr: Viewpoint) -> f64 {
    let (a, b) = (los_vector(gt), los_vector(pr));
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // atan2 form: acos(dot) loses ~1e-6° of precision for nearly equal vectors
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    sin.atan2(dot).to_degrees().clamp(0.0, 180.0)
}

/// Class-index separation: `min(|a−b|, n−|a−b|)` when `circular`, else `|a−b|`.
pub fn bin_distance(a: usize, b: usize, n_classes: usize, circular: bool) -> Result<usize, GeometryError> {
    check_index(a, n_classes)?;
    check_index(b, n_classes)?;
    let d = a.abs_diff(b);
    Ok(if circular { d.min(n_classes - d) } else { d })
}
