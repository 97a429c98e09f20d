use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Modality, RenderError, Renderer, Sample, Split, TargetModel, LIGHTING_VARIANTS};
use crate::image::{Image, ImageError};
use crate::viewsphere::{bin_viewpoint, wrap_azimuth, ViewClass, Viewpoint};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid {flag}: {msg}")]
    Config { flag: &'static str, msg: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One manifest line. `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub az_class: usize,
    pub el_class: usize,
    pub modality: Modality,
    pub lighting_id: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
}

impl ManifestRow {
    pub fn viewpoint(&self) -> Result<Viewpoint, crate::viewsphere::GeometryError> {
        Viewpoint::new(self.azimuth_deg, self.elevation_deg)
    }

    pub fn labels(&self) -> ViewClass {
        ViewClass {
            az_class: self.az_class,
            el_class: self.el_class,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub az_step: f64,
    pub el_step: f64,
    pub lighting_count: usize,
    pub modality: Modality,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            az_step: 10.0,
            el_step: 10.0,
            lighting_count: LIGHTING_VARIANTS,
            modality: Modality::Visible,
            resolution: super::DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

fn divides(step: f64, range: f64) -> bool {
    step > 0.0 && step.is_finite() && {
        let k = (range / step).round();
        k >= 1.0 && (k * step - range).abs() < 1e-9
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !divides(self.az_step, 360.0) {
            return Err(DatasetError::Config {
                flag: "az-step",
                msg: format!("{} does not divide 360", self.az_step),
            });
        }
        if !divides(self.el_step, 180.0) {
            return Err(DatasetError::Config {
                flag: "el-step",
                msg: format!("{} does not divide 180", self.el_step),
            });
        }
        if !(1..=LIGHTING_VARIANTS).contains(&self.lighting_count) {
            return Err(DatasetError::Config {
                flag: "lighting",
                msg: format!("{} not in 1..={LIGHTING_VARIANTS}", self.lighting_count),
            });
        }
        Renderer::new(TargetModel::default(), self.resolution, self.seed).map(|_| ())?;
        Ok(())
    }
}

/// The `(viewpoint, lighting id)` pairs of a grid in file order: azimuth
/// outermost, then elevation, then lighting. Elevations sit at the centres of
/// `el_step` bands, `−90 + el_step/2 + j·el_step`; azimuths at `j·az_step`.
/// Lighting ids are spread evenly over the 21 variants.
pub fn grid_viewpoints(spec: &GridSpec) -> Result<Vec<(Viewpoint, usize)>, DatasetError> {
    spec.validate()?;
    let n_az = (360.0 / spec.az_step).round() as usize;
    let n_el = (180.0 / spec.el_step).round() as usize;
    let mut out = Vec::with_capacity(n_az * n_el * spec.lighting_count);
    for i in 0..n_az {
        for j in 0..n_el {
            let vp = Viewpoint::new(
                i as f64 * spec.az_step,
                -90.0 + spec.el_step / 2.0 + j as f64 * spec.el_step,
            )
            .expect("grid viewpoints are in range");
            for l in 0..spec.lighting_count {
                out.push((vp, l * LIGHTING_VARIANTS / spec.lighting_count));
            }
        }
    }
    Ok(out)
}

/// Renders one sample per grid point into `out_dir` and writes the manifest.
/// Rendering runs on the current rayon pool; output does not depend on its
/// size.
pub fn generate_grid(spec: &GridSpec, out_dir: &Path) -> Result<Vec<ManifestRow>, DatasetError> {
    let points = grid_viewpoints(spec)?;
    let renderer = Renderer::new(TargetModel::default(), spec.resolution, spec.seed)?;
    let jobs: Vec<_> = points
        .into_iter()
        .enumerate()
        .map(|(i, (vp, light))| (format!("img_{i:05}.png"), vp, light, None))
        .collect();
    write_dataset(&renderer, spec.modality, Split::Train, jobs, out_dir)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub elevation_deg: f64,
    pub start_azimuth_deg: f64,
    pub rate_deg_per_frame: f64,
    pub frames: usize,
    pub modality: Modality,
    pub lighting_id: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    /// A two-turn orbit in the equatorial plane: 0.6° per frame over 1174
    /// frames (a 6°/s spin sampled at 10 Hz).
    fn default() -> Self {
        Self {
            elevation_deg: 0.0,
            start_azimuth_deg: 0.0,
            rate_deg_per_frame: 0.6,
            frames: 1174,
            modality: Modality::Thermal,
            lighting_id: 0,
            resolution: super::DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.frames == 0 {
            return Err(DatasetError::Config {
                flag: "frames",
                msg: "must be at least 1".into(),
            });
        }
        if self.rate_deg_per_frame == 0.0 || !self.rate_deg_per_frame.is_finite() {
            return Err(DatasetError::Config {
                flag: "rate",
                msg: format!("{} must be finite and non-zero", self.rate_deg_per_frame),
            });
        }
        Viewpoint::new(self.start_azimuth_deg, self.elevation_deg).map_err(|e| DatasetError::Config {
            flag: "elevation",
            msg: e.to_string(),
        })?;
        if self.lighting_id >= LIGHTING_VARIANTS {
            return Err(RenderError::Lighting(self.lighting_id).into());
        }
        Renderer::new(TargetModel::default(), self.resolution, self.seed).map(|_| ())?;
        Ok(())
    }

    /// Frame `i` sits at azimuth `wrap(az0 + i·rate)`.
    pub fn viewpoints(&self) -> Result<Vec<Viewpoint>, DatasetError> {
        self.validate()?;
        Ok((0..self.frames)
            .map(|i| {
                Viewpoint::new(
                    wrap_azimuth(self.start_azimuth_deg + i as f64 * self.rate_deg_per_frame),
                    self.elevation_deg,
                )
                .expect("validated")
            })
            .collect())
    }
}

pub fn generate_trajectory(spec: &TrajectorySpec, out_dir: &Path) -> Result<Vec<ManifestRow>, DatasetError> {
    let vps = spec.viewpoints()?;
    let renderer = Renderer::new(TargetModel::default(), spec.resolution, spec.seed)?;
    let jobs: Vec<_> = vps
        .into_iter()
        .enumerate()
        .map(|(i, vp)| (format!("frame_{i:05}.png"), vp, spec.lighting_id, Some(i)))
        .collect();
    write_dataset(&renderer, spec.modality, Split::Test, jobs, out_dir)
}

type Job = (String, Viewpoint, usize, Option<usize>);

fn write_dataset(
    renderer: &Renderer,
    modality: Modality,
    split: Split,
    jobs: Vec<Job>,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, DatasetError> {
    fs::create_dir_all(out_dir).map_err(|e| DatasetError::io(out_dir, e))?;
    let rows = jobs
        .into_par_iter()
        .map(|(name, vp, light, frame_index)| {
            let s = renderer.sample(vp, modality, light, split)?;
            s.image.save_png(&out_dir.join(&name))?;
            Ok(ManifestRow {
                path: name,
                azimuth_deg: vp.azimuth_deg(),
                elevation_deg: vp.elevation_deg(),
                az_class: s.labels.az_class,
                el_class: s.labels.el_class,
                modality,
                lighting_id: light,
                split,
                frame_index,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    write_manifest(&rows, &out_dir.join(MANIFEST_FILE))?;
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<(), DatasetError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("manifest rows serialize"));
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| DatasetError::io(path, e))
}

/// Reads a manifest and checks every row's labels against its viewpoint.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DatasetError> {
    let f = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| DatasetError::Manifest {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let vp = row.viewpoint().map_err(|e| bad(e.to_string()))?;
        if bin_viewpoint(vp) != row.labels() {
            return Err(bad(format!(
                "labels ({}, {}) do not match viewpoint ({}, {})",
                row.az_class, row.el_class, row.azimuth_deg, row.elevation_deg
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads every image listed in a manifest. `manifest` may be the file or
/// the directory containing [`MANIFEST_FILE`].
pub fn load_samples(manifest: &Path) -> Result<Vec<Sample>, DatasetError> {
    let file = manifest_path(manifest);
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let rows = read_manifest(&file)?;
    rows.into_par_iter()
        .map(|r| {
            let image = Image::load_png(&dir.join(&r.path))?;
            let image = if image.channels() == 4 { image } else { image.to_rgba(None) };
            Ok(Sample {
                viewpoint: r.viewpoint().expect("checked on read"),
                labels: r.labels(),
                image,
                modality: r.modality,
                lighting_id: r.lighting_id,
                split: r.split,
            })
        })
        .collect()
}

pub(crate) fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(az: f64, el: f64, lights: usize) -> GridSpec {
        GridSpec {
            az_step: az,
            el_step: el,
            lighting_count: lights,
            resolution: 32,
            ..GridSpec::default()
        }
    }

    #[test]
    fn default_grid_counts() {
        let pts = grid_viewpoints(&GridSpec::default()).unwrap();
        assert_eq!(pts.len(), 13608);
        let mut per_az = [0usize; 36];
        let mut per_el = [0usize; 18];
        for (vp, _) in &pts {
            let c = bin_viewpoint(*vp);
            per_az[c.az_class] += 1;
            per_el[c.el_class] += 1;
            // grid points are class centres
            assert_eq!(crate::viewsphere::class_center(c), *vp);
        }
        assert!(per_az.iter().all(|&n| n == 378));
        assert!(per_el.iter().all(|&n| n == 756));
        let lights: std::collections::BTreeSet<_> = pts.iter().map(|p| p.1).collect();
        assert_eq!(lights.len(), 21);
    }

    #[test]
    fn probe_grid_has_eight_points() {
        let pts = grid_viewpoints(&spec(90.0, 90.0, 1)).unwrap();
        assert_eq!(pts.len(), 8);
        let els: Vec<f64> = pts.iter().map(|p| p.0.elevation_deg()).collect();
        assert!(els.iter().all(|&e| e == 45.0 || e == -45.0));
    }

    #[test]
    fn bad_steps_name_their_flag() {
        match grid_viewpoints(&spec(7.0, 10.0, 1)) {
            Err(DatasetError::Config { flag, .. }) => assert_eq!(flag, "az-step"),
            other => panic!("{other:?}"),
        }
        match grid_viewpoints(&spec(10.0, 7.0, 1)) {
            Err(DatasetError::Config { flag, .. }) => assert_eq!(flag, "el-step"),
            other => panic!("{other:?}"),
        }
        assert!(grid_viewpoints(&spec(10.0, 10.0, 0)).is_err());
        assert!(grid_viewpoints(&spec(10.0, 10.0, 22)).is_err());
    }

    #[test]
    fn trajectory_azimuths() {
        let t = TrajectorySpec {
            resolution: 32,
            ..TrajectorySpec::default()
        };
        let vps = t.viewpoints().unwrap();
        assert_eq!(vps.len(), 1174);
        let swept: f64 = 1173.0 * 0.6;
        assert!((swept / 360.0 - 1.96).abs() < 0.01);

        let on_centres = TrajectorySpec {
            rate_deg_per_frame: 10.0,
            frames: 36,
            ..t.clone()
        };
        for (i, vp) in on_centres.viewpoints().unwrap().iter().enumerate() {
            assert_eq!(vp.azimuth_deg(), 10.0 * i as f64);
            assert_eq!(bin_viewpoint(*vp).az_class, i);
        }

        let halves = TrajectorySpec {
            rate_deg_per_frame: 5.0,
            frames: 72,
            ..t.clone()
        };
        for (i, vp) in halves.viewpoints().unwrap().iter().enumerate() {
            let lower = (vp.azimuth_deg() / 10.0).floor() * 10.0;
            let off = vp.azimuth_deg() - lower;
            if i % 2 == 0 {
                assert_eq!(off, 0.0);
            } else {
                assert_eq!(off, 5.0);
            }
        }
        assert!(TrajectorySpec { frames: 0, ..t.clone() }.validate().is_err());
        assert!(TrajectorySpec {
            rate_deg_per_frame: 0.0,
            ..t
        }
        .validate()
        .is_err());
    }

    #[test]
    fn grid_files_round_trip_and_match_across_pool_sizes() {
        let s = spec(90.0, 90.0, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let rows_a = serial.install(|| generate_grid(&s, a.path())).unwrap();
        let rows_b = wide.install(|| generate_grid(&s, b.path())).unwrap();
        assert_eq!(rows_a, rows_b);
        assert_eq!(rows_a.len(), 16);
        for r in &rows_a {
            assert_eq!(fs::read(a.path().join(&r.path)).unwrap(), fs::read(b.path().join(&r.path)).unwrap());
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        assert_eq!(read_manifest(&a.path().join(MANIFEST_FILE)).unwrap(), rows_a);
        let samples = load_samples(a.path()).unwrap();
        assert_eq!(samples.len(), 16);
        let renderer = Renderer::new(TargetModel::default(), 32, 0).unwrap();
        let again = renderer.sample(samples[3].viewpoint, Modality::Visible, samples[3].lighting_id, Split::Train);
        assert_eq!(again.unwrap().image, samples[3].image);
    }

    #[test]
    fn trajectory_manifest_keeps_frame_order() {
        let t = TrajectorySpec {
            frames: 5,
            rate_deg_per_frame: 7.5,
            resolution: 32,
            ..TrajectorySpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = generate_trajectory(&t, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().contains("\"frame_index\":0"));
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.frame_index, Some(i));
            assert_eq!(r.split, Split::Test);
        }
    }

    #[test]
    fn mislabelled_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(
            &p,
            r#"{"path":"a.png","azimuth_deg":0.0,"elevation_deg":0.0,"az_class":3,"el_class":9,"modality":"visible","lighting_id":0,"split":"train"}"#,
        )
        .unwrap();
        assert!(matches!(read_manifest(&p), Err(DatasetError::Manifest { line: 1, .. })));
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let r = generate_grid(&spec(90.0, 90.0, 1), &blocker.join("sub"));
        assert!(matches!(r, Err(DatasetError::Io { .. })));
    }
}
