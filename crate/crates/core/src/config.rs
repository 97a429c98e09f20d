//! Flat sectioned key-value configuration files.
//!
//! ```text
//! # comment
//! [network]
//! resolution = 128
//! widths = 16, 32, 64
//! ```
//!
//! Keys are unique within a section and unknown sections or keys are errors.
//! Missing keys keep their defaults. Emission is canonical: sections and keys
//! in a fixed order, floats in shortest round-trip form, so parse → emit is
//! stable and a parsed file reproduces the exact values that were written.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::net::{HeadMode, NetworkConfig};
use crate::scene::{GridSpec, Modality, TrajectorySpec};
use crate::train::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {key:?} in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key}: {msg}")]
    Value { section: String, key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// An ordered list of sections, each an ordered list of key-value pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let syntax = |msg: String| ConfigError::Syntax { line: i + 1, msg };
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(format!("unterminated section header {line:?}")))?
                    .trim();
                if name.is_empty() {
                    return Err(syntax("empty section name".into()));
                }
                if ini.sections.iter().any(|(s, _)| s == name) {
                    return Err(syntax(format!("duplicate section [{name}]")));
                }
                ini.sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(syntax("empty key".into()));
            }
            let (section, entries) = ini
                .sections
                .last_mut()
                .ok_or_else(|| syntax(format!("key {key:?} outside any section")))?;
            if entries.iter().any(|(k, _)| k == key) {
                return Err(syntax(format!("duplicate key {key:?} in [{section}]")));
            }
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(ini)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(s, _)| s.as_str())
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections.iter().find(|(s, _)| s == name).map(|(_, e)| e.as_slice())
    }

    /// Appends a section (or replaces one of the same name).
    pub fn push(&mut self, section: SectionWriter) {
        self.sections.retain(|(s, _)| *s != section.name);
        self.sections.push((section.name, section.entries));
    }

    /// Fails on any section not in `known`.
    pub fn check_sections(&self, known: &[&str]) -> Result<()> {
        match self.section_names().find(|s| !known.contains(s)) {
            Some(s) => Err(ConfigError::UnknownSection(s.to_string())),
            None => Ok(()),
        }
    }

    /// Reader over one section; an absent section reads as empty.
    pub fn reader(&self, name: &str) -> SectionReader<'_> {
        SectionReader {
            section: name.to_string(),
            entries: self
                .section(name)
                .unwrap_or_default()
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect(),
        }
    }
}

impl Display for Ini {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (name, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "[{name}]")?;
            for (k, v) in entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub struct SectionWriter {
    name: String,
    entries: Vec<(String, String)>,
}

impl SectionWriter {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn float(&mut self, key: &str, v: f64) -> &mut Self {
        self.put(key, fmt_f64(v))
    }

    pub fn float_pair(&mut self, key: &str, v: (f64, f64)) -> &mut Self {
        self.put(key, format!("{}, {}", fmt_f64(v.0), fmt_f64(v.1)))
    }

    pub fn pair<T: Display>(&mut self, key: &str, v: (T, T)) -> &mut Self {
        self.put(key, format!("{}, {}", v.0, v.1))
    }

    pub fn list<T: Display>(&mut self, key: &str, v: &[T]) -> &mut Self {
        let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.put(key, parts.join(", "))
    }
}

/// Typed, consuming access to one section. Call [`SectionReader::finish`]
/// last so leftover (unknown) keys are reported.
pub struct SectionReader<'a> {
    section: String,
    entries: BTreeMap<&'a str, &'a str>,
}

impl SectionReader<'_> {
    fn err(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            section: self.section.clone(),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    fn parse_one<T: FromStr>(&self, key: &str, s: &str) -> Result<T>
    where
        T::Err: Display,
    {
        s.trim().parse().map_err(|e: T::Err| self.err(key, format!("{s:?}: {e}")))
    }

    pub fn get<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<&mut Self>
    where
        T::Err: Display,
    {
        if let Some(v) = self.entries.remove(key) {
            *target = self.parse_one(key, v)?;
        }
        Ok(self)
    }

    pub fn list<T: FromStr>(&mut self, key: &str, target: &mut Vec<T>) -> Result<&mut Self>
    where
        T::Err: Display,
    {
        if let Some(v) = self.entries.remove(key) {
            *target = if v.trim().is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|p| self.parse_one(key, p)).collect::<Result<_>>()?
            };
        }
        Ok(self)
    }

    pub fn pair<T: FromStr>(&mut self, key: &str, target: &mut (T, T)) -> Result<&mut Self>
    where
        T::Err: Display,
    {
        if let Some(v) = self.entries.remove(key) {
            let (a, b) = v
                .split_once(',')
                .ok_or_else(|| self.err(key, format!("expected two comma-separated values, got {v:?}")))?;
            *target = (self.parse_one(key, a)?, self.parse_one(key, b)?);
        }
        Ok(self)
    }

    pub fn finish(&self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(ConfigError::UnknownKey {
                section: self.section.clone(),
                key: k.to_string(),
            }),
            None => Ok(()),
        }
    }
}

/// A config struct stored as one INI section.
pub trait IniSection: Sized + Clone {
    const SECTION: &'static str;
    fn write(&self, out: &mut SectionWriter);
    /// Overrides the fields present in `r`, keeping `self` for the rest.
    fn read(&mut self, r: &mut SectionReader) -> Result<()>;

    fn to_section(&self) -> SectionWriter {
        let mut w = SectionWriter::new(Self::SECTION);
        self.write(&mut w);
        w
    }

    /// `base` with the section's values applied; unknown keys are errors.
    fn from_ini(ini: &Ini, base: &Self) -> Result<Self> {
        let mut out = base.clone();
        let mut r = ini.reader(Self::SECTION);
        out.read(&mut r)?;
        r.finish()?;
        Ok(out)
    }
}

impl IniSection for NetworkConfig {
    const SECTION: &'static str = "network";
    fn write(&self, w: &mut SectionWriter) {
        w.put("resolution", self.resolution)
            .put("stem_width", self.stem_width)
            .list("widths", &self.widths)
            .put("blocks_per_stage", self.blocks_per_stage)
            .put("head", self.head.name())
            .float("bn_momentum", self.bn_momentum)
            .float("bn_eps", self.bn_eps)
            .put("seed", self.seed);
    }
    fn read(&mut self, r: &mut SectionReader) -> Result<()> {
        let mut head = self.head.name().to_string();
        r.get("resolution", &mut self.resolution)?
            .get("stem_width", &mut self.stem_width)?
            .list("widths", &mut self.widths)?
            .get("blocks_per_stage", &mut self.blocks_per_stage)?
            .get("head", &mut head)?
            .get("bn_momentum", &mut self.bn_momentum)?
            .get("bn_eps", &mut self.bn_eps)?
            .get("seed", &mut self.seed)?;
        self.head = head.parse::<HeadMode>().map_err(|m| r.err("head", m))?;
        Ok(())
    }
}

impl IniSection for AugmentConfig {
    const SECTION: &'static str = "augment";
    fn write(&self, w: &mut SectionWriter) {
        w.put("seed", self.seed)
            .put("color_jitter", self.color_jitter)
            .float("brightness", self.brightness)
            .float("hue", self.hue)
            .put("translate_scale", self.translate_scale)
            .float("translate", self.translate)
            .float_pair("scale", self.scale)
            .put("homography", self.homography)
            .float("corner_jitter", self.corner_jitter)
            .put("perlin", self.perlin)
            .float("perlin_probability", self.perlin_probability)
            .put("perlin_octaves", self.perlin_octaves)
            .float("perlin_frequency", self.perlin_frequency)
            .put("blur", self.blur)
            .float_pair("blur_sigma", self.blur_sigma)
            .put("noise", self.noise)
            .float_pair("noise_sigma", self.noise_sigma)
            .put("gain_contrast", self.gain_contrast)
            .float_pair("gain", self.gain)
            .float_pair("offset", self.offset)
            .put("patch_dropout", self.patch_dropout)
            .pair("patch_count", self.patch_count)
            .pair("patch_size", self.patch_size);
    }
    fn read(&mut self, r: &mut SectionReader) -> Result<()> {
        r.get("seed", &mut self.seed)?
            .get("color_jitter", &mut self.color_jitter)?
            .get("brightness", &mut self.brightness)?
            .get("hue", &mut self.hue)?
            .get("translate_scale", &mut self.translate_scale)?
            .get("translate", &mut self.translate)?
            .pair("scale", &mut self.scale)?
            .get("homography", &mut self.homography)?
            .get("corner_jitter", &mut self.corner_jitter)?
            .get("perlin", &mut self.perlin)?
            .get("perlin_probability", &mut self.perlin_probability)?
            .get("perlin_octaves", &mut self.perlin_octaves)?
            .get("perlin_frequency", &mut self.perlin_frequency)?
            .get("blur", &mut self.blur)?
            .pair("blur_sigma", &mut self.blur_sigma)?
            .get("noise", &mut self.noise)?
            .pair("noise_sigma", &mut self.noise_sigma)?
            .get("gain_contrast", &mut self.gain_contrast)?
            .pair("gain", &mut self.gain)?
            .pair("offset", &mut self.offset)?
            .get("patch_dropout", &mut self.patch_dropout)?
            .pair("patch_count", &mut self.patch_count)?
            .pair("patch_size", &mut self.patch_size)?;
        Ok(())
    }
}

impl IniSection for GridSpec {
    const SECTION: &'static str = "scene";
    fn write(&self, w: &mut SectionWriter) {
        w.float("az_step", self.az_step)
            .float("el_step", self.el_step)
            .put("lighting", self.lighting_count)
            .put("modality", self.modality)
            .put("resolution", self.resolution)
            .put("seed", self.seed);
    }
    fn read(&mut self, r: &mut SectionReader) -> Result<()> {
        r.get::<f64>("az_step", &mut self.az_step)?
            .get("el_step", &mut self.el_step)?
            .get("lighting", &mut self.lighting_count)?
            .get::<Modality>("modality", &mut self.modality)?
            .get("resolution", &mut self.resolution)?
            .get("seed", &mut self.seed)?;
        Ok(())
    }
}

impl IniSection for TrajectorySpec {
    const SECTION: &'static str = "trajectory";
    fn write(&self, w: &mut SectionWriter) {
        w.float("elevation", self.elevation_deg)
            .float("start_azimuth", self.start_azimuth_deg)
            .float("rate", self.rate_deg_per_frame)
            .put("frames", self.frames)
            .put("modality", self.modality)
            .put("lighting_id", self.lighting_id)
            .put("resolution", self.resolution)
            .put("seed", self.seed);
    }
    fn read(&mut self, r: &mut SectionReader) -> Result<()> {
        r.get("elevation", &mut self.elevation_deg)?
            .get("start_azimuth", &mut self.start_azimuth_deg)?
            .get("rate", &mut self.rate_deg_per_frame)?
            .get("frames", &mut self.frames)?
            .get::<Modality>("modality", &mut self.modality)?
            .get("lighting_id", &mut self.lighting_id)?
            .get("resolution", &mut self.resolution)?
            .get("seed", &mut self.seed)?;
        Ok(())
    }
}

/// Everything one experiment needs: the training setup (network, augment
/// and optimizer sections) plus the dataset parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub scene: GridSpec,
    pub trajectory: TrajectorySpec,
}

impl RunConfig {
    pub const SECTIONS: [&'static str; 5] = ["train", "network", "augment", "scene", "trajectory"];

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        ini.check_sections(&Self::SECTIONS)?;
        let base = RunConfig::default();
        let cfg = RunConfig {
            train: TrainConfig::from_ini_sections(ini, &base.train)?,
            scene: GridSpec::from_ini(ini, &base.scene)?,
            trajectory: TrajectorySpec::from_ini(ini, &base.trajectory)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_ini(&Ini::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ini(&Ini::read(path)?)
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = self.train.to_ini();
        ini.push(self.scene.to_section());
        ini.push(self.trajectory.to_section());
        ini
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.trajectory.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
