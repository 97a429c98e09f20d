//! Evaluation: confusion matrices, per-class precision/recall/F1, bin-distance
//! histograms, angular-error statistics, and their JSON/PNG serializations.
//!
//! Conventions:
//! - confusion rows are ground truth, columns predictions;
//! - a metric whose denominator is zero is 0;
//! - macro averages are unweighted means over all `K` classes;
//! - angular errors compare the ground-truth viewpoint with the *centre* of
//!   the predicted class.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::viewsphere::{angular_error, bin_distance, GeometryError, Viewpoint};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions, {1} ground truths")]
    Length(usize, usize),
    #[error("class {class} out of range for {classes} classes")]
    Class { class: usize, classes: usize },
    #[error("no samples")]
    Empty,
    #[error("invalid report: {0}")]
    Schema(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(MetricsError::Schema(format!("row of length {} in a {k}x{k} matrix", r.len())));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MetricsError::Length(a, b));
    }
    Ok(())
}

pub fn confusion(preds: &[usize], gts: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    check_lengths(preds.len(), gts.len())?;
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &g) in preds.iter().zip(gts) {
        for class in [p, g] {
            if class >= classes {
                return Err(MetricsError::Class { class, classes });
            }
        }
        cm.counts[g * classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Per class `c`: `P = TP/(TP+FP)`, `R = TP/(TP+FN)`, `F1 = 2PR/(P+R)`.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> ClassMetrics {
    let k = cm.classes();
    let (mut precision, mut recall, mut f1) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    for c in 0..k {
        let tp = cm.get(c, c);
        let p = ratio(tp, cm.col_sum(c));
        let r = ratio(tp, cm.row_sum(c));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    ClassMetrics {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinHistogram {
    /// `counts[d]` samples at bin distance `d`, for `d` up to the axis maximum.
    pub counts: Vec<u64>,
    pub circular: bool,
}

impl BinHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of samples with bin distance `<= d`.
    pub fn within(&self, d: usize) -> f64 {
        let upto = self.counts.iter().take(d + 1).sum();
        ratio(upto, self.total())
    }

    pub fn cumulative(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|d| self.within(d)).collect()
    }
}

/// Histogram of bin distances on an axis of `classes` bins; the maximum
/// distance is `classes/2` on a circular axis and `classes − 1` otherwise.
pub fn bin_histogram(preds: &[usize], gts: &[usize], classes: usize, circular: bool) -> Result<BinHistogram> {
    check_lengths(preds.len(), gts.len())?;
    let max = if circular { classes / 2 } else { classes.saturating_sub(1) };
    let mut counts = vec![0; max + 1];
    for (&p, &g) in preds.iter().zip(gts) {
        counts[bin_distance(p, g, classes, circular)?] += 1;
    }
    Ok(BinHistogram { counts, circular })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

pub fn summarize_errors(errors: Vec<f64>) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(ErrorStats { errors, mean, median })
}

/// Angular error of each prediction (already mapped to a viewpoint, e.g. a
/// class centre) against its ground truth.
pub fn error_stats(preds: &[Viewpoint], gts: &[Viewpoint]) -> Result<ErrorStats> {
    check_lengths(preds.len(), gts.len())?;
    summarize_errors(preds.iter().zip(gts).map(|(&p, &g)| angular_error(g, p)).collect())
}

/// Everything evaluated for one classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadReport {
    /// `"azimuth"`, `"elevation"`, or `"phase1"`.
    pub name: String,
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub histogram: BinHistogram,
}

impl HeadReport {
    pub fn new(name: &str, preds: &[usize], gts: &[usize], classes: usize, circular: bool) -> Result<Self> {
        let confusion = confusion(preds, gts, classes)?;
        Ok(Self {
            name: name.to_string(),
            metrics: precision_recall_f1(&confusion),
            histogram: bin_histogram(preds, gts, classes, circular)?,
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Free-form tag such as `synthetic-visible` or `pseudo-thermal`.
    pub condition: String,
    pub samples: usize,
    pub heads: Vec<HeadReport>,
    pub angular: Option<ErrorStats>,
    pub metadata: BTreeMap<String, String>,
}

/// Metadata recorded with every report.
pub fn default_metadata() -> BTreeMap<String, String> {
    [
        ("zero_denominator", "0"),
        ("macro_average", "unweighted mean over classes"),
        ("angular_error", "ground truth vs predicted class centre"),
        ("gradcam_objective", "pre-softmax logits"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl MetricsReport {
    pub fn head(&self, name: &str) -> Option<&HeadReport> {
        self.heads.iter().find(|h| h.name == name)
    }

    pub fn to_value(&self) -> Value {
        let mut heads = Map::new();
        for h in &self.heads {
            let m = &h.metrics;
            heads.insert(
                h.name.clone(),
                obj([
                    ("classes", int(h.confusion.classes() as u64)),
                    ("accuracy", float(h.confusion.accuracy())),
                    (
                        "confusion",
                        Value::Array(h.confusion.rows().into_iter().map(|r| ints(&r)).collect()),
                    ),
                    ("precision", floats(&m.precision)),
                    ("recall", floats(&m.recall)),
                    ("f1", floats(&m.f1)),
                    ("macro_precision", float(m.macro_precision)),
                    ("macro_recall", float(m.macro_recall)),
                    ("macro_f1", float(m.macro_f1)),
                    (
                        "bin_distance",
                        obj([
                            ("circular", Value::Bool(h.histogram.circular)),
                            ("counts", ints(&h.histogram.counts)),
                            ("within_1", float(h.histogram.within(1))),
                            ("within_2", float(h.histogram.within(2))),
                        ]),
                    ),
                ]),
            );
        }
        let angular = match &self.angular {
            Some(a) => obj([
                ("errors", floats(&a.errors)),
                ("mean", float(a.mean)),
                ("median", float(a.median)),
            ]),
            None => Value::Null,
        };
        obj([
            ("condition", Value::String(self.condition.clone())),
            ("samples", int(self.samples as u64)),
            ("heads", Value::Object(heads)),
            ("angular_error", angular),
            (
                "metadata",
                Value::Object(self.metadata.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect()),
            ),
        ])
    }

    /// Canonical JSON: sorted keys, two-space indent, floats with 6 decimals.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        write_canonical(&self.to_value(), 0, &mut out);
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| MetricsError::Schema(e.to_string()))?;
        validate_report(&v)?;
        let heads = v["heads"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(name, h)| {
                let rows: Vec<Vec<u64>> = h["confusion"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|r| r.as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect())
                    .collect();
                let f = |key: &str| h[key].as_f64().unwrap();
                let fv = |key: &str| h[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
                Ok(HeadReport {
                    name: name.clone(),
                    confusion: ConfusionMatrix::from_rows(&rows)?,
                    metrics: ClassMetrics {
                        precision: fv("precision"),
                        recall: fv("recall"),
                        f1: fv("f1"),
                        macro_precision: f("macro_precision"),
                        macro_recall: f("macro_recall"),
                        macro_f1: f("macro_f1"),
                    },
                    histogram: BinHistogram {
                        counts: h["bin_distance"]["counts"]
                            .as_array()
                            .unwrap()
                            .iter()
                            .map(|c| c.as_u64().unwrap())
                            .collect(),
                        circular: h["bin_distance"]["circular"].as_bool().unwrap(),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let angular = match &v["angular_error"] {
            Value::Null => None,
            a => Some(ErrorStats {
                errors: a["errors"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect(),
                mean: a["mean"].as_f64().unwrap(),
                median: a["median"].as_f64().unwrap(),
            }),
        };
        Ok(MetricsReport {
            condition: v["condition"].as_str().unwrap().to_string(),
            samples: v["samples"].as_u64().unwrap() as usize,
            heads,
            angular,
            metadata: v["metadata"]
                .as_object()
                .unwrap()
                .iter()
                .map(|(k, s)| (k.clone(), s.as_str().unwrap_or_default().to_string()))
                .collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Writes `confusion_<head>.png` (a `canvas`×`canvas` heat grid) and
    /// `bins_<head>.png` (a `canvas`×`canvas/2` bar chart) per head.
    pub fn render_plots(&self, dir: &Path, canvas: usize) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut written = Vec::new();
        for h in &self.heads {
            for (name, img) in [
                (format!("confusion_{}.png", h.name), heat_grid(&h.confusion, canvas)),
                (format!("bins_{}.png", h.name), bar_chart(&h.histogram.counts, canvas, canvas / 2)),
            ] {
                let path = dir.join(name);
                img.save_png(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

fn obj<const N: usize>(entries: [(&str, Value); N]) -> Value {
    Value::Object(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn int(v: u64) -> Value {
    Value::Number(v.into())
}

fn ints(v: &[u64]) -> Value {
    Value::Array(v.iter().map(|&x| int(x)).collect())
}

fn float(v: f64) -> Value {
    Value::Number(Number::from_f64(v).unwrap_or_else(|| 0.into()))
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| float(x)).collect())
}

fn write_canonical(v: &Value, depth: usize, out: &mut String) {
    let pad = |d: usize| "  ".repeat(d);
    match v {
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_canonical(&map[*k], depth + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push('}');
        }
        // arrays of scalars stay on one line
        Value::Array(items) if items.iter().all(|x| !x.is_array() && !x.is_object()) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_canonical(x, depth, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, x) in items.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                write_canonical(x, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push(']');
        }
        Value::Number(n) if n.is_f64() => {
            let s = format!("{:.6}", n.as_f64().unwrap());
            // avoid "-0.000000"
            out.push_str(if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
                "0.000000"
            } else {
                &s
            });
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Structural check of a report document.
///
/// Required: `condition` (string), `samples` (integer), `metadata` (object
/// of strings), `angular_error` (null or `{errors: [number], mean, median}`),
/// and `heads`, an object mapping each head name to `{classes, accuracy,
/// confusion: K×K integers, precision/recall/f1: K numbers, macro_precision,
/// macro_recall, macro_f1, bin_distance: {circular, counts, within_1,
/// within_2}}`. Confusion totals and histogram masses must equal `samples`.
pub fn validate_report(v: &Value) -> Result<()> {
    let bad = |m: String| Err(MetricsError::Schema(m));
    let Some(root) = v.as_object() else {
        return bad("root is not an object".into());
    };
    for key in ["condition", "samples", "heads", "angular_error", "metadata"] {
        if !root.contains_key(key) {
            return bad(format!("missing {key}"));
        }
    }
    if let Some(extra) = root
        .keys()
        .find(|k| !["condition", "samples", "heads", "angular_error", "metadata"].contains(&k.as_str()))
    {
        return bad(format!("unexpected key {extra}"));
    }
    if !v["condition"].is_string() {
        return bad("condition must be a string".into());
    }
    let Some(samples) = v["samples"].as_u64() else {
        return bad("samples must be a non-negative integer".into());
    };
    if !v["metadata"].as_object().is_some_and(|m| m.values().all(Value::is_string)) {
        return bad("metadata must map to strings".into());
    }
    let numbers = |x: &Value, len: Option<usize>| {
        x.as_array()
            .is_some_and(|a| a.iter().all(Value::is_number) && len.is_none_or(|n| a.len() == n))
    };
    let Some(heads) = v["heads"].as_object() else {
        return bad("heads must be an object".into());
    };
    for (name, h) in heads {
        let Some(k) = h["classes"].as_u64().map(|k| k as usize) else {
            return bad(format!("{name}.classes missing"));
        };
        let Some(rows) = h["confusion"].as_array() else {
            return bad(format!("{name}.confusion missing"));
        };
        let mut total = 0;
        if rows.len() != k {
            return bad(format!("{name}.confusion has {} rows, expected {k}", rows.len()));
        }
        for r in rows {
            match r.as_array() {
                Some(r) if r.len() == k && r.iter().all(Value::is_u64) => {
                    total += r.iter().map(|c| c.as_u64().unwrap()).sum::<u64>()
                }
                _ => return bad(format!("{name}.confusion row malformed")),
            }
        }
        if total != samples {
            return bad(format!("{name}.confusion totals {total}, expected {samples}"));
        }
        for key in ["precision", "recall", "f1"] {
            if !numbers(&h[key], Some(k)) {
                return bad(format!("{name}.{key} must hold {k} numbers"));
            }
        }
        for key in ["accuracy", "macro_precision", "macro_recall", "macro_f1"] {
            if !h[key].is_number() {
                return bad(format!("{name}.{key} must be a number"));
            }
        }
        let b = &h["bin_distance"];
        if !(b["circular"].is_boolean() && b["within_1"].is_number() && b["within_2"].is_number()) {
            return bad(format!("{name}.bin_distance malformed"));
        }
        match b["counts"].as_array() {
            Some(c) if c.iter().all(Value::is_u64) => {
                let mass: u64 = c.iter().map(|x| x.as_u64().unwrap()).sum();
                if mass != samples {
                    return bad(format!("{name}.bin_distance mass {mass}, expected {samples}"));
                }
            }
            _ => return bad(format!("{name}.bin_distance.counts malformed")),
        }
    }
    match &v["angular_error"] {
        Value::Null => {}
        a if numbers(&a["errors"], None) && a["mean"].is_number() && a["median"].is_number() => {}
        _ => return bad("angular_error malformed".into()),
    }
    Ok(())
}

/// Row-normalized heat grid: white (no mass) to dark blue (whole row).
pub fn heat_grid(cm: &ConfusionMatrix, canvas: usize) -> Image {
    let mut img = Image::filled(canvas, canvas, 3, 255).expect("canvas");
    let k = cm.classes().max(1);
    for y in 0..canvas {
        let g = y * k / canvas;
        let row = cm.row_sum(g.min(cm.classes().saturating_sub(1)));
        for x in 0..canvas {
            let p = x * k / canvas;
            if cm.classes() == 0 {
                continue;
            }
            let t = ratio(cm.get(g, p), row);
            let px = img.pixel_mut(x, y);
            px[0] = (255.0 * (1.0 - t)) as u8;
            px[1] = (255.0 * (1.0 - 0.8 * t)) as u8;
            px[2] = (255.0 * (1.0 - 0.45 * t)) as u8;
        }
    }
    img
}

/// Vertical bars, one per bin, scaled to the tallest.
pub fn bar_chart(counts: &[u64], width: usize, height: usize) -> Image {
    let mut img = Image::filled(width, height.max(1), 3, 255).expect("canvas");
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let n = counts.len().max(1);
    for x in 0..width {
        let bin = x * n / width;
        let bar = (counts.get(bin).copied().unwrap_or(0) * img.height() as u64 / max) as usize;
        for y in img.height() - bar..img.height() {
            img.pixel_mut(x, y).copy_from_slice(&[40, 80, 160]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::viewsphere::{class_center, ViewClass};

    #[test]
    fn confusion_hand_count() {
        let cm = confusion(&[1, 1], &[0, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![0, 1], vec![0, 1]]);
        let diag = confusion(&[0, 2, 1, 2], &[0, 2, 1, 2], 3).unwrap();
        assert_eq!(diag.trace(), 4);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn precision_recall_hand_case() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![3, 7]]).unwrap();
        let m = precision_recall_f1(&cm);
        assert!((m.precision[0] - 8.0 / 11.0).abs() < 1e-12);
        assert!((m.recall[0] - 0.8).abs() < 1e-12);
        assert!((m.f1[0] - 0.761_904_761_9).abs() < 1e-9);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = confusion(&[0, 0], &[0, 0], 3).unwrap();
        let m = precision_recall_f1(&cm);
        assert_eq!((m.precision[1], m.recall[1], m.f1[1]), (0.0, 0.0, 0.0));
        assert_eq!(m.f1[0], 1.0);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_cases() {
        let h = bin_histogram(&[3, 4, 5], &[3, 4, 5], 36, true).unwrap();
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts.len(), 19);
        let flipped: Vec<usize> = (0..36).map(|c| (c + 18) % 36).collect();
        let all: Vec<usize> = (0..36).collect();
        let h = bin_histogram(&flipped, &all, 36, true).unwrap();
        assert_eq!(h.counts[18], 36);
        assert_eq!(h.within(17), 0.0);
        let el = bin_histogram(&[0], &[17], 18, false).unwrap();
        assert_eq!(el.counts.len(), 18);
        assert_eq!(el.counts[17], 1);
    }

    #[test]
    fn error_stat_cases() {
        let s = summarize_errors(vec![0.0, 5.0, 10.0, 20.0, 180.0]).unwrap();
        assert!((s.mean - 43.0).abs() < 1e-12);
        assert_eq!(s.median, 10.0);
        assert_eq!(summarize_errors(vec![1.0, 4.0, 2.0, 3.0]).unwrap().median, 2.5);
        assert!(summarize_errors(vec![]).is_err());

        let gts: Vec<_> = (0..36).map(|a| class_center(ViewClass::new(a, 9).unwrap())).collect();
        let exact = error_stats(&gts, &gts).unwrap();
        assert_eq!((exact.mean, exact.median), (0.0, 0.0));
        // one class off in azimuth at elevation +5°: cos 5° shrinks the
        // 10° step slightly; at the equator it is exactly 10°
        let eq: Vec<_> = (0..36).map(|a| Viewpoint::new(10.0 * a as f64, 0.0).unwrap()).collect();
        let off: Vec<_> = (0..36).map(|a| Viewpoint::new(10.0 * (a + 1) as f64, 0.0).unwrap()).collect();
        assert!((error_stats(&off, &eq).unwrap().mean - 10.0).abs() < 1e-9);
    }

    fn sample_report() -> MetricsReport {
        let preds = [0, 1, 2, 2, 1, 0, 3];
        let gts = [0, 1, 2, 1, 1, 3, 3];
        MetricsReport {
            condition: "synthetic-visible".into(),
            samples: 7,
            heads: vec![HeadReport::new("azimuth", &preds, &gts, 4, true).unwrap()],
            angular: Some(summarize_errors(vec![0.5, 1.0 / 3.0, 170.25, 0.0, 2.0, 3.0, 4.0]).unwrap()),
            metadata: default_metadata(),
        }
    }

    #[test]
    fn json_is_canonical_and_round_trips() {
        let r = sample_report();
        let text = r.to_json();
        assert_eq!(text, sample_report().to_json());
        assert!(text.contains("\"mean\": 25.726190"));
        let back = MetricsReport::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.heads[0].confusion, r.heads[0].confusion);
        for (a, b) in back.heads[0].metrics.f1.iter().zip(&r.heads[0].metrics.f1) {
            assert!((a - b).abs() <= 5e-7);
        }
        let keys: Vec<_> = text.lines().filter(|l| l.starts_with("  \"")).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn schema_rejects_inconsistent_reports() {
        let mut v = sample_report().to_value();
        assert!(validate_report(&v).is_ok());
        v["samples"] = 8.into();
        assert!(validate_report(&v).is_err());
        let mut v = sample_report().to_value();
        v["extra"] = 1.into();
        assert!(validate_report(&v).is_err());
        assert!(MetricsReport::from_json("{}").is_err());
    }

    #[test]
    fn plots_have_requested_size() {
        let dir = tempfile::tempdir().unwrap();
        let paths = sample_report().render_plots(dir.path(), 96).unwrap();
        let heat = Image::load_png(&paths[0]).unwrap();
        assert_eq!((heat.width(), heat.height()), (96, 96));
        let bars = Image::load_png(&paths[1]).unwrap();
        assert_eq!((bars.width(), bars.height()), (96, 48));
    }

    fn labelled(max_k: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_k).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..200)))
    }

    fn viewpoints() -> impl Strategy<Value = Vec<(Viewpoint, Viewpoint)>> {
        let vp = || (0.0..360.0f64, -90.0..=90.0f64).prop_map(|(a, e)| Viewpoint::new(a, e).unwrap());
        prop::collection::vec((vp(), vp()), 1..50)
    }

    proptest! {
        #[test]
        fn counts_are_consistent((k, pairs) in labelled(10)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let cm = confusion(&p, &g, k).unwrap();
            prop_assert_eq!(cm.total(), pairs.len() as u64);
            for c in 0..k {
                let tp = pairs.iter().filter(|&&(p, g)| p == c && g == c).count() as u64;
                let fp = pairs.iter().filter(|&&(p, g)| p == c && g != c).count() as u64;
                let fn_ = pairs.iter().filter(|&&(p, g)| p != c && g == c).count() as u64;
                prop_assert_eq!(tp + fp, cm.col_sum(c));
                prop_assert_eq!(tp + fn_, cm.row_sum(c));
            }
            let m = precision_recall_f1(&cm);
            prop_assert_eq!(m.f1.len(), k);
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
        }

        #[test]
        fn histogram_mass_and_monotone_cumulative((k, pairs) in labelled(36), circular: bool) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let h = bin_histogram(&p, &g, k, circular).unwrap();
            prop_assert_eq!(h.total(), pairs.len() as u64);
            let cum = h.cumulative();
            prop_assert!(cum.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((cum.last().unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_ignore_sample_order((k, pairs) in labelled(10), seed: u64) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let (ps, gs): (Vec<_>, Vec<_>) = shuffled.iter().copied().unzip();
            let a = HeadReport::new("azimuth", &p, &g, k, true).unwrap();
            let b = HeadReport::new("azimuth", &ps, &gs, k, true).unwrap();
            prop_assert_eq!(a.confusion, b.confusion);
            prop_assert_eq!(a.metrics, b.metrics);
            prop_assert_eq!(a.histogram, b.histogram);
        }

        #[test]
        fn error_stats_bounded_and_symmetric(pairs in viewpoints(), i: prop::sample::Index) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let s = error_stats(&p, &g).unwrap();
            prop_assert!(s.mean >= 0.0 && s.mean <= 180.0);
            let (mut p2, mut g2) = (p.clone(), g.clone());
            let j = i.index(p.len());
            std::mem::swap(&mut p2[j], &mut g2[j]);
            let t = error_stats(&p2, &g2).unwrap();
            prop_assert!((s.mean - t.mean).abs() < 1e-9);
            prop_assert!((s.median - t.median).abs() < 1e-9);
        }
    }
}
