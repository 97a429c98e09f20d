use std::fs;
use std::path::{Path, PathBuf};

use vsp_core::augment::{augment_image, prepare, preview as contact_sheet, to_tensor, AugmentConfig, Channel, ChannelMode};
use vsp_core::config::{Ini, IniSection, RunConfig};
use vsp_core::gradcam::{gradcam, nearest_match, overlay, side_by_side, ExplainTarget, HeadSelect};
use vsp_core::image::Image;
use vsp_core::metrics::{default_metadata, error_stats, HeadReport, MetricsReport};
use vsp_core::net::{HeadMode, Network};
use vsp_core::scene::{generate_grid, generate_trajectory, load_samples, GridSpec, Renderer, Sample, Split, TargetModel, TrajectorySpec};
use vsp_core::train::{evaluate, fit_with, head_targets, metrics_csv, stack, Checkpoint};
use vsp_core::viewsphere::{class_center, phase1_center, Phase1Class, ViewClass};

use crate::exit::{self, Failure};
use crate::{EvalArgs, ExplainArgs, GenerateArgs, PreviewArgs, TrainArgs, TrajectoryArgs};

pub const CONFIG_ECHO: &str = "config.ini";
pub const CHECKPOINT_FILE: &str = "checkpoint.vsp";
pub const LOG_FILE: &str = "metrics.csv";

/// Inputs are evaluated in slices of this many samples to bound memory.
const EVAL_CHUNK: usize = 512;
const EVAL_BATCH: usize = 64;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| exit::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| exit::io(path, e))
}

fn echo_section<S: IniSection>(spec: &S, dir: &Path) -> Result<(), Failure> {
    let mut ini = Ini::default();
    ini.push(spec.to_section());
    write(&dir.join(CONFIG_ECHO), &ini.to_string())
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let spec = GridSpec {
        az_step: a.az_step,
        el_step: a.el_step,
        lighting_count: a.lighting,
        modality: a.modality,
        resolution: a.resolution,
        seed: a.seed,
    };
    spec.validate().map_err(flag_error)?;
    create_dir(&a.out)?;
    let rows = generate_grid(&spec, &a.out)?;
    echo_section(&spec, &a.out)?;
    println!("{} samples in {}", rows.len(), a.out.display());
    Ok(())
}

pub fn trajectory(a: &TrajectoryArgs) -> Result<(), Failure> {
    let spec = TrajectorySpec {
        elevation_deg: a.elevation,
        start_azimuth_deg: a.start_azimuth,
        rate_deg_per_frame: a.rate,
        frames: a.frames,
        modality: a.modality,
        lighting_id: a.lighting,
        resolution: a.resolution,
        seed: a.seed,
    };
    spec.validate().map_err(flag_error)?;
    create_dir(&a.out)?;
    let rows = generate_trajectory(&spec, &a.out)?;
    echo_section(&spec, &a.out)?;
    println!("{} frames in {}", rows.len(), a.out.display());
    Ok(())
}

/// Spells validation failures with the command-line flag name.
fn flag_error(e: vsp_core::scene::DatasetError) -> Failure {
    match e {
        vsp_core::scene::DatasetError::Config { flag, msg } => Failure::config(format!("invalid --{flag}: {msg}")),
        other => other.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn parse_channel(s: &str) -> Result<ChannelMode, Failure> {
    Ok(match s {
        "red" => ChannelMode::Select(Channel::Red),
        "green" => ChannelMode::Select(Channel::Green),
        "blue" => ChannelMode::Select(Channel::Blue),
        "gray" => ChannelMode::Gray,
        _ => return Err(Failure::config(format!("invalid --channel {s:?} (expected red, green, blue or gray)"))),
    })
}

pub fn preview(a: &PreviewArgs) -> Result<(), Failure> {
    let mode = parse_channel(&a.channel)?;
    let cfg: AugmentConfig = load_config(a.config.as_deref())?.train.augment;
    if a.rows == 0 {
        return Err(Failure::config("--rows must be at least 1"));
    }
    let samples = load_samples(&a.data)?;
    if samples.is_empty() {
        return Err(Failure::config(format!("{}: no samples", a.data.display())));
    }
    let n = samples.len();
    let picked: Vec<Sample> = (0..a.rows.min(n)).map(|i| samples[i * n / a.rows.min(n)].clone()).collect();
    let sheet = contact_sheet(&picked, mode, &cfg, a.variants)?;
    sheet.save_png(&a.out)?;
    println!("{}x{} contact sheet in {}", sheet.width(), sheet.height(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let samples = load_samples(&a.data)?;
    create_dir(&a.out)?;
    write(&a.out.join(CONFIG_ECHO), &cfg.to_ini().to_string())?;
    eprintln!("{}", vsp_core::train::LOG_HEADER);
    let outcome = fit_with(&cfg.train, &samples, |m| eprintln!("{}", m.csv_row()))?;
    write(&a.out.join(LOG_FILE), &metrics_csv(&outcome.log))?;
    outcome.best.save(&a.out.join(CHECKPOINT_FILE))?;
    println!(
        "best epoch {} ({} {:.6}) of {}{}",
        outcome.best.epoch,
        cfg.train.stop_metric.name(),
        outcome.best.best_metric,
        outcome.log.len(),
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    if outcome.validated_on_train {
        println!("note: no spare samples for validation; validated on the training set");
    }
    if outcome.augment_fallbacks > 0 {
        println!("note: {} augmentation fallbacks to the plain render", outcome.augment_fallbacks);
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Network<f32>, Failure> {
    Ok(Checkpoint::load(path)?.network)
}

/// Writes `report` plus its plots next to it.
fn emit_report(report: &MetricsReport, path: &Path, plot_size: usize) -> Result<Vec<PathBuf>, Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    report.write(path)?;
    Ok(report.render_plots(&dir, plot_size)?)
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let net = load_model(&a.model)?;
    let samples = load_samples(&a.data)?;
    if samples.is_empty() {
        return Err(Failure::config(format!("{}: no samples", a.data.display())));
    }
    let mode = net.config().head;
    let heads = net.config().heads();
    let mut targets = vec![Vec::with_capacity(samples.len()); heads.len()];
    for s in &samples {
        for (h, t) in head_targets(s, mode).into_iter().enumerate() {
            targets[h].push(t);
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::with_capacity(samples.len()); heads.len()];
    for (c, chunk) in samples.chunks(EVAL_CHUNK).enumerate() {
        let inputs = chunk
            .iter()
            .map(|s| prepare(s, ChannelMode::Select(Channel::Green)))
            .collect::<Result<Vec<_>, _>>()?;
        let range = c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len();
        let t: Vec<Vec<usize>> = targets.iter().map(|t| t[range.clone()].to_vec()).collect();
        let ev = evaluate(&net, &inputs, &t, EVAL_BATCH)?;
        for (p, e) in preds.iter_mut().zip(ev.predictions) {
            p.extend(e);
        }
    }

    let mut reports = Vec::new();
    for (h, (name, classes)) in heads.iter().enumerate() {
        let (label, circular) = match *name {
            "az" => ("azimuth", true),
            "el" => ("elevation", false),
            _ => ("phase1", true),
        };
        reports.push(HeadReport::new(label, &preds[h], &targets[h], *classes, circular)?);
    }
    let angular = match mode {
        HeadMode::Dual => {
            let pv: Vec<_> = preds[0]
                .iter()
                .zip(&preds[1])
                .map(|(&az_class, &el_class)| class_center(ViewClass { az_class, el_class }))
                .collect();
            let gv: Vec<_> = samples.iter().map(|s| s.viewpoint).collect();
            Some(error_stats(&pv, &gv)?)
        }
        HeadMode::Single => None,
    };
    let mut metadata = default_metadata();
    metadata.insert("input_channel".into(), "green".into());
    let report = MetricsReport {
        condition: a.condition.clone(),
        samples: samples.len(),
        heads: reports,
        angular,
        metadata,
    };
    let plots = emit_report(&report, &a.report, a.plot_size)?;
    for h in &report.heads {
        println!(
            "{}: accuracy {:.4}, macro F1 {:.4}, within 1 bin {:.4}",
            h.name,
            h.confusion.accuracy(),
            h.metrics.macro_f1,
            h.histogram.within(1)
        );
    }
    if let Some(s) = &report.angular {
        println!("angular error: mean {:.2} deg, median {:.2} deg", s.mean, s.median);
    }
    println!("report {} and {} plots", a.report.display(), plots.len());
    Ok(())
}

/// The network's view of an image file: green channel over black.
fn network_input(path: &Path) -> Result<Image, Failure> {
    let img = Image::load_png(path)?;
    let rgba = if img.channels() == 4 { img } else { img.to_rgba(None) };
    let mut rng = vsp_core::augment::stream_rng(0, 0, 0);
    Ok(augment_image(
        &rgba,
        ChannelMode::Select(Channel::Green),
        &AugmentConfig::disabled(),
        &mut rng,
    )?)
}

pub fn explain(a: &ExplainArgs) -> Result<(), Failure> {
    let net = load_model(&a.model)?;
    let gray = network_input(&a.image)?;
    let x = to_tensor(&gray);
    let pred = net.predict(&stack(std::slice::from_ref(&x))?)?[0];
    let mode = net.config().head;
    let target = match (mode, a.head) {
        (HeadMode::Single, HeadSelect::Azimuth) => ExplainTarget::AzimuthOnly(pred.az_class),
        (HeadMode::Single, _) => {
            return Err(Failure::config("single-head checkpoints only support --head azimuth"));
        }
        (HeadMode::Dual, h) => ExplainTarget::predicted(h, pred),
    };
    let map = gradcam(&net, &x, target, a.layer.as_deref())?;
    let mut out = overlay(&gray, &map, a.alpha)?;
    if a.match_render {
        let res = net.config().resolution;
        let reference = match mode {
            HeadMode::Dual => nearest_match(pred, a.match_modality, 0, res, 0)?,
            HeadMode::Single => {
                let vp = phase1_center(Phase1Class::new(pred.az_class).expect("head size"));
                Renderer::new(TargetModel::default(), res, 0)?
                    .sample(vp, a.match_modality, 0, Split::Test)?
                    .image
            }
        };
        out = side_by_side(&out, &reference);
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    out.save_png(&a.out)?;
    if let Some(csv) = &a.csv {
        map.write_csv(csv)?;
    }
    match mode {
        HeadMode::Dual => {
            let c = class_center(pred);
            println!(
                "predicted azimuth class {} ({:.0} deg), elevation class {} ({:.0} deg); layer {}",
                pred.az_class,
                c.azimuth_deg(),
                pred.el_class,
                c.elevation_deg(),
                map.layer
            );
        }
        HeadMode::Single => println!("predicted class {}; layer {}", pred.az_class, map.layer),
    }
    Ok(())
}
