//! Residual viewpoint classifier.
//!
//! ```text
//! [N,1,H,W] ─ focus ─ stem conv3×3/BN/ReLU ─ stages ─ global avg pool ─┬─ head.az → [N,36]
//!                                                                      └─ head.el → [N,18]
//! ```
//!
//! Each stage holds `blocks` residual blocks; the first block of every stage
//! after the first uses stride 2. A block is
//! `relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))` where the skip is the
//! identity, or a 1×1 strided conv + BN when the shape changes. Convolutions
//! carry no bias since a BN follows each one. The phase-1 variant replaces
//! the two heads with a single 10-way `head.cls`.

pub mod focus;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{argmax_rows, BatchNormMode, Real, RunningStats, Tape, Tensor, TensorError, Var};
use crate::viewsphere::{ViewClass, PHASE1_AZ_CLASSES, PHASE2_AZ_CLASSES, PHASE2_EL_CLASSES};

pub use focus::{focus, focus_tensor, unfocus_tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input {got:?} does not match the configured [N, 1, {res}, {res}]")]
    Input { got: Vec<usize>, res: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadMode {
    /// 36-way azimuth and 18-way elevation heads on the same pooled feature.
    Dual,
    /// One 10-way azimuth head.
    Single,
}

impl HeadMode {
    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Dual => "dual",
            HeadMode::Single => "single",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dual" => Ok(HeadMode::Dual),
            "single" => Ok(HeadMode::Single),
            _ => Err(format!("unknown head mode {s:?} (expected dual or single)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub resolution: usize,
    pub stem_width: usize,
    /// Output channels of each stage. May be empty (stem-only network).
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub head: HeadMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            stem_width: 16,
            widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            head: HeadMode::Dual,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.resolution < 2 || self.resolution % 2 != 0 {
            return bad(format!("resolution {} must be even", self.resolution));
        }
        let stride_factor = 1usize << self.widths.len().saturating_sub(1);
        if self.resolution % stride_factor != 0 {
            return bad(format!(
                "resolution {} must be divisible by {stride_factor} for {} stages",
                self.resolution,
                self.widths.len()
            ));
        }
        if self.stem_width == 0 || self.widths.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if !self.widths.is_empty() && self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("bn momentum must be in [0, 1] and eps > 0".into());
        }
        Ok(())
    }

    /// `(name, classes)` of each output head.
    pub fn heads(&self) -> Vec<(&'static str, usize)> {
        match self.head {
            HeadMode::Dual => vec![("az", PHASE2_AZ_CLASSES), ("el", PHASE2_EL_CLASSES)],
            HeadMode::Single => vec![("cls", PHASE1_AZ_CLASSES)],
        }
    }

    fn feature_width(&self) -> usize {
        *self.widths.last().unwrap_or(&self.stem_width)
    }

    /// Blocks in order as `(stage, block, in_channels, out_channels, stride)`.
    fn blocks(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut cin = self.stem_width;
        for (s, &w) in self.widths.iter().enumerate() {
            for b in 0..self.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push((s, b, cin, w, stride));
                cin = w;
            }
        }
        out
    }

    /// Trainable parameter count:
    ///
    /// ```text
    /// stem   36·S + 2·S                                  (conv 4→S, BN)
    /// block  9·cin·w + 9·w·w + 4·w  [+ cin·w + 2·w]      (two conv/BN pairs, projection when
    ///                                                      cin ≠ w or stride 2)
    /// heads  Σ (F + 1)·K                                 (F = final width, K = 36, 18 or 10)
    /// ```
    pub fn trainable_count(&self) -> usize {
        let s = self.stem_width;
        let mut n = 36 * s + 2 * s;
        for (_, _, cin, w, stride) in self.blocks() {
            n += 9 * cin * w + 9 * w * w + 4 * w;
            if cin != w || stride != 1 {
                n += cin * w + 2 * w;
            }
        }
        let f = self.feature_width();
        n + self.heads().iter().map(|(_, k)| (f + 1) * k).sum::<usize>()
    }

    /// Non-trainable buffer count: running mean and variance per BN channel.
    pub fn buffer_count(&self) -> usize {
        let mut n = 2 * self.stem_width;
        for (_, _, cin, w, stride) in self.blocks() {
            n += 4 * w;
            if cin != w || stride != 1 {
                n += 2 * w;
            }
        }
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    RunningMean,
    RunningVar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running-stat updates are returned, not applied.
    Train,
    /// Running statistics; nothing is mutated.
    Eval,
}

/// Head outputs of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Logits {
    Dual { az: Var, el: Var },
    Single(Var),
}

impl Logits {
    pub fn vars(&self) -> Vec<Var> {
        match *self {
            Logits::Dual { az, el } => vec![az, el],
            Logits::Single(c) => vec![c],
        }
    }
}

/// Everything a caller may need after [`Network::forward`].
pub struct Forward {
    pub logits: Logits,
    /// `(layer name, post-activation output)` in network order:
    /// `"stem"`, then `"stages.{s}.blocks.{b}"`.
    pub activations: Vec<(String, Var)>,
    pub pooled: Var,
    /// Tape handle of each parameter, aligned with [`Network::params`];
    /// `None` for running statistics.
    pub param_vars: Vec<Option<Var>>,
    /// Updated running statistics keyed by BN prefix (train mode only).
    /// Carried in f64 regardless of the network type.
    pub bn_updates: Vec<(String, RunningStats<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Real = f32> {
    config: NetworkConfig,
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Network<T> {
    /// Builds a network with seeded Kaiming (fan-in) conv weights,
    /// `N(0, 1/fan_in)` head weights, zero biases and BN beta, unit BN gamma.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut conv = |params: &mut Vec<Param<T>>, name: String, shape: [usize; 4]| {
            let fan_in = shape[1] * shape[2] * shape[3];
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let data = (0..shape.iter().product())
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect();
            params.push(Param {
                name,
                kind: ParamKind::Weight,
                tensor: Tensor::from_vec(&shape, data).unwrap(),
            });
        };
        let bn = |params: &mut Vec<Param<T>>, prefix: &str, c: usize| {
            for (suffix, kind, value) in [
                ("gamma", ParamKind::Weight, 1.0),
                ("beta", ParamKind::Weight, 0.0),
                ("running_mean", ParamKind::RunningMean, 0.0),
                ("running_var", ParamKind::RunningVar, 1.0),
            ] {
                params.push(Param {
                    name: format!("{prefix}.{suffix}"),
                    kind,
                    tensor: Tensor::full(&[c], T::from_f64(value)),
                });
            }
        };

        conv(&mut params, "stem.conv.weight".into(), [config.stem_width, 4, 3, 3]);
        bn(&mut params, "stem.bn", config.stem_width);
        for (s, b, cin, w, stride) in config.blocks() {
            let p = format!("stages.{s}.blocks.{b}");
            conv(&mut params, format!("{p}.conv1.weight"), [w, cin, 3, 3]);
            bn(&mut params, &format!("{p}.bn1"), w);
            conv(&mut params, format!("{p}.conv2.weight"), [w, w, 3, 3]);
            bn(&mut params, &format!("{p}.bn2"), w);
            if cin != w || stride != 1 {
                conv(&mut params, format!("{p}.proj.conv.weight"), [w, cin, 1, 1]);
                bn(&mut params, &format!("{p}.proj.bn"), w);
            }
        }
        let f = config.feature_width();
        for (head, k) in config.heads() {
            let normal = Normal::new(0.0, (1.0 / f as f64).sqrt()).unwrap();
            let data = (0..k * f).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
            params.push(Param {
                name: format!("head.{head}.weight"),
                kind: ParamKind::Weight,
                tensor: Tensor::from_vec(&[k, f], data).unwrap(),
            });
            params.push(Param {
                name: format!("head.{head}.bias"),
                kind: ParamKind::Weight,
                tensor: Tensor::zeros(&[k]),
            });
        }
        Ok(Self::from_params(config, params))
    }

    fn from_params(config: NetworkConfig, params: Vec<Param<T>>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { config, params, index }
    }

    /// Rebuilds a network from named tensors (e.g. a checkpoint). Every
    /// expected parameter must be present with the expected shape.
    pub fn from_named(config: NetworkConfig, mut named: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let template = Network::<T>::new(config.clone())?;
        let mut params = Vec::with_capacity(template.params.len());
        for p in template.params {
            let t = named.remove(&p.name).ok_or_else(|| NetError::UnknownParam(format!("missing {}", p.name)))?;
            if t.shape() != p.tensor.shape() {
                return Err(NetError::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            params.push(Param { tensor: t, ..p });
        }
        if let Some(extra) = named.keys().next() {
            return Err(NetError::UnknownParam(extra.clone()));
        }
        Ok(Self::from_params(config, params))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.params[i].tensor)
    }

    /// Indices of the trainable parameters, in order.
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].kind == ParamKind::Weight)
            .collect()
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network::from_params(
            self.config.clone(),
            self.params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        )
    }

    /// Sum of squared trainable values per parameter, for diagnostics.
    pub fn param_norms(&self) -> Vec<(String, f64)> {
        self.trainable()
            .into_iter()
            .map(|i| (self.params[i].name.clone(), self.params[i].tensor.norm_sq().sqrt()))
            .collect()
    }

    fn running(&self, prefix: &str) -> RunningStats<T> {
        let get = |s: &str| self.param(&format!("{prefix}.{s}")).expect("bn buffer").data().to_vec();
        RunningStats {
            mean: get("running_mean"),
            var: get("running_var"),
        }
    }

    /// Writes train-mode running statistics back into the buffers.
    pub fn commit_bn(&mut self, updates: &[(String, RunningStats<f64>)]) {
        for (prefix, stats) in updates {
            for (suffix, values) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let t = self.param_mut(&format!("{prefix}.{suffix}")).expect("bn buffer");
                for (d, &v) in t.data_mut().iter_mut().zip(values) {
                    *d = T::from_f64(v);
                }
            }
        }
    }

    /// Checks `[N, 1, res, res]`.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let r = self.config.resolution;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != r || shape[3] != r || shape[0] == 0 {
            return Err(NetError::Input {
                got: shape.to_vec(),
                res: r,
            });
        }
        Ok(())
    }

    /// Records the forward pass of `input` (`[N, 1, H, W]`, already on the
    /// tape) and returns handles to its outputs. Parameters enter the tape
    /// as tracked leaves when `track_params` is set.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, mode: Mode, track_params: bool) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        let mut param_vars = vec![None; self.params.len()];
        for (i, p) in self.params.iter().enumerate() {
            if p.kind == ParamKind::Weight {
                param_vars[i] = Some(tape.leaf(p.tensor.clone().requires_grad(track_params)));
            }
        }
        let var = |name: &str| param_vars[self.index[name]].expect("trainable parameter");
        let mut ctx = Ctx {
            net: self,
            mode,
            updates: Vec::new(),
        };

        let x = focus(tape, input)?;
        let x = tape.conv2d(x, var("stem.conv.weight"), None, 1, 1)?;
        let x = ctx.bn(tape, x, "stem.bn", &var)?;
        let mut x = tape.relu(x)?;
        let mut activations = vec![("stem".to_string(), x)];
        for (s, b, cin, w, stride) in self.config.blocks() {
            let p = format!("stages.{s}.blocks.{b}");
            let h = tape.conv2d(x, var(&format!("{p}.conv1.weight")), None, stride, 1)?;
            let h = ctx.bn(tape, h, &format!("{p}.bn1"), &var)?;
            let h = tape.relu(h)?;
            let h = tape.conv2d(h, var(&format!("{p}.conv2.weight")), None, 1, 1)?;
            let h = ctx.bn(tape, h, &format!("{p}.bn2"), &var)?;
            let skip = if cin != w || stride != 1 {
                let sk = tape.conv2d(x, var(&format!("{p}.proj.conv.weight")), None, stride, 0)?;
                ctx.bn(tape, sk, &format!("{p}.proj.bn"), &var)?
            } else {
                x
            };
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum)?;
            activations.push((p, x));
        }
        let pooled = tape.global_avg_pool(x)?;
        let head = |tape: &mut Tape<T>, name: &str| -> Result<Var> {
            Ok(tape.linear(
                pooled,
                var(&format!("head.{name}.weight")),
                Some(var(&format!("head.{name}.bias"))),
            )?)
        };
        let logits = match self.config.head {
            HeadMode::Dual => Logits::Dual {
                az: head(tape, "az")?,
                el: head(tape, "el")?,
            },
            HeadMode::Single => Logits::Single(head(tape, "cls")?),
        };
        Ok(Forward {
            logits,
            activations,
            pooled,
            param_vars,
            bn_updates: ctx.updates,
        })
    }

    /// Eval-mode logits for a batch, one tensor per head.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone().requires_grad(false));
        let out = self.forward(&mut tape, x, Mode::Eval, false)?;
        Ok(out.logits.vars().into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Arg-max class per head (ties go to the lowest index). Single-head
    /// networks report `el_class` 0.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<ViewClass>> {
        let heads = self.logits(batch)?;
        let az = argmax_rows(&heads[0])?;
        let el = match heads.get(1) {
            Some(t) => argmax_rows(t)?,
            None => vec![0; az.len()],
        };
        Ok(az
            .into_iter()
            .zip(el)
            .map(|(az_class, el_class)| ViewClass { az_class, el_class })
            .collect())
    }
}

struct Ctx<'a, T: Real> {
    net: &'a Network<T>,
    mode: Mode,
    updates: Vec<(String, RunningStats<f64>)>,
}

impl<T: Real> Ctx<'_, T> {
    fn bn(&mut self, tape: &mut Tape<T>, x: Var, prefix: &str, var: &dyn Fn(&str) -> Var) -> Result<Var> {
        let cfg = &self.net.config;
        let mode = match self.mode {
            Mode::Train => BatchNormMode::Train {
                momentum: cfg.bn_momentum,
            },
            Mode::Eval => BatchNormMode::Eval,
        };
        let running = self.net.running(prefix);
        let (y, updated) = tape.batch_norm(
            x,
            var(&format!("{prefix}.gamma")),
            var(&format!("{prefix}.beta")),
            &running,
            mode,
            cfg.bn_eps,
        )?;
        if let Some(u) = updated {
            self.updates.push((
                prefix.to_string(),
                RunningStats {
                    mean: u.mean.iter().map(|v| v.to_f64()).collect(),
                    var: u.var.iter().map(|v| v.to_f64()).collect(),
                },
            ));
        }
        Ok(y)
    }
}

/// Per-parameter gradients after a backward pass, aligned with
/// [`Network::params`].
pub fn collect_grads<T: Real>(tape: &Tape<T>, fwd: &Forward) -> Vec<Option<Vec<T>>> {
    fwd.param_vars
        .iter()
        .map(|v| v.and_then(|v| tape.grad(v).map(<[T]>::to_vec)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(widths: Vec<usize>, blocks: usize) -> NetworkConfig {
        NetworkConfig {
            resolution: 16,
            stem_width: 4,
            widths,
            blocks_per_stage: blocks,
            ..NetworkConfig::default()
        }
    }

    fn input(n: usize, res: usize, seed: u64) -> Tensor<f32> {
        let data = (0..n * res * res)
            .map(|i| (((i as u64 + seed) * 2_654_435_761) % 1000) as f32 / 1000.0)
            .collect();
        Tensor::from_vec(&[n, 1, res, res], data).unwrap()
    }

    #[test]
    fn param_count_formula_matches_construction() {
        for cfg in [
            NetworkConfig::default(),
            small(vec![], 0),
            small(vec![4], 1),
            small(vec![4, 8], 2),
            NetworkConfig {
                head: HeadMode::Single,
                ..small(vec![6, 6, 12], 1)
            },
        ] {
            let net = Network::<f32>::new(cfg.clone()).unwrap();
            let trainable: usize = net.trainable().iter().map(|&i| net.params()[i].tensor.numel()).sum();
            let total: usize = net.params().iter().map(|p| p.tensor.numel()).sum();
            assert_eq!(trainable, cfg.trainable_count());
            assert_eq!(total - trainable, cfg.buffer_count());
        }
    }

    #[test]
    fn names_are_unique_and_stable() {
        let net = Network::<f32>::new(small(vec![4, 8], 2)).unwrap();
        let names: std::collections::BTreeSet<_> = net.params().iter().map(|p| &p.name).collect();
        assert_eq!(names.len(), net.params().len());
        assert_eq!(net.params()[0].name, "stem.conv.weight");
        assert_eq!(net.param("stem.conv.weight").unwrap().shape(), &[4, 4, 3, 3]);
        assert!(net.param("stages.1.blocks.0.proj.conv.weight").is_some());
        assert!(net.param("stages.0.blocks.0.proj.conv.weight").is_none());
        assert_eq!(net.param("head.az.weight").unwrap().shape(), &[36, 8]);
        assert_eq!(net.param("head.el.weight").unwrap().shape(), &[18, 8]);
        let again = Network::<f32>::new(small(vec![4, 8], 2)).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig {
            resolution: 15,
            ..small(vec![4], 1)
        }
        .validate()
        .is_err());
        // three stages need the resolution divisible by 4
        assert!(NetworkConfig {
            resolution: 18,
            ..small(vec![4, 4, 4], 1)
        }
        .validate()
        .is_err());
        assert!(small(vec![4, 0], 1).validate().is_err());
    }

    #[test]
    fn output_shapes_and_batch_consistency() {
        let net = Network::<f32>::new(small(vec![4, 8], 1)).unwrap();
        let one = input(1, 16, 3);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let two = Tensor::from_vec(&[2, 1, 16, 16], two).unwrap();
        let heads = net.logits(&two).unwrap();
        assert_eq!(heads[0].shape(), &[2, 36]);
        assert_eq!(heads[1].shape(), &[2, 18]);
        assert_eq!(heads[0].data()[..36], heads[0].data()[36..]);
        assert_eq!(heads[1].data()[..18], heads[1].data()[18..]);
        // eval is pure and repeatable
        assert_eq!(net.logits(&two).unwrap(), heads);

        let single = Network::<f32>::new(NetworkConfig {
            head: HeadMode::Single,
            ..small(vec![4], 1)
        })
        .unwrap();
        assert_eq!(single.logits(&one).unwrap()[0].shape(), &[1, 10]);
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let net = Network::<f32>::new(small(vec![4], 1)).unwrap();
        assert!(matches!(net.logits(&input(1, 32, 0)), Err(NetError::Input { .. })));
    }

    #[test]
    fn train_mode_reports_but_does_not_apply_bn_updates() {
        let net = Network::<f32>::new(small(vec![4, 8], 1)).unwrap();
        let before = net.clone();
        let mut tape = Tape::new();
        let x = tape.leaf(input(3, 16, 1));
        let fwd = net.forward(&mut tape, x, Mode::Train, true).unwrap();
        assert_eq!(net, before);
        // stem + 2 per block + one projection
        assert_eq!(fwd.bn_updates.len(), 1 + 2 + 3);
        let mut updated = net.clone();
        updated.commit_bn(&fwd.bn_updates);
        assert_ne!(updated, net);
    }

    #[test]
    fn zero_branch_block_is_relu_of_input() {
        // with both convs zeroed the branch is BN(0) = beta = 0, so the block
        // reduces to relu(skip) and the stage output equals relu(stem output)
        let mut net = Network::<f64>::new(small(vec![4], 1)).unwrap();
        for name in ["stages.0.blocks.0.conv1.weight", "stages.0.blocks.0.conv2.weight"] {
            net.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(input(2, 16, 5).cast());
        let fwd = net.forward(&mut tape, x, Mode::Eval, false).unwrap();
        let stem = tape.value(fwd.activations[0].1).clone();
        let block = tape.value(fwd.activations[1].1).clone();
        assert_eq!(stem, block);
    }

    #[test]
    fn stride_two_halves_and_projects() {
        let net = Network::<f32>::new(small(vec![4, 8], 1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(input(1, 16, 2));
        let fwd = net.forward(&mut tape, x, Mode::Eval, false).unwrap();
        let shapes: Vec<_> = fwd.activations.iter().map(|(_, v)| tape.value(*v).shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 4, 8, 8], vec![1, 4, 8, 8], vec![1, 8, 4, 4]]);
        let names: Vec<_> = fwd.activations.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["stem", "stages.0.blocks.0", "stages.1.blocks.0"]);
    }

    #[test]
    fn predict_tie_breaks_low() {
        let mut net = Network::<f32>::new(small(vec![], 0)).unwrap();
        for name in ["head.az.weight", "head.el.weight"] {
            net.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        net.param_mut("head.az.bias").unwrap().data_mut()[4] = 1.0;
        net.param_mut("head.el.bias").unwrap().data_mut()[11] = 1.0;
        assert_eq!(
            net.predict(&input(1, 16, 0)).unwrap(),
            vec![ViewClass {
                az_class: 4,
                el_class: 11
            }]
        );
        net.param_mut("head.az.bias").unwrap().data_mut()[4] = 0.0;
        assert_eq!(net.predict(&input(1, 16, 0)).unwrap()[0].az_class, 0);
    }

    #[test]
    fn named_round_trip() {
        let net = Network::<f32>::new(small(vec![4, 8], 1)).unwrap();
        let named: BTreeMap<_, _> = net.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        let back = Network::from_named(net.config().clone(), named.clone()).unwrap();
        assert_eq!(back, net);
        let mut missing = named.clone();
        missing.remove("head.el.bias");
        assert!(Network::<f32>::from_named(net.config().clone(), missing).is_err());
        let mut extra = named;
        extra.insert("bogus".into(), Tensor::zeros(&[1]));
        assert!(Network::<f32>::from_named(net.config().clone(), extra).is_err());
    }
}
