//! Central finite-difference checks of the tape's analytic gradients, in
//! `f64`.
//!
//! [`op_suite`] covers every differentiable op on randomized shapes;
//! [`network`] perturbs every trainable parameter of a small two-stage
//! network. Relative errors use `|a − n| / max(|a|, |n|, 1e-6)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{collect_grads, Forward, Logits, Mode, Network, NetworkConfig};
use crate::tensor::{BatchNormMode, RunningStats, Tape, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub label: String,
    pub checked: usize,
    /// Elements re-measured with `STEP / 10` because `STEP` straddled a
    /// ReLU kink (network check only).
    pub retried: usize,
    pub worst: f64,
    /// First element over tolerance, if any.
    pub failure: Option<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("non-empty shape")
}

/// Compares the gradient of every element of `params` against central
/// differences of the scalar built by `build`.
pub fn check<F>(label: &str, params: &[Tensor<f64>], build: F) -> Report
where
    F: Fn(&[Tensor<f64>], &mut Tape<f64>) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (loss, vars) = build(params, &mut tape);
    tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).expect("leaf gradient").to_vec()).collect();
    let eval = |p: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let (l, _) = build(p, &mut t);
        t.value(l).data()[0]
    };
    let mut report = Report {
        label: label.to_string(),
        checked: 0,
        retried: 0,
        worst: 0.0,
        failure: None,
    };
    let mut work = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + STEP;
            let up = eval(&work);
            work[pi].data_mut()[i] = orig - STEP;
            let down = eval(&work);
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(g, numeric);
            if e >= TOLERANCE && report.failure.is_none() {
                report.failure = Some(format!("input {pi} element {i}: analytic {g} vs numeric {numeric}"));
            }
            report.worst = report.worst.max(e);
            report.checked += 1;
        }
    }
    report
}

fn leaves(p: &[Tensor<f64>], tape: &mut Tape<f64>) -> Vec<Var> {
    p.iter().map(|t| tape.leaf(t.clone().requires_grad(true))).collect()
}

/// Reduces any output to a scalar through fixed weights, so each output
/// element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Var {
    let n = tape.value(y).numel();
    let flat = tape.gather(y, (0..n).collect(), &[1, n]).expect("in range");
    let w = tape.leaf(weights.clone().reshape(&[1, n]).expect("same size"));
    let z = tape.linear(flat, w, None).expect("matching width");
    tape.sum(z).expect("non-empty")
}

/// Every differentiable op on randomized shapes, each reduced through
/// [`weighted_sum`] (itself exercising `gather`, `linear` and `sum`).
pub fn op_suite(seed: u64) -> Vec<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for _ in 0..3 {
        let k = rng.random_range(1..=3);
        let (n, c, f) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(k.max(3)..=8), rng.random_range(k.max(3)..=8));
        let (stride, pad) = (rng.random_range(1..=2), rng.random_range(0..=1));
        let x = random_tensor(&mut rng, &[n, c, h, w], 1.0);
        let kernel = random_tensor(&mut rng, &[f, c, k, k], 0.5);
        let bias = random_tensor(&mut rng, &[f], 0.5);
        let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        let wout = random_tensor(&mut rng, &[n, f, oh, ow], 1.0);
        out.push(check(
            &format!("conv2d {n}x{c}x{h}x{w} k{k} s{stride} p{pad}"),
            &[x, kernel, bias],
            |p, tape| {
                let v = leaves(p, tape);
                let y = tape.conv2d(v[0], v[1], Some(v[2]), stride, pad).expect("valid conv");
                (weighted_sum(tape, y, &wout), v)
            },
        ));
    }

    let (n, c, h, w) = (3, 2, 4, 3);
    let x = random_tensor(&mut rng, &[n, c, h, w], 2.0);
    let gamma = random_tensor(&mut rng, &[c], 1.0);
    let beta = random_tensor(&mut rng, &[c], 1.0);
    let wout = random_tensor(&mut rng, &[n, c, h, w], 1.0);
    let mut stats = RunningStats::new(c);
    stats.mean = vec![0.1, -0.2];
    stats.var = vec![1.0, 1.5];
    for (name, mode) in [
        ("train", BatchNormMode::Train { momentum: 0.1 }),
        ("eval", BatchNormMode::Eval),
    ] {
        out.push(check(
            &format!("batch_norm {name}"),
            &[x.clone(), gamma.clone(), beta.clone()],
            |p, tape| {
                let v = leaves(p, tape);
                let (y, _) = tape.batch_norm(v[0], v[1], v[2], &stats, mode, 1e-5).expect("valid bn");
                (weighted_sum(tape, y, &wout), v)
            },
        ));
    }

    // relu with inputs kept away from the kink
    let mut x = random_tensor(&mut rng, &[2, 3, 4, 4], 1.0);
    for v in x.data_mut() {
        if v.abs() < 1e-2 {
            *v = 0.5f64.copysign(*v);
        }
    }
    let wout = random_tensor(&mut rng, &[2, 3, 4, 4], 1.0);
    out.push(check("relu", &[x], |p, tape| {
        let v = leaves(p, tape);
        let y = tape.relu(v[0]).expect("relu");
        (weighted_sum(tape, y, &wout), v)
    }));

    let a = random_tensor(&mut rng, &[2, 3, 3, 3], 1.0);
    let b = random_tensor(&mut rng, &[2, 3, 3, 3], 1.0);
    let wout = random_tensor(&mut rng, &[2, 3, 3, 3], 1.0);
    out.push(check("add", &[a, b], |p, tape| {
        let v = leaves(p, tape);
        let y = tape.add(v[0], v[1]).expect("same shape");
        (weighted_sum(tape, y, &wout), v)
    }));

    let x = random_tensor(&mut rng, &[2, 3, 4, 5], 1.0);
    let wout = random_tensor(&mut rng, &[2, 3], 1.0);
    out.push(check("global_avg_pool", &[x], |p, tape| {
        let v = leaves(p, tape);
        let y = tape.global_avg_pool(v[0]).expect("4-d");
        (weighted_sum(tape, y, &wout), v)
    }));

    let (n, d, k) = (3, 5, 4);
    let x = random_tensor(&mut rng, &[n, d], 1.0);
    let wt = random_tensor(&mut rng, &[k, d], 1.0);
    let bias = random_tensor(&mut rng, &[k], 1.0);
    let wout = random_tensor(&mut rng, &[n, k], 1.0);
    out.push(check("linear", &[x, wt, bias], |p, tape| {
        let v = leaves(p, tape);
        let y = tape.linear(v[0], v[1], Some(v[2])).expect("shapes");
        (weighted_sum(tape, y, &wout), v)
    }));

    let logits = random_tensor(&mut rng, &[4, 7], 3.0);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..7)).collect();
    out.push(check("softmax_cross_entropy", &[logits], |p, tape| {
        let v = leaves(p, tape);
        (tape.softmax_cross_entropy(v[0], &labels).expect("labels in range"), v)
    }));

    let x = random_tensor(&mut rng, &[2, 6], 1.0);
    let wout = random_tensor(&mut rng, &[3, 2], 1.0);
    out.push(check("gather+scale", &[x], |p, tape| {
        let v = leaves(p, tape);
        let g = tape.gather(v[0], vec![0, 3, 3, 11, 7, 0], &[3, 2]).expect("in range");
        let s = tape.scale(g, -1.7).expect("scale");
        (weighted_sum(tape, s, &wout), v)
    }));

    out
}

/// The network used by [`network`]: two stages with a projected stride-2
/// block, at 32×32.
pub fn network_config() -> NetworkConfig {
    NetworkConfig {
        resolution: 32,
        stem_width: 4,
        widths: vec![4, 8],
        blocks_per_stage: 1,
        seed: 21,
        ..NetworkConfig::default()
    }
}

fn network_loss(net: &Network<f64>, x: &Tensor<f64>, targets: &[Vec<usize>]) -> (Tape<f64>, Forward, Var) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().requires_grad(true));
    let fwd = net.forward(&mut tape, xv, Mode::Train, true).expect("valid input");
    let heads = match fwd.logits {
        Logits::Dual { az, el } => vec![az, el],
        Logits::Single(v) => vec![v],
    };
    let mut total = None;
    for (v, t) in heads.into_iter().zip(targets) {
        let ce = tape.softmax_cross_entropy(v, t).expect("labels in range");
        total = Some(match total {
            Some(acc) => tape.add(acc, ce).expect("scalars"),
            None => ce,
        });
    }
    let l = total.expect("at least one head");
    (tape, fwd, l)
}

/// Every trainable parameter of a network built from `cfg`, under the
/// summed cross-entropy of both heads with train-mode batch norm.
///
/// A perturbation that carries a pre-activation across a ReLU kink makes
/// the `STEP` difference meaningless for that element; such elements are
/// re-measured at `STEP / 10` and counted in `retried`.
pub fn network(cfg: NetworkConfig, batch: usize, seed: u64) -> Report {
    let net = match Network::<f32>::new(cfg) {
        Ok(n) => n.cast::<f64>(),
        Err(e) => {
            return Report {
                label: "network".into(),
                checked: 0,
                retried: 0,
                worst: f64::INFINITY,
                failure: Some(e.to_string()),
            }
        }
    };
    let res = net.config().resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[batch, 1, res, res], 1.0);
    let targets: Vec<Vec<usize>> = net
        .config()
        .heads()
        .iter()
        .map(|&(_, k)| (0..batch).map(|_| rng.random_range(0..k)).collect())
        .collect();

    let (mut tape, fwd, l) = network_loss(&net, &x, &targets);
    tape.backward(l).expect("scalar loss");
    let analytic = collect_grads(&tape, &fwd);
    let eval = |n: &Network<f64>| {
        let (tape, _, l) = network_loss(n, &x, &targets);
        tape.value(l).data()[0]
    };
    let mut report = Report {
        label: "network".into(),
        checked: 0,
        retried: 0,
        worst: 0.0,
        failure: None,
    };
    let mut work = net.clone();
    for (pi, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for (i, &g) in grad.iter().enumerate() {
            let mut central = |h: f64| {
                let orig = work.params()[pi].tensor.data()[i];
                work.params_mut()[pi].tensor.data_mut()[i] = orig + h;
                let up = eval(&work);
                work.params_mut()[pi].tensor.data_mut()[i] = orig - h;
                let down = eval(&work);
                work.params_mut()[pi].tensor.data_mut()[i] = orig;
                (up - down) / (2.0 * h)
            };
            let mut numeric = central(STEP);
            if rel_err(g, numeric) >= TOLERANCE {
                report.retried += 1;
                numeric = central(STEP / 10.0);
            }
            let e = rel_err(g, numeric);
            if e >= TOLERANCE && report.failure.is_none() {
                report.failure = Some(format!(
                    "{} element {i}: analytic {g} vs numeric {numeric}",
                    work.params()[pi].name
                ));
            }
            report.worst = report.worst.max(e);
            report.checked += 1;
        }
    }
    if report.failure.is_none() && report.retried * 100 > report.checked {
        report.failure = Some(format!("{} kink retries out of {}", report.retried, report.checked));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // d/dx sum(scale(x)) is the scale; a loss that rebuilds with a
        // different scale than the tape saw cannot pass
        let x = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let calls = std::cell::Cell::new(0);
        let r = check("rigged", &[x], |p, tape| {
            calls.set(calls.get() + 1);
            let v = leaves(p, tape);
            let s = if calls.get() == 1 { 2.0 } else { 3.0 };
            let y = tape.scale(v[0], s).unwrap();
            (tape.sum(y).unwrap(), v)
        });
        assert!(!r.passed());
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn op_suite_passes() {
        for r in op_suite(3) {
            assert!(r.passed(), "{}: {:?}", r.label, r.failure);
            assert!(r.checked > 0);
        }
    }
}
