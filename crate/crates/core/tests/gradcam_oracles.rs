//! Grad-CAM against a hand-rolled single-layer oracle, and the linearity of
//! the channel weights in the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsp_core::gradcam::{gradcam, upsample_bilinear, ExplainTarget};
use vsp_core::net::{Network, NetworkConfig};
use vsp_core::tensor::{Real, Tensor};

const RES: usize = 12;

fn toy() -> Network<f64> {
    let mut net = Network::<f64>::new(NetworkConfig {
        resolution: RES,
        stem_width: 5,
        widths: vec![],
        blocks_per_stage: 0,
        seed: 17,
        ..NetworkConfig::default()
    })
    .unwrap();
    // non-trivial running statistics and affine terms
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, lo, hi) in [
        ("stem.bn.running_mean", -0.3, 0.3),
        ("stem.bn.running_var", 0.5, 2.0),
        ("stem.bn.gamma", 0.5, 1.5),
        ("stem.bn.beta", -0.2, 0.2),
    ] {
        for v in net.param_mut(name).unwrap().data_mut() {
            *v = rng.random_range(lo..hi);
        }
    }
    net
}

fn input(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[1, RES, RES], (0..RES * RES).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Stem activations computed directly: 2×2 space-to-depth, 3×3 conv with
/// zero padding, eval-mode batch norm, ReLU.
fn oracle_activations(net: &Network<f64>, x: &Tensor<f64>) -> (Vec<Vec<f64>>, usize) {
    let h = RES / 2;
    let px = |c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= h as isize {
            return 0.0;
        }
        let (dy, dx) = (c / 2, c % 2);
        x.data()[(2 * i as usize + dy) * RES + 2 * j as usize + dx]
    };
    let k = net.param("stem.conv.weight").unwrap();
    let p = |n: &str| net.param(&format!("stem.bn.{n}")).unwrap().data().to_vec();
    let (mean, var, gamma, beta) = (p("running_mean"), p("running_var"), p("gamma"), p("beta"));
    let eps = net.config().bn_eps;
    let channels = k.shape()[0];
    let mut out = vec![vec![0.0; h * h]; channels];
    for (o, plane) in out.iter_mut().enumerate() {
        for i in 0..h {
            for j in 0..h {
                let mut s = 0.0;
                for c in 0..4 {
                    for u in 0..3 {
                        for v in 0..3 {
                            let w = k.data()[((o * 4 + c) * 3 + u) * 3 + v];
                            s += w * px(c, i as isize + u as isize - 1, j as isize + v as isize - 1);
                        }
                    }
                }
                let bn = gamma[o] * (s - mean[o]) / (var[o] + eps).sqrt() + beta[o];
                plane[i * h + j] = bn.max(0.0);
            }
        }
    }
    (out, h)
}

#[test]
fn single_layer_map_matches_hand_oracle() {
    let net = toy();
    for (seed, class) in [(1, 0), (2, 13), (3, 35)] {
        let x = input(seed);
        let map = gradcam(&net, &x, ExplainTarget::AzimuthOnly(class), Some("stem")).unwrap();
        let (acts, h) = oracle_activations(&net, &x);
        // logit = Σ_k W[class, k]·mean(A_k) + b  ⇒  α_k = W[class, k]
        // divided by the number of positions
        let w = net.param("head.az.weight").unwrap();
        let c = acts.len();
        let alphas: Vec<f64> = (0..c).map(|k| w.data()[class * c + k] / (h * h) as f64).collect();
        let mut coarse = vec![0.0; h * h];
        for k in 0..c {
            for (m, a) in coarse.iter_mut().zip(&acts[k]) {
                *m += alphas[k] * a;
            }
        }
        coarse.iter_mut().for_each(|v| *v = v.max(0.0));
        for (a, b) in map.alphas.iter().zip(&alphas) {
            assert!((a - b).abs() < 1e-9, "alpha {a} vs {b}");
        }
        for (a, b) in map.coarse.iter().zip(&coarse) {
            assert!((a - b).abs() < 1e-6, "map {a} vs {b}");
        }
        let up = upsample_bilinear(&coarse, (h, h), (RES, RES));
        let max = up.iter().copied().fold(0.0, f64::max);
        assert!(max > 0.0, "degenerate oracle case");
        for (a, b) in map.values.iter().zip(&up) {
            assert!((a - b / max).abs() < 1e-6);
        }
    }
}

fn alpha_linearity<T: Real>(net: &Network<T>, x: &Tensor<T>, az: usize, el: usize) -> f64 {
    let both = gradcam(net, x, ExplainTarget::BothHeads { az_class: az, el_class: el }, None).unwrap();
    let a = gradcam(net, x, ExplainTarget::AzimuthOnly(az), None).unwrap();
    let e = gradcam(net, x, ExplainTarget::ElevationOnly(el), None).unwrap();
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for i in 0..both.alphas.len() {
        diff = diff.max((both.alphas[i] - (a.alphas[i] + e.alphas[i])).abs());
        norm = norm.max(both.alphas[i].abs());
    }
    diff / norm
}

#[test]
fn channel_weights_are_linear_in_the_objective() {
    let cfg = NetworkConfig {
        resolution: 32,
        stem_width: 8,
        widths: vec![8, 16],
        blocks_per_stage: 1,
        seed: 9,
        ..NetworkConfig::default()
    };
    let net32 = Network::<f32>::new(cfg).unwrap();
    let net64 = net32.cast::<f64>();
    let x64 = Tensor::from_vec(
        &[1, 32, 32],
        (0..1024).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect(),
    )
    .unwrap();
    let x32 = x64.cast::<f32>();
    for (az, el) in [(0, 0), (17, 9), (35, 17)] {
        let e64 = alpha_linearity(&net64, &x64, az, el);
        let e32 = alpha_linearity(&net32, &x32, az, el);
        assert!(e64 < 1e-12, "f64 rel err {e64}");
        assert!(e32 < 1e-5, "f32 rel err {e32}");
    }
}
