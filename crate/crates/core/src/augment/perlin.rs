//! Classic gradient-lattice Perlin noise.

use rand::seq::SliceRandom;
use rand::Rng;

/// A seeded 2-D Perlin noise source.
#[derive(Clone, Debug)]
pub struct Perlin {
    perm: [u8; 512],
}

const GRADIENTS: [[f64; 2]; 8] = [
    [1.0, 0.0],
    [-1.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
    [-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
];

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Perlin {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(rng);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn grad(&self, ix: i64, iy: i64, dx: f64, dy: f64) -> f64 {
        let h = self.perm[self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize];
        let g = GRADIENTS[(h & 7) as usize];
        g[0] * dx + g[1] * dy
    }

    /// Noise value at `(x, y)`; exactly 0 on integer lattice points.
    pub fn noise(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let (dx, dy) = (x - fx, y - fy);
        let (u, v) = (fade(dx), fade(dy));
        let n00 = self.grad(ix, iy, dx, dy);
        let n10 = self.grad(ix + 1, iy, dx - 1.0, dy);
        let n01 = self.grad(ix, iy + 1, dx, dy - 1.0);
        let n11 = self.grad(ix + 1, iy + 1, dx - 1.0, dy - 1.0);
        lerp(lerp(n00, n10, u), lerp(n01, n11, u), v)
    }

    /// Fractal sum over `octaves`, doubling frequency and halving amplitude
    /// each octave. `frequency` is in cycles per frame width.
    pub fn fbm(&self, x: f64, y: f64, octaves: usize, frequency: f64) -> f64 {
        let (mut f, mut a, mut sum) = (frequency, 1.0, 0.0);
        for _ in 0..octaves {
            sum += a * self.noise(x * f, y * f);
            f *= 2.0;
            a *= 0.5;
        }
        sum
    }
}

/// A `width × height` fractal field min-max mapped onto `[0, 255]`.
/// A constant field maps to mid-gray.
pub fn perlin_field<R: Rng + ?Sized>(width: usize, height: usize, octaves: usize, frequency: f64, rng: &mut R) -> Vec<u8> {
    let p = Perlin::new(rng);
    let scale = 1.0 / width.max(height) as f64;
    let raw: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5);
            p.fbm(x * scale, y * scale, octaves, frequency)
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return vec![128; raw.len()];
    }
    raw.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}
