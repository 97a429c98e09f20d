use super::{Real, Result, Tensor, TensorError};

/// One SGD-with-momentum update on a flat parameter buffer:
/// `v ← momentum·v + grad; p ← p − lr·v`.
pub fn sgd_step<T: Real>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T) {
    debug_assert!(param.len() == grad.len() && grad.len() == velocity.len());
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Momentum SGD over an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T = f32> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    /// `lr = 0` is accepted and leaves parameters untouched.
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(TensorError::Invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::Invalid(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<T>>) {
        self.velocity = velocity;
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; a `None`
    /// gradient counts as zero (velocity still decays).
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&[T]>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::Invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(TensorError::Invalid("optimizer state does not match parameters".into()));
        }
        let (lr, mom) = (T::from_f64(self.lr), T::from_f64(self.momentum));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if v.len() != p.numel() || g.is_some_and(|g| g.len() != p.numel()) {
                return Err(TensorError::Shape {
                    op: "sgd_step",
                    detail: format!("parameter of {} values", p.numel()),
                });
            }
            match g {
                Some(g) => sgd_step(p.data_mut(), g, v, lr, mom),
                None => {
                    let zeros = vec![T::ZERO; v.len()];
                    sgd_step(p.data_mut(), &zeros, v, lr, mom);
                }
            }
            if p.data().iter().any(|x| !x.is_finite()) {
                return Err(TensorError::NonFinite { op: "sgd_step" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let (mut p, mut v) = ([1.0f64], [0.0f64]);
        sgd_step(&mut p, &[2.0], &mut v, 0.1, 0.0);
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_velocity_is_noop() {
        let (mut p, mut v) = ([1.25f32, -3.0], [0.0f32; 2]);
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.5, 0.9);
        assert_eq!(p, [1.25, -3.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(p) = p², grad = 2p. The pair (p, v) evolves linearly:
        // [p; v] ← [[0.8, −0.09], [2, 0.9]]·[p; v], spectral radius √0.9.
        let run = |steps: usize| {
            let (mut p, mut v) = ([1.0f64], [0.0f64]);
            for _ in 0..steps {
                let g = [2.0 * p[0]];
                sgd_step(&mut p, &g, &mut v, 0.1, 0.9);
            }
            p[0]
        };
        // oracle: the same map applied as a matrix power by repeated squaring
        let closed_form = |steps: usize| {
            let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
                let mut c = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                    }
                }
                c
            };
            let (mut acc, mut base, mut e) = ([[1.0, 0.0], [0.0, 1.0]], [[0.8, -0.09], [2.0, 0.9]], steps);
            while e > 0 {
                if e & 1 == 1 {
                    acc = mul(acc, base);
                }
                base = mul(base, base);
                e >>= 1;
            }
            acc[0][0]
        };
        for steps in [100, 200] {
            let (p, q) = (run(steps), closed_form(steps));
            assert!((p - q).abs() <= 1e-12 * q.abs().max(1e-12), "{p} vs {q}");
        }
        // |p| after 100 steps is ≈ 2.85e-3 (0.949^100 envelope); 200 steps reach 1e-4
        assert!(run(100).abs() < 3e-3);
        assert!(run(200).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::<f32>::new(-0.1, 0.0).is_err());
        assert!(Sgd::<f32>::new(0.1, 1.0).is_err());
        assert!(Sgd::<f32>::new(0.0, 0.9).is_ok());
    }
}
