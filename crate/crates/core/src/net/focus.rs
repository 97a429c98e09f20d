//! Space-to-depth rearrangement in front of the stem convolution.
//!
//! Each 2×2 cell of the input moves into the channel dimension. For a
//! `[N, C, H, W]` input the output is `[N, 4C, H/2, W/2]`, with output
//! channel `k·C + c` holding cell position `k` of input channel `c`, where
//! `k` runs top-left, top-right, bottom-left, bottom-right.

use crate::tensor::{Real, Result, Tape, Tensor, TensorError, Var};

fn check(shape: &[usize]) -> Result<[usize; 4]> {
    let [n, c, h, w]: [usize; 4] = shape.try_into().map_err(|_| TensorError::Shape {
        op: "focus",
        detail: format!("expected [N, C, H, W], got {shape:?}"),
    })?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Shape {
            op: "focus",
            detail: format!("spatial dims {h}x{w} must be even"),
        });
    }
    Ok([n, c, h, w])
}

/// Flat source index for every output element, in output order.
pub fn focus_index(shape: &[usize]) -> Result<(Vec<usize>, [usize; 4])> {
    let [n, c, h, w] = check(shape)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        for k in 0..4 {
            let (dy, dx) = (k / 2, k % 2);
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        index.push(((s * c + ch) * h + 2 * i + dy) * w + 2 * j + dx);
                    }
                }
            }
        }
    }
    Ok((index, [n, 4 * c, oh, ow]))
}

/// Differentiable focus on the tape.
pub fn focus<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (index, out) = focus_index(tape.value(x).shape())?;
    tape.gather(x, index, &out)
}

/// Focus applied to a plain tensor.
pub fn focus_tensor<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (index, out) = focus_index(x.shape())?;
    let data = index.iter().map(|&i| x.data()[i]).collect();
    Tensor::from_vec(&out, data)
}

/// Inverse of [`focus_tensor`].
pub fn unfocus_tensor<T: Real>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c4, oh, ow]: [usize; 4] = y.shape().try_into().map_err(|_| TensorError::Shape {
        op: "unfocus",
        detail: format!("expected [N, 4C, H, W], got {:?}", y.shape()),
    })?;
    if c4 % 4 != 0 {
        return Err(TensorError::Shape {
            op: "unfocus",
            detail: format!("{c4} channels is not a multiple of 4"),
        });
    }
    let in_shape = [n, c4 / 4, 2 * oh, 2 * ow];
    let (index, _) = focus_index(&in_shape)?;
    let mut data = vec![T::ZERO; y.numel()];
    for (o, &i) in index.iter().enumerate() {
        data[i] = y.data()[o];
    }
    Tensor::from_vec(&in_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_layout() {
        let x = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let y = focus_tensor(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 2, 2]);
        assert_eq!(
            y.data(),
            &[0., 2., 8., 10., 1., 3., 9., 11., 4., 6., 12., 14., 5., 7., 13., 15.]
        );
        assert_eq!(y.sum(), x.sum());
        assert_eq!(unfocus_tensor(&y).unwrap(), x);
    }

    #[test]
    fn odd_dims_are_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 5, 4]);
        assert!(focus_tensor(&x).is_err());
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        assert!(focus(&mut tape, v).is_err());
    }

    #[test]
    fn tape_version_matches_plain_version() {
        let x = Tensor::from_vec(&[2, 3, 4, 6], (0..144).map(|v| v as f64 * 0.5).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = focus(&mut tape, v).unwrap();
        assert_eq!(tape.value(y), &focus_tensor(&x).unwrap());
    }

    proptest! {
        #[test]
        fn focus_is_a_bijection(
            n in 1usize..3, c in 1usize..3, h in 1usize..5, w in 1usize..5, seed in any::<u64>()
        ) {
            let (h, w) = (2 * h, 2 * w);
            let data: Vec<f32> = (0..n * c * h * w)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32)
                .collect();
            let x = Tensor::from_vec(&[n, c, h, w], data).unwrap();
            let y = focus_tensor(&x).unwrap();
            prop_assert_eq!(unfocus_tensor(&y).unwrap(), x);
        }
    }
}
