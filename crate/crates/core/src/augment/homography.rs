//! Planar homographies from four point correspondences.

/// Row-major 3×3 matrix acting on homogeneous `(x, y, 1)`.
pub type Mat3 = [f64; 9];

pub const IDENTITY: Mat3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// The homography with `h[8] = 1` mapping each `src[i]` onto `dst[i]`, or
/// `None` when the correspondences are degenerate.
pub fn from_corners(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Option<Mat3> {
    // two rows per correspondence in the unknowns h0..h7
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let ([x, y], [u, v]) = (src[i], dst[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve8(a)?;
    Some([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

/// Gauss-Jordan elimination with partial pivoting on an augmented 8×9 system.
fn solve8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for k in col..9 {
            a[col][k] /= p;
        }
        for row in 0..8 {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for i in 0..8 {
        x[i] = a[i][8];
    }
    Some(x)
}

pub fn apply(h: &Mat3, p: [f64; 2]) -> [f64; 2] {
    let w = h[6] * p[0] + h[7] * p[1] + h[8];
    [
        (h[0] * p[0] + h[1] * p[1] + h[2]) / w,
        (h[3] * p[0] + h[4] * p[1] + h[5]) / w,
    ]
}

pub fn invert(m: &Mat3) -> Option<Mat3> {
    let c = [
        m[4] * m[8] - m[5] * m[7],
        m[5] * m[6] - m[3] * m[8],
        m[3] * m[7] - m[4] * m[6],
    ];
    let det = m[0] * c[0] + m[1] * c[1] + m[2] * c[2];
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = [
        c[0],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        c[1],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        c[2],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ];
    Some(inv.map(|v| v / det))
}

/// True when the quadrilateral (in order) is strictly convex.
pub fn is_convex(q: &[[f64; 2]; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        let z = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if z.abs() < 1e-9 || (sign != 0.0 && z.signum() != sign) {
            return false;
        }
        sign = z.signum();
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [64.0, 0.0], [64.0, 64.0], [0.0, 64.0]];

    #[test]
    fn identical_corners_give_identity() {
        let h = from_corners(&SQUARE, &SQUARE).unwrap();
        for (a, b) in h.iter().zip(IDENTITY.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maps_all_four_corners() {
        let dst = [[5.0, 3.0], [60.0, -2.0], [66.0, 61.0], [-1.0, 63.5]];
        let h = from_corners(&SQUARE, &dst).unwrap();
        for i in 0..4 {
            let p = apply(&h, SQUARE[i]);
            assert!((p[0] - dst[i][0]).abs() < 1e-9 && (p[1] - dst[i][1]).abs() < 1e-9);
        }
        let inv = invert(&h).unwrap();
        let q = apply(&inv, apply(&h, [17.0, 41.0]));
        assert!((q[0] - 17.0).abs() < 1e-9 && (q[1] - 41.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let dst = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(from_corners(&SQUARE, &dst).is_none());
    }

    #[test]
    fn convexity() {
        assert!(is_convex(&SQUARE));
        let bow_tie = [[0.0, 0.0], [64.0, 64.0], [64.0, 0.0], [0.0, 64.0]];
        assert!(!is_convex(&bow_tie));
        let dart = [[0.0, 0.0], [64.0, 0.0], [20.0, 20.0], [0.0, 64.0]];
        assert!(!is_convex(&dart));
    }
}
