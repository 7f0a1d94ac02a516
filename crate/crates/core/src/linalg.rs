//! Small dense linear-algebra helpers: symmetric eigendecomposition via
//! cyclic Jacobi rotations and 3x3 inverses. Sized for the 3x3 and 9x9
//! normal matrices this crate produces; not a general-purpose solver.

use ndarray::Array2;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of an orthogonal matrix.
pub(crate) fn jacobi_eigen_sym(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "matrix must be square");
    let mut a = matrix.clone();
    let mut v: Array2<f64> = Array2::eye(n);

    let off_norm = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[[p, q]] * a[[p, q]];
            }
        }
        s.sqrt()
    };

    let scale: f64 = matrix
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    for _sweep in 0..100 {
        if off_norm(&a) <= 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // tan of the rotation angle, smaller root for stability
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[[row, i]];
        }
    }
    (values, vectors)
}

/// Solve the symmetric positive-definite 3x3 system `N x = b` through the
/// eigendecomposition, reporting the spectral condition number.
pub(crate) fn solve_sym3(n: &[[f64; 3]; 3], b: &[f64; 3]) -> ([f64; 3], f64) {
    let mut m = Array2::zeros((3, 3));
    for i in 0..3 {
        for j in 0..3 {
            m[[i, j]] = n[i][j];
        }
    }
    let (vals, vecs) = jacobi_eigen_sym(&m);
    let lambda_min = vals[0].abs();
    let lambda_max = vals[2].abs().max(1e-300);
    let cond = if lambda_min <= 0.0 {
        f64::INFINITY
    } else {
        lambda_max / lambda_min
    };
    // x = V diag(1/lambda) V^T b
    let mut x = [0.0; 3];
    for k in 0..3 {
        if vals[k].abs() < 1e-300 {
            continue;
        }
        let mut proj = 0.0;
        for i in 0..3 {
            proj += vecs[[i, k]] * b[i];
        }
        let coeff = proj / vals[k];
        for i in 0..3 {
            x[i] += coeff * vecs[[i, k]];
        }
    }
    (x, cond)
}

/// Inverse of a 3x3 matrix by the adjugate, or `None` when singular.
pub(crate) fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale: f64 = m
        .iter()
        .flatten()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    if det.abs() < 1e-14 * scale * scale * scale {
        return None;
    }
    let inv_det = 1.0 / det;
    let cof =
        |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    Some([
        [
            cof(1, 1, 2, 2) * inv_det,
            -cof(0, 1, 2, 2) * inv_det,
            cof(0, 1, 1, 2) * inv_det,
        ],
        [
            -cof(1, 0, 2, 2) * inv_det,
            cof(0, 0, 2, 2) * inv_det,
            -cof(0, 0, 1, 2) * inv_det,
        ],
        [
            cof(1, 0, 2, 1) * inv_det,
            -cof(0, 0, 2, 1) * inv_det,
            cof(0, 0, 1, 1) * inv_det,
        ],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Symmetric matrix with eigenvalues 1, 2, 4
        let q = [
            [2.0f64 / 3.0, -2.0 / 3.0, 1.0 / 3.0],
            [2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0],
            [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0],
        ];
        let d = [1.0, 2.0, 4.0];
        let mut m = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += q[i][k] * d[k] * q[j][k];
                }
                m[[i, j]] = s;
            }
        }
        let (vals, vecs) = jacobi_eigen_sym(&m);
        for (got, want) in vals.iter().zip([1.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12, "eigenvalue {got} vs {want}");
        }
        // vectors orthonormal
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| vecs[[k, i]] * vecs[[k, j]]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solve_sym3_matches_direct_solution() {
        let n = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let x_true = [1.0, -2.0, 3.0];
        let mut b = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += n[i][j] * x_true[j];
            }
        }
        let (x, cond) = solve_sym3(&n, &b);
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12, "x[{i}] = {}", x[i]);
        }
        assert!(cond < 10.0);
    }

    #[test]
    fn invert3_round_trips() {
        let m = [[1.0, 2.0, 3.0], [0.0, 1.0, 4.0], [5.0, 6.0, 0.0]];
        let inv = invert3(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += m[i][k] * inv[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12);
            }
        }
        assert!(invert3(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]]).is_none());
    }

    #[test]
    fn jacobi_smallest_eigenvector_of_9x9() {
        // rank-8 matrix: A^T A for A with a known null direction
        let mut m = arr2(&[[0.0f64; 9]; 9]);
        // build from 8 random-ish rows orthogonal to the all-ones direction
        let rows: Vec<[f64; 9]> = (0..8)
            .map(|r| {
                let mut row = [0.0; 9];
                for (c, val) in row.iter_mut().enumerate() {
                    *val = ((r * 9 + c) as f64 * 0.37).sin();
                }
                let mean: f64 = row.iter().sum::<f64>() / 9.0;
                row.iter_mut().for_each(|v| *v -= mean);
                row
            })
            .collect();
        for row in &rows {
            for i in 0..9 {
                for j in 0..9 {
                    m[[i, j]] += row[i] * row[j];
                }
            }
        }
        let (vals, vecs) = jacobi_eigen_sym(&m);
        assert!(vals[0].abs() < 1e-10, "null eigenvalue {}", vals[0]);
        // the smallest eigenvector must lie in the null space of every row
        for (r, row) in rows.iter().enumerate() {
            let dot: f64 = (0..9).map(|i| row[i] * vecs[[i, 0]]).sum();
            assert!(dot.abs() < 1e-8, "row {r} dot null vector = {dot}");
        }
        // and be orthonormal
        let norm: f64 = (0..9).map(|i| vecs[[i, 0]] * vecs[[i, 0]]).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
