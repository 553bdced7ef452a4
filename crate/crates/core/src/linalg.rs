//! Small dense symmetric eigensolver (cyclic Jacobi).
//!
//! Only used at desk scale: exact operator norms for dense operators and
//! spectrum validation of linear denoisers. Not meant for large n.

/// Eigendecomposition of a symmetric n x n matrix (row-major).
///
/// Returns eigenvalues in ascending order with matching orthonormal
/// eigenvectors. Panics if the input is not square of size n.
pub(crate) fn sym_eigen(n: usize, matrix: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = matrix.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-300);

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p * n + q].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let val = a[j * n + j];
            let vec: Vec<f64> = (0..n).map(|i| v[i * n + j]).collect();
            (val, vec)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = pairs.into_iter().map(|p| p.1).collect();
    (values, vectors)
}

/// Largest singular value of an out x in dense matrix (row-major), via
/// Jacobi on A^T A. Exact to machine precision at desk scale.
pub(crate) fn spectral_norm(rows: usize, cols: usize, matrix: &[f64]) -> f64 {
    assert_eq!(matrix.len(), rows * cols);
    let mut ata = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in i..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += matrix[r * cols + i] * matrix[r * cols + j];
            }
            ata[i * cols + j] = s;
            ata[j * cols + i] = s;
        }
    }
    let (evals, _) = sym_eigen(cols, &ata);
    evals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}
