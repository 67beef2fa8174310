//! Weight initialisation.

use rand::Rng;
use rand_distr::StandardNormal;

/// Orthogonal `[rows, cols]` matrix scaled by `gain`: rows are orthonormal when
/// `rows <= cols`, columns otherwise.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Orthonormalise the shorter dimension's vectors with modified Gram-Schmidt.
    let (n_vec, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = (0..n_vec)
        .map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n_vec {
        for j in 0..i {
            let (head, tail) = vecs.split_at_mut(i);
            let d: f64 = head[j].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= d * y;
            }
        }
        let norm = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows <= cols {
                    vecs[r][c]
                } else {
                    vecs[c][r]
                };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram(m: &[f64], rows: usize, cols: usize, by_rows: bool) -> Vec<f64> {
        let n = if by_rows { rows } else { cols };
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = if by_rows {
                    (0..cols).map(|k| m[i * cols + k] * m[j * cols + k]).sum()
                } else {
                    (0..rows).map(|k| m[k * cols + i] * m[k * cols + j]).sum()
                };
            }
        }
        g
    }

    #[test]
    fn wide_and_tall_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(r, c, by_rows) in &[(4usize, 9usize, true), (9, 4, false), (6, 6, true)] {
            let m = orthogonal(r, c, 1.0, &mut rng);
            let g = gram(&m, r, c, by_rows);
            let n = if by_rows { r } else { c };
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g[i * n + j] - want).abs() < 1e-10);
                }
            }
        }
    }
}
