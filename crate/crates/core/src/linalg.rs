//! Minimal dense linear algebra on tiny matrices: rank, least-norm solves and
//! random orthogonal matrices. Dimensions here never exceed the coordinate
//! count of a step-3 group, so simple Gaussian elimination is enough.

use rand::Rng;

use crate::scalar::Real;

/// Rank of a small row-major matrix by Gaussian elimination with partial
/// pivoting. Destroys `rows`.
pub fn rank<S: Real>(rows: &mut [Vec<S>], tol: S) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut r = 0usize;
    for col in 0..ncols {
        if r == rows.len() {
            break;
        }
        let pivot = (r..rows.len())
            .max_by(|&a, &b| {
                rows[a][col]
                    .abs()
                    .partial_cmp(&rows[b][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if rows[pivot][col].abs() <= tol {
            continue;
        }
        rows.swap(r, pivot);
        for i in (r + 1)..rows.len() {
            let f = rows[i][col] / rows[r][col];
            if f != S::zero() {
                for c in col..ncols {
                    let v = rows[r][c];
                    rows[i][c] = rows[i][c] - f * v;
                }
            }
        }
        r += 1;
    }
    r
}

/// Minimum-norm least-squares solution of `A q = b` for a small, possibly
/// wide system, via normal equations on the row space: `q = Aᵀ (A Aᵀ)⁻¹ b`.
/// Returns `None` when `A Aᵀ` is numerically singular (rows dependent).
pub fn least_norm_solve<S: Real>(a: &[Vec<S>], b: &[S]) -> Option<Vec<S>> {
    let m = a.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let n = a[0].len();
    // Gram matrix G = A Aᵀ (m x m), augmented with b.
    let mut g = vec![vec![S::zero(); m + 1]; m];
    for r in 0..m {
        for s in 0..m {
            let mut dot = S::zero();
            for c in 0..n {
                dot += a[r][c] * a[s][c];
            }
            g[r][s] = dot;
        }
        g[r][m] = b[r];
    }
    let y = solve_square(&mut g)?;
    let mut q = vec![S::zero(); n];
    for r in 0..m {
        for c in 0..n {
            q[c] += a[r][c] * y[r];
        }
    }
    Some(q)
}

/// Solves the square augmented system in place (rows of length m+1).
fn solve_square<S: Real>(aug: &mut [Vec<S>]) -> Option<Vec<S>> {
    let m = aug.len();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&a, &b| {
                aug[a][col]
                    .abs()
                    .partial_cmp(&aug[b][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        let scale: S = aug
            .iter()
            .map(|row| row[col].abs())
            .fold(S::zero(), S::max);
        if aug[pivot][col].abs() <= S::of(1e-12) * scale.max(S::one()) {
            return None;
        }
        aug.swap(col, pivot);
        for i in 0..m {
            if i == col {
                continue;
            }
            let f = aug[i][col] / aug[col][col];
            if f != S::zero() {
                for c in col..=m {
                    let v = aug[col][c];
                    aug[i][c] = aug[i][c] - f * v;
                }
            }
        }
    }
    Some((0..m).map(|r| aug[r][m] / aug[r][r]).collect())
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns; both
/// determinant signs occur. Test helper for rotation-invariance checks.
#[cfg(test)]
pub fn random_orthogonal<S: Real, R: Rng>(dim: usize, rng: &mut R) -> Vec<Vec<S>> {
    loop {
        let mut cols: Vec<Vec<S>> = (0..dim)
            .map(|_| (0..dim).map(|_| gaussian(rng)).collect())
            .collect();
        let mut ok = true;
        for i in 0..dim {
            for j in 0..i {
                let mut dot = S::zero();
                for t in 0..dim {
                    dot += cols[i][t] * cols[j][t];
                }
                for t in 0..dim {
                    let v = cols[j][t];
                    cols[i][t] = cols[i][t] - dot * v;
                }
            }
            let norm = cols[i]
                .iter()
                .fold(S::zero(), |acc, &v| acc + v * v)
                .sqrt();
            if norm < S::of(1e-6) {
                ok = false;
                break;
            }
            for t in 0..dim {
                cols[i][t] = cols[i][t] / norm;
            }
        }
        if ok {
            return cols;
        }
    }
}

/// Standard normal via Box-Muller; avoids pulling a distributions crate in
/// for one helper.
pub fn gaussian<S: Real, R: Rng>(rng: &mut R) -> S {
    let u1: S = S::of(rng.random::<f64>().max(f64::MIN_POSITIVE));
    let u2: S = S::of(rng.random::<f64>());
    let two_pi = S::of(std::f64::consts::TAU);
    (-(S::one() + S::one()) * u1.ln()).sqrt() * (two_pi * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_counts_independent_rows() {
        let mut rows = vec![
            vec![1.0, 0.0, 2.0],
            vec![2.0, 0.0, 4.0],
            vec![0.0, 1.0, 1.0],
        ];
        assert_eq!(rank(&mut rows, 1e-10), 2);
    }

    #[test]
    fn least_norm_recovers_consistent_system() {
        // 1x3 wide system: q with minimal norm satisfying 2q0 - q2 = 3.
        let a = vec![vec![2.0f64, 0.0, -1.0]];
        let q: Vec<f64> = least_norm_solve(&a, &[3.0]).unwrap();
        assert!((2.0 * q[0] - q[2] - 3.0).abs() < 1e-12);
        assert!(q[1].abs() < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a: Vec<Vec<f64>> = random_orthogonal(4, &mut rng);
            for r in 0..4 {
                for s in 0..4 {
                    let dot: f64 = (0..4).map(|t| a[r][t] * a[s][t]).sum();
                    let want = if r == s { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }
}
