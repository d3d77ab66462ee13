use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which group a projected point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    InDomain,
    OutOfDomain,
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// `vectors[i]` belongs to `values[i]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigen-solver for a dense symmetric `n x n` matrix given as
/// rows.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Result<Eigen> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::Analysis("eigen-solver needs a square matrix".into()));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    Ok(Eigen {
        values: order.iter().map(|&i| a[i][i]).collect(),
        vectors: order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect(),
    })
}

/// Two-dimensional projection of a set of representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub coordinates: Vec<[f64; 2]>,
    /// Fraction of the total variance along each component.
    pub explained_variance: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub splits: Vec<Split>,
    /// Row of the input that each point came from.
    pub indices: Vec<usize>,
}

/// Seeded subsample of at most `sample_size` points per split, mean-centred
/// and projected onto the top two principal components.
pub fn pca_project<T: Scalar>(
    reps: &[Vec<T>],
    splits: &[Split],
    sample_size: usize,
    seed: u64,
) -> Result<ProjectionResult> {
    if reps.len() != splits.len() {
        return Err(Error::Analysis("one split label per representation".into()));
    }
    let d = reps.first().map_or(0, Vec::len);
    if d < 2 || reps.iter().any(|r| r.len() != d) {
        return Err(Error::Analysis("representations need a common width >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    for split in [Split::InDomain, Split::OutOfDomain] {
        let members: Vec<usize> = (0..reps.len()).filter(|&i| splits[i] == split).collect();
        if members.len() <= sample_size {
            indices.extend(members);
        } else {
            let mut picked: Vec<usize> = sample(&mut rng, members.len(), sample_size)
                .into_iter()
                .map(|i| members[i])
                .collect();
            picked.sort_unstable();
            indices.extend(picked);
        }
    }
    let n = indices.len();
    if n < 3 {
        return Err(Error::Analysis(format!("need at least 3 points to project, got {n}")));
    }
    let rows: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| reps[i].iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centred {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let eig = jacobi_eigen(&cov)?;
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let frac = |v: f64| if total > 0.0 { v.max(0.0) / total } else { 0.0 };
    let c0 = eig.vectors[0].clone();
    let c1 = eig.vectors[1].clone();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(ProjectionResult {
        coordinates: centred.iter().map(|r| [dot(r, &c0), dot(r, &c1)]).collect(),
        explained_variance: [frac(eig.values[0]), frac(eig.values[1])],
        components: [c0, c1],
        splits: indices.iter().map(|&i| splits[i]).collect(),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let e = jacobi_eigen(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors[0], vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let e = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let v = &e.vectors[0];
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let reps = vec![vec![0.0f64, 1.0], vec![1.0, 0.0]];
        let splits = vec![Split::InDomain; 2];
        assert!(pca_project(&reps, &splits, 10, 0).is_err());
    }

    #[test]
    fn subsamples_per_split() {
        let reps: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let splits: Vec<Split> = (0..50)
            .map(|i| if i < 30 { Split::InDomain } else { Split::OutOfDomain })
            .collect();
        let r = pca_project(&reps, &splits, 10, 3).unwrap();
        assert_eq!(r.coordinates.len(), 20);
        assert_eq!(r.splits.iter().filter(|&&s| s == Split::InDomain).count(), 10);
        assert_eq!(r, pca_project(&reps, &splits, 10, 3).unwrap());
    }
}
