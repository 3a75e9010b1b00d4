//! Affinity construction and spectral clustering.

mod eigen;
mod kmeans;

pub use eigen::{smallest_eigenvectors, symmetric_eigen, SymmetricEigen};
pub use kmeans::{canonicalize_labels, kmeans, KMeansFit};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::write_atomic;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Mode};
use crate::sennet::{CoefficientMatrix, SeModel};

/// Symmetric, non-negative graph weights with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    a: Matrix,
}

impl AffinityMatrix {
    /// Checks symmetry, non-negativity and the zero diagonal exactly.
    pub fn new(a: Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::dims("affinity", "square matrix", format!("{:?}", a.shape())));
        }
        a.ensure_finite("affinity")?;
        for i in 0..n {
            if a[(i, i)] != 0.0 {
                return Err(Error::Config(format!("affinity diagonal entry {i} is {}", a[(i, i)])));
            }
            for j in 0..i {
                if a[(i, j)] != a[(j, i)] {
                    return Err(Error::Config(format!("affinity is not symmetric at ({i}, {j})")));
                }
                if a[(i, j)] < 0.0 {
                    return Err(Error::Config(format!("negative affinity at ({i}, {j})")));
                }
            }
        }
        Ok(AffinityMatrix { a })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.rows() == 0
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.a.row(i).iter().sum()).collect()
    }

    /// Row-major CSV with an `n=<n>` header line.
    pub fn to_csv(&self) -> String {
        let n = self.len();
        let mut out = String::with_capacity(n * n * 8 + 16);
        let _ = writeln!(out, "n={n}");
        for i in 0..n {
            for (j, v) in self.a.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// `A = |C| + |Cᵀ|`.
pub fn affinity_from_coefficients(c: &CoefficientMatrix) -> Result<AffinityMatrix> {
    let c = c.matrix();
    let n = c.rows();
    let a = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { c[(i, j)].abs() + c[(j, i)].abs() });
    AffinityMatrix::new(a)
}

/// Affinity over a whole dataset, with the networks in evaluation mode.
pub fn build_affinity(model: &SeModel, dataset: &Dataset) -> Result<AffinityMatrix> {
    if dataset.len() < 2 {
        return Err(Error::Config("affinity needs at least 2 samples".into()));
    }
    let x = dataset.normalized_features();
    let c = model.coefficients(&x, Mode::Eval)?;
    affinity_from_coefficients(&c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    Unnormalized,
    #[default]
    Symmetric,
}

/// `L_sym = I − D^{-1/2} A D^{-1/2}`; zero-degree vertices get a zero scale.
pub fn normalized_laplacian(a: &AffinityMatrix) -> Matrix {
    let n = a.len();
    let inv_sqrt: Vec<f64> = a.degrees().into_iter().map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let m = a.matrix();
    Matrix::from_fn(n, n, |i, j| {
        let off = inv_sqrt[i] * m[(i, j)] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// `L = D − A`.
pub fn unnormalized_laplacian(a: &AffinityMatrix) -> Matrix {
    let n = a.len();
    let deg = a.degrees();
    let m = a.matrix();
    Matrix::from_fn(n, n, |i, j| if i == j { deg[i] - m[(i, j)] } else { -m[(i, j)] })
}

pub fn laplacian(a: &AffinityMatrix, kind: LaplacianKind) -> Matrix {
    match kind {
        LaplacianKind::Symmetric => normalized_laplacian(a),
        LaplacianKind::Unnormalized => unnormalized_laplacian(a),
    }
}

/// Cluster assignment, one label in `0..k` per sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        Ok(ClusterLabels { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub eig_tol: f64,
    pub seed: u64,
    pub laplacian: LaplacianKind,
}

impl SpectralConfig {
    pub fn new(k: usize) -> Self {
        SpectralConfig {
            k,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            eig_tol: 1e-8,
            seed: 0,
            laplacian: LaplacianKind::Symmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("spectral clustering needs k >= 1".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be at least 1".into()));
        }
        if !(self.eig_tol > 0.0) {
            return Err(Error::Config("eig_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Laplacian eigenvectors, row normalization, then k-means.
pub fn spectral_cluster(a: &AffinityMatrix, config: &SpectralConfig) -> Result<ClusterLabels> {
    config.validate()?;
    let n = a.len();
    if config.k > n {
        return Err(Error::Config(format!("k={} exceeds n={n}", config.k)));
    }
    if config.k == 1 {
        return ClusterLabels::new(vec![0; n], 1);
    }
    let lap = laplacian(a, config.laplacian);
    let (_, mut emb) = smallest_eigenvectors(&lap, config.k, config.eig_tol)?;
    emb.normalize_rows();
    let fit = kmeans(&emb, config.k, config.kmeans_restarts, config.kmeans_max_iter, config.seed)?;
    ClusterLabels::new(fit.labels, config.k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_definition() {
        let c = CoefficientMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, 0.0]]).unwrap()).unwrap();
        let a = affinity_from_coefficients(&c).unwrap();
        assert_eq!(a.matrix().data(), &[0.0, 3.0, 3.0, 0.0]);
        let zero = CoefficientMatrix::new(Matrix::zeros(3, 3)).unwrap();
        assert_eq!(affinity_from_coefficients(&zero).unwrap().matrix().max_abs(), 0.0);
    }

    #[test]
    fn two_node_laplacian() {
        let a = AffinityMatrix::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let l = normalized_laplacian(&a);
        assert_eq!(l.data(), &[1.0, -1.0, -1.0, 1.0]);
        let eig = symmetric_eigen(&l).unwrap();
        assert!(eig.values[0].abs() < 1e-14 && (eig.values[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn isolated_vertex() {
        let a = AffinityMatrix::new(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(normalized_laplacian(&a).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(AffinityMatrix::new(m).is_err());
    }

    #[test]
    fn csv_header() {
        let a = AffinityMatrix::new(Matrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap()).unwrap();
        assert_eq!(a.to_csv(), "n=2\n0,0.5\n0.5,0\n");
    }
}
