//! Synthetic biased union-of-subspaces data.
//!
//! Cluster `c` owns an orthonormal basis `U_c ∈ ℝ^{d×r}`. A sample is
//! `x = U_c w + σ ε + s · g_b` with `w ~ N(0, I_r)`, `ε ~ N(0, I_d)`, where
//! `g_0, g_1` are unit vectors orthogonal to every subspace and `s` is the
//! bias strength. The bias label starts from the cluster's group (the lower
//! half of the cluster indices is group 0, the upper half group 1) and is
//! flipped with probability `e`, so `e = 0` ties bias to group and
//! `e = 0.5` makes it independent of the cluster.

mod io;

pub use io::{load_dataset, save_dataset, write_atomic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGenConfig {
    pub k_subspaces: usize,
    pub ambient_dim: usize,
    pub subspace_rank: usize,
    pub n_per_cluster: usize,
    pub noise_sigma: f64,
    pub bias_strength: f64,
    /// Probability `e` that a bias label is flipped away from the group rule.
    pub bias_flip_e: f64,
    /// Probability of flipping the group label before the bias rule is applied.
    pub label_flip: f64,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            k_subspaces: 3,
            ambient_dim: 30,
            subspace_rank: 4,
            n_per_cluster: 200,
            noise_sigma: 0.01,
            bias_strength: 0.0,
            bias_flip_e: 0.1,
            label_flip: 0.0,
            seed: 0,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_subspaces == 0 || self.subspace_rank == 0 || self.n_per_cluster == 0 {
            return bad("k, rank and n_per_cluster must be positive".into());
        }
        if self.subspace_rank >= self.ambient_dim {
            return bad(format!(
                "subspace rank {} must be below ambient dimension {}",
                self.subspace_rank, self.ambient_dim
            ));
        }
        if 2 + self.k_subspaces * self.subspace_rank > self.ambient_dim {
            return bad(format!(
                "bias directions cannot be orthogonal to {} subspaces of rank {} in dimension {}",
                self.k_subspaces, self.subspace_rank, self.ambient_dim
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.bias_strength >= 0.0) {
            return bad("noise_sigma and bias_strength must be >= 0".into());
        }
        check_flip(self.bias_flip_e)?;
        if !(0.0..=1.0).contains(&self.label_flip) {
            return bad(format!("label_flip must lie in [0, 1], got {}", self.label_flip));
        }
        Ok(())
    }
}

fn check_flip(e: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&e) {
        return Err(Error::Config(format!("bias flip probability must lie in [0, 0.5], got {e}")));
    }
    Ok(())
}

/// Subspace bases and bias directions shared by every split of one generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// One `d × r` orthonormal basis per cluster.
    pub bases: Vec<Matrix>,
    /// Unit displacement for bias label 0 and 1.
    pub bias_dirs: [Vec<f64>; 2],
}

impl Geometry {
    pub fn sample(config: &DataGenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derived(config.seed, "datagen/geometry");
        let (d, r) = (config.ambient_dim, config.subspace_rank);
        let bases = (0..config.k_subspaces)
            .map(|_| {
                let cols: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
                let q = orthonormalize(cols, &[])?;
                Ok(Matrix::from_fn(d, r, |i, j| q[j][i]))
            })
            .collect::<Result<Vec<_>>>()?;

        // Orthonormal basis of the union of all subspaces, to project the bias directions out of.
        let union_cols: Vec<Vec<f64>> = bases.iter().flat_map(|b| (0..r).map(|j| b.column(j))).collect();
        let union = orthonormalize_lenient(union_cols);
        let raw: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        let dirs = orthonormalize(raw, &union)?;
        Ok(Geometry { bases, bias_dirs: [dirs[0].clone(), dirs[1].clone()] })
    }

    pub fn ambient_dim(&self) -> usize {
        self.bias_dirs[0].len()
    }
}

/// Modified Gram-Schmidt, run twice, against `against` and then each other.
fn orthonormalize(mut cols: Vec<Vec<f64>>, against: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for i in 0..cols.len() {
        for _ in 0..2 {
            for q in against.iter().chain(cols[..i].iter()).cloned().collect::<Vec<_>>() {
                let proj = dot(&cols[i], &q);
                cols[i].iter_mut().zip(&q).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&cols[i], &cols[i]).sqrt();
        if norm < 1e-8 {
            return Err(Error::Config("degenerate random basis; try another seed".into()));
        }
        cols[i].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(cols)
}

/// Like [`orthonormalize`] but drops columns already in the span.
fn orthonormalize_lenient(cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut c in cols {
        for _ in 0..2 {
            for q in &out {
                let proj = dot(&c, q);
                c.iter_mut().zip(q).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&c, &c).sqrt();
        if norm > 1e-8 {
            c.iter_mut().for_each(|x| *x /= norm);
            out.push(c);
        }
    }
    out
}

/// Group of cluster `c` among `k`: lower half → 0, upper half → 1.
pub fn cluster_group(c: usize, k: usize) -> usize {
    usize::from(2 * c >= k)
}

/// Where a sample came from in a mixed-domain set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Biased,
    Decorrelated,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `"generated"` or the source path.
    pub source: String,
    pub generator: Option<DataGenConfig>,
    /// Flip rate actually used for this split.
    pub flip_e: Option<f64>,
    pub geometry: Option<Geometry>,
    /// Per-sample origin for mixed-domain sets.
    pub origin: Option<Vec<Origin>>,
}

/// Samples (rows of `x`) with optional cluster and bias labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub s: Option<Vec<usize>>,
    pub b: Option<Vec<usize>>,
    pub name: String,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Matrix, s: Option<Vec<usize>>, b: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        let ds = Dataset { x, s, b, name: name.into(), provenance: Provenance::default() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        for labels in [&self.s, &self.b].into_iter().flatten() {
            if labels.len() != n {
                return Err(Error::LengthMismatch { left: n, right: labels.len() });
            }
        }
        self.x.ensure_finite("dataset features")
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Features scaled to unit L2 norm per sample; the model only ever sees these.
    pub fn normalized_features(&self) -> Matrix {
        let mut x = self.x.clone();
        x.normalize_rows();
        x
    }

    /// Number of clusters implied by the cluster labels.
    pub fn n_clusters(&self) -> Option<usize> {
        self.s.as_ref().map(|s| s.iter().max().map_or(0, |m| m + 1))
    }
}

fn sample_points(
    config: &DataGenConfig,
    geometry: &Geometry,
    clusters: &[usize],
    e: f64,
    rng: &mut Rng,
) -> (Matrix, Vec<usize>) {
    let d = geometry.ambient_dim();
    let k = config.k_subspaces;
    let mut x = Matrix::zeros(clusters.len(), d);
    let mut b = Vec::with_capacity(clusters.len());
    for (row, &c) in clusters.iter().enumerate() {
        let basis = &geometry.bases[c];
        let w: Vec<f64> = (0..basis.cols()).map(|_| rng.normal()).collect();
        let mut group = cluster_group(c, k);
        if config.label_flip > 0.0 && rng.bernoulli(config.label_flip) {
            group = 1 - group;
        }
        let bias = if rng.bernoulli(e) { 1 - group } else { group };
        let out = x.row_mut(row);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(basis.row(i), &w);
        }
        for (o, g) in out.iter_mut().zip(&geometry.bias_dirs[bias]) {
            *o += config.noise_sigma * rng.normal() + config.bias_strength * g;
        }
        b.push(bias);
    }
    (x, b)
}

fn generate_split(config: &DataGenConfig, geometry: &Geometry, e: f64, stream: &str, name: &str) -> Result<Dataset> {
    check_flip(e)?;
    let clusters: Vec<usize> =
        (0..config.k_subspaces).flat_map(|c| std::iter::repeat_n(c, config.n_per_cluster)).collect();
    let mut rng = Rng::derived(config.seed, stream);
    let (x, b) = sample_points(config, geometry, &clusters, e, &mut rng);
    Ok(Dataset {
        x,
        s: Some(clusters),
        b: Some(b),
        name: name.to_string(),
        provenance: Provenance {
            source: "generated".into(),
            generator: Some(config.clone()),
            flip_e: Some(e),
            geometry: Some(geometry.clone()),
            origin: None,
        },
    })
}

/// One dataset with `n_per_cluster` samples per cluster, ordered by cluster.
pub fn generate(config: &DataGenConfig) -> Result<Dataset> {
    let geometry = Geometry::sample(config)?;
    generate_split(config, &geometry, config.bias_flip_e, "datagen/samples", "generated")
}

/// Train/test pair sharing geometry; only the flip rate (and sample stream) differ.
pub fn make_ood_split(config: &DataGenConfig, train_e: f64, test_e: f64) -> Result<(Dataset, Dataset)> {
    let geometry = Geometry::sample(config)?;
    let train = generate_split(config, &geometry, train_e, "datagen/samples/train", "train")?;
    let test = generate_split(config, &geometry, test_e, "datagen/samples/test", "test")?;
    Ok((train, test))
}

/// Biased (`e_biased`) and decorrelated (`e = 0.5`) samples, shuffled together.
///
/// The total is `k · n_per_cluster`; `round(n_ratio · total)` samples are
/// biased. Clusters are assigned round-robin within each part.
pub fn make_mixed_domain(config: &DataGenConfig, e_biased: f64, n_ratio: f64) -> Result<Dataset> {
    if !(n_ratio > 0.0 && n_ratio <= 1.0) {
        return Err(Error::Config(format!("n_ratio must lie in (0, 1], got {n_ratio}")));
    }
    check_flip(e_biased)?;
    let geometry = Geometry::sample(config)?;
    let k = config.k_subspaces;
    let total = k * config.n_per_cluster;
    let n_biased = (n_ratio * total as f64).round() as usize;
    let mut rng = Rng::derived(config.seed, "datagen/samples/mixed");

    let biased_clusters: Vec<usize> = (0..n_biased).map(|i| i % k).collect();
    let plain_clusters: Vec<usize> = (0..total - n_biased).map(|i| i % k).collect();
    let (xb, bb) = sample_points(config, &geometry, &biased_clusters, e_biased, &mut rng);
    let (xp, bp) = sample_points(config, &geometry, &plain_clusters, 0.5, &mut rng);

    let x_all = xb.vstack(&xp)?;
    let s_all: Vec<usize> = biased_clusters.iter().chain(&plain_clusters).copied().collect();
    let b_all: Vec<usize> = bb.iter().chain(&bp).copied().collect();
    let origin_all: Vec<Origin> = std::iter::repeat_n(Origin::Biased, n_biased)
        .chain(std::iter::repeat_n(Origin::Decorrelated, total - n_biased))
        .collect();

    let perm = rng.permutation(total);
    Ok(Dataset {
        x: x_all.select_rows(&perm),
        s: Some(perm.iter().map(|&i| s_all[i]).collect()),
        b: Some(perm.iter().map(|&i| b_all[i]).collect()),
        name: "mixed".into(),
        provenance: Provenance {
            source: "generated".into(),
            generator: Some(config.clone()),
            flip_e: Some(e_biased),
            geometry: Some(geometry),
            origin: Some(perm.iter().map(|&i| origin_all[i]).collect()),
        },
    })
}
