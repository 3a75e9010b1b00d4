//! Lloyd's k-means with k-means++ seeding and best-of-restarts selection.

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Result of one k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform(0.0, total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centroids
}

fn lloyd(x: &Matrix, mut centroids: Matrix, max_iter: usize) -> KMeansFit {
    let (n, dim) = x.shape();
    let k = centroids.rows();
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(x.row(i), &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        // Empty clusters keep their previous centroid.
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let wcss = (0..n).map(|i| sq_dist(x.row(i), centroids.row(labels[i]))).sum();
    KMeansFit { labels, centroids, wcss, iterations }
}

/// Relabels clusters in order of first appearance.
pub fn canonicalize_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Best of `restarts` seeded runs by WCSS. Labels are canonicalized.
pub fn kmeans(x: &Matrix, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.rows();
    if k == 0 || restarts == 0 {
        return Err(Error::Config("k-means needs k >= 1 and restarts >= 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k-means with k={k} > n={n}")));
    }
    x.ensure_finite("k-means input")?;
    let mut rng = Rng::derived(seed, "cluster/kmeans");
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts {
        let init = plus_plus_init(x, k, &mut rng);
        let fit = lloyd(x, init, max_iter);
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("restarts >= 1");
    best.labels = canonicalize_labels(&best.labels);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_groups() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 10.0], vec![10.1, 10.0]]).unwrap();
        let fit = kmeans(&x, 2, 3, 100, 1).unwrap();
        assert_eq!(fit.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn identical_points() {
        let x = Matrix::from_rows(&vec![vec![1.0, 2.0]; 5]).unwrap();
        let fit = kmeans(&x, 2, 2, 10, 0).unwrap();
        assert_eq!(fit.wcss, 0.0);
        assert!(fit.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn k_larger_than_n() {
        assert!(kmeans(&Matrix::zeros(2, 1), 3, 1, 10, 0).is_err());
    }

    #[test]
    fn canonical_order() {
        assert_eq!(canonicalize_labels(&[2, 2, 0, 1, 0]), vec![0, 0, 1, 2, 1]);
    }
}
