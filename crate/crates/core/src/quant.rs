//! Cluster validity indices (Davies-Bouldin, mean index adequacy,
//! silhouette), the per-bin `Ix` product and the combined index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{dist, sq_dist, ClusterModel};
use crate::error::{Error, Result};

/// Default number of rows the silhouette is evaluated on.
pub const SILHOUETTE_SAMPLE_CAP: usize = 20_000;

fn check_labels(x: &[Vec<f64>], labels: &[usize], n_clusters: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Empty("no rows".into()));
    }
    if x.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_clusters) {
        return Err(Error::Parameter(format!(
            "label {l} has no centroid ({n_clusters} given)"
        )));
    }
    Ok(())
}

/// Per-cluster member count, mean distance and mean squared distance to
/// the centroid.
fn scatter(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> Vec<(usize, f64, f64)> {
    let mut acc = vec![(0usize, 0.0, 0.0); centroids.len()];
    for (row, &l) in x.iter().zip(labels) {
        let d2 = sq_dist(row, &centroids[l]);
        acc[l].0 += 1;
        acc[l].1 += d2.sqrt();
        acc[l].2 += d2;
    }
    acc.into_iter()
        .map(|(n, s, s2)| {
            if n == 0 {
                (0, 0.0, 0.0)
            } else {
                (n, s / n as f64, s2 / n as f64)
            }
        })
        .collect()
}

/// Davies-Bouldin index over the non-empty clusters.
pub fn dbi(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> Result<f64> {
    check_labels(x, labels, centroids.len())?;
    let stats = scatter(x, labels, centroids);
    let live: Vec<usize> = (0..centroids.len()).filter(|&k| stats[k].0 > 0).collect();
    if live.len() < 2 {
        return Err(Error::Metric(
            "Davies-Bouldin needs at least two non-empty clusters".into(),
        ));
    }
    let mut total = 0.0;
    for &i in &live {
        let mut worst = 0.0f64;
        for &j in &live {
            if i == j {
                continue;
            }
            let sep = dist(&centroids[i], &centroids[j]);
            if sep == 0.0 {
                return Err(Error::DuplicateCentroids {
                    a: i.min(j),
                    b: i.max(j),
                });
            }
            worst = worst.max((stats[i].1 + stats[j].1) / sep);
        }
        total += worst;
    }
    Ok(total / live.len() as f64)
}

/// Mean index adequacy: `sqrt((1/K) Σ_k d²(c_k))`, with `d²(c_k)` the mean
/// squared member distance to centroid `k`, over the K non-empty clusters.
pub fn mia(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> Result<f64> {
    check_labels(x, labels, centroids.len())?;
    let stats = scatter(x, labels, centroids);
    let live: Vec<f64> = stats.iter().filter(|s| s.0 > 0).map(|s| s.2).collect();
    Ok((live.iter().sum::<f64>() / live.len() as f64).sqrt())
}

/// Mean silhouette coefficient. Above `sample_cap` rows, a seeded subsample
/// of `sample_cap` rows is scored against itself. Singleton clusters score 0.
pub fn silhouette(x: &[Vec<f64>], labels: &[usize], sample_cap: usize, seed: u64) -> Result<f64> {
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    check_labels(x, labels, n_clusters)?;
    let rows: Vec<usize> = if x.len() > sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, x.len(), sample_cap).into_vec();
        picks.sort_unstable();
        picks
    } else {
        (0..x.len()).collect()
    };

    let mut sizes = vec![0usize; n_clusters];
    for &i in &rows {
        sizes[labels[i]] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Metric(
            "silhouette needs at least two clusters".into(),
        ));
    }

    let score = |&i: &usize| -> f64 {
        let own = labels[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; n_clusters];
        for &j in &rows {
            sums[labels[j]] += dist(&x[i], &x[j]);
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&k| k != own && sizes[k] > 0)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            (b - a) / denom
        } else {
            0.0
        }
    };
    let scores: Vec<f64> = rows.par_iter().map(score).collect();
    Ok(scores.iter().sum::<f64>() / rows.len() as f64)
}

/// `dbi × mia / silhouette`; `None` when the silhouette is not positive.
pub fn ix(dbi: f64, mia: f64, silhouette: f64) -> Option<f64> {
    (silhouette > 0.0).then(|| dbi * mia / silhouette)
}

/// Validity indices of one clustered bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinQuant {
    pub dbi: f64,
    pub mia: f64,
    pub silhouette: f64,
    /// Absent when the silhouette is not positive.
    pub ix: Option<f64>,
    pub n_bin: usize,
}

pub fn evaluate_model(
    x: &[Vec<f64>],
    model: &ClusterModel,
    sample_cap: usize,
    seed: u64,
) -> Result<BinQuant> {
    let dbi = dbi(x, &model.labels, &model.centroids)?;
    let mia = mia(x, &model.labels, &model.centroids)?;
    let silhouette = silhouette(x, &model.labels, sample_cap, seed)?;
    Ok(BinQuant {
        dbi,
        mia,
        silhouette,
        ix: ix(dbi, mia, silhouette),
        n_bin: x.len(),
    })
}

/// `ln(Σ_bins (n_bin / n_total) × ix_bin)`.
pub fn combined_index(per_bin: &[(f64, usize)], n_total: usize) -> Result<f64> {
    if per_bin.is_empty() || n_total == 0 {
        return Err(Error::Empty(
            "combined index needs at least one populated bin".into(),
        ));
    }
    let counted: usize = per_bin.iter().map(|b| b.1).sum();
    if counted != n_total {
        return Err(Error::Parameter(format!(
            "bin sizes sum to {counted}, expected {n_total}"
        )));
    }
    if let Some((i, (v, _))) = per_bin
        .iter()
        .enumerate()
        .find(|(_, (v, _))| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::Metric(format!("bin {} has invalid ix {v}", i + 1)));
    }
    let weighted: f64 = per_bin
        .iter()
        .map(|&(v, n)| n as f64 / n_total as f64 * v)
        .sum();
    Ok(weighted.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn dbi_zero_for_singletons() {
        let x = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(dbi(&x, &[0, 1], &x).unwrap(), 0.0);
    }

    #[test]
    fn dbi_scale_invariant() {
        let x = pts(&[
            [0.0, 0.0],
            [0.0, 1.0],
            [5.0, 0.0],
            [5.0, 2.0],
            [2.0, 7.0],
            [3.0, 7.0],
        ]);
        let labels = [0, 0, 1, 1, 2, 2];
        let c = pts(&[[0.0, 0.5], [5.0, 1.0], [2.5, 7.0]]);
        let x2: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().map(|v| v * 2.0).collect())
            .collect();
        let c2: Vec<Vec<f64>> = c
            .iter()
            .map(|r| r.iter().map(|v| v * 2.0).collect())
            .collect();
        let a = dbi(&x, &labels, &c).unwrap();
        let b = dbi(&x2, &labels, &c2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dbi_duplicate_centroids() {
        let x = pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let c = pts(&[[0.5, 0.5], [0.5, 0.5]]);
        assert!(matches!(
            dbi(&x, &[0, 1, 1], &c),
            Err(Error::DuplicateCentroids { a: 0, b: 1 })
        ));
    }

    #[test]
    fn mia_cases() {
        let x = pts(&[[1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(mia(&x, &[0, 1], &x).unwrap(), 0.0);

        let r = 1.75;
        let x = pts(&[[-r, 0.0], [r, 0.0]]);
        let c = pts(&[[0.0, 0.0]]);
        assert!((mia(&x, &[0, 0], &c).unwrap() - r).abs() < 1e-12);

        let x2 = pts(&[[-2.0 * r, 0.0], [2.0 * r, 0.0]]);
        assert!((mia(&x2, &[0, 0], &c).unwrap() - 2.0 * r).abs() < 1e-12);
    }

    #[test]
    fn silhouette_single_cluster_is_error() {
        let x = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(silhouette(&x, &[0, 0], 100, 0).is_err());
    }

    #[test]
    fn silhouette_equidistant_point_contributes_zero() {
        // Point 1 at x=1 is distance 1 from its partner at 0 and from the
        // other cluster at 2.
        let x = pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 0.0]]);
        let labels = [0, 0, 1, 1];
        // Exact per-point values: p0: a=1, b=2 → 0.5; p1: a=1, b=1 → 0;
        // p2, p3: a=0, b=1.5 → 1.
        let s = silhouette(&x, &labels, 100, 0).unwrap();
        assert!((s - (0.5 + 0.0 + 1.0 + 1.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn silhouette_subsample_is_deterministic() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 2) as f64 * 10.0 + i as f64 * 0.01])
            .collect();
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let a = silhouette(&x, &labels, 20, 3).unwrap();
        let b = silhouette(&x, &labels, 20, 3).unwrap();
        assert_eq!(a, b);
        let full = silhouette(&x, &labels, 60, 3).unwrap();
        assert_eq!(full, silhouette(&x, &labels, 1000, 99).unwrap());
    }

    #[test]
    fn ci_cases() {
        assert_eq!(combined_index(&[(1.0, 10)], 10).unwrap(), 0.0);
        assert!(combined_index(&[(0.4, 10)], 10).unwrap() < 0.0);
        let ci = combined_index(&[(2.0, 50), (4.0, 50)], 100).unwrap();
        assert!((ci - 3f64.ln()).abs() < 1e-12);
        assert!(combined_index(&[(0.0, 10)], 10).is_err());
        assert!(combined_index(&[(-1.0, 10)], 10).is_err());
        assert!(combined_index(&[(1.0, 10)], 11).is_err());
    }

    #[test]
    fn ix_requires_positive_silhouette() {
        assert_eq!(ix(2.0, 3.0, 0.5), Some(12.0));
        assert_eq!(ix(2.0, 3.0, 0.0), None);
        assert_eq!(ix(2.0, 3.0, -0.1), None);
    }
}
