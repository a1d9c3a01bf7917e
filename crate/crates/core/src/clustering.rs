//! k-means, square-map batch SOM and SOM+k-means over normalised profiles.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Hourly, HOURS};
use crate::error::{Error, Result};

/// Rows above which assignment steps run in parallel.
const PAR_THRESHOLD: usize = 2048;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    if x.len() >= PAR_THRESHOLD {
        x.par_iter().map(|p| nearest(p, centroids)).collect()
    } else {
        x.iter().map(|p| nearest(p, centroids)).collect()
    }
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = x.first() else {
        return Err(Error::Empty("no rows to cluster".into()));
    };
    let dim = first.len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(Error::Parameter(
            "rows must share a non-zero dimension".into(),
        ));
    }
    Ok(dim)
}

/// Means of the rows of each cluster; `None` for clusters without members.
pub fn cluster_means(x: &[Vec<f64>], labels: &[usize], n_clusters: usize) -> Vec<Option<Vec<f64>>> {
    let dim = x.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (row, &l) in x.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                s.iter_mut().for_each(|v| *v /= n as f64);
                s
            })
        })
        .collect()
}

pub fn cluster_sizes(labels: &[usize], n_clusters: usize) -> Vec<usize> {
    let mut sizes = vec![0; n_clusters];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Convergence threshold on the summed squared centroid shift, relative
    /// to the mean per-feature variance of the data.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia fit is kept.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    pub n_iter: usize,
    /// Objective after every assignment step.
    pub history: Vec<f64>,
}

fn kmeans_pp(x: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centroids = Vec::with_capacity(m);
    centroids.push(x[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point coincides with a centroid already.
            Err(_) => rng.random_range(0..n),
        };
        let c = x[next].clone();
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn mean_feature_variance(x: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let dim = x[0].len();
    let mut total = 0.0;
    for j in 0..dim {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        total += x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    }
    total / dim as f64
}

/// Moves each empty cluster onto the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn reseed_empty(
    x: &[Vec<f64>],
    labels: &mut [usize],
    cost: &mut [f64],
    centroids: &mut [Vec<f64>],
) {
    let m = centroids.len();
    let mut sizes = cluster_sizes(labels, m);
    for j in 0..m {
        if sizes[j] > 0 {
            continue;
        }
        let far = (0..x.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)));
        let Some(i) = far else { break };
        sizes[labels[i]] -= 1;
        sizes[j] = 1;
        labels[i] = j;
        cost[i] = 0.0;
        centroids[j] = x[i].clone();
    }
}

fn lloyd(x: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, tol_abs: f64, max_iter: usize) -> KMeansFit {
    let m = centroids.len();
    let mut history = Vec::new();
    let mut n_iter = 0;
    let mut converged = false;
    loop {
        let assigned = assign(x, &centroids);
        let mut labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut cost: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        reseed_empty(x, &mut labels, &mut cost, &mut centroids);
        let inertia: f64 = cost.iter().sum();
        history.push(inertia);

        if converged || n_iter >= max_iter {
            return KMeansFit {
                labels,
                centroids,
                inertia,
                n_iter,
                history,
            };
        }

        let means = cluster_means(x, &labels, m);
        let mut shift = 0.0;
        for (c, mean) in centroids.iter_mut().zip(means) {
            if let Some(mean) = mean {
                shift += sq_dist(c, &mean);
                *c = mean;
            }
        }
        n_iter += 1;
        converged = shift <= tol_abs;
    }
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(x: &[Vec<f64>], m: usize, seed: u64, options: &KMeansOptions) -> Result<KMeansFit> {
    check_matrix(x)?;
    if m == 0 {
        return Err(Error::Parameter(
            "k-means needs at least one cluster".into(),
        ));
    }
    if m > x.len() {
        return Err(Error::Parameter(format!(
            "cannot form {m} clusters from {} rows",
            x.len()
        )));
    }
    let tol_abs = options.tol * mean_feature_variance(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..options.n_init.max(1) {
        let init = kmeans_pp(x, m, &mut rng);
        let fit = lloyd(x, init, tol_abs, options.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomFit {
    pub side: usize,
    /// `side × side` unit vectors, row-major.
    pub codebook: Vec<Vec<f64>>,
    /// Best-matching unit of every row.
    pub labels: Vec<usize>,
}

/// Gaussian neighbourhood weights for grid offsets `0..side`.
fn neighbourhood(side: usize, radius: f64) -> Vec<f64> {
    (0..side)
        .map(|d| (-((d * d) as f64) / (2.0 * radius * radius)).exp())
        .collect()
}

/// Convolves a `side × side × width` grid with a separable kernel.
fn smooth(grid: &[f64], side: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let mut rows = vec![0.0; grid.len()];
    for r in 0..side {
        for c2 in 0..side {
            let out = &mut rows[(r * side + c2) * width..(r * side + c2 + 1) * width];
            for c in 0..side {
                let w = kernel[c.abs_diff(c2)];
                let src = &grid[(r * side + c) * width..(r * side + c + 1) * width];
                out.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
    }
    let mut out = vec![0.0; grid.len()];
    for r2 in 0..side {
        for c in 0..side {
            let dst = &mut out[(r2 * side + c) * width..(r2 * side + c + 1) * width];
            for r in 0..side {
                let w = kernel[r.abs_diff(r2)];
                let src = &rows[(r * side + c) * width..(r * side + c + 1) * width];
                dst.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
    }
    out
}

/// Batch self-organising map on a `side × side` grid.
///
/// Units start at distinct sampled rows. The Gaussian radius decays linearly
/// from `side / 2` to 1 over the epochs; each epoch replaces every unit with
/// the neighbourhood-weighted mean of the rows mapped around it.
pub fn som(x: &[Vec<f64>], side: usize, seed: u64, epochs: usize) -> Result<SomFit> {
    let dim = check_matrix(x)?;
    if side < 2 {
        return Err(Error::Parameter(format!(
            "SOM side must be at least 2, got {side}"
        )));
    }
    let units = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if x.len() >= units {
        rand::seq::index::sample(&mut rng, x.len(), units).into_vec()
    } else {
        (0..units).map(|_| rng.random_range(0..x.len())).collect()
    };
    let mut codebook: Vec<Vec<f64>> = picks.iter().map(|&i| x[i].clone()).collect();

    let start = side as f64 / 2.0;
    for e in 0..epochs {
        let radius = if epochs > 1 {
            start + (1.0 - start) * e as f64 / (epochs - 1) as f64
        } else {
            1.0
        };
        let bmus = assign(x, &codebook);
        let mut sums = vec![0.0; units * dim];
        let mut counts = vec![0.0; units];
        for (row, (u, _)) in x.iter().zip(&bmus) {
            counts[*u] += 1.0;
            sums[u * dim..(u + 1) * dim]
                .iter_mut()
                .zip(row)
                .for_each(|(s, v)| *s += v);
        }
        let kernel = neighbourhood(side, radius);
        let num = smooth(&sums, side, dim, &kernel);
        let den = smooth(&counts, side, 1, &kernel);
        for (u, unit) in codebook.iter_mut().enumerate() {
            if den[u] > 0.0 {
                for (k, w) in unit.iter_mut().enumerate() {
                    *w = num[u * dim + k] / den[u];
                }
            }
        }
    }
    let labels = assign(x, &codebook).into_iter().map(|a| a.0).collect();
    Ok(SomFit {
        side,
        codebook,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomKMeansFit {
    pub som: SomFit,
    /// k-means cluster of every SOM unit.
    pub unit_labels: Vec<usize>,
    /// Cluster of every row: the cluster of its best-matching unit.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

/// SOM of `side²` units followed by k-means with `m` clusters on the codebook.
pub fn som_kmeans(
    x: &[Vec<f64>],
    side: usize,
    m: usize,
    seed: u64,
    epochs: usize,
    options: &KMeansOptions,
) -> Result<SomKMeansFit> {
    if side * side <= m {
        return Err(Error::Parameter(format!(
            "SOM+k-means needs side² > m, got side {side} (side² = {}) and m = {m}",
            side * side
        )));
    }
    let map = som(x, side, seed, epochs)?;
    let km = kmeans(&map.codebook, m, seed, options)?;
    let labels = map.labels.iter().map(|&u| km.labels[u]).collect();
    Ok(SomKMeansFit {
        unit_labels: km.labels,
        centroids: km.centroids,
        som: map,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    Som,
    SomKmeans,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Kmeans => "kmeans",
            Algorithm::Som => "som",
            Algorithm::SomKmeans => "som_kmeans",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_epochs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub algorithm: Algorithm,
    /// Cluster count for k-means and SOM+k-means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Map side for SOM and SOM+k-means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    pub rng_seed: u64,
    #[serde(flatten)]
    pub kmeans: KMeansOptions,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl ClusterParams {
    pub fn kmeans(m: usize, rng_seed: u64) -> Self {
        ClusterParams {
            algorithm: Algorithm::Kmeans,
            m: Some(m),
            s: None,
            rng_seed,
            kmeans: KMeansOptions::default(),
            epochs: default_epochs(),
        }
    }

    pub fn som(s: usize, rng_seed: u64) -> Self {
        ClusterParams {
            algorithm: Algorithm::Som,
            m: None,
            s: Some(s),
            ..ClusterParams::kmeans(2, rng_seed)
        }
    }

    pub fn som_kmeans(s: usize, m: usize, rng_seed: u64) -> Self {
        ClusterParams {
            algorithm: Algorithm::SomKmeans,
            m: Some(m),
            s: Some(s),
            ..ClusterParams::kmeans(m, rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| {
                Error::Parameter(format!("{} requires parameter {name}", self.algorithm))
            })
        };
        match self.algorithm {
            Algorithm::Kmeans => {
                let m = need(self.m, "m")?;
                if m < 2 {
                    return Err(Error::Parameter(format!("m must be at least 2, got {m}")));
                }
            }
            Algorithm::Som => {
                let s = need(self.s, "s")?;
                if s < 2 {
                    return Err(Error::Parameter(format!("s must be at least 2, got {s}")));
                }
            }
            Algorithm::SomKmeans => {
                let m = need(self.m, "m")?;
                let s = need(self.s, "s")?;
                if m < 2 || s < 2 {
                    return Err(Error::Parameter("m and s must be at least 2".into()));
                }
                if s * s <= m {
                    return Err(Error::Parameter(format!(
                        "SOM+k-means needs s² > m, got s = {s}, m = {m}"
                    )));
                }
            }
        }
        if self.kmeans.max_iter == 0 || self.kmeans.tol.is_nan() || self.kmeans.tol < 0.0 {
            return Err(Error::Parameter(
                "max_iter must be positive and tol non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        match self.algorithm {
            Algorithm::Som => self.s.unwrap_or(0).pow(2),
            _ => self.m.unwrap_or(0),
        }
    }

    /// Short label such as `m7` or `s4m9`.
    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Kmeans => format!("m{}", self.m.unwrap_or(0)),
            Algorithm::Som => format!("s{}", self.s.unwrap_or(0)),
            Algorithm::SomKmeans => format!("s{}m{}", self.s.unwrap_or(0), self.m.unwrap_or(0)),
        }
    }
}

/// A fitted clustering of one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub params: ClusterParams,
    /// Cluster of every clustered row.
    pub labels: Vec<usize>,
    /// Member mean in normalised space for non-empty clusters; the fitted
    /// centroid or unit otherwise.
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
}

impl ClusterModel {
    pub fn fit(x: &[Vec<f64>], params: &ClusterParams) -> Result<Self> {
        params.validate()?;
        let seed = params.rng_seed;
        let (labels, fitted) = match params.algorithm {
            Algorithm::Kmeans => {
                let fit = kmeans(x, params.m.unwrap_or(0), seed, &params.kmeans)?;
                (fit.labels, fit.centroids)
            }
            Algorithm::Som => {
                let fit = som(x, params.s.unwrap_or(0), seed, params.epochs)?;
                (fit.labels, fit.codebook)
            }
            Algorithm::SomKmeans => {
                let fit = som_kmeans(
                    x,
                    params.s.unwrap_or(0),
                    params.m.unwrap_or(0),
                    seed,
                    params.epochs,
                    &params.kmeans,
                )?;
                (fit.labels, fit.centroids)
            }
        };
        let n = fitted.len();
        let centroids = cluster_means(x, &labels, n)
            .into_iter()
            .zip(fitted)
            .map(|(mean, fitted)| mean.unwrap_or(fitted))
            .collect();
        Ok(ClusterModel {
            params: params.clone(),
            sizes: cluster_sizes(&labels, n),
            labels,
            centroids,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn non_empty(&self) -> usize {
        self.sizes.iter().filter(|&&s| s > 0).count()
    }
}

/// Element-wise mean of the raw member profiles of every cluster; `None` for
/// empty clusters.
pub fn compute_rdlp(
    raw: &[Hourly],
    labels: &[usize],
    n_clusters: usize,
) -> Result<Vec<Option<Hourly>>> {
    if raw.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} profiles but {} labels",
            raw.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_clusters) {
        return Err(Error::Parameter(format!(
            "label {l} out of range for {n_clusters} clusters"
        )));
    }
    let mut sums = vec![[0.0; HOURS]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (p, &l) in raw.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(mut s, n)| {
            (n > 0).then(|| {
                s.iter_mut().for_each(|v| *v /= n as f64);
                s
            })
        })
        .collect())
}
