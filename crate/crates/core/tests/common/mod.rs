//! Brute-force reference implementations and fixtures shared by the
//! integration suites. Written from the metric definitions, without reuse
//! of library helpers.
#![allow(dead_code)]

use std::collections::HashMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdlp::data::{DailyLoadProfile, Hourly, ProfileSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

fn members(labels: &[usize], k: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] == k).collect()
}

fn n_labels(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

pub fn oracle_dbi(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let live: Vec<usize> = (0..centroids.len())
        .filter(|&k| !members(labels, k).is_empty())
        .collect();
    let spread = |k: usize| {
        let m = members(labels, k);
        m.iter().map(|&i| euclid(&x[i], &centroids[k])).sum::<f64>() / m.len() as f64
    };
    let mut total = 0.0;
    for &i in &live {
        let mut best = f64::NEG_INFINITY;
        for &j in &live {
            if i != j {
                let r = (spread(i) + spread(j)) / euclid(&centroids[i], &centroids[j]);
                if r > best {
                    best = r;
                }
            }
        }
        total += best;
    }
    total / live.len() as f64
}

pub fn oracle_mia(x: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let mut terms = Vec::new();
    for (k, c) in centroids.iter().enumerate() {
        let m = members(labels, k);
        if m.is_empty() {
            continue;
        }
        let d2: f64 = m.iter().map(|&i| euclid(&x[i], c).powi(2)).sum();
        terms.push(d2 / m.len() as f64);
    }
    (terms.iter().sum::<f64>() / terms.len() as f64).sqrt()
}

pub fn oracle_silhouette(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = n_labels(labels);
    let mut total = 0.0;
    for i in 0..x.len() {
        let own = members(labels, labels[i]);
        if own.len() == 1 {
            continue;
        }
        let a = own
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| euclid(&x[i], &x[j]))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c == labels[i] {
                continue;
            }
            let other = members(labels, c);
            if other.is_empty() {
                continue;
            }
            let d = other.iter().map(|&j| euclid(&x[i], &x[j])).sum::<f64>() / other.len() as f64;
            b = b.min(d);
        }
        let s = if a.max(b) == 0.0 {
            0.0
        } else {
            (b - a) / a.max(b)
        };
        total += s;
    }
    total / x.len() as f64
}

fn oracle_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `(mape, mdape, mdlq, mdsyma)` over members with positive demand.
pub fn oracle_errors(member: &[f64], rdlp: f64) -> (f64, f64, f64, f64) {
    let d: Vec<f64> = member.iter().copied().filter(|v| *v > 0.0).collect();
    let ape: Vec<f64> = d.iter().map(|dj| ((dj - rdlp) / dj).abs()).collect();
    let lq: Vec<f64> = d.iter().map(|dj| (rdlp / dj).ln()).collect();
    let alq: Vec<f64> = lq.iter().map(|v| v.abs()).collect();
    (
        100.0 * ape.iter().sum::<f64>() / ape.len() as f64,
        100.0 * oracle_median(&ape),
        oracle_median(&lq),
        100.0 * (oracle_median(&alq).exp() - 1.0),
    )
}

/// Peak hours by scanning every hour and walking its plateau.
pub fn oracle_peaks(p: &Hourly) -> Vec<usize> {
    let max = p.iter().cloned().fold(f64::MIN, f64::max);
    if max <= 0.0 {
        return vec![];
    }
    let mut out = vec![];
    for t in 0..24 {
        if p[t] <= max / 2.0 {
            continue;
        }
        if t > 0 && p[t - 1] == p[t] {
            continue;
        }
        let mut e = t;
        while e < 23 && p[e + 1] == p[t] {
            e += 1;
        }
        let left_ok = t == 0 || p[t - 1] < p[t];
        let right_ok = e == 23 || p[e + 1] < p[t];
        if left_ok && right_ok {
            out.push(t);
        }
    }
    out
}

pub fn oracle_mpc_ratio(members: &[Hourly], rdlp: &Hourly) -> f64 {
    let rp = oracle_peaks(rdlp);
    if rp.is_empty() {
        return 0.0;
    }
    let mut hits = 0.0;
    for m in members {
        for t in oracle_peaks(m) {
            if rp.contains(&t) {
                hits += 1.0;
            }
        }
    }
    hits / members.len() as f64 / rp.len() as f64
}

pub fn oracle_entropy(values: &[usize]) -> f64 {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1.0;
    }
    let n = values.len() as f64;
    -counts
        .values()
        .map(|c| (c / n) * (c / n).log2())
        .sum::<f64>()
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> f64 {
    let comb2 = |n: f64| n * (n - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ra: HashMap<usize, f64> = HashMap::new();
    let mut rb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sa: f64 = ra.values().map(|&n| comb2(n)).sum();
    let sb: f64 = rb.values().map(|&n| comb2(n)).sum();
    let expected = sa * sb / comb2(a.len() as f64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Random points, labels covering every cluster, and member-mean centroids.
pub struct Instance {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(10..=200);
    let k = rng.random_range(2..=5);
    let dim = rng.random_range(2..=24);
    let centres: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    let x: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            centres[l]
                .iter()
                .map(|c| c + rng.random_range(-1.5..1.5))
                .collect()
        })
        .collect();
    let centroids = (0..k)
        .map(|c| {
            let m = members(&labels, c);
            (0..dim)
                .map(|d| m.iter().map(|&i| x[i][d]).sum::<f64>() / m.len() as f64)
                .collect()
        })
        .collect();
    Instance {
        x,
        labels,
        centroids,
    }
}

pub fn random_profile(rng: &mut ChaCha8Rng) -> Hourly {
    let mut p = [0.0; 24];
    for v in p.iter_mut() {
        // Coarse values make ties and plateaus common.
        *v = if rng.random_bool(0.5) {
            rng.random_range(0..6) as f64
        } else {
            rng.random_range(0.0..6.0)
        };
    }
    p
}

pub fn day(offset: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Days::new(offset)
}

/// Set of profiles from `(household, day offset, values)` triples.
pub fn set_of(rows: &[(&str, u64, Hourly)]) -> ProfileSet {
    ProfileSet::from_profiles(
        rows.iter()
            .map(|(h, d, v)| DailyLoadProfile::new(*h, day(*d), *v).unwrap()),
    )
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
