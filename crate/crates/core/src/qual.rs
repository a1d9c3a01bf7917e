//! Qualitative cluster measures: consumption errors, peak coincidence,
//! feature entropy and usability checks, with size-weighted aggregation
//! over the clusters that pass the membership threshold.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::data::{peak_demand, total_demand, Hourly, ProfileSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualConfig {
    /// Clusters need strictly more members than this to count.
    pub threshold: usize,
    pub max_clusters: usize,
    /// An RDLP with total demand below this represents zero consumption.
    pub zero_tol: f64,
}

impl Default for QualConfig {
    fn default() -> Self {
        QualConfig {
            threshold: 10_490,
            max_clusters: 220,
            zero_tol: 1e-6,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionErrors {
    pub mape: f64,
    pub mdape: f64,
    pub mdlq: f64,
    pub mdsyma: f64,
    /// Members with zero demand, left out of every error.
    pub excluded: usize,
}

/// Relative errors of a cluster's demand against its members' demands.
pub fn consumption_errors(member_demands: &[f64], rdlp_demand: f64) -> Result<ConsumptionErrors> {
    if !(rdlp_demand > 0.0 && rdlp_demand.is_finite()) {
        return Err(Error::Metric(format!(
            "cluster demand must be positive, got {rdlp_demand}"
        )));
    }
    let used: Vec<f64> = member_demands
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .collect();
    let excluded = member_demands.len() - used.len();
    if used.is_empty() {
        return Err(Error::Metric("no member has positive demand".into()));
    }
    let mut ape: Vec<f64> = used.iter().map(|d| (d - rdlp_demand).abs() / d).collect();
    let mut log_q: Vec<f64> = used.iter().map(|d| (rdlp_demand / d).ln()).collect();
    let mut abs_log_q: Vec<f64> = log_q.iter().map(|v| v.abs()).collect();
    let mape = 100.0 * ape.iter().sum::<f64>() / ape.len() as f64;
    Ok(ConsumptionErrors {
        mape,
        mdape: 100.0 * median(&mut ape),
        mdlq: median(&mut log_q),
        mdsyma: 100.0 * (median(&mut abs_log_q).exp() - 1.0),
        excluded,
    })
}

/// Peak hours: local maxima above half the daily maximum. A plateau counts
/// once, at its first hour; the first hour of the global maximum is always a
/// peak. An all-zero profile has no peaks.
pub fn detect_peaks(profile: &Hourly) -> Vec<usize> {
    let max = peak_demand(profile);
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = 0.5 * max;
    let n = profile.len();
    let mut peaks = Vec::new();
    let mut start = 0;
    while start < n {
        let v = profile[start];
        let mut end = start;
        while end + 1 < n && profile[end + 1] == v {
            end += 1;
        }
        let left_lower = start == 0 || profile[start - 1] < v;
        let right_lower = end == n - 1 || profile[end + 1] < v;
        if v > threshold && left_lower && right_lower {
            peaks.push(start);
        }
        start = end + 1;
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCoincidence {
    /// Mean count of shared peak hours per member.
    pub mpc: f64,
    /// `mpc` divided by the number of cluster peaks, in `[0, 1]`.
    pub ratio: f64,
    /// The cluster profile has no peaks; `ratio` is 0.
    pub no_peaks: bool,
}

pub fn mpc_ratio<'a>(
    members: impl IntoIterator<Item = &'a Hourly>,
    rdlp: &Hourly,
) -> PeakCoincidence {
    let cluster_peaks = detect_peaks(rdlp);
    let mut n = 0usize;
    let mut shared = 0usize;
    for m in members {
        n += 1;
        shared += detect_peaks(m)
            .iter()
            .filter(|t| cluster_peaks.contains(t))
            .count();
    }
    if cluster_peaks.is_empty() || n == 0 {
        return PeakCoincidence {
            mpc: 0.0,
            ratio: 0.0,
            no_peaks: cluster_peaks.is_empty(),
        };
    }
    let mpc = shared as f64 / n as f64;
    PeakCoincidence {
        mpc,
        ratio: mpc / cluster_peaks.len() as f64,
        no_peaks: false,
    }
}

/// Shannon entropy in bits of the within-cluster distribution of a
/// categorical feature taking values `0..n_feature_values`.
pub fn cluster_entropy(values: &[usize], n_feature_values: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; n_feature_values];
    for &v in values {
        counts[v] += 1;
    }
    let n = values.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // -0.0 for a single populated value.
    h.max(0.0)
}

/// Percentile bin 0..=99 of every value. Tied values share the bin of their
/// lowest rank; the largest distinct value lands in bin 99.
pub fn percentile_bins(values: &[f64]) -> Vec<u8> {
    let n = values.len();
    if n <= 1 {
        return vec![0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut bins = vec![0u8; n];
    let mut rank = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[i] != values[order[pos - 1]] {
            rank = pos;
        }
        bins[i] = ((100 * rank) / (n - 1)).min(99) as u8;
    }
    bins
}

/// `(total_pct, peak_pct)` of every profile, over the whole set.
pub fn demand_percentile_features(set: &ProfileSet) -> Vec<(u8, u8)> {
    let totals: Vec<f64> = (0..set.len()).map(|i| set.total_demand(i)).collect();
    let peaks: Vec<f64> = (0..set.len()).map(|i| set.peak_demand(i)).collect();
    percentile_bins(&totals)
        .into_iter()
        .zip(percentile_bins(&peaks))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usability {
    pub pct_above_threshold: f64,
    pub zero_profile_represented: bool,
    pub n_clusters: usize,
    pub n_clusters_ok: bool,
}

/// Usability of a cluster set from its sizes and RDLP total demands.
/// Empty clusters are not counted.
pub fn usability_scores(
    sizes: &[usize],
    rdlp_totals: &[Option<f64>],
    cfg: &QualConfig,
) -> Usability {
    let live: Vec<(usize, Option<f64>)> = sizes
        .iter()
        .zip(rdlp_totals)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &t)| (s, t))
        .collect();
    let n_clusters = live.len();
    let above = live.iter().filter(|(s, _)| *s > cfg.threshold).count();
    Usability {
        pct_above_threshold: if n_clusters == 0 {
            0.0
        } else {
            100.0 * above as f64 / n_clusters as f64
        },
        zero_profile_represented: live
            .iter()
            .any(|(_, t)| t.is_some_and(|t| t < cfg.zero_tol)),
        n_clusters,
        n_clusters_ok: n_clusters <= cfg.max_clusters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQualScores {
    pub cluster_id: usize,
    pub member_count: usize,
    pub rdlp_total: f64,
    pub total_error: Option<ConsumptionErrors>,
    pub peak_error: Option<ConsumptionErrors>,
    pub mpc_ratio: f64,
    pub no_peaks: bool,
    pub entropy_weekday: f64,
    pub entropy_month: f64,
    pub entropy_total_demand: f64,
    pub entropy_peak_demand: f64,
}

/// Scores one cluster. `members` index into `set`; `percentiles` is
/// `demand_percentile_features(set)`.
pub fn cluster_scores(
    set: &ProfileSet,
    cluster_id: usize,
    members: &[usize],
    rdlp: &Hourly,
    percentiles: &[(u8, u8)],
) -> ClusterQualScores {
    let totals: Vec<f64> = members.iter().map(|&i| set.total_demand(i)).collect();
    let peaks: Vec<f64> = members.iter().map(|&i| set.peak_demand(i)).collect();
    let pc = mpc_ratio(members.iter().map(|&i| set.values(i)), rdlp);
    let weekday: Vec<usize> = members
        .iter()
        .map(|&i| set.weekday(i).num_days_from_monday() as usize)
        .collect();
    let month: Vec<usize> = members
        .iter()
        .map(|&i| set.date(i).month0() as usize)
        .collect();
    let total_pct: Vec<usize> = members.iter().map(|&i| percentiles[i].0 as usize).collect();
    let peak_pct: Vec<usize> = members.iter().map(|&i| percentiles[i].1 as usize).collect();
    ClusterQualScores {
        cluster_id,
        member_count: members.len(),
        rdlp_total: total_demand(rdlp),
        total_error: consumption_errors(&totals, total_demand(rdlp)).ok(),
        peak_error: consumption_errors(&peaks, peak_demand(rdlp)).ok(),
        mpc_ratio: pc.ratio,
        no_peaks: pc.no_peaks,
        entropy_weekday: cluster_entropy(&weekday, 7),
        entropy_month: cluster_entropy(&month, 12),
        entropy_total_demand: cluster_entropy(&total_pct, 100),
        entropy_peak_demand: cluster_entropy(&peak_pct, 100),
    }
}

/// Set-level qualitative scores. Mean measures are size-weighted over the
/// qualifying clusters on which they are defined; `None` when undefined on
/// all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetQualScores {
    pub mape_total: Option<f64>,
    pub mdape_total: Option<f64>,
    pub mdlq_total: Option<f64>,
    pub mdsyma_total: Option<f64>,
    pub mape_peak: Option<f64>,
    pub mdape_peak: Option<f64>,
    pub mdlq_peak: Option<f64>,
    pub mdsyma_peak: Option<f64>,
    pub mpc_ratio: f64,
    pub entropy_weekday: f64,
    pub entropy_month: f64,
    pub entropy_total_demand: f64,
    pub entropy_peak_demand: f64,
    pub pct_clusters_above_threshold: f64,
    pub zero_profile_represented: bool,
    pub n_clusters: usize,
    pub n_clusters_ok: bool,
    pub n_qualifying: usize,
    /// Zero-demand members left out of consumption errors, over qualifying
    /// clusters.
    pub excluded_zero_members: usize,
    /// Qualifying clusters whose RDLP has no peaks.
    pub clusters_without_peaks: usize,
}

fn weighted(items: impl Iterator<Item = (usize, Option<f64>)>) -> Option<f64> {
    let (num, den) = items.fold((0.0, 0usize), |(num, den), (w, v)| match v {
        Some(v) => (num + w as f64 * v, den + w),
        None => (num, den),
    });
    (den > 0).then(|| num / den as f64)
}

pub fn aggregate_set_scores(
    per_cluster: &[ClusterQualScores],
    cfg: &QualConfig,
) -> Result<SetQualScores> {
    let sizes: Vec<usize> = per_cluster.iter().map(|c| c.member_count).collect();
    let totals: Vec<Option<f64>> = per_cluster.iter().map(|c| Some(c.rdlp_total)).collect();
    let usability = usability_scores(&sizes, &totals, cfg);

    let q: Vec<&ClusterQualScores> = per_cluster
        .iter()
        .filter(|c| c.member_count > cfg.threshold)
        .collect();
    if q.is_empty() {
        return Err(Error::Metric(format!(
            "no cluster has more than {} members",
            cfg.threshold
        )));
    }
    let err = |sel: fn(&ClusterQualScores) -> Option<f64>| {
        weighted(q.iter().map(|c| (c.member_count, sel(c))))
    };
    let val = |sel: fn(&ClusterQualScores) -> f64| {
        weighted(q.iter().map(|c| (c.member_count, Some(sel(c))))).unwrap_or(0.0)
    };
    Ok(SetQualScores {
        mape_total: err(|c| c.total_error.as_ref().map(|e| e.mape)),
        mdape_total: err(|c| c.total_error.as_ref().map(|e| e.mdape)),
        mdlq_total: err(|c| c.total_error.as_ref().map(|e| e.mdlq)),
        mdsyma_total: err(|c| c.total_error.as_ref().map(|e| e.mdsyma)),
        mape_peak: err(|c| c.peak_error.as_ref().map(|e| e.mape)),
        mdape_peak: err(|c| c.peak_error.as_ref().map(|e| e.mdape)),
        mdlq_peak: err(|c| c.peak_error.as_ref().map(|e| e.mdlq)),
        mdsyma_peak: err(|c| c.peak_error.as_ref().map(|e| e.mdsyma)),
        mpc_ratio: val(|c| c.mpc_ratio),
        entropy_weekday: val(|c| c.entropy_weekday),
        entropy_month: val(|c| c.entropy_month),
        entropy_total_demand: val(|c| c.entropy_total_demand),
        entropy_peak_demand: val(|c| c.entropy_peak_demand),
        pct_clusters_above_threshold: usability.pct_above_threshold,
        zero_profile_represented: usability.zero_profile_represented,
        n_clusters: usability.n_clusters,
        n_clusters_ok: usability.n_clusters_ok,
        n_qualifying: q.len(),
        excluded_zero_members: q
            .iter()
            .map(|c| {
                c.total_error
                    .as_ref()
                    .map_or(c.member_count, |e| e.excluded)
            })
            .sum(),
        clusters_without_peaks: q.iter().filter(|c| c.no_peaks).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spikes(at: &[(usize, f64)], base: f64) -> Hourly {
        let mut v = [base; 24];
        for &(t, x) in at {
            v[t] = x;
        }
        v
    }

    #[test]
    fn errors_identity_is_zero() {
        let e = consumption_errors(&[5.0, 5.0, 5.0], 5.0).unwrap();
        assert_eq!((e.mape, e.mdape, e.mdlq, e.mdsyma), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn errors_uniform_ratio_two() {
        let e = consumption_errors(&[1.0, 2.0, 4.0], 0.0).err();
        assert!(e.is_some());
        let e = consumption_errors(&[3.0, 3.0], 6.0).unwrap();
        assert!((e.mdlq - 2f64.ln()).abs() < 1e-12);
        assert!((e.mdsyma - 100.0).abs() < 1e-9);
    }

    #[test]
    fn errors_two_members() {
        let e = consumption_errors(&[10.0, 20.0], 15.0).unwrap();
        assert!((e.mape - 37.5).abs() < 1e-12);
        assert!((e.mdape - 37.5).abs() < 1e-12);
    }

    #[test]
    fn zero_members_are_excluded() {
        let e = consumption_errors(&[0.0, 10.0, 0.0], 10.0).unwrap();
        assert_eq!(e.excluded, 2);
        assert_eq!(e.mape, 0.0);
        assert!(consumption_errors(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn peaks_examples() {
        assert_eq!(detect_peaks(&spikes(&[(18, 5.0)], 1.0)), vec![18]);
        assert_eq!(detect_peaks(&[2.0; 24]), vec![0]);
        assert_eq!(
            detect_peaks(&spikes(&[(7, 5.0), (19, 4.9)], 1.0)),
            vec![7, 19]
        );
        assert!(detect_peaks(&[0.0; 24]).is_empty());
        // A small bump below half the max is not a peak.
        assert_eq!(detect_peaks(&spikes(&[(3, 2.0), (12, 6.0)], 1.0)), vec![12]);
        // Plateau peak counts once, at its first hour.
        assert_eq!(
            detect_peaks(&spikes(&[(9, 4.0), (10, 4.0), (11, 4.0)], 1.0)),
            vec![9]
        );
    }

    #[test]
    fn peak_coincidence_examples() {
        let rdlp = spikes(&[(7, 5.0), (19, 4.9)], 1.0);
        let full = mpc_ratio([&rdlp, &rdlp], &rdlp);
        assert_eq!(full.ratio, 1.0);

        let other = spikes(&[(3, 5.0)], 1.0);
        assert_eq!(mpc_ratio([&other], &rdlp).ratio, 0.0);

        let a = spikes(&[(7, 5.0)], 1.0);
        let b = spikes(&[(7, 5.0), (19, 4.0)], 1.0);
        let pc = mpc_ratio([&a, &b], &rdlp);
        assert!((pc.mpc - 1.5).abs() < 1e-12);
        assert!((pc.ratio - 0.75).abs() < 1e-12);

        let zero = mpc_ratio([&a], &[0.0; 24]);
        assert!(zero.no_peaks);
        assert_eq!(zero.ratio, 0.0);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(cluster_entropy(&[6, 6, 6], 7), 0.0);
        let uniform: Vec<usize> = (0..70).map(|i| i % 7).collect();
        assert!((cluster_entropy(&uniform, 7) - 7f64.log2()).abs() < 1e-12);
        assert!((cluster_entropy(&[0, 0, 5, 5], 7) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn percentile_examples() {
        let values: Vec<f64> = (0..200).map(|i| (i * 7 % 200) as f64 + 0.5).collect();
        let bins = percentile_bins(&values);
        let mut counts = [0usize; 100];
        bins.iter().for_each(|&b| counts[b as usize] += 1);
        assert!(counts.iter().all(|&c| c == 2));

        let small = percentile_bins(&[3.0, 1.0, 2.0, 9.0]);
        assert_eq!(small[1], 0);
        assert_eq!(small[3], 99);
        assert_eq!(percentile_bins(&[4.0, 4.0]), vec![0, 0]);
    }

    #[test]
    fn usability_examples() {
        let cfg = QualConfig {
            threshold: 10,
            ..Default::default()
        };
        let sizes = [20, 11, 5, 30, 10];
        let totals = [Some(1.0); 5];
        let u = usability_scores(&sizes, &totals, &cfg);
        assert_eq!(u.pct_above_threshold, 60.0);
        assert!(!u.zero_profile_represented);

        let u = usability_scores(&[4, 9], &[Some(0.0), Some(3.0)], &cfg);
        assert!(u.zero_profile_represented);

        let many = vec![1; 221];
        let u = usability_scores(&many, &vec![Some(1.0); 221], &QualConfig::default());
        assert!(!u.n_clusters_ok);
        let u = usability_scores(&many[..220], &vec![Some(1.0); 220], &QualConfig::default());
        assert!(u.n_clusters_ok);
    }

    fn scored(size: usize, value: f64) -> ClusterQualScores {
        ClusterQualScores {
            cluster_id: 0,
            member_count: size,
            rdlp_total: 10.0,
            total_error: None,
            peak_error: None,
            mpc_ratio: value,
            no_peaks: false,
            entropy_weekday: value,
            entropy_month: value,
            entropy_total_demand: value,
            entropy_peak_demand: value,
        }
    }

    #[test]
    fn aggregation_examples() {
        let cfg = QualConfig::default();
        let one = aggregate_set_scores(&[scored(20_000, 2.5), scored(5, 100.0)], &cfg).unwrap();
        assert_eq!(one.entropy_weekday, 2.5);
        assert_eq!(one.n_qualifying, 1);
        assert_eq!(one.pct_clusters_above_threshold, 50.0);

        let two = aggregate_set_scores(&[scored(20_000, 2.0), scored(20_000, 4.0)], &cfg).unwrap();
        assert_eq!(two.mpc_ratio, 3.0);

        let w = aggregate_set_scores(&[scored(30_000, 1.0), scored(10_491, 3.0)], &cfg).unwrap();
        let expected = (30_000.0 + 10_491.0 * 3.0) / 40_491.0;
        assert!((w.entropy_month - expected).abs() < 1e-12);
        assert!((w.entropy_month - 1.518).abs() < 1e-3);

        assert!(aggregate_set_scores(&[scored(10_490, 1.0)], &cfg).is_err());
    }
}
