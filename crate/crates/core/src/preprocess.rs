//! Zero filtering, per-profile normalisation and the two pre-binning
//! procedures (average monthly consumption and integral k-means).

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, KMeansOptions};
use crate::data::{peak_demand, total_demand, Hourly, ProfileSet, HOURS};
use crate::error::{Error, Result};

/// Line voltage used to turn current readings into consumption.
pub const LINE_VOLTAGE: f64 = 230.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalisationMethod {
    None,
    /// Divide by the L2 magnitude.
    UnitNorm,
    /// Subtract the daily minimum, then divide by the de-minned daily total.
    Deminning,
    /// Divide by the daily maximum.
    ZeroOne,
    /// Divide by the daily mean so the profile has mean 1.
    SaNorm,
}

impl NormalisationMethod {
    pub const ALL: [NormalisationMethod; 5] = [
        NormalisationMethod::None,
        NormalisationMethod::UnitNorm,
        NormalisationMethod::Deminning,
        NormalisationMethod::ZeroOne,
        NormalisationMethod::SaNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalisationMethod::None => "none",
            NormalisationMethod::UnitNorm => "unit_norm",
            NormalisationMethod::Deminning => "deminning",
            NormalisationMethod::ZeroOne => "zero_one",
            NormalisationMethod::SaNorm => "sa_norm",
        }
    }
}

impl std::fmt::Display for NormalisationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Drops all-zero profiles unless `keep_zeros` is set.
pub fn filter_zeros(set: &ProfileSet, keep_zeros: bool) -> Result<ProfileSet> {
    let out = if keep_zeros {
        set.clone()
    } else {
        let rows: Vec<usize> = (0..set.len())
            .filter(|&i| set.total_demand(i) > 0.0)
            .collect();
        set.subset(&rows)
    };
    if out.is_empty() {
        return Err(Error::Empty("no profiles left to cluster".into()));
    }
    Ok(out)
}

fn scaled(values: &Hourly, divisor: f64) -> Hourly {
    let mut out = *values;
    out.iter_mut().for_each(|v| *v /= divisor);
    out
}

/// Normalises one profile. Fails when the method's denominator is zero.
pub fn normalise(values: &Hourly, method: NormalisationMethod) -> Result<Hourly> {
    let fail = |reason: &str| Error::Unnormalisable {
        method: method.to_string(),
        reason: reason.to_string(),
    };
    match method {
        NormalisationMethod::None => Ok(*values),
        NormalisationMethod::UnitNorm => {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                Ok(scaled(values, norm))
            } else {
                Err(fail("zero magnitude"))
            }
        }
        NormalisationMethod::Deminning => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut out = *values;
            out.iter_mut().for_each(|v| *v -= min);
            let total: f64 = out.iter().sum();
            if total > 0.0 {
                out.iter_mut().for_each(|v| *v /= total);
                Ok(out)
            } else {
                Err(fail("constant profile has zero de-minned total"))
            }
        }
        NormalisationMethod::ZeroOne => {
            let max = peak_demand(values);
            if max > 0.0 {
                Ok(scaled(values, max))
            } else {
                Err(fail("zero maximum"))
            }
        }
        NormalisationMethod::SaNorm => {
            let mean = total_demand(values) / HOURS as f64;
            if mean > 0.0 {
                Ok(scaled(values, mean))
            } else {
                Err(fail("zero mean"))
            }
        }
    }
}

/// Clustering input for a list of rows of a profile set.
#[derive(Debug, Clone, Default)]
pub struct NormalisedRows {
    /// Row indices (into the source set) that were kept, in order.
    pub rows: Vec<usize>,
    /// One normalised vector per kept row.
    pub matrix: Vec<Vec<f64>>,
    /// Rows dropped as un-normalisable.
    pub excluded: Vec<usize>,
}

/// Normalises the given rows for clustering.
///
/// All-zero profiles only reach this point when zeros are retained; they
/// enter the clustering input as the zero vector. Any other profile the
/// method cannot normalise is excluded and listed in `excluded`.
pub fn normalise_rows(
    set: &ProfileSet,
    rows: &[usize],
    method: NormalisationMethod,
) -> NormalisedRows {
    let mut out = NormalisedRows::default();
    for &i in rows {
        let values = set.values(i);
        match normalise(values, method) {
            Ok(v) => {
                out.rows.push(i);
                out.matrix.push(v.to_vec());
            }
            Err(_) if set.total_demand(i) == 0.0 => {
                out.rows.push(i);
                out.matrix.push(vec![0.0; HOURS]);
            }
            Err(_) => out.excluded.push(i),
        }
    }
    out
}

/// Average monthly consumption of one household:
/// `(1/12) Σ_months Σ_days Σ_t 230 × l(t)`.
///
/// The result is in the formula's units (Volt-Ampere-hours).
pub fn amc<'a>(household_profiles: impl IntoIterator<Item = &'a Hourly>) -> Result<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for p in household_profiles {
        n += 1;
        sum += p.iter().map(|v| LINE_VOLTAGE * v).sum::<f64>();
    }
    if n == 0 {
        return Err(Error::Empty("household has no profiles".into()));
    }
    Ok(sum / 12.0)
}

/// Bin id (1-based) of every profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinAssignment {
    pub bins: Vec<usize>,
    pub n_bins: usize,
}

impl BinAssignment {
    /// A single bin containing every row.
    pub fn single(n_rows: usize) -> Self {
        BinAssignment {
            bins: vec![1; n_rows],
            n_bins: 1,
        }
    }

    pub fn members(&self, bin: usize) -> Vec<usize> {
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == bin)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_bins];
        for &b in &self.bins {
            counts[b - 1] += 1;
        }
        counts
    }
}

/// Lower edges of the AMC bins; bin `i` covers `[edges[i], edges[i+1])` and
/// the last bin is unbounded above.
pub fn validate_bin_edges(edges: &[f64]) -> Result<()> {
    if edges.is_empty() {
        return Err(Error::Config("at least one bin edge is required".into()));
    }
    if edges[0] != 0.0 {
        return Err(Error::Config(format!(
            "first bin edge must be 0 so bins cover [0, inf), got {}",
            edges[0]
        )));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("bin edges must be finite".into()));
    }
    if let Some(w) = edges.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "bin edges must be strictly ascending ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn bin_of(value: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e <= value).max(1)
}

/// Assigns every profile to the AMC bin of its household.
pub fn prebin_amc(set: &ProfileSet, edges: &[f64]) -> Result<BinAssignment> {
    validate_bin_edges(edges)?;
    let mut bins = vec![0; set.len()];
    for rows in set.households().values() {
        let value = amc(rows.iter().map(|&i| set.values(i)))?;
        let bin = bin_of(value, edges);
        for &i in rows {
            bins[i] = bin;
        }
    }
    Ok(BinAssignment {
        bins,
        n_bins: edges.len(),
    })
}

/// Cumulative sum of the unit-norm profile followed by the raw maximum.
/// An all-zero profile yields the zero vector.
pub fn integral_features(values: &Hourly) -> Vec<f64> {
    let unit = normalise(values, NormalisationMethod::UnitNorm).unwrap_or([0.0; HOURS]);
    let mut features = Vec::with_capacity(HOURS + 1);
    let mut acc = 0.0;
    for v in unit {
        acc += v;
        features.push(acc);
    }
    features.push(peak_demand(values));
    features
}

/// Bins profiles by k-means over integral features. Bin ids ascend with the
/// mean raw total demand of their members.
pub fn prebin_integral_kmeans(
    set: &ProfileSet,
    n_bins: usize,
    rng_seed: u64,
    options: &KMeansOptions,
) -> Result<BinAssignment> {
    if n_bins == 0 {
        return Err(Error::Parameter("n_bins must be at least 1".into()));
    }
    if set.len() < n_bins {
        return Err(Error::Parameter(format!(
            "{} profiles cannot fill {n_bins} bins",
            set.len()
        )));
    }
    let features: Vec<Vec<f64>> = set.all_values().iter().map(integral_features).collect();
    let fit = kmeans(&features, n_bins, rng_seed, options)?;

    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (i, &l) in fit.labels.iter().enumerate() {
        sums[l] += set.total_demand(i);
        counts[l] += 1;
    }
    let mean = |l: usize| {
        if counts[l] == 0 {
            f64::INFINITY
        } else {
            sums[l] / counts[l] as f64
        }
    };
    let mut order: Vec<usize> = (0..n_bins).collect();
    order.sort_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)));
    let mut relabel = vec![0; n_bins];
    for (rank, &l) in order.iter().enumerate() {
        relabel[l] = rank + 1;
    }
    Ok(BinAssignment {
        bins: fit.labels.iter().map(|&l| relabel[l]).collect(),
        n_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DailyLoadProfile;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn day(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Days::new(n)
    }

    fn spiked() -> Hourly {
        let mut v = [1.0; 24];
        v[18] = 5.0;
        v
    }

    #[test]
    fn filter_zeros_drops_all_zero_days() {
        let set = ProfileSet::from_profiles(vec![
            DailyLoadProfile::new("A", day(0), [1.0; 24]).unwrap(),
            DailyLoadProfile::new("A", day(1), [0.0; 24]).unwrap(),
            DailyLoadProfile::new("B", day(0), spiked()).unwrap(),
        ]);
        assert_eq!(filter_zeros(&set, false).unwrap().len(), 2);
        assert_eq!(filter_zeros(&set, true).unwrap(), set);
    }

    #[test]
    fn filter_zeros_on_all_zero_set_fails() {
        let set = ProfileSet::from_profiles(vec![
            DailyLoadProfile::new("A", day(0), [0.0; 24]).unwrap(),
            DailyLoadProfile::new("A", day(1), [0.0; 24]).unwrap(),
        ]);
        assert!(matches!(filter_zeros(&set, false), Err(Error::Empty(_))));
    }

    #[test]
    fn constant_profile_under_sa_norm_and_zero_one() {
        assert_eq!(
            normalise(&[2.0; 24], NormalisationMethod::SaNorm).unwrap(),
            [1.0; 24]
        );
        assert_eq!(
            normalise(&[2.0; 24], NormalisationMethod::ZeroOne).unwrap(),
            [1.0; 24]
        );
    }

    #[test]
    fn deminning_spike() {
        let out = normalise(&spiked(), NormalisationMethod::Deminning).unwrap();
        for (t, v) in out.iter().enumerate() {
            assert_eq!(*v, if t == 18 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn unnormalisable_profiles() {
        for m in [
            NormalisationMethod::UnitNorm,
            NormalisationMethod::SaNorm,
            NormalisationMethod::ZeroOne,
            NormalisationMethod::Deminning,
        ] {
            assert!(matches!(
                normalise(&[0.0; 24], m),
                Err(Error::Unnormalisable { .. })
            ));
        }
        assert!(normalise(&[3.0; 24], NormalisationMethod::Deminning).is_err());
        assert_eq!(
            normalise(&[0.0; 24], NormalisationMethod::None).unwrap(),
            [0.0; 24]
        );
    }

    #[test]
    fn normalise_rows_counts_exclusions() {
        let set = ProfileSet::from_profiles(vec![
            DailyLoadProfile::new("A", day(0), [3.0; 24]).unwrap(),
            DailyLoadProfile::new("A", day(1), [0.0; 24]).unwrap(),
            DailyLoadProfile::new("B", day(0), spiked()).unwrap(),
        ]);
        let out = normalise_rows(&set, &[0, 1, 2], NormalisationMethod::Deminning);
        assert_eq!(out.rows, vec![1, 2]);
        assert_eq!(out.excluded, vec![0]);
        assert_eq!(out.matrix[0], vec![0.0; 24]);
    }

    #[test]
    fn amc_closed_forms() {
        let year = vec![[1.0; 24]; 365];
        assert!((amc(year.iter()).unwrap() - 167_900.0).abs() < 1e-9);
        assert_eq!(amc([[0.0; 24]; 3].iter()).unwrap(), 0.0);
        assert!((amc([[1.0; 24]].iter()).unwrap() - 460.0).abs() < 1e-12);
        assert!(amc(std::iter::empty()).is_err());
    }

    #[test]
    fn amc_on_edge_goes_to_higher_bin() {
        let edges = [0.0, 460.0, 1000.0];
        assert_eq!(bin_of(460.0, &edges), 2);
        assert_eq!(bin_of(459.999, &edges), 1);
        assert_eq!(bin_of(0.0, &edges), 1);
        assert_eq!(bin_of(1e9, &edges), 3);

        // One day of 24 A·h gives AMC exactly 460.
        let set =
            ProfileSet::from_profiles(vec![DailyLoadProfile::new("A", day(0), [1.0; 24]).unwrap()]);
        assert_eq!(prebin_amc(&set, &edges).unwrap().bins, vec![2]);
    }

    #[test]
    fn prebin_amc_keeps_households_together_and_separates_straddlers() {
        // Household A: 2 days of 1 A → AMC 920. Household B: 2 days of 3 A → 2760.
        let set = ProfileSet::from_profiles(vec![
            DailyLoadProfile::new("A", day(0), [1.0; 24]).unwrap(),
            DailyLoadProfile::new("B", day(0), [3.0; 24]).unwrap(),
            DailyLoadProfile::new("A", day(1), [1.0; 24]).unwrap(),
            DailyLoadProfile::new("B", day(1), [3.0; 24]).unwrap(),
        ]);
        let bins = prebin_amc(&set, &[0.0, 1000.0]).unwrap();
        assert_eq!(bins.bins, vec![1, 2, 1, 2]);
        assert_eq!(bins.counts(), vec![2, 2]);
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(validate_bin_edges(&[0.0, 5.0, 5.0]).is_err());
        assert!(validate_bin_edges(&[0.0, 5.0, 4.0]).is_err());
        assert!(validate_bin_edges(&[1.0, 5.0]).is_err());
        assert!(validate_bin_edges(&[]).is_err());
    }

    #[test]
    fn integral_features_shape() {
        let f = integral_features(&spiked());
        assert_eq!(f.len(), 25);
        assert!(f[..24].windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(f[24], 5.0);
        assert_eq!(integral_features(&[0.0; 24]), vec![0.0; 25]);
    }

    #[test]
    fn integral_kmeans_needs_enough_profiles() {
        let set =
            ProfileSet::from_profiles(vec![DailyLoadProfile::new("A", day(0), [1.0; 24]).unwrap()]);
        assert!(prebin_integral_kmeans(&set, 2, 0, &KMeansOptions::default()).is_err());
    }

    fn profile_strategy() -> impl Strategy<Value = Hourly> {
        proptest::array::uniform24(0.0f64..50.0)
    }

    proptest! {
        #[test]
        fn normalisation_invariants(v in profile_strategy()) {
            prop_assume!(v.iter().any(|x| *x > 0.0));
            let argmax = |x: &Hourly| x.iter().enumerate()
                .fold((0, f64::MIN), |acc, (i, &y)| if y > acc.1 { (i, y) } else { acc }).0;

            let u = normalise(&v, NormalisationMethod::UnitNorm).unwrap();
            prop_assert!((u.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&u), argmax(&v));

            let z = normalise(&v, NormalisationMethod::ZeroOne).unwrap();
            prop_assert!(z.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert_eq!(peak_demand(&z), 1.0);
            prop_assert_eq!(argmax(&z), argmax(&v));

            let s = normalise(&v, NormalisationMethod::SaNorm).unwrap();
            prop_assert!((total_demand(&s) / 24.0 - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&s), argmax(&v));

            if let Ok(d) = normalise(&v, NormalisationMethod::Deminning) {
                prop_assert!((total_demand(&d) - 1.0).abs() < 1e-9);
                prop_assert_eq!(d.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            }
        }
    }
}
