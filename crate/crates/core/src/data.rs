//! Daily load profiles, columnar profile sets, CSV ingestion and the
//! synthetic dataset generator.
//!
//! A daily load profile is one household-day of 24 hourly current readings
//! in Amperes. Hour `t` covers the interval `t:00:00 - t:59:59`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Readings per daily load profile.
pub const HOURS: usize = 24;

/// One 24-hour vector of readings.
pub type Hourly = [f64; HOURS];

pub fn total_demand(values: &Hourly) -> f64 {
    values.iter().sum()
}

pub fn peak_demand(values: &Hourly) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn check_readings(values: &Hourly) -> Result<()> {
    for (t, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidProfile(format!(
                "reading at h{t} is not finite"
            )));
        }
        if *v < 0.0 {
            return Err(Error::InvalidProfile(format!(
                "reading at h{t} is negative ({v})"
            )));
        }
    }
    Ok(())
}

/// One household-day of hourly current readings.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyLoadProfile {
    household_id: String,
    date: NaiveDate,
    values: Hourly,
}

impl DailyLoadProfile {
    pub fn new(household_id: impl Into<String>, date: NaiveDate, values: Hourly) -> Result<Self> {
        check_readings(&values)?;
        Ok(Self {
            household_id: household_id.into(),
            date,
            values,
        })
    }

    pub fn household_id(&self) -> &str {
        &self.household_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn values(&self) -> &Hourly {
        &self.values
    }

    pub fn total_demand(&self) -> f64 {
        total_demand(&self.values)
    }

    pub fn peak_demand(&self) -> f64 {
        peak_demand(&self.values)
    }
}

/// Columnar collection of daily load profiles with derived calendar features.
///
/// Immutable once built. Row order is the order profiles were supplied in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileSet {
    households: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Vec<Hourly>,
    weekdays: Vec<Weekday>,
    months: Vec<u32>,
}

impl ProfileSet {
    pub fn from_profiles(profiles: impl IntoIterator<Item = DailyLoadProfile>) -> Self {
        let mut set = ProfileSet::default();
        for p in profiles {
            set.push(p);
        }
        set
    }

    fn push(&mut self, p: DailyLoadProfile) {
        self.weekdays.push(p.date.weekday());
        self.months.push(p.date.month());
        self.dates.push(p.date);
        self.households.push(p.household_id);
        self.values.push(p.values);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn household(&self, i: usize) -> &str {
        &self.households[i]
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.dates[i]
    }

    pub fn values(&self, i: usize) -> &Hourly {
        &self.values[i]
    }

    pub fn all_values(&self) -> &[Hourly] {
        &self.values
    }

    pub fn weekday(&self, i: usize) -> Weekday {
        self.weekdays[i]
    }

    /// Calendar month, 1..=12.
    pub fn month(&self, i: usize) -> u32 {
        self.months[i]
    }

    pub fn total_demand(&self, i: usize) -> f64 {
        total_demand(&self.values[i])
    }

    pub fn peak_demand(&self, i: usize) -> f64 {
        peak_demand(&self.values[i])
    }

    pub fn profile(&self, i: usize) -> DailyLoadProfile {
        DailyLoadProfile {
            household_id: self.households[i].clone(),
            date: self.dates[i],
            values: self.values[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = DailyLoadProfile> + '_ {
        (0..self.len()).map(move |i| self.profile(i))
    }

    /// Row indices of every profile, grouped by household.
    pub fn households(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, h) in self.households.iter().enumerate() {
            groups.entry(h.as_str()).or_default().push(i);
        }
        groups
    }

    /// New set holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> ProfileSet {
        ProfileSet::from_profiles(rows.iter().map(|&i| self.profile(i)))
    }
}

const CSV_DATE_FORMAT: &str = "%Y-%m-%d";

fn csv_header() -> Vec<String> {
    let mut header = vec!["household_id".to_string(), "date".to_string()];
    header.extend((0..HOURS).map(|t| format!("h{t}")));
    header
}

/// Reads a profile CSV (`household_id,date,h0,...,h23`).
pub fn load_csv(path: impl AsRef<Path>) -> Result<ProfileSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<ProfileSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!(
                "header must be household_id,date,h0..h23, got {} columns starting {:?}",
                header.len(),
                header.iter().take(3).collect::<Vec<_>>()
            ),
        });
    }

    let mut set = ProfileSet::default();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::MalformedRow { row, message };

        if record.len() != HOURS + 2 {
            return Err(bad(format!(
                "expected {} columns, found {}",
                HOURS + 2,
                record.len()
            )));
        }
        let household = record[0].to_string();
        if household.is_empty() {
            return Err(bad("empty household_id".into()));
        }
        let date = NaiveDate::parse_from_str(&record[1], CSV_DATE_FORMAT)
            .map_err(|e| bad(format!("unparsable date {:?}: {e}", &record[1])))?;
        let mut values = [0.0; HOURS];
        for (t, v) in values.iter_mut().enumerate() {
            let field = &record[t + 2];
            *v = field
                .parse::<f64>()
                .map_err(|_| bad(format!("h{t}: non-numeric reading {field:?}")))?;
        }
        let profile =
            DailyLoadProfile::new(household, date, values).map_err(|e| bad(e.to_string()))?;
        set.push(profile);
    }
    Ok(set)
}

/// Writes a profile CSV in the same format `load_csv` reads. Readings use the
/// shortest decimal form that round-trips exactly.
pub fn write_csv(set: &ProfileSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_csv_to(set, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to(set: &ProfileSet, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(csv_header())?;
    for i in 0..set.len() {
        let mut row = Vec::with_capacity(HOURS + 2);
        row.push(set.household(i).to_string());
        row.push(set.date(i).format(CSV_DATE_FORMAT).to_string());
        row.extend(set.values(i).iter().map(|v| format!("{v}")));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// A consumption behaviour used by the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    #[serde(default)]
    pub name: String,
    /// Shape template, 24 non-negative entries.
    pub template: Vec<f64>,
    /// Inclusive `[low, high]` range of the per-household scale factor.
    pub amplitude: [f64; 2],
    /// Standard deviation of additive Gaussian noise per reading, in Amperes.
    #[serde(default)]
    pub noise: f64,
}

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date")
}

/// Parameters of a synthetic dataset with known ground-truth behaviours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_households: usize,
    pub days: usize,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    pub rng_seed: u64,
    pub archetypes: Vec<Archetype>,
}

impl SyntheticSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_households == 0 {
            return Err(Error::Config("n_households must be at least 1".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("days must be at least 1".into()));
        }
        if self.archetypes.is_empty() {
            return Err(Error::Config("at least one archetype is required".into()));
        }
        for (k, a) in self.archetypes.iter().enumerate() {
            if a.template.len() != HOURS {
                return Err(Error::Config(format!(
                    "archetype {k}: template has {} entries, expected {HOURS}",
                    a.template.len()
                )));
            }
            if a.template.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!(
                    "archetype {k}: template entries must be finite and non-negative"
                )));
            }
            let [lo, hi] = a.amplitude;
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::Config(format!(
                    "archetype {k}: amplitude range must satisfy 0 <= low <= high"
                )));
            }
            if !(a.noise.is_finite() && a.noise >= 0.0) {
                return Err(Error::Config(format!("archetype {k}: noise must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Synthetic profiles together with the archetype index of every row.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub set: ProfileSet,
    pub archetypes: Vec<usize>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ProfileSet> {
    generate_synthetic_labeled(spec).map(|d| d.set)
}

/// Generates `n_households × days` profiles, household-major.
///
/// Households draw archetypes from a shuffled, balanced pool so every
/// archetype appears when `n_households >= archetypes.len()`. Each household
/// draws one amplitude; each reading is `amplitude × template[t] + noise`,
/// clamped at zero.
pub fn generate_synthetic_labeled(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let n_arch = spec.archetypes.len();
    let mut pool: Vec<usize> = (0..spec.n_households).map(|h| h % n_arch).collect();
    pool.shuffle(&mut rng);

    let width = spec.n_households.to_string().len().max(3);
    let mut profiles = Vec::with_capacity(spec.n_households * spec.days);
    let mut labels = Vec::with_capacity(spec.n_households * spec.days);
    for (h, &k) in pool.iter().enumerate() {
        let arch = &spec.archetypes[k];
        let [lo, hi] = arch.amplitude;
        let amplitude = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let noise = Normal::new(0.0, arch.noise)
            .map_err(|e| Error::Config(format!("archetype {k}: {e}")))?;
        let id = format!("H{:0width$}", h + 1);
        for d in 0..spec.days {
            let date = spec.start_date + chrono::Days::new(d as u64);
            let mut values = [0.0; HOURS];
            for (t, v) in values.iter_mut().enumerate() {
                let eps = if arch.noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                *v = (amplitude * arch.template[t] + eps).max(0.0);
            }
            profiles.push(DailyLoadProfile::new(id.clone(), date, values)?);
            labels.push(k);
        }
    }
    Ok(SyntheticData {
        set: ProfileSet::from_profiles(profiles),
        archetypes: labels,
    })
}
