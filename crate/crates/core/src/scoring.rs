//! Weighted rank aggregation over qualitative measures.
//!
//! Every run is ranked per measure (1 = best), each rank is multiplied by
//! the measure's weight, and runs are ordered by ascending weighted total.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qual::SetQualScores;

pub const SENSIBLE_COUNT: &str = "sensible_count";
pub const ZERO_PROFILE: &str = "zero_profile";
pub const CONSUMPTION_ERROR_TOTAL: &str = "consumption_error_total";
pub const CONSUMPTION_ERROR_PEAK: &str = "consumption_error_peak";
pub const PEAK_COINCIDENCE: &str = "peak_coincidence";
pub const ENTROPY_WEEKDAY: &str = "entropy_weekday";
pub const ENTROPY_MONTH: &str = "entropy_month";
pub const ENTROPY_TOTAL_DEMAND: &str = "entropy_total_demand";
pub const ENTROPY_PEAK_DEMAND: &str = "entropy_peak_demand";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
    /// `true` ranks 1, `false` ranks after every `true`.
    BooleanGood,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub name: String,
    pub weight: u32,
    pub direction: Direction,
}

impl Measure {
    fn new(name: &str, weight: u32, direction: Direction) -> Self {
        Measure {
            name: name.to_string(),
            weight,
            direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringMatrix {
    pub measures: Vec<Measure>,
}

impl Default for ScoringMatrix {
    fn default() -> Self {
        default_matrix()
    }
}

/// The nine competency-question measures and their expert weights.
pub fn default_matrix() -> ScoringMatrix {
    use Direction::*;
    ScoringMatrix {
        measures: vec![
            Measure::new(SENSIBLE_COUNT, 2, HigherBetter),
            Measure::new(ZERO_PROFILE, 1, BooleanGood),
            Measure::new(CONSUMPTION_ERROR_TOTAL, 6, LowerBetter),
            Measure::new(CONSUMPTION_ERROR_PEAK, 6, LowerBetter),
            Measure::new(PEAK_COINCIDENCE, 3, HigherBetter),
            Measure::new(ENTROPY_WEEKDAY, 4, LowerBetter),
            Measure::new(ENTROPY_MONTH, 4, LowerBetter),
            Measure::new(ENTROPY_TOTAL_DEMAND, 5, LowerBetter),
            Measure::new(ENTROPY_PEAK_DEMAND, 5, LowerBetter),
        ],
    }
}

impl ScoringMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.measures.is_empty() {
            return Err(Error::Config("scoring matrix has no measures".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.measures {
            if m.weight == 0 {
                return Err(Error::Config(format!("measure {} has zero weight", m.name)));
            }
            if !seen.insert(m.name.as_str()) {
                return Err(Error::Config(format!("measure {} listed twice", m.name)));
            }
        }
        Ok(())
    }

    pub fn total_weight(&self) -> u32 {
        self.measures.iter().map(|m| m.weight).sum()
    }

    pub fn weight(&self, name: &str) -> Option<u32> {
        self.measures
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.weight)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let matrix: ScoringMatrix = toml::from_str(s)?;
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("matrix serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureValue {
    Bool(bool),
    Real(f64),
}

/// Measure values of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeasures {
    pub run_id: String,
    pub values: BTreeMap<String, MeasureValue>,
    /// Reason the run cannot be ranked, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disqualified: Option<String>,
}

impl RunMeasures {
    /// Maps set-level qualitative scores onto the default measure names.
    /// Consumption errors use the median symmetric accuracy.
    pub fn from_set_scores(run_id: impl Into<String>, s: &SetQualScores) -> Self {
        use MeasureValue::*;
        let mut values = BTreeMap::new();
        let mut missing = Vec::new();
        values.insert(
            SENSIBLE_COUNT.to_string(),
            Real(s.pct_clusters_above_threshold),
        );
        values.insert(ZERO_PROFILE.to_string(), Bool(s.zero_profile_represented));
        for (name, v) in [
            (CONSUMPTION_ERROR_TOTAL, s.mdsyma_total),
            (CONSUMPTION_ERROR_PEAK, s.mdsyma_peak),
        ] {
            match v {
                Some(v) => {
                    values.insert(name.to_string(), Real(v));
                }
                None => missing.push(name),
            }
        }
        values.insert(PEAK_COINCIDENCE.to_string(), Real(s.mpc_ratio));
        values.insert(ENTROPY_WEEKDAY.to_string(), Real(s.entropy_weekday));
        values.insert(ENTROPY_MONTH.to_string(), Real(s.entropy_month));
        values.insert(
            ENTROPY_TOTAL_DEMAND.to_string(),
            Real(s.entropy_total_demand),
        );
        values.insert(ENTROPY_PEAK_DEMAND.to_string(), Real(s.entropy_peak_demand));
        RunMeasures {
            run_id: run_id.into(),
            values,
            disqualified: (!missing.is_empty())
                .then(|| format!("undefined measures: {}", missing.join(", "))),
        }
    }

    pub fn disqualified(run_id: impl Into<String>, reason: impl Into<String>) -> Self {
        RunMeasures {
            run_id: run_id.into(),
            values: BTreeMap::new(),
            disqualified: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub run_id: String,
    /// Rank per measure; empty for disqualified runs.
    pub ranks: BTreeMap<String, f64>,
    /// Weighted rank total; absent for disqualified runs.
    pub total: Option<f64>,
    /// 1-based position in the final ordering.
    pub final_rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disqualified: Option<String>,
}

fn missing_reason(run: &RunMeasures, matrix: &ScoringMatrix) -> Result<Option<String>> {
    if let Some(reason) = &run.disqualified {
        return Ok(Some(reason.clone()));
    }
    for m in &matrix.measures {
        match (run.values.get(&m.name), m.direction) {
            (None, _) => return Ok(Some(format!("missing measure {}", m.name))),
            (Some(MeasureValue::Real(v)), _) if !v.is_finite() => {
                return Ok(Some(format!("measure {} is not finite", m.name)))
            }
            (Some(MeasureValue::Bool(_)), Direction::BooleanGood) => {}
            (Some(MeasureValue::Real(_)), Direction::LowerBetter | Direction::HigherBetter) => {}
            (Some(_), _) => {
                return Err(Error::Config(format!(
                    "run {}: measure {} has the wrong value type",
                    run.run_id, m.name
                )))
            }
        }
    }
    Ok(None)
}

/// Ranks of `values` (1 = best); ties share the mean of their positions.
fn mean_ranks(values: &[f64], higher_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if higher_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end+1.
        let rank = (start + end + 2) as f64 / 2.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Scores and orders runs. The result is sorted by final rank; disqualified
/// runs come last, by run id.
pub fn score_runs(table: &[RunMeasures], matrix: &ScoringMatrix) -> Result<Vec<RunScore>> {
    if table.is_empty() {
        return Err(Error::Empty("no runs to score".into()));
    }
    matrix.validate()?;

    let mut valid = Vec::new();
    let mut out_of_ranking = Vec::new();
    for run in table {
        match missing_reason(run, matrix)? {
            None => valid.push(run),
            Some(reason) => out_of_ranking.push((run, reason)),
        }
    }

    let mut ranks: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); valid.len()];
    let mut totals = vec![0.0; valid.len()];
    for m in &matrix.measures {
        let per_run: Vec<f64> = match m.direction {
            Direction::BooleanGood => {
                let flags: Vec<bool> = valid
                    .iter()
                    .map(|r| matches!(r.values[&m.name], MeasureValue::Bool(true)))
                    .collect();
                let n_true = flags.iter().filter(|&&f| f).count();
                flags
                    .iter()
                    .map(|&f| if f { 1.0 } else { (n_true + 1) as f64 })
                    .collect()
            }
            dir => {
                let values: Vec<f64> = valid
                    .iter()
                    .map(|r| match r.values[&m.name] {
                        MeasureValue::Real(v) => v,
                        MeasureValue::Bool(_) => unreachable!("checked above"),
                    })
                    .collect();
                mean_ranks(&values, dir == Direction::HigherBetter)
            }
        };
        for (i, r) in per_run.into_iter().enumerate() {
            ranks[i].insert(m.name.clone(), r);
            totals[i] += r * m.weight as f64;
        }
    }

    let mut order: Vec<usize> = (0..valid.len()).collect();
    order.sort_by(|&a, &b| {
        totals[a]
            .total_cmp(&totals[b])
            .then_with(|| valid[a].run_id.cmp(&valid[b].run_id))
    });
    let mut scores: Vec<RunScore> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| RunScore {
            run_id: valid[i].run_id.clone(),
            ranks: std::mem::take(&mut ranks[i]),
            total: Some(totals[i]),
            final_rank: pos + 1,
            disqualified: None,
        })
        .collect();

    out_of_ranking.sort_by(|a, b| a.0.run_id.cmp(&b.0.run_id));
    let offset = scores.len();
    scores.extend(
        out_of_ranking
            .into_iter()
            .enumerate()
            .map(|(k, (run, reason))| RunScore {
                run_id: run.run_id.clone(),
                ranks: BTreeMap::new(),
                total: None,
                final_rank: offset + k + 1,
                disqualified: Some(reason),
            }),
    );
    Ok(scores)
}

/// Final ordering after moving one measure's weight by `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCase {
    pub measure: String,
    pub delta: i32,
    pub order: Vec<String>,
    /// The order differs from the unperturbed one.
    pub changed: bool,
}

/// Re-scores under every single-measure weight change of ±1 that keeps the
/// weight positive.
pub fn weight_sensitivity(
    table: &[RunMeasures],
    matrix: &ScoringMatrix,
) -> Result<Vec<SensitivityCase>> {
    let ids = |scores: Vec<RunScore>| scores.into_iter().map(|s| s.run_id).collect::<Vec<_>>();
    let base = ids(score_runs(table, matrix)?);
    let mut cases = Vec::new();
    for (k, m) in matrix.measures.iter().enumerate() {
        for delta in [-1i32, 1] {
            let w = m.weight as i64 + delta as i64;
            if w <= 0 {
                continue;
            }
            let mut perturbed = matrix.clone();
            perturbed.measures[k].weight = w as u32;
            let order = ids(score_runs(table, &perturbed)?);
            cases.push(SensitivityCase {
                measure: m.name.clone(),
                delta,
                changed: order != base,
                order,
            });
        }
    }
    Ok(cases)
}
