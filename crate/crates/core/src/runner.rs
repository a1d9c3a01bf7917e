//! Experiment grid execution, per-bin lowest-`Ix` selection, result
//! persistence and the two-stage (combined index, then scoring matrix)
//! ranking.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{compute_rdlp, Algorithm, ClusterModel, ClusterParams};
use crate::config::{ExperimentConfig, PrebinMethod};
use crate::data::{write_csv, Hourly, ProfileSet, HOURS};
use crate::error::{Error, Result};
use crate::preprocess::{
    normalise_rows, prebin_amc, prebin_integral_kmeans, BinAssignment, NormalisationMethod,
};
use crate::qual::{
    aggregate_set_scores, cluster_scores, demand_percentile_features, ClusterQualScores,
    QualConfig, SetQualScores,
};
use crate::quant::{combined_index, evaluate_model, BinQuant};
use crate::scoring::{
    score_runs, weight_sensitivity, RunMeasures, RunScore, ScoringMatrix, SensitivityCase,
};

/// One parameterisation evaluated on one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub params: ClusterParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<BinQuant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinRecord {
    pub bin_id: usize,
    /// Profiles clustered in this bin.
    pub n_bin: usize,
    pub candidates: Vec<Candidate>,
    /// Index of the lowest-`Ix` candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    /// Normalised-space centroids of the selected model.
    #[serde(default)]
    pub centroids: Vec<Vec<f64>>,
    /// First global cluster id of this bin.
    pub cluster_offset: usize,
}

impl BinRecord {
    pub fn selected_candidate(&self) -> Option<&Candidate> {
        self.selected.map(|i| &self.candidates[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub bin_id: usize,
    pub size: usize,
    /// Mean raw member profile in Amperes; absent for empty clusters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rdlp: Option<Vec<f64>>,
}

impl ClusterSummary {
    pub fn rdlp_hourly(&self) -> Option<Hourly> {
        self.rdlp
            .as_ref()
            .and_then(|v| v.as_slice().try_into().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment_id: String,
    pub normalisation: NormalisationMethod,
    pub algorithm: Algorithm,
    pub prebin: PrebinMethod,
    pub zeros: bool,
    pub seed: u64,
    /// Profiles clustered across all bins.
    pub n_total: usize,
    /// Profiles dropped as un-normalisable.
    pub n_excluded: usize,
    pub bins: Vec<BinRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub clusters: Vec<ClusterSummary>,
    /// Dataset row of every clustered profile.
    pub members: Vec<usize>,
    /// Global cluster id of every clustered profile.
    pub labels: Vec<usize>,
    pub timing_ms: f64,
}

impl RunRecord {
    pub fn n_clusters(&self) -> usize {
        self.clusters.iter().filter(|c| c.size > 0).count()
    }

    /// `n_bin`-weighted means of the selected per-bin `(dbi, mia, silhouette)`.
    pub fn weighted_indices(&self) -> Option<(f64, f64, f64)> {
        let mut acc = (0.0, 0.0, 0.0);
        let mut n = 0usize;
        for b in &self.bins {
            let q = b.selected_candidate()?.quant.as_ref()?;
            let w = b.n_bin as f64;
            acc.0 += w * q.dbi;
            acc.1 += w * q.mia;
            acc.2 += w * q.silhouette;
            n += b.n_bin;
        }
        (n > 0).then(|| (acc.0 / n as f64, acc.1 / n as f64, acc.2 / n as f64))
    }

    /// Structural checks every persisted record satisfies.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Metric(format!("record {}: {msg}", self.run_id)));
        if self.members.len() != self.labels.len() {
            return fail("members and labels differ in length".into());
        }
        if self.error.is_none() && self.ci.is_none() {
            return fail("neither ci nor error is set".into());
        }
        let mut sizes = vec![0usize; self.clusters.len()];
        for &l in &self.labels {
            if l >= self.clusters.len() {
                return fail(format!("label {l} has no cluster"));
            }
            sizes[l] += 1;
        }
        for (k, c) in self.clusters.iter().enumerate() {
            if c.cluster_id != k {
                return fail(format!("cluster {k} carries id {}", c.cluster_id));
            }
            if c.size != sizes[k] {
                return fail(format!(
                    "cluster {k} size {} but {} labels",
                    c.size, sizes[k]
                ));
            }
            match (&c.rdlp, c.size) {
                (None, s) if s > 0 => return fail(format!("cluster {k} has members but no RDLP")),
                (Some(_), 0) => return fail(format!("empty cluster {k} has an RDLP")),
                (Some(r), _)
                    if r.len() != HOURS || r.iter().any(|v| !v.is_finite() || *v < 0.0) =>
                {
                    return fail(format!("cluster {k} RDLP is not 24 non-negative readings"))
                }
                _ => {}
            }
        }
        if sizes.iter().sum::<usize>() != self.labels.len() {
            return fail("cluster sizes do not cover the labels".into());
        }
        let binned: usize = self.bins.iter().map(|b| b.n_bin).sum();
        if binned != self.n_total {
            return fail(format!(
                "bins hold {binned} profiles, n_total is {}",
                self.n_total
            ));
        }
        if self.error.is_none() && self.members.len() != self.n_total {
            return fail("clustered profile count differs from n_total".into());
        }
        for b in &self.bins {
            if let Some(i) = b.selected {
                if i >= b.candidates.len() {
                    return fail(format!("bin {} selects missing candidate {i}", b.bin_id));
                }
            }
        }
        if let Some(ci) = self.ci {
            if !ci.is_finite() {
                return fail("ci is not finite".into());
            }
        }
        Ok(())
    }
}

/// Rows of one bin after normalisation.
struct PreparedBin {
    bin_id: usize,
    rows: Vec<usize>,
    matrix: Vec<Vec<f64>>,
}

struct Prepared {
    bins: Vec<PreparedBin>,
    excluded: usize,
}

/// Dataset rows of every non-empty pre-binning bin, as `(bin_id, rows)`.
fn prebin_rows(
    data: &ProfileSet,
    config: &ExperimentConfig,
    keep_zeros: bool,
    prebin: PrebinMethod,
    seed: u64,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let kept: Vec<usize> = (0..data.len())
        .filter(|&i| keep_zeros || data.total_demand(i) > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(
            "no profiles left after dropping all-zero days".into(),
        ));
    }
    let subset = data.subset(&kept);
    let bins: BinAssignment = match prebin {
        PrebinMethod::None => BinAssignment::single(subset.len()),
        PrebinMethod::Amc => prebin_amc(&subset, &config.prebin.amc_edges)?,
        PrebinMethod::IntegralKmeans => prebin_integral_kmeans(
            &subset,
            config.prebin.n_bins,
            seed,
            &config.clustering.kmeans_options(),
        )?,
    };
    Ok((1..=bins.n_bins)
        .map(|b| {
            (
                b,
                bins.members(b)
                    .into_iter()
                    .map(|i| kept[i])
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, rows)| !rows.is_empty())
        .collect())
}

fn prepare(
    data: &ProfileSet,
    bins: &[(usize, Vec<usize>)],
    normalisation: NormalisationMethod,
) -> Prepared {
    let mut out = Prepared {
        bins: Vec::new(),
        excluded: 0,
    };
    for (bin_id, rows) in bins {
        let norm = normalise_rows(data, rows, normalisation);
        out.excluded += norm.excluded.len();
        if norm.rows.is_empty() {
            continue;
        }
        out.bins.push(PreparedBin {
            bin_id: *bin_id,
            rows: norm.rows,
            matrix: norm.matrix,
        });
    }
    out
}

/// One run before its bins are evaluated.
struct RunPlan {
    run_id: String,
    experiment: usize,
    normalisation: NormalisationMethod,
    algorithm: Algorithm,
    seed: u64,
    prepared: usize,
    params: Vec<ClusterParams>,
}

struct Evaluated {
    candidate: Candidate,
    model: Option<ClusterModel>,
    elapsed_ms: f64,
}

fn evaluate(bin: &PreparedBin, params: &ClusterParams, sample_cap: usize) -> Evaluated {
    let start = Instant::now();
    let result = ClusterModel::fit(&bin.matrix, params).and_then(|model| {
        let quant = evaluate_model(&bin.matrix, &model, sample_cap, params.rng_seed)?;
        Ok((model, quant))
    });
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok((model, quant)) => Evaluated {
            candidate: Candidate {
                params: params.clone(),
                quant: Some(quant),
                error: None,
            },
            model: Some(model),
            elapsed_ms,
        },
        Err(e) => Evaluated {
            candidate: Candidate {
                params: params.clone(),
                quant: None,
                error: Some(e.to_string()),
            },
            model: None,
            elapsed_ms,
        },
    }
}

/// Index of the lowest `Ix`; ties keep the first in grid order.
fn lowest_ix(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.quant.as_ref()?.ix.map(|ix| (i, ix)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

fn run_id(
    exp: &str,
    norm: NormalisationMethod,
    alg: Algorithm,
    param: Option<&ClusterParams>,
    seed: u64,
) -> String {
    match param {
        Some(p) => format!("{exp}-{norm}-{alg}-{}-seed{seed}", p.label()),
        None => format!("{exp}-{norm}-{alg}-seed{seed}"),
    }
}

/// Executes every experiment × normalisation × algorithm × parameter
/// combination of the config. Experiments without pre-binning produce one
/// record per parameterisation; pre-binned experiments produce one record
/// per algorithm holding the lowest-`Ix` parameterisation of every bin.
pub fn run_grid(config: &ExperimentConfig, data: &ProfileSet) -> Result<Vec<RunRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("dataset has no profiles".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start workers: {e}")))?;
    pool.install(|| run_grid_inner(config, data))
}

fn run_grid_inner(config: &ExperimentConfig, data: &ProfileSet) -> Result<Vec<RunRecord>> {
    let mut prepared: Vec<Result<Prepared>> = Vec::new();
    let mut plans = Vec::new();
    for (e, exp) in config.experiments.iter().enumerate() {
        for &seed in &config.seeds {
            let bins = prebin_rows(data, config, exp.zeros, exp.prebin, seed);
            for &norm in &exp.normalisations {
                let p = prepared.len();
                prepared.push(match &bins {
                    Ok(bins) => Ok(prepare(data, bins, norm)),
                    Err(e) => Err(Error::Empty(e.to_string())),
                });
                for grid in &exp.algorithms {
                    let params = grid.parameterisations(seed, &config.clustering);
                    let plan =
                        |params: Vec<ClusterParams>, single: Option<&ClusterParams>| RunPlan {
                            run_id: run_id(&exp.id, norm, grid.algorithm, single, seed),
                            experiment: e,
                            normalisation: norm,
                            algorithm: grid.algorithm,
                            seed,
                            prepared: p,
                            params,
                        };
                    if exp.prebin == PrebinMethod::None {
                        for param in &params {
                            plans.push(plan(vec![param.clone()], Some(param)));
                        }
                    } else {
                        plans.push(plan(params.clone(), None));
                    }
                }
            }
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for plan in &plans {
        if !seen.insert(plan.run_id.as_str()) {
            return Err(Error::Config(format!(
                "run id {} is not unique",
                plan.run_id
            )));
        }
    }

    // (plan, bin, param) jobs, evaluated in parallel and collected in order.
    let mut jobs = Vec::new();
    for (r, plan) in plans.iter().enumerate() {
        if let Ok(prep) = &prepared[plan.prepared] {
            for b in 0..prep.bins.len() {
                for k in 0..plan.params.len() {
                    jobs.push((r, b, k));
                }
            }
        }
    }
    let cap = config.clustering.silhouette_sample_cap;
    let results: Vec<Evaluated> = jobs
        .par_iter()
        .map(|&(r, b, k)| {
            let plan = &plans[r];
            let prep = prepared[plan.prepared]
                .as_ref()
                .expect("only prepared plans are queued");
            evaluate(&prep.bins[b], &plan.params[k], cap)
        })
        .collect();

    let mut results = results.into_iter();
    let mut records = Vec::with_capacity(plans.len());
    for plan in &plans {
        let exp = &config.experiments[plan.experiment];
        let prep = match &prepared[plan.prepared] {
            Ok(p) => p,
            Err(e) => {
                records.push(failed_record(
                    plan,
                    exp.id.clone(),
                    exp.prebin,
                    exp.zeros,
                    e.to_string(),
                ));
                continue;
            }
        };
        let mut per_bin = Vec::with_capacity(prep.bins.len());
        for _ in &prep.bins {
            let evaluated: Vec<Evaluated> = results.by_ref().take(plan.params.len()).collect();
            per_bin.push(evaluated);
        }
        records.push(assemble(
            plan,
            exp.id.clone(),
            exp.prebin,
            exp.zeros,
            data,
            prep,
            per_bin,
        ));
    }
    Ok(records)
}

fn failed_record(
    plan: &RunPlan,
    experiment_id: String,
    prebin: PrebinMethod,
    zeros: bool,
    error: String,
) -> RunRecord {
    RunRecord {
        run_id: plan.run_id.clone(),
        experiment_id,
        normalisation: plan.normalisation,
        algorithm: plan.algorithm,
        prebin,
        zeros,
        seed: plan.seed,
        n_total: 0,
        n_excluded: 0,
        bins: Vec::new(),
        ci: None,
        error: Some(error),
        clusters: Vec::new(),
        members: Vec::new(),
        labels: Vec::new(),
        timing_ms: 0.0,
    }
}

fn assemble(
    plan: &RunPlan,
    experiment_id: String,
    prebin: PrebinMethod,
    zeros: bool,
    data: &ProfileSet,
    prep: &Prepared,
    per_bin: Vec<Vec<Evaluated>>,
) -> RunRecord {
    let mut record = failed_record(plan, experiment_id, prebin, zeros, String::new());
    record.error = None;
    record.n_excluded = prep.excluded;
    let mut errors = Vec::new();
    let mut ci_inputs = Vec::new();

    for (bin, evaluated) in prep.bins.iter().zip(per_bin) {
        record.timing_ms += evaluated.iter().map(|e| e.elapsed_ms).sum::<f64>();
        let candidates: Vec<Candidate> = evaluated.iter().map(|e| e.candidate.clone()).collect();
        let selected = lowest_ix(&candidates);
        let mut bin_record = BinRecord {
            bin_id: bin.bin_id,
            n_bin: bin.rows.len(),
            candidates,
            selected,
            centroids: Vec::new(),
            cluster_offset: record.clusters.len(),
        };
        record.n_total += bin.rows.len();

        let Some(sel) = selected else {
            errors.push(format!(
                "bin {}: no parameterisation has a positive silhouette",
                bin.bin_id
            ));
            bin_record.selected = None;
            record.bins.push(bin_record);
            continue;
        };
        let model = evaluated[sel]
            .model
            .as_ref()
            .expect("selected candidates have a model");
        let ix = bin_record.candidates[sel]
            .quant
            .as_ref()
            .and_then(|q| q.ix)
            .expect("selected candidates have an ix");
        ci_inputs.push((ix, bin.rows.len()));

        let raw: Vec<Hourly> = bin.rows.iter().map(|&i| *data.values(i)).collect();
        let rdlps = compute_rdlp(&raw, &model.labels, model.n_clusters())
            .expect("model labels cover the bin");
        let offset = record.clusters.len();
        for (k, (size, rdlp)) in model.sizes.iter().zip(rdlps).enumerate() {
            record.clusters.push(ClusterSummary {
                cluster_id: offset + k,
                bin_id: bin.bin_id,
                size: *size,
                rdlp: rdlp.map(|r| r.to_vec()),
            });
        }
        record.members.extend(&bin.rows);
        record
            .labels
            .extend(model.labels.iter().map(|l| offset + l));
        bin_record.centroids = model.centroids.clone();
        record.bins.push(bin_record);
    }

    if record.bins.is_empty() {
        errors.push("no bin has profiles to cluster".into());
    }
    if errors.is_empty() {
        match combined_index(&ci_inputs, record.n_total) {
            Ok(ci) => record.ci = Some(ci),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        record.error = Some(errors.join("; "));
    }
    record
}

/// Stage-one entry: a run ordered by its combined index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiEntry {
    pub position: usize,
    pub run_id: String,
    pub ci: f64,
    pub experiment_id: String,
    pub normalisation: NormalisationMethod,
    pub algorithm: Algorithm,
    pub prebin: PrebinMethod,
    pub zeros: bool,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualEntry {
    pub run_id: String,
    pub ci_position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<SetQualScores>,
    pub clusters: Vec<ClusterQualScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub top_n: usize,
    /// Every run with a valid combined index, ascending.
    pub by_ci: Vec<CiEntry>,
    /// Runs left out of stage one, with the reason.
    pub without_ci: Vec<(String, String)>,
    /// Qualitative scores of the stage-one top runs.
    pub qualitative: Vec<QualEntry>,
    /// Scoring-matrix ordering of the stage-one top runs.
    pub by_score: Vec<RunScore>,
    pub matrix: ScoringMatrix,
    pub sensitivity: Vec<SensitivityCase>,
}

/// Per-cluster and set-level qualitative scores of one run.
pub fn evaluate_qualitative(
    record: &RunRecord,
    data: &ProfileSet,
    percentiles: &[(u8, u8)],
    cfg: &QualConfig,
) -> Result<(Vec<ClusterQualScores>, SetQualScores)> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); record.clusters.len()];
    for (&row, &label) in record.members.iter().zip(&record.labels) {
        if row >= data.len() {
            return Err(Error::Parameter(format!(
                "run {} references row {row} beyond the dataset",
                record.run_id
            )));
        }
        members[label].push(row);
    }
    let per_cluster: Vec<ClusterQualScores> = record
        .clusters
        .par_iter()
        .zip(members.par_iter())
        .filter(|(c, m)| c.size > 0 && !m.is_empty())
        .filter_map(|(c, m)| {
            let rdlp = c.rdlp_hourly()?;
            Some(cluster_scores(data, c.cluster_id, m, &rdlp, percentiles))
        })
        .collect();
    let set = aggregate_set_scores(&per_cluster, cfg)?;
    Ok((per_cluster, set))
}

/// Stage one orders runs by ascending combined index (ties by run id) and
/// keeps `top_n`; stage two scores only those with the qualitative measures
/// and the scoring matrix.
pub fn select_and_rank(
    records: &[RunRecord],
    data: &ProfileSet,
    top_n: usize,
    matrix: &ScoringMatrix,
    cfg: &QualConfig,
) -> Result<RankReport> {
    if top_n == 0 {
        return Err(Error::Parameter("top_n must be at least 1".into()));
    }
    let mut valid: Vec<&RunRecord> = records.iter().filter(|r| r.ci.is_some()).collect();
    if valid.is_empty() {
        return Err(Error::Empty("no run has a valid combined index".into()));
    }
    valid.sort_by(|a, b| {
        a.ci.unwrap()
            .total_cmp(&b.ci.unwrap())
            .then_with(|| a.run_id.cmp(&b.run_id))
    });
    let by_ci: Vec<CiEntry> = valid
        .iter()
        .enumerate()
        .map(|(i, r)| CiEntry {
            position: i + 1,
            run_id: r.run_id.clone(),
            ci: r.ci.unwrap(),
            experiment_id: r.experiment_id.clone(),
            normalisation: r.normalisation,
            algorithm: r.algorithm,
            prebin: r.prebin,
            zeros: r.zeros,
            n_clusters: r.n_clusters(),
        })
        .collect();
    let without_ci = records
        .iter()
        .filter(|r| r.ci.is_none())
        .map(|r| (r.run_id.clone(), r.error.clone().unwrap_or_default()))
        .collect();

    let percentiles = demand_percentile_features(data);
    let mut qualitative = Vec::new();
    let mut table = Vec::new();
    for (pos, record) in valid.iter().take(top_n).enumerate() {
        match evaluate_qualitative(record, data, &percentiles, cfg) {
            Ok((clusters, scores)) => {
                table.push(RunMeasures::from_set_scores(&record.run_id, &scores));
                qualitative.push(QualEntry {
                    run_id: record.run_id.clone(),
                    ci_position: pos + 1,
                    scores: Some(scores),
                    clusters,
                    error: None,
                });
            }
            Err(e) => {
                table.push(RunMeasures::disqualified(&record.run_id, e.to_string()));
                qualitative.push(QualEntry {
                    run_id: record.run_id.clone(),
                    ci_position: pos + 1,
                    scores: None,
                    clusters: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let by_score = score_runs(&table, matrix)?;
    let sensitivity = weight_sensitivity(&table, matrix)?;
    Ok(RankReport {
        top_n,
        by_ci,
        without_ci,
        qualitative,
        by_score,
        matrix: matrix.clone(),
        sensitivity,
    })
}

pub const RUNS_DIR: &str = "runs";
pub const INDEX_FILE: &str = "index.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MATRIX_FILE: &str = "matrix.toml";
pub const REPORT_FILE: &str = "report.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn record_json(record: &RunRecord) -> Result<String> {
    let mut s = serde_json::to_string_pretty(record)?;
    s.push('\n');
    Ok(s)
}

/// Writes the results directory: one JSON per run, the grid index CSV, the
/// dataset, the resolved config and the scoring matrix.
pub fn write_results(
    dir: &Path,
    config: &ExperimentConfig,
    matrix: &ScoringMatrix,
    data: &ProfileSet,
    records: &[RunRecord],
) -> Result<()> {
    let runs = dir.join(RUNS_DIR);
    create_dir(&runs)?;
    for record in records {
        record.validate()?;
        write_file(
            &runs.join(format!("{}.json", record.run_id)),
            record_json(record)?.as_bytes(),
        )?;
    }
    write_file(&dir.join(INDEX_FILE), &index_csv(records)?)?;
    write_csv(data, dir.join(DATASET_FILE))?;
    write_file(&dir.join(CONFIG_FILE), config.to_toml_string()?.as_bytes())?;
    write_file(&dir.join(MATRIX_FILE), matrix.to_toml_string().as_bytes())?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn index_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "run_id",
        "experiment_id",
        "normalisation",
        "algorithm",
        "prebin",
        "zeros",
        "seed",
        "params",
        "n_bins",
        "n_clusters",
        "n_total",
        "n_excluded",
        "ci",
        "dbi",
        "mia",
        "silhouette",
        "error",
    ])?;
    for r in records {
        let params: Vec<String> = r
            .bins
            .iter()
            .filter_map(|b| {
                b.selected_candidate()
                    .map(|c| format!("{}:{}", b.bin_id, c.params.label()))
            })
            .collect();
        let w = r.weighted_indices();
        wtr.write_record([
            r.run_id.clone(),
            r.experiment_id.clone(),
            r.normalisation.to_string(),
            r.algorithm.to_string(),
            r.prebin.as_str().to_string(),
            r.zeros.to_string(),
            r.seed.to_string(),
            params.join(" "),
            r.bins.len().to_string(),
            r.n_clusters().to_string(),
            r.n_total.to_string(),
            r.n_excluded.to_string(),
            fmt_opt(r.ci),
            fmt_opt(w.map(|w| w.0)),
            fmt_opt(w.map(|w| w.1)),
            fmt_opt(w.map(|w| w.2)),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Config(format!("cannot build index: {e}")))
}

/// Contents of a results directory.
pub struct Results {
    pub config: ExperimentConfig,
    pub matrix: ScoringMatrix,
    pub data: ProfileSet,
    pub records: Vec<RunRecord>,
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: RunRecord = serde_json::from_str(&text)?;
    record.validate()?;
    Ok(record)
}

pub fn load_results(dir: &Path) -> Result<Results> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    let matrix = ScoringMatrix::from_file(dir.join(MATRIX_FILE))?;
    let data = crate::data::load_csv(dir.join(DATASET_FILE))?;
    let runs = dir.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(|e| Error::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let records = paths
        .iter()
        .map(|p| load_record(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Results {
        config,
        matrix,
        data,
        records,
    })
}

pub fn write_report(dir: &Path, report: &RankReport) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    write_file(&dir.join(REPORT_FILE), s.as_bytes())
}

/// Plain-text summary of both orderings.
pub fn report_table(report: &RankReport) -> String {
    let mut out = String::new();
    out.push_str("Stage 1: combined index (lower is better)\n");
    out.push_str(" #  CI        clusters  run\n");
    for e in report.by_ci.iter().take(report.top_n) {
        out.push_str(&format!(
            "{:>2}  {:<8.4}  {:>8}  {}\n",
            e.position, e.ci, e.n_clusters, e.run_id
        ));
    }
    out.push_str("\nStage 2: scoring matrix (lower is better)\n");
    out.push_str(" #  score     CI#  run\n");
    let ci_pos: BTreeMap<&str, usize> = report
        .qualitative
        .iter()
        .map(|q| (q.run_id.as_str(), q.ci_position))
        .collect();
    for s in &report.by_score {
        let score = s
            .total
            .map_or_else(|| "-".to_string(), |t| format!("{t:.1}"));
        out.push_str(&format!(
            "{:>2}  {:<8}  {:>3}  {}{}\n",
            s.final_rank,
            score,
            ci_pos.get(s.run_id.as_str()).copied().unwrap_or(0),
            s.run_id,
            s.disqualified
                .as_ref()
                .map(|d| format!("  (disqualified: {d})"))
                .unwrap_or_default()
        ));
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_open(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        WIDTH / 2.0,
        xml_escape(title),
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN,
    )
}

fn curves_svg(title: &str, curves: &[(usize, Hourly)]) -> String {
    let max = curves
        .iter()
        .flat_map(|(_, c)| c.iter().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let mut svg = svg_open(title);
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">hour</text>\n\
         <text x=\"12\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">A</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{max:.2}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        HEIGHT / 2.0,
        MARGIN - 4.0,
        MARGIN + 4.0,
    ));
    for (k, (id, curve)) in curves.iter().enumerate() {
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(t, v)| {
                let x = MARGIN + plot_w * t as f64 / (HOURS - 1) as f64;
                let y = HEIGHT - MARGIN - plot_h * v / max;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"><title>cluster {id}</title></polyline>\n",
            PALETTE[k % PALETTE.len()],
            points.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn sizes_svg(title: &str, sizes: &[(usize, usize)]) -> String {
    let max = sizes.iter().map(|s| s.1).max().unwrap_or(1).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / sizes.len().max(1) as f64;
    let mut svg = svg_open(title);
    for (k, (id, size)) in sizes.iter().enumerate() {
        let h = plot_h * *size as f64 / max;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"><title>cluster {id}: {size}</title></rect>\n",
            MARGIN + slot * k as f64 + slot * 0.1,
            HEIGHT - MARGIN - h,
            slot * 0.8,
            PALETTE[k % PALETTE.len()],
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes RDLP curves and cluster sizes of a run as CSV and SVG into
/// `out_dir`. Empty clusters are left out.
pub fn emit_plots(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let live: Vec<(&ClusterSummary, Hourly)> = record
        .clusters
        .iter()
        .filter(|c| c.size > 0)
        .filter_map(|c| c.rdlp_hourly().map(|r| (c, r)))
        .collect();

    let mut curves = csv::Writer::from_writer(Vec::new());
    curves.write_record(["cluster_id", "t", "amperes"])?;
    for (c, rdlp) in &live {
        for (t, v) in rdlp.iter().enumerate() {
            curves.write_record([c.cluster_id.to_string(), t.to_string(), format!("{v}")])?;
        }
    }
    let mut sizes = csv::Writer::from_writer(Vec::new());
    sizes.write_record(["cluster_id", "size"])?;
    for (c, _) in &live {
        sizes.write_record([c.cluster_id.to_string(), c.size.to_string()])?;
    }

    let into = |w: csv::Writer<Vec<u8>>| {
        w.into_inner()
            .map_err(|e| Error::Config(format!("cannot build csv: {e}")))
    };
    let paths = [
        out_dir.join("rdlp_curves.csv"),
        out_dir.join("cluster_sizes.csv"),
        out_dir.join("rdlp_curves.svg"),
        out_dir.join("cluster_sizes.svg"),
    ];
    write_file(&paths[0], &into(curves)?)?;
    write_file(&paths[1], &into(sizes)?)?;
    let curve_data: Vec<(usize, Hourly)> = live.iter().map(|(c, r)| (c.cluster_id, *r)).collect();
    let size_data: Vec<(usize, usize)> = live.iter().map(|(c, _)| (c.cluster_id, c.size)).collect();
    write_file(
        &paths[2],
        curves_svg(&format!("RDLPs of {}", record.run_id), &curve_data).as_bytes(),
    )?;
    write_file(
        &paths[3],
        sizes_svg(&format!("Cluster sizes of {}", record.run_id), &size_data).as_bytes(),
    )?;
    Ok(paths.to_vec())
}
