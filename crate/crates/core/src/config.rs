//! Experiment configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{Algorithm, ClusterParams, KMeansOptions};
use crate::data::{generate_synthetic, load_csv, ProfileSet, SyntheticSpec};
use crate::error::{Error, Result};
use crate::preprocess::{validate_bin_edges, NormalisationMethod};
use crate::qual::QualConfig;
use crate::quant::SILHOUETTE_SAMPLE_CAP;

/// A list of values or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<usize>),
    Range {
        start: usize,
        end: usize,
        #[serde(default = "one")]
        step: usize,
    },
}

fn one() -> usize {
    1
}

impl Grid {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, end, step } => (*start..=*end).step_by((*step).max(1)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrebinMethod {
    None,
    Amc,
    IntegralKmeans,
}

impl PrebinMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PrebinMethod::None => "none",
            PrebinMethod::Amc => "amc",
            PrebinMethod::IntegralKmeans => "integral_kmeans",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmGrid {
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Grid>,
}

impl AlgorithmGrid {
    /// Every parameterisation in grid order (s-major for SOM+k-means).
    pub fn parameterisations(
        &self,
        seed: u64,
        clustering: &ClusteringConfig,
    ) -> Vec<ClusterParams> {
        let ms = self.m.as_ref().map(Grid::values).unwrap_or_default();
        let ss = self.s.as_ref().map(Grid::values).unwrap_or_default();
        let base = |mut p: ClusterParams| {
            p.kmeans = clustering.kmeans_options();
            p.epochs = clustering.som_epochs;
            p
        };
        match self.algorithm {
            Algorithm::Kmeans => ms
                .iter()
                .map(|&m| base(ClusterParams::kmeans(m, seed)))
                .collect(),
            Algorithm::Som => ss
                .iter()
                .map(|&s| base(ClusterParams::som(s, seed)))
                .collect(),
            Algorithm::SomKmeans => ss
                .iter()
                .flat_map(|&s| ms.iter().map(move |&m| (s, m)))
                .map(|(s, m)| base(ClusterParams::som_kmeans(s, m, seed)))
                .collect(),
        }
    }

    fn validate(&self, exp: &str) -> Result<()> {
        let err = |msg: String| {
            Err(Error::Config(format!(
                "experiment {exp}, {}: {msg}",
                self.algorithm
            )))
        };
        let need = |g: &Option<Grid>, name: &str| -> Result<Vec<usize>> {
            match g.as_ref().map(Grid::values) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Config(format!(
                    "experiment {exp}, {}: grid {name} is missing or empty",
                    self.algorithm
                ))),
            }
        };
        match self.algorithm {
            Algorithm::Kmeans => {
                need(&self.m, "m")?;
            }
            Algorithm::Som => {
                need(&self.s, "s")?;
            }
            Algorithm::SomKmeans => {
                let ms = need(&self.m, "m")?;
                let ss = need(&self.s, "s")?;
                for &s in &ss {
                    for &m in &ms {
                        if s * s <= m {
                            return err(format!("s = {s} and m = {m} violate s² > m"));
                        }
                    }
                }
            }
        }
        for p in self.parameterisations(0, &ClusteringConfig::default()) {
            p.validate()
                .map_err(|e| Error::Config(format!("experiment {exp}: {e}")))?;
        }
        Ok(())
    }
}

fn all_normalisations() -> Vec<NormalisationMethod> {
    NormalisationMethod::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    /// Keep all-zero profiles.
    pub zeros: bool,
    #[serde(default = "no_prebin")]
    pub prebin: PrebinMethod,
    #[serde(default = "all_normalisations")]
    pub normalisations: Vec<NormalisationMethod>,
    pub algorithms: Vec<AlgorithmGrid>,
}

fn no_prebin() -> PrebinMethod {
    PrebinMethod::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
    pub som_epochs: usize,
    pub silhouette_sample_cap: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let k = KMeansOptions::default();
        ClusteringConfig {
            max_iter: k.max_iter,
            tol: k.tol,
            n_init: k.n_init,
            som_epochs: 50,
            silhouette_sample_cap: SILHOUETTE_SAMPLE_CAP,
        }
    }
}

impl ClusteringConfig {
    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            n_init: self.n_init,
        }
    }
}

/// Lower edges of the default AMC bins, in the units `preprocess::amc`
/// returns (230 V × A·h, i.e. Wh): 0, 50, 150, 400, 600, 1200, 2500 and
/// 4000 kWh per month.
pub const DEFAULT_AMC_EDGES: [f64; 8] = [
    0.0,
    50_000.0,
    150_000.0,
    400_000.0,
    600_000.0,
    1_200_000.0,
    2_500_000.0,
    4_000_000.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrebinConfig {
    /// Bins for integral k-means.
    pub n_bins: usize,
    pub amc_edges: Vec<f64>,
}

impl Default for PrebinConfig {
    fn default() -> Self {
        PrebinConfig {
            n_bins: 8,
            amc_edges: DEFAULT_AMC_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_top_n() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_matrix: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub prebin: PrebinConfig,
    #[serde(default)]
    pub qualitative: QualConfig,
    pub experiments: Vec<ExperimentSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(p) = cfg.scoring_matrix.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.dataset.csv.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.dataset.synthetic_file.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [
            self.dataset.csv.is_some(),
            self.dataset.synthetic_file.is_some(),
            self.dataset.synthetic.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config(
                "dataset needs exactly one of csv, synthetic_file or synthetic".into(),
            ));
        }
        if let Some(spec) = &self.dataset.synthetic {
            spec.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if self.prebin.n_bins == 0 {
            return Err(Error::Config("prebin.n_bins must be at least 1".into()));
        }
        validate_bin_edges(&self.prebin.amc_edges)?;
        if self.clustering.silhouette_sample_cap < 2 {
            return Err(Error::Config(
                "silhouette_sample_cap must be at least 2".into(),
            ));
        }
        if self.experiments.is_empty() {
            return Err(Error::Config("no experiments configured".into()));
        }
        let mut ids = BTreeSet::new();
        for exp in &self.experiments {
            if !ids.insert(exp.id.as_str()) {
                return Err(Error::Config(format!("experiment id {} repeated", exp.id)));
            }
            if exp.normalisations.is_empty() {
                return Err(Error::Config(format!(
                    "experiment {}: no normalisations",
                    exp.id
                )));
            }
            if exp.algorithms.is_empty() {
                return Err(Error::Config(format!(
                    "experiment {}: no algorithms",
                    exp.id
                )));
            }
            let mut algs = BTreeSet::new();
            for a in &exp.algorithms {
                if !algs.insert(a.algorithm) {
                    return Err(Error::Config(format!(
                        "experiment {}: algorithm {} listed twice",
                        exp.id, a.algorithm
                    )));
                }
                a.validate(&exp.id)?;
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<ProfileSet> {
        if let Some(path) = &self.dataset.csv {
            return load_csv(path);
        }
        if let Some(path) = &self.dataset.synthetic_file {
            return generate_synthetic(&SyntheticSpec::from_file(path)?);
        }
        match &self.dataset.synthetic {
            Some(spec) => generate_synthetic(spec),
            None => Err(Error::Config("no dataset configured".into())),
        }
    }
}
