//! Experiment harness behind the `aebound` binary. One JSON config drives
//! every stage; each stage reads what earlier stages left under
//! `output_dir` and writes CSV/JSON files stamped with the config hash.
//!
//! Layout of `output_dir`:
//! `data/` (binarized train/test IDX files), `models/` (one checkpoint per
//! sample fraction), and the result files documented in `docs/schema.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    eta_prime_theoretical, generalization_bound, improvement_factor, mu_bound_symmetric,
    mu_bound_worst, r_to_se_bound, spectral_norm_default, ssl_term, BoundInputs, BoundReport,
    LayerNorms,
};
use crate::checkpoint;
use crate::data::{
    gen_clustered, load_images_binarized, save_idx_dataset, split, ClusterSpec, Dataset, SplitSpec,
    DEFAULT_BINARIZE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::geometry::{
    empirical_cluster_margin, encoded_cluster_margin, lipschitz_empirical, lipschitz_upper,
    probe_pairs, three_eps_audit, AuditResult, ClusteredSample, MAX_PROBE_PAIRS, PERTURBATION_STEP,
};
use crate::losses::{empirical_margin_loss, g_epsilon_from_l2, recon_metrics, MarginConfig};
use crate::nn::{
    arch_from_dims, train, validate_autoencoder, Activation, NetworkParams, SurrogateLoss,
    TrainConfig,
};
use crate::ssl::{ssl_experiment, SSLConfig, SSLResult, SSLSummary};

/// Column documentation checked by [`Experiment::report`].
pub const SCHEMA: &str = include_str!("../../../docs/schema.md");

pub const HASH_LINE_PREFIX: &str = "# config_hash=";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// Clustered binary data from [`gen_clustered`]; `n_test` samples are held out.
    Synthetic {
        clusters: usize,
        dim: usize,
        flips: usize,
        per_cluster: usize,
        n_test: usize,
    },
    /// IDX or AEB1 image files, binarized at `threshold`.
    Files {
        train_images: PathBuf,
        #[serde(default)]
        train_labels: Option<PathBuf>,
        test_images: PathBuf,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
}

fn default_threshold() -> f64 {
    DEFAULT_BINARIZE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            dims: vec![64, 32, 8, 32, 64],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }
}

/// Training settings; the seed comes from [`ExperimentConfig::seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub surrogate_loss: SurrogateLoss,
    pub bias: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 16,
            surrogate_loss: SurrogateLoss::Bce,
            bias: false,
        }
    }
}

/// SSL settings; run seeds are `seed, seed + 1, ..., seed + n_seeds - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SSLSettings {
    pub cutoff: Option<f64>,
    pub k_baseline: usize,
    pub n_seeds: usize,
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub n_test: usize,
}

impl Default for SSLSettings {
    fn default() -> Self {
        Self {
            cutoff: None,
            k_baseline: 1,
            n_seeds: 20,
            n_labeled: 8,
            m_unlabeled: 2000,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub architecture: ArchConfig,
    pub train: TrainSettings,
    pub margins: MarginConfig,
    pub delta: f64,
    pub sample_fractions: Vec<f64>,
    /// Values of ε/μ̂ at which G_ε is evaluated.
    pub epsilon_grid: Vec<f64>,
    /// Test points used for margin, Lipschitz and audit computations.
    pub geometry_points: usize,
    pub ssl: SSLSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec::Synthetic {
                clusters: 8,
                dim: 64,
                flips: 3,
                per_cluster: 875,
                n_test: 1000,
            },
            architecture: ArchConfig::default(),
            train: TrainSettings::default(),
            margins: MarginConfig::default(),
            delta: 0.05,
            sample_fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            epsilon_grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
            geometry_points: 1000,
            ssl: SSLSettings::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn strictly_ascending(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!(
                "config file {} not found",
                path.display()
            )));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.margins.validate().map_err(cfg_err)?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        let f = &self.sample_fractions;
        if f.is_empty() || !f.iter().all(|&x| x > 0.0 && x <= 1.0) || !strictly_ascending(f) {
            return Err(Error::Config(
                "sample_fractions must be non-empty, within (0,1] and strictly ascending".into(),
            ));
        }
        let e = &self.epsilon_grid;
        if e.is_empty() || !e.iter().all(|&x| x > 0.0 && x.is_finite()) || !strictly_ascending(e) {
            return Err(Error::Config(
                "epsilon_grid must be non-empty, positive and strictly ascending".into(),
            ));
        }
        if self.geometry_points < 2 {
            return Err(Error::Config("geometry_points must be >= 2".into()));
        }
        validate_autoencoder(&self.arch()).map_err(cfg_err)?;
        self.train_config().validate().map_err(cfg_err)?;
        self.ssl_config().validate().map_err(cfg_err)?;
        match &self.dataset {
            DatasetSpec::Synthetic {
                dim,
                per_cluster,
                clusters,
                n_test,
                ..
            } => {
                if self.architecture.dims[0] != *dim {
                    return Err(Error::Config(format!(
                        "architecture input width {} does not match dataset dimension {dim}",
                        self.architecture.dims[0]
                    )));
                }
                if n_test + 2 > clusters * per_cluster {
                    return Err(Error::Config(
                        "n_test leaves fewer than 2 training samples".into(),
                    ));
                }
            }
            DatasetSpec::Files { threshold, .. } => {
                if !(*threshold > 0.0 && *threshold < 1.0) {
                    return Err(Error::Config(format!(
                        "threshold must lie in (0,1), got {threshold}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> Vec<crate::nn::LayerSpec> {
        let a = &self.architecture;
        arch_from_dims(&a.dims, a.hidden_activation, a.output_activation)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            surrogate_loss: t.surrogate_loss,
            bias: t.bias,
        }
    }

    pub fn ssl_config(&self) -> SSLConfig {
        let s = &self.ssl;
        SSLConfig {
            cutoff: s.cutoff,
            k_baseline: s.k_baseline,
            seeds: (0..s.n_seeds as u64)
                .map(|i| self.seed.wrapping_add(i))
                .collect(),
            n_labeled: s.n_labeled,
            m_unlabeled: s.m_unlabeled,
            n_test: s.n_test,
        }
    }

    /// SHA-256 of the canonical JSON form. `output_dir` is left out so that
    /// the same experiment written to two places carries one hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub config_hash: String,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    #[serde(default)]
    pub ground_truth: Option<crate::data::GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub sample_frac: f64,
    pub m: usize,
    pub eps_over_mu: f64,
    pub epsilon: f64,
    pub mu_hat: f64,
    pub eta_hat: f64,
    /// `None` when fewer than two clusters keep a G_ε member.
    pub eta_prime_hat: Option<f64>,
    pub excluded_clusters: usize,
    pub eta_prime_theoretical: f64,
    pub eta_prime_vacuous: bool,
    pub lipschitz_upper: f64,
    pub lipschitz_empirical: f64,
    pub audit: AuditResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GepsRow {
    pub sample_frac: f64,
    pub m: usize,
    pub eps_over_mu: f64,
    pub epsilon: f64,
    pub mu_hat: f64,
    pub fraction_in: f64,
    pub markov_bound: f64,
}

/// Table-1 style digest of the largest-fraction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub m: usize,
    pub input_dim: usize,
    pub code_dim: usize,
    pub eta_hat: Option<f64>,
    pub eta_prime_hat: Option<f64>,
    pub lipschitz_upper: f64,
    pub lipschitz_empirical: f64,
    pub eta_prime_theoretical: Option<f64>,
    pub eta_prime_vacuous: Option<bool>,
    pub improvement_factor: f64,
    pub ssl_condition_rhs_c0_1: f64,
    pub complexity: f64,
    pub delta_term: f64,
    pub delta_term_normalized: f64,
    pub margin_bound_g1: f64,
    pub test_margin_loss_g1: f64,
    pub mu_hat: f64,
    pub mu_bound_worst: f64,
    pub mu_bound_symmetric: f64,
    pub looseness_worst: f64,
    pub looseness_symmetric: f64,
    pub mean_ssl_error: Option<f64>,
    pub mean_supervised_error: Option<f64>,
    pub outside_theorem_assumptions: bool,
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct Reports<T> {
    rows: Vec<T>,
}

/// A validated config and its hash.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
}

fn frac_tag(f: f64) -> String {
    format!("{f}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn data_dir(&self) -> PathBuf {
        self.out("data")
    }

    pub fn model_path(&self, frac: f64) -> PathBuf {
        self.out("models")
            .join(format!("model-frac{}.json", frac_tag(frac)))
    }

    fn sample_size(&self, frac: f64, n_train: usize) -> usize {
        ((frac * n_train as f64).round() as usize).clamp(2, n_train)
    }

    fn csv(&self, header: &[String], rows: &[Vec<String>]) -> String {
        let mut s = format!("{HASH_LINE_PREFIX}{}\n{}\n", self.hash, header.join(","));
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    fn json<T: Serialize>(&self, body: T) -> Result<String> {
        let stamped = Stamped {
            config_hash: self.hash.clone(),
            body,
        };
        let mut s = serde_json::to_string_pretty(&stamped)?;
        s.push('\n');
        Ok(s)
    }

    /// Materializes the binarized train/test splits under `data/`.
    pub fn gen_data(&self) -> Result<DataMeta> {
        let (train, test, ground_truth) = match &self.config.dataset {
            DatasetSpec::Synthetic {
                clusters,
                dim,
                flips,
                per_cluster,
                n_test,
            } => {
                let spec = ClusterSpec {
                    clusters: *clusters,
                    dim: *dim,
                    flips: *flips,
                    per_cluster: *per_cluster,
                };
                let (all, truth) = gen_clustered(spec, self.config.seed).map_err(|e| match e {
                    Error::InvalidArgument(m) => Error::Config(m),
                    other => other,
                })?;
                let s = split(
                    &all,
                    SplitSpec {
                        n_labeled: 0,
                        m_unlabeled: all.len() - n_test,
                        n_test: *n_test,
                        seed: self.config.seed,
                    },
                )?;
                (s.unlabeled, s.test, Some(truth))
            }
            DatasetSpec::Files {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
                threshold,
            } => {
                let train = load_images_binarized(
                    train_images,
                    train_labels.as_deref(),
                    *threshold,
                    *train_limit,
                )?;
                let test = load_images_binarized(
                    test_images,
                    test_labels.as_deref(),
                    *threshold,
                    *test_limit,
                )?;
                if train.dim() != test.dim() {
                    return Err(Error::Dimension {
                        context: "test image size",
                        expected: train.dim(),
                        got: test.dim(),
                    });
                }
                (train, test, None)
            }
        };
        if train.len() < 2 || test.is_empty() {
            return Err(Error::invalid("need at least 2 training and 1 test sample"));
        }
        let dir = self.data_dir();
        save_idx_dataset(&train, &dir, "train")?;
        save_idx_dataset(&test, &dir, "test")?;
        let meta = DataMeta {
            config_hash: self.hash.clone(),
            n_train: train.len(),
            n_test: test.len(),
            dim: train.dim(),
            ground_truth,
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        write_file(&dir.join("meta.json"), &text)?;
        Ok(meta)
    }

    fn load_split(&self, stem: &str) -> Result<Dataset> {
        let dir = self.data_dir();
        let labels = dir.join(format!("{stem}-labels.idx"));
        let d = load_images_binarized(
            &dir.join(format!("{stem}-images.idx")),
            labels.exists().then_some(labels.as_path()),
            0.5,
            None,
        )?;
        if d.dim() != self.config.architecture.dims[0] {
            return Err(Error::Dimension {
                context: "dataset dimension vs architecture input",
                expected: self.config.architecture.dims[0],
                got: d.dim(),
            });
        }
        Ok(d)
    }

    pub fn train_data(&self) -> Result<Dataset> {
        self.load_split("train")
    }

    pub fn test_data(&self) -> Result<Dataset> {
        self.load_split("test")
    }

    /// Trains one model per sample fraction on the leading `m` training
    /// samples. Fractions train in parallel; each run is deterministic.
    pub fn train(&self) -> Result<Vec<(f64, Vec<f64>)>> {
        let data = self.train_data()?;
        let arch = self.config.arch();
        let cfg = self.config.train_config();
        let runs: Vec<(f64, usize, Vec<f64>)> = self
            .config
            .sample_fractions
            .par_iter()
            .map(|&frac| {
                let m = self.sample_size(frac, data.len());
                let out = train(&arch, &data.take(m), &cfg)?;
                checkpoint::save(&out.params, &self.model_path(frac), Some(&self.hash))?;
                Ok((frac, m, out.loss_history))
            })
            .collect::<Result<_>>()?;
        let last = *self
            .config
            .sample_fractions
            .last()
            .expect("validated non-empty");
        std::fs::copy(self.model_path(last), self.out("models").join("model.json"))?;

        let header: Vec<String> = ["sample_frac", "m", "epoch", "surrogate_loss"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = runs
            .iter()
            .flat_map(|(frac, m, hist)| {
                hist.iter().enumerate().map(move |(e, l)| {
                    vec![
                        frac.to_string(),
                        m.to_string(),
                        e.to_string(),
                        l.to_string(),
                    ]
                })
            })
            .collect();
        write_file(&self.out("history.csv"), &self.csv(&header, &rows))?;
        Ok(runs.into_iter().map(|(f, _, h)| (f, h)).collect())
    }

    fn load_model(&self, frac: f64) -> Result<NetworkParams> {
        let p = checkpoint::load(&self.model_path(frac))?;
        if p.input_dim() != self.config.architecture.dims[0] {
            return Err(Error::Dimension {
                context: "checkpoint input dimension",
                expected: self.config.architecture.dims[0],
                got: p.input_dim(),
            });
        }
        Ok(p)
    }

    fn geometry_sample(&self, test: &Dataset) -> Option<ClusteredSample> {
        let n = self.config.geometry_points.min(test.len());
        let part = test.take(n);
        let labels = part.labels()?.to_vec();
        ClusteredSample::new(part.samples().to_vec(), labels).ok()
    }

    /// Generalization and μ bounds for every fraction, plus the
    /// reconstruction metrics table.
    pub fn bounds(&self) -> Result<Vec<BoundReport>> {
        let train_data = self.train_data()?;
        let test = self.test_data()?;
        let c = &self.config;
        let gs = self.geometry_sample(&test);
        let eta = match &gs {
            Some(s) => empirical_cluster_margin(s).ok().map(|e| e.eta_hat),
            None => None,
        };

        let results: Vec<(BoundReport, Vec<String>)> = c
            .sample_fractions
            .par_iter()
            .map(|&frac| -> Result<(BoundReport, Vec<String>)> {
                let f = self.load_model(frac)?;
                let m = self.sample_size(frac, train_data.len());
                let train_m = train_data.take(m);
                let g = c.margins;
                let g2 = empirical_margin_loss(&f, &train_m, g.gamma2)?;
                let test_g1 = recon_metrics(&f, &test, g.gamma1)?;
                let test_g2 = empirical_margin_loss(&f, &test, g.gamma2)?;
                let inputs = BoundInputs::for_network(&f, train_m.max_norm(), m, c.delta, g);
                let norms = LayerNorms::of(&f);
                let gb = generalization_bound(&f, &inputs, g2)?;
                let r = test_g1.margin_loss_hat;
                let mu = test_g1.mu_hat;
                let dim = f.input_dim();
                let worst = mu_bound_worst(r, g.gamma1, dim)?;
                let sym = mu_bound_symmetric(r, g.gamma1, dim)?;
                let lip_u = lipschitz_upper(&f)?;
                let codes: Vec<Vec<f64>> = test
                    .take(c.geometry_points.min(test.len()))
                    .samples()
                    .par_iter()
                    .map(|x| f.encode(x))
                    .collect::<Result<_>>()?;
                let lip_e = lipschitz_empirical(
                    &f,
                    &probe_pairs(&codes, MAX_PROBE_PAIRS, PERTURBATION_STEP, c.seed),
                )?;
                let epsilon = mu;
                let (eta_p, eta_t) = match (&gs, eta) {
                    (Some(s), Some(eta)) => {
                        let mask = g_epsilon_from_l2(
                            &test_g1.per_sample_l2[..s.len()],
                            epsilon.max(f64::MIN_POSITIVE),
                            mu,
                        )?;
                        let em = encoded_cluster_margin(&f, &s.clone().with_mask(mask.mask)?, true)
                            .ok()
                            .map(|e| e.estimate.eta_hat);
                        (em, Some(eta_prime_theoretical(eta, mu, epsilon, lip_u)?))
                    }
                    _ => (None, None),
                };
                let geps: Vec<String> = c
                    .epsilon_grid
                    .iter()
                    .map(|k| {
                        g_epsilon_from_l2(
                            &test_g1.per_sample_l2,
                            (k * mu).max(f64::MIN_POSITIVE),
                            mu,
                        )
                        .map(|g| g.fraction_in.to_string())
                    })
                    .collect::<Result<_>>()?;
                let mut metrics = vec![
                    frac.to_string(),
                    m.to_string(),
                    r.to_string(),
                    test_g2.to_string(),
                    test_g1.se_loss_mean.to_string(),
                    mu.to_string(),
                ];
                metrics.extend(geps);
                let report = BoundReport {
                    m,
                    input_dim: dim,
                    code_dim: f.code_dim(),
                    depth: f.depth(),
                    max_width: f.max_width(),
                    b: inputs.b,
                    delta: c.delta,
                    gamma1: g.gamma1,
                    gamma2: g.gamma2,
                    spectral_norms: norms.spectral.clone(),
                    frobenius_norms: norms.frobenius.clone(),
                    spectral_norms_converged: f
                        .weights()
                        .all(|w| spectral_norm_default(w).converged),
                    complexity: gb.complexity,
                    delta_term: gb.delta_term,
                    delta_term_normalized: gb.delta_term_normalized,
                    margin_loss_hat_g2: g2,
                    margin_bound_g1: gb.margin_bound_g1,
                    test_margin_loss_g1: r,
                    r_worst: r_to_se_bound(r, g.gamma1, dim)?,
                    mu_hat: mu,
                    mu_bound_worst: worst,
                    mu_bound_symmetric: sym,
                    looseness_worst: worst / mu,
                    looseness_symmetric: sym / mu,
                    epsilon,
                    eta,
                    eta_prime_empirical: eta_p,
                    eta_prime_theoretical: eta_t.map(|e| e.value),
                    eta_prime_vacuous: eta_t.map(|e| e.vacuous),
                    lipschitz_upper: lip_u,
                    lipschitz_empirical: lip_e,
                    improvement_factor: improvement_factor(m, dim, f.code_dim())?,
                    ssl_condition_rhs_c0_1: ssl_term(m, f.code_dim())?,
                    outside_theorem_assumptions: f.has_bias(),
                };
                Ok((report, metrics))
            })
            .collect::<Result<_>>()?;

        let header: Vec<String> = [
            "sample_frac",
            "m",
            "margin_loss_hat_g2",
            "test_margin_loss_g1",
            "complexity",
            "delta_term",
            "delta_term_normalized",
            "mu_hat",
            "mu_bound_worst",
            "mu_bound_symmetric",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = c
            .sample_fractions
            .iter()
            .zip(&results)
            .map(|(frac, (r, _))| {
                vec![
                    frac.to_string(),
                    r.m.to_string(),
                    r.margin_loss_hat_g2.to_string(),
                    r.test_margin_loss_g1.to_string(),
                    r.complexity.to_string(),
                    r.delta_term.to_string(),
                    r.delta_term_normalized.to_string(),
                    r.mu_hat.to_string(),
                    r.mu_bound_worst.to_string(),
                    r.mu_bound_symmetric.to_string(),
                ]
            })
            .collect();
        write_file(&self.out("bounds.csv"), &self.csv(&header, &rows))?;

        let mut mheader: Vec<String> = [
            "sample_frac",
            "m",
            "margin_loss_g1",
            "margin_loss_g2",
            "se_mean",
            "mu_hat",
        ]
        .map(String::from)
        .to_vec();
        mheader.extend(c.epsilon_grid.iter().map(|k| format!("geps_fraction@{k}")));
        let mrows: Vec<Vec<String>> = results.iter().map(|(_, m)| m.clone()).collect();
        write_file(&self.out("metrics.csv"), &self.csv(&mheader, &mrows))?;

        let reports: Vec<BoundReport> = results.into_iter().map(|(r, _)| r).collect();
        write_file(
            &self.out("bounds.json"),
            &self.json(Reports {
                rows: reports.clone(),
            })?,
        )?;
        Ok(reports)
    }

    /// Cluster margins, Lipschitz estimates and both audit inequalities for
    /// every fraction and every ε on the grid.
    pub fn geometry(&self) -> Result<Vec<GeometryRow>> {
        let test = self.test_data()?;
        let c = &self.config;
        let sample = self
            .geometry_sample(&test)
            .ok_or_else(|| Error::Config("geometry needs labelled test data".into()))?;
        let eta = empirical_cluster_margin(&sample)?.eta_hat;
        let train_n = self.train_data()?.len();

        let per_frac: Vec<Vec<GeometryRow>> = c
            .sample_fractions
            .par_iter()
            .map(|&frac| -> Result<Vec<GeometryRow>> {
                let f = self.load_model(frac)?;
                let m = self.sample_size(frac, train_n);
                let sub = test.take(sample.len());
                let metrics = recon_metrics(&f, &sub, c.margins.gamma1)?;
                let mu = metrics.mu_hat;
                let lip_u = lipschitz_upper(&f)?;
                let codes: Vec<Vec<f64>> = sample
                    .points
                    .par_iter()
                    .map(|x| f.encode(x))
                    .collect::<Result<_>>()?;
                let lip_e = lipschitz_empirical(
                    &f,
                    &probe_pairs(&codes, MAX_PROBE_PAIRS, PERTURBATION_STEP, c.seed),
                )?;
                c.epsilon_grid
                    .iter()
                    .map(|&k| {
                        let epsilon = (k * mu).max(f64::MIN_POSITIVE);
                        let mask = g_epsilon_from_l2(&metrics.per_sample_l2, epsilon, mu)?;
                        let s = sample.clone().with_mask(mask.mask)?;
                        let enc = encoded_cluster_margin(&f, &s, true).ok();
                        let audit = three_eps_audit(&f, &s, mu, epsilon, lip_u)?;
                        let et = eta_prime_theoretical(eta, mu, epsilon, lip_u)?;
                        Ok(GeometryRow {
                            sample_frac: frac,
                            m,
                            eps_over_mu: k,
                            epsilon,
                            mu_hat: mu,
                            eta_hat: eta,
                            eta_prime_hat: enc.as_ref().map(|e| e.estimate.eta_hat),
                            excluded_clusters: enc
                                .as_ref()
                                .map_or(0, |e| e.excluded_clusters.len()),
                            eta_prime_theoretical: et.value,
                            eta_prime_vacuous: et.vacuous,
                            lipschitz_upper: lip_u,
                            lipschitz_empirical: lip_e,
                            audit,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let rows: Vec<GeometryRow> = per_frac.into_iter().flatten().collect();

        let header: Vec<String> = [
            "sample_frac",
            "m",
            "eps_over_mu",
            "epsilon",
            "mu_hat",
            "eta_hat",
            "eta_prime_hat",
            "excluded_clusters",
            "eta_prime_theoretical",
            "eta_prime_vacuous",
            "lipschitz_upper",
            "lipschitz_empirical",
            "points_audited",
            "pairs_checked",
            "violations",
            "max_slack",
            "encoded_pairs_checked",
            "encoded_violations",
            "encoded_max_slack",
        ]
        .map(String::from)
        .to_vec();
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.sample_frac.to_string(),
                    r.m.to_string(),
                    r.eps_over_mu.to_string(),
                    r.epsilon.to_string(),
                    r.mu_hat.to_string(),
                    r.eta_hat.to_string(),
                    opt(r.eta_prime_hat),
                    r.excluded_clusters.to_string(),
                    r.eta_prime_theoretical.to_string(),
                    r.eta_prime_vacuous.to_string(),
                    r.lipschitz_upper.to_string(),
                    r.lipschitz_empirical.to_string(),
                    r.audit.points_audited.to_string(),
                    r.audit.pairs_checked.to_string(),
                    r.audit.violations.to_string(),
                    r.audit.max_slack.to_string(),
                    r.audit.encoded_pairs_checked.to_string(),
                    r.audit.encoded_violations.to_string(),
                    r.audit.encoded_max_slack.to_string(),
                ]
            })
            .collect();
        write_file(&self.out("geometry.csv"), &self.csv(&header, &csv_rows))?;
        write_file(
            &self.out("geometry.json"),
            &self.json(Reports { rows: rows.clone() })?,
        )?;
        Ok(rows)
    }

    /// G_ε coverage on the test set against ε/μ̂, with the Markov bound.
    pub fn geps(&self) -> Result<Vec<GepsRow>> {
        let test = self.test_data()?;
        let train_n = self.train_data()?.len();
        let c = &self.config;
        let per_frac: Vec<Vec<GepsRow>> = c
            .sample_fractions
            .par_iter()
            .map(|&frac| -> Result<Vec<GepsRow>> {
                let f = self.load_model(frac)?;
                let m = self.sample_size(frac, train_n);
                let l2 = crate::losses::per_sample_l2(&f, &test)?;
                let mu = l2.iter().sum::<f64>() / l2.len() as f64;
                c.epsilon_grid
                    .iter()
                    .map(|&k| {
                        let epsilon = (k * mu).max(f64::MIN_POSITIVE);
                        let g = g_epsilon_from_l2(&l2, epsilon, mu)?;
                        Ok(GepsRow {
                            sample_frac: frac,
                            m,
                            eps_over_mu: k,
                            epsilon,
                            mu_hat: mu,
                            fraction_in: g.fraction_in,
                            markov_bound: crate::bounds::markov_geps_bound(mu, epsilon)?,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let rows: Vec<GepsRow> = per_frac.into_iter().flatten().collect();
        let header: Vec<String> = [
            "sample_frac",
            "m",
            "eps_over_mu",
            "epsilon",
            "mu_hat",
            "fraction_in",
            "markov_bound",
        ]
        .map(String::from)
        .to_vec();
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.sample_frac.to_string(),
                    r.m.to_string(),
                    r.eps_over_mu.to_string(),
                    r.epsilon.to_string(),
                    r.mu_hat.to_string(),
                    r.fraction_in.to_string(),
                    r.markov_bound.to_string(),
                ]
            })
            .collect();
        write_file(&self.out("geps.csv"), &self.csv(&header, &csv_rows))?;
        Ok(rows)
    }

    /// Cluster-then-label against k-NN in the code space of the
    /// largest-fraction model, on seeded splits of the training data.
    pub fn ssl(&self) -> Result<SSLSummary> {
        let data = self.train_data()?;
        if data.labels().is_none() {
            return Err(Error::Config("ssl needs labelled training data".into()));
        }
        let last = *self
            .config
            .sample_fractions
            .last()
            .expect("validated non-empty");
        let f = self.load_model(last)?;
        let summary = ssl_experiment(&f, &data, &self.config.ssl_config())?;
        let header: Vec<String> = [
            "seed",
            "m",
            "n",
            "cutoff",
            "ssl_error",
            "supervised_error",
            "n_clusters_found",
            "n_unmatched_clusters",
            "degenerate",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = summary
            .runs
            .iter()
            .map(|r: &SSLResult| {
                vec![
                    r.seed.to_string(),
                    r.m.to_string(),
                    r.n.to_string(),
                    r.cutoff.to_string(),
                    r.ssl_error.to_string(),
                    r.supervised_error.to_string(),
                    r.n_clusters_found.to_string(),
                    r.n_unmatched_clusters.to_string(),
                    r.degenerate.to_string(),
                ]
            })
            .collect();
        write_file(&self.out("ssl.csv"), &self.csv(&header, &rows))?;
        write_file(&self.out("ssl.json"), &self.json(&summary)?)?;
        Ok(summary)
    }

    /// Checks every CSV present in `output_dir` against the schema and
    /// merges the largest-fraction results into `summary.json`.
    pub fn report(&self) -> Result<Summary> {
        let schema = parse_schema(SCHEMA);
        for (file, columns) in &schema {
            let path = self.out(file);
            if !path.exists() {
                if file == "bounds.csv" {
                    return Err(Error::MissingFile(path));
                }
                continue;
            }
            check_columns(&path, columns)?;
        }
        let text = read_required(&self.out("bounds.json"))?;
        let reports: Stamped<Reports<BoundReport>> =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("bounds.json: {e}")))?;
        let last = reports
            .body
            .rows
            .last()
            .ok_or_else(|| Error::Schema("bounds.json holds no reports".into()))?
            .clone();
        let ssl: Option<SSLSummary> = match std::fs::read_to_string(self.out("ssl.json")) {
            Ok(t) => Some(
                serde_json::from_str::<Stamped<SSLSummary>>(&t)
                    .map_err(|e| Error::Schema(format!("ssl.json: {e}")))?
                    .body,
            ),
            Err(_) => None,
        };
        let summary = Summary {
            config_hash: self.hash.clone(),
            m: last.m,
            input_dim: last.input_dim,
            code_dim: last.code_dim,
            eta_hat: last.eta,
            eta_prime_hat: last.eta_prime_empirical,
            lipschitz_upper: last.lipschitz_upper,
            lipschitz_empirical: last.lipschitz_empirical,
            eta_prime_theoretical: last.eta_prime_theoretical,
            eta_prime_vacuous: last.eta_prime_vacuous,
            improvement_factor: last.improvement_factor,
            ssl_condition_rhs_c0_1: last.ssl_condition_rhs_c0_1,
            complexity: last.complexity,
            delta_term: last.delta_term,
            delta_term_normalized: last.delta_term_normalized,
            margin_bound_g1: last.margin_bound_g1,
            test_margin_loss_g1: last.test_margin_loss_g1,
            mu_hat: last.mu_hat,
            mu_bound_worst: last.mu_bound_worst,
            mu_bound_symmetric: last.mu_bound_symmetric,
            looseness_worst: last.looseness_worst,
            looseness_symmetric: last.looseness_symmetric,
            mean_ssl_error: ssl.as_ref().map(|s| s.mean_ssl_error),
            mean_supervised_error: ssl.as_ref().map(|s| s.mean_supervised_error),
            outside_theorem_assumptions: last.outside_theorem_assumptions,
        };
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        write_file(&self.out("summary.json"), &text)?;
        Ok(summary)
    }
}

fn read_required(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

/// File name → documented columns, from `## <file>.csv` sections whose
/// table rows start with a backquoted column name.
pub fn parse_schema(text: &str) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            let name = h.trim();
            current = name.ends_with(".csv").then(|| name.to_string());
            continue;
        }
        let Some(file) = &current else { continue };
        if let Some(rest) = line.trim_start().strip_prefix("| `") {
            if let Some(end) = rest.find('`') {
                out.entry(file.clone())
                    .or_default()
                    .push(rest[..end].to_string());
            }
        }
    }
    out
}

/// Header (after the hash line) of a CSV written by this module.
pub fn read_csv_header(path: &Path) -> Result<Vec<String>> {
    let text = read_required(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.starts_with(HASH_LINE_PREFIX) => {}
        _ => {
            return Err(Error::Schema(format!(
                "{}: missing config hash line",
                path.display()
            )))
        }
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: missing header", path.display())))?;
    Ok(header.split(',').map(str::to_string).collect())
}

/// A documented column `prefix<...>` matches any column starting with `prefix`.
pub fn check_columns(path: &Path, documented: &[String]) -> Result<()> {
    let header = read_csv_header(path)?;
    for col in documented {
        let present = match col.find('<') {
            Some(i) => header.iter().any(|h| h.starts_with(&col[..i])),
            None => header.contains(col),
        };
        if !present {
            return Err(Error::Schema(format!(
                "{}: expected column `{col}` is absent",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Reads a results CSV into its header and rows of fields.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let header = read_csv_header(path)?;
    let text = std::fs::read_to_string(path)?;
    let rows = text
        .lines()
        .skip(2)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// Column-name lookup for rows returned by [`read_csv`].
pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<String>> {
    let i = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("no column `{name}`")))?;
    Ok(rows.iter().map(|r| r[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 3, "delta": 0.1}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.sample_fractions.len(), 10);
        assert!(ExperimentConfig::from_json(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn unsorted_fractions_rejected() {
        let mut c = ExperimentConfig {
            sample_fractions: vec![0.5, 0.2],
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.sample_fractions = vec![0.0, 0.5];
        assert!(c.validate().is_err());
        c.sample_fractions = vec![0.5];
        c.epsilon_grid = vec![];
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn schema_lists_bounds_columns() {
        let s = parse_schema(SCHEMA);
        let b = &s["bounds.csv"];
        assert_eq!(b[0], "sample_frac");
        assert!(b.contains(&"delta_term_normalized".to_string()));
        assert!(s["geps.csv"].contains(&"eps_over_mu".to_string()));
        assert!(s["metrics.csv"]
            .iter()
            .any(|c| c.starts_with("geps_fraction@")));
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "# config_hash=ab\nm,fraction_in\n1,0.5\n").unwrap();
        check_columns(&p, &["m".into()]).unwrap();
        let err = check_columns(&p, &["eps_over_mu".into()]).unwrap_err();
        assert!(err.to_string().contains("eps_over_mu"));
        std::fs::write(&p, "m\n").unwrap();
        assert!(read_csv_header(&p).is_err());
    }
}
