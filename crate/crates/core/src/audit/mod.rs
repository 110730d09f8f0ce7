//! End-to-end audit: ingest a table (or a covariance matrix), fit or load a
//! linear model, measure parity, and search for proxies over a sweep of
//! association thresholds.

mod ingest;
mod ols;
mod report;

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use ingest::{read_csv, IngestSpec, IngestSummary, MISSING_MARKERS};
pub use ols::{fit_ols, OlsFit};
pub use report::{csv_tables, emit_report, mode_name};

use crate::conic::{NormMaxOptions, Side};
use crate::data::Dataset;
use crate::embedding::{
    embed_with, estimate_covariance, CovarianceMatrix, Decomposition, EmbeddedProblem,
};
use crate::error::{Error, Result};
use crate::model::{
    demographic_parity_gap, input_association, parity_identity, series_association, Component,
    LinearModel, Thresholds, DEFAULT_COMPARE_TOLERANCE, DEFAULT_EPSILON_PRIME,
};
use crate::search::{
    sweep_with, AuditFinding, SearchMode, SearchPath, SweepMode, SweepRow, Verdict,
};

/// Version of the report layout. Bumped on any incompatible change.
pub const SCHEMA_VERSION: &str = "1.0";

/// Row name marking the intercept in a model file.
pub const INTERCEPT_ROW: &str = "__intercept__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

/// Where the model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    /// Fit by least squares to this response column.
    Target(String),
    /// `feature,coefficient` file.
    File(PathBuf),
}

/// Where second moments come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Csv(PathBuf),
    /// Square covariance CSV with a header of labels.
    Covariance(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub data: DataSource,
    pub protected: String,
    pub protected_pair: Option<(String, String)>,
    pub model: ModelSource,
    /// Model inputs. Required when fitting; must be empty or match the model
    /// file otherwise.
    pub features: Vec<String>,
    pub exempt: Option<String>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub epsilon_prime: f64,
    pub format: OutputFormat,
    pub seed: u64,
    /// Record wall-clock phase timings in the report. Off by default so
    /// reports are reproducible byte for byte.
    pub record_timings: bool,
    pub decomposition: Decomposition,
}

/// `0.01, 0.02, .., 0.10`.
pub fn default_epsilons() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 100.0).collect()
}

impl AuditConfig {
    pub fn new(data: DataSource, protected: impl Into<String>, model: ModelSource) -> Self {
        Self {
            data,
            protected: protected.into(),
            protected_pair: None,
            model,
            features: Vec::new(),
            exempt: None,
            epsilons: default_epsilons(),
            delta: 0.05,
            epsilon_prime: DEFAULT_EPSILON_PRIME,
            format: OutputFormat::Json,
            seed: 0,
            record_timings: false,
            decomposition: Decomposition::Auto,
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        let first = self.epsilons.first().copied().unwrap_or(0.05);
        Thresholds {
            epsilon: first,
            delta: self.delta,
            epsilon_prime: self.epsilon_prime,
            compare_tolerance: DEFAULT_COMPARE_TOLERANCE,
        }
        .validated()
    }

    pub fn validate(&self) -> Result<()> {
        let th = self.thresholds()?;
        for &e in &self.epsilons {
            th.with_epsilon(e)?;
        }
        if self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("epsilons must be strictly ascending".into()));
        }
        let mut seen: Vec<&str> = vec![&self.protected];
        for f in &self.features {
            if seen.contains(&f.as_str()) {
                return Err(Error::Config(format!("column `{f}` listed twice")));
            }
            seen.push(f);
        }
        match &self.model {
            ModelSource::Target(t) => {
                if seen.contains(&t.as_str()) {
                    return Err(Error::Config(format!(
                        "target `{t}` is also the protected attribute or a feature"
                    )));
                }
                if self.features.is_empty() {
                    return Err(Error::Config(
                        "fitting a model needs feature columns".into(),
                    ));
                }
            }
            ModelSource::File(_) => {}
        }
        if let Some(e) = &self.exempt {
            if !self.features.is_empty() && !self.features.contains(e) {
                return Err(Error::Config(format!(
                    "exempt column `{e}` is not a feature"
                )));
            }
        }
        if matches!(self.data, DataSource::Covariance(_)) {
            if matches!(self.model, ModelSource::Target(_)) {
                return Err(Error::Config(
                    "a covariance input needs a model file; fitting requires row data".into(),
                ));
            }
            if self.protected_pair.is_some() {
                return Err(Error::Config(
                    "a protected label pair only applies to row data".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Reads a model file: `feature,coefficient` rows, an optional header, and
/// an optional `__intercept__` row.
pub fn read_model<R: Read>(reader: R) -> Result<LinearModel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut inputs = Vec::new();
    let mut coefs = Vec::new();
    let mut intercept = 0.0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::InvalidModel(format!(
                "line {}: expected `feature,coefficient`",
                i + 1
            )));
        }
        let value = match rec[1].parse::<f64>() {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::NonNumeric {
                    column: "coefficient".into(),
                    row: i + 1,
                    value: rec[1].to_string(),
                })
            }
        };
        if &rec[0] == INTERCEPT_ROW {
            intercept = value;
        } else {
            if inputs.iter().any(|n: &String| n == &rec[0]) {
                return Err(Error::InvalidModel(format!(
                    "feature `{}` repeated",
                    &rec[0]
                )));
            }
            inputs.push(rec[0].to_string());
            coefs.push(value);
        }
    }
    LinearModel::new(inputs, coefs, intercept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// `csv` or `covariance`.
    pub source: String,
    pub rows_read: Option<usize>,
    pub rows_kept: Option<usize>,
    pub rows_dropped: Option<usize>,
    pub dropped_missing: Option<usize>,
    pub dropped_protected_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub input: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    /// `fitted` or `file`.
    pub source: String,
    pub coefficients: Vec<Coefficient>,
    pub intercept: f64,
    pub r_squared: Option<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParitySummary {
    /// `E[Ŷ | Z = 0] − E[Ŷ | Z = 1]`; only for a binary protected attribute.
    pub gap: Option<f64>,
    pub asc_prediction_protected: f64,
    /// Needs the response column.
    pub asc_target_protected: Option<f64>,
    pub identity_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemptSummary {
    pub input: String,
    pub association: f64,
    pub epsilon_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: SearchMode,
    pub rows: Vec<SweepRow>,
}

/// One term `αᵢ βᵢ Xᵢ` of a witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessTerm {
    pub input: String,
    pub alpha: f64,
    pub coefficient: f64,
    pub effective_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub association: Option<f64>,
    pub influence: f64,
    pub terms: Vec<WitnessTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingEntry {
    pub epsilon: f64,
    pub mode: SearchMode,
    pub path: SearchPath,
    pub verdict: Verdict,
    pub side: Option<Side>,
    pub approx_influence_estimate: Option<f64>,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub ingest_ms: f64,
    pub model_ms: f64,
    pub covariance_ms: f64,
    pub embed_ms: f64,
    pub parity_ms: f64,
    pub optimization_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: String,
    pub protected: String,
    pub dataset: DatasetSummary,
    pub model: ModelSummary,
    pub parity: ParitySummary,
    pub thresholds: Thresholds,
    pub exempt: Option<ExemptSummary>,
    pub sweeps: Vec<SweepTable>,
    pub findings: Vec<FindingEntry>,
    /// Strongest verdict among the findings that decide the outcome: the
    /// nonexempt ones when an exempt input is set, otherwise the general ones.
    pub verdict: Verdict,
    pub timings: Option<Timings>,
}

impl AuditReport {
    /// Process exit code: 0 when no proxy use is found, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::NoProxyUse => 0,
            _ => 2,
        }
    }
}

fn witness(component: &Component, prob: &EmbeddedProblem) -> Witness {
    Witness {
        association: component.association,
        influence: component.influence,
        terms: prob
            .names()
            .iter()
            .zip(&component.alphas)
            .zip(prob.coefficients())
            .map(|((name, &alpha), &b)| WitnessTerm {
                input: name.clone(),
                alpha,
                coefficient: b,
                effective_coefficient: alpha * b,
            })
            .collect(),
    }
}

fn entry(epsilon: f64, f: AuditFinding, prob: &EmbeddedProblem) -> FindingEntry {
    FindingEntry {
        epsilon,
        mode: f.mode,
        path: f.path,
        verdict: f.verdict,
        side: f.side,
        approx_influence_estimate: f.approx_influence_estimate,
        witness: f.witness.as_ref().map(|w| witness(w, prob)),
        note: f.note,
    }
}

struct Clock {
    start: Instant,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
        }
    }

    fn lap(&mut self) -> f64 {
        let now = Instant::now();
        let ms = (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
        ms
    }

    fn total(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

struct Loaded {
    dataset: DatasetSummary,
    rows: Option<Dataset>,
    sigma: Option<CovarianceMatrix>,
}

fn load(config: &AuditConfig, file_model: Option<&LinearModel>) -> Result<Loaded> {
    match &config.data {
        DataSource::Csv(path) => {
            let mut columns: Vec<&str> = match file_model {
                Some(m) => m.inputs().iter().map(String::as_str).collect(),
                None => config.features.iter().map(String::as_str).collect(),
            };
            if let ModelSource::Target(t) = &config.model {
                columns.push(t);
            }
            let spec = IngestSpec {
                protected: &config.protected,
                protected_pair: config
                    .protected_pair
                    .as_ref()
                    .map(|(a, b)| (a.as_str(), b.as_str())),
                columns,
            };
            let (data, s) = read_csv(open(path)?, &spec)?;
            Ok(Loaded {
                dataset: DatasetSummary {
                    source: "csv".into(),
                    rows_read: Some(s.rows_read),
                    rows_kept: Some(s.rows_kept),
                    rows_dropped: Some(s.rows_read - s.rows_kept),
                    dropped_missing: Some(s.dropped_missing),
                    dropped_protected_label: Some(s.dropped_protected_label),
                },
                rows: Some(data),
                sigma: None,
            })
        }
        DataSource::Covariance(path) => Ok(Loaded {
            dataset: DatasetSummary {
                source: "covariance".into(),
                rows_read: None,
                rows_kept: None,
                rows_dropped: None,
                dropped_missing: None,
                dropped_protected_label: None,
            },
            rows: None,
            sigma: Some(CovarianceMatrix::from_csv(open(path)?)?),
        }),
    }
}

struct Prepared {
    loaded: Loaded,
    model: LinearModel,
    r_squared: Option<f64>,
    prob: EmbeddedProblem,
    laps: [f64; 4],
}

fn prepare(config: &AuditConfig, clock: &mut Clock) -> Result<Prepared> {
    config.validate().map_err(|e| e.in_phase("config"))?;
    let file_model = match &config.model {
        ModelSource::File(path) => {
            let m = open(path)
                .and_then(read_model)
                .map_err(|e| e.in_phase("model"))?;
            if !config.features.is_empty() && config.features != m.inputs() {
                return Err(
                    Error::Config("features do not match the model file".into()).in_phase("model")
                );
            }
            Some(m)
        }
        ModelSource::Target(_) => None,
    };
    let loaded = load(config, file_model.as_ref()).map_err(|e| e.in_phase("ingest"))?;
    let ingest_ms = clock.lap();

    let (model, r_squared) = match (&config.model, file_model) {
        (_, Some(m)) => (m, None),
        (ModelSource::Target(t), None) => {
            let data = loaded.rows.as_ref().expect("row data when fitting");
            let fit = fit_ols(data, t, &config.features).map_err(|e| e.in_phase("fit"))?;
            (fit.model, Some(fit.r_squared))
        }
        (ModelSource::File(_), None) => unreachable!("model file loaded above"),
    };
    let model_ms = clock.lap();

    let mut labels = vec![config.protected.clone()];
    labels.extend(model.inputs().iter().cloned());
    let sigma = match (&loaded.rows, &loaded.sigma) {
        (Some(data), _) => estimate_covariance(data, &labels),
        (None, Some(s)) => s.select(&labels),
        (None, None) => unreachable!("one data source"),
    }
    .map_err(|e| e.in_phase("covariance"))?;
    let covariance_ms = clock.lap();

    let prob = embed_with(&model, &sigma, config.decomposition).map_err(|e| e.in_phase("embed"))?;
    if prob.model_variance() <= 0.0 {
        return Err(Error::DegenerateModel.in_phase("embed"));
    }
    let embed_ms = clock.lap();
    Ok(Prepared {
        loaded,
        model,
        r_squared,
        prob,
        laps: [ingest_ms, model_ms, covariance_ms, embed_ms],
    })
}

/// Runs the audit up to the embedding and returns the embedded problem, for
/// callers that want to query the solvers directly.
pub fn embedded_problem(config: &AuditConfig) -> Result<EmbeddedProblem> {
    prepare(config, &mut Clock::new()).map(|p| p.prob)
}

/// Runs every phase of the audit. Any failure aborts with the phase name.
pub fn run_audit(config: &AuditConfig) -> Result<AuditReport> {
    let mut clock = Clock::new();
    let Prepared {
        loaded,
        model,
        r_squared,
        prob,
        laps: [ingest_ms, model_ms, covariance_ms, embed_ms],
    } = prepare(config, &mut clock)?;

    let parity =
        parity_summary(config, &loaded, &model, &prob).map_err(|e| e.in_phase("parity"))?;
    let parity_ms = clock.lap();

    let th = config.thresholds().map_err(|e| e.in_phase("config"))?;
    let exempt = match &config.exempt {
        Some(name) => {
            let idx = model
                .inputs()
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()).in_phase("config"))?;
            Some((name.clone(), idx))
        }
        None => None,
    };
    let opts = NormMaxOptions {
        seed: config.seed,
        ..NormMaxOptions::default()
    };
    let mut modes = vec![SweepMode::General];
    if let Some((_, idx)) = &exempt {
        modes.push(SweepMode::Nonexempt { exempt_index: *idx });
    }
    let mut sweeps = Vec::new();
    let mut findings = Vec::new();
    for mode in modes {
        let points = sweep_with(&prob, &config.epsilons, &th, mode, &opts)
            .map_err(|e| e.in_phase("optimization"))?;
        let search_mode = match mode {
            SweepMode::General => SearchMode::General,
            SweepMode::Nonexempt { .. } => SearchMode::Nonexempt,
        };
        let mut rows = Vec::with_capacity(points.len());
        for p in points {
            findings.push(entry(p.row.epsilon, p.exact, &prob));
            findings.push(entry(p.row.epsilon, p.approx, &prob));
            rows.push(p.row);
        }
        sweeps.push(SweepTable {
            mode: search_mode,
            rows,
        });
    }
    let optimization_ms = clock.lap();

    let deciding = if exempt.is_some() {
        SearchMode::Nonexempt
    } else {
        SearchMode::General
    };
    let verdict = findings
        .iter()
        .filter(|f| f.mode == deciding)
        .map(|f| f.verdict)
        .max()
        .unwrap_or(Verdict::NoProxyUse);
    let exempt = match exempt {
        Some((input, idx)) => Some(ExemptSummary {
            association: input_association(&prob, idx).map_err(|e| e.in_phase("parity"))?,
            input,
            epsilon_prime: th.epsilon_prime,
        }),
        None => None,
    };

    let timings = config.record_timings.then(|| Timings {
        ingest_ms,
        model_ms,
        covariance_ms,
        embed_ms,
        parity_ms,
        optimization_ms,
        total_ms: clock.total(),
    });
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION.into(),
        protected: config.protected.clone(),
        dataset: loaded.dataset,
        model: ModelSummary {
            source: if r_squared.is_some() {
                "fitted"
            } else {
                "file"
            }
            .into(),
            coefficients: model
                .inputs()
                .iter()
                .zip(model.coefficients())
                .map(|(n, &c)| Coefficient {
                    input: n.clone(),
                    coefficient: c,
                })
                .collect(),
            intercept: model.intercept(),
            r_squared,
            variance: prob.model_variance(),
        },
        parity,
        thresholds: th,
        exempt,
        sweeps,
        findings,
        verdict,
        timings,
    })
}

fn parity_summary(
    config: &AuditConfig,
    loaded: &Loaded,
    model: &LinearModel,
    prob: &EmbeddedProblem,
) -> Result<ParitySummary> {
    let full = prob.component_vector(&vec![1.0; prob.len()]);
    let asc_model = crate::model::association(&full, prob.z())?.unwrap_or(0.0);
    let Some(data) = &loaded.rows else {
        let asc_target = match (&config.model, &loaded.sigma) {
            (ModelSource::Target(t), Some(s)) if s.index_of(t).is_some() => {
                let c = s.get(&config.protected, t)?;
                let vz = s.get(&config.protected, &config.protected)?;
                let vy = s.get(t, t)?;
                (vy > 0.0).then(|| c * c / (vz * vy))
            }
            _ => None,
        };
        return Ok(ParitySummary {
            gap: None,
            asc_prediction_protected: asc_model,
            asc_target_protected: asc_target,
            identity_residual: None,
        });
    };
    let z = data.column(&config.protected)?;
    let yhat = data.linear_combination(model.inputs(), model.coefficients(), model.intercept())?;
    let binary = z.iter().all(|&v| v == 0.0 || v == 1.0);
    let (gap, residual) = if binary && demographic_parity_gap(&yhat, z).is_ok() {
        let p = parity_identity(&yhat, z)?;
        (Some(p.gap), Some(p.residual()))
    } else {
        (None, None)
    };
    let asc_target = match &config.model {
        ModelSource::Target(t) => series_association(data.column(t)?, z),
        ModelSource::File(_) => None,
    };
    Ok(ParitySummary {
        gap,
        asc_prediction_protected: series_association(&yhat, z).unwrap_or(asc_model),
        asc_target_protected: asc_target,
        identity_residual: residual,
    })
}
