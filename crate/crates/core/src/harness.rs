//! Experiment configuration, execution and metric serialization.
//!
//! A config file is flat `key = value` text, one key per line, `#` starts a
//! comment. Keys with their defaults:
//!
//! ```text
//! seed = 0
//! model.kind = quadratic | logistic | mlp1      (required)
//! model.input_dim = <p>                         (required unless data.csv is set)
//! model.hidden = 8                              (mlp1 only)
//! model.ridge = 0                               (quadratic only: A = ridge·I)
//! data.csv = <path>                             (replaces synthetic data)
//! data.n_total = 1000
//! data.noise_std = 0.1
//! data.label_noise = 0
//! data.margin = 0
//! data.scheme = iid | label_shards | powerlaw
//! data.shards_per_client = 2
//! data.powerlaw_exponent = 1
//! data.min_shard = 1
//! server.algorithm = fedavg | fedsgd | fedmom
//! server.clients = 100
//! server.active = 2
//! server.eta = K/M
//! server.beta = 0.9
//! server.rounds = 2000
//! server.allow_eta_out_of_range = false
//! local.gamma = <γ>                             (required)
//! local.iterations = <H>                        (required)
//! local.batch = 10 | full
//! schedule = constant | harmonic
//! diag.reference_round = T | none
//! diag.lipschitz_surrogate = <L>
//! output = metrics.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::clients::{BatchSize, LocalRunConfig};
use crate::data::{self, FederatedDataset, PartitionSpec, Scheme, SynthesisSpec};
use crate::diagnostics::{self, BoundInputs, RoundRecord, TheoreticalBound};
use crate::error::{Error, Result};
use crate::models::{Curvature, Model, ModelKind};
use crate::rng::{Purpose, SeedTree};
use crate::server::{self, Algorithm, RunOptions, ServerConfig, StepSchedule, TrainingRun};

pub const METRICS_HEADER: &str =
    "t,loss,grad_norm_sq,g_norm,inner_product,gamma,local_iters,active_set,cumulative_gamma,z_residual";

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "model.kind",
    "model.input_dim",
    "model.hidden",
    "model.ridge",
    "data.csv",
    "data.n_total",
    "data.noise_std",
    "data.label_noise",
    "data.margin",
    "data.scheme",
    "data.shards_per_client",
    "data.powerlaw_exponent",
    "data.min_shard",
    "server.algorithm",
    "server.clients",
    "server.active",
    "server.eta",
    "server.beta",
    "server.rounds",
    "server.allow_eta_out_of_range",
    "local.gamma",
    "local.iterations",
    "local.batch",
    "schedule",
    "diag.reference_round",
    "diag.lipschitz_surrogate",
    "output",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: Option<usize>,
    pub hidden: usize,
    pub ridge: f64,
}

impl ModelSpec {
    pub fn build(&self, input_dim: usize) -> Result<Model> {
        if input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be >= 1"));
        }
        match self.kind {
            ModelKind::Quadratic => Model::quadratic(
                Curvature::Diagonal(vec![self.ridge; input_dim]),
                vec![0.0; input_dim],
            ),
            ModelKind::Logistic => Ok(Model::logistic(input_dim)),
            ModelKind::Mlp1 => Ok(Model::mlp1(input_dim, self.hidden)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthesisSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub partition: PartitionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    pub server: ServerConfig,
    pub local: LocalRunConfig,
    pub schedule: StepSchedule,
    /// Round whose model serves as `w*`; `None` disables the diagnostic.
    pub reference_round: Option<usize>,
    /// Smoothness constant used when the model has no computable one.
    pub lipschitz_surrogate: Option<f64>,
    pub output: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Re-keys every random stream (synthesis, partition, training) to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let tree = SeedTree::new(seed);
        self.seed = seed;
        self.server.seed = seed;
        self.data.partition.seed = tree.derive_seed(Purpose::Partition, 0, 0);
        if let DataSource::Synthetic(s) = &mut self.data.source {
            s.seed = tree.derive_seed(Purpose::Synthesis, 0, 0);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.server.validate()?;
        self.local
            .validate()
            .map_err(|e| Error::config("local", e.to_string()))?;
        self.data
            .partition
            .validate()
            .map_err(|e| Error::config("data.scheme", e.to_string()))?;
        if self.data.partition.clients != self.server.clients {
            return Err(Error::config(
                "data.scheme",
                "partition client count differs from server.clients",
            ));
        }
        if let DataSource::Synthetic(s) = &self.data.source {
            if s.n_total < self.server.clients {
                return Err(Error::config(
                    "data.n_total",
                    format!(
                        "n_total = {} is fewer than K = {} clients",
                        s.n_total, self.server.clients
                    ),
                ));
            }
            if !(0.0..=0.5).contains(&s.label_noise) {
                return Err(Error::config("data.label_noise", "must lie in [0, 0.5]"));
            }
            if !(s.noise_std >= 0.0) || !(s.margin >= 0.0) {
                return Err(Error::config("data", "noise_std and margin must be >= 0"));
            }
        }
        if self.model.input_dim.is_none() && matches!(self.data.source, DataSource::Synthetic(_)) {
            return Err(Error::config(
                "model.input_dim",
                "required for synthetic data",
            ));
        }
        if self.model.kind == ModelKind::Mlp1 && self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "must be >= 1"));
        }
        if !(self.model.ridge >= 0.0) || !self.model.ridge.is_finite() {
            return Err(Error::config("model.ridge", "must be finite and >= 0"));
        }
        if let Some(l) = self.lipschitz_surrogate {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::config(
                    "diag.lipschitz_surrogate",
                    "must be finite and > 0",
                ));
            }
        }
        if self.reference_round == Some(0) {
            return Err(Error::config("diag.reference_round", "must be >= 1"));
        }
        Ok(())
    }

    /// Samples for this config, synthetic or read from CSV.
    pub fn samples(&self) -> Result<Vec<crate::models::Sample>> {
        match &self.data.source {
            DataSource::Synthetic(s) => Ok(data::generate_planted(s)?.0),
            DataSource::Csv(path) => data::read_csv(path),
        }
    }

    /// Model plus partitioned dataset.
    pub fn build(&self) -> Result<(Model, FederatedDataset)> {
        let samples = self.samples()?;
        let p = samples
            .first()
            .map(|s| s.features.len())
            .ok_or(Error::Empty("dataset"))?;
        if let Some(d) = self.model.input_dim {
            if d != p {
                return Err(Error::config(
                    "model.input_dim",
                    format!("{d} but data has {p} features"),
                ));
            }
        }
        let model = self.model.build(p)?;
        let dataset = data::partition(samples, &self.data.partition)?;
        Ok((model, dataset))
    }
}

struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", i + 1), "expected `key = value`")
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if entries
                .insert(key.to_string(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::config(key, "duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parse_opt(key)?
            .ok_or_else(|| Error::config(key, "missing required key"))
    }
}

/// Parses config text. Relative `data.csv` paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let raw = RawConfig::parse(text)?;
    let seed: u64 = raw.parse_or("seed", 0)?;

    let kind: ModelKind = raw
        .str("model.kind")
        .ok_or_else(|| Error::config("model.kind", "missing required key"))?
        .parse()
        .map_err(|e: Error| Error::config("model.kind", e.to_string()))?;
    let model = ModelSpec {
        kind,
        input_dim: raw.parse_opt("model.input_dim")?,
        hidden: raw.parse_or("model.hidden", 8)?,
        ridge: raw.parse_or("model.ridge", 0.0)?,
    };

    let clients: usize = raw.parse_or("server.clients", 100)?;
    let active: usize = raw.parse_or("server.active", 2)?;
    let algorithm: Algorithm = raw
        .str("server.algorithm")
        .unwrap_or("fedavg")
        .parse()
        .map_err(|e: Error| Error::config("server.algorithm", e.to_string()))?;
    let eta_default = if active > 0 {
        clients as f64 / active as f64
    } else {
        f64::NAN
    };
    let server = ServerConfig {
        algorithm,
        clients,
        active,
        eta: raw.parse_or("server.eta", eta_default)?,
        beta: raw.parse_or("server.beta", 0.9)?,
        rounds: raw.parse_or("server.rounds", 2000)?,
        seed,
        allow_eta_out_of_range: raw.parse_or("server.allow_eta_out_of_range", false)?,
    };

    let batch = match raw.str("local.batch") {
        None => BatchSize::Sampled(10),
        Some("full") => BatchSize::Full,
        Some(_) => BatchSize::Sampled(raw.required("local.batch")?),
    };
    let local = LocalRunConfig {
        gamma: raw.required("local.gamma")?,
        iterations: raw.required("local.iterations")?,
        batch,
    };

    let scheme = match raw.str("data.scheme").unwrap_or("iid") {
        "iid" => Scheme::Iid,
        "label_shards" => Scheme::LabelShards {
            shards_per_client: raw.parse_or("data.shards_per_client", 2)?,
        },
        "powerlaw" => Scheme::PowerLaw {
            exponent: raw.parse_or("data.powerlaw_exponent", 1.0)?,
            min_size: raw.parse_or("data.min_shard", 1)?,
        },
        other => {
            return Err(Error::config(
                "data.scheme",
                format!("unknown scheme `{other}`"),
            ))
        }
    };
    let source = match raw.str("data.csv") {
        Some(p) => DataSource::Csv(base_dir.join(p)),
        None => {
            let mut s = SynthesisSpec::new(
                kind,
                raw.parse_or("data.n_total", 1000)?,
                model.input_dim.unwrap_or(0),
                0,
            );
            s.noise_std = raw.parse_or("data.noise_std", s.noise_std)?;
            s.label_noise = raw.parse_or("data.label_noise", s.label_noise)?;
            s.margin = raw.parse_or("data.margin", s.margin)?;
            DataSource::Synthetic(s)
        }
    };

    let schedule = match raw.str("schedule").unwrap_or("constant") {
        "constant" => StepSchedule::Constant,
        "harmonic" => StepSchedule::Harmonic,
        other => {
            return Err(Error::config(
                "schedule",
                format!("unknown schedule `{other}`"),
            ))
        }
    };
    let reference_round = match raw.str("diag.reference_round") {
        None => Some(server.rounds),
        Some("none") => None,
        Some(_) => Some(raw.required("diag.reference_round")?),
    };

    let cfg = ExperimentConfig {
        model,
        data: DataSpec {
            source,
            partition: PartitionSpec {
                scheme,
                clients,
                seed: 0,
            },
        },
        server,
        local,
        schedule,
        reference_round,
        lipschitz_surrogate: raw.parse_opt("diag.lipschitz_surrogate")?,
        output: PathBuf::from(raw.str("output").unwrap_or("metrics.csv")),
        seed,
    }
    .with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Serialized metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub path: PathBuf,
    pub records: Vec<RoundRecord>,
}

fn fmt_f64(out: &mut String, x: f64) {
    // 17 significant digits round-trip every f64
    let _ = write!(out, "{x:.16e}");
}

/// CSV text: header, then one row per record, LF endings.
pub fn render_metrics(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 220);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},", r.t);
        fmt_f64(&mut out, r.loss);
        out.push(',');
        fmt_f64(&mut out, r.grad_norm_sq);
        out.push(',');
        fmt_f64(&mut out, r.g_norm);
        out.push(',');
        if let Some(ip) = r.inner_product {
            fmt_f64(&mut out, ip);
        }
        out.push(',');
        fmt_f64(&mut out, r.gamma);
        let _ = write!(out, ",{},", r.local_iters);
        let active: Vec<String> = r.active.iter().map(usize::to_string).collect();
        out.push_str(&active.join(";"));
        out.push(',');
        fmt_f64(&mut out, r.cumulative_gamma);
        out.push(',');
        if let Some(z) = r.z_residual {
            fmt_f64(&mut out, z);
        }
        out.push('\n');
    }
    out
}

fn write_metrics(path: &Path, records: Vec<RoundRecord>) -> Result<MetricsFile> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, render_metrics(&records))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(MetricsFile {
        path: path.to_path_buf(),
        records,
    })
}

/// A failed experiment. `metrics` holds the partial file written on divergence.
#[derive(Debug, Clone)]
pub struct ExperimentError {
    pub error: Error,
    pub metrics: Option<MetricsFile>,
}

impl ExperimentError {
    /// Process exit status: 1 config, 2 divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

impl std::fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.metrics {
            Some(m) => write!(f, "{}; partial metrics in {}", self.error, m.path.display()),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<Error> for ExperimentError {
    fn from(error: Error) -> Self {
        Self {
            error,
            metrics: None,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::LocalDivergence { .. } => 2,
        Error::Io(_) | Error::Csv { .. } => 3,
        _ => 1,
    }
}

/// Runs training, fills `⟨g_t, w_t − w*⟩` with `w* = w_R`, writes `cfg.output`.
///
/// Training is a pure function of the seed, so `w_R` for `R ≤ T` is taken
/// from the run itself; `R > T` triggers a longer reference run.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<MetricsFile, ExperimentError> {
    cfg.validate()?;
    let (model, dataset) = cfg.build()?;
    let opts = RunOptions {
        keep_iterates: cfg.reference_round.is_some(),
        ..Default::default()
    };
    let run = match server::run_training(
        &model,
        &dataset,
        &cfg.server,
        &cfg.local,
        cfg.schedule,
        &opts,
    ) {
        Ok(run) => run,
        Err(failure) => {
            let metrics = write_metrics(&cfg.output, failure.records).ok();
            return Err(ExperimentError {
                error: failure.error,
                metrics,
            });
        }
    };
    let TrainingRun {
        mut records,
        iterates,
        final_state,
        ..
    } = run;
    if let Some(r) = cfg.reference_round {
        let w_star = if r == cfg.server.rounds {
            final_state.w
        } else if r < cfg.server.rounds {
            iterates[r].0.clone()
        } else {
            let mut long = cfg.server;
            long.rounds = r;
            server::run_training(
                &model,
                &dataset,
                &long,
                &cfg.local,
                cfg.schedule,
                &RunOptions::default(),
            )
            .map_err(|f| f.error)?
            .final_state
            .w
        };
        for (rec, (w_t, g_t)) in records.iter_mut().zip(&iterates) {
            rec.inner_product = Some(diagnostics::inner_product_diag(g_t, w_t, &w_star)?);
        }
    }
    Ok(write_metrics(&cfg.output, records)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Gamma,
    H,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "H" | "h" => Ok(SweepAxis::H),
            other => Err(Error::invalid(format!(
                "unknown sweep axis `{other}`, expected gamma or H"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct SweepRun {
    pub value: f64,
    /// E.g. `H=1 (FedSGD-equivalent)`.
    pub label: String,
    pub result: std::result::Result<MetricsFile, ExperimentError>,
}

/// `<stem>_<axis><value>.<ext>` next to the base output.
pub fn sweep_output_path(base: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    let tag = match axis {
        SweepAxis::Gamma => "gamma",
        SweepAxis::H => "H",
    };
    base.with_file_name(format!("{stem}_{tag}{value}.{ext}"))
}

/// One run per value with the shared seed; failures are reported per run.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let runs = values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            cfg.output = sweep_output_path(&base.output, axis, value);
            let label = match axis {
                SweepAxis::Gamma => format!("gamma={value}"),
                SweepAxis::H if value == 1.0 => "H=1 (FedSGD-equivalent)".to_string(),
                SweepAxis::H => format!("H={value}"),
            };
            let result = match axis {
                SweepAxis::Gamma => {
                    cfg.local.gamma = value;
                    Ok(())
                }
                SweepAxis::H if value >= 1.0 && value.fract() == 0.0 => {
                    cfg.local.iterations = value as usize;
                    Ok(())
                }
                SweepAxis::H => Err(Error::config(
                    "local.iterations",
                    format!("H = {value} is not a positive integer"),
                )),
            }
            .map_err(ExperimentError::from)
            .and_then(|()| run_experiment(&cfg));
            SweepRun {
                value,
                label,
                result,
            }
        })
        .collect();
    Ok(runs)
}

/// Bound evaluation for the CLI `bounds` verb.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub bound: TheoreticalBound,
    pub f0: f64,
    pub f_inf: f64,
    pub stepsize_ok: bool,
    pub stepsize_threshold: f64,
}

/// Evaluates the theoretical bound at `w_0` with the given `L` and `σ²`.
///
/// `f_gap = f(w_0) − f_inf` uses the model's lower bound (exact for the
/// quadratic family, `0` otherwise).
pub fn evaluate_bounds(cfg: &ExperimentConfig, l: f64, sigma_sq: f64) -> Result<BoundReport> {
    let (model, dataset) = cfg.build()?;
    let w0 = model.initial_params(&mut SeedTree::new(cfg.server.seed).stream(Purpose::Init, 0, 0));
    let f0 = model.full_loss(&w0, &dataset)?;
    let f_inf = model.lower_bound(&dataset)?;
    let h = match cfg.server.algorithm {
        Algorithm::FedSgd => 1,
        _ => cfg.local.iterations,
    };
    let inputs = BoundInputs {
        l,
        sigma_sq,
        clients: cfg.server.clients,
        active: cfg.server.active,
        local_iters: h,
        eta: cfg.server.eta,
        rounds: cfg.server.rounds,
        f_gap: (f0 - f_inf).max(0.0),
    };
    let gamma = cfg.local.gamma;
    let (bound, stepsize_ok, stepsize_threshold) = match cfg.server.algorithm {
        Algorithm::FedMom => {
            let chk = diagnostics::stepsize_check_fedmom(gamma, &inputs, cfg.server.beta)?;
            let thr = chk
                .rate_threshold
                .min(chk.smoothness_threshold)
                .min(chk.momentum_threshold);
            (
                TheoreticalBound::fedmom(inputs, cfg.server.beta)?,
                chk.passes,
                thr,
            )
        }
        _ => {
            let chk = diagnostics::stepsize_check_fedavg(gamma, l, h, cfg.server.eta)?;
            (
                TheoreticalBound::fedavg(inputs, gamma)?,
                chk.passes,
                chk.threshold,
            )
        }
    };
    Ok(BoundReport {
        bound,
        f0,
        f_inf,
        stepsize_ok,
        stepsize_threshold,
    })
}

/// `L` for the config's model: measured where possible, else the surrogate.
pub fn smoothness_constant(
    cfg: &ExperimentConfig,
    model: &Model,
    dataset: &FederatedDataset,
) -> Result<f64> {
    match model.lipschitz_bound(dataset) {
        Ok(l) => Ok(l),
        Err(Error::UnsupportedModel(msg)) => cfg
            .lipschitz_surrogate
            .ok_or_else(|| Error::config("diag.lipschitz_surrogate", msg)),
        Err(e) => Err(e),
    }
}
