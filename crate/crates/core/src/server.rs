//! Server algorithms: FedSGD, FedAvg as a biased-gradient step, and FedMom.
//!
//! FedSGD is FedAvg with a single local step per round. The server consumes
//! client models and forms `g_t = Σ_k (n_k/n)(w_t − w_{t+1}^k)`, where clients
//! outside the active set contribute `w_{t+1}^k = w_t`, i.e. nothing.

use std::collections::BTreeMap;

use rand::Rng;

use crate::clients::{self, LocalRunConfig};
use crate::data::FederatedDataset;
use crate::diagnostics::{self, MomentumZTracker, RoundRecord};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::{self, ParamVector};
use crate::rng::{Purpose, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FedSgd,
    FedAvg,
    FedMom,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedSgd => "fedsgd",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedMom => "fedmom",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedsgd" => Ok(Algorithm::FedSgd),
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedmom" => Ok(Algorithm::FedMom),
            other => Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub algorithm: Algorithm,
    /// `K`.
    pub clients: usize,
    /// `M`, active clients per round.
    pub active: usize,
    /// Server rate `η`, normally in `[1, K/M]`.
    pub eta: f64,
    /// Momentum `β ∈ [0, 1)`; ignored unless the algorithm is FedMom.
    pub beta: f64,
    /// `T`.
    pub rounds: usize,
    pub seed: u64,
    /// Accept `η` outside `[1, K/M]`.
    pub allow_eta_out_of_range: bool,
}

impl ServerConfig {
    /// FedAvg defaults: `M = 2` (capped at `K`), `η = K/M`, `β = 0.9`.
    pub fn new(algorithm: Algorithm, clients: usize, rounds: usize, seed: u64) -> Self {
        let active = clients.clamp(1, 2);
        Self {
            algorithm,
            clients,
            active,
            eta: clients as f64 / active as f64,
            beta: 0.9,
            rounds,
            seed,
            allow_eta_out_of_range: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("server.clients", "K must be >= 1"));
        }
        if self.active == 0 || self.active > self.clients {
            return Err(Error::config(
                "server.active",
                format!(
                    "need 1 <= M <= K, got M = {} and K = {}",
                    self.active, self.clients
                ),
            ));
        }
        let hi = self.clients as f64 / self.active as f64;
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::config(
                "server.eta",
                format!("eta must be positive, got {}", self.eta),
            ));
        }
        if !self.allow_eta_out_of_range && !(1.0..=hi).contains(&self.eta) {
            return Err(Error::config(
                "server.eta",
                format!("eta = {} outside [1, K/M] = [1, {hi}]", self.eta),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(
                "server.beta",
                format!("beta must lie in [0, 1), got {}", self.beta),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("server.rounds", "T must be >= 1"));
        }
        Ok(())
    }
}

/// Server model `w_t`, momentum sequence `v_t` (FedMom only) and round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    pub v: Option<ParamVector>,
    pub t: usize,
}

impl ServerState {
    pub fn new(algorithm: Algorithm, w0: ParamVector) -> Self {
        let v = (algorithm == Algorithm::FedMom).then(|| w0.clone());
        Self { w: w0, v, t: 0 }
    }
}

/// `S_t`: `M` distinct client ids in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(mut ids: Vec<usize>, clients: usize) -> Result<Self> {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("active set has duplicate clients"));
        }
        if let Some(&bad) = ids.iter().find(|&&k| k >= clients) {
            return Err(Error::invalid(format!(
                "client {bad} out of range {clients}"
            )));
        }
        Ok(Self(ids))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform `M`-subset of `0..K`, without replacement.
pub fn sample_active_set<R: Rng + ?Sized>(
    clients: usize,
    active: usize,
    rng: &mut R,
) -> Result<ActiveSet> {
    if active == 0 || active > clients {
        return Err(Error::invalid(format!(
            "need 1 <= M <= K, got M = {active}, K = {clients}"
        )));
    }
    let ids = rand::seq::index::sample(rng, clients, active).into_vec();
    ActiveSet::new(ids, clients)
}

/// `g_t = Σ_{k ∈ S_t} (n_k/n)(w_t − w_{t+1}^k)`.
pub fn biased_gradient(
    w_t: &ParamVector,
    local_models: &BTreeMap<usize, ParamVector>,
    weights: &[f64],
    active: &ActiveSet,
) -> Result<ParamVector> {
    params::validate_weights(weights)?;
    let mut g = ParamVector::zeros(w_t.dim());
    for &k in active.indices() {
        let w_k = local_models
            .get(&k)
            .ok_or_else(|| Error::invalid(format!("missing local model for active client {k}")))?;
        let weight = *weights
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no weight for client {k}")))?;
        let delta = clients::client_delta(w_t, w_k)?;
        g.axpy_in_place(weight, delta.as_slice());
    }
    Ok(g)
}

/// `w_{t+1} = w_t − η·g_t`.
pub fn fedavg_round(state: &ServerState, g_t: &ParamVector, eta: f64) -> Result<ServerState> {
    Ok(ServerState {
        w: params::axpy(-eta, g_t, &state.w)?,
        v: state.v.clone(),
        t: state.t + 1,
    })
}

/// `v_{t+1} = w_t − η·g_t`, `w_{t+1} = v_{t+1} + β(v_{t+1} − v_t)`.
pub fn fedmom_round(
    state: &ServerState,
    g_t: &ParamVector,
    eta: f64,
    beta: f64,
) -> Result<ServerState> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "beta must lie in [0, 1), got {beta}"
        )));
    }
    let v_t = state.v.as_ref().ok_or(Error::MissingHistory(
        "FedMom state carries no momentum vector",
    ))?;
    let v_next = params::axpy(-eta, g_t, &state.w)?;
    let w_next = params::axpy(beta, &v_next.sub(v_t)?, &v_next)?;
    Ok(ServerState {
        w: w_next,
        v: Some(v_next),
        t: state.t + 1,
    })
}

/// Round-to-round step size `γ_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// `γ_t = γ_0/(t+1)`: `Σγ_t = ∞`, `Σγ_t² < ∞`.
    Harmonic,
}

impl StepSchedule {
    pub fn gamma(self, gamma0: f64, t: usize) -> f64 {
        match self {
            StepSchedule::Constant => gamma0,
            StepSchedule::Harmonic => gamma0 / (t + 1) as f64,
        }
    }
}

/// Extra inputs for [`run_training`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reference point for `⟨g_t, w_t − w*⟩`.
    pub w_star: Option<ParamVector>,
    /// Starting point; defaults to the model's seeded initialization.
    pub initial: Option<ParamVector>,
    /// Keep `(w_t, g_t)` for every round in [`TrainingRun::iterates`].
    pub keep_iterates: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub initial: ParamVector,
    pub final_state: ServerState,
    /// `(w_t, g_t)` per round when requested, else empty.
    pub iterates: Vec<(ParamVector, ParamVector)>,
}

/// A run that stopped early, with the records emitted before the failure.
#[derive(Debug, Clone)]
pub struct TrainingFailure {
    pub error: Error,
    pub records: Vec<RoundRecord>,
}

impl std::fmt::Display for TrainingFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} rounds)", self.error, self.records.len())
    }
}

impl std::error::Error for TrainingFailure {}

impl From<Error> for TrainingFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            records: Vec::new(),
        }
    }
}

/// Executes `T` rounds: sample `S_t`, run local SGD on each active client,
/// form `g_t`, apply the server update. One [`RoundRecord`] per round.
///
/// Every random draw comes from a substream keyed by `(purpose, t, k)` under
/// `server.seed`, so the result does not depend on client execution order.
pub fn run_training(
    model: &Model,
    dataset: &FederatedDataset,
    server: &ServerConfig,
    local: &LocalRunConfig,
    schedule: StepSchedule,
    options: &RunOptions,
) -> std::result::Result<TrainingRun, TrainingFailure> {
    server.validate()?;
    local.validate()?;
    if dataset.client_count() != server.clients {
        return Err(Error::config(
            "server.clients",
            format!(
                "K = {} but dataset has {} clients",
                server.clients,
                dataset.client_count()
            ),
        )
        .into());
    }
    let seeds = SeedTree::new(server.seed);
    let w0 = match &options.initial {
        Some(w) => w.clone(),
        None => model.initial_params(&mut seeds.stream(Purpose::Init, 0, 0)),
    };
    if w0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: w0.dim(),
            right: model.dim(),
        }
        .into());
    }
    let local_iters = match server.algorithm {
        Algorithm::FedSgd => 1,
        _ => local.iterations,
    };
    let mut tracker = match server.algorithm {
        Algorithm::FedMom => {
            let mut tr = MomentumZTracker::new(server.beta)?;
            tr.start(&w0);
            Some(tr)
        }
        _ => None,
    };

    let mut state = ServerState::new(server.algorithm, w0.clone());
    let mut records = Vec::with_capacity(server.rounds);
    let mut iterates = Vec::new();
    let mut cumulative_gamma = 0.0;
    let fail = |error: Error, records: Vec<RoundRecord>| TrainingFailure { error, records };

    for t in 0..server.rounds {
        let mut step = || -> Result<(RoundRecord, ServerState, ParamVector)> {
            let gamma = schedule.gamma(local.gamma, t);
            let cfg = LocalRunConfig {
                gamma,
                iterations: local_iters,
                batch: local.batch,
            };
            let loss = model.full_loss(&state.w, dataset)?;
            let grad_norm_sq = model.full_gradient(&state.w, dataset)?.norm_sq();

            let active = sample_active_set(
                server.clients,
                server.active,
                &mut seeds.stream(Purpose::ClientSelection, t as u64, 0),
            )?;
            let mut local_models = BTreeMap::new();
            for &k in active.indices() {
                let mut rng = seeds.stream(Purpose::LocalSgd, t as u64, k as u64);
                let w_k = clients::local_sgd(&state.w, model, dataset.shard(k), &cfg, &mut rng)?;
                local_models.insert(k, w_k);
            }
            let g_t = biased_gradient(&state.w, &local_models, dataset.weights(), &active)?;
            let inner_product = options
                .w_star
                .as_ref()
                .map(|w_star| diagnostics::inner_product_diag(&g_t, &state.w, w_star))
                .transpose()?;

            let next = match server.algorithm {
                Algorithm::FedSgd | Algorithm::FedAvg => fedavg_round(&state, &g_t, server.eta)?,
                Algorithm::FedMom => fedmom_round(&state, &g_t, server.eta, server.beta)?,
            };
            let z_residual = match tracker.as_mut() {
                Some(tr) => Some(tr.observe(&state.w, &g_t.scale(server.eta), &next.w)?),
                None => None,
            };
            let record = RoundRecord {
                t,
                loss,
                grad_norm_sq,
                g_norm: g_t.norm(),
                inner_product,
                gamma,
                local_iters,
                active: active.indices().to_vec(),
                cumulative_gamma: cumulative_gamma + gamma,
                z_residual,
            };
            Ok((record, next, g_t))
        };
        match step() {
            Ok((record, next, g_t)) => {
                cumulative_gamma = record.cumulative_gamma;
                records.push(record);
                if !next.w.is_finite() {
                    return Err(fail(Error::Diverged { round: t }, records));
                }
                if options.keep_iterates {
                    iterates.push((state.w.clone(), g_t));
                }
                state = next;
            }
            Err(Error::LocalDivergence { .. }) => {
                return Err(fail(Error::Diverged { round: t }, records))
            }
            Err(e) => return Err(fail(e, records)),
        }
    }
    Ok(TrainingRun {
        records,
        initial: w0,
        final_state: state,
        iterates,
    })
}
