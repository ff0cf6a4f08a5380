//! Federated round engine.
//!
//! A round selects a roster, runs local training on each roster client
//! starting from the current global model, then averages the results weighted
//! by training-set size. In [`Mode::EquiFl`] a client only takes the hidden
//! layers' weight matrices from the global model; its biases and the whole
//! output layer stay local. [`Mode::FedAvg`] copies everything.

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::fairness::PenaltyKind;
use crate::nn::loss_and_grad;
use crate::params::{init_params, ModelParams, NetConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    #[default]
    EquiFl,
    FedAvg,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::EquiFl => "equifl",
            Mode::FedAvg => "fedavg",
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "equifl" => Ok(Mode::EquiFl),
            "fedavg" => Ok(Mode::FedAvg),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected equifl or fedavg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FedConfig {
    pub num_rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub mu: f64,
    pub penalty: PenaltyKind,
    /// Fraction of clients selected per round, in `(0, 1]`.
    pub participation: f64,
    pub mode: Mode,
    pub optimizer: AdamConfig,
    /// Zero each client's Adam moments at the start of every round.
    pub reset_optimizer: bool,
    pub seed: u64,
    /// Record a metrics report every this many rounds (and after the last).
    pub evaluate_every: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            num_rounds: 100,
            local_epochs: 5,
            batch_size: 256,
            mu: 1.0,
            penalty: PenaltyKind::SoftDp,
            participation: 1.0,
            mode: Mode::EquiFl,
            optimizer: AdamConfig::default(),
            reset_optimizer: false,
            seed: 0,
            evaluate_every: 1,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rounds == 0 {
            return Err(Error::Config("num_rounds must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "mu must be finite and >= 0, got {}",
                self.mu
            )));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        if self.evaluate_every == 0 {
            return Err(Error::Config("evaluate_every must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// A client's data, local model, optimizer and random stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: Arc<ClientDataset>,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(data: Arc<ClientDataset>, initial: &ModelParams, cfg: &FedConfig) -> Self {
        let id = data.id;
        ClientState {
            id,
            params: initial.clone(),
            optimizer: AdamState::new(initial, cfg.optimizer),
            rng: rng::derived_stream(cfg.seed, &[rng::tag::CLIENT, id as u64]),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    /// Number of completed rounds; `global` is the model after that many.
    pub round: usize,
    pub global: ModelParams,
    /// Clients that contributed to `global` (empty before the first round).
    pub roster: Vec<usize>,
    pub metrics: Option<MetricsReport>,
}

/// `⌈fraction · n⌉` distinct clients in ascending order; all of them when the
/// fraction is 1.
pub fn select_clients<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    if fraction >= 1.0 || n <= 1 {
        return (0..n).collect();
    }
    let k = (libm::ceil(fraction * n as f64 - 1e-9) as usize).clamp(1, n);
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// The parameters a client starts local training from.
///
/// EquiFL: weights of layers `1..m-1` come from `global`; every bias and the
/// whole last layer stay as in `local`. FedAvg: a copy of `global`.
pub fn selective_init(local: &ModelParams, global: &ModelParams, mode: Mode) -> Result<ModelParams> {
    local.ensure_same_shape(global, "selective init")?;
    match mode {
        Mode::FedAvg => Ok(global.clone()),
        Mode::EquiFl => {
            let mut out = local.clone();
            let hidden = out.layers.len() - 1;
            for (dst, src) in out.layers.iter_mut().zip(&global.layers).take(hidden) {
                dst.weights.copy_from_slice(&src.weights);
            }
            Ok(out)
        }
    }
}

/// Client state right before its first local step of a round.
pub fn prepare_local(client: &ClientState, global: &ModelParams, cfg: &FedConfig) -> Result<ClientState> {
    let mut next = client.clone();
    next.params = selective_init(&client.params, global, cfg.mode)?;
    if cfg.reset_optimizer {
        next.optimizer.reset();
    }
    Ok(next)
}

/// `local_epochs` passes of mini-batch Adam over the client's training split.
/// Each epoch visits the rows in a fresh shuffle drawn from the client stream.
pub fn train_local(mut client: ClientState, cfg: &FedConfig, round: usize) -> Result<ClientState> {
    let data = Arc::clone(&client.data);
    let n = data.train.len();
    if n == 0 {
        return Err(Error::Input(format!("client {} has no training data", client.id)));
    }
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for epoch in 0..cfg.local_epochs {
        order.clear();
        order.extend(0..n);
        order.shuffle(&mut client.rng);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |detail: alloc::string::String| Error::Training {
                client: client.id,
                round,
                epoch,
                batch: b,
                detail,
            };
            let batch = data.train.batch(rows);
            let (_, grads) = loss_and_grad(&client.params, &batch, cfg.mu, cfg.penalty)
                .map_err(|e| fail(e.to_string()))?;
            client.optimizer.apply(&mut client.params, &grads)?;
            if !client.params.is_finite() {
                return Err(fail("parameters became non-finite".into()));
            }
        }
    }
    Ok(client)
}

/// One client's contribution to a round.
pub fn local_training(
    client: &ClientState,
    global: &ModelParams,
    cfg: &FedConfig,
    round: usize,
) -> Result<ClientState> {
    train_local(prepare_local(client, global, cfg)?, cfg, round)
}

/// Element-wise mean of every weight and bias, weighted by `sizes`.
pub fn aggregate(params: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = params
        .first()
        .ok_or_else(|| Error::Input("aggregation needs at least one contributor".into()))?;
    if params.len() != sizes.len() {
        return Err(Error::dim("aggregation weights", params.len(), sizes.len()));
    }
    if sizes.contains(&0) {
        return Err(Error::Input(
            "every contributor needs a positive sample count".into(),
        ));
    }
    for p in &params[1..] {
        first.ensure_same_shape(p, "aggregation")?;
    }
    let total: usize = sizes.iter().sum();
    let mut out = first.zeros_like();
    for (p, &n) in params.iter().zip(sizes) {
        let w = n as f64 / total as f64;
        for (o, &v) in out.values_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Runs the per-client closures of a round. Implementations must return
/// results in job order; they are free to run jobs concurrently.
pub trait ClientExecutor {
    fn map(
        &self,
        jobs: &[&ClientState],
        work: &(dyn Fn(&ClientState) -> Result<ClientState> + Sync),
    ) -> Vec<Result<ClientState>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn map(
        &self,
        jobs: &[&ClientState],
        work: &(dyn Fn(&ClientState) -> Result<ClientState> + Sync),
    ) -> Vec<Result<ClientState>> {
        jobs.iter().map(|c| work(c)).collect()
    }
}

/// One communication round. Clients outside the roster are left untouched.
pub fn run_round<E: ClientExecutor + ?Sized>(
    state: &RoundState,
    clients: &mut [ClientState],
    cfg: &FedConfig,
    exec: &E,
) -> Result<RoundState> {
    if clients.is_empty() {
        return Err(Error::Input("a round needs at least one client".into()));
    }
    let t = state.round;
    let mut round_rng = rng::derived_stream(cfg.seed, &[rng::tag::ROUND, t as u64]);
    let roster = select_clients(clients.len(), cfg.participation, &mut round_rng);
    let jobs: Vec<&ClientState> = roster.iter().map(|&i| &clients[i]).collect();
    let global = &state.global;
    let results = exec.map(&jobs, &|c| local_training(c, global, cfg, t));
    let updated = results.into_iter().collect::<Result<Vec<_>>>()?;

    let sizes: Vec<usize> = updated.iter().map(|c| c.data.n()).collect();
    let contributions: Vec<&ModelParams> = updated.iter().map(|c| &c.params).collect();
    let next_global = aggregate(&contributions, &sizes)?;
    for (&slot, c) in roster.iter().zip(updated) {
        clients[slot] = c;
    }
    Ok(RoundState {
        round: t + 1,
        global: next_global,
        roster,
        metrics: None,
    })
}

/// A federation in progress: server state plus every client.
#[derive(Debug, Clone)]
pub struct Federation {
    pub cfg: FedConfig,
    pub state: RoundState,
    pub clients: Vec<ClientState>,
}

impl Federation {
    /// Initializes the global model from `net` and gives every client a copy.
    pub fn new(cfg: FedConfig, net: &NetConfig, data: Vec<ClientDataset>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Input("at least one client is required".into()));
        }
        let global = init_params(net)?;
        for (pos, c) in data.iter().enumerate() {
            if c.id != pos {
                return Err(Error::Input(format!("client at position {pos} has id {}", c.id)));
            }
            if c.train.dim() != global.input_dim() {
                return Err(Error::dim("client features", global.input_dim(), c.train.dim()));
            }
            if c.train.is_empty() {
                return Err(Error::Input(format!("client {pos} has no training data")));
            }
        }
        let clients = data
            .into_iter()
            .map(|d| ClientState::new(Arc::new(d), &global, &cfg))
            .collect();
        Ok(Federation {
            cfg,
            state: RoundState {
                round: 0,
                global,
                roster: Vec::new(),
                metrics: None,
            },
            clients,
        })
    }

    pub fn step<E: ClientExecutor + ?Sized>(&mut self, exec: &E) -> Result<()> {
        self.state = run_round(&self.state, &mut self.clients, &self.cfg, exec)?;
        Ok(())
    }

    /// The model each client predicts with: its own parameters under EquiFL,
    /// the aggregated model under FedAvg.
    pub fn deployed(&self) -> Vec<&ModelParams> {
        self.clients
            .iter()
            .map(|c| match self.cfg.mode {
                Mode::EquiFl => &c.params,
                Mode::FedAvg => &self.state.global,
            })
            .collect()
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        let data: Vec<&ClientDataset> = self.clients.iter().map(|c| &*c.data).collect();
        MetricsReport::build(
            self.state.round,
            self.cfg.mode,
            self.cfg.mu,
            &data,
            &self.deployed(),
            &self.state.global,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub global: ModelParams,
    pub locals: Vec<ModelParams>,
    pub rosters: Vec<Vec<usize>>,
    pub history: Vec<MetricsReport>,
}

/// Runs all `cfg.num_rounds` rounds, evaluating every `cfg.evaluate_every`
/// rounds and after the last one.
pub fn run_experiment<E: ClientExecutor + ?Sized>(
    cfg: &FedConfig,
    net: &NetConfig,
    data: Vec<ClientDataset>,
    exec: &E,
) -> Result<ExperimentOutcome> {
    let mut fed = Federation::new(cfg.clone(), net, data)?;
    let mut history = Vec::new();
    let mut rosters = Vec::with_capacity(cfg.num_rounds);
    for t in 1..=cfg.num_rounds {
        fed.step(exec)?;
        rosters.push(fed.state.roster.clone());
        if t % cfg.evaluate_every == 0 || t == cfg.num_rounds {
            let report = fed.evaluate()?;
            fed.state.metrics = Some(report.clone());
            history.push(report);
        }
    }
    Ok(ExperimentOutcome {
        global: fed.state.global,
        locals: fed.clients.into_iter().map(|c| c.params).collect(),
        rosters,
        history,
    })
}
