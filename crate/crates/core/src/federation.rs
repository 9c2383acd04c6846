//! The protocol engine.
//!
//! Every collaborative round runs three phases:
//!
//! 1. each client trains locally on its noisy private data for `E_l`
//!    epochs with the Symmetric loss (or plain CE in the ablation);
//! 2. each client publishes its knowledge distribution, the softmax of its
//!    logits over the public set;
//! 3. each client minimises `1/(P−1) · Σ_peers KL(peer ‖ own)` over the
//!    public set against the peers' round snapshots.
//!
//! Phases 1 and 3 run in parallel across clients. Phase 2 is a barrier and
//! the snapshots are frozen for the whole of phase 3, so the outcome does
//! not depend on client ordering or scheduling. Knowledge distributions are
//! the only values that ever pass between clients.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ArchAssignment, DatasetSource, FederationConfig};
use crate::data::{
    build_transition_matrix, corrupt_labels, dirichlet_partition, load_dataset, LabeledDataset,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, kl_divergence, peer_learning_loss, symmetric_loss, ClassDistribution,
};
use crate::models::{heterogeneous_assignment, homogeneous_assignment, ArchitectureRegistry};
use crate::nn::{adam_step, AdamState, Model};
use crate::seed::{derive_seed, rng};
use crate::tensor::Tensor;

const INFER_CHUNK: usize = 256;

/// Loss minimised during local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalObjective {
    Symmetric { lambda: f64 },
    CrossEntropy,
}

/// One client's softmax outputs over the public set for a given round.
/// Immutable once published.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeDistribution {
    client_id: usize,
    round: usize,
    dist: ClassDistribution,
}

impl KnowledgeDistribution {
    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn probs(&self) -> &Tensor {
        self.dist.probs()
    }

    pub fn distribution(&self) -> &ClassDistribution {
        &self.dist
    }
}

/// A participant: private model, optimizer and noisy private data.
#[derive(Debug, Clone)]
pub struct Client {
    id: usize,
    model: Model,
    optimizer: AdamState,
    private_data: LabeledDataset,
}

impl Client {
    pub fn new(id: usize, model: Model, private_data: LabeledDataset, learning_rate: f64) -> Self {
        let optimizer = AdamState::new(&model, learning_rate);
        Client {
            id,
            model,
            optimizer,
            private_data,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn arch_id(&self) -> &str {
        self.model.arch_id()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn private_len(&self) -> usize {
        self.private_data.len()
    }

    /// Realised label-noise fraction in this client's private data.
    pub fn noise_fraction(&self) -> f64 {
        self.private_data.flip_fraction()
    }

    /// One shuffled pass over the private data; returns the mean batch loss.
    pub fn local_train_epoch(
        &mut self,
        objective: LocalObjective,
        batch_size: usize,
        seed: u64,
    ) -> Result<f64> {
        if self.private_data.is_empty() {
            return Err(Error::Config(format!("client {} has no data", self.id)));
        }
        let batch_size = batch_size.max(1);
        let c = self.private_data.num_classes();
        let mut order: Vec<usize> = (0..self.private_data.len()).collect();
        order.shuffle(&mut rng(seed));
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(batch_size) {
            let x = self.private_data.features().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| self.private_data.labels()[i]).collect();
            let logits = self.model.forward(&x)?;
            let pred = ClassDistribution::from_logits(&logits, 1.0);
            let target = ClassDistribution::one_hot(&y, c)?;
            let loss = match objective {
                LocalObjective::Symmetric { lambda } => symmetric_loss(&pred, &target, lambda)?,
                LocalObjective::CrossEntropy => cross_entropy(&pred, &target)?,
            };
            self.model.backward(&loss.grad)?;
            adam_step(&mut self.model, &mut self.optimizer)?;
            total += loss.value;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    /// Softmax outputs over `public`. Takes `&self`: the model is not touched.
    pub fn compute_knowledge(
        &self,
        public: &Tensor,
        round: usize,
        temperature: f64,
    ) -> Result<KnowledgeDistribution> {
        if public.shape().len() != 2 || public.row_len() != self.model.input_dim() {
            return Err(Error::Config(format!(
                "public data has {} features, model `{}` expects {}",
                public.row_len(),
                self.model.arch_id(),
                self.model.input_dim()
            )));
        }
        let logits = infer_chunked(&self.model, public)?;
        Ok(KnowledgeDistribution {
            client_id: self.id,
            round,
            dist: ClassDistribution::from_logits(&logits, temperature),
        })
    }

    /// Aligns this client with frozen peer snapshots over mini-batches of
    /// the public set. Returns the mean of `L_pl / (P−1)` over batches.
    pub fn collaborative_update(
        &mut self,
        peers: &[&KnowledgeDistribution],
        public: &Tensor,
        batch_size: usize,
        temperature: f64,
    ) -> Result<f64> {
        if peers.is_empty() {
            return Err(Error::Config(
                "collaborative update needs at least one peer".into(),
            ));
        }
        if let Some(p) = peers.iter().find(|p| p.client_id == self.id) {
            return Err(Error::Config(format!(
                "client {} was handed its own snapshot (round {})",
                self.id, p.round
            )));
        }
        let n = public.rows();
        if let Some(p) = peers.iter().find(|p| p.probs().rows() != n) {
            return Err(Error::dim(format!(
                "peer {} has {} rows, public set has {n}",
                p.client_id,
                p.probs().rows()
            )));
        }
        let scale = 1.0 / peers.len() as f64;
        let batch_size = batch_size.max(1);
        let mut total = 0.0;
        let mut batches = 0usize;
        let all: Vec<usize> = (0..n).collect();
        for idx in all.chunks(batch_size) {
            let x = public.select_rows(idx);
            let logits = self.model.forward(&x)?;
            let own = ClassDistribution::from_logits(&logits, temperature);
            let peer_rows: Vec<ClassDistribution> = peers
                .iter()
                .map(|p| ClassDistribution::from_probs_unchecked(p.probs().select_rows(idx)))
                .collect();
            let refs: Vec<&ClassDistribution> = peer_rows.iter().collect();
            let mut loss = peer_learning_loss(&own, &refs)?;
            loss.grad.scale(scale);
            self.model.backward(&loss.grad)?;
            adam_step(&mut self.model, &mut self.optimizer)?;
            total += loss.value * scale;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    pub fn evaluate(&self, test: &LabeledDataset) -> Result<f64> {
        evaluate(&self.model, test)
    }
}

fn infer_chunked(model: &Model, x: &Tensor) -> Result<Tensor> {
    let n = x.rows();
    let mut data = Vec::new();
    let mut width = 0;
    let all: Vec<usize> = (0..n).collect();
    for idx in all.chunks(INFER_CHUNK) {
        let out = model.infer(&x.select_rows(idx))?;
        width = out.row_len();
        data.extend(out.into_data());
    }
    Tensor::new(vec![n, width], data)
}

/// Fraction of samples whose arg-max logit (lowest index on ties) equals
/// the clean label.
pub fn evaluate(model: &Model, test: &LabeledDataset) -> Result<f64> {
    if test.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "test data has {} features, model `{}` expects {}",
            test.dim(),
            model.arch_id(),
            model.input_dim()
        )));
    }
    let logits = infer_chunked(model, test.features())?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(test.true_labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean of `KL(D_p ‖ D_q)` over ordered pairs `p ≠ q`.
pub fn mean_pairwise_kl(knowledge: &[KnowledgeDistribution]) -> Result<f64> {
    let p = knowledge.len();
    if p < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for a in knowledge {
        for b in knowledge {
            if a.client_id != b.client_id {
                total += kl_divergence(&a.dist, &b.dist)?;
            }
        }
    }
    Ok(total / (p * (p - 1)) as f64)
}

/// Record of what crossed client boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub round: usize,
    pub client_id: usize,
    pub rows: usize,
    pub classes: usize,
}

/// The broadcast channel for knowledge snapshots. It only accepts
/// [`KnowledgeDistribution`] values and logs every publication.
#[derive(Debug, Default)]
pub struct ExchangeChannel {
    log: Mutex<Vec<ExchangeRecord>>,
}

impl ExchangeChannel {
    pub fn publish(&self, snapshots: Vec<KnowledgeDistribution>) -> Vec<KnowledgeDistribution> {
        let mut log = self.log.lock().expect("exchange log poisoned");
        for s in &snapshots {
            log.push(ExchangeRecord {
                round: s.round,
                client_id: s.client_id,
                rows: s.probs().rows(),
                classes: s.probs().row_len(),
            });
        }
        snapshots
    }

    pub fn log(&self) -> Vec<ExchangeRecord> {
        self.log.lock().expect("exchange log poisoned").clone()
    }
}

/// Per-round protocol settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSchedule {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub objective: LocalObjective,
    pub collaborate: bool,
    pub temperature: f64,
    pub seed: u64,
}

impl RoundSchedule {
    pub fn from_config(cfg: &FederationConfig) -> Self {
        RoundSchedule {
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            objective: if cfg.use_symmetric_loss {
                LocalObjective::Symmetric { lambda: cfg.lambda }
            } else {
                LocalObjective::CrossEntropy
            },
            collaborate: cfg.use_collaboration && cfg.rounds > 0,
            temperature: cfg.temperature,
            seed: cfg.seed,
        }
    }
}

/// Seed for client `client`'s local epoch `epoch` in round `round`.
pub fn local_epoch_seed(base: u64, round: usize, client: usize, epoch: usize) -> u64 {
    derive_seed(base, &[0x10ca1, round as u64, client as u64, epoch as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub per_client_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    pub mean_pairwise_kl: f64,
    pub mean_local_loss: f64,
    pub mean_alignment_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub arch_ids: Vec<String>,
    pub per_client_accuracy: Vec<f64>,
    pub average_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub per_round: Vec<RoundMetrics>,
    pub final_row: FinalRow,
    pub config: FederationConfig,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Clients plus the shared public and test sets.
#[derive(Debug)]
pub struct Federation {
    clients: Vec<Client>,
    public: Tensor,
    test: LabeledDataset,
    schedule: RoundSchedule,
    channel: ExchangeChannel,
}

/// Datasets produced from a config before any client exists.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub private: Vec<LabeledDataset>,
    pub public: Tensor,
    pub test: LabeledDataset,
}

/// Loads or generates the data, holds out clean test and public splits,
/// Dirichlet-partitions the rest and corrupts each client's labels with
/// its own seed.
pub fn prepare_data(cfg: &FederationConfig) -> Result<PreparedData> {
    let full = match &cfg.dataset {
        DatasetSource::Synthetic => SyntheticSpec {
            num_classes: cfg.data_classes,
            dim: cfg.data_dim,
            mean_spread: cfg.data_spread,
            seed: derive_seed(cfg.seed, &[0xda7a]),
        }
        .sample(cfg.data_samples)?,
        DatasetSource::File(p) => load_dataset(p)?,
    };
    let (rest, test) = full.split(cfg.test_fraction, derive_seed(cfg.seed, &[0x7e57]))?;
    let (pool, public) = rest.split(cfg.public_fraction, derive_seed(cfg.seed, &[0x9ab1]))?;
    let plan = dirichlet_partition(
        &pool,
        cfg.num_clients,
        cfg.gamma,
        derive_seed(cfg.seed, &[0xd1c]),
    )?;
    let matrix = match cfg.noise_kind.flip_kind() {
        Some(kind) => Some(build_transition_matrix(
            kind,
            cfg.noise_rate,
            pool.num_classes(),
        )?),
        None => None,
    };
    let private = plan
        .assignments
        .iter()
        .enumerate()
        .map(|(p, idx)| {
            let d = pool.subset(idx);
            match &matrix {
                Some(m) => corrupt_labels(&d, m, derive_seed(cfg.seed, &[0xf119, p as u64])),
                None => Ok(d),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        private,
        public: public.features().clone(),
        test,
    })
}

impl Federation {
    pub fn from_clients(
        clients: Vec<Client>,
        public: Tensor,
        test: LabeledDataset,
        schedule: RoundSchedule,
    ) -> Result<Self> {
        if clients.len() < 2 {
            return Err(Error::Config(
                "a federation needs at least 2 clients".into(),
            ));
        }
        Ok(Federation {
            clients,
            public,
            test,
            schedule,
            channel: ExchangeChannel::default(),
        })
    }

    /// Builds data and clients from a validated config.
    pub fn setup(cfg: &FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let data = prepare_data(cfg)?;
        let dim = data.test.dim();
        let classes = data.test.num_classes();
        let registry = ArchitectureRegistry::builtin(dim, classes);
        let arch_ids = match &cfg.arch {
            ArchAssignment::HeterogeneousZoo => {
                heterogeneous_assignment(registry.zoo(), cfg.num_clients)
            }
            ArchAssignment::Homogeneous(id) => {
                homogeneous_assignment(&registry.get(id)?, cfg.num_clients)
            }
        };
        let clients = data
            .private
            .into_iter()
            .zip(arch_ids)
            .enumerate()
            .map(|(p, (d, arch))| {
                let model =
                    registry.init_model(&arch, derive_seed(cfg.seed, &[0x1417, p as u64]))?;
                Ok(Client::new(p, model, d, cfg.learning_rate))
            })
            .collect::<Result<Vec<_>>>()?;
        Federation::from_clients(
            clients,
            data.public,
            data.test,
            RoundSchedule::from_config(cfg),
        )
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn public(&self) -> &Tensor {
        &self.public
    }

    pub fn test(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn schedule(&self) -> &RoundSchedule {
        &self.schedule
    }

    pub fn exchange_log(&self) -> Vec<ExchangeRecord> {
        self.channel.log()
    }

    fn tag(round: usize, client: usize) -> impl Fn(Error) -> Error {
        move |e| Error::Federation {
            round,
            client,
            source: Box::new(e),
        }
    }

    fn local_phase(&mut self, round: usize, order: Option<&[usize]>) -> Result<Vec<f64>> {
        let s = self.schedule;
        let work = |c: &mut Client| -> Result<f64> {
            let mut last = 0.0;
            for e in 0..s.local_epochs {
                let seed = local_epoch_seed(s.seed, round, c.id, e);
                last = c
                    .local_train_epoch(s.objective, s.batch_size, seed)
                    .map_err(Self::tag(round, c.id))?;
            }
            Ok(last)
        };
        match order {
            None => self.clients.par_iter_mut().map(work).collect(),
            Some(order) => {
                let mut out = vec![0.0; self.clients.len()];
                for &i in order {
                    out[i] = work(&mut self.clients[i])?;
                }
                Ok(out)
            }
        }
    }

    fn snapshots(&self, round: usize) -> Result<Vec<KnowledgeDistribution>> {
        self.clients
            .par_iter()
            .map(|c| {
                c.compute_knowledge(&self.public, round, self.schedule.temperature)
                    .map_err(Self::tag(round, c.id))
            })
            .collect()
    }

    fn collaborative_phase(
        &mut self,
        round: usize,
        snapshots: &[KnowledgeDistribution],
        order: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        let (public, s) = (&self.public, self.schedule);
        let work = |c: &mut Client| -> Result<f64> {
            let peers: Vec<&KnowledgeDistribution> =
                snapshots.iter().filter(|k| k.client_id != c.id).collect();
            c.collaborative_update(&peers, public, s.batch_size, s.temperature)
                .map_err(Self::tag(round, c.id))
        };
        match order {
            None => self.clients.par_iter_mut().map(work).collect(),
            Some(order) => {
                let mut out = vec![0.0; self.clients.len()];
                for &i in order {
                    out[i] = work(&mut self.clients[i])?;
                }
                Ok(out)
            }
        }
    }

    /// Runs one full round. `order` forces sequential client processing in
    /// the given order instead of the parallel default.
    pub fn run_round_with_order(
        &mut self,
        round: usize,
        order: Option<&[usize]>,
    ) -> Result<RoundMetrics> {
        if let Some(o) = order {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..self.clients.len()).collect::<Vec<_>>() {
                return Err(Error::Config(
                    "update order must be a permutation of clients".into(),
                ));
            }
        }
        let local_losses = self.local_phase(round, order)?;
        let mut alignment = Vec::new();
        if self.schedule.collaborate {
            let snapshots = self.channel.publish(self.snapshots(round)?);
            alignment = self.collaborative_phase(round, &snapshots, order)?;
        }
        self.metrics(round, &local_losses, &alignment)
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundMetrics> {
        self.run_round_with_order(round, None)
    }

    fn metrics(&self, round: usize, local: &[f64], alignment: &[f64]) -> Result<RoundMetrics> {
        let acc = self
            .clients
            .par_iter()
            .map(|c| c.evaluate(&self.test).map_err(Self::tag(round, c.id)))
            .collect::<Result<Vec<_>>>()?;
        let knowledge = self.snapshots(round)?;
        Ok(RoundMetrics {
            round,
            average_accuracy: mean(&acc),
            per_client_accuracy: acc,
            mean_pairwise_kl: mean_pairwise_kl(&knowledge)?,
            mean_local_loss: mean(local),
            mean_alignment_loss: if alignment.is_empty() {
                0.0
            } else {
                mean(alignment)
            },
        })
    }

    /// All rounds `1..=rounds`; `rounds == 0` runs a single local-only
    /// round and reports it as the summary entry.
    pub fn run_all(&mut self, rounds: usize) -> Result<Vec<RoundMetrics>> {
        if rounds == 0 {
            self.schedule.collaborate = false;
            return Ok(vec![self.run_round(1)?]);
        }
        (1..=rounds).map(|r| self.run_round(r)).collect()
    }

    pub fn final_row(&self, last: &RoundMetrics) -> FinalRow {
        FinalRow {
            arch_ids: self
                .clients
                .iter()
                .map(|c| c.arch_id().to_string())
                .collect(),
            per_client_accuracy: last.per_client_accuracy.clone(),
            average_accuracy: last.average_accuracy,
        }
    }
}

/// Worker count from `HETFL_THREADS`, defaulting to machine parallelism.
pub fn worker_threads() -> usize {
    std::env::var("HETFL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Runs `f` on a rayon pool capped by [`worker_threads`].
pub fn with_worker_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs the whole protocol described by `cfg`.
pub fn run_federation(cfg: &FederationConfig) -> Result<ExperimentResult> {
    with_worker_pool(|| {
        let mut fed = Federation::setup(cfg)?;
        let per_round = fed.run_all(cfg.rounds)?;
        let final_row = fed.final_row(per_round.last().expect("at least one round"));
        Ok(ExperimentResult {
            per_round,
            final_row,
            config: cfg.clone(),
        })
    })
}
