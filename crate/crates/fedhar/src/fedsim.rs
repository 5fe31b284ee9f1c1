//! The federated continual-learning protocol: task schedules over disjoint
//! class sets, per-round data issuance without replacement, synchronous
//! FedAvg aggregation of the observed client with a generalized client, and
//! the lone-client baseline variant.
//!
//! Randomness layout: with `root` seeded from the scenario, the common test
//! set is drawn from `root.derive(0)`; the observed client uses derivation
//! index 1 and the generalized client index 2. Client `k` allocates its task
//! pools from `root.derive(k).derive(0)` (round indices start at 1) and
//! trains round `r` with `root.derive(k).derive(r)`, from which data
//! sampling, dropout and shuffling use children 0, 1 and 2.

use std::collections::{BTreeSet, HashSet};
use std::fmt as stdfmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::dataset::{
    build_common_test, draw_disjoint, Activity, Dataset, DatasetError, NUM_CLASSES,
};
use crate::fmt::sig9;
use crate::model::{
    evaluate, train_traced, EvalReport, HyperParams, ModelError, ModelParams,
};
use crate::rng::Rng;

/// Where client curves are measured relative to aggregation, recorded in run
/// manifests.
pub const EVALUATION_POINT: &str = "post-local-training, pre-aggregation";

const CLIENT1_DERIVE_INDEX: u32 = 1;
const GENERALIZED_DERIVE_INDEX: u32 = 2;
const COMMON_TEST_DERIVE_INDEX: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    Client1,
    Generalized,
    Server,
}

impl stdfmt::Display for ModelId {
    fn fmt(&self, f: &mut stdfmt::Formatter<'_>) -> stdfmt::Result {
        let s = match self {
            ModelId::Client1 => "client1",
            ModelId::Generalized => "generalized",
            ModelId::Server => "server",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("round {round} outside 1..={total}")]
    RoundOutOfRange { round: u32, total: u32 },
    #[error("invalid aggregation weights: {0}")]
    WeightSumInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{context}: {source}")]
    InsufficientData {
        context: String,
        source: DatasetError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One task of a client schedule: a class set learned for a number of rounds.
#[derive(Debug, Clone)]
pub struct ScheduleEntry {
    pub classes: BTreeSet<Activity>,
    pub rounds: u32,
}

/// A client's ordered task sequence. Class sets are pairwise disjoint and the
/// round counts sum to the scenario's total.
#[derive(Debug, Clone)]
pub struct TaskSchedule {
    pub entries: Vec<ScheduleEntry>,
}

impl TaskSchedule {
    /// Validate a raw schedule against the scenario round count.
    pub fn from_raw(
        raw: &[ScheduleEntryConfig],
        total_rounds: u32,
        owner: &str,
    ) -> Result<TaskSchedule, SimError> {
        let invalid = |msg: String| SimError::InvalidScenario(format!("schedule {owner}: {msg}"));
        if raw.is_empty() {
            return Err(invalid("no tasks".into()));
        }
        let mut entries = Vec::with_capacity(raw.len());
        for (t, e) in raw.iter().enumerate() {
            if e.classes.is_empty() {
                return Err(invalid(format!("task {} has an empty class set", t + 1)));
            }
            if e.rounds == 0 {
                return Err(invalid(format!("task {} has rounds = 0", t + 1)));
            }
            let mut classes = BTreeSet::new();
            for &id in &e.classes {
                let class = Activity::from_id(id as usize)
                    .ok_or_else(|| invalid(format!("task {}: class id {id} outside 0..=5", t + 1)))?;
                if !classes.insert(class) {
                    return Err(invalid(format!("task {}: class id {id} repeated", t + 1)));
                }
            }
            entries.push(ScheduleEntry {
                classes,
                rounds: e.rounds,
            });
        }
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if !entries[i].classes.is_disjoint(&entries[j].classes) {
                    return Err(invalid(format!(
                        "C^{} ∩ C^{} ≠ ∅ (task class sets must be disjoint)",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let sum: u32 = entries.iter().map(|e| e.rounds).sum();
        if sum != total_rounds {
            return Err(invalid(format!("rounds sum {sum} ≠ R={total_rounds}")));
        }
        Ok(TaskSchedule { entries })
    }
}

/// The task index (0-based) active at round `r`: the unique `t` with
/// `sum(rounds[..t]) < r <= sum(rounds[..t]) + rounds[t]`.
pub fn task_index_at_round(schedule: &TaskSchedule, r: u32) -> Result<usize, SimError> {
    let total: u32 = schedule.entries.iter().map(|e| e.rounds).sum();
    if r < 1 || r > total {
        return Err(SimError::RoundOutOfRange { round: r, total });
    }
    let mut prefix = 0;
    for (t, e) in schedule.entries.iter().enumerate() {
        if r <= prefix + e.rounds {
            return Ok(t);
        }
        prefix += e.rounds;
    }
    unreachable!("round inside total but no task matched");
}

/// Element-wise convex combination of model parameters.
///
/// Computed as `m0 + sum w_i (m_i - m0)`, which keeps identical inputs
/// bit-exact under any valid weights.
pub fn fedavg(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams, SimError> {
    if models.is_empty() {
        return Err(SimError::WeightSumInvalid("no models to aggregate".into()));
    }
    if models.len() != weights.len() {
        return Err(SimError::WeightSumInvalid(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    for &w in weights {
        if w < 0.0 || w.is_nan() {
            return Err(SimError::WeightSumInvalid(format!(
                "weight {w} is not a nonnegative number"
            )));
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SimError::WeightSumInvalid(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    for m in &models[1..] {
        if m.arch != models[0].arch {
            return Err(SimError::ShapeMismatch(
                "aggregated models have different architectures".into(),
            ));
        }
    }

    let mut out = models[0].clone();
    for (i, m) in models.iter().enumerate().skip(1) {
        let w = weights[i];
        for (acc, (mt, base)) in out
            .tensors_mut()
            .into_iter()
            .zip(m.tensors().into_iter().zip(models[0].tensors()))
        {
            let acc_v = acc.values_mut();
            let m_v = mt.values();
            let b_v = base.values();
            for j in 0..acc_v.len() {
                acc_v[j] += w * (m_v[j] - b_v[j]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scenario configuration (JSON)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    Baseline,
    Federated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEntryConfig {
    pub classes: Vec<u8>,
    pub rounds: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulesConfig {
    pub client1: Vec<ScheduleEntryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalized: Option<Vec<ScheduleEntryConfig>>,
}

fn default_test_per_class() -> usize {
    100
}

/// Declarative description of one experiment, read from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    #[serde(rename = "K")]
    pub clients: u32,
    #[serde(rename = "R")]
    pub rounds: u32,
    pub per_round_examples: usize,
    pub hyperparams: HyperParams,
    pub schedules: SchedulesConfig,
    pub seed: u64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<ScenarioConfig, SimError> {
        serde_json::from_str(json).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    /// Check every invariant the runs rely on; returns the validated
    /// schedules (observed client, plus the generalized one when federated).
    pub fn validate(&self) -> Result<(TaskSchedule, Option<TaskSchedule>), SimError> {
        let invalid = |msg: &str| SimError::InvalidScenario(msg.into());
        if self.per_round_examples < 1 {
            return Err(invalid("per_round_examples must be at least 1"));
        }
        match self.mode {
            ScenarioMode::Federated => {
                if self.clients < 2 {
                    return Err(invalid("federated mode needs K >= 2"));
                }
                if self.rounds < 1 {
                    return Err(invalid("federated mode needs R >= 1"));
                }
                let gen_raw = self
                    .schedules
                    .generalized
                    .as_ref()
                    .ok_or_else(|| invalid("federated mode needs a generalized schedule"))?;
                let c1 = TaskSchedule::from_raw(&self.schedules.client1, self.rounds, "client1")?;
                let gen = TaskSchedule::from_raw(gen_raw, self.rounds, "generalized")?;
                Ok((c1, Some(gen)))
            }
            ScenarioMode::Baseline => {
                let c1 = if self.rounds == 0 {
                    TaskSchedule { entries: Vec::new() }
                } else {
                    TaskSchedule::from_raw(&self.schedules.client1, self.rounds, "client1")?
                };
                Ok((c1, None))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Round log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ModelEval {
    pub model: ModelId,
    pub overall: f64,
    pub per_class: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u32,
    pub evals: Vec<ModelEval>,
    /// Drawn uids per trained client this round.
    pub provenance: Vec<(ModelId, Vec<u32>)>,
    /// Per-epoch mean training loss per trained client this round.
    pub losses: Vec<(ModelId, Vec<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct RoundLog {
    pub records: Vec<RoundRecord>,
}

impl RoundLog {
    /// CSV with columns `round,model,class,accuracy,overall`.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("round,model,class,accuracy,overall\n");
        for rec in &self.records {
            for eval in &rec.evals {
                for c in 0..NUM_CLASSES {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        rec.round,
                        eval.model,
                        c,
                        sig9(eval.per_class[c]),
                        sig9(eval.overall)
                    ));
                }
            }
        }
        out
    }

    /// CSV with columns `round,client,uid`.
    pub fn provenance_csv(&self) -> String {
        let mut out = String::from("round,client,uid\n");
        for rec in &self.records {
            for (client, uids) in &rec.provenance {
                for uid in uids {
                    out.push_str(&format!("{},{},{}\n", rec.round, client, uid));
                }
            }
        }
        out
    }

    /// Per-class accuracy rows of one model over rounds >= 1, ascending.
    pub fn per_class_rows(&self, model: ModelId) -> Vec<[f64; NUM_CLASSES]> {
        self.records
            .iter()
            .filter(|r| r.round >= 1)
            .flat_map(|r| {
                r.evals
                    .iter()
                    .filter(|e| e.model == model)
                    .map(|e| e.per_class)
            })
            .collect()
    }

    pub fn models(&self) -> Vec<ModelId> {
        let mut seen = Vec::new();
        for rec in &self.records {
            for e in &rec.evals {
                if !seen.contains(&e.model) {
                    seen.push(e.model);
                }
            }
        }
        seen
    }

    /// Uids issued at distinct (client, round) pairs never intersect.
    pub fn verify_disjoint_provenance(&self) -> Result<(), SimError> {
        let mut seen: HashSet<u32> = HashSet::new();
        for rec in &self.records {
            for (client, uids) in &rec.provenance {
                for &uid in uids {
                    if !seen.insert(uid) {
                        return Err(SimError::InvalidScenario(format!(
                            "uid {uid} issued twice (round {}, {client})",
                            rec.round
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

struct ClientState {
    id: ModelId,
    derive_index: u32,
    schedule: TaskSchedule,
    /// One pre-allocated pool per task, consumed round by round.
    pools: Vec<Dataset>,
}

struct ClientRoundOutput {
    params: ModelParams,
    eval: EvalReport,
    uids: Vec<u32>,
    losses: Vec<f64>,
}

/// Pre-draw every pool a schedule will consume: per task, the exact per-round
/// class quotas times the task's round count, removed from the shared master
/// pool. Doubles as the feasibility check for the whole run.
fn allocate_pools(
    master: &mut Dataset,
    schedule: &TaskSchedule,
    per_round: usize,
    owner: ModelId,
    rng: &mut Rng,
) -> Result<Vec<Dataset>, SimError> {
    let mut pools = Vec::with_capacity(schedule.entries.len());
    for (t, entry) in schedule.entries.iter().enumerate() {
        let mut windows = Vec::new();
        for (class, quota) in crate::dataset::balanced_quotas(&entry.classes, per_round) {
            let need = quota * entry.rounds as usize;
            let single: BTreeSet<Activity> = [class].into_iter().collect();
            let (sample, rest) =
                draw_disjoint(master, &single, need, rng).map_err(|e| SimError::InsufficientData {
                    context: format!("pool allocation for {owner} task {}", t + 1),
                    source: e,
                })?;
            windows.extend(sample.windows().iter().cloned());
            *master = rest;
        }
        pools.push(Dataset::from_windows(windows, None));
    }
    Ok(pools)
}

fn client_round(
    state: &mut ClientState,
    server: &ModelParams,
    cfg: &ScenarioConfig,
    common_test: &Dataset,
    root: &Rng,
    round: u32,
) -> Result<ClientRoundOutput, SimError> {
    let t = task_index_at_round(&state.schedule, round)?;
    let base = root.derive(state.derive_index).derive(round);
    let classes = state.schedule.entries[t].classes.clone();
    let mut sample_rng = base.derive(0);
    let (sample, rest) = draw_disjoint(
        &state.pools[t],
        &classes,
        cfg.per_round_examples,
        &mut sample_rng,
    )
    .map_err(|e| SimError::InsufficientData {
        context: format!("round {round}, {}", state.id),
        source: e,
    })?;
    state.pools[t] = rest;

    let (params, losses) = train_traced(server.clone(), &sample, &cfg.hyperparams, &base)?;
    let eval = evaluate(&params, common_test)?;
    Ok(ClientRoundOutput {
        params,
        eval,
        uids: sample.uids(),
        losses,
    })
}

/// Run the synchronous federated scenario: per round, both simulated trainers
/// start from the server parameters, train on freshly drawn task data, and
/// the server takes the `(K-1)/K : 1/K` weighted average. All three models
/// are evaluated on the common test set every round.
///
/// With `parallel` the two clients train on separate threads; results are
/// bit-identical to the sequential order either way.
pub fn run_federated(
    cfg: &ScenarioConfig,
    train_split: &Dataset,
    test_split: &Dataset,
    parallel: bool,
) -> Result<RoundLog, SimError> {
    let (c1_schedule, gen_schedule) = cfg.validate()?;
    let gen_schedule = gen_schedule.expect("validate enforces a generalized schedule");
    let ckpt = cfg.checkpoint.as_ref().ok_or_else(|| {
        SimError::InvalidScenario("no initial checkpoint configured".into())
    })?;
    let mut server = checkpoint::load(ckpt)?;

    let root = Rng::new(cfg.seed);
    let mut test_rng = root.derive(COMMON_TEST_DERIVE_INDEX);
    let common_test = build_common_test(test_split, cfg.test_per_class, &mut test_rng).map_err(
        |e| SimError::InsufficientData {
            context: "common test set".into(),
            source: e,
        },
    )?;

    let mut master = train_split.clone();
    let mut client1 = ClientState {
        id: ModelId::Client1,
        derive_index: CLIENT1_DERIVE_INDEX,
        pools: allocate_pools(
            &mut master,
            &c1_schedule,
            cfg.per_round_examples,
            ModelId::Client1,
            &mut root.derive(CLIENT1_DERIVE_INDEX).derive(0),
        )?,
        schedule: c1_schedule,
    };
    let mut generalized = ClientState {
        id: ModelId::Generalized,
        derive_index: GENERALIZED_DERIVE_INDEX,
        pools: allocate_pools(
            &mut master,
            &gen_schedule,
            cfg.per_round_examples,
            ModelId::Generalized,
            &mut root.derive(GENERALIZED_DERIVE_INDEX).derive(0),
        )?,
        schedule: gen_schedule,
    };

    let k = f64::from(cfg.clients);
    let weights = [(k - 1.0) / k, 1.0 / k];
    let mut log = RoundLog::default();

    for round in 1..=cfg.rounds {
        let (c1_out, gen_out) = if parallel {
            run_clients_parallel(
                &mut client1,
                &mut generalized,
                &server,
                cfg,
                &common_test,
                &root,
                round,
            )?
        } else {
            (
                client_round(&mut client1, &server, cfg, &common_test, &root, round)?,
                client_round(&mut generalized, &server, cfg, &common_test, &root, round)?,
            )
        };

        server = fedavg(&[&gen_out.params, &c1_out.params], &weights)?;
        let server_eval = evaluate(&server, &common_test)?;

        log.records.push(RoundRecord {
            round,
            evals: vec![
                ModelEval {
                    model: ModelId::Client1,
                    overall: c1_out.eval.overall,
                    per_class: c1_out.eval.per_class,
                },
                ModelEval {
                    model: ModelId::Generalized,
                    overall: gen_out.eval.overall,
                    per_class: gen_out.eval.per_class,
                },
                ModelEval {
                    model: ModelId::Server,
                    overall: server_eval.overall,
                    per_class: server_eval.per_class,
                },
            ],
            provenance: vec![
                (ModelId::Client1, c1_out.uids),
                (ModelId::Generalized, gen_out.uids),
            ],
            losses: vec![
                (ModelId::Client1, c1_out.losses),
                (ModelId::Generalized, gen_out.losses),
            ],
        });
    }

    log.verify_disjoint_provenance()?;
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn run_clients_parallel(
    client1: &mut ClientState,
    generalized: &mut ClientState,
    server: &ModelParams,
    cfg: &ScenarioConfig,
    common_test: &Dataset,
    root: &Rng,
    round: u32,
) -> Result<(ClientRoundOutput, ClientRoundOutput), SimError> {
    std::thread::scope(|scope| {
        let h1 = scope.spawn(|| client_round(client1, server, cfg, common_test, root, round));
        let h2 = scope.spawn(|| client_round(generalized, server, cfg, common_test, root, round));
        let r1 = h1.join().expect("client thread panicked");
        let r2 = h2.join().expect("client thread panicked");
        Ok((r1?, r2?))
    })
}

/// Run the lone-client baseline: one model fine-tuned step after step on its
/// task stream, no aggregation. With zero steps the log holds only the
/// initial evaluation (round 0).
pub fn run_baseline(
    cfg: &ScenarioConfig,
    train_split: &Dataset,
    test_split: &Dataset,
) -> Result<RoundLog, SimError> {
    let (schedule, _) = cfg.validate()?;
    let ckpt = cfg.checkpoint.as_ref().ok_or_else(|| {
        SimError::InvalidScenario("no initial checkpoint configured".into())
    })?;
    let mut params = checkpoint::load(ckpt)?;

    let root = Rng::new(cfg.seed);
    let mut test_rng = root.derive(COMMON_TEST_DERIVE_INDEX);
    let common_test = build_common_test(test_split, cfg.test_per_class, &mut test_rng).map_err(
        |e| SimError::InsufficientData {
            context: "common test set".into(),
            source: e,
        },
    )?;

    let mut log = RoundLog::default();
    if cfg.rounds == 0 {
        let eval = evaluate(&params, &common_test)?;
        log.records.push(RoundRecord {
            round: 0,
            evals: vec![ModelEval {
                model: ModelId::Client1,
                overall: eval.overall,
                per_class: eval.per_class,
            }],
            provenance: Vec::new(),
            losses: Vec::new(),
        });
        return Ok(log);
    }

    let mut master = train_split.clone();
    let mut state = ClientState {
        id: ModelId::Client1,
        derive_index: CLIENT1_DERIVE_INDEX,
        pools: allocate_pools(
            &mut master,
            &schedule,
            cfg.per_round_examples,
            ModelId::Client1,
            &mut root.derive(CLIENT1_DERIVE_INDEX).derive(0),
        )?,
        schedule,
    };

    for round in 1..=cfg.rounds {
        let out = client_round(&mut state, &params, cfg, &common_test, &root, round)?;
        params = out.params;
        log.records.push(RoundRecord {
            round,
            evals: vec![ModelEval {
                model: ModelId::Client1,
                overall: out.eval.overall,
                per_class: out.eval.per_class,
            }],
            provenance: vec![(ModelId::Client1, out.uids)],
            losses: vec![(ModelId::Client1, out.losses)],
        });
    }

    log.verify_disjoint_provenance()?;
    Ok(log)
}
