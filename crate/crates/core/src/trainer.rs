//! PPO with curriculum-constrained resets.
//!
//! Workers step their environments in lockstep, in worker order, so a run is
//! a pure function of its configuration and seed. Whenever an episode ends
//! the worker resets either from the scheduler's current curriculum stage or,
//! for baseline runs and once the curriculum is completed, from a fresh
//! natural seed.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::curriculum::{Curriculum, CurriculumError};
use crate::gridworld::{self, EnvError, GridState, LevelSpec, Observation};
use crate::metrics::{self, MetricsError};
use crate::policy::{self, Adam, LossReport, LossSpec, PolicyError, PolicyParams, TrainSample};
use crate::scheduler::{SchedulerConfig, SchedulerError, SchedulerState};
use crate::seeding::derive_seed;

const STREAM_INIT: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_RESET: u64 = 3;
const STREAM_MINIBATCH: u64 = 4;
const STREAM_SCHEDULER: u64 = 5;
const STREAM_WORKER: u64 = 100;

/// Episodes in the rolling training-success window reported per iteration.
const TRAIN_SUCCESS_WINDOW: usize = 100;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    Invalid(String),
    #[error("curriculum is for level `{found}`, training level is `{expected}`")]
    LevelMismatch { expected: String, found: String },
    #[error("worker {worker}: {source}")]
    Worker { worker: usize, source: EnvError },
    #[error("worker {worker}: {source}")]
    Reset { worker: usize, source: CurriculumError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run aborted at iteration {iteration}: {reason}")]
    Aborted {
        iteration: usize,
        reason: String,
        partial: Box<TrainingLog>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub horizon: usize,
    pub workers: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub frame_budget: u64,
    pub hidden: usize,
    /// Evaluate every this many iterations.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Training stops once this accuracy holds on `patience` consecutive counted evals.
    pub stop_accuracy: f64,
    pub patience: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            lr: 1e-3,
            epochs: 4,
            minibatch: 256,
            horizon: 128,
            workers: 16,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            frame_budget: 1_000_000,
            hidden: policy::DEFAULT_HIDDEN,
            eval_interval: 10,
            eval_episodes: 128,
            stop_accuracy: 0.99,
            patience: 2,
        }
    }
}

impl HyperParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Invalid(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 || self.workers == 0 || self.hidden == 0 {
            return bad("epochs, minibatch, horizon, workers and hidden must be at least 1");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.patience == 0 {
            return bad("eval_interval, eval_episodes and patience must be at least 1");
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            clip_eps: self.clip_eps,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }

    pub fn frames_per_iteration(&self) -> u64 {
        (self.horizon * self.workers) as u64
    }
}

/// Where episode resets come from.
#[derive(Clone, Debug, Default)]
pub enum ResetSource {
    #[default]
    Natural,
    Curriculum(Curriculum),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub action: gridworld::Action,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// A worker's steps from one reset or iteration boundary up to `done` or the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub worker: usize,
    /// Curriculum stage of the episode's reset; 0 for a natural reset.
    pub reset_stage: usize,
    pub steps: Vec<Step>,
    /// Value of the state after the last step; 0 when that step ended the episode.
    pub bootstrap_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResetRecord {
    pub worker: usize,
    pub stage: usize,
    pub seed: u64,
    /// Expert actions left to success from this start state, for curriculum resets.
    pub remaining: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub worker: usize,
    pub stage: usize,
    pub success: bool,
    pub length: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub resets: Vec<ResetRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

impl Batch {
    pub fn frames(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }
}

struct Worker {
    env: GridState,
    stage: usize,
    rng: ChaCha8Rng,
    open: Trajectory,
}

/// Environments, reset source and scheduler carried across iterations.
pub struct RolloutState {
    level: LevelSpec,
    source: ResetSource,
    sched_cfg: SchedulerConfig,
    pub scheduler: Option<SchedulerState>,
    reset_rng: ChaCha8Rng,
    sched_rng: ChaCha8Rng,
    workers: Vec<Worker>,
    pending_resets: Vec<ResetRecord>,
}

impl RolloutState {
    pub fn new(
        level: &LevelSpec,
        source: ResetSource,
        sched_cfg: &SchedulerConfig,
        workers: usize,
        run_seed: u64,
    ) -> Result<Self, TrainError> {
        sched_cfg.validate()?;
        let scheduler = match &source {
            ResetSource::Natural => None,
            ResetSource::Curriculum(c) => {
                if c.level_id != level.id {
                    return Err(TrainError::LevelMismatch {
                        expected: level.id.to_string(),
                        found: c.level_id.clone(),
                    });
                }
                Some(SchedulerState::new(c.len()))
            }
        };
        let mut state = Self {
            level: level.clone(),
            source,
            sched_cfg: sched_cfg.clone(),
            scheduler,
            reset_rng: ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_RESET)),
            sched_rng: ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_SCHEDULER)),
            workers: Vec::with_capacity(workers),
            pending_resets: Vec::new(),
        };
        for w in 0..workers {
            let (env, stage) = state.draw_reset(w)?;
            state.workers.push(Worker {
                env,
                stage,
                rng: ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_WORKER + w as u64)),
                open: Trajectory {
                    worker: w,
                    reset_stage: stage,
                    steps: Vec::new(),
                    bootstrap_value: 0.0,
                },
            });
        }
        Ok(state)
    }

    /// Current curriculum stage, or 0 once resets are natural.
    pub fn stage(&self) -> usize {
        match &self.scheduler {
            Some(s) if !s.completed => s.current_stage,
            _ => 0,
        }
    }

    pub fn curriculum_completed(&self) -> bool {
        self.scheduler.as_ref().is_none_or(|s| s.completed)
    }

    fn draw_reset(&mut self, worker: usize) -> Result<(GridState, usize), TrainError> {
        let stage = match (&self.source, self.scheduler.as_mut()) {
            (ResetSource::Curriculum(_), Some(s)) => s.next_reset_stage(&self.sched_cfg, &mut self.sched_rng),
            _ => None,
        };
        if let (Some(stage), ResetSource::Curriculum(c)) = (stage, &self.source) {
            let (env, start) = c
                .sample_start(&self.level, stage, &mut self.reset_rng)
                .map_err(|source| TrainError::Reset { worker, source })?;
            self.pending_resets.push(ResetRecord {
                worker,
                stage,
                seed: start.seed,
                remaining: Some(start.remaining),
            });
            return Ok((env, stage));
        }
        let seed: u64 = self.reset_rng.gen();
        let env = gridworld::reset(&self.level, seed).map_err(|source| TrainError::Worker { worker, source })?;
        self.pending_resets.push(ResetRecord {
            worker,
            stage: 0,
            seed,
            remaining: None,
        });
        Ok((env, 0))
    }

    /// Steps every worker `horizon` times with actions sampled from `params`.
    pub fn collect(&mut self, params: &PolicyParams, horizon: usize) -> Result<Batch, TrainError> {
        let mut batch = Batch {
            resets: std::mem::take(&mut self.pending_resets),
            ..Batch::default()
        };
        for _ in 0..horizon {
            for w in 0..self.workers.len() {
                let worker = &mut self.workers[w];
                let obs = worker.env.observe();
                let out = params.forward(&obs)?;
                let action = policy::sample_action(&out.logits, &mut worker.rng);
                let log_prob = policy::log_softmax(&out.logits)[action.index()];
                let outcome = worker
                    .env
                    .step(action)
                    .map_err(|source| TrainError::Worker { worker: w, source })?;
                worker.open.steps.push(Step {
                    obs,
                    action,
                    log_prob,
                    value: out.value,
                    reward: outcome.reward,
                    done: outcome.done,
                });
                if outcome.done {
                    let stage = worker.stage;
                    let length = worker.env.steps_taken;
                    batch.episodes.push(EpisodeRecord {
                        worker: w,
                        stage,
                        success: outcome.success,
                        length,
                    });
                    if let Some(s) = self.scheduler.as_mut() {
                        if stage > 0 {
                            s.record_episode(&self.sched_cfg, stage, outcome.success);
                        }
                    }
                    let (env, next_stage) = self.draw_reset(w)?;
                    let worker = &mut self.workers[w];
                    let finished = std::mem::replace(
                        &mut worker.open,
                        Trajectory {
                            worker: w,
                            reset_stage: next_stage,
                            steps: Vec::new(),
                            bootstrap_value: 0.0,
                        },
                    );
                    batch.trajectories.push(finished);
                    worker.env = env;
                    worker.stage = next_stage;
                }
            }
        }
        for worker in &mut self.workers {
            if worker.open.steps.is_empty() {
                continue;
            }
            let bootstrap = params.forward(&worker.env.observe())?.value;
            let next = Trajectory {
                worker: worker.open.worker,
                reset_stage: worker.stage,
                steps: Vec::new(),
                bootstrap_value: 0.0,
            };
            let mut segment = std::mem::replace(&mut worker.open, next);
            segment.bootstrap_value = bootstrap;
            batch.trajectories.push(segment);
        }
        batch.resets.append(&mut self.pending_resets);
        Ok(batch)
    }
}

/// Generalized advantage estimation over one segment.
///
/// `δ_t = r_t + γ v_{t+1} (1 - done_t) - v_t`, `A_t = δ_t + γλ (1 - done_t) A_{t+1}`,
/// where `v_T` is `bootstrap_value`. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(
        values.len() == n && dones.len() == n,
        "gae inputs must have equal lengths"
    );
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flattens a batch into PPO samples with per-batch normalized advantages.
pub fn build_samples(batch: &Batch, h: &HyperParams) -> Vec<TrainSample> {
    let mut samples = Vec::with_capacity(batch.frames());
    for traj in &batch.trajectories {
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
        let (adv, ret) = gae(&rewards, &values, &dones, traj.bootstrap_value, h.gamma, h.lambda);
        for ((s, a), r) in traj.steps.iter().zip(adv).zip(ret) {
            samples.push(TrainSample {
                obs: s.obs.clone(),
                action: s.action,
                old_log_prob: s.log_prob,
                advantage: a,
                ret: r,
            });
        }
    }
    let mut advs: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    normalize_advantages(&mut advs);
    for (s, a) in samples.iter_mut().zip(advs) {
        s.advantage = a;
    }
    samples
}

/// Rescales to mean 0, std 1; left untouched when the std is below 1e-8.
pub fn normalize_advantages(advs: &mut [f64]) {
    if advs.is_empty() {
        return;
    }
    let n = advs.len() as f64;
    let mean = advs.iter().sum::<f64>() / n;
    let std = (advs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-8 {
        return;
    }
    advs.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Clipped surrogate objective for one sample (the quantity PPO maximizes).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Epochs of shuffled minibatch Adam steps; returns the mean loss report.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    opt: &mut Adam,
    samples: &[TrainSample],
    h: &HyperParams,
    rng: &mut R,
) -> Result<LossReport, TrainError> {
    let spec = h.loss_spec();
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut sum = LossReport::default();
    let mut count = 0usize;
    for _ in 0..h.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(h.minibatch) {
            let mb: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (rep, mut g) = params.backward(&mb, &spec)?;
            policy::clip_grad_norm(&mut g, h.max_grad_norm);
            opt.step(params, &g);
            if !params.is_finite() {
                return Err(PolicyError::NonFinite {
                    layer: "parameters after update",
                }
                .into());
            }
            sum.total += rep.total;
            sum.policy += rep.policy;
            sum.value += rep.value;
            sum.entropy += rep.entropy;
            sum.approx_kl += rep.approx_kl;
            sum.clip_fraction += rep.clip_fraction;
            count += 1;
        }
    }
    if count > 0 {
        let n = count as f64;
        sum.total /= n;
        sum.policy /= n;
        sum.value /= n;
        sum.entropy /= n;
        sum.approx_kl /= n;
        sum.clip_fraction /= n;
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub frames: u64,
    /// Curriculum stage at the end of the iteration; 0 means natural resets.
    pub stage: usize,
    pub train_success: Option<f64>,
    pub eval_success: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl IterationRecord {
    /// Whether this record's eval counts toward frames-to-accuracy.
    pub fn counts(&self) -> bool {
        self.stage == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub run_id: String,
    pub config: Vec<(String, String)>,
    pub records: Vec<IterationRecord>,
    /// Frames seen when the scheduler completed the curriculum.
    pub completed_at_frames: Option<u64>,
}

pub const LOG_HEADER: &str = "run_id,iteration,frames,stage,train_success,eval_success,policy_loss,value_loss,entropy";

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.run_id,
                r.iteration,
                r.frames,
                r.stage,
                opt_field(r.train_success),
                opt_field(r.eval_success),
                r.policy_loss,
                r.value_loss,
                r.entropy
            );
        }
        out
    }

    /// Parses the CSV written by [`TrainingLog::to_csv`]; config is not part of the CSV.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == LOG_HEADER => {}
            _ => return Err("missing or unexpected header".into()),
        }
        let mut log = TrainingLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(format!("line {}: expected 9 fields", i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            let int = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", i + 2));
            log.run_id = f[0].to_string();
            log.records.push(IterationRecord {
                iteration: int(f[1])? as usize,
                frames: int(f[2])?,
                stage: int(f[3])? as usize,
                train_success: opt(f[4])?,
                eval_success: opt(f[5])?,
                policy_loss: num(f[6])?,
                value_loss: num(f[7])?,
                entropy: num(f[8])?,
            });
        }
        Ok(log)
    }

    /// Config echo, one `key=value` per line.
    pub fn config_echo(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// `(frames, eval success, counted)` for every evaluated iteration.
    pub fn evals(&self) -> impl Iterator<Item = (u64, f64, bool)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.eval_success.map(|e| (r.frames, e, r.counts())))
    }
}

pub struct TrainResult {
    pub log: TrainingLog,
    pub params: PolicyParams,
}

pub fn config_pairs(
    level: &LevelSpec,
    sched: &SchedulerConfig,
    h: &HyperParams,
    run_seed: u64,
    curriculum: bool,
) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    vec![
        kv("level", level.id.to_string()),
        kv("curriculum", curriculum.to_string()),
        kv("seed", run_seed.to_string()),
        kv("scheduler.mode", sched.mode.to_string()),
        kv("scheduler.threshold", sched.threshold.to_string()),
        kv("scheduler.start_threshold", sched.start_threshold.to_string()),
        kv("scheduler.end_threshold", sched.end_threshold.to_string()),
        kv("scheduler.window", sched.window.to_string()),
        kv("scheduler.min_episodes", sched.min_episodes.to_string()),
        kv("scheduler.epsilon", sched.epsilon.to_string()),
        kv("scheduler.smoothing", sched.smoothing.to_string()),
        kv("gamma", h.gamma.to_string()),
        kv("lambda", h.lambda.to_string()),
        kv("clip_eps", h.clip_eps.to_string()),
        kv("lr", h.lr.to_string()),
        kv("epochs", h.epochs.to_string()),
        kv("minibatch", h.minibatch.to_string()),
        kv("horizon", h.horizon.to_string()),
        kv("workers", h.workers.to_string()),
        kv("entropy_coef", h.entropy_coef.to_string()),
        kv("value_coef", h.value_coef.to_string()),
        kv("max_grad_norm", h.max_grad_norm.to_string()),
        kv("frames", h.frame_budget.to_string()),
        kv("hidden", h.hidden.to_string()),
        kv("eval_interval", h.eval_interval.to_string()),
        kv("eval_episodes", h.eval_episodes.to_string()),
        kv("stop_accuracy", h.stop_accuracy.to_string()),
        kv("patience", h.patience.to_string()),
    ]
}

pub fn train(
    level: &LevelSpec,
    source: ResetSource,
    sched: &SchedulerConfig,
    h: &HyperParams,
    run_seed: u64,
) -> Result<TrainResult, TrainError> {
    train_with(level, source, sched, h, run_seed, |_| {})
}

/// [`train`] with a callback invoked after every iteration.
pub fn train_with(
    level: &LevelSpec,
    source: ResetSource,
    sched: &SchedulerConfig,
    h: &HyperParams,
    run_seed: u64,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainResult, TrainError> {
    h.validate()?;
    let curriculum = matches!(source, ResetSource::Curriculum(_));
    let mut log = TrainingLog {
        run_id: format!("{}-{}-s{run_seed}", level.id, if curriculum { "rcppo" } else { "ppo" }),
        config: config_pairs(level, sched, h, run_seed, curriculum),
        records: Vec::new(),
        completed_at_frames: None,
    };
    let mut params = PolicyParams::init(
        h.hidden,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_INIT)),
    );
    if h.frame_budget == 0 {
        return Ok(TrainResult { log, params });
    }
    let mut opt = Adam::new(&params, h.lr);
    let mut rollouts = RolloutState::new(level, source, sched, h.workers, run_seed)?;
    let mut mb_rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, STREAM_MINIBATCH));
    let eval_base = derive_seed(run_seed, STREAM_EVAL);
    let mut recent: VecDeque<bool> = VecDeque::with_capacity(TRAIN_SUCCESS_WINDOW);
    let mut frames = 0u64;
    let mut streak = 0usize;
    let mut iteration = 0usize;

    let abort = |log: &TrainingLog, iteration: usize, e: TrainError| TrainError::Aborted {
        iteration,
        reason: e.to_string(),
        partial: Box::new(log.clone()),
    };

    while frames < h.frame_budget {
        iteration += 1;
        let batch = rollouts
            .collect(&params, h.horizon)
            .map_err(|e| abort(&log, iteration, e))?;
        frames += batch.frames() as u64;
        for ep in &batch.episodes {
            if recent.len() == TRAIN_SUCCESS_WINDOW {
                recent.pop_front();
            }
            recent.push_back(ep.success);
        }
        if log.completed_at_frames.is_none() && curriculum && rollouts.curriculum_completed() {
            log.completed_at_frames = Some(frames);
        }
        let samples = build_samples(&batch, h);
        let report =
            ppo_update(&mut params, &mut opt, &samples, h, &mut mb_rng).map_err(|e| abort(&log, iteration, e))?;

        let stage = rollouts.stage();
        let eval_success = if iteration.is_multiple_of(h.eval_interval) {
            let seed = derive_seed(eval_base, iteration as u64);
            let rep = metrics::eval_success_rate(&params, level, h.eval_episodes, seed)
                .map_err(|e| abort(&log, iteration, e.into()))?;
            Some(rep.success_rate)
        } else {
            None
        };
        let record = IterationRecord {
            iteration,
            frames,
            stage,
            train_success: if recent.is_empty() {
                None
            } else {
                Some(recent.iter().filter(|&&s| s).count() as f64 / recent.len() as f64)
            },
            eval_success,
            policy_loss: report.policy,
            value_loss: report.value,
            entropy: report.entropy,
        };
        on_iteration(&record);
        let counted = record.counts();
        log.records.push(record);
        if let Some(e) = eval_success {
            if counted && e >= h.stop_accuracy {
                streak += 1;
                if streak >= h.patience {
                    break;
                }
            } else {
                streak = 0;
            }
        }
    }
    Ok(TrainResult { log, params })
}
