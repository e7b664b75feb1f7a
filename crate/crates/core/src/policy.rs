//! Actor-critic network with hand-written forward and backward passes.
//!
//! Inputs are sparse one-hot features: per view cell the object, color and
//! door-state ids and whether the cell holds a mission target, plus the five
//! mission-code slots. The first layer is a sum of embedding rows, followed by
//! two tanh trunk layers and separate actor (7 logits) and critic (1 value)
//! heads.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Action, Observation, MISSION_CODE_LEN, VIEW_SIZE};

pub const N_ACTIONS: usize = Action::COUNT;
pub const DEFAULT_HIDDEN: usize = 64;

const OBJ_VALUES: usize = 6;
const COLOR_VALUES: usize = 7;
const STATE_VALUES: usize = 4;
const TASK_VALUES: usize = 5;
const CELL_FEATURES: usize = OBJ_VALUES + COLOR_VALUES + STATE_VALUES;
const CELL_BLOCK: usize = VIEW_SIZE * VIEW_SIZE * CELL_FEATURES;
/// Per cell, whether it holds the mission's first or second target.
const MATCH_FEATURES: usize = 2 * VIEW_SIZE * VIEW_SIZE;
pub const OBS_FEATURES: usize = CELL_BLOCK + MATCH_FEATURES;
const MISSION_SLOTS: [usize; MISSION_CODE_LEN] = [TASK_VALUES, OBJ_VALUES, COLOR_VALUES, OBJ_VALUES, COLOR_VALUES];
pub const MISSION_FEATURES: usize = TASK_VALUES + 2 * (OBJ_VALUES + COLOR_VALUES);

const CHECKPOINT_FORMAT: &str = "rcppo-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite values in layer `{layer}`")]
    NonFinite { layer: &'static str },
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("observation feature out of range: {0}")]
    BadObservation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major matrix (a bias is a 1 x n tensor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Orthogonal rows or columns (whichever is fewer), scaled by `gain`.
    pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Self {
        let (n, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        while basis.len() < n {
            let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let mut t = Self::zeros(rows, cols);
        for (r, line) in t.data.chunks_mut(cols).enumerate() {
            for (c, x) in line.iter_mut().enumerate() {
                *x = gain * if rows >= cols { basis[c][r] } else { basis[r][c] };
            }
        }
        t
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Network weights. Gradients share the same shape tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub hidden: usize,
    /// `OBS_FEATURES x hidden`, one row per feature.
    pub obs_embed: Tensor,
    /// `MISSION_FEATURES x hidden`.
    pub mission_embed: Tensor,
    pub b1: Tensor,
    /// Trunk weights are `out x in`.
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
    pub actor_w: Tensor,
    pub actor_b: Tensor,
    pub critic_w: Tensor,
    pub critic_b: Tensor,
}

pub type Gradients = PolicyParams;

const TENSOR_NAMES: [&str; 11] = [
    "obs_embed",
    "mission_embed",
    "b1",
    "w2",
    "b2",
    "w3",
    "b3",
    "actor_w",
    "actor_b",
    "critic_w",
    "critic_b",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; N_ACTIONS],
    pub value: f64,
}

/// One training sample for the PPO loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub obs: Observation,
    pub action: Action,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Active input indices: observation features then the mission features.
pub fn active_features(obs: &Observation) -> Result<(Vec<u16>, [u16; MISSION_CODE_LEN]), PolicyError> {
    let mut o = Vec::with_capacity(VIEW_SIZE * VIEW_SIZE * 3 + 4);
    let code = obs.mission_code;
    let targets = [(code[1], code[2]), (code[3], code[4])];
    for (r, line) in obs.view.iter().enumerate() {
        for (c, &[obj, color, state]) in line.iter().enumerate() {
            if obj as usize >= OBJ_VALUES || color as usize >= COLOR_VALUES || state as usize >= STATE_VALUES {
                return Err(PolicyError::BadObservation(format!(
                    "cell ({r}, {c}) = {:?}",
                    [obj, color, state]
                )));
            }
            let cell = r * VIEW_SIZE + c;
            let base = cell * CELL_FEATURES;
            o.push((base + obj as usize) as u16);
            o.push((base + OBJ_VALUES + color as usize) as u16);
            o.push((base + OBJ_VALUES + COLOR_VALUES + state as usize) as u16);
            for (t, &(tobj, tcolor)) in targets.iter().enumerate() {
                if tobj != 0 && obj == tobj && color == tcolor {
                    o.push((CELL_BLOCK + t * VIEW_SIZE * VIEW_SIZE + cell) as u16);
                }
            }
        }
    }
    let mut m = [0u16; MISSION_CODE_LEN];
    let mut base = 0;
    for (i, (&v, &size)) in obs.mission_code.iter().zip(&MISSION_SLOTS).enumerate() {
        if v as usize >= size {
            return Err(PolicyError::BadObservation(format!("mission slot {i} = {v}")));
        }
        m[i] = (base + v as usize) as u16;
        base += size;
    }
    Ok((o, m))
}

pub fn softmax(logits: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|z| (z - max).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

pub fn log_softmax(logits: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.map(|z| z - lse)
}

pub fn entropy(logits: &[f64; N_ACTIONS]) -> f64 {
    let lp = log_softmax(logits);
    -lp.iter().map(|l| l.exp() * l).sum::<f64>()
}

/// Categorical draw from `softmax(logits)`.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64; N_ACTIONS], rng: &mut R) -> Action {
    let p = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return Action::from_index(i).expect("action index");
        }
    }
    // rounding left u above the cumulative sum: take the last positive-mass action
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    Action::from_index(last).expect("action index")
}

/// Argmax with lowest-index tie-break.
pub fn greedy_action(logits: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    Action::from_index(best).expect("action index")
}

struct Cache {
    obs: Vec<u16>,
    mission: [u16; MISSION_CODE_LEN],
    h1: Vec<f64>,
    h2: Vec<f64>,
    h3: Vec<f64>,
}

fn check(layer: &'static str, xs: &[f64]) -> Result<(), PolicyError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::NonFinite { layer })
    }
}

/// `out = tanh(w x + b)` with `w` stored `out x in`.
fn dense_tanh(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows).map(|r| (dot(w.row(r), x) + b.data[r]).tanh()).collect()
}

impl PolicyParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            obs_embed: Tensor::zeros(OBS_FEATURES, hidden),
            mission_embed: Tensor::zeros(MISSION_FEATURES, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, hidden),
            b2: Tensor::zeros(1, hidden),
            w3: Tensor::zeros(hidden, hidden),
            b3: Tensor::zeros(1, hidden),
            actor_w: Tensor::zeros(N_ACTIONS, hidden),
            actor_b: Tensor::zeros(1, N_ACTIONS),
            critic_w: Tensor::zeros(1, hidden),
            critic_b: Tensor::zeros(1, 1),
        }
    }

    /// Orthogonal initialization: gain 1 for the body, 0.01 for both heads, zero biases.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden);
        let embed = Tensor::orthogonal(OBS_FEATURES + MISSION_FEATURES, hidden, 1.0, rng);
        let split = OBS_FEATURES * hidden;
        p.obs_embed.data.copy_from_slice(&embed.data[..split]);
        p.mission_embed.data.copy_from_slice(&embed.data[split..]);
        p.w2 = Tensor::orthogonal(hidden, hidden, 1.0, rng);
        p.w3 = Tensor::orthogonal(hidden, hidden, 1.0, rng);
        p.actor_w = Tensor::orthogonal(N_ACTIONS, hidden, 0.01, rng);
        p.critic_w = Tensor::orthogonal(1, hidden, 0.01, rng);
        p
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.obs_embed,
            &self.mission_embed,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w3,
            &self.b3,
            &self.actor_w,
            &self.actor_b,
            &self.critic_w,
            &self.critic_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.obs_embed,
            &mut self.mission_embed,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.actor_w,
            &mut self.actor_b,
            &mut self.critic_w,
            &mut self.critic_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    fn forward_cached(&self, obs: &Observation) -> Result<(PolicyOutput, Cache), PolicyError> {
        let (o, m) = active_features(obs)?;
        let mut pre = self.b1.data.clone();
        for &i in &o {
            pre.iter_mut()
                .zip(self.obs_embed.row(i as usize))
                .for_each(|(a, w)| *a += w);
        }
        for &i in &m {
            pre.iter_mut()
                .zip(self.mission_embed.row(i as usize))
                .for_each(|(a, w)| *a += w);
        }
        let h1: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
        check("embed", &h1)?;
        let h2 = dense_tanh(&self.w2, &self.b2, &h1);
        check("trunk1", &h2)?;
        let h3 = dense_tanh(&self.w3, &self.b3, &h2);
        check("trunk2", &h3)?;
        let mut logits = [0.0; N_ACTIONS];
        for (a, z) in logits.iter_mut().enumerate() {
            *z = dot(self.actor_w.row(a), &h3) + self.actor_b.data[a];
        }
        check("actor", &logits)?;
        let value = dot(self.critic_w.row(0), &h3) + self.critic_b.data[0];
        check("critic", &[value])?;
        Ok((
            PolicyOutput { logits, value },
            Cache {
                obs: o,
                mission: m,
                h1,
                h2,
                h3,
            },
        ))
    }

    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        self.forward_cached(obs).map(|(out, _)| out)
    }

    /// PPO loss over a minibatch and its gradient:
    /// `-mean(min(r A, clip(r) A)) + c_v mean((R - v)^2) - c_e mean(H)`.
    pub fn backward(&self, batch: &[&TrainSample], spec: &LossSpec) -> Result<(LossReport, Gradients), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let hsz = self.hidden;
        let mut g = Self::zeros(hsz);
        let mut rep = LossReport::default();
        let mut clipped = 0usize;
        let (lo, hi) = (1.0 - spec.clip_eps, 1.0 + spec.clip_eps);

        for s in batch {
            let (out, cache) = self.forward_cached(&s.obs)?;
            let logp_all = log_softmax(&out.logits);
            let p = logp_all.map(f64::exp);
            let a = s.action.index();
            let logp = logp_all[a];
            let ratio = (logp - s.old_log_prob).exp();
            let surr1 = ratio * s.advantage;
            let surr2 = ratio.clamp(lo, hi) * s.advantage;
            let ent = -p.iter().zip(&logp_all).map(|(pi, li)| pi * li).sum::<f64>();
            rep.policy -= surr1.min(surr2) / n;
            rep.value += (s.ret - out.value).powi(2) / n;
            rep.entropy += ent / n;
            rep.approx_kl += (s.old_log_prob - logp) / n;
            if (ratio - 1.0).abs() > spec.clip_eps {
                clipped += 1;
            }

            // d loss / d log pi(a): the unclipped branch carries gradient, the clipped one is flat
            let dlogp = if surr1 <= surr2 { -ratio * s.advantage / n } else { 0.0 };
            let mut dz = [0.0; N_ACTIONS];
            for j in 0..N_ACTIONS {
                let onehot = if j == a { 1.0 } else { 0.0 };
                // dH/dz_j = -p_j (log p_j + H)
                dz[j] = dlogp * (onehot - p[j]) + spec.entropy_coef / n * p[j] * (logp_all[j] + ent);
            }
            let dv = -2.0 * spec.value_coef * (s.ret - out.value) / n;

            let mut dh3 = vec![0.0; hsz];
            for (j, &d) in dz.iter().enumerate() {
                g.actor_b.data[j] += d;
                let gw = g.actor_w.row_mut(j);
                let w = self.actor_w.row(j);
                for k in 0..hsz {
                    gw[k] += d * cache.h3[k];
                    dh3[k] += d * w[k];
                }
            }
            g.critic_b.data[0] += dv;
            {
                let gw = g.critic_w.row_mut(0);
                let w = self.critic_w.row(0);
                for k in 0..hsz {
                    gw[k] += dv * cache.h3[k];
                    dh3[k] += dv * w[k];
                }
            }
            let dh2 = dense_back(&self.w3, &mut g.w3, &mut g.b3, &cache.h3, &dh3, &cache.h2);
            let dh1 = dense_back(&self.w2, &mut g.w2, &mut g.b2, &cache.h2, &dh2, &cache.h1);
            let da1: Vec<f64> = dh1.iter().zip(&cache.h1).map(|(d, h)| d * (1.0 - h * h)).collect();
            g.b1.data.iter_mut().zip(&da1).for_each(|(x, d)| *x += d);
            for &i in &cache.obs {
                g.obs_embed
                    .row_mut(i as usize)
                    .iter_mut()
                    .zip(&da1)
                    .for_each(|(x, d)| *x += d);
            }
            for &i in &cache.mission {
                g.mission_embed
                    .row_mut(i as usize)
                    .iter_mut()
                    .zip(&da1)
                    .for_each(|(x, d)| *x += d);
            }
        }
        rep.clip_fraction = clipped as f64 / n;
        rep.total = rep.policy + spec.value_coef * rep.value - spec.entropy_coef * rep.entropy;
        if !rep.total.is_finite() {
            return Err(PolicyError::NonFinite { layer: "loss" });
        }
        Ok((rep, g))
    }

    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            hidden: self.hidden,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: [t.rows, t.cols],
                    data: t.data.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self, PolicyError> {
        let file: CheckpointFile = serde_json::from_str(s).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let mut p = Self::zeros(file.hidden);
        if file.tensors.len() != TENSOR_NAMES.len() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} tensors",
                TENSOR_NAMES.len()
            )));
        }
        for ((name, slot), t) in TENSOR_NAMES.iter().zip(p.tensors_mut()).zip(file.tensors) {
            if t.name != *name || t.shape != [slot.rows, slot.cols] || t.data.len() != slot.data.len() {
                return Err(PolicyError::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{name}` [{}, {}]",
                    t.name, t.shape, slot.rows, slot.cols
                )));
            }
            slot.data = t.data;
        }
        if !p.is_finite() {
            return Err(PolicyError::Checkpoint("non-finite parameters".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

/// Backprop through `out = tanh(w x + b)`; returns d loss / d x.
fn dense_back(w: &Tensor, gw: &mut Tensor, gb: &mut Tensor, out: &[f64], dout: &[f64], x: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; w.cols];
    for r in 0..w.rows {
        let da = dout[r] * (1.0 - out[r] * out[r]);
        gb.data[r] += da;
        let grow = gw.row_mut(r);
        let wrow = w.row(r);
        for c in 0..w.cols {
            grow[c] += da * x[c];
            dx[c] += da * wrow[c];
        }
    }
    dx
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    hidden: usize,
    tensors: Vec<NamedTensor>,
}

/// Global L2 norm of all gradient entries.
pub fn grad_norm(g: &Gradients) -> f64 {
    g.tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grad_norm(g);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            t: 0,
            m: PolicyParams::zeros(params.hidden),
            v: PolicyParams::zeros(params.hidden),
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, g: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
