//! Evaluation success, frames-to-accuracy, random-walk goal rates, demo
//! statistics and the CSV tables built from them.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expert::{self, DemoSet, ExpertError};
use crate::gridworld::{self, Action, ActionSet, EnvError, GridState, LevelSpec};
use crate::policy::{self, PolicyError, PolicyParams};
use crate::trainer::TrainingLog;

/// Cap on consecutive redraws when demos are shorter than the walk length.
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} must be at least 1")]
    Empty(&'static str),
    #[error("no demo of length >= {k} found on `{level}` after {MAX_REDRAWS} draws")]
    DemosTooShort { level: String, k: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub frames: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_length: f64,
}

/// Anything that can act in an evaluation episode.
pub trait EvalPolicy {
    fn begin_episode(&mut self, _state: &GridState) {}
    fn act(&mut self, state: &GridState) -> Result<Action, MetricsError>;
}

/// Argmax of the network's logits.
pub struct GreedyNet<'a>(pub &'a PolicyParams);

impl EvalPolicy for GreedyNet<'_> {
    fn act(&mut self, state: &GridState) -> Result<Action, MetricsError> {
        let out = self.0.forward(&state.observe())?;
        Ok(policy::greedy_action(&out.logits))
    }
}

/// Replays the expert's plan from the episode's initial state.
#[derive(Default)]
pub struct ExpertPolicy {
    plan: VecDeque<Action>,
}

impl EvalPolicy for ExpertPolicy {
    fn begin_episode(&mut self, _state: &GridState) {
        self.plan.clear();
    }

    fn act(&mut self, state: &GridState) -> Result<Action, MetricsError> {
        if self.plan.is_empty() {
            self.plan = expert::solve(state)?.actions.into();
        }
        Ok(self.plan.pop_front().unwrap_or(Action::Done))
    }
}

/// Uniform draws from an action set.
pub struct RandomPolicy {
    pub rng: ChaCha8Rng,
    pub actions: ActionSet,
}

impl RandomPolicy {
    pub fn new(seed: u64, actions: ActionSet) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            actions,
        }
    }
}

impl EvalPolicy for RandomPolicy {
    fn act(&mut self, state: &GridState) -> Result<Action, MetricsError> {
        let pool = self.actions.actions(state.mission.task);
        Ok(pool[self.rng.gen_range(0..pool.len())])
    }
}

/// Runs `n_episodes` on fresh natural seeds drawn from `eval_seed`.
/// Success is a positive episode reward.
pub fn eval_policy<P: EvalPolicy + ?Sized>(
    policy: &mut P,
    level: &LevelSpec,
    n_episodes: usize,
    eval_seed: u64,
) -> Result<EvalReport, MetricsError> {
    if n_episodes == 0 {
        return Err(MetricsError::Empty("n_episodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut successes = 0usize;
    let mut total_len = 0u64;
    for _ in 0..n_episodes {
        let mut state = gridworld::reset(level, rng.gen())?;
        policy.begin_episode(&state);
        loop {
            let out = state.step(policy.act(&state)?)?;
            if out.done {
                successes += (out.reward > 0.0) as usize;
                break;
            }
        }
        total_len += state.steps_taken as u64;
    }
    Ok(EvalReport {
        frames: 0,
        episodes: n_episodes,
        success_rate: successes as f64 / n_episodes as f64,
        mean_length: total_len as f64 / n_episodes as f64,
    })
}

/// Greedy evaluation of a network.
pub fn eval_success_rate(
    params: &PolicyParams,
    level: &LevelSpec,
    n_episodes: usize,
    eval_seed: u64,
) -> Result<EvalReport, MetricsError> {
    eval_policy(&mut GreedyNet(params), level, n_episodes, eval_seed)
}

/// First counted eval reaching `target`. Curriculum runs only count evals
/// taken after the curriculum completed.
pub fn frames_to_accuracy(log: &TrainingLog, target: f64) -> Option<u64> {
    log.evals()
        .find(|&(_, rate, counted)| counted && rate >= target)
        .map(|(frames, _, _)| frames)
}

/// Whether `k` random actions from `state` reach success.
pub fn random_walk_from<R: Rng + ?Sized>(state: &GridState, k: usize, actions: ActionSet, rng: &mut R) -> bool {
    let pool = actions.actions(state.mission.task);
    let mut s = state.clone();
    s.restart_episode();
    for _ in 0..k {
        s.transition(pool[rng.gen_range(0..pool.len())]);
        if s.success_predicate() {
            return true;
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkRate {
    pub rate: f64,
    pub trials: usize,
    /// Episodes skipped because the expert demo was shorter than `k`.
    pub redraws: usize,
}

impl WalkRate {
    pub fn std_error(&self) -> f64 {
        (self.rate * (1.0 - self.rate) / self.trials as f64).sqrt()
    }
}

/// Fraction of `trials` random walks of `k_steps` that reach the goal when
/// started `k_steps` expert actions before success.
pub fn random_walk_goal_rate(
    level: &LevelSpec,
    k_steps: usize,
    trials: usize,
    seed: u64,
    actions: ActionSet,
) -> Result<WalkRate, MetricsError> {
    if k_steps == 0 {
        return Err(MetricsError::Empty("k_steps"));
    }
    if trials == 0 {
        return Err(MetricsError::Empty("trials"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut redraws = 0usize;
    for _ in 0..trials {
        let mut misses = 0;
        let start = loop {
            let env_seed: u64 = rng.gen();
            let init = gridworld::reset(level, env_seed)?;
            let demo = expert::solve(&init)?;
            if demo.actions.len() >= k_steps {
                break gridworld::replay(level, env_seed, &demo.actions[..demo.actions.len() - k_steps])?;
            }
            redraws += 1;
            misses += 1;
            if misses >= MAX_REDRAWS {
                return Err(MetricsError::DemosTooShort {
                    level: level.id.to_string(),
                    k: k_steps,
                });
            }
        };
        hits += random_walk_from(&start, k_steps, actions, &mut rng) as usize;
    }
    Ok(WalkRate {
        rate: hits as f64 / trials as f64,
        trials,
        redraws,
    })
}

/// `(mean, max)` demo length; `None` for an empty set.
pub fn demo_stats(demos: &DemoSet) -> Option<(f64, usize)> {
    let lens: Vec<usize> = demos.lengths().collect();
    let max = *lens.iter().max()?;
    Some((lens.iter().sum::<usize>() as f64 / lens.len() as f64, max))
}

/// Frames-to-accuracy per run, for a fixed list of targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFrames {
    pub run_id: String,
    pub frames: Vec<Option<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub targets: Vec<f64>,
    pub runs: Vec<RunFrames>,
}

impl RunSummary {
    pub fn from_logs<'a>(logs: impl IntoIterator<Item = &'a TrainingLog>, targets: &[f64]) -> Self {
        Self {
            targets: targets.to_vec(),
            runs: logs
                .into_iter()
                .map(|log| RunFrames {
                    run_id: log.run_id.clone(),
                    frames: targets.iter().map(|&t| frames_to_accuracy(log, t)).collect(),
                })
                .collect(),
        }
    }

    /// Arithmetic mean over runs for target index `i`; absent if any run is.
    pub fn mean(&self, i: usize) -> Option<f64> {
        if self.runs.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for r in &self.runs {
            sum += r.frames[i]? as f64;
        }
        Some(sum / self.runs.len() as f64)
    }

    /// Number of runs that reached target index `i`.
    pub fn reached(&self, i: usize) -> usize {
        self.runs.iter().filter(|r| r.frames[i].is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_id");
        for t in &self.targets {
            let _ = write!(out, ",frames_to_{t}");
        }
        out.push('\n');
        for r in &self.runs {
            out.push_str(&r.run_id);
            for f in &r.frames {
                let _ = write!(out, ",{}", dash(f.map(|x| x as f64)));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for i in 0..self.targets.len() {
            let _ = write!(out, ",{}", dash(self.mean(i)));
        }
        out.push('\n');
        out
    }
}

fn dash(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Random-walk goal rates: one row per level, one column per `k`.
pub fn randwalk_table_csv(ks: &[usize], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("level");
    for k in ks {
        let _ = write!(out, ",k{k}");
    }
    out.push('\n');
    for (level, rates) in rows {
        out.push_str(level);
        for r in rates {
            let _ = write!(out, ",{r:.4}");
        }
        out.push('\n');
    }
    out
}

/// Demo length table: `level,avg,max`.
pub fn demo_table_csv(rows: &[(String, f64, usize)]) -> String {
    let mut out = String::from("level,avg,max\n");
    for (level, avg, max) in rows {
        let _ = writeln!(out, "{level},{avg:.2},{max}");
    }
    out
}

/// Frames-to-accuracy comparison: `level,baseline,rcppo` with `-` for unsolved.
pub fn frames_table_csv(rows: &[(String, Option<f64>, Option<f64>)]) -> String {
    let mut out = String::from("level,baseline,rcppo\n");
    for (level, base, rc) in rows {
        let _ = writeln!(out, "{level},{},{}", dash(*base), dash(*rc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::gen_demos;
    use crate::gridworld::{Cell, Color, Direction, Item, ItemKind, Mission, Pos, Target};
    use crate::trainer::IterationRecord;

    fn rec(frames: u64, stage: usize, eval: Option<f64>) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            frames,
            stage,
            train_success: None,
            eval_success: eval,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
        }
    }

    fn log(records: Vec<IterationRecord>) -> TrainingLog {
        TrainingLog {
            run_id: "r".into(),
            records,
            ..TrainingLog::default()
        }
    }

    #[test]
    fn frames_to_accuracy_first_crossing() {
        let l = log(vec![
            rec(10_000, 0, Some(0.50)),
            rec(15_000, 0, None),
            rec(20_000, 0, Some(0.96)),
        ]);
        assert_eq!(frames_to_accuracy(&l, 0.95), Some(20_000));
        assert_eq!(frames_to_accuracy(&l, 0.99), None);
        assert_eq!(frames_to_accuracy(&l, 0.5), Some(10_000));
    }

    #[test]
    fn curriculum_evals_count_only_after_completion() {
        let l = log(vec![
            rec(10_000, 3, Some(0.97)),
            rec(20_000, 5, Some(0.99)),
            rec(30_000, 0, Some(0.80)),
            rec(40_000, 0, Some(0.96)),
        ]);
        assert_eq!(frames_to_accuracy(&l, 0.95), Some(40_000));
    }

    #[test]
    fn demo_stats_arithmetic() {
        let level = LevelSpec::by_id("goto_local").unwrap();
        let mut set = gen_demos(level, 2, 1).unwrap();
        set.demos[0].actions = vec![Action::Forward; 2];
        set.demos[1].actions = vec![Action::Forward; 4];
        assert_eq!(demo_stats(&set), Some((3.0, 4)));
        set.demos.truncate(1);
        set.demos[0].actions = vec![Action::Forward; 5];
        assert_eq!(demo_stats(&set), Some((5.0, 5)));
        set.demos.clear();
        assert_eq!(demo_stats(&set), None);
    }

    #[test]
    fn expert_policy_always_succeeds() {
        for id in ["goto_local", "putnext_local", "unlock_pickup"] {
            let level = LevelSpec::by_id(id).unwrap();
            let rep = eval_policy(&mut ExpertPolicy::default(), level, 40, 3).unwrap();
            assert_eq!(rep.success_rate, 1.0, "{id}");
        }
    }

    #[test]
    fn random_policy_is_poor_on_goto_local() {
        let level = LevelSpec::by_id("goto_local").unwrap();
        let rep = eval_policy(&mut RandomPolicy::new(1, ActionSet::All), level, 1000, 2).unwrap();
        assert!(rep.success_rate < 0.3, "{}", rep.success_rate);
    }

    #[test]
    fn single_episode_rate_is_binary() {
        let level = LevelSpec::by_id("goto_redball").unwrap();
        let p = PolicyParams::zeros(4);
        let rep = eval_success_rate(&p, level, 1, 0).unwrap();
        assert!(rep.success_rate == 0.0 || rep.success_rate == 1.0);
        assert!(eval_success_rate(&p, level, 0, 0).is_err());
    }

    #[test]
    fn one_in_seven_walk() {
        // ball directly ahead, pickup mission: only Pickup succeeds in one step
        let mut s = GridState::empty(6, 6, Mission::pickup(Target::item(ItemKind::Ball, Color::Red)), 64);
        s.agent.pos = Pos::new(2, 2);
        s.agent.dir = Direction::East;
        s.set(Pos::new(3, 2), Cell::Item(Item::new(ItemKind::Ball, Color::Red)));
        let succeeding: Vec<Action> = Action::ALL
            .iter()
            .copied()
            .filter(|&a| {
                let mut t = s.clone();
                t.transition(a);
                t.success_predicate()
            })
            .collect();
        assert_eq!(succeeding, vec![Action::Pickup]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hits = (0..10_000)
            .filter(|_| random_walk_from(&s, 1, ActionSet::All, &mut rng))
            .count();
        assert!((hits as f64 / 10_000.0 - 1.0 / 7.0).abs() < 0.02);
    }

    #[test]
    fn walk_rate_is_deterministic() {
        let level = LevelSpec::by_id("goto_local").unwrap();
        let a = random_walk_goal_rate(level, 2, 300, 5, ActionSet::Navigation).unwrap();
        let b = random_walk_goal_rate(level, 2, 300, 5, ActionSet::Navigation).unwrap();
        assert_eq!(a, b);
        assert!(random_walk_goal_rate(level, 0, 10, 5, ActionSet::Navigation).is_err());
    }

    #[test]
    fn summary_means_and_dashes() {
        let a = TrainingLog {
            run_id: "a".into(),
            records: vec![rec(100, 0, Some(0.96)), rec(200, 0, Some(0.995))],
            ..TrainingLog::default()
        };
        let b = TrainingLog {
            run_id: "b".into(),
            records: vec![rec(300, 0, Some(0.97))],
            ..TrainingLog::default()
        };
        let s = RunSummary::from_logs([&a, &b], &[0.95, 0.99]);
        assert_eq!(s.mean(0), Some(200.0));
        assert_eq!(s.mean(1), None);
        assert_eq!(s.reached(1), 1);
        assert_eq!(
            s.to_csv(),
            "run_id,frames_to_0.95,frames_to_0.99\na,100,200\nb,300,-\nmean,200,-\n"
        );
        assert_eq!(
            frames_table_csv(&[("unlock_pickup".into(), None, Some(15360.0))]),
            "level,baseline,rcppo\nunlock_pickup,-,15360\n"
        );
    }
}
