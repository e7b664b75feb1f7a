//! Stage advancement for curriculum training.
//!
//! Success for a stage is the rolling rate over that stage's most recent
//! training episodes. `FixedThreshold` advances once the rate reaches a
//! constant bar; `Graduated` raises the bar linearly from the first stage to
//! the last; `Tscl` is a teacher that samples stages epsilon-greedily by the
//! magnitude of their smoothed learning progress.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("unknown scheduler mode `{0}` (expected fixed, graduated or tscl)")]
    UnknownMode(String),
    #[error("invalid scheduler config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SchedulerMode {
    #[default]
    FixedThreshold,
    Graduated,
    Tscl,
}

impl fmt::Display for SchedulerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerMode::FixedThreshold => "fixed",
            SchedulerMode::Graduated => "graduated",
            SchedulerMode::Tscl => "tscl",
        })
    }
}

impl FromStr for SchedulerMode {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" | "fixed_threshold" => Ok(SchedulerMode::FixedThreshold),
            "graduated" => Ok(SchedulerMode::Graduated),
            "tscl" => Ok(SchedulerMode::Tscl),
            other => Err(SchedulerError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub mode: SchedulerMode,
    /// Bar for `FixedThreshold`, and the completion bar for `Tscl`.
    pub threshold: f64,
    pub start_threshold: f64,
    pub end_threshold: f64,
    /// Rolling window length, in episodes.
    pub window: usize,
    /// Episodes a stage needs before it can be passed.
    pub min_episodes: usize,
    pub epsilon: f64,
    /// Learning-progress smoothing factor.
    pub smoothing: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: SchedulerMode::FixedThreshold,
            threshold: 0.90,
            start_threshold: 0.70,
            end_threshold: 0.99,
            window: 100,
            min_episodes: 50,
            epsilon: 0.1,
            smoothing: 0.1,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let frac = |x: f64| x > 0.0 && x <= 1.0;
        if !(frac(self.threshold) && frac(self.start_threshold) && frac(self.end_threshold)) {
            return Err(SchedulerError::Invalid("thresholds must lie in (0, 1]".into()));
        }
        if self.min_episodes == 0 || self.window < self.min_episodes {
            return Err(SchedulerError::Invalid("need window >= min_episodes >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(SchedulerError::Invalid("epsilon in [0, 1], smoothing in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Success bar for `stage` (1-based) of an `n_stages` curriculum.
pub fn stage_threshold(cfg: &SchedulerConfig, stage: usize, n_stages: usize) -> f64 {
    match cfg.mode {
        SchedulerMode::FixedThreshold | SchedulerMode::Tscl => cfg.threshold,
        SchedulerMode::Graduated => {
            if n_stages <= 1 {
                cfg.end_threshold
            } else {
                let t = (stage - 1) as f64 / (n_stages - 1) as f64;
                cfg.start_threshold + (cfg.end_threshold - cfg.start_threshold) * t
            }
        }
    }
}

/// Fixed-capacity ring of episode outcomes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuccessWindow {
    flags: VecDeque<bool>,
    successes: usize,
}

impl SuccessWindow {
    pub fn push(&mut self, success: bool, capacity: usize) {
        if self.flags.len() == capacity {
            if let Some(true) = self.flags.pop_front() {
                self.successes -= 1;
            }
        }
        self.flags.push_back(success);
        self.successes += success as usize;
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn rate(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.successes as f64 / self.flags.len() as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.flags.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub n_stages: usize,
    /// 1-based stage resets are drawn from (last teacher pick in `Tscl`).
    pub current_stage: usize,
    pub windows: Vec<SuccessWindow>,
    /// Smoothed learning progress per stage (`Tscl`).
    pub progress: Vec<f64>,
    last_rate: Vec<Option<f64>>,
    pub completed: bool,
}

// Rates compare with a little slack so that e.g. 0.84 computed two ways agrees.
const RATE_SLACK: f64 = 1e-12;

impl SchedulerState {
    pub fn new(n_stages: usize) -> Self {
        Self {
            n_stages,
            current_stage: 1,
            windows: vec![SuccessWindow::default(); n_stages],
            progress: vec![0.0; n_stages],
            last_rate: vec![None; n_stages],
            completed: n_stages == 0,
        }
    }

    pub fn window(&self, stage: usize) -> &SuccessWindow {
        &self.windows[stage - 1]
    }

    /// Records one finished episode that was reset from `stage`, then
    /// advances (or completes) if the bar is met.
    pub fn record_episode(&mut self, cfg: &SchedulerConfig, stage: usize, success: bool) {
        if self.completed || stage == 0 || stage > self.n_stages {
            return;
        }
        let i = stage - 1;
        self.windows[i].push(success, cfg.window);
        if cfg.mode == SchedulerMode::Tscl {
            let rate = self.windows[i].rate();
            let slope = rate - self.last_rate[i].unwrap_or(rate);
            self.last_rate[i] = Some(rate);
            self.progress[i] = cfg.smoothing * slope + (1.0 - cfg.smoothing) * self.progress[i];
        }
        if self.should_advance(cfg) {
            self.advance(cfg.mode);
        }
    }

    /// Whether the bar for leaving the current stage is met. In `Tscl` mode
    /// this is the completion test on the final stage.
    pub fn should_advance(&self, cfg: &SchedulerConfig) -> bool {
        if self.completed {
            return false;
        }
        let stage = match cfg.mode {
            SchedulerMode::Tscl => self.n_stages,
            _ => self.current_stage,
        };
        let w = self.window(stage);
        w.len() >= cfg.min_episodes && w.rate() >= stage_threshold(cfg, stage, self.n_stages) - RATE_SLACK
    }

    fn advance(&mut self, mode: SchedulerMode) {
        if mode == SchedulerMode::Tscl || self.current_stage >= self.n_stages {
            self.completed = true;
        } else {
            self.current_stage += 1;
        }
    }

    /// Teacher pick: uniform with probability `epsilon`, otherwise the stage
    /// with the largest absolute learning progress (lowest index on ties).
    pub fn tscl_select_stage<R: Rng + ?Sized>(&mut self, cfg: &SchedulerConfig, rng: &mut R) -> usize {
        let stage = if self.n_stages <= 1 {
            1
        } else if rng.gen::<f64>() < cfg.epsilon {
            rng.gen_range(1..=self.n_stages)
        } else {
            let mut best = 0;
            for (i, p) in self.progress.iter().enumerate() {
                if p.abs() > self.progress[best].abs() {
                    best = i;
                }
            }
            best + 1
        };
        self.current_stage = stage;
        stage
    }

    /// Stage the next curriculum reset should come from, or `None` once
    /// resets are unconstrained.
    pub fn next_reset_stage<R: Rng + ?Sized>(&mut self, cfg: &SchedulerConfig, rng: &mut R) -> Option<usize> {
        if self.completed {
            None
        } else if cfg.mode == SchedulerMode::Tscl {
            Some(self.tscl_select_stage(cfg, rng))
        } else {
            Some(self.current_stage)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: SchedulerMode) -> SchedulerConfig {
        SchedulerConfig {
            mode,
            ..SchedulerConfig::default()
        }
    }

    #[test]
    fn window_rates_and_eviction() {
        let mut w = SuccessWindow::default();
        w.push(true, 4);
        assert_eq!(w.rate(), 1.0);
        for f in [true, false, true] {
            w.push(f, 4);
        }
        assert_eq!(w.rate(), 0.75);
        w.push(false, 4);
        assert_eq!(w.len(), 4);
        assert_eq!(w.iter().collect::<Vec<_>>(), vec![true, false, true, false]);
        assert_eq!(w.rate(), 0.5);
    }

    #[test]
    fn thresholds() {
        let fixed = cfg(SchedulerMode::FixedThreshold);
        assert_eq!(stage_threshold(&fixed, 1, 30), 0.90);
        assert_eq!(stage_threshold(&fixed, 30, 30), 0.90);
        let grad = cfg(SchedulerMode::Graduated);
        assert_eq!(stage_threshold(&grad, 1, 30), 0.70);
        assert!((stage_threshold(&grad, 30, 30) - 0.99).abs() < 1e-15);
        assert!((stage_threshold(&grad, 15, 30) - 0.84).abs() < 1e-12);
        assert_eq!(stage_threshold(&grad, 1, 1), 0.99);
        let mut last = 0.0;
        for s in 1..=30 {
            let t = stage_threshold(&grad, s, 30);
            assert!(t >= last);
            last = t;
        }
    }

    fn fill(state: &mut SchedulerState, cfg: &SchedulerConfig, stage: usize, successes: usize, total: usize) {
        for i in 0..total {
            state.record_episode(cfg, stage, i >= total - successes);
        }
    }

    #[test]
    fn fixed_advances_at_ninety_percent() {
        let c = cfg(SchedulerMode::FixedThreshold);
        let mut s = SchedulerState::new(3);
        // failures first so the rate only reaches 0.90 on the 100th episode
        for i in 0..100 {
            s.record_episode(&c, 1, i >= 10);
            if i < 99 {
                assert_eq!(s.current_stage, 1, "advanced early at {i}");
            }
        }
        assert_eq!(s.current_stage, 2);
    }

    #[test]
    fn eighty_nine_percent_stays() {
        let c = cfg(SchedulerMode::FixedThreshold);
        let mut s = SchedulerState::new(3);
        for i in 0..100 {
            s.record_episode(&c, 1, i >= 11);
        }
        assert_eq!(s.current_stage, 1);
        assert!((s.window(1).rate() - 0.89).abs() < 1e-12);
    }

    #[test]
    fn min_episodes_guard() {
        let c = cfg(SchedulerMode::FixedThreshold);
        let mut s = SchedulerState::new(2);
        fill(&mut s, &c, 1, 49, 49);
        assert_eq!(s.window(1).rate(), 1.0);
        assert!(!s.should_advance(&c));
        assert_eq!(s.current_stage, 1);
        s.record_episode(&c, 1, true);
        assert_eq!(s.current_stage, 2);
    }

    #[test]
    fn completion_after_last_stage() {
        let c = cfg(SchedulerMode::FixedThreshold);
        let mut s = SchedulerState::new(2);
        fill(&mut s, &c, 1, 50, 50);
        fill(&mut s, &c, 2, 50, 50);
        assert!(s.completed);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.next_reset_stage(&c, &mut rng), None);
        // further episodes are ignored
        s.record_episode(&c, 2, false);
        assert!(s.completed);
    }

    #[test]
    fn graduated_needs_higher_bar_later() {
        let c = cfg(SchedulerMode::Graduated);
        let mut s = SchedulerState::new(3);
        fill(&mut s, &c, 1, 70, 100);
        assert_eq!(s.current_stage, 2);
        let mut s2 = SchedulerState::new(3);
        s2.current_stage = 3;
        fill(&mut s2, &c, 3, 98, 100);
        assert!(!s2.completed);
        // evicts a failure, 99/100 meets the final bar
        s2.record_episode(&c, 3, true);
        assert!(s2.completed);
    }

    #[test]
    fn tscl_single_stage_and_uniform_exploration() {
        let mut c = cfg(SchedulerMode::Tscl);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut one = SchedulerState::new(1);
        for _ in 0..100 {
            assert_eq!(one.tscl_select_stage(&c, &mut rng), 1);
        }
        c.epsilon = 1.0;
        let mut s = SchedulerState::new(5);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[s.tscl_select_stage(&c, &mut rng) - 1] += 1;
        }
        for n in counts {
            let f = n as f64 / 10_000.0;
            assert!((f - 0.2).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn tscl_prefers_the_improving_stage() {
        let mut c = cfg(SchedulerMode::Tscl);
        c.epsilon = 0.0;
        let mut s = SchedulerState::new(4);
        for i in 0..60 {
            s.record_episode(&c, 1, false);
            s.record_episode(&c, 2, i % 3 == 0);
            // stage 3: success rate climbs every episode
            s.record_episode(&c, 3, i >= 5);
            s.record_episode(&c, 4, false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(s.tscl_select_stage(&c, &mut rng), 3);
    }

    #[test]
    fn advancement_is_monotone() {
        let c = cfg(SchedulerMode::FixedThreshold);
        let mut s = SchedulerState::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut last = 1;
        for _ in 0..5000 {
            let stage = s.current_stage;
            s.record_episode(&c, stage, rng.gen::<f64>() < 0.93);
            assert!(s.current_stage >= last);
            last = s.current_stage;
        }
        assert!(s.completed);
    }

    #[test]
    fn config_validation() {
        assert!(SchedulerConfig::default().validate().is_ok());
        let bad = SchedulerConfig {
            window: 10,
            min_episodes: 20,
            ..SchedulerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SchedulerConfig {
            threshold: 1.5,
            ..SchedulerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("graduated".parse::<SchedulerMode>().unwrap(), SchedulerMode::Graduated);
        assert!("weird".parse::<SchedulerMode>().is_err());
    }
}
