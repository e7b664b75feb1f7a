//! Run configuration: flat `key=value` files, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rcppo::curriculum::CombinePlan;
use rcppo::gridworld::{ActionSet, LevelSpec};
use rcppo::scheduler::SchedulerConfig;
use rcppo::trainer::HyperParams;

/// Bad flags or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Ppo,
    Rcppo,
    RcppoRandomWalk,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppo" => Ok(Mode::Ppo),
            "rcppo" => Ok(Mode::Rcppo),
            "rcppo_randomwalk" => Ok(Mode::RcppoRandomWalk),
            _ => Err(format!("unknown mode `{s}` (expected ppo, rcppo or rcppo_randomwalk)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ppo => "ppo",
            Mode::Rcppo => "rcppo",
            Mode::RcppoRandomWalk => "rcppo_randomwalk",
        })
    }
}

pub fn parse_action_set(s: &str) -> Result<ActionSet, String> {
    match s {
        "task" => Ok(ActionSet::Task),
        "nav" | "navigation" => Ok(ActionSet::Navigation),
        "all" => Ok(ActionSet::All),
        _ => Err(format!("unknown action set `{s}` (expected task, nav or all)")),
    }
}

fn action_set_name(a: ActionSet) -> &'static str {
    match a {
        ActionSet::Task => "task",
        ActionSet::Navigation => "nav",
        ActionSet::All => "all",
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub level: String,
    pub mode: Mode,
    pub seed: u64,
    pub demos: Option<PathBuf>,
    pub curriculum: Option<PathBuf>,
    /// Demos used from the demo file (leading ones).
    pub n_demos: usize,
    pub combine: CombinePlan,
    pub walk_actions: ActionSet,
    pub scheduler: SchedulerConfig,
    pub hyper: HyperParams,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            level: String::new(),
            mode: Mode::Ppo,
            seed: 0,
            demos: None,
            curriculum: None,
            n_demos: 1000,
            combine: CombinePlan::None,
            walk_actions: ActionSet::Task,
            scheduler: SchedulerConfig::default(),
            hyper: HyperParams::default(),
            out: PathBuf::from("runs/default"),
            deterministic: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, anyhow::Error>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| usage(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Sets one key. Unknown keys are usage errors.
    pub fn apply(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let h = &mut self.hyper;
        let s = &mut self.scheduler;
        match key {
            "level" => self.level = value.to_string(),
            "mode" => self.mode = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "demos" => self.demos = Some(PathBuf::from(value)),
            "curriculum" => self.curriculum = Some(PathBuf::from(value)),
            "n_demos" => self.n_demos = parse(key, value)?,
            "combine" => self.combine = parse(key, value)?,
            "walk_actions" => self.walk_actions = parse_action_set(value).map_err(usage)?,
            "out" => self.out = PathBuf::from(value),
            "deterministic" => self.deterministic = parse(key, value)?,
            "frames" => h.frame_budget = parse(key, value)?,
            "gamma" => h.gamma = parse(key, value)?,
            "lambda" => h.lambda = parse(key, value)?,
            "clip_eps" => h.clip_eps = parse(key, value)?,
            "lr" => h.lr = parse(key, value)?,
            "epochs" => h.epochs = parse(key, value)?,
            "minibatch" => h.minibatch = parse(key, value)?,
            "horizon" => h.horizon = parse(key, value)?,
            "workers" => h.workers = parse(key, value)?,
            "entropy_coef" => h.entropy_coef = parse(key, value)?,
            "value_coef" => h.value_coef = parse(key, value)?,
            "max_grad_norm" => h.max_grad_norm = parse(key, value)?,
            "hidden" => h.hidden = parse(key, value)?,
            "eval_interval" => h.eval_interval = parse(key, value)?,
            "eval_episodes" => h.eval_episodes = parse(key, value)?,
            "stop_accuracy" => h.stop_accuracy = parse(key, value)?,
            "patience" => h.patience = parse(key, value)?,
            "scheduler.mode" => s.mode = parse(key, value)?,
            "scheduler.threshold" => s.threshold = parse(key, value)?,
            "scheduler.start_threshold" => s.start_threshold = parse(key, value)?,
            "scheduler.end_threshold" => s.end_threshold = parse(key, value)?,
            "scheduler.window" => s.window = parse(key, value)?,
            "scheduler.min_episodes" => s.min_episodes = parse(key, value)?,
            "scheduler.epsilon" => s.epsilon = parse(key, value)?,
            "scheduler.smoothing" => s.smoothing = parse(key, value)?,
            _ => return Err(usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            for (key, value) in parse_kv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))? {
                cfg.apply(&key, &value)?;
            }
        }
        for (key, value) in overrides {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.level.is_empty() {
            return Err(usage("missing level"));
        }
        LevelSpec::by_id(&self.level).map_err(|e| usage(e.to_string()))?;
        self.hyper.validate().map_err(|e| usage(e.to_string()))?;
        self.scheduler.validate().map_err(|e| usage(e.to_string()))?;
        if self.n_demos == 0 {
            return Err(usage("n_demos must be at least 1"));
        }
        match self.mode {
            Mode::Ppo => {
                if self.demos.is_some() || self.curriculum.is_some() {
                    return Err(usage("demos/curriculum only apply to the rcppo modes"));
                }
            }
            Mode::Rcppo | Mode::RcppoRandomWalk => {
                if self.demos.is_none() && self.curriculum.is_none() {
                    return Err(usage(format!("mode {} needs --demos or --curriculum", self.mode)));
                }
            }
        }
        for p in self.demos.iter().chain(&self.curriculum) {
            if !p.is_file() {
                return Err(usage(format!("no such file: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Every key, in a form `resolve` reads back to the same configuration.
    pub fn echo(&self) -> String {
        let h = &self.hyper;
        let s = &self.scheduler;
        let mut pairs: Vec<(&str, String)> = vec![
            ("level", self.level.clone()),
            ("mode", self.mode.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some(d) = &self.demos {
            pairs.push(("demos", d.display().to_string()));
        }
        if let Some(c) = &self.curriculum {
            pairs.push(("curriculum", c.display().to_string()));
        }
        pairs.extend([
            ("n_demos", self.n_demos.to_string()),
            ("combine", self.combine.to_string()),
            ("walk_actions", action_set_name(self.walk_actions).to_string()),
            ("out", self.out.display().to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("frames", h.frame_budget.to_string()),
            ("gamma", h.gamma.to_string()),
            ("lambda", h.lambda.to_string()),
            ("clip_eps", h.clip_eps.to_string()),
            ("lr", h.lr.to_string()),
            ("epochs", h.epochs.to_string()),
            ("minibatch", h.minibatch.to_string()),
            ("horizon", h.horizon.to_string()),
            ("workers", h.workers.to_string()),
            ("entropy_coef", h.entropy_coef.to_string()),
            ("value_coef", h.value_coef.to_string()),
            ("max_grad_norm", h.max_grad_norm.to_string()),
            ("hidden", h.hidden.to_string()),
            ("eval_interval", h.eval_interval.to_string()),
            ("eval_episodes", h.eval_episodes.to_string()),
            ("stop_accuracy", h.stop_accuracy.to_string()),
            ("patience", h.patience.to_string()),
            ("scheduler.mode", s.mode.to_string()),
            ("scheduler.threshold", s.threshold.to_string()),
            ("scheduler.start_threshold", s.start_threshold.to_string()),
            ("scheduler.end_threshold", s.end_threshold.to_string()),
            ("scheduler.window", s.window.to_string()),
            ("scheduler.min_episodes", s.min_episodes.to_string()),
            ("scheduler.epsilon", s.epsilon.to_string()),
            ("scheduler.smoothing", s.smoothing.to_string()),
        ]);
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# base\nlevel=goto_local\nlr=0.0005\nworkers=4\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[kv("workers", "2")]).unwrap();
        assert_eq!(cfg.level, "goto_local");
        assert_eq!(cfg.hyper.lr, 0.0005);
        assert_eq!(cfg.hyper.workers, 2);
        assert_eq!(cfg.hyper.epochs, 4);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::resolve(
            None,
            &[
                kv("level", "goto_redball"),
                kv("scheduler.mode", "graduated"),
                kv("frames", "5000"),
            ],
        )
        .unwrap();
        let again = RunConfig::resolve(None, &parse_kv(&cfg.echo()).unwrap()).unwrap();
        assert_eq!(cfg.echo(), again.echo());
    }

    #[test]
    fn conflicts_are_usage_errors() {
        let err = RunConfig::resolve(None, &[kv("level", "goto_local"), kv("mode", "rcppo")]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let err = RunConfig::resolve(None, &[kv("level", "nowhere")]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let err = RunConfig::resolve(None, &[kv("level", "goto_local"), kv("bogus", "1")]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(parse_kv("novalue").is_err());
    }
}
