use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rcppo::curriculum::{build_from_demos, build_random_walk, combine_stages, CombinePlan, Curriculum};
use rcppo::expert::{gen_demos, DemoSet};
use rcppo::gridworld::{self, ActionSet, GridState, LevelSpec};
use rcppo::metrics::{self, EvalPolicy, ExpertPolicy, GreedyNet, RandomPolicy, RunSummary};
use rcppo::policy::PolicyParams;
use rcppo::seeding::derive_seed;
use rcppo::trainer::{self, ResetSource, TrainError, TrainingLog};

use crate::config::{parse_action_set, usage, Mode, RunConfig};

const SUMMARY_TARGETS: [f64; 2] = [0.95, 0.99];
const STREAM_WALK: u64 = 7;

fn level_spec(id: &str) -> anyhow::Result<LevelSpec> {
    LevelSpec::by_id(id).cloned().map_err(|e| usage(e.to_string()))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(table: &str, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{table}");
    if let Some(path) = out {
        write(path, table)?;
    }
    Ok(())
}

/// Reads and replay-validates a demo file; the level comes from the file.
fn load_demos(path: &Path) -> anyhow::Result<(DemoSet, LevelSpec)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set = DemoSet::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
    let level = level_spec(&set.level_id)?;
    set.validate(&level)
        .with_context(|| format!("validating {}", path.display()))?;
    Ok((set, level))
}

fn goal_states(set: &DemoSet, level: &LevelSpec) -> anyhow::Result<Vec<GridState>> {
    set.demos
        .iter()
        .map(|d| gridworld::replay(level, d.seed, &d.actions).map_err(anyhow::Error::from))
        .collect()
}

fn describe(c: &Curriculum) -> String {
    format!("stages={} sizes={:?}", c.len(), c.stage_sizes())
}

pub fn demo_gen(level: &str, n: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let level = level_spec(level)?;
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let set = gen_demos(&level, n, seed)?;
    write(out, &set.to_jsonl())?;
    let (avg, max) = metrics::demo_stats(&set).expect("non-empty demo set");
    println!(
        "level={} demos={} avg={avg:.2} max={max} stages={}",
        level.id,
        set.demos.len(),
        max - 1
    );
    Ok(())
}

pub fn build_curriculum(
    demos: &Path,
    combine: &str,
    random_walk: bool,
    stages: Option<usize>,
    walk_actions: &str,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let plan: CombinePlan = combine.parse().map_err(|e| usage(format!("--combine: {e}")))?;
    let actions = parse_action_set(walk_actions).map_err(usage)?;
    let (set, level) = load_demos(demos)?;
    let base = if random_walk {
        let n = stages.unwrap_or_else(|| set.lengths().max().unwrap_or(1).saturating_sub(1));
        let (c, report) = build_random_walk(&level, &goal_states(&set, &level)?, n, actions, seed)?;
        let rates: Vec<String> = (1..=n).map(|s| format!("{:.3}", report.discard_rate(s))).collect();
        println!("walks={} discard_rates=[{}]", report.walks, rates.join(", "));
        c
    } else {
        build_from_demos(&set, &level)?
    };
    let c = combine_stages(&base, plan);
    write(out, &c.to_json())?;
    println!("level={} combine={plan} {}", level.id, describe(&c));
    Ok(())
}

fn reset_source(cfg: &RunConfig, level: &LevelSpec) -> anyhow::Result<ResetSource> {
    if cfg.mode == Mode::Ppo {
        return Ok(ResetSource::Natural);
    }
    if let Some(path) = &cfg.curriculum {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let c = Curriculum::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        if c.level_id != level.id {
            return Err(usage(format!(
                "curriculum {} is for level `{}`, not `{}`",
                path.display(),
                c.level_id,
                level.id
            )));
        }
        return Ok(ResetSource::Curriculum(c));
    }
    let path = cfg.demos.as_ref().expect("validated: demos or curriculum");
    let (mut set, demo_level) = load_demos(path)?;
    if demo_level.id != level.id {
        return Err(usage(format!(
            "demos {} are for level `{}`, not `{}`",
            path.display(),
            demo_level.id,
            level.id
        )));
    }
    set.demos.truncate(cfg.n_demos);
    let base = match cfg.mode {
        Mode::Rcppo => build_from_demos(&set, level)?,
        _ => {
            let n = set.lengths().max().unwrap_or(1).saturating_sub(1).max(1);
            let walk_seed = derive_seed(cfg.seed, STREAM_WALK);
            build_random_walk(level, &goal_states(&set, level)?, n, cfg.walk_actions, walk_seed)?.0
        }
    };
    Ok(ResetSource::Curriculum(combine_stages(&base, cfg.combine)))
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let level = level_spec(&cfg.level)?;
    let source = reset_source(cfg, &level)?;
    if let ResetSource::Curriculum(c) = &source {
        println!("curriculum {}", describe(c));
    }
    let echo = cfg.echo();
    print!("{echo}");
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write(&cfg.out.join("config.txt"), &echo)?;

    let result = trainer::train_with(&level, source, &cfg.scheduler, &cfg.hyper, cfg.seed, |r| {
        if let Some(e) = r.eval_success {
            println!(
                "iter={} frames={} stage={} train_success={} eval_success={e:.4}",
                r.iteration,
                r.frames,
                r.stage,
                r.train_success.map_or("-".to_string(), |t| format!("{t:.3}"))
            );
        }
    });
    let mut res = match result {
        Ok(res) => res,
        Err(TrainError::Aborted {
            iteration,
            reason,
            partial,
        }) => {
            write(&cfg.out.join("log.csv"), &partial.to_csv())?;
            anyhow::bail!("training aborted at iteration {iteration}: {reason} (partial log written)");
        }
        Err(e) => return Err(e.into()),
    };
    res.log.run_id = format!("{}-{}-s{}", level.id, cfg.mode, cfg.seed);
    write(&cfg.out.join("log.csv"), &res.log.to_csv())?;
    res.params.save(&cfg.out.join("checkpoint.json"))?;
    let summary = RunSummary::from_logs([&res.log], &SUMMARY_TARGETS);
    write(&cfg.out.join("summary.csv"), &summary.to_csv())?;
    let frames = res.log.records.last().map_or(0, |r| r.frames);
    let fta: Vec<String> = SUMMARY_TARGETS
        .iter()
        .zip(&summary.runs[0].frames)
        .map(|(t, f)| format!("frames_to_{t}={}", f.map_or("-".to_string(), |x| x.to_string())))
        .collect();
    println!(
        "done frames={frames} curriculum_completed_at={} {}",
        res.log.completed_at_frames.map_or("-".to_string(), |x| x.to_string()),
        fta.join(" ")
    );
    Ok(())
}

pub fn eval(
    level: &str,
    checkpoint: Option<&Path>,
    policy: Option<&str>,
    episodes: usize,
    seed: u64,
) -> anyhow::Result<()> {
    let level = level_spec(level)?;
    if episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let kind = policy.unwrap_or("net");
    let params;
    let mut agent: Box<dyn EvalPolicy> = match kind {
        "net" => {
            let path = checkpoint.ok_or_else(|| usage("--policy net needs --checkpoint"))?;
            params = PolicyParams::load(path).with_context(|| format!("loading {}", path.display()))?;
            Box::new(GreedyNet(&params))
        }
        "expert" => Box::new(ExpertPolicy::default()),
        "random" => Box::new(RandomPolicy::new(derive_seed(seed, 1), ActionSet::All)),
        other => {
            return Err(usage(format!(
                "unknown policy `{other}` (expected net, expert or random)"
            )))
        }
    };
    let rep = metrics::eval_policy(agent.as_mut(), &level, episodes, seed)?;
    println!(
        "level={} policy={kind} episodes={} success_rate={:.4} mean_length={:.2}",
        level.id, rep.episodes, rep.success_rate, rep.mean_length
    );
    Ok(())
}

fn parse_k(spec: &str) -> anyhow::Result<Vec<usize>> {
    let bad = || usage(format!("--k expects `a..b` or a number, got `{spec}`"));
    let ks: Vec<usize> = match spec.split_once("..") {
        Some((a, b)) => {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            (a..=b).collect()
        }
        None => vec![spec.trim().parse().map_err(|_| bad())?],
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

pub fn stats_randwalk(
    levels: &[String],
    k: &str,
    trials: usize,
    seed: u64,
    actions: &str,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let ks = parse_k(k)?;
    let actions = parse_action_set(actions).map_err(usage)?;
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let specs = levels
        .iter()
        .map(|l| level_spec(l))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for level in &specs {
        let mut rates = Vec::new();
        for &k in &ks {
            rates.push(metrics::random_walk_goal_rate(level, k, trials, derive_seed(seed, k as u64), actions)?.rate);
        }
        rows.push((level.id.to_string(), rates));
    }
    emit(&metrics::randwalk_table_csv(&ks, &rows), out)
}

pub fn stats_demos(
    file: Option<&Path>,
    levels: &[String],
    n: usize,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    if let Some(path) = file {
        let (set, level) = load_demos(path)?;
        let (avg, max) = metrics::demo_stats(&set).expect("parsed demo sets are non-empty");
        rows.push((level.id.to_string(), avg, max));
    } else {
        if n == 0 {
            return Err(usage("--n must be at least 1"));
        }
        let specs = levels
            .iter()
            .map(|l| level_spec(l))
            .collect::<anyhow::Result<Vec<_>>>()?;
        for level in &specs {
            let set = gen_demos(level, n, seed)?;
            let (avg, max) = metrics::demo_stats(&set).expect("non-empty demo set");
            rows.push((level.id.to_string(), avg, max));
        }
    }
    emit(&metrics::demo_table_csv(&rows), out)
}

pub fn stats_summary(runs: &[PathBuf], targets: &[f64], out: Option<&Path>) -> anyhow::Result<()> {
    if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage("--targets must lie in [0, 1]"));
    }
    let mut logs = Vec::new();
    for path in runs {
        let file = if path.is_dir() {
            path.join("log.csv")
        } else {
            path.clone()
        };
        let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let log = TrainingLog::from_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", file.display()))?;
        logs.push(log);
    }
    emit(&RunSummary::from_logs(&logs, targets).to_csv(), out)
}
