use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use reservoir_core::data::{self, DailyRecord};
use reservoir_core::env::{evaluate_policy, run_episode, write_trace_csv, Action, EpisodeConfig};
use reservoir_core::inflow::{FittedInflow, InflowModelKind};
use reservoir_core::policy::{constant_policy, random_policy, Observation, Policy, SchedulePolicy};
use reservoir_core::{Discharge, Execution, WaterLevel};
use reservoir_rl::scenario::DamScenario;
use reservoir_rl::{train as train_learner, Algorithm, DamFeatures, RlError, TrainedPolicy};

use crate::config::{load_dataset, nse_by_split, resolve_inflow, Config};
use crate::report::{write_json, MetricsReport, NseEntry, PolicyMetrics, RunManifest};
use crate::{Common, DataArgs};

/// Invalid combination of arguments; exits with the usage code.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

struct RunContext {
    cfg: Config,
    seed: u64,
    out: PathBuf,
}

fn setup(common: &Common) -> Result<RunContext> {
    let cfg = Config::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.run.learner.seed);
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(RunContext { cfg, seed, out: common.out.clone() })
}

fn apply_data_args(cfg: &mut Config, data: &DataArgs) {
    if let Some(y) = data.train_end {
        cfg.run.data.train_end = y;
    }
    if let Some(y) = data.test_year {
        cfg.run.data.test_year = y;
    }
}

/// Training records and the test-year records; later years are dropped.
fn split(cfg: &Config, records: &[DailyRecord]) -> Result<(Vec<DailyRecord>, Vec<DailyRecord>)> {
    Ok(data::split_by_year(records, cfg.run.data.train_end, cfg.run.data.test_year)?)
}

fn scenario(cfg: &Config, data: &DataArgs, inflow: &str) -> Result<DamScenario> {
    let records = load_dataset(cfg, data.data.as_deref())?;
    let (train, _) = split(cfg, &records)?;
    let model = resolve_inflow(inflow, &train, cfg.sim.rainfall_window, &cfg.run.inflow.dlm)?;
    Ok(DamScenario::new(&records, model, cfg.sim.clone(), cfg.curve()?, cfg.run.data.train_end, cfg.run.data.test_year)?)
}

pub fn synthesize(common: &Common, years: Option<u32>) -> Result<()> {
    let mut ctx = setup(common)?;
    if let Some(y) = years {
        ctx.cfg.run.synthetic.years = y;
    }
    if let Some(s) = common.seed {
        ctx.cfg.run.synthetic.seed = s;
    }
    let records = data::synthesize(&ctx.cfg.run.synthetic, &ctx.cfg.curve()?, &ctx.cfg.sim)?;
    let path = ctx.out.join("data.csv");
    data::save_csv(&records, &path)?;
    let mut m = RunManifest::new("synthesize", ctx.cfg.run.synthetic.seed, ctx.cfg.snapshot());
    m.add("data", &path);
    m.write(&ctx.out)?;
    Ok(())
}

pub fn fit_inflow(common: &Common, data: &DataArgs, k: Option<usize>, include_replay: bool) -> Result<()> {
    let mut ctx = setup(common)?;
    apply_data_args(&mut ctx.cfg, data);
    if let Some(k) = k {
        ctx.cfg.sim.rainfall_window = k;
    }
    let cfg = &ctx.cfg;
    let k = cfg.sim.rainfall_window;
    let records = load_dataset(cfg, data.data.as_deref())?;
    let (train, test) = split(cfg, &records)?;
    let mut kinds = vec![InflowModelKind::Gls, InflowModelKind::Dlm, InflowModelKind::GlsPlusDlm];
    if include_replay {
        kinds.push(InflowModelKind::Replay);
    }
    let mut m = RunManifest::new("fit-inflow", ctx.seed, cfg.snapshot());
    let mut report = MetricsReport::default();
    for kind in kinds {
        let tag = kind.tag();
        let model = FittedInflow::fit(kind, &data::rainfall(&train), &data::inflow(&train)?, k, &cfg.run.inflow.dlm)
            .with_context(|| format!("fitting {tag}"))?;
        let path = ctx.out.join(format!("{}.json", tag.to_ascii_lowercase()));
        fs::write(&path, model.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
        m.add(tag, &path);
        let (tr, te) = nse_by_split(kind, &train, &test, k, &cfg.run.inflow.dlm).with_context(|| format!("scoring {tag}"))?;
        report.nse.push(NseEntry { model: tag.into(), train: tr, test: te });
    }
    report.check_finite()?;
    let metrics = ctx.out.join("metrics.json");
    write_json(&metrics, &report)?;
    m.add("metrics", &metrics);
    m.write(&ctx.out)?;
    for e in &report.nse {
        println!("{:<14} train NSE {:>8.4}  test NSE {:>8.4}", e.model, e.train, e.test);
    }
    Ok(())
}

fn train_one(cfg: &Config, sc: &DamScenario, algorithm: Algorithm, seed: u64, steps: Option<usize>, dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    fs::create_dir_all(dir)?;
    let mut lc = cfg.run.learner.clone();
    lc.algorithm = algorithm;
    lc.seed = seed;
    if let Some(s) = steps {
        lc.total_steps = s;
    }
    let features = DamFeatures::new(&cfg.sim, &sc.curve, cfg.run.training.rainfall_scale)?;
    let mut task = sc.training_task(features, cfg.run.training.initial_level)?;
    let mut eval = sc.test_task(features, seed)?;
    let curve_path = dir.join("curve.csv");
    let out = match train_learner(&mut task, &mut eval, &lc) {
        Ok(out) => out,
        Err(RlError::Aborted { step, reason, curve }) => {
            curve.write_csv(BufWriter::new(File::create(&curve_path)?))?;
            bail!("training aborted at step {step}: {reason}; partial curve in {}", curve_path.display());
        }
        Err(e) => return Err(e.into()),
    };
    out.curve.write_csv(BufWriter::new(File::create(&curve_path)?))?;
    let policy = TrainedPolicy::new(algorithm, features, out.learner.actor().clone(), seed, lc.total_steps)?;
    let policy_path = dir.join("policy.json");
    policy.save(&policy_path)?;
    Ok(vec![("policy".into(), policy_path), ("curve".into(), curve_path)])
}

pub fn train(common: &Common, data: &DataArgs, algorithm: Algorithm, steps: Option<usize>, inflow: &str, seeds: &[u64], jobs: usize) -> Result<()> {
    let mut ctx = setup(common)?;
    apply_data_args(&mut ctx.cfg, data);
    if jobs == 0 {
        return Err(Usage("--jobs must be at least 1".into()).into());
    }
    let sc = scenario(&ctx.cfg, data, inflow)?;
    let mut m = RunManifest::new("train", ctx.seed, ctx.cfg.snapshot());
    if seeds.is_empty() {
        for (name, p) in train_one(&ctx.cfg, &sc, algorithm, ctx.seed, steps, &ctx.out)? {
            m.add(name, &p);
        }
    } else {
        // Independent seeds in disjoint directories, pulled by worker threads.
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..jobs.min(seeds.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&seed) = seeds.get(i) else { break };
                    let dir = ctx.out.join(format!("seed-{seed}"));
                    let r = train_one(&ctx.cfg, &sc, algorithm, seed, steps, &dir);
                    results.lock().unwrap().push((seed, r));
                });
            }
        });
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|(s, _)| *s);
        for (seed, r) in results {
            for (name, p) in r.with_context(|| format!("seed {seed}"))? {
                m.add(format!("seed-{seed}/{name}"), &p);
            }
        }
    }
    m.write(&ctx.out)?;
    Ok(())
}

/// Every policy the command line can name.
#[derive(Debug, Clone)]
enum AnyPolicy {
    Schedule(SchedulePolicy),
    Constant(Discharge),
    Random { seed: u64, a_max: Discharge },
    Trained(Box<TrainedPolicy>),
}

enum Live {
    Schedule(SchedulePolicy),
    Constant(Discharge),
    Random(reservoir_core::policy::RandomPolicy),
    Trained(Box<TrainedPolicy>),
}

impl Policy for Live {
    fn act(&mut self, obs: &Observation<'_>, explore: bool) -> Action {
        match self {
            Self::Schedule(p) => p.act(obs, explore),
            Self::Constant(c) => Action { discharge: *c },
            Self::Random(p) => p.act(obs, explore),
            Self::Trained(p) => p.act(obs, explore),
        }
    }

    fn name(&self) -> String {
        match self {
            Self::Schedule(p) => p.name(),
            Self::Constant(c) => format!("constant:{}", c.0),
            Self::Random(p) => p.name(),
            Self::Trained(p) => p.name(),
        }
    }
}

impl AnyPolicy {
    fn parse(spec: &str, a_max: Discharge, seed: u64) -> Result<Self> {
        if spec.eq_ignore_ascii_case("baseline") {
            return Ok(Self::Schedule(SchedulePolicy::baseline(a_max)));
        }
        if spec.eq_ignore_ascii_case("random") {
            return Ok(Self::Random { seed, a_max });
        }
        if let Some(v) = spec.strip_prefix("constant:") {
            let c: f64 = v.parse().map_err(|_| Usage(format!("bad constant discharge {v:?}")))?;
            constant_policy(Discharge(c), a_max)?;
            return Ok(Self::Constant(Discharge(c)));
        }
        load_trained(Path::new(spec)).map(|p| Self::Trained(Box::new(p)))
    }

    fn live(&self, episode: usize) -> Live {
        match self {
            Self::Schedule(p) => Live::Schedule(p.clone()),
            Self::Constant(c) => Live::Constant(*c),
            Self::Random { seed, a_max } => {
                Live::Random(random_policy(seed.wrapping_add(episode as u64), (Discharge(0.0), *a_max), *a_max).expect("bounds checked"))
            }
            Self::Trained(p) => Live::Trained(p.clone()),
        }
    }
}

fn load_trained(path: &Path) -> Result<TrainedPolicy> {
    if !path.exists() {
        bail!("policy artifact not found: {}", path.display());
    }
    TrainedPolicy::load(path).with_context(|| format!("loading policy {}", path.display()))
}

fn policy_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn write_trace(dir: &Path, name: &str, trace: &reservoir_core::env::EpisodeTrace) -> Result<PathBuf> {
    let p = dir.join(format!("{name}.csv"));
    write_trace_csv(trace, BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))?;
    Ok(p)
}

pub fn evaluate(common: &Common, data: &DataArgs, policies: &[PathBuf], baseline: bool, inflow: &str, episodes: Option<usize>) -> Result<()> {
    let mut ctx = setup(common)?;
    apply_data_args(&mut ctx.cfg, data);
    if policies.is_empty() && !baseline {
        return Err(Usage("nothing to evaluate: pass --policies and/or --baseline".into()).into());
    }
    let episodes = episodes.unwrap_or(ctx.cfg.run.evaluation.episodes);
    if episodes == 0 {
        return Err(Usage("--episodes must be at least 1".into()).into());
    }
    let mut named: Vec<(String, AnyPolicy)> = Vec::new();
    for p in policies {
        let mut label = policy_label(p);
        if named.iter().any(|(n, _)| *n == label) {
            label = format!("{label}-{}", named.len() + 1);
        }
        named.push((label, AnyPolicy::Trained(Box::new(load_trained(p)?))));
    }
    if baseline {
        named.push(("baseline".into(), AnyPolicy::Schedule(SchedulePolicy::baseline(ctx.cfg.sim.a_max))));
    }
    let sc = scenario(&ctx.cfg, data, inflow)?;
    let test = sc.test_config(ctx.seed);
    let traces_dir = ctx.out.join("traces");
    fs::create_dir_all(&traces_dir)?;
    let mut m = RunManifest::new("evaluate", ctx.seed, ctx.cfg.snapshot());
    let mut report = MetricsReport::default();
    for (name, policy) in &named {
        let traces = evaluate_policy(|i| policy.live(i), &test, episodes, Execution::Parallel)?;
        report.policies.push(PolicyMetrics::from_traces(name, &traces));
        let p = write_trace(&traces_dir, name, &traces[0])?;
        m.add(format!("trace/{name}"), &p);
    }
    report.check_finite()?;
    let metrics = ctx.out.join("metrics.json");
    write_json(&metrics, &report)?;
    m.add("metrics", &metrics);
    m.write(&ctx.out)?;
    for p in &report.policies {
        println!("{:<12} return {:>10.3} ± {:.3}  discounted {:>10.3}  flood days {}", p.policy, p.mean_return, p.std_return, p.mean_discounted_return, p.flood_days);
    }
    Ok(())
}

pub fn simulate(
    common: &Common,
    data: &DataArgs,
    policy: &str,
    inflow: &str,
    start_date: Option<NaiveDate>,
    initial_level: Option<f64>,
) -> Result<()> {
    let mut ctx = setup(common)?;
    apply_data_args(&mut ctx.cfg, data);
    let sc = scenario(&ctx.cfg, data, inflow)?;
    let mut config: EpisodeConfig = sc.test_config(ctx.seed);
    if let Some(d) = start_date {
        config.start_date = d;
    }
    config.initial_level = initial_level.map(WaterLevel);
    let mut p = AnyPolicy::parse(policy, ctx.cfg.sim.a_max, ctx.seed)?.live(0);
    let trace = run_episode(&mut p, &config)?;
    let path = write_trace(&ctx.out, "trace", &trace)?;
    let mut m = RunManifest::new("simulate", ctx.seed, ctx.cfg.snapshot());
    m.add("trace", &path);
    m.write(&ctx.out)?;
    let s = trace.summary();
    println!("{} steps, return {:.3}, discounted {:.3}, flood days {}", trace.steps.len(), s.undiscounted_return, s.discounted_return, s.overflow_days);
    Ok(())
}
