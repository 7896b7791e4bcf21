//! Experiment harness behind the `adac` binary.
//!
//! Every command is a plain function returning a summary, so the same code
//! paths serve the binary and the acceptance tests. CSV is the output
//! contract; all randomness is derived from the seeds in the configuration.

use std::fs;
use std::path::{Path, PathBuf};

use adac_core::agents::{AgentConfig, AgentError, AgentKind, Experiment, RunLog};
use adac_core::envs;
use adac_core::mdpcheck::{
    random_mdp, seed_q, verify_lemma1, verify_theorem1, FiniteMdp, DecompositionReading, MdpError,
    SeedConstruction,
};
use adac_core::svgd::{toy_fit, SvgdError, ToyConfig, ToyTarget};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

pub const OUT_ENV: &str = "ADAC_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("precondition: {0}")]
    Precondition(#[from] MdpError),
    #[error("run diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Svgd(SvgdError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0} bound violations")]
    Violations(usize),
}

impl CliError {
    /// 2 for bad input, 3 for a numerical abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Precondition(_) => 2,
            CliError::Diverged(_) => 3,
            _ => 1,
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(m) => CliError::Config(m),
            AgentError::NonFinite { .. } | AgentError::Svgd(SvgdError::Diverged(_)) => {
                CliError::Diverged(e.to_string())
            }
            other => CliError::Agent(other),
        }
    }
}

impl From<SvgdError> for CliError {
    fn from(e: SvgdError) -> Self {
        match e {
            SvgdError::Diverged(_) => CliError::Diverged(e.to_string()),
            other => CliError::Svgd(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// `ADAC_OUT` when set, else `configured`.
pub fn resolve_out_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    0.1
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            kappa: default_kappa(),
        }
    }
}

/// A training run description.
///
/// ```json
/// {
///   "env": "cartpole-mod",
///   "agent": "adac-ddpg",
///   "seeds": [0, 1, 2],
///   "steps": 50000,
///   "overrides": { "hidden": [64, 64] },
///   "intrinsic": { "enabled": false, "kappa": 0.1 },
///   "out_dir": "runs/cartpole"
/// }
/// ```
///
/// `overrides` holds any subset of the agent configuration fields and is
/// laid over the defaults of the chosen agent.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub steps: u64,
    #[serde(default)]
    pub overrides: serde_json::Map<String, Value>,
    #[serde(default)]
    pub intrinsic: IntrinsicConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        envs::make(&self.env).map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        if self.intrinsic.enabled && !(self.intrinsic.kappa.is_finite() && self.intrinsic.kappa >= 0.0) {
            return Err(CliError::Config("kappa must be a non-negative number".into()));
        }
        self.agent_config()?.validate()?;
        Ok(())
    }

    /// The agent defaults with `overrides` applied.
    pub fn agent_config(&self) -> Result<AgentConfig> {
        let base = serde_json::to_value(AgentConfig::for_kind(self.agent))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(mut fields) = base else {
            unreachable!("AgentConfig serializes to an object")
        };
        for (k, v) in &self.overrides {
            if !fields.contains_key(k) {
                return Err(CliError::Config(format!("unknown override `{k}`")));
            }
            fields.insert(k.clone(), v.clone());
        }
        serde_json::from_value(Value::Object(fields))
            .map_err(|e| CliError::Config(format!("overrides: {e}")))
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment {
            env: self.env.clone(),
            agent: self.agent,
            config: self.agent_config()?,
            steps: self.steps,
            intrinsic_kappa: self.intrinsic.enabled.then_some(self.intrinsic.kappa),
        })
    }
}

/// Runs `exp` for every seed, one worker thread per seed, results in seed
/// order.
pub fn run_seeds(exp: &Experiment, seeds: &[u64]) -> Result<Vec<RunLog>> {
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || exp.run(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub files: Vec<PathBuf>,
    pub logs: Vec<RunLog>,
    pub final_evals: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn run_file_name(env: &str, agent: AgentKind, seed: u64) -> String {
    format!("{env}_{}_seed{seed}.csv", agent.id())
}

/// Trains every seed and writes one run log per seed to `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let exp = cfg.experiment()?;
    let logs = run_seeds(&exp, &cfg.seeds)?;
    ensure_dir(out)?;
    let mut files = Vec::new();
    for (seed, log) in cfg.seeds.iter().zip(&logs) {
        let path = out.join(run_file_name(&cfg.env, cfg.agent, *seed));
        write_file(&path, &log.to_csv())?;
        files.push(path);
    }
    let final_evals: Vec<f64> = logs.iter().filter_map(RunLog::final_eval).collect();
    let (mean, std) = mean_std(&final_evals);
    Ok(TrainSummary {
        files,
        logs,
        final_evals,
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOptions {
    pub target: String,
    pub beta: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySummary {
    pub samples_file: PathBuf,
    pub density_file: PathBuf,
    pub n_samples: usize,
    /// Share of samples below zero.
    pub left_mass: f64,
    pub right_mass: f64,
    pub mean: f64,
    pub std: f64,
}

impl ToySummary {
    /// Share held by the heavier side.
    pub fn major_mass(&self) -> f64 {
        self.left_mass.max(self.right_mass)
    }
}

/// Half-width of the density grid.
const GRID_EDGE: f64 = 4.0;
const GRID_BINS: usize = 80;

/// Fits the toy sampler and writes `svgd_toy_<target>_samples.csv`
/// (`index,a`) and `svgd_toy_<target>_density.csv`
/// (`a,target_density,sample_density`, a histogram on `[-4, 4]`).
pub fn cmd_svgd_toy(opts: &ToyOptions, out: &Path) -> Result<ToySummary> {
    let target = ToyTarget::from_id(&opts.target)
        .ok_or_else(|| CliError::Config(format!("unknown toy target `{}`", opts.target)))?;
    if !(opts.beta.is_finite() && opts.beta >= 0.0) {
        return Err(CliError::Config("beta must be a non-negative number".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let log_p = move |a: f64| target.log_density(a);
    let sampler = toy_fit(&log_p, opts.beta, opts.steps, &ToyConfig::default(), &mut rng)?;
    let xs = sampler.sample(opts.samples, &mut rng);

    ensure_dir(out)?;
    let samples_file = out.join(format!("svgd_toy_{}_samples.csv", opts.target));
    let mut w = csv::Writer::from_path(&samples_file)?;
    w.write_record(["index", "a"])?;
    for (i, a) in xs.iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()])?;
    }
    w.flush().map_err(io_err(&samples_file))?;

    let width = 2.0 * GRID_EDGE / GRID_BINS as f64;
    let mut hist = vec![0usize; GRID_BINS];
    for &a in &xs {
        let b = ((a + GRID_EDGE) / width).floor();
        if b >= 0.0 && (b as usize) < GRID_BINS {
            hist[b as usize] += 1;
        }
    }
    let density_file = out.join(format!("svgd_toy_{}_density.csv", opts.target));
    let mut w = csv::Writer::from_path(&density_file)?;
    w.write_record(["a", "target_density", "sample_density"])?;
    for (b, &count) in hist.iter().enumerate() {
        let a = -GRID_EDGE + (b as f64 + 0.5) * width;
        let sample_density = count as f64 / (xs.len().max(1) as f64 * width);
        w.write_record([a.to_string(), target.density(a).to_string(), sample_density.to_string()])?;
    }
    w.flush().map_err(io_err(&density_file))?;

    let n = xs.len().max(1) as f64;
    let left = xs.iter().filter(|&&a| a < 0.0).count() as f64 / n;
    let (mean, std) = mean_std(&xs);
    Ok(ToySummary {
        samples_file,
        density_file,
        n_samples: xs.len(),
        left_mass: left,
        right_mass: if xs.is_empty() { 0.0 } else { 1.0 - left },
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_states: usize,
    pub max_actions: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 1000,
            seed: 0,
            tol: 1e-9,
            max_states: 6,
            max_actions: 4,
        }
    }
}

/// Per-construction violation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub instances: usize,
    pub stability_violations: usize,
    pub effectiveness_violations: usize,
    pub reversed_stability_violations: usize,
    pub worst_stability_margin: f64,
    pub worst_effectiveness_margin: f64,
    pub decomposition_behavior_max: f64,
    pub decomposition_target_max: f64,
}

impl Tally {
    pub fn violations(&self) -> usize {
        self.stability_violations + self.effectiveness_violations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySummary {
    pub file: PathBuf,
    pub fixed_point: Tally,
    pub arbitrary: Tally,
}

impl VerifySummary {
    /// Bound violations under the fixed-point construction.
    pub fn violations(&self) -> usize {
        self.fixed_point.violations()
    }
}

pub const MARGINS_HEADER: [&str; 12] = [
    "instance",
    "construction",
    "n_states",
    "n_actions",
    "gamma",
    "stability_margin",
    "effectiveness_margin",
    "stability_margin_reversed",
    "stability_holds",
    "effectiveness_holds",
    "decomposition_behavior_discrepancy",
    "decomposition_target_discrepancy",
];

fn construction_id(c: SeedConstruction) -> &'static str {
    match c {
        SeedConstruction::FixedPoint => "fixed-point",
        SeedConstruction::Arbitrary => "arbitrary",
    }
}

/// Checks the bounds on `mdps` under both seed constructions and writes
/// `margins.csv`.
pub fn verify_instances(mdps: &[FiniteMdp], seed: u64, tol: f64, out: &Path) -> Result<VerifySummary> {
    ensure_dir(out)?;
    let file = out.join("margins.csv");
    let mut w = csv::Writer::from_path(&file)?;
    w.write_record(MARGINS_HEADER)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut tallies = [Tally::default(), Tally::default()];
    let constructions = [SeedConstruction::FixedPoint, SeedConstruction::Arbitrary];
    for (i, mdp) in mdps.iter().enumerate() {
        mdp.check_reward_order()?;
        for (tally, &cons) in tallies.iter_mut().zip(&constructions) {
            let q = seed_q(mdp, cons, &mut rng)?;
            let rep = verify_theorem1(mdp, &q, tol)?;
            let lb = verify_lemma1(mdp, &q, DecompositionReading::BehaviorFixedPoint)?.max_discrepancy;
            let lt = verify_lemma1(mdp, &q, DecompositionReading::TargetFixedPoint)?.max_discrepancy;
            tally.instances += 1;
            tally.stability_violations += usize::from(!rep.stability_holds);
            tally.effectiveness_violations += usize::from(!rep.effectiveness_holds);
            tally.reversed_stability_violations += usize::from(rep.stability_margin_reversed < -tol);
            tally.worst_stability_margin = tally.worst_stability_margin.min(rep.stability_margin);
            tally.worst_effectiveness_margin = tally.worst_effectiveness_margin.min(rep.effectiveness_margin);
            tally.decomposition_behavior_max = tally.decomposition_behavior_max.max(lb);
            tally.decomposition_target_max = tally.decomposition_target_max.max(lt);
            w.write_record([
                i.to_string(),
                construction_id(cons).to_string(),
                mdp.n_states.to_string(),
                mdp.n_actions.to_string(),
                mdp.gamma.to_string(),
                rep.stability_margin.to_string(),
                rep.effectiveness_margin.to_string(),
                rep.stability_margin_reversed.to_string(),
                rep.stability_holds.to_string(),
                rep.effectiveness_holds.to_string(),
                lb.to_string(),
                lt.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(&file))?;
    let [fixed_point, arbitrary] = tallies;
    Ok(VerifySummary {
        file,
        fixed_point,
        arbitrary,
    })
}

/// Random instances drawn from `opts.seed`.
pub fn random_instances(opts: &VerifyOptions) -> Vec<FiniteMdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.instances)
        .map(|_| random_mdp(opts.max_states, opts.max_actions, &mut rng))
        .collect()
}

pub fn cmd_verify(opts: &VerifyOptions, out: &Path) -> Result<VerifySummary> {
    verify_instances(&random_instances(opts), opts.seed, opts.tol, out)
}

/// A hand-written instance, as read by `verify --mdp`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row `(s·A + a)` holds `P(· | s, a)`.
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub r_prime: Vec<f64>,
    pub gamma: f64,
    pub beta0: Vec<f64>,
}

impl MdpFile {
    pub fn load(path: &Path) -> Result<FiniteMdp> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let f: MdpFile = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(FiniteMdp::new(f.n_states, f.n_actions, f.p, f.r, f.r_prime, f.gamma, f.beta0)?)
    }
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub file: PathBuf,
    pub shared_bias: Vec<f64>,
    pub split_bias: Vec<f64>,
}

impl AblationSummary {
    /// Seeds where the shared network has strictly lower mean bias.
    pub fn shared_wins(&self) -> usize {
        self.shared_bias
            .iter()
            .zip(&self.split_bias)
            .filter(|(a, b)| a < b)
            .count()
    }
}

/// Runs shared and split policy networks on every seed, writes both run
/// logs and `bias_ablation.csv` (`seed,step,bias_shared,bias_split`, one
/// row per evaluation point).
pub fn cmd_bias_ablation(cfg: &RunConfig, out: &Path) -> Result<AblationSummary> {
    if !cfg.agent.is_adac() {
        return Err(CliError::Config("bias ablation needs an adac agent".into()));
    }
    let mut exp = cfg.experiment()?;
    exp.config.split_networks = false;
    let shared = run_seeds(&exp, &cfg.seeds)?;
    exp.config.split_networks = true;
    let split = run_seeds(&exp, &cfg.seeds)?;
    ablation_report(cfg, &shared, &split, out)
}

/// Writes the ablation outputs for runs that already exist.
pub fn ablation_report(cfg: &RunConfig, shared: &[RunLog], split: &[RunLog], out: &Path) -> Result<AblationSummary> {
    ensure_dir(out)?;
    let file = out.join("bias_ablation.csv");
    let mut w = csv::Writer::from_path(&file)?;
    w.write_record(["seed", "step", "bias_shared", "bias_split"])?;
    let mut shared_bias = Vec::new();
    let mut split_bias = Vec::new();
    for ((seed, a), b) in cfg.seeds.iter().zip(shared).zip(split) {
        let name = |tag: &str| out.join(format!("{}_{}_{tag}_seed{seed}.csv", cfg.env, cfg.agent.id()));
        write_file(&name("shared"), &a.to_csv())?;
        write_file(&name("split"), &b.to_csv())?;
        let bias = |log: &RunLog| -> Vec<(u64, f64)> {
            log.rows.iter().filter_map(|r| Some((r.step, r.policy_bias?))).collect()
        };
        for ((step, x), (_, y)) in bias(a).into_iter().zip(bias(b)) {
            w.write_record([seed.to_string(), step.to_string(), x.to_string(), y.to_string()])?;
        }
        shared_bias.push(a.mean_policy_bias(0).unwrap_or(f64::NAN));
        split_bias.push(b.mean_policy_bias(0).unwrap_or(f64::NAN));
    }
    w.flush().map_err(io_err(&file))?;
    Ok(AblationSummary {
        file,
        shared_bias,
        split_bias,
    })
}
