//! End-to-end experiment runners behind the CLI: scenario definitions,
//! configuration, and artifact output (dataset JSONL, fitted policies,
//! bounds JSON, sweep CSV, and a deterministic run manifest).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autism::{
    generate_autism, true_policy_value, AutismConfig, AutismError, AutismEvalPolicy,
};
use crate::behavior::{
    fit_logistic, fit_tabular, split_fit, FitError, FitOptions, LogisticOptions, PolicyRepr,
    StateBucketer, TimeBlockSpec,
};
use crate::bounds::{
    BoundError, BoundEstimate, BoundProblem, ConfoundingSpec, EstimatorOptions, GdOptions,
    KappaBucketing, KappaFeatures, KappaSpec,
};
use crate::core::io::{read_jsonl, write_jsonl};
use crate::core::{CoreError, Dataset, Policy};
use crate::exec::ExecMode;
use crate::rng::{mix_seed, substream};
use crate::sensitivity::{
    design_sensitivity, parse_gamma_grid, sweep, Scenario, ScenarioData, SweepError, SweepOptions,
    SweepOutput,
};
use crate::sepsis::{simulate_confounded, SepsisDynamicsConfig, SepsisError, SepsisWorld};
use crate::tabular_mdp::MdpError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Sweep(#[from] SweepError),
    #[error("{0}")]
    Bound(#[from] BoundError),
    #[error("{0}")]
    Fit(#[from] FitError),
    #[error("{0}")]
    Sepsis(#[from] SepsisError),
    #[error("{0}")]
    Autism(#[from] AutismError),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Mdp(#[from] MdpError),
    #[error("{0}")]
    Toy(#[from] crate::bounds::ToyError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// CLI exit code: 2 for configuration and input problems, 3 for
    /// estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Io(_) | ExperimentError::Toy(_) => 2,
            ExperimentError::Core(e) => match e {
                CoreError::ZeroBehaviorProbability { .. } => 3,
                _ => 2,
            },
            ExperimentError::Sepsis(_) | ExperimentError::Autism(_) => 2,
            ExperimentError::Mdp(_) => 3,
            ExperimentError::Bound(_) | ExperimentError::Fit(_) => 3,
            ExperimentError::Sweep(e) => match e {
                SweepError::BadGrid(_) | SweepError::UnknownPolicy(_) | SweepError::Io(_) => 2,
                _ => 3,
            },
        }
    }
}

/// Behavior-fit and κ-model options shared by the scenarios.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// "tabular" or "linear".
    pub kappa: String,
    pub alpha: f64,
    pub p_min: f64,
    pub logistic_ridge: f64,
    pub kappa_ridge: f64,
    pub kappa_grad_tol: f64,
    pub kappa_max_iters: usize,
    pub rho_cap: f64,
    /// When set, the behavior policy is fit on this share of episodes and
    /// bounds are estimated on the held-out rest.
    pub split_ratio: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kappa: "auto".to_string(),
            alpha: 1.0,
            p_min: 1e-4,
            logistic_ridge: 1e-4,
            kappa_ridge: 1e-8,
            kappa_grad_tol: 1e-7,
            kappa_max_iters: 200_000,
            rho_cap: 100.0,
            split_ratio: None,
        }
    }
}

impl EstimatorConfig {
    pub fn estimator_options(&self, exec: ExecMode) -> EstimatorOptions {
        let mut opts = EstimatorOptions::default();
        opts.weights.rho_cap = self.rho_cap;
        opts.exec = exec;
        opts
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            alpha: self.alpha,
            p_min: self.p_min,
        }
    }

    pub fn gd_options(&self) -> GdOptions {
        GdOptions {
            grad_tol: self.kappa_grad_tol,
            max_iters: self.kappa_max_iters,
            ridge: self.kappa_ridge,
        }
    }
}

/// Sepsis scenario: one planned world shared across replications;
/// per-replication data, tabular behavior fit (first step separate from the
/// rest), tabular κ keyed by the admission state.
pub struct SepsisScenario {
    pub world: Arc<SepsisWorld>,
    pub gamma_star: f64,
    pub n: usize,
    pub seed: u64,
    pub estimator_cfg: EstimatorConfig,
    pub exec: ExecMode,
}

impl SepsisScenario {
    pub fn new(
        config: SepsisDynamicsConfig,
        gamma_star: f64,
        n: usize,
        seed: u64,
        estimator_cfg: EstimatorConfig,
        exec: ExecMode,
    ) -> Result<Self, ExperimentError> {
        Ok(SepsisScenario {
            world: Arc::new(SepsisWorld::build(config)?),
            gamma_star,
            n,
            seed,
            estimator_cfg,
            exec,
        })
    }

    /// Exact policy values, the per-scenario ground truth.
    pub fn truths(&self) -> Result<BTreeMap<String, f64>, ExperimentError> {
        let oracle = self.world.oracle_values()?;
        Ok(BTreeMap::from([
            ("wo".to_string(), oracle.wo),
            ("w".to_string(), oracle.w),
            ("optimal".to_string(), oracle.optimal),
        ]))
    }
}

impl Scenario for SepsisScenario {
    fn t_star(&self) -> usize {
        1
    }

    fn kappa_spec(&self) -> KappaSpec {
        KappaSpec::Tabular {
            bucketing: KappaBucketing::State(StateBucketer::DiscreteState),
        }
    }

    fn estimator(&self) -> EstimatorOptions {
        self.estimator_cfg.estimator_options(self.exec)
    }

    fn policy_names(&self) -> Vec<String> {
        vec!["wo".to_string(), "w".to_string(), "optimal".to_string()]
    }

    fn replicate(&self, rep: u64) -> Result<ScenarioData, SweepError> {
        let seed = mix_seed(self.seed, "sepsis-rep", rep);
        let dataset = simulate_confounded(&self.world, self.gamma_star, self.n, seed, self.exec)?;
        let blocks = TimeBlockSpec::first_vs_rest(dataset.horizon(), StateBucketer::DiscreteState);
        let fit_opts = self.estimator_cfg.fit_options();
        let (behavior, dataset) = match self.estimator_cfg.split_ratio {
            Some(ratio) => {
                split_fit(&dataset, ratio, seed, |half| fit_tabular(half, &blocks, &fit_opts))?
            }
            None => (fit_tabular(&dataset, &blocks, &fit_opts)?, dataset),
        };
        Ok(ScenarioData {
            dataset,
            behavior,
            evaluations: vec![
                ("wo".to_string(), Arc::new(self.world.wo_policy.clone())),
                ("w".to_string(), Arc::new(self.world.w_policy.clone())),
                ("optimal".to_string(), Arc::new(self.world.optimal.clone())),
            ],
        })
    }
}

/// Autism scenario: per-replication data, per-step logistic behavior fit,
/// linear κ over the week-12 history features.
pub struct AutismScenario {
    pub config: AutismConfig,
    pub gamma_star: f64,
    pub n: usize,
    pub seed: u64,
    pub estimator_cfg: EstimatorConfig,
    pub exec: ExecMode,
}

impl AutismScenario {
    /// Monte Carlo ground truth per policy under this scenario's population.
    pub fn truths(&self, n_mc: usize) -> Result<BTreeMap<String, f64>, ExperimentError> {
        let seed = mix_seed(self.seed, "autism-rep", 0);
        let mut out = BTreeMap::new();
        for (name, policy) in [
            ("adaptive", AutismEvalPolicy::AdaptiveBliAac),
            ("aac", AutismEvalPolicy::NonadaptiveAac),
        ] {
            let (value, _) = true_policy_value(&self.config, policy, n_mc, seed)?;
            out.insert(name.to_string(), value);
        }
        Ok(out)
    }
}

impl Scenario for AutismScenario {
    fn t_star(&self) -> usize {
        2
    }

    fn kappa_spec(&self) -> KappaSpec {
        KappaSpec::Linear {
            features: KappaFeatures::StateWithIntercept,
            optimizer: self.estimator_cfg.gd_options(),
        }
    }

    fn estimator(&self) -> EstimatorOptions {
        self.estimator_cfg.estimator_options(self.exec)
    }

    fn policy_names(&self) -> Vec<String> {
        vec!["adaptive".to_string(), "aac".to_string()]
    }

    fn replicate(&self, rep: u64) -> Result<ScenarioData, SweepError> {
        let seed = mix_seed(self.seed, "autism-rep", rep);
        let dataset = generate_autism(&self.config, self.gamma_star, self.n, seed, self.exec)?;
        let logistic = LogisticOptions {
            ridge: self.estimator_cfg.logistic_ridge,
            p_min: self.estimator_cfg.p_min,
            ..LogisticOptions::default()
        };
        let (behavior, dataset) = match self.estimator_cfg.split_ratio {
            Some(ratio) => split_fit(&dataset, ratio, seed, |half| fit_logistic(half, &logistic))?,
            None => (fit_logistic(&dataset, &logistic)?, dataset),
        };
        Ok(ScenarioData {
            dataset,
            behavior,
            evaluations: vec![
                (
                    "adaptive".to_string(),
                    Arc::new(AutismEvalPolicy::AdaptiveBliAac),
                ),
                ("aac".to_string(), Arc::new(AutismEvalPolicy::NonadaptiveAac)),
            ],
        })
    }
}

/// A fixed external dataset with loaded policy files; replications beyond
/// the first bootstrap-resample the episodes.
pub struct ExternalScenario {
    pub dataset: Arc<Dataset>,
    pub behavior: Arc<PolicyRepr>,
    pub evaluations: Vec<(String, Arc<PolicyRepr>)>,
    pub t_star: usize,
    pub kappa: KappaSpec,
    pub seed: u64,
    pub estimator: EstimatorOptions,
}

impl Scenario for ExternalScenario {
    fn t_star(&self) -> usize {
        self.t_star
    }

    fn kappa_spec(&self) -> KappaSpec {
        self.kappa.clone()
    }

    fn estimator(&self) -> EstimatorOptions {
        self.estimator
    }

    fn policy_names(&self) -> Vec<String> {
        self.evaluations.iter().map(|(n, _)| n.clone()).collect()
    }

    fn replicate(&self, rep: u64) -> Result<ScenarioData, SweepError> {
        let dataset = if rep == 0 {
            (*self.dataset).clone()
        } else {
            let mut rng = substream(self.seed, "bootstrap", rep);
            let n = self.dataset.len();
            let indices: Vec<usize> = (0..n)
                .map(|_| rand::Rng::gen_range(&mut rng, 0..n))
                .collect();
            self.dataset.subset(&indices)?
        };
        Ok(ScenarioData {
            dataset,
            behavior: (*self.behavior).clone(),
            evaluations: self
                .evaluations
                .iter()
                .map(|(n, p)| (n.clone(), p.clone() as Arc<dyn Policy>))
                .collect(),
        })
    }
}

/// Declarative experiment description; TOML-compatible, overridable from the
/// CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// "sepsis", "autism", or "toy".
    pub scenario: String,
    pub gamma_star: f64,
    /// Confounding level for single-bound reports.
    pub gamma: f64,
    /// Optional sweep grid "start:end:step".
    pub gamma_grid: Option<String>,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Autism preset name when no explicit `[autism]` table is given.
    pub autism_preset: String,
    pub sepsis: SepsisDynamicsConfig,
    pub autism: Option<AutismConfig>,
    pub estimator: EstimatorConfig,
    pub toy_horizon: u32,
    /// Write the replication-0 dataset next to the other artifacts.
    pub emit_dataset: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "sepsis".to_string(),
            gamma_star: 1.0,
            gamma: 1.0,
            gamma_grid: None,
            n: 20_000,
            replications: 1,
            seed: 0,
            autism_preset: "case2".to_string(),
            sepsis: SepsisDynamicsConfig::default(),
            autism: None,
            estimator: EstimatorConfig::default(),
            toy_horizon: 2,
            emit_dataset: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(format!("bad config: {e}")))
    }

    pub fn autism_config(&self) -> Result<AutismConfig, ExperimentError> {
        if let Some(cfg) = &self.autism {
            return Ok(cfg.clone());
        }
        AutismConfig::preset(&self.autism_preset).ok_or_else(|| {
            ExperimentError::Config(format!("unknown autism preset {:?}", self.autism_preset))
        })
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub scenario: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    /// Per-policy single-Γ bounds.
    pub bounds: BTreeMap<String, BoundEstimate>,
    /// Ground-truth policy values where the scenario provides them.
    pub truths: BTreeMap<String, f64>,
    /// Design sensitivities for ordered policy pairs, ours and naive.
    /// Infinite values (no crossing on the grid) serialize as the string
    /// "inf".
    #[serde(serialize_with = "serialize_crossings")]
    pub design_sensitivity: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

fn serialize_crossings<S: serde::Serializer>(
    map: &BTreeMap<String, f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut out = s.serialize_map(Some(map.len()))?;
    for (k, v) in map {
        if v.is_finite() {
            out.serialize_entry(k, v)?;
        } else {
            out.serialize_entry(k, "inf")?;
        }
    }
    out.end()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn record(outputs: &mut Vec<String>, path: &Path) {
    // File names only: manifests stay byte-identical wherever the run lands.
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned());
    outputs.push(name);
}

/// Runs the configured experiment end to end: generate, fit, bound, sweep,
/// and write artifacts under `output_dir`. Identical (config, seed) produce
/// byte-identical outputs regardless of thread count.
pub fn run(config: &ExperimentConfig, exec: ExecMode) -> Result<RunSummary, ExperimentError> {
    std::fs::create_dir_all(&config.output_dir)?;
    let mut outputs = Vec::new();

    if config.scenario == "toy" {
        let (p1, p0) = crate::bounds::toy_confounded_likelihood(config.gamma, config.toy_horizon)?;
        let exact = crate::bounds::toy_confounded_likelihood_exact(config.gamma, config.toy_horizon);
        #[derive(Serialize)]
        struct ToyReport {
            gamma: f64,
            horizon: u32,
            p_y1: f64,
            p_y0: f64,
            ratio: f64,
            exact_p_y1: Option<String>,
            exact_p_y0: Option<String>,
        }
        let report = ToyReport {
            gamma: config.gamma,
            horizon: config.toy_horizon,
            p_y1: p1,
            p_y0: p0,
            ratio: p1 / p0,
            exact_p_y1: exact.map(|(a, _)| a.to_string()),
            exact_p_y0: exact.map(|(_, b)| b.to_string()),
        };
        let path = config.output_dir.join("toy.json");
        write_json(&path, &report)?;
        record(&mut outputs, &path);
        let manifest = RunManifest {
            tool: "confound-ope".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            scenario: config.scenario.clone(),
            outputs: outputs.clone(),
        };
        let manifest_path = config.output_dir.join("manifest.json");
        write_json(&manifest_path, &manifest)?;
        return Ok(RunSummary {
            bounds: BTreeMap::new(),
            truths: BTreeMap::new(),
            design_sensitivity: BTreeMap::new(),
            outputs,
        });
    }

    let (scenario, truths): (Box<dyn Scenario>, BTreeMap<String, f64>) =
        match config.scenario.as_str() {
            "sepsis" => {
                let scenario = SepsisScenario::new(
                    config.sepsis.clone(),
                    config.gamma_star,
                    config.n,
                    config.seed,
                    config.estimator.clone(),
                    exec,
                )?;
                let truths = scenario.truths()?;
                (Box::new(scenario), truths)
            }
            "autism" => {
                let scenario = AutismScenario {
                    config: config.autism_config()?,
                    gamma_star: config.gamma_star,
                    n: config.n,
                    seed: config.seed,
                    estimator_cfg: config.estimator.clone(),
                    exec,
                };
                let truths = scenario.truths(200_000)?;
                (Box::new(scenario), truths)
            }
            other => {
                return Err(ExperimentError::Config(format!(
                    "unknown scenario {other:?} (expected sepsis, autism, or toy)"
                )))
            }
        };

    // Replication 0 artifacts: dataset (optional), fitted behavior, bounds.
    let data = scenario.replicate(0)?;
    if config.emit_dataset {
        let path = config.output_dir.join("dataset.jsonl");
        write_jsonl(&data.dataset, &path)?;
        record(&mut outputs, &path);
        let oracle_path = config.output_dir.join("oracle.json");
        write_json(&oracle_path, &truths)?;
        record(&mut outputs, &oracle_path);
    }
    let behavior_path = config.output_dir.join("behavior.json");
    std::fs::write(&behavior_path, data.behavior.to_json() + "\n")?;
    record(&mut outputs, &behavior_path);

    let mut bounds = BTreeMap::new();
    for (name, eval) in &data.evaluations {
        let problem = BoundProblem::new(
            &data.dataset,
            &data.behavior,
            eval.as_ref(),
            scenario.t_star(),
            scenario.kappa_spec(),
            &scenario.estimator(),
        )?;
        let estimate = problem.final_bound(config.gamma)?;
        bounds.insert(name.clone(), estimate);
    }
    let bounds_path = config.output_dir.join("bounds.json");
    write_json(&bounds_path, &bounds)?;
    record(&mut outputs, &bounds_path);

    // Optional sweep with design sensitivities.
    let mut design = BTreeMap::new();
    if let Some(grid_text) = &config.gamma_grid {
        let grid = parse_gamma_grid(grid_text)?;
        let output: SweepOutput = sweep(
            scenario.as_ref(),
            &grid,
            &SweepOptions {
                replications: config.replications,
                ..SweepOptions::default()
            },
        )?;
        let csv_path = config.output_dir.join("sweep.csv");
        crate::sensitivity::write_sweep_csv(&output, &csv_path)?;
        record(&mut outputs, &csv_path);
        let names = scenario.policy_names();
        for a in &names {
            for b in &names {
                if a != b {
                    if let Ok(g) = design_sensitivity(&output.main, a, b) {
                        design.insert(format!("{a}>{b}"), g);
                    }
                    if let Ok(g) = design_sensitivity(&output.naive, a, b) {
                        design.insert(format!("{a}>{b}:naive"), g);
                    }
                }
            }
        }
        if !design.is_empty() {
            let path = config.output_dir.join("design_sensitivity.json");
            let encoded: BTreeMap<&String, serde_json::Value> = design
                .iter()
                .map(|(k, v)| {
                    let value = if v.is_finite() {
                        serde_json::json!(v)
                    } else {
                        serde_json::json!("inf")
                    };
                    (k, value)
                })
                .collect();
            write_json(&path, &encoded)?;
            record(&mut outputs, &path);
        }
    }

    let manifest = RunManifest {
        tool: "confound-ope".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        scenario: config.scenario.clone(),
        outputs: outputs.clone(),
    };
    let manifest_path = config.output_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    Ok(RunSummary {
        bounds,
        truths,
        design_sensitivity: design,
        outputs,
    })
}

/// Loads an external dataset plus policy files into a scenario for `bound`
/// and `sweep` on user data.
pub fn load_external(
    data_path: &Path,
    behavior_path: &Path,
    evaluation_paths: &[PathBuf],
    t_star: usize,
    kappa: KappaSpec,
    seed: u64,
    estimator: EstimatorOptions,
) -> Result<ExternalScenario, ExperimentError> {
    let dataset = Arc::new(read_jsonl(data_path)?);
    let behavior_text = std::fs::read_to_string(behavior_path)?;
    let behavior = Arc::new(PolicyRepr::from_json(&behavior_text)?);
    let mut evaluations = Vec::new();
    for path in evaluation_paths {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".to_string());
        let text = std::fs::read_to_string(path)?;
        evaluations.push((name, Arc::new(PolicyRepr::from_json(&text)?)));
    }
    if evaluations.is_empty() {
        return Err(ExperimentError::Config(
            "at least one evaluation policy file is required".to_string(),
        ));
    }
    Ok(ExternalScenario {
        dataset,
        behavior,
        evaluations,
        t_star,
        kappa,
        seed,
        estimator,
    })
}

/// Single-Γ bounds for every policy of a scenario's replication 0, plus the
/// naive bounds, keyed by policy name. Used by the CLI `bound` subcommand.
pub fn bound_report(
    scenario: &dyn Scenario,
    gamma: f64,
) -> Result<BTreeMap<String, BoundEstimate>, ExperimentError> {
    let data = scenario.replicate(0)?;
    let mut out = BTreeMap::new();
    for (name, eval) in &data.evaluations {
        let problem = BoundProblem::new(
            &data.dataset,
            &data.behavior,
            eval.as_ref(),
            scenario.t_star(),
            scenario.kappa_spec(),
            &scenario.estimator(),
        )?;
        out.insert(name.clone(), problem.final_bound(gamma)?);
    }
    Ok(out)
}

/// Convenience wrapper: IS estimate and naive bounds for one policy pair of
/// datasets already in memory (used by tests and the CLI).
pub fn quick_naive(
    dataset: &Dataset,
    behavior: &dyn Policy,
    evaluation: &dyn Policy,
    cspec: &ConfoundingSpec,
    opts: &EstimatorOptions,
) -> Result<(f64, f64, f64), ExperimentError> {
    let problem = BoundProblem::new(
        dataset,
        behavior,
        evaluation,
        cspec.t_star,
        KappaSpec::Tabular {
            bucketing: KappaBucketing::State(StateBucketer::DiscreteState),
        },
        opts,
    )?;
    let (lo, hi) = problem.naive(cspec);
    Ok((problem.point_is(), lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            scenario: "autism".to_string(),
            gamma_star: 2.0,
            gamma_grid: Some("1:4:0.5".to_string()),
            ..ExperimentConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.scenario, "autism");
        assert_eq!(back.gamma_star, 2.0);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_scenario_is_a_config_error() {
        let cfg = ExperimentConfig {
            scenario: "nope".to_string(),
            output_dir: tempfile::tempdir().unwrap().path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let err = run(&cfg, ExecMode::Auto).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn toy_run_writes_exact_fractions() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            scenario: "toy".to_string(),
            gamma: 4.0,
            toy_horizon: 2,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        run(&cfg, ExecMode::Auto).unwrap();
        let text = std::fs::read_to_string(dir.path().join("toy.json")).unwrap();
        assert!(text.contains("\"2/9\""));
        assert!(text.contains("\"1/18\""));
    }
}
