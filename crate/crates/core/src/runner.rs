//! Batch experiments: configuration, the stochastic compliance problem, and
//! report and artifact writers used by the `stopt` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    correction_factors, estimate_diag, estimate_mean_and_grad, exact_responses,
    grad_weighted_compliances, sample_correcting_ratios, weighted_adjoint_gradient,
    CorrectionFactors, RatioSample, RatioSampling,
};
use crate::fem::{assemble_and_factorize, GroundMesh, Material};
use crate::mma::{
    continuation_run, ContinuationProblem, ContinuationSchedule, Evaluation, MmaParams, Problem,
    ScheduleSpec, Stage, StageRecord,
};
use crate::probing::{hadamard_order, hadamard_probes, rademacher_probes, ProbeKind, ProbingSet};
use crate::scenarios::{sample_scenarios, BaseLoadSpec, LoadScenarioSet};
use crate::simp::{build_filter, SimpChain};
use crate::stats::{self, mean_std_objective, ComplianceStats};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "STOPT_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Mean,
    MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `L` solves per evaluation.
    Exact,
    /// Trace estimate of the mean, `N` solves per evaluation.
    Trace,
    /// Diagonal estimate with a JVP gradient (`2N` solves) and ratios
    /// computed once at the full ground mesh.
    DiagCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { nx: 60, ny: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub count: usize,
    /// Seed for Rademacher probes.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Hadamard,
            count: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of scenarios `L`.
    pub count: usize,
    /// Rank parameter `R`.
    pub rank: usize,
    pub seed: u64,
    /// Base loads; the cantilever placement is used when absent.
    pub base_loads: Option<BaseLoadSpec>,
    /// Scenario CSV to load instead of sampling.
    pub file: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            count: 64,
            rank: 10,
            seed: 1,
            base_loads: None,
            file: None,
        }
    }
}

/// Full description of one experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub material: Material,
    /// Hat filter radius in element widths.
    pub filter_radius: f64,
    pub x_min: f64,
    pub volume_fraction: f64,
    pub objective: ObjectiveKind,
    /// Weight `m` of the standard deviation in `mu + m sigma`.
    pub std_multiplier: f64,
    pub method: Method,
    pub probes: ProbeConfig,
    pub scenarios: ScenarioConfig,
    pub schedule: ScheduleSpec,
    /// Explicit stages; replaces `schedule` when present.
    pub stages: Option<Vec<Stage>>,
    pub mma: MmaParams,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: MeshConfig::default(),
            material: Material::default(),
            filter_radius: 2.0,
            x_min: 1e-3,
            volume_fraction: 0.4,
            objective: ObjectiveKind::Mean,
            std_multiplier: 2.0,
            method: Method::Exact,
            probes: ProbeConfig::default(),
            scenarios: ScenarioConfig::default(),
            schedule: ScheduleSpec::default(),
            stages: None,
            mma: MmaParams::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `STOPT_OUT_DIR` if it is set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return bad(format!(
                "mesh must be at least 1x1, got {}x{}",
                self.mesh.nx, self.mesh.ny
            ));
        }
        self.material
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.filter_radius >= 0.0) {
            return bad(format!(
                "filter radius must be >= 0, got {}",
                self.filter_radius
            ));
        }
        if !(self.x_min > 0.0 && self.x_min < 1.0) {
            return bad(format!("x_min must lie in (0, 1), got {}", self.x_min));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return bad(format!(
                "volume fraction must lie in (0, 1), got {}",
                self.volume_fraction
            ));
        }
        if !(self.std_multiplier >= 0.0) {
            return bad(format!(
                "std multiplier must be >= 0, got {}",
                self.std_multiplier
            ));
        }
        if self.objective == ObjectiveKind::MeanStd && self.method == Method::Trace {
            return bad("the mean_std objective needs method exact or diag_corrected".into());
        }
        if self.scenarios.count < 2 && self.scenarios.file.is_none() {
            return bad(format!(
                "need at least 2 scenarios, got {}",
                self.scenarios.count
            ));
        }
        if self.scenarios.rank < 4 {
            return bad(format!(
                "rank parameter must be >= 4, got {}",
                self.scenarios.rank
            ));
        }
        if self.method != Method::Exact && self.probes.count == 0 {
            return bad("probe count must be positive".into());
        }
        self.continuation()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.mma
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn continuation(&self) -> Result<ContinuationSchedule> {
        match &self.stages {
            Some(stages) => {
                let schedule = ContinuationSchedule {
                    stages: stages.clone(),
                };
                schedule.validate()?;
                Ok(schedule)
            }
            None => ContinuationSchedule::from_spec(&self.schedule),
        }
    }

    pub fn mesh(&self) -> Result<GroundMesh> {
        GroundMesh::cantilever(self.mesh.nx, self.mesh.ny, self.material)
    }

    /// Loads the scenario file if one is configured, otherwise samples.
    pub fn scenarios(&self, mesh: &GroundMesh) -> Result<LoadScenarioSet> {
        let set = match &self.scenarios.file {
            Some(path) => LoadScenarioSet::read_csv(fs::File::open(path)?)?,
            None => {
                let base = self
                    .scenarios
                    .base_loads
                    .clone()
                    .unwrap_or_else(|| BaseLoadSpec::cantilever_default(mesh));
                sample_scenarios(
                    mesh,
                    self.scenarios.rank,
                    self.scenarios.count,
                    self.scenarios.seed,
                    &base,
                )?
            }
        };
        set.validate_for(mesh)?;
        if set.n_scenarios() < 2 {
            return Err(Error::Config(
                "scenario set needs at least 2 scenarios".into(),
            ));
        }
        Ok(set)
    }

    pub fn probing_set(&self, l: usize) -> Result<ProbingSet> {
        make_probes(self.probes.kind, l, self.probes.count, self.probes.seed)
    }
}

fn make_probes(kind: ProbeKind, l: usize, n: usize, seed: u64) -> Result<ProbingSet> {
    match kind {
        ProbeKind::Hadamard => hadamard_probes(l, n),
        ProbeKind::Rademacher => rademacher_probes(l, n, seed),
    }
}

/// Linear solves split by purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolveAudit {
    pub optimization: usize,
    pub correction: usize,
    pub final_report: usize,
    pub total: usize,
    /// `evaluations x (L | N | 2N)` for the configured method.
    pub predicted_optimization: usize,
}

/// Values the optimizer saw at its last evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorValues {
    /// Objective as optimised (corrected where applicable).
    pub objective: f64,
    /// Estimated mean compliance (uncorrected).
    pub mean: f64,
    /// Statistics of the diagonal estimate, when available.
    pub diag_stats: Option<ComplianceStats>,
    /// Corrected mean and standard deviation, for `diag_corrected`.
    pub corrected_mean: Option<f64>,
    pub corrected_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub penalty: f64,
    pub beta: f64,
    pub tol: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub kkt: f64,
    pub solves: usize,
    pub wall_time_s: f64,
}

impl From<&StageRecord> for StageSummary {
    fn from(r: &StageRecord) -> Self {
        Self {
            stage: r.stage,
            penalty: r.penalty,
            beta: r.beta,
            tol: r.tol,
            iterations: r.iterations,
            evaluations: r.evaluations,
            converged: r.converged,
            kkt: r.kkt,
            solves: r.solves,
            wall_time_s: r.wall_time_s,
        }
    }
}

/// Summary of a finished run; the `exact` block always comes from `L`
/// solves at the final design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub method: Method,
    pub objective: ObjectiveKind,
    pub std_multiplier: f64,
    pub nx: usize,
    pub ny: usize,
    pub n_scenarios: usize,
    pub n_probes: usize,
    pub exact: ComplianceStats,
    /// `mu + m sigma` from the exact statistics (`mu` alone for `mean`).
    pub exact_objective: f64,
    pub per_scenario: Vec<f64>,
    pub estimate: Option<EstimatorValues>,
    pub correction: Option<(f64, f64)>,
    pub volume: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    pub solves: SolveAudit,
    pub stages: Vec<StageSummary>,
    pub wall_time_s: f64,
}

/// The design problem handed to the optimizer: filtered SIMP densities,
/// a compliance statistic, and `mean(x) <= volume_fraction`.
pub struct StochasticCompliance<'a> {
    mesh: &'a GroundMesh,
    loads: &'a DMatrix<f64>,
    chain: SimpChain,
    multiplier: f64,
    method: Method,
    probes: Option<ProbingSet>,
    volume_fraction: f64,
    correction: Option<CorrectionFactors>,
    optimization_solves: usize,
    correction_solves: usize,
    evaluations: usize,
    last: Option<EstimatorValues>,
}

impl<'a> StochasticCompliance<'a> {
    pub fn new(cfg: &RunConfig, mesh: &'a GroundMesh, loads: &'a DMatrix<f64>) -> Result<Self> {
        cfg.validate()?;
        let filter = build_filter(mesh, cfg.filter_radius)?;
        let first = cfg.continuation()?.stages[0];
        let chain = SimpChain::new(filter, first.penalty, first.beta, cfg.x_min)?;
        let probes = match cfg.method {
            Method::Exact => None,
            _ => Some(cfg.probing_set(loads.ncols())?),
        };
        let mut correction_solves = 0;
        let correction = match (&probes, cfg.method) {
            (Some(probes), Method::DiagCorrected) => {
                // ratios at the full ground mesh, x = 1
                let full = vec![1.0; mesh.n_elements()];
                let sys = assemble_and_factorize(mesh, &chain.forward(&full)?.rho)?;
                let factors = correction_factors(loads, &sys, probes, &full)?;
                correction_solves = sys.solve_count();
                Some(factors)
            }
            _ => None,
        };
        Ok(Self {
            mesh,
            loads,
            chain,
            multiplier: match cfg.objective {
                ObjectiveKind::Mean => 0.0,
                ObjectiveKind::MeanStd => cfg.std_multiplier,
            },
            method: cfg.method,
            probes,
            volume_fraction: cfg.volume_fraction,
            correction,
            optimization_solves: 0,
            correction_solves,
            evaluations: 0,
            last: None,
        })
    }

    pub fn chain(&self) -> &SimpChain {
        &self.chain
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn optimization_solves(&self) -> usize {
        self.optimization_solves
    }

    pub fn correction_solves(&self) -> usize {
        self.correction_solves
    }

    pub fn correction(&self) -> Option<&CorrectionFactors> {
        self.correction.as_ref()
    }

    pub fn last_estimate(&self) -> Option<&EstimatorValues> {
        self.last.as_ref()
    }

    /// Solves per evaluation for the configured method.
    pub fn solves_per_evaluation(&self) -> usize {
        let n = self.probes.as_ref().map_or(0, |p| p.count());
        match self.method {
            Method::Exact => self.loads.ncols(),
            Method::Trace => n,
            Method::DiagCorrected => 2 * n,
        }
    }

    /// Objective value and gradient with respect to `rho`.
    fn objective_in_rho(&mut self, rho: &[f64]) -> Result<(f64, Vec<f64>)> {
        let sys = assemble_and_factorize(self.mesh, rho)?;
        let (value, grad) = match self.method {
            Method::Exact => {
                let (c, u) = exact_responses(self.loads, &sys)?;
                let (value, w) = mean_std_objective(&c, self.multiplier, None)?;
                (value, weighted_adjoint_gradient(&sys, &u, &w)?)
            }
            Method::Trace => {
                let probes = self.probes.as_ref().expect("probes exist for estimators");
                let (mu, g, _) = estimate_mean_and_grad(self.loads, &sys, probes)?;
                self.last = Some(EstimatorValues {
                    objective: mu,
                    mean: mu,
                    diag_stats: None,
                    corrected_mean: None,
                    corrected_std: None,
                });
                (mu, g)
            }
            Method::DiagCorrected => {
                let probes = self.probes.as_ref().expect("probes exist for estimators");
                let (c_hat, cache) = estimate_diag(self.loads, &sys, probes)?;
                let est = stats::stats(&c_hat)?;
                let corr = self.correction.as_ref().expect("computed at construction");
                let (value, w) = mean_std_objective(&c_hat, self.multiplier, Some(corr))?;
                self.last = Some(EstimatorValues {
                    objective: value,
                    mean: est.mu,
                    diag_stats: Some(est),
                    corrected_mean: Some(corr.gamma_mean * est.mu),
                    corrected_std: Some(corr.gamma_std * est.sigma),
                });
                (
                    value,
                    grad_weighted_compliances(&w, &cache, self.loads, &sys)?,
                )
            }
        };
        self.optimization_solves += sys.solve_count();
        Ok((value, grad))
    }
}

impl Problem for StochasticCompliance<'_> {
    fn n_vars(&self) -> usize {
        self.mesh.n_elements()
    }

    fn n_constraints(&self) -> usize {
        1
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        let field = self.chain.forward(x)?;
        let (objective, g_rho) = self.objective_in_rho(&field.rho)?;
        let gradient = self.chain.backprop(&field, &g_rho)?;
        self.evaluations += 1;
        let n = x.len() as f64;
        Ok(Evaluation {
            objective,
            gradient,
            constraints: vec![volume(x) - self.volume_fraction],
            constraint_gradients: vec![vec![1.0 / n; x.len()]],
        })
    }
}

impl ContinuationProblem for StochasticCompliance<'_> {
    fn set_stage(&mut self, penalty: f64, beta: f64) -> Result<()> {
        self.chain.set_parameters(penalty, beta)
    }

    fn solve_count(&self) -> usize {
        self.optimization_solves + self.correction_solves
    }
}

/// Volume fraction of a design, `mean(x)`.
pub fn volume(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

/// Design, densities, per-stage records and report of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ComplianceReport,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub stages: Vec<StageRecord>,
}

/// Runs the continuation optimisation without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mesh = cfg.mesh()?;
    let set = cfg.scenarios(&mesh)?;
    let schedule = cfg.continuation()?;
    let mut problem = StochasticCompliance::new(cfg, &mesh, &set.loads)?;
    let x0 = vec![cfg.volume_fraction; mesh.n_elements()];
    let (x, stages) = continuation_run(&mut problem, &schedule, &cfg.mma, &x0)?;

    let rho = problem.chain().forward(&x)?.rho;
    let sys = assemble_and_factorize(&mesh, &rho)?;
    let (c, _) = exact_responses(&set.loads, &sys)?;
    let exact = stats::stats(&c)?;
    let exact_objective = match cfg.objective {
        ObjectiveKind::Mean => exact.mu,
        ObjectiveKind::MeanStd => exact.mu + cfg.std_multiplier * exact.sigma,
    };

    let solves = SolveAudit {
        optimization: problem.optimization_solves(),
        correction: problem.correction_solves(),
        final_report: sys.solve_count(),
        total: problem.optimization_solves() + problem.correction_solves() + sys.solve_count(),
        predicted_optimization: problem.evaluations() * problem.solves_per_evaluation(),
    };
    let report = ComplianceReport {
        method: cfg.method,
        objective: cfg.objective,
        std_multiplier: cfg.std_multiplier,
        nx: mesh.nx,
        ny: mesh.ny,
        n_scenarios: set.n_scenarios(),
        n_probes: if cfg.method == Method::Exact {
            0
        } else {
            cfg.probes.count
        },
        exact,
        exact_objective,
        per_scenario: c,
        estimate: problem.last_estimate().cloned(),
        correction: problem.correction().map(|c| (c.gamma_mean, c.gamma_std)),
        volume: volume(&x),
        evaluations: problem.evaluations(),
        iterations: stages.iter().map(|s| s.iterations).sum(),
        converged: stages.iter().all(|s| s.converged),
        solves,
        stages: stages.iter().map(StageSummary::from).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        report,
        x,
        rho,
        stages,
    })
}

/// Runs the optimisation and writes the density field, report and
/// convergence history into `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<ComplianceReport> {
    let outcome = execute(cfg)?;
    write_artifacts(&cfg.output_dir, cfg, &outcome)?;
    Ok(outcome.report)
}

pub fn write_artifacts(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (nx, ny) = (cfg.mesh.nx, cfg.mesh.ny);
    fs::write(dir.join("density.pgm"), density_pgm(nx, ny, &outcome.rho))?;

    let mut csv = String::from("element,i,j,x,rho\n");
    for e in 0..outcome.rho.len() {
        let _ = writeln!(
            csv,
            "{e},{},{},{:?},{:?}",
            e / ny,
            e % ny,
            outcome.x[e],
            outcome.rho[e]
        );
    }
    fs::write(dir.join("density.csv"), csv)?;

    let json =
        serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("report.json"), json)?;
    fs::write(dir.join("report.csv"), report_csv(&outcome.report))?;

    let mut hist = String::from("stage,penalty,beta,iteration,objective,max_constraint,kkt,step\n");
    for s in &outcome.stages {
        for h in &s.history {
            let _ = writeln!(
                hist,
                "{},{},{},{},{:?},{:?},{:?},{:?}",
                s.stage,
                s.penalty,
                s.beta,
                h.iteration,
                h.objective,
                h.max_constraint,
                h.kkt,
                h.step
            );
        }
    }
    fs::write(dir.join("history.csv"), hist)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// Plain PGM (P2) image, one pixel per element, top row first;
/// 0 is void and 255 is solid.
pub fn density_pgm(nx: usize, ny: usize, rho: &[f64]) -> String {
    let mut out = format!("P2\n{nx} {ny}\n255\n");
    for j in (0..ny).rev() {
        let row: Vec<String> = (0..nx)
            .map(|i| ((rho[i * ny + j].clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn report_csv(r: &ComplianceReport) -> String {
    let method = match r.method {
        Method::Exact => "exact",
        Method::Trace => "trace",
        Method::DiagCorrected => "diag_corrected",
    };
    let (est_mu, est_sigma) = r
        .estimate
        .as_ref()
        .map_or((String::new(), String::new()), |e| {
            (
                e.corrected_mean.unwrap_or(e.mean).to_string(),
                e.corrected_std.map_or(String::new(), |s| s.to_string()),
            )
        });
    format!(
        "method,mu_exact,sigma_exact,c_max,c_min,mu_approx,sigma_approx,volume,wall_time_s,solves\n\
         {method},{},{},{},{},{est_mu},{est_sigma},{},{},{}\n",
        r.exact.mu, r.exact.sigma, r.exact.c_max, r.exact.c_min, r.volume, r.wall_time_s, r.solves.total
    )
}

/// One line of an accuracy profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    /// `"exact"`, `"hadamard"` or `"rademacher"`.
    pub kind: String,
    pub n: usize,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub mu_exact: f64,
    pub sigma_exact: f64,
}

/// Estimated versus exact statistics for each probe count at the uniform
/// start design. Hadamard counts above the Hadamard order are rejected.
pub fn accuracy_profile(
    cfg: &RunConfig,
    n_list: &[usize],
    kinds: &[ProbeKind],
) -> Result<Vec<ProfileRow>> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let set = cfg.scenarios(&mesh)?;
    let l = set.n_scenarios();
    if kinds.contains(&ProbeKind::Hadamard) {
        if let Some(&n) = n_list.iter().find(|&&n| n > hadamard_order(l)) {
            return Err(Error::Parameter(format!(
                "{n} Hadamard probes requested, order is {}",
                hadamard_order(l)
            )));
        }
    }
    let first = cfg.continuation()?.stages[0];
    let chain = SimpChain::new(
        build_filter(&mesh, cfg.filter_radius)?,
        first.penalty,
        first.beta,
        cfg.x_min,
    )?;
    let rho = chain
        .forward(&vec![cfg.volume_fraction; mesh.n_elements()])?
        .rho;
    let sys = assemble_and_factorize(&mesh, &rho)?;
    let exact = stats::stats(&exact_responses(&set.loads, &sys)?.0)?;
    let mut rows = vec![ProfileRow {
        kind: "exact".into(),
        n: l,
        mu_hat: exact.mu,
        sigma_hat: exact.sigma,
        mu_exact: exact.mu,
        sigma_exact: exact.sigma,
    }];
    for &kind in kinds {
        for &n in n_list {
            let probes = make_probes(kind, l, n, cfg.probes.seed)?;
            let est = stats::stats(&estimate_diag(&set.loads, &sys, &probes)?.0)?;
            rows.push(ProfileRow {
                kind: kind_name(kind).into(),
                n,
                mu_hat: est.mu,
                sigma_hat: est.sigma,
                mu_exact: exact.mu,
                sigma_exact: exact.sigma,
            });
        }
    }
    Ok(rows)
}

fn kind_name(kind: ProbeKind) -> &'static str {
    match kind {
        ProbeKind::Hadamard => "hadamard",
        ProbeKind::Rademacher => "rademacher",
    }
}

pub fn write_profile_csv(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    let mut out = String::from("kind,N,mu_hat,sigma_hat,mu_exact,sigma_exact\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?}",
            r.kind, r.n, r.mu_hat, r.sigma_hat, r.mu_exact, r.sigma_exact
        );
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Default truncated-normal means for ratio histograms.
pub const RATIO_MEANS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Correcting ratios for random density fields at each mean.
pub fn ratio_histograms(
    cfg: &RunConfig,
    means: &[f64],
    n_designs: usize,
    sd: f64,
) -> Result<Vec<(f64, Vec<RatioSample>)>> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let set = cfg.scenarios(&mesh)?;
    let probes = cfg.probing_set(set.n_scenarios())?;
    means
        .iter()
        .map(|&mean| {
            let samples = sample_correcting_ratios(
                &mesh,
                &set.loads,
                &probes,
                &RatioSampling {
                    n_designs,
                    mean,
                    sd,
                    seed: cfg.probes.seed ^ mean.to_bits(),
                    x_min: cfg.x_min,
                },
            )?;
            Ok((mean, samples))
        })
        .collect()
}

/// Writes `ratios_mean_<m>.csv` per mean and returns the paths.
pub fn write_ratio_csvs(
    dir: &Path,
    histograms: &[(f64, Vec<RatioSample>)],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (mean, samples) in histograms {
        let mut out = String::from("design,mean_ratio,std_ratio\n");
        for (k, s) in samples.iter().enumerate() {
            let _ = writeln!(out, "{k},{:?},{:?}", s.mean_ratio, s.std_ratio);
        }
        let path = dir.join(format!("ratios_mean_{mean}.csv"));
        fs::write(&path, out)?;
        paths.push(path);
    }
    Ok(paths)
}
