//! Monte-Carlo comparison of the prior, the Bayesian updates and the WLS baselines.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    linear_update_complex, mixed_update_rect, wls_subspace, Context, MixedOptions, SensorData,
};
use crate::harness::metrics::nrmse;
use crate::harness::profile::{generate_profiles, true_injections};
use crate::measurement::{
    measurement_covariances, simulate_frame, CompiledPlan, MeasurementPlan, NoiseModel,
    PseudoMeasurements, RectCovarianceModel,
};
use crate::network::{load_network, NetworkModel};
use crate::parallel::Execution;
use crate::prior::{fixed_point_power_flow, solve_power_flow, SolverConfig, StateEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "prior")]
    Prior,
    #[serde(rename = "post")]
    Post,
    #[serde(rename = "postNL")]
    PostNl,
    #[serde(rename = "WLS")]
    Wls,
    #[serde(rename = "WLSNL")]
    WlsNl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Prior,
        Method::Post,
        Method::PostNl,
        Method::Wls,
        Method::WlsNl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Prior => "prior",
            Method::Post => "post",
            Method::PostNl => "postNL",
            Method::Wls => "WLS",
            Method::WlsNl => "WLSNL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Everything about a run except the network and the sensor plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub sigma_pseudo: f64,
    /// Overrides the plan's `sigma_meas` when set.
    pub sigma_meas: Option<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub noise_model: NoiseModel,
    pub rect_covariance: RectCovarianceModel,
    pub execution: Execution,
    pub mixed_linearizations: usize,
    pub solver: SolverConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            steps: 96,
            trials: 10,
            seed: 0,
            sigma_pseudo: 0.5,
            sigma_meas: None,
            methods: default_methods(),
            noise_model: NoiseModel::Linearized,
            rect_covariance: RectCovarianceModel::default(),
            execution: Execution::Parallel,
            mixed_linearizations: 1,
            solver: SolverConfig::default(),
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.steps == 0 || self.trials == 0 {
            return Err(Error::Config("steps and trials must be positive".into()));
        }
        if !(self.sigma_pseudo > 0.0) {
            return Err(Error::Config("sigma_pseudo must be positive".into()));
        }
        if let Some(s) = self.sigma_meas {
            if !(s >= 0.0) {
                return Err(Error::Config("sigma_meas must be non-negative".into()));
            }
        }
        if !(1..=crate::estimator::MAX_RELINEARIZATIONS).contains(&self.mixed_linearizations) {
            return Err(Error::Config(format!(
                "mixed_linearizations must be between 1 and {}",
                crate::estimator::MAX_RELINEARIZATIONS
            )));
        }
        Ok(())
    }
}

/// Scenario file: network and plan paths (relative to the file) plus settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub network: PathBuf,
    pub plan: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: RunSettings,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse("scenario JSON", e))?;
        reject_unknown_keys(&value)?;
        let mut cfg: ScenarioConfig =
            serde_json::from_value(value).map_err(|e| Error::parse("scenario JSON", e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.network = dir.join(&cfg.network);
        cfg.plan = dir.join(&cfg.plan);
        if let Some(out) = cfg.output_dir.as_mut() {
            *out = dir.join(&*out);
        }
        cfg.settings.validate()?;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<RunReport> {
        let net = load_network(&self.network)?;
        let plan = MeasurementPlan::load(&self.plan)?;
        run_scenario(&net, &plan, &self.settings)
    }
}

/// `deny_unknown_fields` does not see through `flatten`, so keys are checked here.
fn reject_unknown_keys(value: &serde_json::Value) -> Result<()> {
    let Some(obj) = value.as_object() else {
        return Ok(());
    };
    let settings = serde_json::to_value(RunSettings::default()).expect("settings serialize");
    let known = |k: &str| {
        matches!(k, "network" | "plan" | "output_dir")
            || settings.as_object().is_some_and(|s| s.contains_key(k))
    };
    match obj.keys().find(|k| !known(k)) {
        Some(k) => Err(Error::Config(format!("unknown scenario field `{k}`"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialFailure {
    pub t: usize,
    pub trial: usize,
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub settings: RunSettings,
    pub n_state: usize,
    pub n_constrained: usize,
    /// Indexed `[method][t * trials + trial]`, methods in settings order.
    pub nrmse: Vec<Vec<Option<f64>>>,
    /// Seconds per estimate; for the prior this is the offline power flow.
    pub timing: Vec<Vec<Option<f64>>>,
    pub failures: Vec<TrialFailure>,
    pub prior_unconverged_steps: Vec<usize>,
    pub total_secs: f64,
}

impl RunReport {
    pub fn methods(&self) -> &[Method] {
        &self.settings.methods
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    fn column(&self, method: Method, data: &[Vec<Option<f64>>]) -> Vec<f64> {
        self.methods()
            .iter()
            .position(|&m| m == method)
            .map(|k| data[k].iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    /// Successful nRMSE values of one method.
    pub fn nrmse_of(&self, method: Method) -> Vec<f64> {
        self.column(method, &self.nrmse)
    }

    pub fn timing_of(&self, method: Method) -> Vec<f64> {
        self.column(method, &self.timing)
    }
}

struct StepPrior {
    pseudo: PseudoMeasurements,
    prior: Result<StateEstimate>,
    secs: f64,
}

type Cell = (Option<f64>, Option<f64>, Option<String>);

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_secs_f64())
}

/// Runs all `(step, trial)` pairs. Per-trial numerical failures are recorded
/// and the run continues; setup errors abort it.
pub fn run_scenario(
    net: &NetworkModel,
    plan: &MeasurementPlan,
    settings: &RunSettings,
) -> Result<RunReport> {
    settings.validate()?;
    let start = Instant::now();
    let ctx = Context::new(net)?;
    let base = net
        .base_loads()
        .ok_or_else(|| Error::Config("network has no base loads to build profiles from".into()))?;
    let mut plan = plan.clone();
    if let Some(s) = settings.sigma_meas {
        plan.sigma_meas = s;
    }
    let compiled = plan.compile(&ctx.adm, &ctx.v_source)?;
    let profiles = generate_profiles(&base, settings.steps);
    let exec = settings.execution;

    let priors: Vec<StepPrior> = {
        let mut out = Vec::with_capacity(settings.steps);
        for s in &profiles {
            out.push(PseudoMeasurements::new(s.clone(), settings.sigma_pseudo, &ctx.eps)?);
        }
        let computed = exec.map_range(settings.steps, |t| {
            let (prior, secs) = timed(|| {
                fixed_point_power_flow(
                    &ctx.adm,
                    &ctx.v_source,
                    &out[t],
                    &ctx.eps,
                    &settings.solver,
                )
            });
            (prior, secs)
        });
        out.into_iter()
            .zip(computed)
            .map(|(pseudo, (prior, secs))| StepPrior { pseudo, prior, secs })
            .collect()
    };
    let prior_unconverged_steps = priors
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(&p.prior, Ok(e) if !e.converged))
        .map(|(t, _)| t)
        .collect();

    let trials = settings.trials;
    let cells: Vec<Vec<Cell>> = exec.map_range(settings.steps * trials, |idx| {
        let (t, trial) = (idx / trials, idx % trials);
        run_trial(&ctx, &compiled, settings, &priors[t], &profiles[t], t, trial)
    });

    let n_methods = settings.methods.len();
    let mut nrmse_out = vec![Vec::with_capacity(cells.len()); n_methods];
    let mut timing_out = vec![Vec::with_capacity(cells.len()); n_methods];
    let mut failures = Vec::new();
    for (idx, row) in cells.into_iter().enumerate() {
        for (k, (e, secs, err)) in row.into_iter().enumerate() {
            nrmse_out[k].push(e);
            timing_out[k].push(secs);
            if let Some(message) = err {
                failures.push(TrialFailure {
                    t: idx / trials,
                    trial: idx % trials,
                    method: Some(settings.methods[k]),
                    message,
                });
            }
        }
    }
    if !failures.is_empty() {
        log::warn!("{} estimates failed; see the report for details", failures.len());
    }
    Ok(RunReport {
        settings: settings.clone(),
        n_state: ctx.n_state(),
        n_constrained: ctx.eps.len(),
        nrmse: nrmse_out,
        timing: timing_out,
        failures,
        prior_unconverged_steps,
        total_secs: start.elapsed().as_secs_f64(),
    })
}

fn run_trial(
    ctx: &Context,
    plan: &CompiledPlan,
    settings: &RunSettings,
    step: &StepPrior,
    forecast: &crate::linalg::CVector,
    t: usize,
    trial: usize,
) -> Vec<Cell> {
    let fail_all = |msg: String| -> Vec<Cell> {
        settings.methods.iter().map(|_| (None, None, Some(msg.clone()))).collect()
    };
    let prior = match &step.prior {
        Ok(p) => p,
        Err(e) => return fail_all(format!("prior: {e}")),
    };
    let s_true = true_injections(forecast, settings.sigma_pseudo, settings.seed, t, trial);
    let truth = match solve_power_flow(&ctx.adm, &ctx.v_source, &s_true, &ctx.eps, &settings.solver) {
        Ok(pf) if pf.converged => pf.v,
        Ok(pf) => return fail_all(format!("true power flow did not converge (mismatch {:e})", pf.mismatch)),
        Err(e) => return fail_all(format!("true power flow: {e}")),
    };
    let frame = match simulate_frame(plan, &truth, t, trial, settings.seed, settings.noise_model) {
        Ok(f) => f,
        Err(e) => return fail_all(format!("frame: {e}")),
    };
    let covs = match measurement_covariances(plan, &frame, settings.rect_covariance) {
        Ok(c) => c,
        Err(e) => return fail_all(format!("measurement covariance: {e}")),
    };
    let mixed = MixedOptions {
        linearizations: settings.mixed_linearizations,
        ..MixedOptions::default()
    };
    let sensors = |nonlinear| SensorData {
        plan,
        frame: &frame,
        covs: &covs,
        nonlinear,
    };
    settings
        .methods
        .iter()
        .map(|&m| {
            let (est, secs) = match m {
                Method::Prior => (Ok(prior.clone()), step.secs),
                Method::Post => timed(|| {
                    linear_update_complex(ctx, prior, &plan.linear, &frame.z_lin, &covs.lin_matrix())
                }),
                Method::PostNl => timed(|| mixed_update_rect(ctx, prior, plan, &frame, &covs, &mixed)),
                Method::Wls => timed(|| {
                    wls_subspace(ctx, &step.pseudo, Some(sensors(false)), &prior.v, &settings.solver)
                }),
                Method::WlsNl => timed(|| {
                    wls_subspace(ctx, &step.pseudo, Some(sensors(true)), &prior.v, &settings.solver)
                }),
            };
            match est {
                Ok(e) => (Some(nrmse(&e.v, &truth, 1.0)), Some(secs), None),
                Err(e) => (None, None, Some(e.to_string())),
            }
        })
        .collect()
}
