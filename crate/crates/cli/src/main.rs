use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dsse::estimator::{
    linear_update_complex, mixed_update_rect, write_estimate_rows, Context, MixedOptions,
    ESTIMATE_HEADER,
};
use dsse::feeder::{convert_feeder, FeederOptions};
use dsse::harness::{emit_report, ScenarioConfig};
use dsse::linalg::{CVector, C64};
use dsse::measurement::{
    measurement_covariances, read_frames, simulate_frame, write_frames, MeasurementPlan,
    NoiseModel, PseudoMeasurements, RectCovarianceModel,
};
use dsse::network::{load_network, save_network, NetworkModel, Phase};
use dsse::prior::{fixed_point_power_flow, solve_power_flow, PriorArtifact, SolverConfig};
use dsse::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dsse", version, about = "Distribution-system state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo scenario and write nrmse.csv, timing.csv, summary.json and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the scenario's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequential: bool,
    },
    /// Solve the power flow for given injections.
    Pf {
        #[arg(long)]
        network: PathBuf,
        /// CSV with columns bus,phase,p_pu,q_pu (injections, loads negative).
        /// Omitted: the network's base loads.
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the prior from pseudo-measurements and save it.
    Prior {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        sigma_pseudo: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Update a saved prior with sensor frames.
    Update {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_enum, default_value_t = UpdateMethod::PostNl)]
        method: UpdateMethod,
        #[arg(long, value_enum, default_value_t = RectCov::Circular)]
        rect_covariance: RectCov,
        /// Estimates CSV (t,bus,phase,re_v,im_v,std_v).
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate sensor frames from the power flow of the given injections.
    Frames {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        exact_noise: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert IEEE feeder CSV tables into a network JSON file.
    ConvertFeeder {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "150")]
        source_bus: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateMethod {
    /// Synchronized phasors only, complex linear update.
    Post,
    /// Phasors and magnitudes, rectangular update.
    #[value(name = "postNL")]
    PostNl,
}

#[derive(Clone, Copy, ValueEnum)]
enum RectCov {
    Coupled,
    Circular,
}

enum Status {
    Ok,
    Partial,
}

fn read_injections(path: &Path, net: &NetworkModel) -> Result<CVector> {
    let map = net.phase_index_map();
    let mut s = CVector::zeros(map.n_state());
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for (line, rec) in r.records().enumerate() {
        let bad = |msg: String| Error::Parse {
            what: format!("{} line {}", path.display(), line + 2),
            message: msg,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad("expected bus,phase,p_pu,q_pu".into()));
        }
        let phase: Phase = rec[1].parse()?;
        let p: f64 = rec[2].parse().map_err(|e| bad(format!("p_pu: {e}")))?;
        let q: f64 = rec[3].parse().map_err(|e| bad(format!("q_pu: {e}")))?;
        let k = map
            .state_index(&rec[0], phase)
            .ok_or_else(|| bad(format!("{}.{phase} is not a state entry", &rec[0])))?;
        s[k] += C64::new(p, q);
    }
    Ok(s)
}

fn injections(loads: Option<&Path>, net: &NetworkModel) -> Result<CVector> {
    match loads {
        Some(p) => read_injections(p, net),
        None => net
            .base_loads()
            .ok_or_else(|| Error::Config("network has no base loads; pass --loads".into())),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn execute(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            sequential,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.settings.seed = s;
            }
            if sequential {
                cfg.settings.execution = dsse::parallel::Execution::Sequential;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out".into()))?;
            let report = cfg.run()?;
            for p in emit_report(&report, &out)? {
                log::info!("wrote {}", p.display());
            }
            eprintln!(
                "{} steps x {} trials in {:.1} s, {} failures",
                report.settings.steps,
                report.settings.trials,
                report.total_secs,
                report.failures.len()
            );
            Ok(if report.is_partial() { Status::Partial } else { Status::Ok })
        }
        Command::Pf { network, loads, out } => {
            let net = load_network(&network)?;
            let ctx = Context::new(&net)?;
            let s = injections(loads.as_deref(), &net)?;
            let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &SolverConfig::default())?;
            let mut text = String::from("bus,phase,re_v,im_v,abs_v\n");
            for (k, bp) in ctx.map().state_entries().iter().enumerate() {
                let v = pf.v[k];
                text.push_str(&format!("{},{},{:e},{:e},{:e}\n", bp.bus, bp.phase, v.re, v.im, v.norm()));
            }
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
            eprintln!(
                "{} iterations, mismatch {:.2e}, converged {}",
                pf.iterations, pf.mismatch, pf.converged
            );
            Ok(if pf.converged { Status::Ok } else { Status::Partial })
        }
        Command::Prior {
            network,
            loads,
            sigma_pseudo,
            out,
        } => {
            let net = load_network(&network)?;
            let ctx = Context::new(&net)?;
            let s = injections(loads.as_deref(), &net)?;
            let pseudo = PseudoMeasurements::new(s, sigma_pseudo, &ctx.eps)?;
            let est = fixed_point_power_flow(&ctx.adm, &ctx.v_source, &pseudo, &ctx.eps, &SolverConfig::default())?;
            PriorArtifact::new(&net, &est, sigma_pseudo).save(&out)?;
            eprintln!("prior after {} iterations, converged {}", est.iterations, est.converged);
            Ok(if est.converged { Status::Ok } else { Status::Partial })
        }
        Command::Update {
            network,
            prior,
            plan,
            frames,
            method,
            rect_covariance,
            out,
        } => {
            let net = load_network(&network)?;
            let ctx = Context::new(&net)?;
            let prior = PriorArtifact::load(&prior)?.to_estimate(&net)?;
            let plan = MeasurementPlan::load(&plan)?.compile(&ctx.adm, &ctx.v_source)?;
            let frames = read_frames(&frames, &plan)?;
            let rect = match rect_covariance {
                RectCov::Coupled => RectCovarianceModel::Coupled,
                RectCov::Circular => RectCovarianceModel::Circular,
            };
            let mut w = csv::Writer::from_path(&out)
                .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            w.write_record(ESTIMATE_HEADER)
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut failures = Vec::new();
            for f in &frames {
                let covs = measurement_covariances(&plan, f, rect)?;
                let est = match method {
                    UpdateMethod::Post => {
                        linear_update_complex(&ctx, &prior, &plan.linear, &f.z_lin, &covs.lin_matrix())
                    }
                    UpdateMethod::PostNl => {
                        mixed_update_rect(&ctx, &prior, &plan, f, &covs, &MixedOptions::default())
                    }
                };
                match est {
                    Ok(e) => write_estimate_rows(&mut w, f.t, ctx.map(), &e)?,
                    Err(e) if frames.len() > 1 && e.is_numerical() => {
                        log::warn!("t={}: {e}", f.t);
                        failures.push(json!({"t": f.t, "error": e.to_string()}));
                    }
                    Err(e) => return Err(e),
                }
            }
            w.flush().map_err(|e| Error::Io { path: out.clone(), source: e })?;
            eprintln!(
                "{}",
                json!({"frames": frames.len(), "failed": failures.len(), "failures": failures})
            );
            Ok(if failures.is_empty() { Status::Ok } else { Status::Partial })
        }
        Command::Frames {
            network,
            plan,
            loads,
            steps,
            seed,
            exact_noise,
            out,
        } => {
            let net = load_network(&network)?;
            let ctx = Context::new(&net)?;
            let plan = MeasurementPlan::load(&plan)?.compile(&ctx.adm, &ctx.v_source)?;
            let s = injections(loads.as_deref(), &net)?;
            let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &SolverConfig::default())?;
            let model = if exact_noise { NoiseModel::ExactPolar } else { NoiseModel::Linearized };
            let frames = (0..steps)
                .map(|t| simulate_frame(&plan, &pf.v, t, 0, seed, model))
                .collect::<Result<Vec<_>>>()?;
            write_frames(&out, &plan, &frames)?;
            Ok(if pf.converged { Status::Ok } else { Status::Partial })
        }
        Command::ConvertFeeder {
            input,
            out,
            source_bus,
        } => {
            let opts = FeederOptions {
                source_bus,
                ..FeederOptions::default()
            };
            let net = convert_feeder(&input, &opts)?;
            save_network(&net, &out)?;
            eprintln!(
                "{} buses, {} lines, {} state entries, {} zero-injection",
                net.buses.len(),
                net.lines.len(),
                net.n_state(),
                net.zero_injection_indices().len()
            );
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
