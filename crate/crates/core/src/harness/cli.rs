//! Command-line front end.
//!
//! Every command renders its full output in memory first, so a failed run
//! never leaves a partial file behind. Exit codes: 0 success, 1 bad input
//! or usage, 2 numerical failure.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::{DetectorKind, DetectorSection, ExperimentConfig};
use super::experiments::{
    attack_experiment, boundedness_experiment, ratio_sweep, table1, write_boundedness_csv,
    write_ratio_csv, AttackSettings, Table1Settings,
};
use super::montecarlo::{estimate_false_alarm_rate, simulate_stream, FalseAlarmEstimate};
use super::output::{fmt_sig, write_csv_preamble};
use super::HarnessError;
use crate::attacks::{split_error_trajectories, steady_state_gain, worst_case_direction};
use crate::detectors::write_stream_csv;
use crate::numerics::{contraction_norm, matrix_to_rows, op_norm2};
use crate::plant::{design_filter, KalmanDesign, LtiModel};
use crate::tuning::{
    bias_lower_bound, chi2_threshold, solve_cusum_threshold, DEFAULT_PARTITIONS, DEFAULT_RATE_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "cps-detect",
    version,
    about = "CUSUM and chi-squared residual detectors: tuning, simulation, zero-alarm attacks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment file with [model], [detector], [attack], [run].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bisect the CUSUM threshold for a target false-alarm rate.
    TuneCusum {
        /// Output dimension; defaults to the model's.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, conflicts_with = "b_factor")]
        b: Option<f64>,
        /// Bias as a multiple of m.
        #[arg(long)]
        b_factor: Option<f64>,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = DEFAULT_PARTITIONS)]
        partitions: usize,
        #[arg(long, default_value_t = DEFAULT_RATE_TOL)]
        tol: f64,
    },
    /// Chi-squared threshold for a target false-alarm rate.
    TuneChi2 {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        rate: f64,
    },
    /// Monte Carlo false-alarm estimate, or an attacked run when the config
    /// has an [attack] section.
    Simulate {
        #[command(flatten)]
        det: DetectorFlags,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        warm_up: Option<usize>,
        /// Emit the per-step detector stream of the first trial instead.
        #[arg(long)]
        stream: bool,
    },
    /// CUSUM without resets for several biases on one residual stream.
    Boundedness {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.85, 1.0, 1.05, 2.0])]
        factors: Vec<f64>,
        #[arg(long, default_value_t = 5000)]
        horizon: usize,
        #[arg(long)]
        warm_up: Option<usize>,
    },
    /// Zero-alarm attacks on both detectors along both directions.
    Attack {
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        k_star: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        /// Also write the bound envelopes as CSV here.
        #[arg(long)]
        envelope_out: Option<PathBuf>,
    },
    /// Threshold and simulated false-alarm rate for the benchmark grid.
    Table1 {
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_PARTITIONS)]
        partitions: usize,
        /// Detector steps per trial.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Tune only.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Asymptotic bound ratio sqrt(alpha / b) over bias and rate grids.
    RatioSweep {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.05, 1.25, 1.5, 2.0, 2.5, 3.0])]
        factors: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5])]
        rates: Vec<f64>,
    },
    /// Filter design and norm constants of the configured model.
    ReactorInfo,
}

#[derive(Debug, Args)]
struct DetectorFlags {
    #[arg(long, value_enum)]
    kind: Option<KindFlag>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Tune the threshold to this rate.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindFlag {
    Cusum,
    Chi2,
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = match &cli.common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    let format = cli.common.format;
    let seed = cli.common.seed.unwrap_or(cfg.run().seed);
    let out_path = cli.common.out.clone().or_else(|| cfg.run().output);
    let mut buf = Vec::new();

    match &cli.command {
        Command::TuneCusum {
            m,
            b,
            b_factor,
            rate,
            partitions,
            tol,
        } => {
            let m = resolve_m(*m, &cfg)?;
            let b = match (b, b_factor) {
                (Some(b), None) => *b,
                (None, Some(f)) => f * bias_lower_bound(m),
                _ => return Err(HarnessError::Config("give --b or --b-factor".into())),
            };
            let res = solve_cusum_threshold(m, b, *rate, *partitions, *tol)?;
            match format {
                Format::Json => json(&mut buf, &res)?,
                Format::Csv => {
                    write_csv_preamble(&mut buf, "tune-cusum")?;
                    writeln!(
                        buf,
                        "m,b,tau,target_rate,approx_rate,N,iterations,strict_bias"
                    )?;
                    writeln!(
                        buf,
                        "{},{},{},{},{},{},{},{}",
                        res.m,
                        fmt_sig(res.b),
                        fmt_sig(res.tau),
                        fmt_sig(res.target_rate),
                        fmt_sig(res.achieved_approx_rate),
                        res.n,
                        res.iterations,
                        res.strict_bias
                    )?;
                }
            }
        }
        Command::TuneChi2 { m, rate } => {
            let m = resolve_m(*m, &cfg)?;
            let alpha = chi2_threshold(m, *rate)?;
            match format {
                Format::Json => json(
                    &mut buf,
                    &serde_json::json!({ "m": m, "targetRate": rate, "alpha": alpha }),
                )?,
                Format::Csv => {
                    write_csv_preamble(&mut buf, "tune-chi2")?;
                    writeln!(buf, "m,target_rate,alpha")?;
                    writeln!(buf, "{m},{},{}", fmt_sig(*rate), fmt_sig(alpha))?;
                }
            }
        }
        Command::Simulate {
            det,
            horizon,
            trials,
            warm_up,
            stream,
        } => {
            let model = cfg.build_model()?;
            let design = design_filter(&model)?;
            let mut cfg = cfg.clone();
            if let Some(kind) = det.kind {
                cfg.detector = Some(DetectorSection {
                    kind: match kind {
                        KindFlag::Cusum => DetectorKind::Cusum,
                        KindFlag::Chi2 => DetectorKind::Chi2,
                    },
                    b: det.b,
                    tau: det.tau,
                    alpha: det.alpha,
                    target_rate: det.rate,
                    partitions: None,
                });
            } else if det.b.is_some()
                || det.tau.is_some()
                || det.alpha.is_some()
                || det.rate.is_some()
            {
                return Err(HarnessError::Config("detector flags need --kind".into()));
            }
            let resolved = cfg.resolve_detector(model.m())?;
            let mut run = cfg.run_settings();
            run.seed = seed;
            run.horizon = horizon.unwrap_or(run.horizon);
            run.trials = trials.unwrap_or(run.trials);
            run.warm_up_steps = warm_up.unwrap_or(run.warm_up_steps);
            run.validate()?;

            if let Some(plan) = cfg.attack_plan(&model, &design, resolved.config)? {
                let t = split_error_trajectories(&model, &design, &plan, run.horizon, seed)?;
                match format {
                    Format::Csv => t.write_csv(&mut buf)?,
                    Format::Json => {
                        let (worst, ok) = t.bound_check(super::experiments::BOUND_SLACK);
                        json(
                            &mut buf,
                            &serde_json::json!({
                                "kStar": t.k_star,
                                "alarmsAfterStart": t.alarms_after_start,
                                "maxBoundRatio": worst,
                                "boundHolds": ok,
                                "diverged": t.diverged,
                                "asymptote": t.envelope.as_ref().map(|e| e.asymptote),
                            }),
                        )?
                    }
                }
            } else if *stream {
                let records = simulate_stream(&model, &design, resolved.config, &run)?;
                match format {
                    Format::Csv => {
                        write_csv_preamble(&mut buf, "detector-stream")?;
                        write_stream_csv(&mut buf, &records)?;
                    }
                    Format::Json => {
                        let rows: Vec<_> = records
                            .iter()
                            .map(|r| serde_json::json!({ "k": r.k, "z": r.z, "S": r.s, "alarm": r.alarm }))
                            .collect();
                        json(&mut buf, &rows)?
                    }
                }
            } else {
                let est = estimate_false_alarm_rate(&model, &design, resolved.config, &run)?;
                match format {
                    Format::Json => json(
                        &mut buf,
                        &serde_json::json!({
                            "detector": resolved.config,
                            "tuning": resolved.tuning,
                            "run": run,
                            "estimate": est,
                        }),
                    )?,
                    Format::Csv => {
                        write_csv_preamble(&mut buf, "false-alarm")?;
                        write_estimate_csv(&mut buf, &est)?;
                    }
                }
            }
        }
        Command::Boundedness {
            factors,
            horizon,
            warm_up,
        } => {
            let model = cfg.build_model()?;
            let design = design_filter(&model)?;
            let warm = warm_up.unwrap_or(cfg.run().warm_up_steps);
            let traces = boundedness_experiment(&model, &design, factors, *horizon, warm, seed)?;
            match format {
                Format::Csv => write_boundedness_csv(&mut buf, &traces)?,
                Format::Json => {
                    let rows: Vec<_> = traces
                        .iter()
                        .map(|t| {
                            serde_json::json!({
                                "biasFactor": t.bias_factor,
                                "b": t.b,
                                "terminalS": t.s.last(),
                                "maxS": t.s.iter().cloned().fold(0.0, f64::max),
                                "driftBoundary": t.drift_boundary,
                            })
                        })
                        .collect();
                    json(&mut buf, &rows)?
                }
            }
        }
        Command::Attack {
            b,
            tau,
            alpha,
            k_star,
            horizon,
            envelope_out,
        } => {
            let model = cfg.build_model()?;
            let design = design_filter(&model)?;
            let d = AttackSettings::reactor_default();
            let settings = AttackSettings {
                b: b.unwrap_or(d.b),
                tau: tau.unwrap_or(d.tau),
                alpha: alpha.unwrap_or(d.alpha),
                k_star: k_star.unwrap_or(d.k_star),
                horizon: horizon.unwrap_or(d.horizon),
                seed,
            };
            let exp = attack_experiment(&model, &design, settings)?;
            let mut envelope = Vec::new();
            exp.write_envelope_csv(&mut envelope)?;
            match format {
                Format::Csv => exp.write_trajectory_csv(&mut buf)?,
                Format::Json => json(&mut buf, &exp.summary())?,
            }
            if let Some(p) = envelope_out {
                emit(Some(p), &envelope)?;
            }
        }
        Command::Table1 {
            factors,
            rates,
            partitions,
            steps,
            trials,
            no_simulate,
        } => {
            let model = cfg.build_model()?;
            let design = design_filter(&model)?;
            let d = Table1Settings::default();
            let mut run = cfg.run_settings();
            run.seed = seed;
            run.horizon = steps.unwrap_or(run.horizon);
            run.trials = trials.unwrap_or(run.trials);
            let settings = Table1Settings {
                bias_factors: factors.clone().unwrap_or(d.bias_factors),
                rates: rates.clone().unwrap_or(d.rates),
                partitions: *partitions,
                rate_tol: d.rate_tol,
                run,
                simulate: !no_simulate,
            };
            let t = table1(&model, &design, &settings)?;
            match format {
                Format::Csv => t.write_csv(&mut buf)?,
                Format::Json => json(&mut buf, &t)?,
            }
        }
        Command::RatioSweep { m, factors, rates } => {
            let m = resolve_m(*m, &cfg)?;
            let rows = ratio_sweep(m, factors, rates)?;
            match format {
                Format::Csv => write_ratio_csv(&mut buf, &rows)?,
                Format::Json => json(&mut buf, &rows)?,
            }
        }
        Command::ReactorInfo => {
            let model = cfg.build_model()?;
            let design = design_filter(&model)?;
            let info = model_info(&model, &design)?;
            match format {
                Format::Json => json(&mut buf, &info)?,
                Format::Csv => {
                    write_csv_preamble(&mut buf, "reactor-info")?;
                    writeln!(buf, "quantity,value")?;
                    for (k, v) in [
                        ("spectral_radius", info.spectral_radius),
                        ("condition_number", info.condition_number),
                        ("star_norm_of_f", info.star_norm_of_f),
                        ("l_sigma_sqrt_norm", info.l_sigma_sqrt_norm),
                        ("steady_state_gain_norm", info.steady_state_gain_norm),
                    ] {
                        writeln!(buf, "{k},{}", fmt_sig(v))?;
                    }
                    for (name, mat) in [("P", &info.p), ("L", &info.l), ("Sigma", &info.sigma)] {
                        for (i, row) in mat.iter().enumerate() {
                            for (j, v) in row.iter().enumerate() {
                                writeln!(buf, "{name}({},{}),{}", i + 1, j + 1, fmt_sig(*v))?;
                            }
                        }
                    }
                    for (i, v) in info.worst_case_direction.iter().enumerate() {
                        writeln!(buf, "worst_case_direction({}),{}", i + 1, fmt_sig(*v))?;
                    }
                }
            }
        }
    }
    emit(out_path.as_ref(), &buf)
}

fn resolve_m(flag: Option<usize>, cfg: &ExperimentConfig) -> Result<usize, HarnessError> {
    match flag {
        Some(0) => Err(HarnessError::Config("--m must be at least 1".into())),
        Some(m) => Ok(m),
        None => Ok(cfg.build_model()?.m()),
    }
}

fn json<T: Serialize>(buf: &mut Vec<u8>, value: &T) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(&mut *buf, value).map_err(|e| HarnessError::Io(e.to_string()))?;
    buf.push(b'\n');
    Ok(())
}

fn emit(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn write_estimate_csv(buf: &mut Vec<u8>, est: &FalseAlarmEstimate) -> std::io::Result<()> {
    writeln!(
        buf,
        "rate_by_count,rate_by_run_length,stderr,total_steps,alarms,mean_run_length"
    )?;
    writeln!(
        buf,
        "{},{},{},{},{},{}",
        fmt_sig(est.rate_by_count),
        fmt_sig(est.rate_by_run_length),
        fmt_sig(est.stderr),
        est.total_steps,
        est.alarms,
        fmt_sig(est.mean_run_length)
    )
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ModelInfo {
    n: usize,
    m: usize,
    l_inputs: usize,
    p: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    spectral_radius: f64,
    condition_number: f64,
    star_norm_of_f: f64,
    l_sigma_sqrt_norm: f64,
    steady_state_gain_norm: f64,
    worst_case_direction: Vec<f64>,
}

fn model_info(model: &LtiModel, design: &KalmanDesign) -> Result<ModelInfo, HarnessError> {
    let norm = contraction_norm(model.f())?;
    let gain = steady_state_gain(model, design)?;
    Ok(ModelInfo {
        n: model.n(),
        m: model.m(),
        l_inputs: model.l(),
        p: matrix_to_rows(&design.p),
        l: matrix_to_rows(&design.l),
        sigma: matrix_to_rows(&design.sigma),
        spectral_radius: norm.spectral_radius,
        condition_number: norm.condition_number,
        star_norm_of_f: norm.star_norm_of_f,
        l_sigma_sqrt_norm: op_norm2(&(&design.l * &design.sigma_sqrt)),
        steady_state_gain_norm: op_norm2(&gain),
        worst_case_direction: worst_case_direction(model, design)?
            .iter()
            .copied()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_failures_are_usage_errors() {
        assert_eq!(cli_main(["cps-detect", "--bogus"]), 1);
        assert_eq!(cli_main(["cps-detect"]), 1);
        assert_eq!(cli_main(["cps-detect", "tune-chi2"]), 1);
        assert_eq!(cli_main(["cps-detect", "--help"]), 0);
    }

    #[test]
    fn validation_and_numeric_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.csv");
        let out_s = out.to_str().unwrap();
        assert_eq!(
            cli_main(["cps-detect", "tune-chi2", "--rate", "1.5", "--out", out_s]),
            1
        );
        assert!(!out.exists());
        assert_eq!(
            cli_main([
                "cps-detect",
                "tune-chi2",
                "--m",
                "3",
                "--rate",
                "0.02",
                "--out",
                out_s
            ]),
            0
        );
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("3,0.02,9.83"));
    }
}
