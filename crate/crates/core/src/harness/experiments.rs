//! Benchmark reproductions: CUSUM boundedness, zero-alarm attacks, the
//! asymptotic bound ratio surface, and the threshold/false-alarm table.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use super::montecarlo::{estimate_false_alarm_rate, FalseAlarmEstimate, RunSettings};
use super::output::{fmt_sig, write_csv_preamble};
use super::HarnessError;
use crate::attacks::{split_error_trajectories, AttackPlan, DirectionKind, SplitTrajectories};
use crate::detectors::{Chi2Config, CusumConfig, CusumState, DetectorConfig};
use crate::numerics::{regularized_upper_gamma, Vector};
use crate::plant::{warm_up, KalmanDesign, LtiModel};
use crate::tuning::{
    bias_lower_bound, chi2_threshold, drift_boundary, solve_cusum_threshold, TuningError,
};

/// CUSUM path without resets for one bias.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundednessTrace {
    pub bias_factor: f64,
    pub b: f64,
    /// `S_k` for `k = 1..=horizon` (`S_1 = 0`).
    pub s: Vec<f64>,
    /// `None` when `b <= m`.
    pub drift_boundary: Option<f64>,
}

/// Runs the reset-free CUSUM with `b = factor * m` for every factor over one
/// shared residual stream of `horizon - 1` distance values after warm-up.
pub fn boundedness_experiment(
    model: &LtiModel,
    design: &KalmanDesign,
    bias_factors: &[f64],
    horizon: usize,
    warm_up_steps: usize,
    seed: u64,
) -> Result<Vec<BoundednessTrace>, HarnessError> {
    if horizon < 1 {
        return Err(HarnessError::Config("horizon must be at least 1".into()));
    }
    if let Some(f) = bias_factors.iter().find(|f| !(**f > 0.0)) {
        return Err(HarnessError::Config(format!(
            "bias factor {f} must be positive"
        )));
    }
    let m = model.m();
    let mut state = warm_up(model, design, warm_up_steps, seed)?;
    let u = Vector::zeros(model.l());
    let delta = Vector::zeros(m);
    let zs: Vec<f64> = (1..horizon)
        .map(|_| Ok(state.step(model, design, &u, &delta)?.z))
        .collect::<Result<_, HarnessError>>()?;

    bias_factors
        .iter()
        .map(|&factor| {
            let b = factor * bias_lower_bound(m);
            let cfg = CusumConfig::new(b, f64::MAX, m)?.without_reset();
            let mut st = CusumState::default();
            let mut s = Vec::with_capacity(horizon);
            s.push(st.s);
            for &z in &zs {
                s.push(st.update(&cfg, z)?.s);
            }
            Ok(BoundednessTrace {
                bias_factor: factor,
                b,
                s,
                drift_boundary: drift_boundary(b, m).ok(),
            })
        })
        .collect()
}

/// `k, S_<factor>...` with one column per trace.
pub fn write_boundedness_csv<W: Write>(mut out: W, traces: &[BoundednessTrace]) -> io::Result<()> {
    write_csv_preamble(&mut out, "boundedness")?;
    let mut header = vec!["k".to_string()];
    header.extend(
        traces
            .iter()
            .map(|t| format!("S_b{}", fmt_sig(t.bias_factor))),
    );
    writeln!(out, "{}", header.join(","))?;
    let len = traces.iter().map(|t| t.s.len()).max().unwrap_or(0);
    for i in 0..len {
        let mut row = vec![(i + 1).to_string()];
        row.extend(
            traces
                .iter()
                .map(|t| t.s.get(i).map(|&v| fmt_sig(v)).unwrap_or_default()),
        );
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parameters of the zero-alarm attack comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackSettings {
    pub b: f64,
    pub tau: f64,
    pub alpha: f64,
    pub k_star: u64,
    /// Last simulated step; the attack is active on `k* ..= horizon`.
    pub horizon: u64,
    pub seed: u64,
}

impl AttackSettings {
    /// Both detectors tuned to a 2% false-alarm rate on the reactor:
    /// `b = 2m = 6`, `tau = 4.1002`, `alpha = alpha*(3, 0.02)`.
    pub fn reactor_default() -> Self {
        Self {
            b: 6.0,
            tau: 4.1002,
            alpha: chi2_threshold(3, 0.02).expect("valid constants"),
            k_star: crate::attacks::DEFAULT_ATTACK_START,
            horizon: 6000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub detector: &'static str,
    pub direction: &'static str,
    pub trajectories: SplitTrajectories,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackRunSummary {
    pub detector: &'static str,
    pub direction: &'static str,
    pub alarms_after_start: usize,
    pub max_bound_ratio: f64,
    pub bound_holds: bool,
    pub final_attack_error_norm: f64,
    pub asymptote: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AttackExperiment {
    pub settings: AttackSettings,
    pub runs: Vec<AttackRun>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttackExperimentSummary {
    pub settings: AttackSettings,
    pub runs: Vec<AttackRunSummary>,
    /// `gamma_bar_chi2 / gamma_bar_cusum`, equal to `sqrt(alpha / b)`.
    pub asymptotic_bound_ratio: Option<f64>,
    /// Final `|e^d|` ratio chi-squared : CUSUM per direction.
    pub steady_state_ratios: Vec<(String, f64)>,
}

/// Slack used when checking `|e^d_k| <= gamma_k`.
pub const BOUND_SLACK: f64 = 1e-9;

impl AttackExperiment {
    pub fn run(&self, detector: &str, direction: &str) -> Option<&AttackRun> {
        self.runs
            .iter()
            .find(|r| r.detector == detector && r.direction == direction)
    }

    pub fn summary(&self) -> AttackExperimentSummary {
        let runs = self
            .runs
            .iter()
            .map(|r| {
                let t = &r.trajectories;
                let (max_bound_ratio, bound_holds) = t.bound_check(BOUND_SLACK);
                AttackRunSummary {
                    detector: r.detector,
                    direction: r.direction,
                    alarms_after_start: t.alarms_after_start.len(),
                    max_bound_ratio,
                    bound_holds,
                    final_attack_error_norm: t.e_attack.last().map_or(0.0, |v| v.norm()),
                    asymptote: t.envelope.as_ref().map(|e| e.asymptote),
                }
            })
            .collect::<Vec<_>>();
        let asymptote = |det: &str| {
            runs.iter()
                .find(|r| r.detector == det)
                .and_then(|r| r.asymptote)
        };
        let asymptotic_bound_ratio = asymptote("chi2")
            .zip(asymptote("cusum"))
            .map(|(a, b)| a / b);
        let steady_state_ratios = ["uniform", "worst-case"]
            .iter()
            .filter_map(|dir| {
                let chi = runs
                    .iter()
                    .find(|r| r.detector == "chi2" && r.direction == *dir)?;
                let cs = runs
                    .iter()
                    .find(|r| r.detector == "cusum" && r.direction == *dir)?;
                Some((
                    dir.to_string(),
                    chi.final_attack_error_norm / cs.final_attack_error_norm,
                ))
            })
            .collect();
        AttackExperimentSummary {
            settings: self.settings,
            runs,
            asymptotic_bound_ratio,
            steady_state_ratios,
        }
    }

    /// Long format: `detector,direction,k,z,S,e_norm,e_attack_norm,gamma`.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write_csv_preamble(&mut out, "attack-trajectories")?;
        writeln!(out, "detector,direction,k,z,S,e_norm,e_attack_norm,gamma")?;
        for r in &self.runs {
            for s in &r.trajectories.steps {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.detector,
                    r.direction,
                    s.k,
                    fmt_sig(s.z),
                    fmt_sig(s.s),
                    fmt_sig(s.e_norm),
                    fmt_sig(s.e_attack_norm),
                    s.gamma.map(fmt_sig).unwrap_or_default()
                )?;
            }
        }
        Ok(())
    }

    /// `detector,direction,k,gamma` for `k >= k*`.
    pub fn write_envelope_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write_csv_preamble(&mut out, "attack-envelopes")?;
        writeln!(out, "detector,direction,k,gamma")?;
        for r in &self.runs {
            if let Some(env) = &r.trajectories.envelope {
                for (i, g) in env.gamma_seq.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{}",
                        r.detector,
                        r.direction,
                        env.k_star + i as u64,
                        fmt_sig(*g)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Both detectors against both attack directions, all on the same seed.
pub fn attack_experiment(
    model: &LtiModel,
    design: &KalmanDesign,
    settings: AttackSettings,
) -> Result<AttackExperiment, HarnessError> {
    let m = model.m();
    let detectors = [
        (
            "chi2",
            DetectorConfig::Chi2(Chi2Config::new(settings.alpha)?),
        ),
        (
            "cusum",
            DetectorConfig::Cusum(CusumConfig::new(settings.b, settings.tau, m)?),
        ),
    ];
    let directions = [
        ("uniform", DirectionKind::Uniform.resolve(model, design)?),
        (
            "worst-case",
            DirectionKind::WorstCase.resolve(model, design)?,
        ),
    ];
    let mut runs = Vec::new();
    for (det_name, det) in detectors {
        for (dir_name, dir) in &directions {
            let plan = AttackPlan::new(det, dir.clone())?.starting_at(settings.k_star)?;
            let trajectories =
                split_error_trajectories(model, design, &plan, settings.horizon, settings.seed)?;
            runs.push(AttackRun {
                detector: det_name,
                direction: dir_name,
                trajectories,
            });
        }
    }
    Ok(AttackExperiment { settings, runs })
}

/// One point of the bound-ratio surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RatioRow {
    pub bias_factor: f64,
    pub b: f64,
    pub rate: f64,
    pub alpha: f64,
    /// `sqrt(alpha / b)`.
    pub ratio: f64,
}

/// `sqrt(alpha*(rate) / b)` over a grid of `b = factor * m` and rates.
pub fn ratio_sweep(
    m: usize,
    bias_factors: &[f64],
    rates: &[f64],
) -> Result<Vec<RatioRow>, HarnessError> {
    let mut rows = Vec::with_capacity(bias_factors.len() * rates.len());
    for &factor in bias_factors {
        if !(factor > 0.0) {
            return Err(HarnessError::Config(format!(
                "bias factor {factor} must be positive"
            )));
        }
        let b = factor * bias_lower_bound(m);
        for &rate in rates {
            let alpha = chi2_threshold(m, rate)?;
            rows.push(RatioRow {
                bias_factor: factor,
                b,
                rate,
                alpha,
                ratio: (alpha / b).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// False-alarm rate at which `alpha* = b`, i.e. the bound ratio is one:
/// `pr(chi-squared(m) > b) = Q(m/2, b/2)`.
pub fn breakeven_rate(m: usize, b: f64) -> Result<f64, HarnessError> {
    if m == 0 || !(b > 0.0) {
        return Err(HarnessError::Config("need m >= 1 and b > 0".into()));
    }
    Ok(regularized_upper_gamma(m as f64 / 2.0, b / 2.0)?)
}

pub fn write_ratio_csv<W: Write>(mut out: W, rows: &[RatioRow]) -> io::Result<()> {
    write_csv_preamble(&mut out, "ratio-sweep")?;
    writeln!(out, "bias_factor,b,rate,alpha,ratio")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig(r.bias_factor),
            fmt_sig(r.b),
            fmt_sig(r.rate),
            fmt_sig(r.alpha),
            fmt_sig(r.ratio)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Table1Settings {
    pub bias_factors: Vec<f64>,
    pub rates: Vec<f64>,
    pub partitions: usize,
    pub rate_tol: f64,
    /// Monte Carlo budget per cell; skipped entirely when `simulate` is off.
    pub run: RunSettings,
    pub simulate: bool,
}

impl Default for Table1Settings {
    fn default() -> Self {
        Self {
            bias_factors: vec![1.05, 1.15, 2.0],
            rates: vec![0.25, 0.10, 0.02],
            partitions: crate::tuning::DEFAULT_PARTITIONS,
            rate_tol: crate::tuning::DEFAULT_RATE_TOL,
            run: RunSettings::default(),
            simulate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Table1Cell {
    pub bias_factor: f64,
    pub b: f64,
    pub target_rate: f64,
    pub tau: Option<f64>,
    pub approx_rate: Option<f64>,
    pub simulated: Option<FalseAlarmEstimate>,
    /// Largest rate the chain can reach (`tau -> 0`) when the target is
    /// out of reach.
    pub infeasible_max_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Table1 {
    pub settings: Table1Settings,
    pub cells: Vec<Table1Cell>,
}

impl Table1 {
    pub fn cell(&self, bias_factor: f64, target_rate: f64) -> Option<&Table1Cell> {
        self.cells
            .iter()
            .find(|c| c.bias_factor == bias_factor && c.target_rate == target_rate)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write_csv_preamble(&mut out, "table1")?;
        writeln!(
            out,
            "bias_factor,b,target_rate,tau,approx_rate,sim_rate_count,sim_rate_run_length,stderr,total_steps,status"
        )?;
        let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        for c in &self.cells {
            let sim = c.simulated.as_ref();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_sig(c.bias_factor),
                fmt_sig(c.b),
                fmt_sig(c.target_rate),
                opt(c.tau),
                opt(c.approx_rate),
                opt(sim.map(|s| s.rate_by_count)),
                opt(sim.map(|s| s.rate_by_run_length)),
                opt(sim.map(|s| s.stderr)),
                sim.map(|s| s.total_steps.to_string()).unwrap_or_default(),
                if c.tau.is_some() { "ok" } else { "infeasible" }
            )?;
        }
        Ok(())
    }
}

/// Tunes `tau*` for every (bias factor, rate) cell and, optionally,
/// measures the realized false-alarm rate by simulation. Cell `i` uses
/// base seed `seed + (i << 32)`.
pub fn table1(
    model: &LtiModel,
    design: &KalmanDesign,
    settings: &Table1Settings,
) -> Result<Table1, HarnessError> {
    let m = model.m();
    let grid: Vec<(f64, f64)> = settings
        .bias_factors
        .iter()
        .flat_map(|&f| settings.rates.iter().map(move |&r| (f, r)))
        .collect();
    let tuned: Vec<Result<Table1Cell, HarnessError>> = grid
        .par_iter()
        .map(|&(factor, rate)| {
            let b = factor * bias_lower_bound(m);
            let mut cell = Table1Cell {
                bias_factor: factor,
                b,
                target_rate: rate,
                tau: None,
                approx_rate: None,
                simulated: None,
                infeasible_max_rate: None,
            };
            match solve_cusum_threshold(m, b, rate, settings.partitions, settings.rate_tol) {
                Ok(res) => {
                    cell.tau = Some(res.tau);
                    cell.approx_rate = Some(res.achieved_approx_rate);
                }
                Err(TuningError::Infeasible { max_rate, .. }) => {
                    cell.infeasible_max_rate = Some(max_rate);
                }
                Err(e) => return Err(e.into()),
            }
            Ok(cell)
        })
        .collect();
    let mut cells = tuned.into_iter().collect::<Result<Vec<_>, _>>()?;
    if settings.simulate {
        for (i, cell) in cells.iter_mut().enumerate() {
            let Some(tau) = cell.tau else { continue };
            let det = DetectorConfig::Cusum(CusumConfig::new(cell.b, tau, m)?);
            let run = RunSettings {
                seed: settings.run.seed.wrapping_add((i as u64) << 32),
                ..settings.run
            };
            cell.simulated = Some(estimate_false_alarm_rate(model, design, det, &run)?);
        }
    }
    Ok(Table1 {
        settings: settings.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::reactor_fixture;
    use crate::plant::design_filter;

    #[test]
    fn boundedness_drift_and_shared_stream() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let traces =
            boundedness_experiment(&model, &design, &[0.5, 1.0, 1.5], 2000, 100, 3).unwrap();
        assert_eq!(traces.len(), 3);
        assert!(traces.iter().all(|t| t.s.len() == 2000 && t.s[0] == 0.0));
        // same stream: a larger bias never gives a larger statistic
        for k in 0..2000 {
            assert!(traces[0].s[k] >= traces[1].s[k] && traces[1].s[k] >= traces[2].s[k]);
        }
        let slope = traces[0].s[1999] / 1999.0;
        assert!((slope - 1.5).abs() < 0.3);
        assert!(traces[0].drift_boundary.is_none());
        assert_eq!(
            traces[2].drift_boundary,
            Some(drift_boundary(4.5, 3).unwrap())
        );
    }

    #[test]
    fn boundedness_csv_layout() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let traces = boundedness_experiment(&model, &design, &[0.85, 1.05], 4, 10, 1).unwrap();
        let mut buf = Vec::new();
        write_boundedness_csv(&mut buf, &traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[1], "k,S_b0.85,S_b1.05");
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("1,0,0"));
    }

    #[test]
    fn ratio_grid_values() {
        let rows = ratio_sweep(2, &[1.0], &[0.10, 0.01]).unwrap();
        assert!((rows[0].ratio - (4.6052f64 / 2.0).sqrt()).abs() < 1e-4);
        assert!((rows[0].ratio - 1.517).abs() < 1e-3);
        assert!((rows[1].alpha - 9.2103).abs() < 1e-3);
        assert!(ratio_sweep(2, &[0.0], &[0.1]).is_err());
        assert!(ratio_sweep(2, &[1.0], &[1.5]).is_err());
    }

    #[test]
    fn breakeven_gives_unit_ratio() {
        let rate = breakeven_rate(2, 2.0).unwrap();
        assert!((rate - (-1.0f64).exp()).abs() < 1e-14);
        let row = ratio_sweep(2, &[1.0], &[rate]).unwrap()[0];
        assert!((row.ratio - 1.0).abs() < 1e-9);
        // the complementary probability is the familiar 0.632
        assert!((1.0 - rate - 0.632).abs() < 1e-3);
    }

    #[test]
    fn table_tuning_only() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let settings = Table1Settings {
            bias_factors: vec![2.0],
            rates: vec![0.25, 0.10],
            partitions: 300,
            simulate: false,
            ..Default::default()
        };
        let t = table1(&model, &design, &settings).unwrap();
        let dash = t.cell(2.0, 0.25).unwrap();
        assert!(dash.tau.is_none() && dash.infeasible_max_rate.unwrap() < 0.25);
        let ok = t.cell(2.0, 0.10).unwrap();
        assert!((ok.tau.unwrap() - 0.2528).abs() / 0.2528 < 0.02);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with("infeasible"));
    }

    #[test]
    fn attack_summary_shape() {
        let model = reactor_fixture();
        let design = design_filter(&model).unwrap();
        let settings = AttackSettings {
            k_star: 300,
            horizon: 900,
            ..AttackSettings::reactor_default()
        };
        let exp = attack_experiment(&model, &design, settings).unwrap();
        let sum = exp.summary();
        assert_eq!(sum.runs.len(), 4);
        assert!(sum
            .runs
            .iter()
            .all(|r| r.alarms_after_start == 0 && r.bound_holds));
        let ratio = sum.asymptotic_bound_ratio.unwrap();
        assert!((ratio - (settings.alpha / 6.0).sqrt()).abs() < 1e-12);
        assert!(exp.run("cusum", "worst-case").is_some());
    }
}
