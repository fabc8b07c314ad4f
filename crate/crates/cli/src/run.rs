//! Experiment execution and output files.

use std::fmt::{self, Write as _};
use std::io;
use std::path::Path;

use phdae::control::ControlSource;
use phdae::diagnostics::{
    dissipation_check, energy_drift_sweep, order_study, self_reference, symmetry_roundtrip,
    OrderStudyReport,
};
use phdae::pendulum::{
    from_ambient, pendulum_method, rk4_reference_sampled, to_ambient, ExplicitState,
};
use phdae::stepper::{power_balance_audit, SimulationFailure};
use phdae::{
    damping_source, sequence_source, simulate, DoublePendulum, IntegratorConfig, Trajectory,
    ZeroControl,
};

use crate::config::{ConfigError, Control, Experiment, Reference, RunConfig};
use crate::tables::{num, write_table, write_trajectory};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(String),
    Io(io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Io(_) => 1,
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Solver(msg) => write!(f, "solver failure: {msg}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

fn config_error(message: String) -> RunError {
    RunError::Config(ConfigError {
        line: None,
        message,
    })
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Key/value summary written to `report.txt` and echoed on stdout.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    fn add(&mut self, key: &str, value: impl fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn control_source(control: &Control) -> Box<dyn ControlSource> {
    match control {
        Control::Zero => Box::new(ZeroControl { m: 2 }),
        Control::Damping(k) => Box::new(damping_source(k.clone())),
        Control::OpenLoop { rows, .. } => {
            Box::new(sequence_source(rows.clone()).expect("validated when parsed"))
        }
    }
}

fn describe_control(control: &Control) -> String {
    match control {
        Control::Zero => "zero".into(),
        Control::Damping(k) => format!(
            "damping, K = {}",
            k.matrix()
                .as_slice()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ),
        Control::OpenLoop { path, rows } => {
            format!("open_loop, {} rows from {}", rows.len(), path.display())
        }
    }
}

fn report_header(mode: Experiment, cfg: &RunConfig) -> Report {
    let mut r = Report::default();
    r.add("experiment", mode.name());
    r.add("system", "double_pendulum");
    let p = &cfg.params;
    r.add(
        "parameters",
        format!(
            "l_a = {}, l_b = {}, m_a = {}, m_b = {}, g_bar = {}",
            p.l_a, p.l_b, p.m_a, p.m_b, p.g_bar
        ),
    );
    r.add("h", cfg.h);
    r.add("newton_tol", cfg.newton.tol);
    r.add("newton_max_iter", cfg.newton.max_iter);
    r.add("control", describe_control(&cfg.control));
    r
}

/// Runs `mode` and writes its outputs into `out_dir`. The report is written
/// in every case, including solver failures.
pub fn run(mode: Experiment, cfg: &RunConfig, out_dir: &Path) -> Result<String, RunError> {
    cfg.check_mode(mode)?;
    std::fs::create_dir_all(out_dir)?;
    let mut report = report_header(mode, cfg);
    let outcome = match mode {
        Experiment::Simulate => run_simulate(cfg, out_dir, &mut report),
        Experiment::DissipationCheck => run_dissipation(cfg, out_dir, &mut report),
        Experiment::OrderStudy => run_order_study(cfg, out_dir, &mut report),
        Experiment::EnergyStudy => run_energy_study(cfg, out_dir, &mut report),
        Experiment::SymmetryCheck => run_symmetry(cfg, out_dir, &mut report),
    };
    match &outcome {
        Ok(()) => report.add("status", "ok"),
        Err(e) => report.add("status", format!("FAILURE: {e}")),
    }
    let text = report.render();
    std::fs::write(out_dir.join(REPORT_FILE), &text)?;
    outcome.map(|()| text)
}

fn setup(cfg: &RunConfig) -> Result<DoublePendulum, RunError> {
    DoublePendulum::new(cfg.params).map_err(|e| config_error(e.to_string()))
}

fn integrator(cfg: &RunConfig, h: f64) -> IntegratorConfig {
    IntegratorConfig {
        h,
        newton: cfg.newton,
        log_every: cfg.log_every,
    }
}

/// Runs one trajectory and writes it, with a failure footer if it stopped
/// early.
fn run_trajectory(
    cfg: &RunConfig,
    steps: usize,
    out_dir: &Path,
    report: &mut Report,
) -> Result<Trajectory, RunError> {
    let sys = setup(cfg)?;
    let method = pendulum_method(cfg.params);
    let source = control_source(&cfg.control);
    report.add("steps", steps);
    report.add("log_every", cfg.log_every);
    let result = simulate(
        &sys,
        method.as_ref(),
        &cfg.initial,
        source.as_ref(),
        &integrator(cfg, cfg.h),
        steps,
    );
    let path = out_dir.join(TRAJECTORY_FILE);
    match result {
        Ok(traj) => {
            write_trajectory(&path, &sys, &traj, None)?;
            report.add("rows", traj.len());
            if let Some(last) = traj.records.last() {
                report.add("final_time", num(last.t));
                report.add("initial_energy", num(traj.records[0].result.energy));
                report.add("final_energy", num(last.result.energy));
            }
            report.add("max_constraint_residual", num(traj.max_residual()));
            Ok(traj)
        }
        Err(SimulationFailure { error, partial }) => {
            let msg = error.to_string();
            write_trajectory(&path, &sys, &partial, Some(&msg))?;
            report.add("rows", partial.len());
            Err(RunError::Solver(msg))
        }
    }
}

fn run_simulate(cfg: &RunConfig, out_dir: &Path, report: &mut Report) -> Result<(), RunError> {
    let traj = run_trajectory(cfg, cfg.steps, out_dir, report)?;
    let sys = setup(cfg)?;
    let audit = power_balance_audit(&sys, &traj);
    if cfg.log_every == 1 {
        report.add(
            "max_power_balance_error",
            num(audit.iter().fold(0.0f64, |a, e| a.max(e.abs()))),
        );
    }
    Ok(())
}

fn steps_over(cfg: &RunConfig, h: f64) -> Result<usize, RunError> {
    match cfg.horizon {
        None => Ok(cfg.steps),
        Some(t) => {
            let n = (t / h).round();
            if n < 1.0 || (n * h - t).abs() > 1e-9 * t.max(1.0) {
                return Err(config_error(format!(
                    "h = {h} does not divide the horizon {t}"
                )));
            }
            Ok(n as usize)
        }
    }
}

fn run_dissipation(cfg: &RunConfig, out_dir: &Path, report: &mut Report) -> Result<(), RunError> {
    let steps = steps_over(cfg, cfg.h)?;
    let traj = run_trajectory(cfg, steps, out_dir, report)?;
    let check = dissipation_check(&traj);
    report.add("dissipation_passed", check.passed);
    report.add(
        "first_violation",
        check
            .first_violation
            .map_or("none".to_string(), |i| i.to_string()),
    );
    report.add("max_energy_increase", num(check.max_increase));
    Ok(())
}

fn explicit_initial(cfg: &RunConfig) -> Result<ExplicitState, RunError> {
    match cfg.initial_explicit {
        Some((q, p_hat)) => Ok(ExplicitState { q, p_hat }),
        None => from_ambient(&cfg.params, &cfg.initial).map_err(|e| config_error(e.to_string())),
    }
}

fn write_order_table(path: &Path, rep: &OrderStudyReport) -> io::Result<()> {
    let rows: Vec<Vec<String>> = rep
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let order = match i.checked_sub(1).map(|j| rep.observed_orders[j]) {
                Some(Some(o)) => num(o),
                Some(None) => "undefined".into(),
                None => String::new(),
            };
            vec![num(e.h), e.steps.to_string(), num(e.error), order]
        })
        .collect();
    write_table(path, &["h", "steps", "error", "observed_order"], &rows)
}

fn run_order_study(cfg: &RunConfig, out_dir: &Path, report: &mut Report) -> Result<(), RunError> {
    let sys = setup(cfg)?;
    let method = pendulum_method(cfg.params);
    let source = control_source(&cfg.control);
    let horizon = cfg.horizon.unwrap_or(1.0);
    let h_list = cfg
        .h_list
        .clone()
        .unwrap_or_else(|| vec![cfg.h, cfg.h / 2.0, cfg.h / 4.0]);
    let h_min = h_list.iter().copied().fold(f64::INFINITY, f64::min);
    report.add("horizon", horizon);
    report.add(
        "h_list",
        h_list
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );

    let result = match cfg.reference {
        Reference::Rk4 => {
            let substeps = (h_min / cfg.reference_step).round();
            if substeps < 1.0 || (substeps * cfg.reference_step - h_min).abs() > 1e-9 * h_min {
                return Err(config_error(format!(
                    "reference_step {} does not divide the smallest step {h_min}",
                    cfg.reference_step
                )));
            }
            report.add(
                "reference",
                format!(
                    "rk4 on the joint-coordinate model, step {}",
                    cfg.reference_step
                ),
            );
            let x0 = explicit_initial(cfg)?;
            let params = cfg.params;
            let src = source.as_ref();
            let reference = move |t: f64| {
                let samples = (t / h_min).round() as usize;
                let states = rk4_reference_sampled(
                    &params,
                    x0,
                    cfg.reference_step,
                    substeps as usize,
                    samples,
                    src,
                )?;
                to_ambient(&params, states.last().expect("at least the initial state"))
            };
            order_study(
                &sys,
                method.as_ref(),
                &cfg.initial,
                src,
                horizon,
                &h_list,
                &cfg.newton,
                &reference,
            )
        }
        Reference::SelfRefined => {
            report.add("reference", format!("same method at step {}", h_min / 8.0));
            let reference = self_reference(
                &sys,
                method.as_ref(),
                &cfg.initial,
                source.as_ref(),
                h_min / 8.0,
                cfg.newton,
            );
            order_study(
                &sys,
                method.as_ref(),
                &cfg.initial,
                source.as_ref(),
                horizon,
                &h_list,
                &cfg.newton,
                &reference,
            )
        }
    };
    let rep = result.map_err(|e| match e.root() {
        phdae::Error::InvalidInput(msg) => config_error(msg.clone()),
        _ => RunError::Solver(e.to_string()),
    })?;
    write_order_table(&out_dir.join("order_study.csv"), &rep)?;
    for (i, e) in rep.entries.iter().enumerate() {
        report.add(&format!("error[h={}]", e.h), num(e.error));
        if i > 0 {
            let o = rep.observed_orders[i - 1].map_or("undefined".to_string(), num);
            report.add(&format!("observed_order[h={}]", e.h), o);
        }
    }
    Ok(())
}

fn run_energy_study(cfg: &RunConfig, out_dir: &Path, report: &mut Report) -> Result<(), RunError> {
    if cfg.control != Control::Zero {
        return Err(config_error(
            "energy_study runs without input; set control mode to 'zero'".into(),
        ));
    }
    let sys = setup(cfg)?;
    let method = pendulum_method(cfg.params);
    let h_list = cfg
        .h_list
        .clone()
        .unwrap_or_else(|| vec![cfg.h, cfg.h / 2.0]);
    let horizon = cfg.horizon.unwrap_or(cfg.steps as f64 * cfg.h);
    report.add("horizon", horizon);
    let studies = energy_drift_sweep(
        &sys,
        method.as_ref(),
        &cfg.initial,
        &cfg.newton,
        &h_list,
        horizon,
    )
    .map_err(|e| match e.root() {
        phdae::Error::InvalidInput(msg) => config_error(msg.clone()),
        _ => RunError::Solver(e.to_string()),
    })?;
    let rows: Vec<Vec<String>> = studies
        .iter()
        .map(|s| {
            vec![
                num(s.h),
                s.steps.to_string(),
                num(s.max_deviation),
                num(s.slope),
                num(s.secular_change()),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("energy_study.csv"),
        &["h", "steps", "max_deviation", "slope", "secular_change"],
        &rows,
    )?;
    for s in &studies {
        report.add(&format!("max_deviation[h={}]", s.h), num(s.max_deviation));
        report.add(
            &format!("secular_change[h={}]", s.h),
            num(s.secular_change()),
        );
    }
    for w in studies.windows(2) {
        report.add(
            &format!("deviation_ratio[h={}/h={}]", w[0].h, w[1].h),
            num(w[0].max_deviation / w[1].max_deviation),
        );
    }
    Ok(())
}

fn run_symmetry(cfg: &RunConfig, out_dir: &Path, report: &mut Report) -> Result<(), RunError> {
    let sys = setup(cfg)?;
    let method = pendulum_method(cfg.params);
    let source = control_source(&cfg.control);
    let err = symmetry_roundtrip(
        &sys,
        method.as_ref(),
        &cfg.initial,
        source.as_ref(),
        &integrator(cfg, cfg.h),
        cfg.steps,
    )
    .map_err(|e| RunError::Solver(e.to_string()))?;
    write_table(
        &out_dir.join("symmetry_check.csv"),
        &["h", "steps", "roundtrip_error"],
        &[vec![num(cfg.h), cfg.steps.to_string(), num(err)]],
    )?;
    report.add("steps", cfg.steps);
    report.add("roundtrip_error", num(err));
    Ok(())
}
