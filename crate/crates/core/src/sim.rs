//! Fixed-step RK4 engine with a zero-order-hold controller, invariant
//! monitors, CSV traces and a TOML monitor report.
//!
//! A closed loop is a flat state vector holding the plant and the integrator
//! states. The controller output is recomputed at every control tick and held
//! over the plant steps in between; the integrator ODE is part of the state
//! and is evaluated inside every RK4 stage. Rotation blocks are stored as nine
//! column-major entries and re-projected onto SO(3) when their drift exceeds
//! the renormalisation threshold.

use crate::error::{Error, Result};
use crate::lie::{orthonormality_drift, polar_project, Mat3, Vec3};
use crate::pid::{lyapunov_w, GainSet, LyapunovInputs, MorseConstants};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

fn default_h_plant() -> f64 {
    0.001
}
fn default_h_control() -> f64 {
    0.020
}
fn default_renorm() -> f64 {
    1e-9
}
fn default_decimate() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_h_plant")]
    pub h_plant_s: f64,
    #[serde(default = "default_h_control")]
    pub h_control_s: f64,
    pub t_final_s: f64,
    #[serde(default)]
    pub integrator: IntegratorKind,
    #[serde(default = "default_renorm")]
    pub renorm_threshold: f64,
    /// Trace stride in plant steps.
    #[serde(default = "default_decimate")]
    pub decimate: usize,
}

impl SimConfig {
    pub fn new(t_final_s: f64) -> Self {
        SimConfig {
            h_plant_s: default_h_plant(),
            h_control_s: default_h_control(),
            t_final_s,
            integrator: IntegratorKind::Rk4,
            renorm_threshold: default_renorm(),
            decimate: default_decimate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("h_plant_s", self.h_plant_s), ("h_control_s", self.h_control_s), ("t_final_s", self.t_final_s)]
        {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Scenario(format!("sim.{n} = {v} must be positive")));
            }
        }
        if !(self.renorm_threshold > 0.0) {
            return Err(Error::Scenario("sim.renorm_threshold must be positive".into()));
        }
        if self.decimate == 0 {
            return Err(Error::Scenario("sim.decimate must be at least 1".into()));
        }
        let ratio = self.h_control_s / self.h_plant_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::Scenario(format!(
                "h_control_s = {} is not an integer multiple of h_plant_s = {}",
                self.h_control_s, self.h_plant_s
            )));
        }
        Ok(())
    }

    pub fn control_ratio(&self) -> usize {
        (self.h_control_s / self.h_plant_s).round() as usize
    }

    pub fn plant_steps(&self) -> usize {
        (self.t_final_s / self.h_plant_s).round() as usize
    }
}

/// Controller output held between ticks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hold {
    pub u: Vec<f64>,
    /// Integrator frozen by anti-windup.
    pub frozen: bool,
    /// Some actuator clipped at this tick.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
}

/// Everything the monitors and the trace need from one sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    /// Scalar tracking error of the scenario (for example `V(E)`).
    pub error: f64,
    pub invariants: Vec<Invariant>,
    /// Named scalars that scenario limits may refer to.
    pub channels: Vec<(&'static str, f64)>,
    pub lyapunov: Option<LyapunovInputs>,
}

pub trait ClosedLoop: Send + Sync {
    fn system(&self) -> &'static str;
    fn initial_state(&self) -> Vec<f64>;
    /// Offsets of the 3x3 rotation blocks.
    fn rotation_offsets(&self) -> Vec<usize>;
    fn control(&self, t: f64, x: &[f64]) -> Result<Hold>;
    fn derivative(&self, t: f64, x: &[f64], hold: &Hold, dx: &mut [f64]) -> Result<()>;
    /// Trace columns produced by [`ClosedLoop::observe`].
    fn columns(&self) -> Vec<String>;
    fn observe(&self, t: f64, x: &[f64], hold: &Hold) -> Result<Observation>;
    /// Numerical `mu` and `lambda` of the output Morse function.
    fn morse_constants(&self) -> MorseConstants;
    fn gains(&self) -> &GainSet;
}

pub fn get_vec3(x: &[f64], off: usize) -> Vec3 {
    Vec3::new(x[off], x[off + 1], x[off + 2])
}

pub fn set_vec3(x: &mut [f64], off: usize, v: &Vec3) {
    x[off..off + 3].copy_from_slice(v.as_slice());
}

pub fn get_mat3(x: &[f64], off: usize) -> Mat3 {
    Mat3::from_column_slice(&x[off..off + 9])
}

pub fn set_mat3(x: &mut [f64], off: usize, m: &Mat3) {
    x[off..off + 9].copy_from_slice(m.as_slice());
}

/// Right-hand side `f(t, x, dx)`.
pub type Rhs<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a;

/// Classical RK4 step of `dx = f(t, x)` with the input held by the closure.
pub fn rk4_step(f: &mut Rhs, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Step(h));
    }
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    f(t, x, &mut k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4)?;
    let out: Vec<f64> = (0..n).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0, t: t + h });
    }
    Ok(out)
}

/// Re-projects rotation blocks whose drift exceeds `threshold`; returns the
/// largest drift seen before projection.
pub fn renormalize(x: &mut [f64], offsets: &[usize], threshold: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for &off in offsets {
        let m = get_mat3(x, off);
        let d = orthonormality_drift(&m);
        worst = worst.max(d);
        if d > threshold {
            set_mat3(x, off, &polar_project(&m));
        }
    }
    worst
}

fn default_hold_s() -> f64 {
    0.0
}

/// Scenario-level pass criteria evaluated from the control-tick samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acceptance {
    /// Steady-state bound on the scenario error.
    pub error_max: Option<f64>,
    /// The error must stay below `error_max` for at least this long before `t_final`.
    #[serde(default = "default_hold_s")]
    pub hold_s: f64,
    /// Anti-windup must engage at least once.
    #[serde(default)]
    pub expect_saturation: bool,
    /// `log(error)` over the last 20% of the run must have a negative slope.
    #[serde(default)]
    pub tail_slope: bool,
    /// Upper bounds on named observation channels (absolute value).
    #[serde(default)]
    pub limits: BTreeMap<String, f64>,
}

fn default_residual() -> f64 {
    1e-3
}
fn default_fraction() -> f64 {
    0.99
}

/// Lyapunov certificate monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovMonitor {
    /// `kappa` in `[1/mu, 2/mu)`; `1.5/mu` when absent.
    pub kappa: Option<f64>,
    /// Ticks with `|z|` inside this ball are not checked.
    #[serde(default = "default_residual")]
    pub residual_ball: f64,
    #[serde(default = "default_fraction")]
    pub min_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorResult {
    pub name: String,
    pub passed: bool,
    /// Tolerance minus worst value; negative on failure.
    pub worst_margin: f64,
    pub t_worst_s: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub scenario: String,
    pub system: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_failure: Option<String>,
    pub terminal_error: f64,
    pub t_end_s: f64,
    pub control_ticks: usize,
    pub saturated_ticks: usize,
    pub runtime_s: f64,
    pub monitors: Vec<MonitorResult>,
}

impl MonitorReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn monitor(&self, name: &str) -> Option<&MonitorResult> {
        self.monitors.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// CSV with a header row and 17 significant digits per float.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub report: MonitorReport,
    /// Error samples at control ticks, `(t, error)`.
    pub errors: Vec<(f64, f64)>,
    /// Lyapunov values at control ticks when the monitor is active.
    pub w: Vec<f64>,
    pub q_min_eig: Option<f64>,
    pub final_state: Vec<f64>,
}

/// Worst-case tracker for a `value <= tol` monitor.
struct Worst {
    name: String,
    tol: f64,
    value: f64,
    t: f64,
}

impl Worst {
    fn new(name: &str, tol: f64) -> Self {
        Worst { name: name.to_string(), tol, value: f64::NEG_INFINITY, t: 0.0 }
    }

    fn update(&mut self, v: f64, t: f64) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.t = t;
        }
    }

    fn result(&self, detail: String) -> MonitorResult {
        let margin = self.tol - self.value;
        MonitorResult {
            name: self.name.clone(),
            passed: margin >= 0.0,
            worst_margin: margin,
            t_worst_s: self.t,
            detail,
        }
    }
}

fn row(t: f64, obs: &Observation, hold: &Hold) -> Vec<f64> {
    let mut r = Vec::with_capacity(obs.values.len() + 4);
    r.push(t);
    r.extend_from_slice(&obs.values);
    r.push(obs.error);
    r.push(hold.saturated as u8 as f64);
    r.push(hold.frozen as u8 as f64);
    r
}

/// Least-squares slope of `log(error)` against time.
pub fn log_slope(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(t, e)| (t, e.max(1e-300).ln())).collect();
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    sxy / sxx
}

/// Runs a closed loop and evaluates every monitor.
pub fn run(
    name: &str,
    lp: &dyn ClosedLoop,
    sim: &SimConfig,
    acceptance: &Acceptance,
    lyapunov: Option<&LyapunovMonitor>,
) -> Result<RunOutput> {
    sim.validate()?;
    let start = Instant::now();
    let ratio = sim.control_ratio();
    let steps = sim.plant_steps();
    let h = sim.h_plant_s;
    let offsets = lp.rotation_offsets();
    let mut header = vec!["t".to_string()];
    header.extend(lp.columns());
    header.extend(["error", "saturated", "frozen"].map(String::from));

    let lyap_cfg = match lyapunov {
        Some(cfg) => {
            let mc = lp.morse_constants();
            let kappa = cfg.kappa.unwrap_or_else(|| crate::pid::default_kappa(mc.mu));
            crate::pid::gain_bounds(mc.mu, mc.lambda, kappa, lp.gains().kd, lp.gains().ki.max(1e-300))?;
            Some((cfg.clone(), mc, kappa))
        }
        None => None,
    };

    let mut x = lp.initial_state();
    renormalize(&mut x, &offsets, sim.renorm_threshold);
    let mut hold = Hold::default();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut w_series = Vec::new();
    let mut w_outside = 0usize;
    let mut w_increase = 0usize;
    let mut w_worst = Worst::new("lyapunov_w_monotone", 0.0);
    let mut q_min = None;
    let mut prev_w: Option<f64> = None;
    let mut inv: BTreeMap<&'static str, Worst> = BTreeMap::new();
    let mut chan: BTreeMap<String, Worst> =
        acceptance.limits.iter().map(|(k, v)| (k.clone(), Worst::new(&format!("limit_{k}"), *v))).collect();
    let mut drift = Worst::new("orthonormality", 1e-6);
    let mut ticks = 0usize;
    let mut sat_ticks = 0usize;
    let mut hard: Option<String> = None;
    let mut t_end = 0.0;

    let mut observe_tick = |t: f64,
                            x: &[f64],
                            hold: &Hold,
                            errors: &mut Vec<(f64, f64)>,
                            inv: &mut BTreeMap<&'static str, Worst>,
                            chan: &mut BTreeMap<String, Worst>|
     -> Result<Observation> {
        let obs = lp.observe(t, x, hold)?;
        if !obs.error.is_finite() {
            return Err(Error::NonFinite { step: (t / h).round() as usize, t });
        }
        errors.push((t, obs.error));
        for i in &obs.invariants {
            inv.entry(i.name).or_insert_with(|| Worst::new(i.name, i.tol)).update(i.value, t);
        }
        for (k, v) in &obs.channels {
            if let Some(w) = chan.get_mut(*k) {
                w.update(v.abs(), t);
            }
        }
        if let (Some((cfg, mc, kappa)), Some(li)) = (&lyap_cfg, &obs.lyapunov) {
            let s = lyapunov_w(li, lp.gains(), mc.mu, *kappa);
            q_min = Some(s.q_min_eig);
            w_series.push(s.w);
            let z = s.z_norms.iter().map(|v| v * v).sum::<f64>().sqrt();
            if let Some(pw) = prev_w {
                if z > cfg.residual_ball {
                    w_outside += 1;
                    let inc = s.w - pw;
                    w_worst.update(inc, t);
                    if inc > 1e-12 * pw.abs().max(1.0) {
                        w_increase += 1;
                    }
                }
            }
            prev_w = Some(s.w);
        }
        Ok(obs)
    };

    for k in 0..=steps {
        let t = k as f64 * h;
        let tick = k % ratio == 0;
        if tick && k < steps {
            match lp.control(t, &x) {
                Ok(hd) => hold = hd,
                Err(e) => {
                    hard = Some(format!("controller failed at step {k} (t = {t:.6} s): {e}"));
                    break;
                }
            }
            ticks += 1;
            if hold.saturated {
                sat_ticks += 1;
            }
        }
        let is_last = k == steps;
        if tick || is_last || k % sim.decimate == 0 {
            let obs = if tick || is_last {
                drift.update(offsets.iter().map(|&o| orthonormality_drift(&get_mat3(&x, o))).fold(0.0, f64::max), t);
                observe_tick(t, &x, &hold, &mut errors, &mut inv, &mut chan)
            } else {
                lp.observe(t, &x, &hold)
            };
            match obs {
                Ok(o) => {
                    if k % sim.decimate == 0 || is_last {
                        rows.push(row(t, &o, &hold));
                    }
                }
                Err(e) => {
                    hard = Some(format!("observation failed at step {k} (t = {t:.6} s): {e}"));
                    break;
                }
            }
        }
        t_end = t;
        if is_last {
            break;
        }
        let mut f = |tt: f64, xx: &[f64], dx: &mut [f64]| lp.derivative(tt, xx, &hold, dx);
        match rk4_step(&mut f, t, &x, h) {
            Ok(nx) => x = nx,
            Err(e) => {
                let e = match e {
                    Error::NonFinite { t, .. } => Error::NonFinite { step: k + 1, t },
                    other => other,
                };
                hard = Some(format!("integration failed at row {}: {e}", k + 1));
                break;
            }
        }
        renormalize(&mut x, &offsets, sim.renorm_threshold);
    }

    let mut monitors = Vec::new();
    monitors.push(MonitorResult {
        name: "finite".into(),
        passed: hard.is_none(),
        worst_margin: if hard.is_none() { 0.0 } else { -1.0 },
        t_worst_s: t_end,
        detail: hard.clone().unwrap_or_else(|| "state finite throughout".into()),
    });
    if !offsets.is_empty() {
        monitors.push(drift.result("max orthonormality drift at control ticks".into()));
    }
    for w in inv.values() {
        monitors.push(w.result(format!("max |{}| = {:.3e}", w.name, w.value)));
    }
    for (k, w) in &chan {
        if w.value == f64::NEG_INFINITY {
            return Err(Error::Scenario(format!("acceptance limit `{k}` names no channel of {}", lp.system())));
        }
        monitors.push(w.result(format!("max |{k}| = {:.4e}", w.value)));
    }
    let terminal = errors.last().map(|e| e.1).unwrap_or(f64::NAN);
    if let Some(max) = acceptance.error_max {
        let last_bad = errors.iter().rev().find(|(_, e)| !(*e < max)).map(|(t, _)| *t);
        let done = hard.is_none();
        let (passed, detail, t_worst) = match last_bad {
            None => (done, format!("error below {max:e} throughout"), 0.0),
            Some(tb) => {
                let held = t_end - tb;
                (
                    done && tb < t_end && held >= acceptance.hold_s,
                    format!("error last above {max:e} at t = {tb:.3} s; held below for {held:.3} s"),
                    tb,
                )
            }
        };
        monitors.push(MonitorResult {
            name: "error_converged".into(),
            passed,
            worst_margin: max - terminal,
            t_worst_s: t_worst,
            detail: format!("{detail}; terminal error {terminal:.4e}"),
        });
    }
    if acceptance.expect_saturation {
        monitors.push(MonitorResult {
            name: "anti_windup_engaged".into(),
            passed: sat_ticks > 0,
            worst_margin: sat_ticks as f64,
            t_worst_s: 0.0,
            detail: format!("{sat_ticks} saturated control ticks"),
        });
    }
    if acceptance.tail_slope {
        let n = errors.len();
        let tail = &errors[n - n / 5..];
        let slope = if tail.len() >= 2 { log_slope(tail) } else { f64::NAN };
        monitors.push(MonitorResult {
            name: "exponential_tail".into(),
            passed: slope < 0.0,
            worst_margin: -slope,
            t_worst_s: tail.first().map(|e| e.0).unwrap_or(0.0),
            detail: format!("slope of log error over the last 20%: {slope:.4e} 1/s"),
        });
    }
    if let Some((cfg, mc, kappa)) = &lyap_cfg {
        let frac = if w_outside == 0 { 1.0 } else { 1.0 - w_increase as f64 / w_outside as f64 };
        let q = q_min.unwrap_or(f64::NAN);
        monitors.push(MonitorResult {
            name: "lyapunov_w_monotone".into(),
            passed: frac >= cfg.min_fraction && hard.is_none(),
            worst_margin: frac - cfg.min_fraction,
            t_worst_s: w_worst.t,
            detail: format!(
                "W non-increasing at {:.2}% of {w_outside} ticks outside the residual ball; mu = {:.4}, lambda = {:.4}, kappa = {kappa:.4}",
                100.0 * frac,
                mc.mu,
                mc.lambda
            ),
        });
        monitors.push(MonitorResult {
            name: "lyapunov_q_definite".into(),
            passed: q > 0.0,
            worst_margin: q,
            t_worst_s: 0.0,
            detail: format!("lambda_min(Q) = {q:.4e}"),
        });
    }
    let passed = monitors.iter().all(|m| m.passed);
    let report = MonitorReport {
        scenario: name.to_string(),
        system: lp.system().to_string(),
        passed,
        hard_failure: hard,
        terminal_error: terminal,
        t_end_s: t_end,
        control_ticks: ticks,
        saturated_ticks: sat_ticks,
        runtime_s: start.elapsed().as_secs_f64(),
        monitors,
    };
    Ok(RunOutput { trace: Trace { header, rows }, report, errors, w: w_series, q_min_eig: q_min, final_state: x })
}
