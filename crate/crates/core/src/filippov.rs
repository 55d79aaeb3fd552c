//! Simulation of bimodal Filippov systems.
//!
//! Inside `S⁺`/`S⁻` the smooth field is integrated with fixed-step RK4.
//! When `H` changes sign over a step the crossing time is located by
//! bisection on the RK4 sub-step from the start of the step, and the point is
//! classified as crossing, attracting sliding, or escaping. Sliding motion
//! uses the Filippov convex combination
//! `F_s = α F⁺ + (1 − α) F⁻`, `α = ∇H·F⁻ / ∇H·(F⁻ − F⁺)`, projected back
//! onto `Σ` after every step. Escaping points violate right-uniqueness and
//! abort the run.
//!
//! Samples are recorded on the uniform grid `t0 + k·step` so that two runs
//! with the same step share a time grid; events are kept separately.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::BimodalSystem;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    Plus,
    Minus,
    Sliding,
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeLabel::Plus => "plus",
            ModeLabel::Minus => "minus",
            ModeLabel::Sliding => "sliding",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Crossing,
    SlideEntry,
    SlideExit,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Crossing => "crossing",
            EventKind::SlideEntry => "slide-entry",
            EventKind::SlideExit => "slide-exit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub state: Vec<f64>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub modes: Vec<ModeLabel>,
    /// `H(x)` at each sample.
    pub switching: Vec<f64>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    fn push(&mut self, t: f64, x: &[f64], mode: ModeLabel, h: f64) {
        self.times.push(t);
        self.states.push(x.to_vec());
        self.modes.push(mode);
        self.switching.push(h);
    }

    /// One row per sample: `t, <vars>, mode, H`.
    pub fn write_csv<W: Write, S: AsRef<str>>(&self, out: W, vars: &[S]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(vars.iter().map(|v| v.as_ref().to_string()));
        header.push("mode".into());
        header.push("H".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.states[i].iter().map(f64::to_string));
            row.push(self.modes[i].to_string());
            row.push(self.switching[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per event: `t, <vars>, kind`.
    pub fn write_events_csv<W: Write, S: AsRef<str>>(&self, out: W, vars: &[S]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(vars.iter().map(|v| v.as_ref().to_string()));
        header.push("kind".into());
        w.write_record(&header)?;
        for e in &self.events {
            let mut row = vec![e.time.to_string()];
            row.extend(e.state.iter().map(f64::to_string));
            row.push(e.kind.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error("escaping region reached at t = {time}, x = {state:?} (right-uniqueness violated)")]
    Escaping {
        time: f64,
        state: Vec<f64>,
        partial: Trajectory,
    },
    #[error("finite escape: |x| exceeded {bound:e} at t = {time}")]
    FiniteEscape {
        time: f64,
        bound: f64,
        partial: Trajectory,
    },
    #[error("more than {limit} mode changes within one step at t = {time}")]
    Zeno {
        time: f64,
        limit: usize,
        partial: Trajectory,
    },
    #[error("field evaluation failed at t = {time}: {source}")]
    Field {
        time: f64,
        #[source]
        source: Box<Error>,
        partial: Trajectory,
    },
}

impl SimulationError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            SimulationError::InvalidInput(_) => None,
            SimulationError::Escaping { partial, .. }
            | SimulationError::FiniteEscape { partial, .. }
            | SimulationError::Zeno { partial, .. }
            | SimulationError::Field { partial, .. } => Some(partial),
        }
    }
}

/// Outcome of inspecting the normal components of `F±` on `Σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeDecision {
    /// Both fields push through `Σ`; continue in the given side.
    Crossing(ModeLabel),
    /// Both fields point toward `Σ`.
    Sliding { alpha: f64 },
    /// Both fields point away from `Σ`.
    Escaping,
    /// Both normal components vanish.
    Tangent,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classify using `a = ∇H·F⁺`, `b = ∇H·F⁻`.
pub fn classify_normals(a: f64, b: f64) -> ModeDecision {
    if a * b > 0.0 {
        ModeDecision::Crossing(if a > 0.0 {
            ModeLabel::Plus
        } else {
            ModeLabel::Minus
        })
    } else if a == 0.0 && b == 0.0 {
        ModeDecision::Tangent
    } else if a <= 0.0 && b >= 0.0 {
        ModeDecision::Sliding { alpha: b / (b - a) }
    } else {
        ModeDecision::Escaping
    }
}

pub fn classify_vectors(grad: &[f64], f_plus: &[f64], f_minus: &[f64]) -> ModeDecision {
    classify_normals(dot(grad, f_plus), dot(grad, f_minus))
}

pub fn classify(sys: &dyn BimodalSystem, x: &[f64]) -> Result<ModeDecision, Error> {
    let grad = sys.switching().gradient(x)?;
    Ok(classify_vectors(&grad, &sys.plus(x)?, &sys.minus(x)?))
}

/// Filippov sliding vector field. Returns `(F_s, α)`.
pub fn sliding_field(
    f_plus: &[f64],
    f_minus: &[f64],
    grad: &[f64],
) -> Result<(Vec<f64>, f64), Error> {
    let a = dot(grad, f_plus);
    let b = dot(grad, f_minus);
    let den = b - a;
    if den.abs() < 1e-12 {
        return Err(Error::Invalid(format!(
            "sliding field undefined: grad H . (F- - F+) = {:e}",
            den
        )));
    }
    let alpha = b / den;
    let fs = f_plus
        .iter()
        .zip(f_minus)
        .map(|(p, m)| alpha * p + (1.0 - alpha) * m)
        .collect();
    Ok((fs, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub step: f64,
    /// Event location target on `|H|`.
    pub event_tol: f64,
    /// Finite-escape guard on `‖x‖∞`.
    pub divergence_bound: f64,
    pub max_events_per_step: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            step: 1e-3,
            event_tol: 1e-10,
            divergence_bound: 1e6,
            max_events_per_step: 64,
        }
    }
}

impl SimOptions {
    pub fn with_step(step: f64) -> Self {
        SimOptions {
            step,
            ..Default::default()
        }
    }
}

type Field<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>, Error> + 'a;

fn rk4(f: &Field<'_>, x: &[f64], h: f64) -> Result<Vec<f64>, Error> {
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + s * b).collect()
    };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, &k1, 0.5 * h))?;
    let k3 = f(&axpy(x, &k2, 0.5 * h))?;
    let k4 = f(&axpy(x, &k3, h))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn grid(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>, SimulationError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(SimulationError::InvalidInput(format!("step must be positive, got {}", step)));
    }
    if !(t1 > t0) {
        return Err(SimulationError::InvalidInput(format!(
            "empty time span [{}, {}]",
            t0, t1
        )));
    }
    let n = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|k| t0 + k as f64 * step).collect();
    times.push(t1);
    Ok(times)
}

struct FilippovRun<'a> {
    sys: &'a dyn BimodalSystem,
    opts: SimOptions,
    traj: Trajectory,
}

impl<'a> FilippovRun<'a> {
    fn h(&self, x: &[f64]) -> Result<f64, Error> {
        self.sys.switching().value(x)
    }

    fn smooth(&self, mode: ModeLabel, x: &[f64]) -> Result<Vec<f64>, Error> {
        match mode {
            ModeLabel::Plus => self.sys.plus(x),
            _ => self.sys.minus(x),
        }
    }

    fn sliding(&self, x: &[f64]) -> Result<(Vec<f64>, f64), Error> {
        let grad = self.sys.switching().gradient(x)?;
        sliding_field(&self.sys.plus(x)?, &self.sys.minus(x)?, &grad)
    }

    fn project(&self, mut x: Vec<f64>) -> Result<Vec<f64>, Error> {
        for _ in 0..3 {
            let h = self.h(&x)?;
            if h.abs() <= 1e-13 {
                break;
            }
            let grad = self.sys.switching().gradient(&x)?;
            let g2 = dot(&grad, &grad);
            if g2 == 0.0 {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= h * gi / g2;
            }
        }
        Ok(x)
    }

    fn slide_step(&self, x: &[f64], dt: f64) -> Result<Vec<f64>, Error> {
        let field = |y: &[f64]| self.sliding(y).map(|(fs, _)| fs);
        self.project(rk4(&field, x, dt)?)
    }

    /// Mode to enter at a point on `Σ`, and the event kind it implies.
    fn decide(
        &self,
        t: f64,
        x: &[f64],
        from: ModeLabel,
    ) -> Result<(ModeLabel, EventKind), SimulationError> {
        let decision = classify(self.sys, x).map_err(|e| self.field_error(t, e))?;
        Ok(match decision {
            ModeDecision::Crossing(side) => (side, EventKind::Crossing),
            ModeDecision::Sliding { .. } => (ModeLabel::Sliding, EventKind::SlideEntry),
            ModeDecision::Tangent => {
                let side = if from == ModeLabel::Plus {
                    ModeLabel::Minus
                } else {
                    ModeLabel::Plus
                };
                (side, EventKind::Crossing)
            }
            ModeDecision::Escaping => {
                return Err(SimulationError::Escaping {
                    time: t,
                    state: x.to_vec(),
                    partial: self.traj.clone(),
                })
            }
        })
    }

    fn field_error(&self, time: f64, e: Error) -> SimulationError {
        SimulationError::Field {
            time,
            source: Box::new(e),
            partial: self.traj.clone(),
        }
    }

    fn initial_mode(&mut self, t0: f64, x0: &[f64]) -> Result<ModeLabel, SimulationError> {
        let h = self.h(x0).map_err(|e| self.field_error(t0, e))?;
        if h > self.opts.event_tol {
            return Ok(ModeLabel::Plus);
        }
        if h < -self.opts.event_tol {
            return Ok(ModeLabel::Minus);
        }
        let (mode, _) = self.decide(t0, x0, ModeLabel::Minus)?;
        if mode == ModeLabel::Sliding {
            self.traj.events.push(Event {
                time: t0,
                state: x0.to_vec(),
                kind: EventKind::SlideEntry,
            });
        }
        Ok(mode)
    }

    fn advance(
        &mut self,
        t: &mut f64,
        x: &mut Vec<f64>,
        mode: &mut ModeLabel,
        t_end: f64,
    ) -> Result<(), Error> {
        let mut changes = 0;
        while *t < t_end {
            let dt = t_end - *t;
            match *mode {
                ModeLabel::Plus | ModeLabel::Minus => {
                    let m = *mode;
                    let field = |y: &[f64]| self.smooth(m, y);
                    let x_new = rk4(&field, x, dt)?;
                    let h_new = self.h(&x_new)?;
                    let crossed = match m {
                        ModeLabel::Plus => h_new < 0.0,
                        _ => h_new > 0.0,
                    };
                    if !crossed || !h_new.is_finite() {
                        *x = x_new;
                        *t = t_end;
                        continue;
                    }
                    let (theta, xe) = self.locate_crossing(&field, x, dt, h_new)?;
                    *t += theta * dt;
                    *x = xe;
                }
                ModeLabel::Sliding => {
                    let x_new = self.slide_step(x, dt)?;
                    let (_, alpha) = self.sliding(&x_new)?;
                    if (0.0..=1.0).contains(&alpha) {
                        *x = x_new;
                        *t = t_end;
                        continue;
                    }
                    let (theta, xe, alpha_e) = self.locate_exit(x, dt, (x_new, alpha))?;
                    *t += theta * dt;
                    *x = xe;
                    *mode = if alpha_e > 1.0 {
                        ModeLabel::Plus
                    } else {
                        ModeLabel::Minus
                    };
                    self.traj.events.push(Event {
                        time: *t,
                        state: x.clone(),
                        kind: EventKind::SlideExit,
                    });
                    changes += 1;
                    if changes > self.opts.max_events_per_step {
                        return Err(self.zeno(*t));
                    }
                    continue;
                }
            }
            // a crossing of Σ was located from a smooth mode
            let (next, kind) = self
                .decide(*t, x, *mode)
                .map_err(|e| Error::Simulation(Box::new(e)))?;
            if next == ModeLabel::Sliding {
                *x = self.project(std::mem::take(x))?;
            }
            self.traj.events.push(Event {
                time: *t,
                state: x.clone(),
                kind,
            });
            *mode = next;
            changes += 1;
            if changes > self.opts.max_events_per_step {
                return Err(self.zeno(*t));
            }
        }
        Ok(())
    }

    /// Bisection on the RK4 sub-step length for the zero of `H`.
    fn locate_crossing(
        &self,
        field: &Field<'_>,
        x: &[f64],
        dt: f64,
        h_end: f64,
    ) -> Result<(f64, Vec<f64>), Error> {
        let h_start = self.h(x)?;
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut best = (1.0, rk4(field, x, dt)?, h_end);
        if h_start == 0.0 {
            return Ok((0.0, x.to_vec()));
        }
        for _ in 0..200 {
            if best.2.abs() <= self.opts.event_tol || (hi - lo) * dt <= 1e-15 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let xm = rk4(field, x, mid * dt)?;
            let hm = self.h(&xm)?;
            if hm == 0.0 || hm.signum() != h_start.signum() {
                hi = mid;
                best = (mid, xm, hm);
            } else {
                lo = mid;
                if hm.abs() <= self.opts.event_tol {
                    best = (mid, xm, hm);
                }
            }
        }
        Ok((best.0, best.1))
    }

    /// Bisection for the time at which the sliding coefficient leaves [0, 1].
    fn locate_exit(
        &self,
        x: &[f64],
        dt: f64,
        end: (Vec<f64>, f64),
    ) -> Result<(f64, Vec<f64>, f64), Error> {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut best = (1.0, end.0, end.1);
        while (hi - lo) * dt > 1e-13 {
            let mid = 0.5 * (lo + hi);
            let xm = self.slide_step(x, mid * dt)?;
            let (_, alpha) = self.sliding(&xm)?;
            if (0.0..=1.0).contains(&alpha) {
                lo = mid;
            } else {
                hi = mid;
                best = (mid, xm, alpha);
            }
        }
        Ok(best)
    }

    fn zeno(&self, time: f64) -> Error {
        Error::Simulation(Box::new(SimulationError::Zeno {
            time,
            limit: self.opts.max_events_per_step,
            partial: self.traj.clone(),
        }))
    }
}

/// Filippov simulation of a bimodal system from `x0` over `[t0, t1]`.
pub fn simulate(
    sys: &dyn BimodalSystem,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimulationError> {
    if x0.len() != sys.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::InvalidInput(format!(
            "initial state {:?} must be finite with dimension {}",
            x0,
            sys.dim()
        )));
    }
    let times = grid(t0, t1, opts.step)?;
    let mut run = FilippovRun {
        sys,
        opts: *opts,
        traj: Trajectory::default(),
    };
    let mut mode = run.initial_mode(t0, x0)?;
    let mut x = x0.to_vec();
    let mut t = t0;
    let h0 = run.h(&x).map_err(|e| run.field_error(t0, e))?;
    run.traj.push(t0, &x, mode, h0);
    for &t_next in &times[1..] {
        if let Err(e) = run.advance(&mut t, &mut x, &mut mode, t_next) {
            return Err(match e {
                Error::Simulation(inner) => *inner,
                other => run.field_error(t, other),
            });
        }
        if !(sup_norm(&x) <= opts.divergence_bound) {
            return Err(SimulationError::FiniteEscape {
                time: t_next,
                bound: opts.divergence_bound,
                partial: run.traj.clone(),
            });
        }
        let h = run.h(&x).map_err(|e| run.field_error(t_next, e))?;
        run.traj.push(t_next, &x, mode, h);
    }
    Ok(run.traj)
}

/// Smooth odd transition `φ: ℝ → [−1, 1]` evaluated at `s = H/ε`.
pub trait TransitionFunction: Send + Sync {
    fn name(&self) -> &'static str;
    /// Value on `[-1, 1]`; callers clamp `s` outside that interval.
    fn inner(&self, s: f64) -> f64;
    fn eval(&self, s: f64) -> f64 {
        if s >= 1.0 {
            1.0
        } else if s <= -1.0 {
            -1.0
        } else {
            self.inner(s)
        }
    }
}

/// `(3s − s³)/2`, C¹ with flat endpoints.
pub struct CubicTransition;
/// `(15s − 10s³ + 3s⁵)/8`, C² with flat endpoints.
pub struct QuinticTransition;

impl TransitionFunction for CubicTransition {
    fn name(&self) -> &'static str {
        "cubic"
    }
    fn inner(&self, s: f64) -> f64 {
        1.5 * s - 0.5 * s * s * s
    }
}

impl TransitionFunction for QuinticTransition {
    fn name(&self) -> &'static str {
        "quintic"
    }
    fn inner(&self, s: f64) -> f64 {
        let s2 = s * s;
        s * (15.0 - 10.0 * s2 + 3.0 * s2 * s2) / 8.0
    }
}

static CUBIC: CubicTransition = CubicTransition;
static QUINTIC: QuinticTransition = QuinticTransition;

pub fn transition_by_name(name: &str) -> Option<&'static dyn TransitionFunction> {
    match name {
        "cubic" => Some(&CUBIC),
        "quintic" => Some(&QUINTIC),
        _ => None,
    }
}

pub fn transition_names() -> &'static [&'static str] {
    &["cubic", "quintic"]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Boundary-layer half-width.
    pub epsilon: f64,
    #[serde(default = "default_transition")]
    pub transition: String,
    /// RK4 sub-steps per output step; the layer must be resolved in time.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_transition() -> String {
    "cubic".into()
}

fn default_substeps() -> usize {
    1
}

impl RegularizationConfig {
    pub fn new(epsilon: f64) -> Self {
        RegularizationConfig {
            epsilon,
            transition: default_transition(),
            substeps: default_substeps(),
        }
    }

    pub fn validate(&self) -> Result<&'static dyn TransitionFunction, Error> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.substeps == 0 {
            return Err(Error::Invalid("substeps must be at least 1".into()));
        }
        transition_by_name(&self.transition).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown transition function `{}` (known: {})",
                self.transition,
                transition_names().join(", ")
            ))
        })
    }
}

/// `f_ε(x) = (1 + φ(H/ε))/2 F⁺(x) + (1 − φ(H/ε))/2 F⁻(x)`.
pub fn regularized_field(
    sys: &dyn BimodalSystem,
    cfg: &RegularizationConfig,
    x: &[f64],
) -> Result<Vec<f64>, Error> {
    let phi = cfg.validate()?;
    regularized_with(sys, phi, cfg.epsilon, x)
}

fn regularized_with(
    sys: &dyn BimodalSystem,
    phi: &dyn TransitionFunction,
    epsilon: f64,
    x: &[f64],
) -> Result<Vec<f64>, Error> {
    let p = phi.eval(sys.switching().value(x)? / epsilon);
    if p == 1.0 {
        return sys.plus(x);
    }
    if p == -1.0 {
        return sys.minus(x);
    }
    let wp = 0.5 * (1.0 + p);
    let wm = 0.5 * (1.0 - p);
    Ok(sys
        .plus(x)?
        .iter()
        .zip(sys.minus(x)?)
        .map(|(a, b)| wp * a + wm * b)
        .collect())
}

/// RK4 integration of the regularized field on the same output grid as
/// [`simulate`]. Modes are labelled by the sign of `H`; no events.
pub fn simulate_regularized(
    sys: &dyn BimodalSystem,
    cfg: &RegularizationConfig,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimulationError> {
    let phi = cfg
        .validate()
        .map_err(|e| SimulationError::InvalidInput(e.to_string()))?;
    if x0.len() != sys.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::InvalidInput(format!(
            "initial state {:?} must be finite with dimension {}",
            x0,
            sys.dim()
        )));
    }
    let times = grid(t0, t1, opts.step)?;
    let field = |y: &[f64]| regularized_with(sys, phi, cfg.epsilon, y);
    let label = |h: f64| if h >= 0.0 { ModeLabel::Plus } else { ModeLabel::Minus };
    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    let fail = |traj: &Trajectory, time: f64, e: Error| SimulationError::Field {
        time,
        source: Box::new(e),
        partial: traj.clone(),
    };
    let h0 = sys.switching().value(&x).map_err(|e| fail(&traj, t0, e))?;
    traj.push(t0, &x, label(h0), h0);
    for w in times.windows(2) {
        let sub = (w[1] - w[0]) / cfg.substeps as f64;
        for _ in 0..cfg.substeps {
            x = rk4(&field, &x, sub).map_err(|e| fail(&traj, w[0], e))?;
        }
        if !(sup_norm(&x) <= opts.divergence_bound) {
            return Err(SimulationError::FiniteEscape {
                time: w[1],
                bound: opts.divergence_bound,
                partial: traj,
            });
        }
        let h = sys.switching().value(&x).map_err(|e| fail(&traj, w[1], e))?;
        traj.push(w[1], &x, label(h), h);
    }
    Ok(traj)
}

/// A simulation method selectable by name.
pub trait Simulator: Send + Sync {
    fn name(&self) -> &'static str;
    fn simulate(
        &self,
        sys: &dyn BimodalSystem,
        x0: &[f64],
        t0: f64,
        t1: f64,
    ) -> Result<Trajectory, SimulationError>;
}

pub struct FilippovSimulator {
    pub opts: SimOptions,
}

pub struct RegularizedSimulator {
    pub opts: SimOptions,
    pub cfg: RegularizationConfig,
}

impl Simulator for FilippovSimulator {
    fn name(&self) -> &'static str {
        "filippov"
    }
    fn simulate(
        &self,
        sys: &dyn BimodalSystem,
        x0: &[f64],
        t0: f64,
        t1: f64,
    ) -> Result<Trajectory, SimulationError> {
        simulate(sys, x0, t0, t1, &self.opts)
    }
}

impl Simulator for RegularizedSimulator {
    fn name(&self) -> &'static str {
        "regularized"
    }
    fn simulate(
        &self,
        sys: &dyn BimodalSystem,
        x0: &[f64],
        t0: f64,
        t1: f64,
    ) -> Result<Trajectory, SimulationError> {
        simulate_regularized(sys, &self.cfg, x0, t0, t1, &self.opts)
    }
}

type SimulatorFactory = fn(SimOptions, Option<&RegularizationConfig>) -> Result<Box<dyn Simulator>, Error>;

/// Name-indexed simulator constructors.
pub struct SimulatorRegistry {
    entries: Vec<(&'static str, SimulatorFactory)>,
}

impl SimulatorRegistry {
    pub fn builtin() -> Self {
        let mut r = SimulatorRegistry {
            entries: Vec::new(),
        };
        r.register("filippov", |opts, _| Ok(Box::new(FilippovSimulator { opts })));
        r.register("regularized", |opts, cfg| {
            let cfg = cfg
                .cloned()
                .ok_or_else(|| Error::Invalid("regularized simulation needs a regularization block".into()))?;
            cfg.validate()?;
            Ok(Box::new(RegularizedSimulator { opts, cfg }))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: SimulatorFactory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn build(
        &self,
        name: &str,
        opts: SimOptions,
        reg: Option<&RegularizationConfig>,
    ) -> Result<Box<dyn Simulator>, Error> {
        let factory = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| *f)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown simulation method `{}` (known: {})",
                    name,
                    self.names().join(", ")
                ))
            })?;
        factory(opts, reg)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ExprBimodal;

    const XY: [&str; 2] = ["x1", "x2"];

    fn bimodal(plus: [&str; 2], minus: [&str; 2], h: &str) -> ExprBimodal {
        ExprBimodal::parse(&XY, &plus, &minus, h).unwrap()
    }

    #[test]
    fn classification_examples() {
        let g = [0.0, 1.0];
        assert!(matches!(
            classify_vectors(&g, &[1.0, -1.0], &[1.0, 1.0]),
            ModeDecision::Sliding { .. }
        ));
        assert_eq!(
            classify_vectors(&g, &[1.0, -1.0], &[1.0, -1.0]),
            ModeDecision::Crossing(ModeLabel::Minus)
        );
        assert_eq!(
            classify_vectors(&g, &[1.0, 1.0], &[1.0, -1.0]),
            ModeDecision::Escaping
        );
        let sys = bimodal(["1", "1"], ["1", "-1"], "x2");
        assert_eq!(classify(&sys, &[0.0, 0.0]).unwrap(), ModeDecision::Escaping);
    }

    #[test]
    fn sliding_field_examples() {
        let (fs, alpha) = sliding_field(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(alpha, 0.5);
        assert_eq!(fs, vec![1.0, 0.0]);
        let (fs, alpha) = sliding_field(&[2.0, -2.0], &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((fs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(fs[1].abs() < 1e-15);
        assert!(sliding_field(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn smooth_decay_matches_closed_form() {
        let sys = ExprBimodal::parse(&["x"], &["-2*x"], &["-2*x"], "x + 10").unwrap();
        let traj = simulate(&sys, &[1.0], 0.0, 1.0, &SimOptions::default()).unwrap();
        let x1 = traj.last_state().unwrap()[0];
        assert!((x1 - (-2.0f64).exp()).abs() < 1e-6);
        assert_eq!(traj.len(), 1001);
        assert!(traj.events.is_empty());
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn linear_crossing_event() {
        let sys = bimodal(["1", "-1"], ["1", "-1"], "x2");
        let traj = simulate(&sys, &[0.0, 1.0], 0.0, 2.0, &SimOptions::default()).unwrap();
        assert_eq!(traj.events.len(), 1);
        let e = &traj.events[0];
        assert_eq!(e.kind, EventKind::Crossing);
        assert!((e.time - 1.0).abs() < 1e-9);
        assert!((e.state[0] - 1.0).abs() < 1e-9 && e.state[1].abs() < 1e-9);
        assert_eq!(traj.modes[0], ModeLabel::Plus);
        assert_eq!(*traj.modes.last().unwrap(), ModeLabel::Minus);
    }

    #[test]
    fn sliding_motion_stays_on_manifold() {
        // Both sides push toward x2 = 0; sliding field is (1, 0).
        let sys = bimodal(["1", "-1"], ["1", "1"], "x2");
        let traj = simulate(&sys, &[0.0, 0.5], 0.0, 2.0, &SimOptions::default()).unwrap();
        assert_eq!(traj.events[0].kind, EventKind::SlideEntry);
        assert!((traj.events[0].time - 0.5).abs() < 1e-9);
        for (i, m) in traj.modes.iter().enumerate() {
            if *m == ModeLabel::Sliding {
                assert!(traj.switching[i].abs() <= 1e-8);
            }
        }
        let last = traj.last_state().unwrap();
        assert!((last[0] - 2.0).abs() < 1e-9);
        assert!(last[1].abs() < 1e-9);
    }

    #[test]
    fn sliding_exit_when_upper_field_turns() {
        // F+ normal component is x1 - 1: attracting until x1 = 1, then the
        // trajectory leaves into S+.
        let sys = bimodal(["1", "x1 - 1"], ["1", "1"], "x2");
        let traj = simulate(&sys, &[0.0, 0.0], 0.0, 2.0, &SimOptions::default()).unwrap();
        let kinds: Vec<_> = traj.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::SlideEntry, EventKind::SlideExit]);
        assert!((traj.events[1].time - 1.0).abs() < 1e-6);
        assert_eq!(*traj.modes.last().unwrap(), ModeLabel::Plus);
        assert!(traj.last_state().unwrap()[1] > 0.0);
    }

    #[test]
    fn escaping_start_is_an_error() {
        let sys = bimodal(["1", "1"], ["1", "-1"], "x2");
        let err = simulate(&sys, &[0.0, 0.0], 0.0, 1.0, &SimOptions::default()).unwrap_err();
        assert!(matches!(err, SimulationError::Escaping { .. }));
    }

    #[test]
    fn finite_escape_guard() {
        let sys = bimodal(["-4*x1", "x2^2 - 6*x2"], ["-4*x1", "x2^2 - 6*x2"], "x2 - 2");
        let err = simulate(&sys, &[1.0, 9.0], 0.0, 4.0, &SimOptions::default()).unwrap_err();
        match err {
            SimulationError::FiniteEscape { time, partial, .. } => {
                assert!(time < 0.25);
                assert!(partial.states.iter().any(|x| x[1] > 100.0));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn invalid_inputs() {
        let sys = bimodal(["1", "-1"], ["1", "-1"], "x2");
        let opts = SimOptions::default();
        assert!(matches!(
            simulate(&sys, &[0.0, 1.0], 0.0, 0.0, &opts),
            Err(SimulationError::InvalidInput(_))
        ));
        assert!(simulate(&sys, &[0.0], 0.0, 1.0, &opts).is_err());
        assert!(simulate(&sys, &[0.0, 1.0], 0.0, 1.0, &SimOptions::with_step(0.0)).is_err());
    }

    #[test]
    fn regularized_field_limits() {
        let sys = bimodal(["1", "-1"], ["3", "1"], "x2");
        let cfg = RegularizationConfig::new(0.1);
        assert_eq!(regularized_field(&sys, &cfg, &[0.0, 0.2]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(regularized_field(&sys, &cfg, &[0.0, 0.1]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(regularized_field(&sys, &cfg, &[0.0, -0.5]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(regularized_field(&sys, &cfg, &[0.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        assert!(regularized_field(&sys, &RegularizationConfig::new(0.0), &[0.0, 0.0]).is_err());
        let mut bad = RegularizationConfig::new(0.1);
        bad.transition = "tanh".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn transition_functions_are_flat_at_the_ends() {
        for name in transition_names() {
            let phi = transition_by_name(name).unwrap();
            assert_eq!(phi.eval(1.0), 1.0);
            assert_eq!(phi.eval(-1.0), -1.0);
            assert!((phi.inner(1.0) - 1.0).abs() < 1e-15);
            assert_eq!(phi.eval(0.0), 0.0);
            let d = 1e-6;
            let slope = (phi.inner(1.0) - phi.inner(1.0 - d)) / d;
            assert!(slope.abs() < 1e-4, "{} slope {}", name, slope);
            let mut prev = -1.0;
            for k in 0..=200 {
                let s = -1.0 + k as f64 / 100.0;
                let v = phi.eval(s);
                assert!(v >= prev);
                assert!((phi.eval(-s) + v).abs() < 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn simulator_registry() {
        let r = SimulatorRegistry::builtin();
        assert_eq!(r.names(), vec!["filippov", "regularized"]);
        let sys = bimodal(["1", "-1"], ["1", "-1"], "x2");
        let f = r.build("filippov", SimOptions::default(), None).unwrap();
        assert_eq!(f.simulate(&sys, &[0.0, 1.0], 0.0, 0.5).unwrap().len(), 501);
        assert!(r.build("regularized", SimOptions::default(), None).is_err());
        let cfg = RegularizationConfig::new(1e-2);
        assert!(r.build("regularized", SimOptions::default(), Some(&cfg)).is_ok());
        assert!(r.build("euler", SimOptions::default(), None).is_err());
    }

    #[test]
    fn csv_export() {
        let sys = bimodal(["1", "-1"], ["1", "-1"], "x2");
        let traj = simulate(&sys, &[0.0, 1.0], 0.0, 2.0, &SimOptions::with_step(0.5)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &XY).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,mode,H");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,0,1,plus"));
        let mut buf = Vec::new();
        traj.write_events_csv(&mut buf, &XY).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().ends_with(",crossing"));
    }
}
