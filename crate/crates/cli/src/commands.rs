use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::Serialize;

use contraswitch::certify::{check_decay, certify_closed_loop, control_effort, Certificate, DecayReport};
use contraswitch::config::{ConfigError, Project, ProjectConfig, SimulationConfig};
use contraswitch::dynamics::{assemble_closed_loop, ClosedLoopField, JacobianField, SwitchedController};
use contraswitch::expr::VectorExpr;
use contraswitch::filippov::{SimOptions, SimulationError, SimulatorRegistry, Trajectory};
use contraswitch::measures::{matrix_measure, Matrix, MeasureKind};
use contraswitch::synth::gain_search;
use contraswitch::Error;

use crate::{Common, Overrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    CertificateFail = 1,
    Simulation = 2,
    Synthesis = 3,
    Config = 64,
}

pub struct Failure {
    pub code: Exit,
    pub error: anyhow::Error,
}

type Outcome = Result<Exit, Failure>;

fn fail(code: Exit, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    fail(Exit::Config, e)
}

fn io_error(e: impl Into<anyhow::Error>) -> Failure {
    fail(Exit::Config, e)
}

/// Exit code for a library error.
fn classify(e: Error) -> Failure {
    let code = match &e {
        Error::Simulation(_) => Exit::Simulation,
        Error::SearchFailed(_) => Exit::Synthesis,
        Error::Parse(_) | Error::Region(_) | Error::EmptyRegion | Error::Dimension(_) => Exit::Config,
        _ => Exit::CertificateFail,
    };
    fail(code, e)
}

fn load(common: &Common) -> Result<Project, Failure> {
    let (mut cfg, text, origin) = match (&common.config, &common.example) {
        (Some(path), _) => {
            let origin = path.display().to_string();
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", origin))
                .map_err(config_error)?;
            let cfg = ProjectConfig::from_json(&text, &origin).map_err(config_error)?;
            (cfg, text, origin)
        }
        (None, Some(name)) => {
            let cfg = ProjectConfig::builtin(name).expect("clap restricts example names");
            let text = cfg.to_json();
            (cfg, text, name.clone())
        }
        (None, None) => return Err(config_error(anyhow!("either --config or --example is required"))),
    };
    apply_overrides(&mut cfg, &common.overrides)?;
    cfg.compile(&text, &origin).map_err(|e: ConfigError| config_error(e))
}

fn apply_overrides(cfg: &mut ProjectConfig, common: &Overrides) -> Result<(), Failure> {
    if let Some(m) = &common.measure {
        cfg.measure = m.parse::<MeasureKind>().map_err(config_error)?;
    }
    if let Some(c) = common.cbar {
        cfg.c_bar = c;
    }
    if let Some(region) = cfg.region.as_mut() {
        if let Some(n) = common.grid {
            region.resolution = vec![n];
        }
        if let Some(t) = common.truncate {
            region.truncate = t;
        }
    }
    if let (Some(sim), Some(step)) = (cfg.simulation.as_mut(), common.step) {
        sim.step = step;
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(io_error)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(io_error)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_error)
}

fn writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_error)
}

fn write_trajectory(dir: &Path, stem: &str, traj: &Trajectory, vars: &[String]) -> Result<(), Failure> {
    traj.write_csv(writer(&dir.join(format!("{}.csv", stem)))?, vars)
        .map_err(io_error)?;
    traj.write_events_csv(writer(&dir.join(format!("{}_events.csv", stem)))?, vars)
        .map_err(io_error)
}

fn controller(p: &Project) -> Result<Arc<SwitchedController>, Failure> {
    p.controller
        .clone()
        .ok_or_else(|| config_error(anyhow!("{}: no controller block", p.source)))
}

fn closed_loop(p: &Project) -> Result<ClosedLoopField, Failure> {
    assemble_closed_loop(p.system.clone(), controller(p)?).map_err(classify)
}

/// Same plant and switching function with one smooth feedback on both sides.
fn smooth_loop(p: &Project, u: &[String]) -> Result<ClosedLoopField, Failure> {
    let law = VectorExpr::parse(u, p.system.vars()).map_err(|e| config_error(Error::from(e)))?;
    let h = controller(p)?.h.clone();
    let ctl = SwitchedController::new(law.clone(), law, h);
    assemble_closed_loop(p.system.clone(), Arc::new(ctl)).map_err(classify)
}

fn open_loop(p: &Project) -> Result<ClosedLoopField, Failure> {
    smooth_loop(p, &vec!["0".to_string(); p.system.input_dim()])
}

fn run_certificate(p: &Project) -> Result<Certificate, Failure> {
    let region = p
        .region
        .as_ref()
        .ok_or_else(|| config_error(anyhow!("{}: no region block", p.source)))?;
    let c = p.config.c_bar;
    certify_closed_loop(p.system.clone(), controller(p)?, region, p.kind(), c, c, &p.config.certify)
        .map_err(classify)
}

pub fn measure(common: &Common, point: &[f64]) -> Outcome {
    let p = load(common)?;
    if point.len() != p.system.state_dim() {
        return Err(config_error(anyhow!(
            "point has {} entries, system has {} states",
            point.len(),
            p.system.state_dim()
        )));
    }
    let jac: Matrix = p.system.open_loop().jacobian(point).map_err(classify)?;
    for kind in MeasureKind::ALL {
        println!("mu_{} = {}", kind, matrix_measure(kind, &jac));
    }
    Ok(Exit::Pass)
}

fn print_certificate(cert: &Certificate) {
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.6}", v));
    println!(
        "certificate (mu_{}, c = {}): {}",
        cert.measure,
        cert.c_bar,
        if cert.passed() { "pass" } else { "fail" }
    );
    println!("  worst mu on S+   : {}", show(cert.worst_margin_splus));
    println!("  worst mu on S-   : {}", show(cert.worst_margin_sminus));
    println!("  worst |mu| on Sigma: {} ({} samples)", show(cert.worst_sigma_mu), cert.sigma_samples);
}

pub fn certify(common: &Common) -> Outcome {
    let p = load(common)?;
    let cert = run_certificate(&p)?;
    create_out(&common.overrides.out)?;
    write_json(&common.overrides.out.join("certificate.json"), &cert)?;
    print_certificate(&cert);
    Ok(if cert.passed() { Exit::Pass } else { Exit::CertificateFail })
}

pub fn synthesize(common: &Common) -> Outcome {
    let p = load(common)?;
    let spec = p
        .design_spec()
        .ok_or_else(|| config_error(anyhow!("{}: synthesis needs region and synthesis blocks", p.source)))?;
    let result = match gain_search(&spec) {
        Ok(r) => r,
        Err(Error::SearchFailed(report)) => {
            create_out(&common.overrides.out)?;
            write_json(&common.overrides.out.join("search_failure.json"), &report)?;
            return Err(fail(Exit::Synthesis, Error::SearchFailed(report)));
        }
        Err(e) => return Err(classify(e)),
    };
    create_out(&common.overrides.out)?;
    write_json(&common.overrides.out.join("design.json"), &result)?;
    if result.already_contracting {
        println!("open loop already contracting at rate {}; u+ = 0", spec.c_bar);
    }
    println!("H(x) = {}", result.h);
    println!("u+ = [{}], u- = [{}]", result.u_plus.join(", "), result.u_minus.join(", "));
    println!("gains = {:?} after {} candidates", result.gains, result.candidates_evaluated);
    Ok(if result.certificate.passed() { Exit::Pass } else { Exit::Synthesis })
}

fn sim_block(p: &Project) -> Result<&SimulationConfig, Failure> {
    p.config
        .simulation
        .as_ref()
        .ok_or_else(|| config_error(anyhow!("{}: no simulation block", p.source)))
}

struct PairRun {
    report: DecayReport,
    x: Trajectory,
}

/// Simulate one run, writing partial output before reporting a failure.
fn simulate_one(
    sim: &dyn contraswitch::filippov::Simulator,
    sys: &ClosedLoopField,
    x0: &[f64],
    t_span: [f64; 2],
    dir: &Path,
    stem: &str,
    vars: &[String],
) -> Result<Trajectory, Failure> {
    match sim.simulate(sys, x0, t_span[0], t_span[1]) {
        Ok(t) => {
            write_trajectory(dir, stem, &t, vars)?;
            Ok(t)
        }
        Err(e) => {
            if let Some(partial) = e.partial() {
                write_trajectory(dir, &format!("{}_partial", stem), partial, vars)?;
            }
            Err(fail(Exit::Simulation, anyhow!("{}: {}", stem, e)))
        }
    }
}

fn simulate_pairs(p: &Project, sys: &ClosedLoopField, dir: &Path) -> Result<Vec<PairRun>, Failure> {
    let sim_cfg = sim_block(p)?;
    let sim = SimulatorRegistry::builtin()
        .build(&sim_cfg.method, sim_cfg.options(), sim_cfg.regularization.as_ref())
        .map_err(config_error)?;
    let vars = p.system.vars();
    let d = &sim_cfg.decay;
    let mut runs = Vec::new();
    for (i, [x0, y0]) in sim_cfg.pairs.iter().enumerate() {
        let k = i + 1;
        let x = simulate_one(sim.as_ref(), sys, x0, sim_cfg.t_span, dir, &format!("pair{}_x", k), vars)?;
        let y = simulate_one(sim.as_ref(), sys, y0, sim_cfg.t_span, dir, &format!("pair{}_y", k), vars)?;
        let report = check_decay(&format!("pair{}", k), &x, &y, d.k, d.lambda, p.kind(), d.tolerance)
            .map_err(classify)?;
        report
            .write_csv(writer(&dir.join(format!("pair{}_decay.csv", k)))?)
            .map_err(io_error)?;
        runs.push(PairRun { report, x });
    }
    for (i, x0) in sim_cfg.initial_conditions.iter().enumerate() {
        simulate_one(sim.as_ref(), sys, x0, sim_cfg.t_span, dir, &format!("run{}", i + 1), vars)?;
    }
    Ok(runs)
}

fn print_decay(reports: &[&DecayReport]) {
    for r in reports {
        println!(
            "{}: max ratio {:.6} at t = {} (K = {}, lambda = {}): {}",
            r.pair,
            r.max_ratio,
            r.max_ratio_time,
            r.k,
            r.lambda,
            if r.verdict.is_pass() { "pass" } else { "fail" }
        );
    }
}

pub fn simulate(common: &Common) -> Outcome {
    let p = load(common)?;
    let sim_cfg = sim_block(&p)?;
    if !(sim_cfg.t_span[1] > sim_cfg.t_span[0]) {
        return Err(config_error(anyhow!(
            "{}: t_span [{}, {}] is empty",
            p.source,
            sim_cfg.t_span[0],
            sim_cfg.t_span[1]
        )));
    }
    let sys = closed_loop(&p)?;
    create_out(&common.overrides.out)?;
    let runs = simulate_pairs(&p, &sys, &common.overrides.out)?;
    let reports: Vec<&DecayReport> = runs.iter().map(|r| &r.report).collect();
    write_json(&common.overrides.out.join("decay.json"), &reports)?;
    print_decay(&reports);
    Ok(Exit::Pass)
}

#[derive(Serialize)]
struct OpenLoopOutcome {
    x0: Vec<f64>,
    outcome: &'static str,
    time: Option<f64>,
    bound: Option<f64>,
}

#[derive(Serialize)]
struct EffortComparison {
    x0: Vec<f64>,
    t_span: [f64; 2],
    baseline: Vec<String>,
    switched: f64,
    continuous: f64,
    switched_is_lower: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    example: &'a str,
    certificate: bool,
    decay: Vec<(&'a str, bool)>,
    open_loop: &'a [OpenLoopOutcome],
    effort: Option<&'a EffortComparison>,
}

pub fn reproduce(example: &str, overrides: &Overrides) -> Outcome {
    let common = Common {
        config: None,
        example: Some(example.to_string()),
        overrides: overrides.clone(),
    };
    let p = load(&common)?;
    let dir: PathBuf = overrides.out.join(example);
    create_out(&dir)?;
    write_json(&dir.join("config.json"), &p.config)?;

    let cert = run_certificate(&p)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    print_certificate(&cert);

    let sys = closed_loop(&p)?;
    let runs = simulate_pairs(&p, &sys, &dir)?;
    let reports: Vec<&DecayReport> = runs.iter().map(|r| &r.report).collect();
    write_json(&dir.join("decay.json"), &reports)?;
    print_decay(&reports);

    let sim_cfg = sim_block(&p)?;
    let opts = SimOptions::with_step(sim_cfg.step);
    let open = open_loop(&p)?;
    let mut open_outcomes = Vec::new();
    for (i, [x0, y0]) in sim_cfg.pairs.iter().enumerate() {
        for (tag, start) in [("x", x0), ("y", y0)] {
            let stem = format!("open_pair{}_{}", i + 1, tag);
            let outcome = match contraswitch::filippov::simulate(&open, start, sim_cfg.t_span[0], sim_cfg.t_span[1], &opts) {
                Ok(t) => {
                    write_trajectory(&dir, &stem, &t, p.system.vars())?;
                    OpenLoopOutcome {
                        x0: start.clone(),
                        outcome: "completed",
                        time: None,
                        bound: None,
                    }
                }
                Err(SimulationError::FiniteEscape { time, bound, partial }) => {
                    write_trajectory(&dir, &format!("{}_partial", stem), &partial, p.system.vars())?;
                    println!("open loop from {:?}: finite escape at t = {}", start, time);
                    OpenLoopOutcome {
                        x0: start.clone(),
                        outcome: "finite-escape",
                        time: Some(time),
                        bound: Some(bound),
                    }
                }
                Err(e) => return Err(fail(Exit::Simulation, anyhow!("{}: {}", stem, e))),
            };
            open_outcomes.push(outcome);
        }
    }
    write_json(&dir.join("open_loop.json"), &open_outcomes)?;

    let mut effort = None;
    if let (Some(base), Some(first)) = (&sim_cfg.effort_baseline, runs.first()) {
        let cont = smooth_loop(&p, base)?;
        let x0 = first.x.states[0].clone();
        let cont_traj = contraswitch::filippov::simulate(&cont, &x0, sim_cfg.t_span[0], sim_cfg.t_span[1], &opts)
            .map_err(|e| fail(Exit::Simulation, e))?;
        write_trajectory(&dir, "baseline_pair1_x", &cont_traj, p.system.vars())?;
        let switched = control_effort(&first.x, &sys).map_err(classify)?;
        let continuous = control_effort(&cont_traj, &cont).map_err(classify)?;
        println!("control effort: switched {:.6}, continuous {:.6}", switched, continuous);
        let cmp = EffortComparison {
            x0,
            t_span: sim_cfg.t_span,
            baseline: base.clone(),
            switched,
            continuous,
            switched_is_lower: switched < continuous,
        };
        write_json(&dir.join("effort.json"), &cmp)?;
        effort = Some(cmp);
    }

    let decay: Vec<(&str, bool)> = reports.iter().map(|r| (r.pair.as_str(), r.verdict.is_pass())).collect();
    let all_pass = cert.passed() && decay.iter().all(|(_, ok)| *ok);
    write_json(
        &dir.join("summary.json"),
        &Summary {
            example,
            certificate: cert.passed(),
            decay,
            open_loop: &open_outcomes,
            effort: effort.as_ref(),
        },
    )?;
    Ok(if all_pass { Exit::Pass } else { Exit::CertificateFail })
}
