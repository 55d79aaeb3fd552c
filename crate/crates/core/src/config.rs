//! Project files.
//!
//! A project is a JSON document with expression strings. The two worked
//! examples ship as built-in projects.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{CertifyOptions, Region, RegionSpec, DEFAULT_TRUNCATION};
use crate::dynamics::{ControlledSystem, ExprSwitching, SwitchedController, SwitchingFunction};
use crate::expr::VectorExpr;
use crate::filippov::{RegularizationConfig, SimOptions};
use crate::measures::MeasureKind;
use crate::synth::{build_h, ControllerTemplate, DesignSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}:{column}: {message}")]
    Syntax {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Invalid {
        file: String,
        /// Line of the offending value, 0 when unknown.
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub u_plus: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_minus: Option<Vec<String>>,
    /// Explicit switching function; when absent `H = μ(∂f/∂x) + c̄`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub k: f64,
    pub lambda: f64,
    pub tolerance: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            k: 1.0,
            lambda: 2.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub step: f64,
    pub t_span: [f64; 2],
    /// Pairs of initial conditions compared by the decay check.
    #[serde(default)]
    pub pairs: Vec<[Vec<f64>; 2]>,
    /// Single initial conditions, simulated without a decay check.
    #[serde(default)]
    pub initial_conditions: Vec<Vec<f64>>,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationConfig>,
    #[serde(default)]
    pub decay: DecayConfig,
    /// Continuous feedback whose control effort is compared with the
    /// switched controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effort_baseline: Option<Vec<String>>,
}

fn default_method() -> String {
    "filippov".to_string()
}

impl SimulationConfig {
    pub fn options(&self) -> SimOptions {
        SimOptions::with_step(self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub template: ControllerTemplate,
    pub gain_bounds: [f64; 2],
    pub gain_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub variables: Vec<String>,
    pub f: Vec<String>,
    /// Input columns of `g`, each of length `n`.
    #[serde(default)]
    pub g: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    #[serde(default = "default_measure")]
    pub measure: MeasureKind,
    pub c_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisConfig>,
    #[serde(default)]
    pub certify: CertifyOptions,
}

fn default_measure() -> MeasureKind {
    MeasureKind::One
}

/// A validated project: every expression parsed.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub system: Arc<ControlledSystem>,
    pub controller: Option<Arc<SwitchedController>>,
    pub region: Option<Region>,
    pub source: String,
}

struct Locator<'a> {
    file: &'a str,
    text: &'a str,
}

impl Locator<'_> {
    /// Line of the first occurrence of a JSON string literal.
    fn line_of(&self, needle: &str) -> usize {
        let quoted = serde_json::to_string(needle).unwrap_or_default();
        self.text
            .find(&quoted)
            .map(|pos| self.text[..pos].matches('\n').count() + 1)
            .unwrap_or(0)
    }

    fn invalid(&self, needle: Option<&str>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            file: self.file.to_string(),
            line: needle.map_or(0, |n| self.line_of(n)),
            message: message.into(),
        }
    }

    fn expr_error(&self, what: &str, texts: &[String], err: crate::Error) -> ConfigError {
        let bad = texts
            .iter()
            .find(|t| match crate::expr::Expr::parse(t, &[] as &[&str]) {
                Err(crate::expr::ParseError::UnknownIdentifier { .. }) => false,
                r => r.is_err(),
            })
            .or_else(|| texts.first());
        self.invalid(bad.map(|s| s.as_str()), format!("{}: {}", what, err))
    }
}

impl ProjectConfig {
    pub fn from_json(text: &str, file: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            file: file.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Project, ConfigError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            file: file.clone(),
            source,
        })?;
        ProjectConfig::from_json(&text, &file)?.compile(&text, &file)
    }

    /// Parse and validate every expression. `text` is the original
    /// document, used only for line numbers in diagnostics.
    pub fn compile(self, text: &str, file: &str) -> Result<Project, ConfigError> {
        let loc = Locator { file, text };
        let vars = &self.variables;
        if vars.is_empty() {
            return Err(loc.invalid(None, "no state variables declared"));
        }
        let system = ControlledSystem::parse(vars, &self.f, &self.g)
            .map_err(|e| loc.expr_error("system", &self.f.iter().chain(self.g.iter().flatten()).cloned().collect::<Vec<_>>(), e))?;
        if !(self.c_bar > 0.0) || !self.c_bar.is_finite() {
            return Err(loc.invalid(None, format!("c_bar must be positive, got {}", self.c_bar)));
        }
        let controller = match &self.controller {
            None => None,
            Some(c) => {
                let zero = vec!["0".to_string(); system.input_dim()];
                let u_minus = c.u_minus.clone().unwrap_or(zero);
                let u_plus_e = VectorExpr::parse(&c.u_plus, vars)
                    .map_err(|e| loc.expr_error("u_plus", &c.u_plus, e.into()))?;
                let u_minus_e = VectorExpr::parse(&u_minus, vars)
                    .map_err(|e| loc.expr_error("u_minus", &u_minus, e.into()))?;
                if u_plus_e.len() != system.input_dim() || u_minus_e.len() != system.input_dim() {
                    return Err(loc.invalid(
                        c.u_plus.first().map(|s| s.as_str()),
                        format!("controller needs {} components", system.input_dim()),
                    ));
                }
                let h: Arc<dyn SwitchingFunction> = match &c.h {
                    Some(h) => Arc::new(
                        ExprSwitching::parse(h, vars)
                            .map_err(|e| loc.expr_error("h", std::slice::from_ref(h), e))?,
                    ),
                    None => Arc::new(
                        build_h(&system, self.measure, self.c_bar).map_err(|e| loc.invalid(None, e.to_string()))?,
                    ),
                };
                Some(Arc::new(SwitchedController::new(u_plus_e, u_minus_e, h)))
            }
        };
        let region = match &self.region {
            None => None,
            Some(spec) => Some(Region::from_spec(spec, vars).map_err(|e| {
                loc.invalid(spec.predicate.as_deref(), format!("region: {}", e))
            })?),
        };
        if let Some(sim) = &self.simulation {
            if !(sim.step > 0.0) {
                return Err(loc.invalid(None, "simulation step must be positive"));
            }
            let n = vars.len();
            let bad_dim = sim
                .pairs
                .iter()
                .flat_map(|p| p.iter())
                .chain(sim.initial_conditions.iter())
                .any(|x| x.len() != n);
            if bad_dim {
                return Err(loc.invalid(None, format!("initial conditions must have {} entries", n)));
            }
            if let Some(reg) = &sim.regularization {
                reg.validate().map_err(|e| loc.invalid(None, e.to_string()))?;
            }
            if let Some(base) = &sim.effort_baseline {
                VectorExpr::parse(base, vars)
                    .map_err(|e| loc.expr_error("effort_baseline", base, e.into()))?;
            }
        }
        if let Some(syn) = &self.synthesis {
            if syn.template.channels.len() != system.input_dim() {
                return Err(loc.invalid(
                    None,
                    format!("template needs {} channels", system.input_dim()),
                ));
            }
            for t in syn.template.channels.iter().flatten() {
                crate::expr::Expr::parse(t, vars)
                    .map_err(|e| loc.expr_error("template", std::slice::from_ref(t), e.into()))?;
            }
        }
        Ok(Project {
            system: Arc::new(system),
            controller,
            region,
            config: self,
            source: file.to_string(),
        })
    }

    /// Worked example 1: design region `x2 ≤ 7`, `u⁺ = −10 x2`.
    pub fn example1() -> Self {
        let mut c = base_example();
        c.controller = Some(ControllerConfig {
            u_plus: vec!["-10*x2".into()],
            u_minus: Some(vec!["0".into()]),
            h: None,
        });
        c.region = Some(RegionSpec {
            bounds: vec![[None, None], [None, Some(7.0)]],
            resolution: vec![200],
            predicate: None,
            truncate: DEFAULT_TRUNCATION,
        });
        c.simulation = Some(SimulationConfig {
            pairs: vec![[vec![1.0, 4.0], vec![2.0, 5.0]]],
            effort_baseline: Some(vec!["-10*x2".into()]),
            ..base_simulation()
        });
        c.synthesis = Some(SynthesisConfig {
            template: ControllerTemplate {
                channels: vec![vec!["x2".into()]],
            },
            gain_bounds: [-20.0, 0.0],
            gain_step: 0.5,
        });
        c
    }

    /// Worked example 2: the whole plane (truncated), `u⁺ = −x2²`.
    pub fn example2() -> Self {
        let mut c = base_example();
        c.controller = Some(ControllerConfig {
            u_plus: vec!["-x2^2".into()],
            u_minus: Some(vec!["0".into()]),
            h: None,
        });
        c.region = Some(RegionSpec {
            bounds: vec![[None, None], [None, None]],
            resolution: vec![201],
            predicate: None,
            truncate: DEFAULT_TRUNCATION,
        });
        c.simulation = Some(SimulationConfig {
            pairs: vec![[vec![1.0, 8.0], vec![1.0, 9.0]]],
            ..base_simulation()
        });
        c.synthesis = Some(SynthesisConfig {
            template: ControllerTemplate {
                channels: vec![vec!["x2^2".into()]],
            },
            gain_bounds: [-5.0, 0.0],
            gain_step: 0.5,
        });
        c
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "example1" => Some(ProjectConfig::example1()),
            "example2" => Some(ProjectConfig::example2()),
            _ => None,
        }
    }
}

fn base_example() -> ProjectConfig {
    ProjectConfig {
        variables: vec!["x1".into(), "x2".into()],
        f: vec!["-4*x1".into(), "x2^2 - 6*x2".into()],
        g: vec![vec!["1".into(), "2".into()]],
        controller: None,
        measure: MeasureKind::One,
        c_bar: 2.0,
        region: None,
        simulation: None,
        synthesis: None,
        certify: CertifyOptions::default(),
    }
}

fn base_simulation() -> SimulationConfig {
    SimulationConfig {
        step: 1e-3,
        t_span: [0.0, 4.0],
        pairs: Vec::new(),
        initial_conditions: Vec::new(),
        method: default_method(),
        regularization: None,
        decay: DecayConfig::default(),
        effort_baseline: None,
    }
}

impl Project {
    pub fn builtin(name: &str) -> Option<Project> {
        let cfg = ProjectConfig::builtin(name)?;
        let text = cfg.to_json();
        Some(cfg.compile(&text, name).expect("built-in projects are valid"))
    }

    pub fn kind(&self) -> MeasureKind {
        self.config.measure
    }

    pub fn design_spec(&self) -> Option<DesignSpec> {
        let syn = self.config.synthesis.as_ref()?;
        Some(DesignSpec {
            system: self.system.clone(),
            kind: self.config.measure,
            c_bar: self.config.c_bar,
            region: self.region.clone()?,
            template: syn.template.clone(),
            gain_bounds: (syn.gain_bounds[0], syn.gain_bounds[1]),
            gain_step: syn.gain_step,
            certify: self.config.certify,
        })
    }
}
