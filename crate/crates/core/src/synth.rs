//! Switching-controller design.
//!
//! The switching function is built from the open-loop measure,
//! `H(x) = μ(∂f/∂x(x)) + c̄`, so `S⁻ = {H < 0}` is exactly where the open
//! loop already contracts at rate `c̄` and `u⁻ = 0` there. The remaining
//! work is a gain search for `u⁺` on `S⁺`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{
    certify_closed_loop, split_region, BimodalRegions, Certificate, CertifyOptions, Region,
};
use crate::dynamics::{ControlledSystem, ExprField, JacobianField, SwitchedController, SwitchingFunction};
use crate::error::{Error, Result};
use crate::expr::{self, Expr, VectorExpr};
use crate::measures::{matrix_measure, symmetric_eigen, MeasureKind};

/// Relative tolerance used to decide that two branches of `H` are tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Branch {
    expr: Expr,
    grad: Vec<Expr>,
}

#[derive(Debug, Clone)]
enum Surface {
    /// `μ1` or `μ∞`: a max of smooth branches.
    Branches(Vec<Branch>),
    /// `μ2`: `∂J_ij/∂x_m` for the eigenvalue gradient.
    Spectral(Vec<Vec<Vec<Expr>>>),
}

/// `H(x) = μ(∂f/∂x(x)) + c̄` for an open-loop field `f`.
#[derive(Debug, Clone)]
pub struct MeasureSurface {
    field: ExprField,
    kind: MeasureKind,
    c_bar: f64,
    surface: Surface,
}

fn branch(expr: Expr, n: usize) -> Branch {
    let grad = (0..n).map(|k| expr.differentiate(k).expr).collect();
    Branch { expr, grad }
}

/// Construct `H` for the open loop of `sys`.
pub fn build_h(sys: &ControlledSystem, kind: MeasureKind, c_bar: f64) -> Result<MeasureSurface> {
    if !(c_bar > 0.0) || !c_bar.is_finite() {
        return Err(Error::Invalid(format!("c_bar must be positive, got {}", c_bar)));
    }
    let field = sys.open_loop().clone();
    let n = field.dim();
    let jac = field.jacobian_exprs();
    let surface = match kind {
        MeasureKind::One | MeasureKind::Inf => {
            let mut branches: Vec<Branch> = Vec::with_capacity(n);
            for d in 0..n {
                let mut e = jac[d][d].clone();
                for o in 0..n {
                    if o == d {
                        continue;
                    }
                    let off = match kind {
                        MeasureKind::One => &jac[o][d],
                        _ => &jac[d][o],
                    };
                    e = expr::add(e, expr::abs(off.clone()));
                }
                let b = branch(e, n);
                if !branches.iter().any(|x| x.expr.to_string() == b.expr.to_string()) {
                    branches.push(b);
                }
            }
            Surface::Branches(branches)
        }
        MeasureKind::Two => Surface::Spectral(
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|m| jac[i][j].differentiate(m).expr).collect())
                        .collect()
                })
                .collect(),
        ),
    };
    Ok(MeasureSurface {
        field,
        kind,
        c_bar,
        surface,
    })
}

impl MeasureSurface {
    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn c_bar(&self) -> f64 {
        self.c_bar
    }

    /// Branch values, for `μ1`/`μ∞` surfaces.
    fn branch_values(&self, branches: &[Branch], x: &[f64]) -> Result<Vec<f64>> {
        branches.iter().map(|b| Ok(b.expr.eval(x)?)).collect()
    }

    fn active(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        best
    }

    fn eval_grad(b: &Branch, x: &[f64]) -> Result<Vec<f64>> {
        b.grad.iter().map(|g| Ok(g.eval(x)?)).collect()
    }
}

impl SwitchingFunction for MeasureSurface {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(matrix_measure(self.kind, &self.field.jacobian(x)?) + self.c_bar)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.surface {
            Surface::Branches(branches) => {
                let vals = self.branch_values(branches, x)?;
                Self::eval_grad(&branches[Self::active(&vals)], x)
            }
            Surface::Spectral(djac) => {
                let eig = symmetric_eigen(&self.field.jacobian(x)?);
                let (top, _) = eig.top();
                let v = eig.vector(top);
                let n = v.len();
                let mut grad = vec![0.0; n];
                for (m, g) in grad.iter_mut().enumerate() {
                    for i in 0..n {
                        for j in 0..n {
                            *g += v[i] * v[j] * djac[i][j][m].eval(x)?;
                        }
                    }
                }
                Ok(grad)
            }
        }
    }

    fn is_branch_tie(&self, x: &[f64]) -> Result<bool> {
        match &self.surface {
            Surface::Branches(branches) => {
                let vals = self.branch_values(branches, x)?;
                let top = Self::active(&vals);
                let scale = vals[top].abs().max(1.0);
                let g_top = Self::eval_grad(&branches[top], x)?;
                for (i, v) in vals.iter().enumerate() {
                    if i == top || (vals[top] - v) > TIE_TOL * scale {
                        continue;
                    }
                    let g = Self::eval_grad(&branches[i], x)?;
                    if g.iter().zip(&g_top).any(|(a, b)| (a - b).abs() > TIE_TOL * scale) {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Surface::Spectral(_) => {
                let eig = symmetric_eigen(&self.field.jacobian(x)?);
                let (_, gap) = eig.top();
                Ok(gap < TIE_TOL * eig.values.iter().fold(1.0_f64, |m, v| m.max(v.abs())))
            }
        }
    }

    fn describe(&self) -> String {
        let head = match &self.surface {
            Surface::Branches(b) if b.len() == 1 => b[0].expr.to_string(),
            Surface::Branches(b) => format!(
                "max{{{}}}",
                b.iter().map(|x| x.expr.to_string()).collect::<Vec<_>>().join(", ")
            ),
            Surface::Spectral(_) => "lambda_max(sym(J_f))".to_string(),
        };
        format!("{} + {:?}", head, self.c_bar)
    }
}

/// Split the design region by the sign of `H`. An empty `S⁺` means the open
/// loop already contracts at rate `c̄` on the whole region.
pub fn partition_regions(h: &dyn SwitchingFunction, design: &Region) -> Result<BimodalRegions> {
    let regions = split_region(h, design)?;
    let strictly_plus = regions
        .plus
        .iter()
        .map(|p| h.value(p).map(|v| v > 0.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .any(|b| b);
    if !strictly_plus {
        return Err(Error::AlreadyContracting);
    }
    Ok(regions)
}

/// `uᵢ⁺ = Σⱼ kᵢⱼ basisᵢⱼ(x)`, one basis list per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerTemplate {
    pub channels: Vec<Vec<String>>,
}

impl ControllerTemplate {
    pub fn gain_count(&self) -> usize {
        self.channels.iter().map(|c| c.len()).sum()
    }

    fn parse(&self, sys: &ControlledSystem) -> Result<Vec<Vec<Expr>>> {
        if self.channels.len() != sys.input_dim() {
            return Err(Error::Dimension(format!(
                "template has {} channels, system has {} inputs",
                self.channels.len(),
                sys.input_dim()
            )));
        }
        let mut out = Vec::with_capacity(self.channels.len());
        for ch in &self.channels {
            let mut basis = Vec::with_capacity(ch.len());
            for text in ch {
                let e = Expr::parse(text, sys.vars())?;
                if (0..sys.state_dim()).any(|k| e.differentiate(k).uses_sign_convention) {
                    return Err(Error::Invalid(format!(
                        "template basis `{}` is not continuously differentiable",
                        text
                    )));
                }
                basis.push(e);
            }
            out.push(basis);
        }
        Ok(out)
    }
}

fn instantiate(basis: &[Vec<Expr>], gains: &[f64], state_dim: usize) -> Result<VectorExpr> {
    let mut it = gains.iter();
    let mut comps = Vec::with_capacity(basis.len());
    for ch in basis {
        let mut u = Expr::constant(0.0);
        for b in ch {
            let k = *it.next().expect("gain count matches template");
            u = expr::add(u, expr::mul(Expr::constant(k), b.clone()));
        }
        comps.push(u);
    }
    Ok(VectorExpr::new(comps, state_dim)?)
}

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub system: Arc<ControlledSystem>,
    pub kind: MeasureKind,
    pub c_bar: f64,
    pub region: Region,
    pub template: ControllerTemplate,
    /// Inclusive bounds shared by every gain.
    pub gain_bounds: (f64, f64),
    pub gain_step: f64,
    pub certify: CertifyOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignResult {
    pub h: String,
    pub sigma: String,
    pub measure: MeasureKind,
    pub c_bar: f64,
    pub template: ControllerTemplate,
    /// Gains per channel, aligned with the template.
    pub gains: Vec<Vec<f64>>,
    pub u_plus: Vec<String>,
    pub u_minus: Vec<String>,
    pub already_contracting: bool,
    pub candidates_evaluated: usize,
    pub certificate: Certificate,
}

impl DesignResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design result serializes")
    }

    /// Switched controller with the found gains.
    pub fn controller(&self, spec: &DesignSpec) -> Result<SwitchedController> {
        let sys = &spec.system;
        let h = build_h(sys, spec.kind, spec.c_bar)?;
        let u_plus = VectorExpr::parse(&self.u_plus, sys.vars())?;
        Ok(SwitchedController::new(
            u_plus,
            VectorExpr::zeros(sys.input_dim(), sys.state_dim()),
            Arc::new(h),
        ))
    }
}

/// Reported when no lattice gain satisfies the conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub candidates_evaluated: usize,
    /// Gains with the smallest violation.
    pub best_gains: Vec<f64>,
    /// `max(μ⁺ + c1, μ⁻ + c2, |μ_Σ| − tol)`; positive means failure.
    pub best_violation: f64,
}

fn violation(cert: &Certificate) -> f64 {
    let mut v = f64::NEG_INFINITY;
    if let Some(w) = cert.worst_margin_splus {
        v = v.max(w + cert.c1);
    }
    if let Some(w) = cert.worst_margin_sminus {
        v = v.max(w + cert.c2);
    }
    if let Some(w) = cert.worst_sigma_mu {
        v = v.max(w - cert.sigma_tol);
    }
    v
}

/// Gain vectors on the lattice, smallest Euclidean norm first, then
/// lexicographic.
pub fn gain_lattice(count: usize, bounds: (f64, f64), step: f64) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = bounds;
    if !(step > 0.0) || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!(
            "invalid gain lattice: bounds [{}, {}], step {}",
            lo, hi, step
        )));
    }
    let steps = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut axis: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * step).collect();
    // make 0 exact when it lies on the lattice
    for v in &mut axis {
        if v.abs() < 1e-12 * step {
            *v = 0.0;
        }
    }
    let total = axis.len().checked_pow(count as u32).filter(|t| *t <= 1_000_000);
    let total = total.ok_or_else(|| Error::Invalid("gain lattice exceeds 10^6 points".into()))?;
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut g = vec![0.0; count];
        for slot in g.iter_mut().rev() {
            *slot = axis[rem % axis.len()];
            rem /= axis.len();
        }
        out.push(g);
    }
    let norm = |g: &Vec<f64>| g.iter().map(|v| v * v).sum::<f64>();
    out.sort_by(|a, b| {
        norm(a)
            .total_cmp(&norm(b))
            .then_with(|| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(out)
}

fn split_gains(template: &ControllerTemplate, flat: &[f64]) -> Vec<Vec<f64>> {
    let mut it = flat.iter().copied();
    template
        .channels
        .iter()
        .map(|c| it.by_ref().take(c.len()).collect())
        .collect()
}

/// Scan the gain lattice for the smallest-magnitude `u⁺` whose closed loop
/// passes the certificate on the design region.
pub fn gain_search(spec: &DesignSpec) -> Result<DesignResult> {
    let sys = spec.system.clone();
    let h = Arc::new(build_h(&sys, spec.kind, spec.c_bar)?);
    let basis = spec.template.parse(&sys)?;
    let count = spec.template.gain_count();
    let lattice = gain_lattice(count, spec.gain_bounds, spec.gain_step)?;
    let zero = VectorExpr::zeros(sys.input_dim(), sys.state_dim());

    let certify = |gains: &[f64]| -> Result<(Certificate, VectorExpr)> {
        let u_plus = instantiate(&basis, gains, sys.state_dim())?;
        let ctl = Arc::new(SwitchedController::new(u_plus.clone(), zero.clone(), h.clone()));
        let cert = certify_closed_loop(sys.clone(), ctl, &spec.region, spec.kind, spec.c_bar, spec.c_bar, &spec.certify)?;
        Ok((cert, u_plus))
    };

    let result = |gains: Vec<f64>, cert: Certificate, u_plus: VectorExpr, evaluated: usize, already: bool| {
        DesignResult {
            h: h.describe(),
            sigma: if already {
                "empty".to_string()
            } else {
                format!("{{x : {} = 0}}, {} samples", h.describe(), cert.sigma_samples)
            },
            measure: spec.kind,
            c_bar: spec.c_bar,
            template: spec.template.clone(),
            gains: split_gains(&spec.template, &gains),
            u_plus: u_plus.to_strings(),
            u_minus: zero.to_strings(),
            already_contracting: already,
            candidates_evaluated: evaluated,
            certificate: cert,
        }
    };

    match partition_regions(h.as_ref(), &spec.region) {
        Err(Error::AlreadyContracting) => {
            let gains = vec![0.0; count];
            let (cert, u_plus) = certify(&gains)?;
            return Ok(result(gains, cert, u_plus, 0, true));
        }
        Err(e) => return Err(e),
        Ok(_) => {}
    }

    let batch = rayon::current_num_threads().max(1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0;
    for chunk in lattice.chunks(batch) {
        let outcomes: Vec<Result<(Certificate, VectorExpr)>> =
            chunk.par_iter().map(|g| certify(g)).collect();
        for (gains, outcome) in chunk.iter().zip(outcomes) {
            evaluated += 1;
            let (cert, u_plus) = outcome?;
            if cert.passed() {
                log::info!("gain search: {:?} passes after {} candidates", gains, evaluated);
                return Ok(result(gains.clone(), cert, u_plus, evaluated, false));
            }
            let v = violation(&cert);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, gains.clone()));
            }
        }
    }
    let (best_violation, best_gains) = best.unwrap_or((f64::INFINITY, Vec::new()));
    Err(Error::SearchFailed(Box::new(SearchFailure {
        candidates_evaluated: evaluated,
        best_gains,
        best_violation,
    })))
}
