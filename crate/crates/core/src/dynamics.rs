//! Open- and closed-loop vector fields with exact Jacobians.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{Expr, VectorExpr};
use crate::measures::Matrix;

/// Gradients smaller than this make the switching manifold degenerate.
pub const MIN_GRADIENT_NORM: f64 = 1e-9;

/// A smooth field `x ↦ F(x)` that can also report its Jacobian.
pub trait JacobianField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<Matrix>;
}

/// Scalar function whose zero set is the switching manifold.
pub trait SwitchingFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// True at points where `H` is only piecewise smooth and the gradient of
    /// the active branch is ambiguous.
    fn is_branch_tie(&self, _x: &[f64]) -> Result<bool> {
        Ok(false)
    }
    fn describe(&self) -> String;
}

/// A bimodal piecewise-smooth system: `F⁺` where `H > 0`, `F⁻` where `H < 0`.
pub trait BimodalSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn plus(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn minus(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian_plus(&self, x: &[f64]) -> Result<Matrix>;
    fn jacobian_minus(&self, x: &[f64]) -> Result<Matrix>;
    fn switching(&self) -> &dyn SwitchingFunction;
}

fn to_matrix(exprs: &[Vec<Expr>], x: &[f64]) -> Result<Matrix> {
    let n = exprs.len();
    let mut m = Matrix::zeros(n);
    for (i, row) in exprs.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = e.eval(x)?;
        }
    }
    Ok(m)
}

/// A smooth field given by expressions, differentiated symbolically.
#[derive(Debug, Clone)]
pub struct ExprField {
    field: VectorExpr,
    jac: Vec<Vec<Expr>>,
}

impl ExprField {
    pub fn new(field: VectorExpr) -> Result<Self> {
        if field.len() != field.state_dim() {
            return Err(Error::Dimension(format!(
                "vector field has {} components for a {}-dimensional state",
                field.len(),
                field.state_dim()
            )));
        }
        let jac = field.jacobian();
        Ok(ExprField { field, jac })
    }

    pub fn parse<S: AsRef<str>, T: AsRef<str>>(texts: &[T], vars: &[S]) -> Result<Self> {
        ExprField::new(VectorExpr::parse(texts, vars)?)
    }

    pub fn exprs(&self) -> &VectorExpr {
        &self.field
    }

    pub fn jacobian_exprs(&self) -> &[Vec<Expr>] {
        &self.jac
    }
}

impl JacobianField for ExprField {
    fn dim(&self) -> usize {
        self.field.state_dim()
    }
    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.field.eval(x)?)
    }
    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("state of length {}", x.len())));
        }
        to_matrix(&self.jac, x)
    }
}

/// Switching function given by an explicit expression.
#[derive(Debug, Clone)]
pub struct ExprSwitching {
    h: Expr,
    grad: Vec<Expr>,
}

impl ExprSwitching {
    pub fn new(h: Expr, state_dim: usize) -> Self {
        let grad = (0..state_dim).map(|j| h.differentiate(j).expr).collect();
        ExprSwitching { h, grad }
    }

    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Self> {
        Ok(ExprSwitching::new(Expr::parse(text, vars)?, vars.len()))
    }
}

impl SwitchingFunction for ExprSwitching {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.h.eval(x)?)
    }
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grad.iter().map(|e| Ok(e.eval(x)?)).collect()
    }
    fn describe(&self) -> String {
        self.h.to_string()
    }
}

/// `ẋ = f(x) + g(x) u` with `m` input channels; `g` is stored by column.
#[derive(Debug, Clone)]
pub struct ControlledSystem {
    vars: Vec<String>,
    f: ExprField,
    g: Vec<VectorExpr>,
    g_jac: Vec<Vec<Vec<Expr>>>,
}

impl ControlledSystem {
    pub fn new(vars: Vec<String>, f: VectorExpr, g: Vec<VectorExpr>) -> Result<Self> {
        let n = vars.len();
        if f.state_dim() != n {
            return Err(Error::Dimension(format!(
                "f is over {} variables, expected {}",
                f.state_dim(),
                n
            )));
        }
        for (k, col) in g.iter().enumerate() {
            if col.len() != n || col.state_dim() != n {
                return Err(Error::Dimension(format!(
                    "column {} of g has {} entries, expected {}",
                    k,
                    col.len(),
                    n
                )));
            }
        }
        let f = ExprField::new(f)?;
        let g_jac = g.iter().map(VectorExpr::jacobian).collect();
        Ok(ControlledSystem { vars, f, g, g_jac })
    }

    /// Parse `f` and the columns of `g` against `vars`.
    pub fn parse<S: AsRef<str>>(vars: &[S], f: &[S], g_columns: &[Vec<S>]) -> Result<Self> {
        let names: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        let f = VectorExpr::parse(f, vars)?;
        let g = g_columns
            .iter()
            .map(|c| VectorExpr::parse(c, vars))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        ControlledSystem::new(names, f, g)
    }

    pub fn state_dim(&self) -> usize {
        self.vars.len()
    }

    pub fn input_dim(&self) -> usize {
        self.g.len()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn open_loop(&self) -> &ExprField {
        &self.f
    }

    pub fn g_columns(&self) -> &[VectorExpr] {
        &self.g
    }

    /// `g(x) u` for a given input value.
    pub fn input_effect(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        for (col, uk) in self.g.iter().zip(u) {
            for (o, gi) in out.iter_mut().zip(col.eval(x)?) {
                *o += gi * uk;
            }
        }
        Ok(out)
    }
}

/// One smooth feedback law `u(x)` with its symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    u: VectorExpr,
    du: Vec<Vec<Expr>>,
}

impl FeedbackLaw {
    pub fn new(u: VectorExpr) -> Self {
        let du = u.jacobian();
        FeedbackLaw { u, du }
    }

    pub fn exprs(&self) -> &VectorExpr {
        &self.u
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.u.eval(x)?)
    }
}

/// `u⁺`, `u⁻` and the switching function `H`.
#[derive(Debug, Clone)]
pub struct SwitchedController {
    pub u_plus: FeedbackLaw,
    pub u_minus: FeedbackLaw,
    pub h: Arc<dyn SwitchingFunction>,
}

impl SwitchedController {
    pub fn new(u_plus: VectorExpr, u_minus: VectorExpr, h: Arc<dyn SwitchingFunction>) -> Self {
        SwitchedController {
            u_plus: FeedbackLaw::new(u_plus),
            u_minus: FeedbackLaw::new(u_minus),
            h,
        }
    }

    /// Parse `u⁺`, `u⁻` and an explicit `H` expression.
    pub fn parse<S: AsRef<str>>(vars: &[S], u_plus: &[S], u_minus: &[S], h: &str) -> Result<Self> {
        Ok(SwitchedController::new(
            VectorExpr::parse(u_plus, vars)?,
            VectorExpr::parse(u_minus, vars)?,
            Arc::new(ExprSwitching::parse(h, vars)?),
        ))
    }

    /// Check the manifold is regular at the given points.
    pub fn check_regular(&self, points: &[Vec<f64>]) -> Result<()> {
        for p in points {
            let norm = self.h.gradient(p)?.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !(norm > MIN_GRADIENT_NORM) {
                return Err(Error::DegenerateGradient {
                    point: p.clone(),
                    norm,
                });
            }
        }
        Ok(())
    }
}

/// `F±(x) = f(x) + g(x) u±(x)` with Jacobians from the product-rule expansion
/// `∂f/∂x + Σᵢ (∂gᵢ/∂x uᵢ± + gᵢ ∂uᵢ±/∂x)`.
#[derive(Debug, Clone)]
pub struct ClosedLoopField {
    sys: Arc<ControlledSystem>,
    ctl: Arc<SwitchedController>,
}

impl ClosedLoopField {
    pub fn sys(&self) -> &ControlledSystem {
        &self.sys
    }

    pub fn controller(&self) -> &SwitchedController {
        &self.ctl
    }

    fn field(&self, law: &FeedbackLaw, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.sys.f.value(x)?;
        let u = law.eval(x)?;
        for (o, d) in out.iter_mut().zip(self.sys.input_effect(x, &u)?) {
            *o += d;
        }
        Ok(out)
    }

    fn field_jacobian(&self, law: &FeedbackLaw, x: &[f64]) -> Result<Matrix> {
        let n = self.sys.state_dim();
        let mut jac = self.sys.f.jacobian(x)?;
        let u = law.eval(x)?;
        for (k, uk) in u.iter().enumerate() {
            let gk = self.sys.g[k].eval(x)?;
            let dgk = to_matrix(&self.sys.g_jac[k], x)?;
            let duk: Vec<f64> = law.du[k]
                .iter()
                .map(|e| e.eval(x))
                .collect::<std::result::Result<_, _>>()?;
            for i in 0..n {
                for j in 0..n {
                    jac[(i, j)] += dgk[(i, j)] * uk + gk[i] * duk[j];
                }
            }
        }
        Ok(jac)
    }

    pub fn control_plus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.ctl.u_plus.eval(x)
    }

    pub fn control_minus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.ctl.u_minus.eval(x)
    }
}

impl BimodalSystem for ClosedLoopField {
    fn dim(&self) -> usize {
        self.sys.state_dim()
    }
    fn plus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.field(&self.ctl.u_plus, x)
    }
    fn minus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.field(&self.ctl.u_minus, x)
    }
    fn jacobian_plus(&self, x: &[f64]) -> Result<Matrix> {
        self.field_jacobian(&self.ctl.u_plus, x)
    }
    fn jacobian_minus(&self, x: &[f64]) -> Result<Matrix> {
        self.field_jacobian(&self.ctl.u_minus, x)
    }
    fn switching(&self) -> &dyn SwitchingFunction {
        self.ctl.h.as_ref()
    }
}

pub fn assemble_closed_loop(
    sys: Arc<ControlledSystem>,
    ctl: Arc<SwitchedController>,
) -> Result<ClosedLoopField> {
    let m = sys.input_dim();
    for (label, law) in [("u+", &ctl.u_plus), ("u-", &ctl.u_minus)] {
        if law.u.len() != m || law.u.state_dim() != sys.state_dim() {
            return Err(Error::Dimension(format!(
                "{} has {} components over {} variables; the system has {} inputs and {} states",
                label,
                law.u.len(),
                law.u.state_dim(),
                m,
                sys.state_dim()
            )));
        }
    }
    Ok(ClosedLoopField { sys, ctl })
}

/// A bimodal system with `F⁺`, `F⁻` given directly as expressions.
#[derive(Debug, Clone)]
pub struct ExprBimodal {
    plus: ExprField,
    minus: ExprField,
    h: Arc<dyn SwitchingFunction>,
}

impl ExprBimodal {
    pub fn new(plus: ExprField, minus: ExprField, h: Arc<dyn SwitchingFunction>) -> Result<Self> {
        if plus.dim() != minus.dim() {
            return Err(Error::Dimension("F+ and F- differ in dimension".into()));
        }
        Ok(ExprBimodal { plus, minus, h })
    }

    pub fn parse<S: AsRef<str>>(vars: &[S], plus: &[S], minus: &[S], h: &str) -> Result<Self> {
        ExprBimodal::new(
            ExprField::parse(plus, vars)?,
            ExprField::parse(minus, vars)?,
            Arc::new(ExprSwitching::parse(h, vars)?),
        )
    }
}

impl BimodalSystem for ExprBimodal {
    fn dim(&self) -> usize {
        self.plus.dim()
    }
    fn plus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.plus.value(x)
    }
    fn minus(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.minus.value(x)
    }
    fn jacobian_plus(&self, x: &[f64]) -> Result<Matrix> {
        self.plus.jacobian(x)
    }
    fn jacobian_minus(&self, x: &[f64]) -> Result<Matrix> {
        self.minus.jacobian(x)
    }
    fn switching(&self) -> &dyn SwitchingFunction {
        self.h.as_ref()
    }
}

fn checked_gradient(h: &dyn SwitchingFunction, x: &[f64]) -> Result<Vec<f64>> {
    let grad = h.gradient(x)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(norm > MIN_GRADIENT_NORM) {
        return Err(Error::DegenerateGradient {
            point: x.to_vec(),
            norm,
        });
    }
    Ok(grad)
}

/// `[F⁺(x) − F⁻(x)] ∇H(x)ᵀ` for any bimodal system.
pub fn switching_jump(sys: &dyn BimodalSystem, x: &[f64]) -> Result<Matrix> {
    let grad = checked_gradient(sys.switching(), x)?;
    let diff: Vec<f64> = sys
        .plus(x)?
        .iter()
        .zip(sys.minus(x)?)
        .map(|(p, m)| p - m)
        .collect();
    Ok(Matrix::outer(&diff, &grad)?)
}

/// `(g(x) [u⁺(x) − u⁻(x)]) ∇H(x)ᵀ`.
pub fn jump_matrix(sys: &ControlledSystem, ctl: &SwitchedController, x: &[f64]) -> Result<Matrix> {
    let grad = checked_gradient(ctl.h.as_ref(), x)?;
    let du: Vec<f64> = ctl
        .u_plus
        .eval(x)?
        .iter()
        .zip(ctl.u_minus.eval(x)?)
        .map(|(p, m)| p - m)
        .collect();
    let effect = sys.input_effect(x, &du)?;
    Ok(Matrix::outer(&effect, &grad)?)
}
