//! Sampled contraction certificates.
//!
//! Conditions are checked pointwise on a rectangular grid (plus samples of
//! the switching manifold), not with interval arithmetic. Reports carry the
//! worst sampled value and the grid spacing so the user can judge coverage.
//! Boxes are convex, hence 1-reachable; predicate-restricted regions are
//! assumed convex as well.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    assemble_closed_loop, jump_matrix, switching_jump, BimodalSystem, ClosedLoopField,
    ControlledSystem, JacobianField, SwitchedController, SwitchingFunction,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::filippov::{sliding_field, ModeLabel, Trajectory};
use crate::measures::{matrix_measure, vector_norm, Matrix, MeasureKind};

pub const DEFAULT_TRUNCATION: f64 = 50.0;
/// Bisection target on `|H|` for manifold samples.
pub const SIGMA_LOCATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

/// Region description as written in configuration files. `null` bounds are
/// replaced by `∓truncate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub bounds: Vec<[Option<f64>; 2]>,
    /// Grid nodes per axis; a single entry applies to every axis.
    pub resolution: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default = "default_truncation")]
    pub truncate: f64,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

/// Conjunction of comparisons such as `x2 < 7 && x1 >= -1`.
#[derive(Debug, Clone)]
pub struct Predicate {
    source: String,
    terms: Vec<(Expr, Cmp)>,
}

impl Predicate {
    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Self> {
        let mut terms = Vec::new();
        for part in text.split("&&") {
            let (pos, op, len) = ["<=", ">=", "<", ">"]
                .iter()
                .filter_map(|op| part.find(op).map(|p| (p, *op, op.len())))
                .min_by_key(|(p, _, l)| (*p, std::cmp::Reverse(*l)))
                .ok_or_else(|| {
                    Error::Region(format!("predicate term `{}` has no comparison", part.trim()))
                })?;
            let lhs = Expr::parse(&part[..pos], vars)?;
            let rhs = Expr::parse(&part[pos + len..], vars)?;
            let cmp = match op {
                "<=" => Cmp::Le,
                ">=" => Cmp::Ge,
                "<" => Cmp::Lt,
                _ => Cmp::Gt,
            };
            terms.push((crate::expr::sub(lhs, rhs), cmp));
        }
        Ok(Predicate {
            source: text.trim().to_string(),
            terms,
        })
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        for (e, cmp) in &self.terms {
            let v = e.eval(x)?;
            let ok = match cmp {
                Cmp::Lt => v < 0.0,
                Cmp::Le => v <= 0.0,
                Cmp::Gt => v > 0.0,
                Cmp::Ge => v >= 0.0,
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Grid metadata attached to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    pub spacing: Vec<f64>,
    /// Axes whose bounds were replaced by the truncation value.
    pub truncated_axes: Vec<usize>,
    pub truncate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    pub points: usize,
}

/// A compiled, finite, gridded region.
#[derive(Debug, Clone)]
pub struct Region {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
    predicate: Option<Predicate>,
    truncated_axes: Vec<usize>,
    truncate: f64,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let r = Region {
            lower,
            upper,
            resolution,
            predicate: None,
            truncated_axes: Vec::new(),
            truncate: DEFAULT_TRUNCATION,
        };
        r.validate()?;
        Ok(r)
    }

    /// Same resolution on every axis.
    pub fn uniform(bounds: &[(f64, f64)], resolution: usize) -> Result<Self> {
        Region::new(
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
            vec![resolution; bounds.len()],
        )
    }

    pub fn from_spec<S: AsRef<str>>(spec: &RegionSpec, vars: &[S]) -> Result<Self> {
        let n = vars.len();
        if spec.bounds.len() != n {
            return Err(Error::Region(format!(
                "{} bound pairs for {} variables",
                spec.bounds.len(),
                n
            )));
        }
        if !(spec.truncate > 0.0) || !spec.truncate.is_finite() {
            return Err(Error::Region("truncate must be positive and finite".into()));
        }
        let resolution = match spec.resolution.len() {
            1 => vec![spec.resolution[0]; n],
            k if k == n => spec.resolution.clone(),
            k => {
                return Err(Error::Region(format!(
                    "{} resolution entries for {} variables",
                    k, n
                )))
            }
        };
        let mut truncated_axes = Vec::new();
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for (i, [lo, hi]) in spec.bounds.iter().enumerate() {
            if lo.is_none() || hi.is_none() {
                truncated_axes.push(i);
            }
            lower.push(lo.unwrap_or(-spec.truncate));
            upper.push(hi.unwrap_or(spec.truncate));
        }
        let predicate = spec
            .predicate
            .as_deref()
            .map(|p| Predicate::parse(p, vars))
            .transpose()?;
        let r = Region {
            lower,
            upper,
            resolution,
            predicate,
            truncated_axes,
            truncate: spec.truncate,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_predicate(mut self, predicate: Predicate) -> Self {
        self.predicate = Some(predicate);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.len() != self.resolution.len() {
            return Err(Error::Region("bounds and resolution lengths differ".into()));
        }
        if self.lower.is_empty() {
            return Err(Error::Region("region has no axes".into()));
        }
        for i in 0..self.lower.len() {
            if !self.lower[i].is_finite() || !self.upper[i].is_finite() {
                return Err(Error::Region(format!("axis {} has non-finite bounds", i)));
            }
            if self.lower[i] > self.upper[i] {
                return Err(Error::Region(format!("axis {} has lower > upper", i)));
            }
            if self.resolution[i] < 2 {
                return Err(Error::Region(format!("axis {} needs at least 2 grid nodes", i)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.upper[i] - self.lower[i]) / (self.resolution[i] - 1) as f64)
            .collect()
    }

    /// Same box with every resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Region {
        let mut r = self.clone();
        for v in &mut r.resolution {
            *v *= factor.max(1);
        }
        r
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        match &self.predicate {
            Some(p) => p.contains(x),
            None => Ok(true),
        }
    }

    fn node(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut x = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let k = rem % self.resolution[i];
            rem /= self.resolution[i];
            let t = k as f64 / (self.resolution[i] - 1) as f64;
            // exact endpoints
            x.push(if k + 1 == self.resolution[i] {
                self.upper[i]
            } else {
                self.lower[i] + t * (self.upper[i] - self.lower[i])
            });
        }
        x
    }

    fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Every box node, ignoring the predicate.
    pub fn box_nodes(&self) -> Vec<Vec<f64>> {
        (0..self.node_count()).map(|k| self.node(k)).collect()
    }

    /// Grid nodes inside the region.
    pub fn grid_points(&self) -> Result<Vec<Vec<f64>>> {
        let mut pts = Vec::with_capacity(self.node_count());
        for x in self.box_nodes() {
            if self.contains(&x)? {
                pts.push(x);
            }
        }
        if pts.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(pts)
    }

    pub fn info(&self, points: usize) -> GridInfo {
        GridInfo {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            resolution: self.resolution.clone(),
            spacing: self.spacing(),
            truncated_axes: self.truncated_axes.clone(),
            truncate: self.truncate,
            predicate: self.predicate.as_ref().map(|p| p.source().to_string()),
            points,
        }
    }
}

/// Worst sampled value of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub points: usize,
    /// Largest sampled measure (`None` when no points were checked).
    pub worst: Option<f64>,
    pub worst_point: Option<Vec<f64>>,
    pub threshold: f64,
    pub pass: bool,
}

fn worst_of(values: &[f64], points: &[Vec<f64>]) -> (Option<f64>, Option<Vec<f64>>) {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if !(*v > values[b]) && !v.is_nan() => {}
            _ => best = Some(i),
        }
        if v.is_nan() {
            break;
        }
    }
    match best {
        Some(b) => (Some(values[b]), Some(points[b].clone())),
        None => (None, None),
    }
}

fn measure_all(
    points: &[Vec<f64>],
    kind: MeasureKind,
    jac: &(dyn Fn(&[f64]) -> Result<Matrix> + Sync),
) -> Result<Vec<f64>> {
    points
        .par_iter()
        .map(|p| Ok(matrix_measure(kind, &jac(p)?)))
        .collect()
}

/// `μ(∂f/∂x) ≤ −c` at every grid point. Pass is decided with `≤`.
pub fn check_contraction(
    field: &dyn JacobianField,
    region: &Region,
    kind: MeasureKind,
    c: f64,
) -> Result<MarginReport> {
    let points = region.grid_points()?;
    let values = measure_all(&points, kind, &|x| field.jacobian(x))?;
    let (worst, worst_point) = worst_of(&values, &points);
    Ok(MarginReport {
        points: points.len(),
        worst,
        worst_point,
        threshold: -c,
        pass: worst.is_some_and(|w| w <= -c),
    })
}

/// Manifold samples found on grid lines.
#[derive(Debug, Clone, Default)]
pub struct SigmaSamples {
    pub points: Vec<Vec<f64>>,
    /// Samples dropped because `H` is at a branch tie there.
    pub ties_excluded: usize,
}

/// Locate `H = 0` on every grid segment where `H` changes sign.
pub fn sample_sigma(h: &dyn SwitchingFunction, region: &Region) -> Result<SigmaSamples> {
    let nodes = region.box_nodes();
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|x| h.value(x))
        .collect::<Result<_>>()?;
    let spacing = region.spacing();
    let n = region.dim();
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut stride = 1;
    for axis in 0..n {
        let res = region.resolution[axis];
        for flat in 0..nodes.len() {
            let k = (flat / stride) % res;
            if k + 1 == res {
                continue;
            }
            let (h0, h1) = (values[flat], values[flat + stride]);
            if h0 == 0.0 {
                raw.push(nodes[flat].clone());
            } else if h0 * h1 < 0.0 {
                raw.push(bisect_segment(h, &nodes[flat], &nodes[flat + stride], h0)?);
            }
        }
        stride *= res;
    }
    // nodes on the far boundary with H = 0
    for (flat, v) in values.iter().enumerate() {
        if *v == 0.0 {
            raw.push(nodes[flat].clone());
        }
    }

    let mut out = SigmaSamples::default();
    for p in raw {
        if !region.contains(&p)? {
            continue;
        }
        let dup = out.points.iter().any(|q| {
            p.iter()
                .zip(q)
                .zip(&spacing)
                .all(|((a, b), s)| (a - b).abs() < 0.5 * s.max(f64::MIN_POSITIVE))
        });
        if dup {
            continue;
        }
        if h.is_branch_tie(&p)? {
            out.ties_excluded += 1;
            continue;
        }
        out.points.push(p);
    }
    if out.ties_excluded > 0 {
        log::warn!(
            "{} switching-manifold samples excluded at branch ties of H",
            out.ties_excluded
        );
    }
    if out.points.is_empty() {
        return Err(Error::EmptySigma);
    }
    Ok(out)
}

fn bisect_segment(h: &dyn SwitchingFunction, a: &[f64], b: &[f64], h_a: f64) -> Result<Vec<f64>> {
    let at = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect() };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best = (f64::INFINITY, b.to_vec());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let x = at(mid);
        let v = h.value(&x)?;
        if v.abs() < best.0 {
            best = (v.abs(), x);
        }
        if v == 0.0 || best.0 <= SIGMA_LOCATE_TOL || hi - lo <= f64::EPSILON {
            break;
        }
        if v.signum() == h_a.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

/// Grid points of a region split by the sign of `H`, plus manifold samples.
/// Manifold samples belong to both closures.
#[derive(Debug, Clone)]
pub struct BimodalRegions {
    pub plus: Vec<Vec<f64>>,
    pub minus: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub ties_excluded: usize,
    pub grid: GridInfo,
}

pub fn split_region(h: &dyn SwitchingFunction, region: &Region) -> Result<BimodalRegions> {
    let points = region.grid_points()?;
    let values: Vec<f64> = points
        .par_iter()
        .map(|x| h.value(x))
        .collect::<Result<_>>()?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (p, v) in points.iter().zip(&values) {
        if *v >= 0.0 {
            plus.push(p.clone());
        }
        if *v <= 0.0 {
            minus.push(p.clone());
        }
    }
    let (sigma, ties_excluded) = if plus.is_empty() || minus.is_empty() {
        match sample_sigma(h, region) {
            Ok(s) => (s.points, s.ties_excluded),
            Err(Error::EmptySigma) => (Vec::new(), 0),
            Err(e) => return Err(e),
        }
    } else {
        let s = sample_sigma(h, region)?;
        (s.points, s.ties_excluded)
    };
    Ok(BimodalRegions {
        plus,
        minus,
        sigma,
        ties_excluded,
        grid: region.info(points.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Absolute tolerance for the manifold condition `|μ(jump)| = 0`.
    pub sigma_tol: f64,
    /// Slack for closure points sampled on the manifold, whose location is
    /// only known to `|H| ≤ 1e-10`.
    pub closure_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            sigma_tol: 1e-9,
            closure_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub measure: MeasureKind,
    pub c_bar: f64,
    pub c1: f64,
    pub c2: f64,
    /// Certified rate `min{c1, c2}`; present only on a pass.
    pub c: Option<f64>,
    pub worst_margin_splus: Option<f64>,
    pub worst_margin_sminus: Option<f64>,
    pub worst_sigma_mu: Option<f64>,
    /// `μ` of the negated jump, reported for reference only.
    pub worst_sigma_mu_reversed: Option<f64>,
    /// `min` over both regions of `−μ`.
    pub empirical_rate: Option<f64>,
    pub splus: MarginReport,
    pub sminus: MarginReport,
    pub sigma: MarginReport,
    pub sigma_tol: f64,
    pub closure_tol: f64,
    pub sigma_samples: usize,
    pub ties_excluded: usize,
    pub grid: GridInfo,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict.is_pass()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

type JumpFn<'a> = dyn Fn(&[f64]) -> Result<Matrix> + Sync + 'a;

fn mode_condition(
    grid: &[Vec<f64>],
    sigma: &[Vec<f64>],
    kind: MeasureKind,
    c: f64,
    closure_tol: f64,
    jac: &(dyn Fn(&[f64]) -> Result<Matrix> + Sync),
) -> Result<MarginReport> {
    let grid_vals = measure_all(grid, kind, jac)?;
    let sigma_vals = if grid.is_empty() {
        Vec::new()
    } else {
        measure_all(sigma, kind, jac)?
    };
    let grid_ok = grid_vals.iter().all(|v| *v <= -c);
    let sigma_ok = sigma_vals.iter().all(|v| *v <= -c + closure_tol);
    let all_points: Vec<Vec<f64>> = grid.iter().chain(sigma.iter().take(sigma_vals.len())).cloned().collect();
    let all_vals: Vec<f64> = grid_vals.into_iter().chain(sigma_vals).collect();
    let (worst, worst_point) = worst_of(&all_vals, &all_points);
    Ok(MarginReport {
        points: all_vals.len(),
        worst,
        worst_point,
        threshold: -c,
        pass: grid_ok && sigma_ok,
    })
}

fn certify_with_jump(
    sys: &dyn BimodalSystem,
    regions: &BimodalRegions,
    kind: MeasureKind,
    c1: f64,
    c2: f64,
    opts: &CertifyOptions,
    jump: &JumpFn<'_>,
) -> Result<Certificate> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Invalid(format!("rates must be positive, got c1 = {}, c2 = {}", c1, c2)));
    }
    if regions.plus.is_empty() && regions.minus.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if !regions.plus.is_empty() && !regions.minus.is_empty() && regions.sigma.is_empty() {
        return Err(Error::EmptySigma);
    }
    let splus = mode_condition(&regions.plus, &regions.sigma, kind, c1, opts.closure_tol, &|x| {
        sys.jacobian_plus(x)
    })?;
    let sminus = mode_condition(&regions.minus, &regions.sigma, kind, c2, opts.closure_tol, &|x| {
        sys.jacobian_minus(x)
    })?;

    let jumps: Vec<Matrix> = regions
        .sigma
        .par_iter()
        .map(|x| jump(x))
        .collect::<Result<_>>()?;
    let mus: Vec<f64> = jumps.iter().map(|m| matrix_measure(kind, m)).collect();
    let reversed: Vec<f64> = jumps.iter().map(|m| matrix_measure(kind, &m.scale(-1.0))).collect();
    let abs_mus: Vec<f64> = mus.iter().map(|v| v.abs()).collect();
    let (worst_abs, worst_point) = worst_of(&abs_mus, &regions.sigma);
    let sigma = MarginReport {
        points: mus.len(),
        worst: worst_abs,
        worst_point,
        threshold: opts.sigma_tol,
        pass: abs_mus.iter().all(|v| *v <= opts.sigma_tol),
    };
    let worst_reversed = reversed.iter().cloned().fold(None, |m: Option<f64>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });

    let verdict = Verdict::from_bool(splus.pass && sminus.pass && sigma.pass);
    let empirical_rate = [splus.worst, sminus.worst]
        .iter()
        .flatten()
        .map(|w| -w)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let c = c1.min(c2);
    Ok(Certificate {
        measure: kind,
        c_bar: c,
        c1,
        c2,
        c: verdict.is_pass().then_some(c),
        worst_margin_splus: splus.worst,
        worst_margin_sminus: sminus.worst,
        worst_sigma_mu: sigma.worst,
        worst_sigma_mu_reversed: worst_reversed,
        empirical_rate,
        splus,
        sminus,
        sigma,
        sigma_tol: opts.sigma_tol,
        closure_tol: opts.closure_tol,
        sigma_samples: regions.sigma.len(),
        ties_excluded: regions.ties_excluded,
        grid: regions.grid.clone(),
        verdict,
    })
}

/// Three-condition certificate for a bimodal Filippov system: contraction
/// of `F⁺` on the closure of `S⁺` at rate `c1`, of `F⁻` on the closure of
/// `S⁻` at rate `c2`, and `μ([F⁺ − F⁻] ∇Hᵀ) = 0` on `Σ`.
pub fn certify_bimodal(
    sys: &dyn BimodalSystem,
    regions: &BimodalRegions,
    kind: MeasureKind,
    c1: f64,
    c2: f64,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    certify_with_jump(sys, regions, kind, c1, c2, opts, &|x| switching_jump(sys, x))
}

/// Certificate for `ẋ = f + g u` under a switching controller; the manifold
/// condition uses the jump `(g [u⁺ − u⁻]) ∇Hᵀ`.
pub fn certify_closed_loop(
    sys: Arc<ControlledSystem>,
    ctl: Arc<SwitchedController>,
    region: &Region,
    kind: MeasureKind,
    c1: f64,
    c2: f64,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let cl = assemble_closed_loop(sys.clone(), ctl.clone())?;
    let regions = split_region(ctl.h.as_ref(), region)?;
    ctl.check_regular(&regions.sigma)?;
    certify_with_jump(&cl, &regions, kind, c1, c2, opts, &|x| jump_matrix(&sys, &ctl, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub t: f64,
    pub distance: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub pair: String,
    pub k: f64,
    pub lambda: f64,
    pub norm: MeasureKind,
    pub tolerance: f64,
    pub initial_distance: f64,
    pub max_ratio: f64,
    pub max_ratio_time: f64,
    pub verdict: Verdict,
    #[serde(skip)]
    pub samples: Vec<DecaySample>,
}

impl DecayReport {
    /// `t, distance, bound, ratio` with `bound = K e^{−λ t} |Δ0|`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "distance", "bound", "ratio"])?;
        for s in &self.samples {
            w.write_record([
                s.t.to_string(),
                s.distance.to_string(),
                s.bound.to_string(),
                s.ratio.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_DECAY_TOL: f64 = 1e-6;

/// Compare `|x(t) − y(t)|` with `K e^{−λ(t−t0)} |x0 − y0|` sample by sample.
/// Passes when every ratio is at most `1 + tolerance`.
pub fn check_decay(
    pair: &str,
    x: &Trajectory,
    y: &Trajectory,
    k: f64,
    lambda: f64,
    kind: MeasureKind,
    tolerance: f64,
) -> Result<DecayReport> {
    if x.len() != y.len() {
        return Err(Error::GridMismatch(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::GridMismatch("empty trajectories".into()));
    }
    for (a, b) in x.times.iter().zip(&y.times) {
        if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
            return Err(Error::GridMismatch(format!("sample times {} and {} differ", a, b)));
        }
    }
    let t0 = x.times[0];
    let diff = |i: usize| -> f64 {
        let d: Vec<f64> = x.states[i].iter().zip(&y.states[i]).map(|(a, b)| a - b).collect();
        vector_norm(kind, &d)
    };
    let d0 = diff(0);
    let mut samples = Vec::with_capacity(x.len());
    let mut max_ratio = f64::NEG_INFINITY;
    let mut max_ratio_time = t0;
    for i in 0..x.len() {
        let t = x.times[i];
        let distance = diff(i);
        let bound = k * (-lambda * (t - t0)).exp() * d0;
        let ratio = if bound > 0.0 {
            distance / bound
        } else if distance == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > max_ratio || ratio.is_nan() {
            max_ratio = ratio;
            max_ratio_time = t;
        }
        samples.push(DecaySample {
            t,
            distance,
            bound,
            ratio,
        });
    }
    Ok(DecayReport {
        pair: pair.to_string(),
        k,
        lambda,
        norm: kind,
        tolerance,
        initial_distance: d0,
        max_ratio,
        max_ratio_time,
        verdict: Verdict::from_bool(max_ratio <= 1.0 + tolerance),
        samples,
    })
}

/// `∫ ‖u(x(t))‖₂² dt` by the trapezoidal rule, with `u` chosen by the
/// sample's mode (the Filippov-averaged input while sliding).
pub fn control_effort(traj: &Trajectory, cl: &ClosedLoopField) -> Result<f64> {
    let sq = |i: usize| -> Result<f64> {
        let x = &traj.states[i];
        let u = match traj.modes[i] {
            ModeLabel::Plus => cl.control_plus(x)?,
            ModeLabel::Minus => cl.control_minus(x)?,
            ModeLabel::Sliding => {
                let grad = cl.switching().gradient(x)?;
                let (_, alpha) = sliding_field(&cl.plus(x)?, &cl.minus(x)?, &grad)?;
                cl.control_plus(x)?
                    .iter()
                    .zip(cl.control_minus(x)?)
                    .map(|(p, m)| alpha * p + (1.0 - alpha) * m)
                    .collect()
            }
        };
        Ok(u.iter().map(|v| v * v).sum())
    };
    let mut total = 0.0;
    let mut prev = match traj.len() {
        0 => return Ok(0.0),
        _ => sq(0)?,
    };
    for i in 1..traj.len() {
        let cur = sq(i)?;
        total += 0.5 * (prev + cur) * (traj.times[i] - traj.times[i - 1]);
        prev = cur;
    }
    Ok(total)
}
