//! Matrix measures (logarithmic norms) and their induced norms.
//!
//! Each supported measure is a [`LogNorm`] strategy. The three built-in
//! strategies are bound to [`MeasureKind`]; [`MeasureRegistry`] resolves
//! them by name for configuration files and the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("oracle step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("dimension mismatch: {0}x{0} and {1}x{1}")]
    Dimension(usize, usize),
    #[error("unknown measure `{0}` (expected one of 1, 2, inf)")]
    UnknownMeasure(String),
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MeasureError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(MeasureError::NotSquare {
                    row,
                    len: r.len(),
                    expected: n,
                });
            }
            for (col, v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MeasureError::NonFinite { row, col });
                }
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { n, data })
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Result<Self, MeasureError> {
        if u.len() != v.len() {
            return Err(MeasureError::Dimension(u.len(), v.len()));
        }
        let n = u.len();
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = u[i] * v[j];
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, MeasureError> {
        if self.n != other.n {
            return Err(MeasureError::Dimension(self.n, other.n));
        }
        Ok(Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix, MeasureError> {
        if self.n != other.n {
            return Err(MeasureError::Dimension(self.n, other.n));
        }
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetric_part(&self) -> Matrix {
        let mut s = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                s[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// A matrix measure together with the vector norm that induces it.
pub trait LogNorm: Send + Sync {
    /// Canonical registry name.
    fn name(&self) -> &'static str;
    fn kind(&self) -> MeasureKind;
    fn measure(&self, a: &Matrix) -> f64;
    fn vector_norm(&self, v: &[f64]) -> f64;
    /// Induced matrix norm, used by the limit-definition oracle.
    fn induced_norm(&self, a: &Matrix) -> f64;
}

struct OneNorm;
struct TwoNorm;
struct InfNorm;

impl LogNorm for OneNorm {
    fn name(&self) -> &'static str {
        "1"
    }
    fn kind(&self) -> MeasureKind {
        MeasureKind::One
    }
    fn measure(&self, a: &Matrix) -> f64 {
        // max over columns of a_jj + sum_{i != j} |a_ij|
        (0..a.n)
            .map(|j| {
                (0..a.n)
                    .map(|i| if i == j { a[(j, j)] } else { a[(i, j)].abs() })
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn vector_norm(&self, v: &[f64]) -> f64 {
        v.iter().map(|x| x.abs()).sum()
    }
    fn induced_norm(&self, a: &Matrix) -> f64 {
        (0..a.n)
            .map(|j| (0..a.n).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl LogNorm for InfNorm {
    fn name(&self) -> &'static str {
        "inf"
    }
    fn kind(&self) -> MeasureKind {
        MeasureKind::Inf
    }
    fn measure(&self, a: &Matrix) -> f64 {
        (0..a.n)
            .map(|i| {
                (0..a.n)
                    .map(|j| if i == j { a[(i, i)] } else { a[(i, j)].abs() })
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn vector_norm(&self, v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
    fn induced_norm(&self, a: &Matrix) -> f64 {
        (0..a.n)
            .map(|i| (0..a.n).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl LogNorm for TwoNorm {
    fn name(&self) -> &'static str {
        "2"
    }
    fn kind(&self) -> MeasureKind {
        MeasureKind::Two
    }
    fn measure(&self, a: &Matrix) -> f64 {
        max_symmetric_eigenvalue(&a.symmetric_part())
    }
    fn vector_norm(&self, v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    fn induced_norm(&self, a: &Matrix) -> f64 {
        spectral_norm(a)
    }
}

static ONE: OneNorm = OneNorm;
static TWO: TwoNorm = TwoNorm;
static INF: InfNorm = InfNorm;

/// Selects one of the three built-in measure/norm pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 3] = [MeasureKind::One, MeasureKind::Two, MeasureKind::Inf];

    pub fn strategy(self) -> &'static dyn LogNorm {
        match self {
            MeasureKind::One => &ONE,
            MeasureKind::Two => &TWO,
            MeasureKind::Inf => &INF,
        }
    }

    pub fn name(self) -> &'static str {
        self.strategy().name()
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = MeasureError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MeasureRegistry::builtin()
            .get(s)
            .map(|m| m.kind())
            .ok_or_else(|| MeasureError::UnknownMeasure(s.to_string()))
    }
}

/// Name-indexed table of measure strategies.
pub struct MeasureRegistry {
    entries: Vec<(&'static str, &'static dyn LogNorm)>,
}

impl MeasureRegistry {
    pub fn builtin() -> Self {
        let mut r = MeasureRegistry {
            entries: Vec::new(),
        };
        for (alias, kind) in [
            ("1", MeasureKind::One),
            ("one", MeasureKind::One),
            ("2", MeasureKind::Two),
            ("two", MeasureKind::Two),
            ("inf", MeasureKind::Inf),
            ("infinity", MeasureKind::Inf),
        ] {
            r.register(alias, kind.strategy());
        }
        r
    }

    pub fn register(&mut self, name: &'static str, strategy: &'static dyn LogNorm) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, strategy));
    }

    pub fn get(&self, name: &str) -> Option<&'static dyn LogNorm> {
        let key = name.trim().to_ascii_lowercase();
        self.entries
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, s)| *s)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

pub fn matrix_measure(kind: MeasureKind, a: &Matrix) -> f64 {
    kind.strategy().measure(a)
}

/// Checked variant for row data from outside the crate.
pub fn matrix_measure_rows(kind: MeasureKind, rows: &[Vec<f64>]) -> Result<f64, MeasureError> {
    Ok(matrix_measure(kind, &Matrix::from_rows(rows)?))
}

pub fn vector_norm(kind: MeasureKind, v: &[f64]) -> f64 {
    kind.strategy().vector_norm(v)
}

pub fn induced_norm(kind: MeasureKind, a: &Matrix) -> f64 {
    kind.strategy().induced_norm(a)
}

/// `(‖I + hA‖ − 1) / h`, the one-sided difference quotient whose limit as
/// `h → 0⁺` defines the measure.
pub fn measure_limit_oracle(kind: MeasureKind, a: &Matrix, h: f64) -> Result<f64, MeasureError> {
    if !(h > 0.0) {
        return Err(MeasureError::InvalidStep(h));
    }
    let shifted = Matrix::identity(a.n).add(&a.scale(h))?;
    Ok((induced_norm(kind, &shifted) - 1.0) / h)
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `k` (`vectors[(i, k)]`) is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// Index of the largest eigenvalue and the gap to the runner-up
    /// (`f64::INFINITY` for 1×1).
    pub fn top(&self) -> (usize, f64) {
        let mut best = 0;
        for k in 1..self.values.len() {
            if self.values[k] > self.values[best] {
                best = k;
            }
        }
        let gap = self
            .values
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != best)
            .map(|(_, v)| self.values[best] - v)
            .fold(f64::INFINITY, f64::min);
        (best, gap)
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.n).map(|i| self.vectors[(i, k)]).collect()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigen-decomposition. The input is assumed symmetric; only
/// the upper triangle is trusted.
pub fn symmetric_eigen(s: &Matrix) -> SymmetricEigen {
    let n = s.n;
    let mut a = s.symmetric_part();
    let mut v = Matrix::identity(n);
    let scale = a.data.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen {
        values: (0..n).map(|i| a[(i, i)]).collect(),
        vectors: v,
    }
}

/// Largest eigenvalue of a symmetric matrix: closed form up to 2×2,
/// Jacobi iteration otherwise.
pub fn max_symmetric_eigenvalue(s: &Matrix) -> f64 {
    match s.n {
        0 => f64::NEG_INFINITY,
        1 => s[(0, 0)],
        2 => {
            let (a, b, d) = (s[(0, 0)], 0.5 * (s[(0, 1)] + s[(1, 0)]), s[(1, 1)]);
            let mean = 0.5 * (a + d);
            let half_diff = 0.5 * (a - d);
            mean + half_diff.hypot(b)
        }
        _ => symmetric_eigen(s)
            .values
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Largest singular value by one-sided (Hestenes) Jacobi orthogonalization.
///
/// Works directly on the columns of `a`, so for `a ≈ I` the result keeps
/// absolute accuracy near machine epsilon.
pub fn spectral_norm(a: &Matrix) -> f64 {
    let n = a.n;
    let mut u = a.clone();
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..n {
                    alpha += u[(k, p)] * u[(k, p)];
                    beta += u[(k, q)] * u[(k, q)];
                    gamma += u[(k, p)] * u[(k, q)];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let up = u[(k, p)];
                    let uq = u[(k, q)];
                    u[(k, p)] = c * up - s * uq;
                    u[(k, q)] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n)
        .map(|j| (0..n).map(|k| u[(k, j)] * u[(k, j)]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}
