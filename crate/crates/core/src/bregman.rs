//! Kernel generating distances, Bregman divergences and surrogate functions.

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

/// A differentiable convex function used to measure proximity between
/// iterates.
pub trait Kernel {
    fn eval(&self, x: &Matrix) -> f64;

    fn grad(&self, x: &Matrix) -> Matrix;

    /// Modulus of strong convexity, or 0 when unknown.
    fn strong_convexity(&self) -> f64 {
        0.0
    }

    /// Raw `φ(x) − φ(y) − <∇φ(y), x − y>`, before any clamping.
    ///
    /// Implementors with a closed form should override this; the default is
    /// the textbook expression and suffers cancellation for large `φ`.
    fn divergence(&self, x: &Matrix, y: &Matrix) -> f64 {
        let diff = x - y;
        self.eval(x) - self.eval(y) - matrix::dot(&self.grad(y), &diff)
    }
}

/// `φ(x) = (a/4)‖x‖⁴ + (b/2)‖x‖²` with `a, b ≥ 0`.
///
/// Covers the squared Euclidean kernel (`a = 0, b = 1`), the V-block kernel
/// of penalized ONMF (`a = 6λ, b = ε(U)`) and the matrix completion kernel
/// (`a = c₁, b = c₂`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPolyKernel {
    pub quartic: f64,
    pub quadratic: f64,
}

impl NormPolyKernel {
    pub fn new(quartic: f64, quadratic: f64) -> Result<Self> {
        if !(quartic >= 0.0 && quadratic >= 0.0 && quartic.is_finite() && quadratic.is_finite()) {
            return Err(Error::Argument(format!(
                "kernel coefficients must be finite and nonnegative, got ({quartic}, {quadratic})"
            )));
        }
        Ok(Self { quartic, quadratic })
    }

    /// `½‖x‖²`.
    pub fn squared_euclidean() -> Self {
        Self { quartic: 0.0, quadratic: 1.0 }
    }

    pub fn scaled_euclidean(scale: f64) -> Self {
        Self { quartic: 0.0, quadratic: scale }
    }
}

impl Kernel for NormPolyKernel {
    fn eval(&self, x: &Matrix) -> f64 {
        let s = matrix::norm_sq(x);
        0.25 * self.quartic * s * s + 0.5 * self.quadratic * s
    }

    fn grad(&self, x: &Matrix) -> Matrix {
        let s = matrix::norm_sq(x);
        x * (self.quartic * s + self.quadratic)
    }

    fn strong_convexity(&self) -> f64 {
        self.quadratic
    }

    // With d = x − y, a = ‖y‖², b = <y, d>, c = ‖d‖²:
    // ‖x‖⁴ − ‖y‖⁴ − 4‖y‖²<y, d> = (2b + c)² + 2ac, which is a sum of
    // nonnegative terms and avoids the cancellation of the generic formula.
    fn divergence(&self, x: &Matrix, y: &Matrix) -> f64 {
        let d = x - y;
        let a = matrix::norm_sq(y);
        let b = matrix::dot(y, &d);
        let c = matrix::norm_sq(&d);
        let quartic = (2.0 * b + c).powi(2) + 2.0 * a * c;
        0.25 * self.quartic * quartic + 0.5 * self.quadratic * c
    }
}

/// Bregman divergence `D_φ(x, y)`.
///
/// Slightly negative values caused by roundoff are clamped to zero; values
/// below `−1e-12·(1 + |φ(x)|)` are reported as a numeric error.
pub fn bregman_divergence<K: Kernel + ?Sized>(kernel: &K, x: &Matrix, y: &Matrix) -> Result<f64> {
    matrix::check_same_shape(x, y, "bregman_divergence")?;
    let d = kernel.divergence(x, y);
    if !d.is_finite() {
        return Err(Error::Numeric(format!("Bregman divergence is not finite ({d})")));
    }
    if d >= 0.0 {
        return Ok(d);
    }
    let tol = 1e-12 * (1.0 + kernel.eval(x).abs());
    if d >= -tol {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!(
            "Bregman divergence {d:.3e} is negative beyond roundoff (kernel not convex?)"
        )))
    }
}

/// Relative smoothness constants `(L, l)`: `−l·D_φ ≤ D_f ≤ L·D_φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelSmoothConstants {
    pub upper: f64,
    pub lower: f64,
}

impl RelSmoothConstants {
    pub fn new(upper: f64, lower: f64) -> Result<Self> {
        if !(upper > 0.0 && upper.is_finite()) || !(lower >= 0.0 && lower.is_finite()) {
            return Err(Error::Argument(format!(
                "relative smoothness constants need L > 0 and l >= 0, got ({upper}, {lower})"
            )));
        }
        Ok(Self { upper, lower })
    }
}

/// Worst violations of the two relative smoothness inequalities over a
/// sample set. Nonpositive values mean the constants are certified on the
/// samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelSmoothReport {
    /// `max (D_f − L·D_φ)`.
    pub max_upper_violation: f64,
    /// `max (−l·D_φ − D_f)`.
    pub max_lower_violation: f64,
    pub samples: usize,
}

impl RelSmoothReport {
    pub fn empty() -> Self {
        Self {
            max_upper_violation: f64::NEG_INFINITY,
            max_lower_violation: f64::NEG_INFINITY,
            samples: 0,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            max_upper_violation: self.max_upper_violation.max(other.max_upper_violation),
            max_lower_violation: self.max_lower_violation.max(other.max_lower_violation),
            samples: self.samples + other.samples,
        }
    }

    pub fn worst(&self) -> f64 {
        self.max_upper_violation.max(self.max_lower_violation)
    }
}

/// Evaluates both relative smoothness inequalities of `f` against `kernel`
/// on every `(x, y)` pair.
pub fn check_relative_smoothness<F, G, K>(
    f: F,
    grad: G,
    kernel: &K,
    constants: RelSmoothConstants,
    samples: &[(Matrix, Matrix)],
) -> Result<RelSmoothReport>
where
    F: Fn(&Matrix) -> f64,
    G: Fn(&Matrix) -> Matrix,
    K: Kernel + ?Sized,
{
    let mut report = RelSmoothReport::empty();
    for (x, y) in samples {
        let lin_err = f(x) - f(y) - matrix::dot(&grad(y), &(x - y));
        let dphi = bregman_divergence(kernel, x, y)?;
        report.max_upper_violation = report
            .max_upper_violation
            .max(lin_err - constants.upper * dphi);
        report.max_lower_violation = report
            .max_lower_violation
            .max(-constants.lower * dphi - lin_err);
        report.samples += 1;
    }
    Ok(report)
}

/// A surrogate `u(x, y)` of a nonsmooth term `g`: `u(y, y) = g(y)`,
/// `u(x, y) ≥ g(x)`, and `x ↦ u(x, y)` convex.
pub trait Surrogate {
    /// The majorized function `g`.
    fn target(&self, x: &Matrix) -> f64;

    fn eval(&self, x: &Matrix, y: &Matrix) -> f64;
}

/// `g ≡ 0`, used by problems whose only nonsmooth term is a feasible-set
/// indicator handled by the subproblem solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSurrogate;

impl Surrogate for ZeroSurrogate {
    fn target(&self, _x: &Matrix) -> f64 {
        0.0
    }

    fn eval(&self, _x: &Matrix, _y: &Matrix) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateReport {
    /// `max |u(y, y) − g(y)|`.
    pub max_tightness_gap: f64,
    /// `max (g(x) − u(x, y))`.
    pub max_majorization_violation: f64,
    /// `max (u(mid, y) − (u(x₁, y) + u(x₂, y)) / 2)`.
    pub max_convexity_violation: f64,
}

/// Checks the three surrogate properties on `(x₁, x₂, y)` triples.
pub fn check_surrogate<S: Surrogate + ?Sized>(
    surrogate: &S,
    triples: &[(Matrix, Matrix, Matrix)],
) -> SurrogateReport {
    let mut report = SurrogateReport {
        max_tightness_gap: 0.0,
        max_majorization_violation: f64::NEG_INFINITY,
        max_convexity_violation: f64::NEG_INFINITY,
    };
    for (x1, x2, y) in triples {
        let gap = (surrogate.eval(y, y) - surrogate.target(y)).abs();
        report.max_tightness_gap = report.max_tightness_gap.max(gap);
        for x in [x1, x2] {
            report.max_majorization_violation = report
                .max_majorization_violation
                .max(surrogate.target(x) - surrogate.eval(x, y));
        }
        let mid = (x1 + x2) * 0.5;
        let chord = 0.5 * (surrogate.eval(x1, y) + surrogate.eval(x2, y));
        report.max_convexity_violation = report
            .max_convexity_violation
            .max(surrogate.eval(&mid, y) - chord);
    }
    report
}
