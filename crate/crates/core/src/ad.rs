//! Exact space-time derivatives of scalar fields.
//!
//! Two forward-mode number types carry derivatives through closed-form
//! expressions and the network:
//!
//! * [`Jet`] propagates the value, the full input gradient and the *spatial*
//!   Laplacian in one pass. The Laplacian composes without the Hessian:
//!   `Δ(fg) = gΔf + 2∇f·∇g + fΔg` and `Δφ(f) = φ''(f)|∇f|² + φ'(f)Δf`, so one
//!   evaluation costs O(d) work per primitive.
//! * [`HyperDual`] carries a single pair of directional perturbations and
//!   yields an exact second directional derivative. Summing `d` of them gives
//!   an independent route to the Laplacian, used for cross-checks.
//!
//! Network training does not go through these types; see
//! [`crate::network::MlpParams::forward_jet`] for the batched path and its reverse
//! sweep.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Result, RqaError};

/// Numeric type that closed-form fields and the network can be evaluated on.
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Primal value.
    fn value(&self) -> f64;
    /// A constant living in the same derivative space as `self`.
    fn lift(&self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;

    fn square(self) -> Self {
        self.clone() * self
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
}

/// Euclidean norm of a point.
pub fn norm<R: Real>(x: &[R]) -> R {
    sum_of_squares(x).sqrt()
}

pub fn sum_of_squares<R: Real>(x: &[R]) -> R {
    let mut acc = x[0].clone().square();
    for xi in &x[1..] {
        acc = acc + xi.clone().square();
    }
    acc
}

// ---------------------------------------------------------------------------
// Jet: value, gradient, spatial Laplacian
// ---------------------------------------------------------------------------

/// Second-order forward-mode number over `n` inputs, of which the first
/// `n_spatial` are spatial. `lap` is the sum of pure second derivatives over
/// the spatial inputs only.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
    pub n_spatial: usize,
}

impl Jet {
    pub fn constant(v: f64, n_inputs: usize, n_spatial: usize) -> Self {
        Jet {
            v,
            grad: vec![0.0; n_inputs],
            lap: 0.0,
            n_spatial,
        }
    }

    /// The `index`-th independent variable with value `v`.
    pub fn variable(v: f64, index: usize, n_inputs: usize, n_spatial: usize) -> Self {
        let mut j = Jet::constant(v, n_inputs, n_spatial);
        j.grad[index] = 1.0;
        j
    }

    fn spatial_dot(&self, other: &Jet) -> f64 {
        self.grad[..self.n_spatial]
            .iter()
            .zip(&other.grad[..self.n_spatial])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Jet {
        let g2 = self.spatial_dot(&self);
        Jet {
            v: f0,
            lap: f2 * g2 + f1 * self.lap,
            grad: self.grad.into_iter().map(|g| f1 * g).collect(),
            n_spatial: self.n_spatial,
        }
    }

    fn recip(self) -> Jet {
        let v = self.v;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.v += rhs.v;
        self.lap += rhs.lap;
        for (a, b) in self.grad.iter_mut().zip(&rhs.grad) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        self.lap = -self.lap;
        self.grad.iter_mut().for_each(|g| *g = -*g);
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let cross = self.spatial_dot(&rhs);
        Jet {
            v: self.v * rhs.v,
            lap: self.lap * rhs.v + 2.0 * cross + self.v * rhs.lap,
            grad: self
                .grad
                .iter()
                .zip(&rhs.grad)
                .map(|(a, b)| a * rhs.v + self.v * b)
                .collect(),
            n_spatial: self.n_spatial,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        self.v *= rhs;
        self.lap *= rhs;
        self.grad.iter_mut().for_each(|g| *g *= rhs);
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

impl Real for Jet {
    fn value(&self) -> f64 {
        self.v
    }
    fn lift(&self, c: f64) -> Self {
        Jet::constant(c, self.grad.len(), self.n_spatial)
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let v = self.v;
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn sqrt(self) -> Self {
        let v = self.v;
        let s = v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * v))
    }
    fn powf(self, e: f64) -> Self {
        let v = self.v;
        self.chain(
            v.powf(e),
            e * v.powf(e - 1.0),
            e * (e - 1.0) * v.powf(e - 2.0),
        )
    }
}

// ---------------------------------------------------------------------------
// HyperDual: exact second directional derivatives
// ---------------------------------------------------------------------------

/// `v + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂` with `ε₁² = ε₂² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    pub v: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub fn constant(v: f64) -> Self {
        HyperDual {
            v,
            e1: 0.0,
            e2: 0.0,
            e12: 0.0,
        }
    }

    /// A variable perturbed along both infinitesimal directions by `dir`.
    pub fn seeded(v: f64, dir: f64) -> Self {
        HyperDual {
            v,
            e1: dir,
            e2: dir,
            e12: 0.0,
        }
    }

    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        HyperDual {
            v: f0,
            e1: f1 * self.e1,
            e2: f1 * self.e2,
            e12: f1 * self.e12 + f2 * self.e1 * self.e2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        HyperDual {
            v: self.v + r.v,
            e1: self.e1 + r.e1,
            e2: self.e2 + r.e2,
            e12: self.e12 + r.e12,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        self + (-r)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        HyperDual {
            v: -self.v,
            e1: -self.e1,
            e2: -self.e2,
            e12: -self.e12,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        HyperDual {
            v: self.v * r.v,
            e1: self.e1 * r.v + self.v * r.e1,
            e2: self.e2 * r.v + self.v * r.e2,
            e12: self.e12 * r.v + self.e1 * r.e2 + self.e2 * r.e1 + self.v * r.e12,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, r: Self) -> Self {
        let v = r.v;
        self * r.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl Add<f64> for HyperDual {
    type Output = Self;
    fn add(mut self, r: f64) -> Self {
        self.v += r;
        self
    }
}

impl Sub<f64> for HyperDual {
    type Output = Self;
    fn sub(mut self, r: f64) -> Self {
        self.v -= r;
        self
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    fn mul(self, r: f64) -> Self {
        HyperDual {
            v: self.v * r,
            e1: self.e1 * r,
            e2: self.e2 * r,
            e12: self.e12 * r,
        }
    }
}

impl Div<f64> for HyperDual {
    type Output = Self;
    fn div(self, r: f64) -> Self {
        self * (1.0 / r)
    }
}

impl Real for HyperDual {
    fn value(&self) -> f64 {
        self.v
    }
    fn lift(&self, c: f64) -> Self {
        HyperDual::constant(c)
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let v = self.v;
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn powf(self, e: f64) -> Self {
        let v = self.v;
        self.chain(
            v.powf(e),
            e * v.powf(e - 1.0),
            e * (e - 1.0) * v.powf(e - 2.0),
        )
    }
}

// ---------------------------------------------------------------------------
// Fields and bundles
// ---------------------------------------------------------------------------

/// Value and space-time derivatives of a scalar field at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub spatial_gradient: Vec<f64>,
    pub laplacian: f64,
    pub time_derivative: f64,
}

impl DerivativeBundle {
    pub fn from_jet(jet: &Jet) -> Self {
        let d = jet.n_spatial;
        DerivativeBundle {
            value: jet.v,
            spatial_gradient: jet.grad[..d].to_vec(),
            laplacian: jet.lap,
            time_derivative: jet.grad.get(d).copied().unwrap_or(0.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.laplacian.is_finite()
            && self.time_derivative.is_finite()
            && self.spatial_gradient.iter().all(|g| g.is_finite())
    }

    pub(crate) fn check_finite(self, x: &[f64], t: f64) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(RqaError::Evaluation {
                x: x.to_vec(),
                t,
                what: "derivative bundle",
            })
        }
    }
}

/// A scalar function of `(x, t)` whose derivatives can be queried exactly.
pub trait ScalarField {
    fn spatial_dim(&self) -> usize;
    fn time_dependent(&self) -> bool;
    fn derivatives_at(&self, x: &[f64], t: f64) -> Result<DerivativeBundle>;

    fn value_at(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.derivatives_at(x, t)?.value)
    }
}

/// A closed-form expression that can be evaluated on any [`Real`].
///
/// `t` is ignored by stationary fields.
pub trait SmoothField {
    fn spatial_dim(&self) -> usize;
    fn time_dependent(&self) -> bool;
    fn eval<R: Real>(&self, x: &[R], t: &R) -> R;
}

impl<F: SmoothField + ?Sized> SmoothField for &F {
    fn spatial_dim(&self) -> usize {
        (**self).spatial_dim()
    }
    fn time_dependent(&self) -> bool {
        (**self).time_dependent()
    }
    fn eval<R: Real>(&self, x: &[R], t: &R) -> R {
        (**self).eval(x, t)
    }
}

/// Exposes a [`SmoothField`] as a [`ScalarField`] by evaluating it on [`Jet`]s.
#[derive(Clone, Debug)]
pub struct Analytic<F>(pub F);

impl<F: SmoothField> ScalarField for Analytic<F> {
    fn spatial_dim(&self) -> usize {
        self.0.spatial_dim()
    }
    fn time_dependent(&self) -> bool {
        self.0.time_dependent()
    }
    fn derivatives_at(&self, x: &[f64], t: f64) -> Result<DerivativeBundle> {
        let (xs, ts) = jet_inputs(x, t, self.0.time_dependent());
        DerivativeBundle::from_jet(&self.0.eval(&xs, &ts)).check_finite(x, t)
    }

    fn value_at(&self, x: &[f64], t: f64) -> Result<f64> {
        let v = self.0.eval(x, &t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RqaError::Evaluation {
                x: x.to_vec(),
                t,
                what: "value",
            })
        }
    }
}

/// Seeds `x` (and `t` when time-dependent) as independent jet variables.
pub fn jet_inputs(x: &[f64], t: f64, time_dependent: bool) -> (Vec<Jet>, Jet) {
    let d = x.len();
    let n = d + usize::from(time_dependent);
    let xs = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| Jet::variable(xi, i, n, d))
        .collect();
    let ts = if time_dependent {
        Jet::variable(t, d, n, d)
    } else {
        Jet::constant(t, n, d)
    };
    (xs, ts)
}

/// Bundle of `field` at `(x, t)`.
pub fn derivatives_at<F: ScalarField + ?Sized>(
    field: &F,
    x: &[f64],
    t: f64,
) -> Result<DerivativeBundle> {
    if x.len() != field.spatial_dim() {
        return Err(RqaError::LengthMismatch {
            what: "point",
            got: x.len(),
            expected: field.spatial_dim(),
        });
    }
    field.derivatives_at(x, t)
}

/// Second derivative of `field` along `direction` at `(x, t)`, via hyper-dual numbers.
pub fn second_directional<F: SmoothField>(field: &F, x: &[f64], t: f64, direction: &[f64]) -> f64 {
    let xs: Vec<HyperDual> = x
        .iter()
        .zip(direction)
        .map(|(&xi, &di)| HyperDual::seeded(xi, di))
        .collect();
    field.eval(&xs, &HyperDual::constant(t)).e12
}

/// Laplacian as the sum of `d` coordinate second derivatives. Independent of the [`Jet`] route.
pub fn laplacian_by_coordinates<F: SmoothField>(field: &F, x: &[f64], t: f64) -> f64 {
    let d = x.len();
    let mut e = vec![0.0; d];
    (0..d)
        .map(|i| {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            second_directional(field, x, t, &e)
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Divergence-form operator
// ---------------------------------------------------------------------------

/// Diffusion coefficient `a(x)` with closed-form gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    /// `a(x) = 1`
    Unit,
    /// `a(x) = 1 + ½‖x‖²`
    OnePlusHalfNormSq,
}

impl Coefficient {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Unit => 1.0,
            Coefficient::OnePlusHalfNormSq => 1.0 + 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Coefficient::Unit => vec![0.0; x.len()],
            Coefficient::OnePlusHalfNormSq => x.to_vec(),
        }
    }

    /// `∇·(a∇u) = aΔu + ∇a·∇u` from an already evaluated bundle.
    pub fn divergence(&self, bundle: &DerivativeBundle, x: &[f64]) -> f64 {
        let a = self.value(x);
        let flux: f64 = match self {
            Coefficient::Unit => 0.0,
            Coefficient::OnePlusHalfNormSq => x
                .iter()
                .zip(&bundle.spatial_gradient)
                .map(|(xi, gi)| xi * gi)
                .sum(),
        };
        a * bundle.laplacian + flux
    }
}

/// `∇·(a(x)∇u)(x, t)` for the field `u`.
pub fn divergence_form<F: ScalarField + ?Sized>(
    field: &F,
    coeff: Coefficient,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    let b = derivatives_at(field, x, t)?;
    Ok(coeff.divergence(&b, x))
}
