//! Benchmark problems on the unit ball: residual operators, exact solutions,
//! Dirichlet/initial data, and manufactured source terms.
//!
//! | name         | operator `N[u]`                     | exact `u`                              |
//! |--------------|-------------------------------------|----------------------------------------|
//! | `parabolic`  | `∂ₜu − ∇·(a∇u)`                     | `exp(‖x‖√(1−t))`                       |
//! | `allen_cahn` | `∂ₜu − Δu − u + u³`                 | `e^{−t} sin(π/2 |1−‖x‖|^{2.5})`        |
//! | `elliptic`   | `−∇·(a∇u) + |∇u|²`                  | `sin(π/2 (1−‖x‖)^{2.5})`               |
//!
//! with `a(x) = 1 + ½‖x‖²`. The source is `f := N[u_exact]`, computed by the
//! derivative engine; the published closed forms are kept in
//! [`PdeProblem::closed_form_source`] for comparison only.

use std::f64::consts::{E, FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::ad::{norm, Analytic, Coefficient, DerivativeBundle, Real, ScalarField, SmoothField};
use crate::error::{Result, RqaError};
use crate::geometry::{sample_interior, PointBatch, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Parabolic,
    AllenCahn,
    Elliptic,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [
        ProblemKind::Parabolic,
        ProblemKind::AllenCahn,
        ProblemKind::Elliptic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Parabolic => "parabolic",
            ProblemKind::AllenCahn => "allen_cahn",
            ProblemKind::Elliptic => "elliptic",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = RqaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parabolic" => Ok(ProblemKind::Parabolic),
            "allen_cahn" => Ok(ProblemKind::AllenCahn),
            "elliptic" => Ok(ProblemKind::Elliptic),
            other => Err(RqaError::invalid(format!("unknown problem `{other}`"))),
        }
    }
}

fn abs_real<R: Real>(z: R) -> R {
    if z.value() < 0.0 {
        -z
    } else {
        z
    }
}

/// The exact solution as a closed-form field.
#[derive(Clone, Copy, Debug)]
pub struct ExactSolution {
    pub kind: ProblemKind,
    pub d: usize,
}

impl SmoothField for ExactSolution {
    fn spatial_dim(&self) -> usize {
        self.d
    }

    fn time_dependent(&self) -> bool {
        self.kind != ProblemKind::Elliptic
    }

    fn eval<R: Real>(&self, x: &[R], t: &R) -> R {
        let rho = norm(x);
        match self.kind {
            ProblemKind::Parabolic => {
                let s = (-t.clone() + 1.0).sqrt();
                (rho * s).exp()
            }
            ProblemKind::AllenCahn => {
                let bump = (abs_real(-rho + 1.0).powf(2.5) * FRAC_PI_2).sin();
                (-t.clone()).exp() * bump
            }
            ProblemKind::Elliptic => (abs_real(-rho + 1.0).powf(2.5) * FRAC_PI_2).sin(),
        }
    }
}

/// Per-unit sensitivities of `N[u]` to the entries of a [`DerivativeBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorPartials {
    pub value: f64,
    pub spatial_gradient: Vec<f64>,
    pub laplacian: f64,
    pub time_derivative: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdeProblem {
    pub kind: ProblemKind,
    pub d: usize,
}

impl PdeProblem {
    pub fn new(kind: ProblemKind, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(RqaError::invalid("problem dimension must be >= 1"));
        }
        Ok(PdeProblem { kind, d })
    }

    pub fn by_name(name: &str, d: usize) -> Result<Self> {
        PdeProblem::new(name.parse()?, d)
    }

    pub fn time_dependent(&self) -> bool {
        self.kind != ProblemKind::Elliptic
    }

    /// `Some(T)` with `T = 1` for evolution problems.
    pub fn horizon(&self) -> Option<f64> {
        self.time_dependent().then_some(1.0)
    }

    pub fn coefficient(&self) -> Coefficient {
        match self.kind {
            ProblemKind::AllenCahn => Coefficient::Unit,
            _ => Coefficient::OnePlusHalfNormSq,
        }
    }

    pub fn exact_solution(&self) -> ExactSolution {
        ExactSolution {
            kind: self.kind,
            d: self.d,
        }
    }

    pub fn exact_field(&self) -> Analytic<ExactSolution> {
        Analytic(self.exact_solution())
    }

    pub fn exact_at(&self, x: &[f64], t: f64) -> Result<f64> {
        self.exact_field().value_at(x, t)
    }

    /// `N[u]` from the bundle of `u` at `x`.
    pub fn operator(&self, b: &DerivativeBundle, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Parabolic => b.time_derivative - self.coefficient().divergence(b, x),
            ProblemKind::AllenCahn => {
                let u = b.value;
                b.time_derivative - b.laplacian - u + u * u * u
            }
            ProblemKind::Elliptic => {
                let g2: f64 = b.spatial_gradient.iter().map(|g| g * g).sum();
                -self.coefficient().divergence(b, x) + g2
            }
        }
    }

    pub fn operator_partials(&self, b: &DerivativeBundle, x: &[f64]) -> OperatorPartials {
        let a = self.coefficient();
        match self.kind {
            ProblemKind::Parabolic => OperatorPartials {
                value: 0.0,
                spatial_gradient: a.gradient(x).iter().map(|g| -g).collect(),
                laplacian: -a.value(x),
                time_derivative: 1.0,
            },
            ProblemKind::AllenCahn => OperatorPartials {
                value: -1.0 + 3.0 * b.value * b.value,
                spatial_gradient: vec![0.0; self.d],
                laplacian: -1.0,
                time_derivative: 1.0,
            },
            ProblemKind::Elliptic => OperatorPartials {
                value: 0.0,
                spatial_gradient: a
                    .gradient(x)
                    .iter()
                    .zip(&b.spatial_gradient)
                    .map(|(ga, gu)| -ga + 2.0 * gu)
                    .collect(),
                laplacian: -a.value(x),
                time_derivative: 0.0,
            },
        }
    }

    /// Manufactured source `f(x, t) = N[u_exact](x, t)`.
    pub fn source_at(&self, x: &[f64], t: f64) -> Result<f64> {
        let b = self.exact_field().derivatives_at(x, t)?;
        let f = self.operator(&b, x);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(RqaError::Evaluation {
                x: x.to_vec(),
                t,
                what: "source term",
            })
        }
    }

    /// Dirichlet data `g(x, t)`.
    pub fn boundary_value(&self, _x: &[f64], t: f64) -> f64 {
        match self.kind {
            ProblemKind::Parabolic => (1.0 - t).sqrt().exp(),
            ProblemKind::AllenCahn | ProblemKind::Elliptic => 0.0,
        }
    }

    /// Initial data `h(x)`; zero for stationary problems.
    pub fn initial_value(&self, x: &[f64]) -> f64 {
        let rho = norm(x);
        match self.kind {
            ProblemKind::Parabolic => rho.exp(),
            ProblemKind::AllenCahn => (FRAC_PI_2 * (1.0 - rho).abs().powf(2.5)).sin(),
            ProblemKind::Elliptic => 0.0,
        }
    }

    fn expect_role(&self, batch: &PointBatch, role: Role) -> Result<()> {
        if batch.role != role {
            return Err(RqaError::invalid(format!(
                "expected a {role} batch, got {}",
                batch.role
            )));
        }
        if batch.d != self.d {
            return Err(RqaError::LengthMismatch {
                what: "batch dimension",
                got: batch.d,
                expected: self.d,
            });
        }
        Ok(())
    }

    /// Manufactured sources for every point of an interior batch.
    pub fn sources(&self, batch: &PointBatch) -> Result<Vec<f64>> {
        (0..batch.len())
            .map(|i| self.source_at(batch.x(i), batch.t(i)))
            .collect()
    }

    /// Signed defects `N[u] − f` given the field's bundles and precomputed sources.
    pub fn interior_defects(
        &self,
        batch: &PointBatch,
        bundles: &[DerivativeBundle],
        sources: &[f64],
    ) -> Vec<f64> {
        bundles
            .iter()
            .zip(sources)
            .enumerate()
            .map(|(i, (b, f))| self.operator(b, batch.x(i)) - f)
            .collect()
    }

    /// Signed defects `u − g` (boundary) or `u − h` (initial).
    pub fn data_defects(&self, batch: &PointBatch, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, u)| match batch.role {
                Role::Initial => u - self.initial_value(batch.x(i)),
                _ => u - self.boundary_value(batch.x(i), batch.t(i)),
            })
            .collect()
    }

    /// `|N[u] − f|` at each point of an interior batch.
    pub fn interior_residual<F: ScalarField + ?Sized>(
        &self,
        field: &F,
        batch: &PointBatch,
    ) -> Result<Vec<f64>> {
        self.expect_role(batch, Role::Interior)?;
        let bundles = (0..batch.len())
            .map(|i| field.derivatives_at(batch.x(i), batch.t(i)))
            .collect::<Result<Vec<_>>>()?;
        let sources = self.sources(batch)?;
        Ok(self
            .interior_defects(batch, &bundles, &sources)
            .into_iter()
            .map(f64::abs)
            .collect())
    }

    /// `|u − g|` at each boundary point.
    pub fn boundary_residual<F: ScalarField + ?Sized>(
        &self,
        field: &F,
        batch: &PointBatch,
    ) -> Result<Vec<f64>> {
        self.expect_role(batch, Role::Boundary)?;
        self.data_residual(field, batch)
    }

    /// `|u(x, 0) − h(x)|` at each initial point.
    pub fn initial_residual<F: ScalarField + ?Sized>(
        &self,
        field: &F,
        batch: &PointBatch,
    ) -> Result<Vec<f64>> {
        self.expect_role(batch, Role::Initial)?;
        if !self.time_dependent() {
            return Err(RqaError::invalid("stationary problems have no initial condition"));
        }
        self.data_residual(field, batch)
    }

    fn data_residual<F: ScalarField + ?Sized>(&self, field: &F, batch: &PointBatch) -> Result<Vec<f64>> {
        let values = (0..batch.len())
            .map(|i| field.value_at(batch.x(i), batch.t(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .data_defects(batch, &values)
            .into_iter()
            .map(f64::abs)
            .collect())
    }

    /// Source term as printed in the original problem statements, transcribed
    /// literally. Only the elliptic one agrees with `N[u_exact]`; see
    /// [`PdeProblem::cross_check`].
    pub fn closed_form_source(&self, x: &[f64], t: f64) -> f64 {
        let rho = norm(x);
        let d = self.d as f64;
        match self.kind {
            ProblemKind::Parabolic => {
                let u = (rho * (1.0 - t).sqrt()).exp();
                let lu = u.ln();
                -0.5 * u * lu
                    - u * lu
                    - (1.0 + 0.5 * lu * lu)
                        * u
                        * ((1.0 - t) + (1.0 - t).sqrt() * (d - 1.0) / rho)
            }
            ProblemKind::AllenCahn => {
                let om = (1.0 - rho).abs();
                let h = (FRAC_PI_2 * om.powf(2.5)).sin();
                let l = (0.5 * PI * om.powf(2.5)).cos();
                let k = -1.25 * PI * (d - 1.0) * rho * l * om.powf(1.5)
                    - 25.0 / 16.0 * PI * PI * h * (1.0 - rho).powi(3)
                    + 15.0 / 8.0 * PI * l * om.powf(0.5);
                let u = (-t).exp() * h;
                -(-t).exp() * (h + k) - u + u * u * u
            }
            ProblemKind::Elliptic => {
                let om = 1.0 - rho;
                let i = FRAC_PI_2 * om.powf(2.5);
                let l = -5.0 * PI * (d - 1.0) * i.cos() * om.powf(1.5) / (4.0 * rho)
                    - 25.0 * PI * PI / 16.0 * i.sin() * om.powi(3)
                    + 15.0 * PI / 8.0 * i.cos() * om.powf(0.5);
                5.0 * PI * rho / 4.0 * i.cos() * om.powf(1.5) - (1.0 + 0.5 * rho * rho) * l
                    + 25.0 / 16.0 * PI * PI * i.cos().powi(2) * om.powi(3)
            }
        }
    }

    /// Compares manufactured and printed sources at `n` random interior points.
    pub fn cross_check<R: Rng>(&self, n: usize, rng: &mut R) -> Result<SourceCrossCheck> {
        let batch = sample_interior(n, self.d, self.horizon(), rng)?;
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for i in 0..batch.len() {
            let m = self.source_at(batch.x(i), batch.t(i))?;
            let c = self.closed_form_source(batch.x(i), batch.t(i));
            let diff = (m - c).abs();
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / m.abs().max(1.0));
        }
        Ok(SourceCrossCheck {
            problem: self.kind,
            d: self.d,
            points: n,
            max_abs_diff: max_abs,
            max_rel_diff: max_rel,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceCrossCheck {
    pub problem: ProblemKind,
    pub d: usize,
    pub points: usize,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

impl SourceCrossCheck {
    pub fn agrees(&self, tol: f64) -> bool {
        self.max_abs_diff < tol
    }
}

impl fmt::Display for SourceCrossCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} d={}: printed vs manufactured source over {} points: max|Δ|={:.3e}, max rel={:.3e}{}",
            self.problem,
            self.d,
            self.points,
            self.max_abs_diff,
            self.max_rel_diff,
            if self.agrees(1e-6) { " (agree)" } else { " (DIFFER)" }
        )
    }
}

/// `e`, the parabolic boundary value at `t = 0`.
pub const PARABOLIC_G_AT_ZERO: f64 = E;
