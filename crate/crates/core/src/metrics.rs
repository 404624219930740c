//! Test-set error metrics against the exact solution.

use crate::error::{Result, RqaError};
use crate::geometry::{sample_interior, substream, PointBatch, Stream};
use crate::network::{MlpParams, Order};
use crate::problems::PdeProblem;

pub const DEFAULT_TEST_POINTS: usize = 10_000;

fn check_pair(predicted: &[f64], exact: &[f64]) -> Result<()> {
    if predicted.len() != exact.len() {
        return Err(RqaError::LengthMismatch {
            what: "predicted values",
            got: predicted.len(),
            expected: exact.len(),
        });
    }
    if exact.iter().all(|v| *v == 0.0) {
        return Err(RqaError::invalid("exact values are identically zero"));
    }
    Ok(())
}

/// `sqrt(Σ(pred − exact)² / Σ exact²)`.
pub fn relative_l2_error(predicted: &[f64], exact: &[f64]) -> Result<f64> {
    check_pair(predicted, exact)?;
    let num: f64 = predicted.iter().zip(exact).map(|(p, e)| (p - e) * (p - e)).sum();
    let den: f64 = exact.iter().map(|e| e * e).sum();
    Ok((num / den).sqrt())
}

/// `max|pred − exact| / max|exact|`.
pub fn relative_max_error(predicted: &[f64], exact: &[f64]) -> Result<f64> {
    check_pair(predicted, exact)?;
    let num = predicted
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e).abs())
        .fold(0.0, f64::max);
    let den = exact.iter().map(|e| e.abs()).fold(0.0, f64::max);
    Ok(num / den)
}

/// Uniform points over the problem domain with their exact values, drawn once
/// per run from the master seed's test stream.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub points: PointBatch,
    pub exact: Vec<f64>,
}

impl TestSet {
    pub fn new(problem: &PdeProblem, n: usize, master_seed: u64) -> Result<Self> {
        let mut rng = substream(master_seed, Stream::Test, 0);
        let points = sample_interior(n, problem.d, problem.horizon(), &mut rng)?;
        let exact = (0..points.len())
            .map(|i| problem.exact_at(points.x(i), points.t(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSet { points, exact })
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }

    /// `(relative L2, relative max)` errors of `params` on this set.
    pub fn evaluate(&self, params: &MlpParams) -> Result<(f64, f64)> {
        let inputs = self.points.network_inputs();
        // Chunks keep the value-only activations small.
        const CHUNK: usize = 2048;
        let mut pred = Vec::with_capacity(self.len());
        for start in (0..self.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(self.len());
            let tape = params.forward_jet(inputs.slice(ndarray::s![start..end, ..]), Order::Value)?;
            pred.extend(tape.output.value);
        }
        Ok((
            relative_l2_error(&pred, &self.exact)?,
            relative_max_error(&pred, &self.exact)?,
        ))
    }
}
