//! Per-point weighting strategies for the collocation loss.
//!
//! Every strategy returns nonnegative weights that sum to one. The adaptive
//! ones are functions of the residuals at the current (detached) parameters:
//!
//! * `lp`: `w_i ∝ r_i^{p−2}`, the IRLS weights of an `L_p` residual objective.
//! * `rqa`: `lp` weights whose entries above the `q_cut` empirical quantile are
//!   reset to the `q_target` quantile, then renormalized.
//! * `binary`: the `⌈ηN⌉` largest residuals get multiplier `w_L`, the rest `w_S`,
//!   with `w_L η + w_S (1−η) = 1` and `w_L / w_S = ratio`.

use std::fmt;

use crate::error::{Result, RqaError};

/// Which strategy produced a weight vector, with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Uniform,
    Lp { p: f64 },
    Binary { eta: f64, ratio: f64 },
    Rqa { p: f64, q_cut: f64, q_target: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Lp { .. } => "lp",
            Strategy::Binary { .. } => "binary",
            Strategy::Rqa { .. } => "rqa",
        }
    }

    /// Validates parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        match *self {
            Strategy::Uniform => Ok(()),
            Strategy::Lp { p } if p >= 2.0 && p.is_finite() => Ok(()),
            Strategy::Binary { eta, ratio } if unit(eta) && ratio >= 1.0 && ratio.is_finite() => {
                Ok(())
            }
            Strategy::Rqa { p, q_cut, q_target }
                if p >= 2.0 && p.is_finite() && unit(q_cut) && unit(q_target) && q_target <= q_cut =>
            {
                Ok(())
            }
            s => Err(RqaError::invalid(format!("invalid strategy parameters: {s}"))),
        }
    }

    /// Weights for one role's residual vector.
    pub fn compute(&self, residuals: &[f64]) -> Result<WeightComputation> {
        let adjusted = match *self {
            Strategy::Uniform => {
                check_residuals(residuals)?;
                uniform_weights(residuals.len())?
            }
            Strategy::Lp { p } => lp_weights(residuals, p)?,
            Strategy::Binary { eta, ratio } => binary_weights(residuals, eta, ratio)?,
            Strategy::Rqa { p, q_cut, q_target } => {
                let raw = lp_weights(residuals, p)?;
                let adjusted = rqa_adjust(&raw, q_cut, q_target)?;
                return Ok(WeightComputation {
                    raw: raw.weights,
                    adjusted: WeightVector {
                        provenance: *self,
                        ..adjusted
                    },
                });
            }
        };
        Ok(WeightComputation {
            raw: adjusted.weights.clone(),
            adjusted,
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Uniform => write!(f, "uniform"),
            Strategy::Lp { p } => write!(f, "lp(p={p})"),
            Strategy::Binary { eta, ratio } => write!(f, "binary(eta={eta}, ratio={ratio})"),
            Strategy::Rqa { p, q_cut, q_target } => {
                write!(f, "rqa(p={p}, q_cut={q_cut}, q_target={q_target})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub provenance: Strategy,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Weights before and after any tail adjustment. `raw == adjusted.weights`
/// for strategies without an adjustment step.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightComputation {
    pub raw: Vec<f64>,
    pub adjusted: WeightVector,
}

fn check_residuals(r: &[f64]) -> Result<()> {
    if r.is_empty() {
        return Err(RqaError::invalid("empty residual vector"));
    }
    if let Some(bad) = r.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(RqaError::invalid(format!(
            "residuals must be finite and nonnegative, found {bad}"
        )));
    }
    Ok(())
}

/// 1-based rank `⌈level·n⌉`, clamped to `[1, n]`. Products within 1e-9 of an
/// integer count as that integer so that e.g. `0.7 · 10` selects rank 7.
pub fn quantile_rank(level: f64, n: usize) -> usize {
    let prod = level * n as f64;
    let rounded = prod.round();
    let k = if (prod - rounded).abs() <= 1e-9 * (n as f64).max(1.0) {
        rounded
    } else {
        prod.ceil()
    };
    (k as usize).clamp(1, n)
}

/// The `⌈ξN⌉`-th smallest entry, i.e. `inf{v : F_N(v) ≥ ξ}`.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(RqaError::invalid("quantile of an empty vector"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(RqaError::invalid(format!("quantile level {level} not in (0,1)")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RqaError::invalid("quantile of non-finite values"));
    }
    let k = quantile_rank(level, values.len());
    let mut buf = values.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

pub fn uniform_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(RqaError::invalid("uniform weights over zero points"));
    }
    Ok(WeightVector {
        weights: vec![1.0 / n as f64; n],
        provenance: Strategy::Uniform,
    })
}

/// `w_i = r_i^{p−2} / Σ_j r_j^{p−2}`. Residuals are divided by their maximum
/// first, which leaves the weights unchanged mathematically and keeps large
/// exponents from overflowing. All-zero residuals give uniform weights.
pub fn lp_weights(residuals: &[f64], p: f64) -> Result<WeightVector> {
    check_residuals(residuals)?;
    if !(p >= 2.0 && p.is_finite()) {
        return Err(RqaError::invalid(format!("p must be >= 2, got {p}")));
    }
    let provenance = Strategy::Lp { p };
    let max = residuals.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(WeightVector {
            provenance,
            ..uniform_weights(residuals.len())?
        });
    }
    let e = p - 2.0;
    let raw: Vec<f64> = residuals.iter().map(|r| (r / max).powf(e)).collect();
    let total: f64 = raw.iter().sum();
    Ok(WeightVector {
        weights: raw.into_iter().map(|w| w / total).collect(),
        provenance,
    })
}

/// Replaces every weight strictly above the `q_cut` quantile with the
/// `q_target` quantile (both taken on the input) and renormalizes. Returns the
/// input weights unchanged when no entry exceeds the threshold.
pub fn rqa_adjust(weights: &WeightVector, q_cut: f64, q_target: f64) -> Result<WeightVector> {
    if !(q_target <= q_cut) {
        return Err(RqaError::invalid(format!(
            "q_target ({q_target}) must not exceed q_cut ({q_cut})"
        )));
    }
    let threshold = empirical_quantile(&weights.weights, q_cut)?;
    let target = empirical_quantile(&weights.weights, q_target)?;
    let provenance = match weights.provenance {
        Strategy::Lp { p } | Strategy::Rqa { p, .. } => Strategy::Rqa { p, q_cut, q_target },
        other => other,
    };
    if weights.weights.iter().all(|&w| w <= threshold) {
        return Ok(WeightVector {
            weights: weights.weights.clone(),
            provenance,
        });
    }
    let clipped: Vec<f64> = weights
        .weights
        .iter()
        .map(|&w| if w > threshold { target } else { w })
        .collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Ok(WeightVector {
            provenance,
            ..uniform_weights(clipped.len())?
        });
    }
    Ok(WeightVector {
        weights: clipped.into_iter().map(|w| w / total).collect(),
        provenance,
    })
}

/// Multipliers `(w_S, w_L)` solving `w_L η + w_S (1−η) = 1`, `w_L = ratio·w_S`.
pub fn binary_multipliers(eta: f64, ratio: f64) -> (f64, f64) {
    let small = 1.0 / (ratio * eta + (1.0 - eta));
    (small, ratio * small)
}

/// Two-level weights: the `⌈ηN⌉` largest residuals (ties to the lower index)
/// get `w_L`, the rest `w_S`, normalized by the multiplier total. That total
/// is `N` whenever `ηN` is an integer.
pub fn binary_weights(residuals: &[f64], eta: f64, ratio: f64) -> Result<WeightVector> {
    check_residuals(residuals)?;
    let provenance = Strategy::Binary { eta, ratio };
    provenance.validate()?;
    let n = residuals.len();
    let (w_s, w_l) = binary_multipliers(eta, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]));
    let k = quantile_rank(eta, n);
    let mut mult = vec![w_s; n];
    for &i in &order[..k] {
        mult[i] = w_l;
    }
    let total: f64 = mult.iter().sum();
    Ok(WeightVector {
        weights: mult.into_iter().map(|m| m / total).collect(),
        provenance,
    })
}
