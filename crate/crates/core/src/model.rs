//! Linear models, components, and the association and influence measures.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedProblem;
use crate::error::{Error, Result};

/// Default tolerance band for threshold comparisons.
pub const DEFAULT_COMPARE_TOLERANCE: f64 = 1e-9;
/// Default association tolerance for exemptions.
pub const DEFAULT_EPSILON_PRIME: f64 = 0.05;

/// `Ŷ = intercept + Σ βᵢ Xᵢ`. The intercept never affects any metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    inputs: Vec<String>,
    coefficients: Vec<f64>,
    intercept: f64,
}

impl LinearModel {
    pub fn new(inputs: Vec<String>, coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidModel("model needs at least one input".into()));
        }
        if inputs.len() != coefficients.len() {
            return Err(Error::InvalidModel(format!(
                "{} inputs but {} coefficients",
                inputs.len(),
                coefficients.len()
            )));
        }
        if let Some(i) = coefficients.iter().position(|b| !b.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "coefficient for `{}` is not finite",
                inputs[i]
            )));
        }
        if !intercept.is_finite() {
            return Err(Error::InvalidModel("intercept is not finite".into()));
        }
        for (i, name) in inputs.iter().enumerate() {
            if inputs[..i].contains(name) {
                return Err(Error::InvalidModel(format!("duplicate input `{name}`")));
            }
        }
        Ok(Self {
            inputs,
            coefficients,
            intercept,
        })
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Association threshold `epsilon`, influence threshold `delta`, exemption
/// tolerance `epsilon_prime`, and the comparison band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_prime: f64,
    pub compare_tolerance: f64,
}

impl Thresholds {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        Self {
            epsilon,
            delta,
            epsilon_prime: DEFAULT_EPSILON_PRIME,
            compare_tolerance: DEFAULT_COMPARE_TOLERANCE,
        }
        .validated()
    }

    pub fn with_epsilon_prime(mut self, epsilon_prime: f64) -> Result<Self> {
        self.epsilon_prime = epsilon_prime;
        self.validated()
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.epsilon) {
            return Err(Error::InvalidThresholds(format!(
                "epsilon {} not in (0, 1]",
                self.epsilon
            )));
        }
        if !unit(self.delta) {
            return Err(Error::InvalidThresholds(format!(
                "delta {} not in (0, 1]",
                self.delta
            )));
        }
        if !(self.epsilon_prime >= 0.0 && self.epsilon_prime.is_finite()) {
            return Err(Error::InvalidThresholds(format!(
                "epsilon' {} must be non-negative",
                self.epsilon_prime
            )));
        }
        if !(self.compare_tolerance >= 0.0 && self.compare_tolerance < 0.5) {
            return Err(Error::InvalidThresholds(format!(
                "compare tolerance {} out of range",
                self.compare_tolerance
            )));
        }
        Ok(self)
    }
}

/// Squared cosine between `p` and `z`; `None` when `p` is the zero vector.
pub fn association(p: &DVector<f64>, z: &DVector<f64>) -> Result<Option<f64>> {
    let zz = z.norm_squared();
    if zz == 0.0 {
        return Err(Error::ConstantProtected);
    }
    let pp = p.norm_squared();
    if pp == 0.0 {
        return Ok(None);
    }
    let pz = p.dot(z);
    Ok(Some(((pz * pz) / (pp * zz)).clamp(0.0, 1.0)))
}

/// `Var(P) / Var(Ŷ)` for the component with coefficients `alphas`.
pub fn influence(alphas: &[f64], prob: &EmbeddedProblem) -> Result<f64> {
    check_len(alphas, prob)?;
    let var_model = prob.model_variance();
    if var_model <= 0.0 {
        return Err(Error::DegenerateModel);
    }
    Ok(prob.component_vector(alphas).norm_squared() / var_model)
}

/// `Asc(Xᵢ, Z)` from the unscaled input vector; 0 for constant inputs.
pub fn input_association(prob: &EmbeddedProblem, index: usize) -> Result<f64> {
    if index >= prob.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: prob.len(),
        });
    }
    let x = prob.inputs().column(index).into_owned();
    Ok(association(&x, prob.z())?.unwrap_or(0.0))
}

fn check_len(alphas: &[f64], prob: &EmbeddedProblem) -> Result<()> {
    if alphas.len() != prob.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} alphas for {} inputs",
            alphas.len(),
            prob.len()
        )));
    }
    Ok(())
}

/// Component `P = Σ αᵢβᵢXᵢ` together with its measured association and
/// influence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub alphas: Vec<f64>,
    /// `None` when the component has zero variance.
    pub association: Option<f64>,
    pub influence: f64,
}

impl Component {
    pub fn evaluate(alphas: Vec<f64>, prob: &EmbeddedProblem) -> Result<Self> {
        check_len(&alphas, prob)?;
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidModel(format!("alpha {a} outside [0, 1]")));
        }
        let p = prob.component_vector(&alphas);
        let association = association(&p, prob.z())?;
        let influence = influence(&alphas, prob)?;
        Ok(Self {
            alphas,
            association,
            influence,
        })
    }

    /// The whole model, `α = 1`.
    pub fn full(prob: &EmbeddedProblem) -> Result<Self> {
        Self::evaluate(vec![1.0; prob.len()], prob)
    }

    /// Variance of the component, `‖A'α‖²`.
    pub fn variance(&self, prob: &EmbeddedProblem) -> f64 {
        self.influence * prob.model_variance()
    }

    pub fn is_proxy(&self, th: &Thresholds) -> bool {
        is_proxy(self, th)
    }
}

/// `Asc(P, Z) ≥ ε` and `Inf(P) ≥ δ`, both within the comparison band.
/// Components with undefined association never qualify.
pub fn is_proxy(comp: &Component, th: &Thresholds) -> bool {
    let tol = th.compare_tolerance;
    match comp.association {
        Some(asc) => asc >= th.epsilon - tol && comp.influence >= th.delta - tol,
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExemptionStatus {
    Exempt,
    Nonexempt,
    NotAProxy,
}

/// Classifies a component under a single exempt input.
///
/// A proxy is exempt when dropping the exempt input leaves a non-proxy and its
/// association stays below `Asc(X_exempt, Z) + ε'`.
pub fn exemption_status(
    comp: &Component,
    prob: &EmbeddedProblem,
    th: &Thresholds,
    exempt_index: usize,
) -> Result<ExemptionStatus> {
    let exempt_asc = input_association(prob, exempt_index)?;
    if !is_proxy(comp, th) {
        return Ok(ExemptionStatus::NotAProxy);
    }
    let mut reduced = comp.alphas.clone();
    reduced[exempt_index] = 0.0;
    let rest = Component::evaluate(reduced, prob)?;
    let asc = comp.association.unwrap_or(0.0);
    let within = asc < exempt_asc + th.epsilon_prime - th.compare_tolerance;
    if !is_proxy(&rest, th) && within {
        Ok(ExemptionStatus::Exempt)
    } else {
        Ok(ExemptionStatus::Nonexempt)
    }
}

fn check_binary(z: &[f64]) -> Result<(usize, usize)> {
    let mut counts = (0, 0);
    for (i, &v) in z.iter().enumerate() {
        if v == 0.0 {
            counts.0 += 1;
        } else if v == 1.0 {
            counts.1 += 1;
        } else {
            return Err(Error::NotBinary(format!("value {v} at row {i}")));
        }
    }
    if counts.0 == 0 || counts.1 == 0 {
        return Err(Error::NotBinary("both groups must be present".into()));
    }
    Ok(counts)
}

/// `E[Ŷ | Z = 0] − E[Ŷ | Z = 1]` as sample means.
pub fn demographic_parity_gap(yhat: &[f64], z: &[f64]) -> Result<f64> {
    if yhat.len() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} protected values",
            yhat.len(),
            z.len()
        )));
    }
    let (n0, n1) = check_binary(z)?;
    let (mut s0, mut s1) = (0.0, 0.0);
    for (&y, &g) in yhat.iter().zip(z) {
        if g == 0.0 {
            s0 += y;
        } else {
            s1 += y;
        }
    }
    Ok(s0 / n0 as f64 - s1 / n1 as f64)
}

/// Sample covariance with divisor `m − 1`.
pub fn sample_covariance(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    if m < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / m as f64;
    let mb = b.iter().sum::<f64>() / m as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (m - 1) as f64
}

/// Association of two data series; `None` if either is constant.
pub fn series_association(a: &[f64], b: &[f64]) -> Option<f64> {
    let vab = sample_covariance(a, b);
    let (va, vb) = (sample_covariance(a, a), sample_covariance(b, b));
    (va > 0.0 && vb > 0.0).then(|| (vab * vab / (va * vb)).clamp(0.0, 1.0))
}

/// Both sides of the parity/association identity for a binary `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityIdentity {
    pub gap: f64,
    /// `Asc(Ŷ, Z)` from the covariance definition.
    pub association: f64,
    /// `gap² · Var(Z) / Var(Ŷ)`.
    pub from_gap: f64,
}

impl ParityIdentity {
    pub fn residual(&self) -> f64 {
        (self.association - self.from_gap).abs()
    }
}

pub fn parity_identity(yhat: &[f64], z: &[f64]) -> Result<ParityIdentity> {
    let gap = demographic_parity_gap(yhat, z)?;
    let var_y = sample_covariance(yhat, yhat);
    if var_y <= 0.0 {
        return Err(Error::DegenerateModel);
    }
    let var_z = sample_covariance(z, z);
    let cov = sample_covariance(yhat, z);
    Ok(ParityIdentity {
        gap,
        association: cov * cov / (var_y * var_z),
        from_gap: gap * gap * var_z / var_y,
    })
}

/// `|Asc(Ŷ, Z) − gap² · Var(Z)/Var(Ŷ)|`.
pub fn parity_association_identity(yhat: &[f64], z: &[f64]) -> Result<f64> {
    parity_identity(yhat, z).map(|p| p.residual())
}
