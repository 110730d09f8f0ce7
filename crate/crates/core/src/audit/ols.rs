//! Ordinary least squares through a QR factorization of the centered design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// Relative size of an `R` diagonal entry below which the design is treated
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub model: LinearModel,
    /// In-sample coefficient of determination.
    pub r_squared: f64,
}

fn centered(col: &[f64]) -> (DVector<f64>, f64) {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    (
        DVector::from_iterator(col.len(), col.iter().map(|v| v - mean)),
        mean,
    )
}

/// Fits `target ~ features` with an intercept.
pub fn fit_ols(data: &Dataset, target: &str, features: &[String]) -> Result<OlsFit> {
    let m = data.rows();
    let n = features.len();
    if n == 0 {
        return Err(Error::Config("no feature columns".into()));
    }
    if m < n + 2 {
        return Err(Error::TooFewRows {
            needed: n + 2,
            got: m,
        });
    }
    let (y, y_mean) = centered(data.column(target)?);
    let sst = y.norm_squared();
    if sst == 0.0 {
        return Err(Error::ConstantTarget(target.to_string()));
    }
    let mut x = DMatrix::zeros(m, n);
    let mut means = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for (j, name) in features.iter().enumerate() {
        let (c, mean) = centered(data.column(name)?);
        norms.push(c.norm());
        x.set_column(j, &c);
        means.push(mean);
    }
    let qr = x.qr();
    let r = qr.r();
    for (j, name) in features.iter().enumerate() {
        if r[(j, j)].abs() <= RANK_TOLERANCE * norms[j].max(f64::MIN_POSITIVE) || norms[j] == 0.0 {
            return Err(Error::RankDeficient(name.clone()));
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, n).into_owned())
        .ok_or_else(|| Error::RankDeficient(features[n - 1].clone()))?;
    // The part of y outside the column space of X.
    let ssr = qty.rows(n, m - n).norm_squared();
    let r_squared = 1.0 - ssr / sst;
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit {
        model: LinearModel::new(features.to_vec(), beta.iter().copied().collect(), intercept)?,
        r_squared,
    })
}
