//! Covariance estimation and the vector embedding in which covariance is a
//! dot product.
//!
//! Random variables `Z, X1, .., Xn` are mapped to the columns of a matrix `A`
//! with `AᵀA = Σ`. Any such factorization works; the eigendecomposition
//! square root tolerates the rank-deficient estimates that real data produce,
//! and a pivoted Cholesky factorization is used when `Σ` is safely positive
//! definite.

use std::io::Read;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// Eigenvalues below `-CLAMP_TOLERANCE * ‖Σ‖` mean the input is not PSD.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Symmetric PSD matrix over labelled variables. Label 0 is the protected
/// attribute by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    labels: Vec<String>,
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(labels: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        let d = labels.len();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{d} labels for a {}x{} matrix",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotCovariance("non-finite entry".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            if entries[(i, i)] < 0.0 {
                return Err(Error::NotCovariance(format!(
                    "negative variance for `{}`",
                    labels[i]
                )));
            }
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::NotCovariance(format!(
                        "asymmetric entries for `{}` and `{}`",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        let entries = (&entries + entries.transpose()) * 0.5;
        Ok(Self { labels, entries })
    }

    /// Unlabelled matrix; variables are named `v0, v1, ..`.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        let labels = (0..entries.nrows()).map(|i| format!("v{i}")).collect();
        Self::new(labels, entries)
    }

    /// Reads a square CSV whose header row holds the labels.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let d = labels.len();
        let mut values = Vec::with_capacity(d * d);
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "covariance row {} has {} entries, expected {d}",
                    r + 1,
                    rec.len()
                )));
            }
            for (c, cell) in rec.iter().enumerate() {
                let v = cell.parse::<f64>().map_err(|_| Error::NonNumeric {
                    column: labels[c].clone(),
                    row: r + 1,
                    value: cell.to_string(),
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows != d {
            return Err(Error::DimensionMismatch(format!(
                "covariance matrix has {rows} rows and {d} labels"
            )));
        }
        Self::new(labels, DMatrix::from_row_slice(d, d, &values))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        let i = self
            .index_of(a)
            .ok_or_else(|| Error::UnknownColumn(a.into()))?;
        let j = self
            .index_of(b)
            .ok_or_else(|| Error::UnknownColumn(b.into()))?;
        Ok(self.entries[(i, j)])
    }

    /// Principal submatrix over `labels`, in that order.
    pub fn select(&self, labels: &[String]) -> Result<Self> {
        let idx = labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::UnknownColumn(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = idx.len();
        let entries = DMatrix::from_fn(d, d, |i, j| self.entries[(idx[i], idx[j])]);
        Ok(Self {
            labels: labels.to_vec(),
            entries,
        })
    }
}

/// Unbiased sample covariance (divisor `m - 1`) of the named columns.
pub fn estimate_covariance(data: &Dataset, columns: &[String]) -> Result<CovarianceMatrix> {
    let m = data.rows();
    if m < 2 {
        return Err(Error::TooFewRows { needed: 2, got: m });
    }
    let cols = columns
        .iter()
        .map(|c| data.column(c))
        .collect::<Result<Vec<_>>>()?;
    for (name, col) in columns.iter().zip(&cols) {
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                column: name.clone(),
                row,
            });
        }
    }
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / m as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let d = columns.len();
    let mut entries = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum();
            let v = s / (m - 1) as f64;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(columns.to_vec(), entries)
}

/// Factorization route for [`psd_decompose_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decomposition {
    /// Pivoted Cholesky when `Σ` is strictly positive definite, otherwise the
    /// eigendecomposition square root.
    #[default]
    Auto,
    Eigen,
    Cholesky,
}

/// Returns `A` with `AᵀA = Σ` using [`Decomposition::Auto`].
pub fn psd_decompose(sigma: &CovarianceMatrix) -> Result<DMatrix<f64>> {
    psd_decompose_with(sigma, Decomposition::Auto)
}

pub fn psd_decompose_with(sigma: &CovarianceMatrix, method: Decomposition) -> Result<DMatrix<f64>> {
    let s = sigma.entries();
    match method {
        Decomposition::Eigen => eigen_sqrt(s),
        Decomposition::Cholesky => pivoted_cholesky(s).map(|f| f.factor),
        Decomposition::Auto => match pivoted_cholesky(s) {
            Ok(f) if f.rank == s.nrows() && f.min_pivot > 1e-8 * f.max_pivot => Ok(f.factor),
            _ => eigen_sqrt(s),
        },
    }
}

/// Symmetric square root `Q Λ^½ Qᵀ` after clamping round-off negatives.
fn eigen_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = s.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(s.clone());
    let norm = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -CLAMP_TOLERANCE * norm {
        return Err(Error::NotCovariance(format!(
            "eigenvalue {min:.3e} below clamp threshold (norm {norm:.3e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

struct CholeskyFactor {
    factor: DMatrix<f64>,
    rank: usize,
    min_pivot: f64,
    max_pivot: f64,
}

/// Outer-product Cholesky with diagonal pivoting. Returns `A` (rows beyond
/// the numerical rank are zero) with `AᵀA = Σ` in the original variable order.
fn pivoted_cholesky(s: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let d = s.nrows();
    let norm = inf_norm(s);
    let stop = 1e-14 * norm.max(f64::MIN_POSITIVE) * d.max(1) as f64;
    let mut work = s.clone();
    // Row k of `r` is the k-th pivot's factor row, indexed by original variable.
    let mut r = DMatrix::zeros(d, d);
    let mut done = vec![false; d];
    let mut rank = 0;
    let mut min_pivot = f64::INFINITY;
    let mut max_pivot = 0.0_f64;
    for k in 0..d {
        let (p, piv) = (0..d)
            .filter(|&i| !done[i])
            .map(|i| (i, work[(i, i)]))
            .fold((usize::MAX, f64::NEG_INFINITY), |a, b| {
                if b.1 > a.1 {
                    b
                } else {
                    a
                }
            });
        if p == usize::MAX || piv <= stop {
            break;
        }
        done[p] = true;
        let root = piv.sqrt();
        for j in 0..d {
            if !done[j] {
                r[(k, j)] = work[(p, j)] / root;
            }
        }
        r[(k, p)] = root;
        for i in 0..d {
            if done[i] {
                continue;
            }
            for j in 0..d {
                if !done[j] {
                    work[(i, j)] -= r[(k, i)] * r[(k, j)];
                }
            }
        }
        rank += 1;
        min_pivot = min_pivot.min(piv);
        max_pivot = max_pivot.max(piv);
    }
    for i in (0..d).filter(|&i| !done[i]) {
        if work[(i, i)] < -CLAMP_TOLERANCE * norm {
            return Err(Error::NotCovariance(format!(
                "negative Schur complement {:.3e}",
                work[(i, i)]
            )));
        }
    }
    Ok(CholeskyFactor {
        factor: r,
        rank,
        min_pivot,
        max_pivot,
    })
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Protected attribute and model inputs as vectors, plus the scaled
/// columns `βᵢxᵢ` of `A'` and their norms `cᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedProblem {
    names: Vec<String>,
    coefficients: Vec<f64>,
    z: DVector<f64>,
    inputs: DMatrix<f64>,
    columns: DMatrix<f64>,
    c: Vec<f64>,
    model_variance: f64,
}

/// Embeds `model` using the covariance over `[protected, model inputs..]`.
/// The protected attribute is `sigma`'s label 0.
pub fn embed(model: &LinearModel, sigma: &CovarianceMatrix) -> Result<EmbeddedProblem> {
    embed_with(model, sigma, Decomposition::Auto)
}

pub fn embed_with(
    model: &LinearModel,
    sigma: &CovarianceMatrix,
    method: Decomposition,
) -> Result<EmbeddedProblem> {
    let protected = sigma
        .labels()
        .first()
        .ok_or_else(|| Error::NotCovariance("empty matrix".into()))?;
    let mut labels = Vec::with_capacity(model.len() + 1);
    labels.push(protected.clone());
    for name in model.inputs() {
        if name == protected {
            return Err(Error::InvalidModel(format!(
                "protected attribute `{name}` used as a model input"
            )));
        }
        labels.push(name.clone());
    }
    let sub = sigma.select(&labels)?;
    let a = psd_decompose_with(&sub, method)?;
    EmbeddedProblem::from_factor(model.inputs().to_vec(), model.coefficients().to_vec(), &a)
}

impl EmbeddedProblem {
    /// Builds the problem from `A` (columns `z, x1, .., xn`) and coefficients.
    pub fn from_factor(
        names: Vec<String>,
        coefficients: Vec<f64>,
        a: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = coefficients.len();
        if a.ncols() != n + 1 || names.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} columns for {n} inputs",
                a.ncols()
            )));
        }
        let z = a.column(0).into_owned();
        if z.norm_squared() == 0.0 {
            return Err(Error::ConstantProtected);
        }
        let inputs = a.columns(1, n).into_owned();
        let mut columns = inputs.clone();
        for (j, &b) in coefficients.iter().enumerate() {
            columns.column_mut(j).scale_mut(b);
        }
        let c = columns.column_iter().map(|col| col.norm()).collect();
        let total: DVector<f64> = columns.column_sum();
        Ok(Self {
            names,
            coefficients,
            z,
            inputs,
            columns,
            c,
            model_variance: total.norm_squared(),
        })
    }

    /// Embeds an unlabelled covariance matrix (index 0 protected).
    pub fn from_covariance(sigma: &DMatrix<f64>, coefficients: &[f64]) -> Result<Self> {
        let cov = CovarianceMatrix::from_matrix(sigma.clone())?;
        let model = LinearModel::new(cov.labels()[1..].to_vec(), coefficients.to_vec(), 0.0)?;
        embed(&model, &cov)
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    /// Unscaled input vectors `xᵢ`.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    /// `A' = [β₁x₁ .. βₙxₙ]`.
    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `Var(Ŷ) = ‖Σᵢ βᵢxᵢ‖²`.
    pub fn model_variance(&self) -> f64 {
        self.model_variance
    }

    /// Embedded component vector `A'α`.
    pub fn component_vector(&self, alphas: &[f64]) -> DVector<f64> {
        &self.columns * DVector::from_column_slice(alphas)
    }

    /// Copy with column `index` zeroed (`β_index = 0`).
    pub fn without_input(&self, index: usize) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        let mut coefficients = self.coefficients.clone();
        coefficients[index] = 0.0;
        let mut a = DMatrix::zeros(self.z.len(), self.len() + 1);
        a.set_column(0, &self.z);
        a.columns_mut(1, self.len()).copy_from(&self.inputs);
        Self::from_factor(self.names.clone(), coefficients, &a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::assert_close;

    fn hand_dataset() -> Dataset {
        Dataset::from_columns(vec![
            ("z", vec![0.0, 0.0, 1.0, 1.0]),
            ("x", vec![1.0, 2.0, 3.0, 4.0]),
        ])
        .unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gram_error(a: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
        (a.transpose() * a - s).amax()
    }

    #[test]
    fn hand_covariance() {
        let cov = estimate_covariance(&hand_dataset(), &names(&["z", "x"])).unwrap();
        assert_close(cov.get("z", "x").unwrap(), 2.0 / 3.0, 1e-15);
        assert_close(cov.get("z", "z").unwrap(), 1.0 / 3.0, 1e-15);
        assert_close(cov.get("x", "x").unwrap(), 5.0 / 3.0, 1e-15);
    }

    #[test]
    fn identical_and_constant_columns() {
        let data = Dataset::from_columns(vec![
            ("a", vec![1.0, 4.0, 2.0, 8.0]),
            ("b", vec![1.0, 4.0, 2.0, 8.0]),
            ("k", vec![3.0; 4]),
        ])
        .unwrap();
        let cov = estimate_covariance(&data, &names(&["a", "b", "k"])).unwrap();
        let s = cov.entries();
        assert_eq!(s[(0, 1)], s[(0, 0)]);
        assert_eq!(s[(0, 1)], s[(1, 1)]);
        for i in 0..3 {
            assert_eq!(s[(2, i)], 0.0);
            assert_eq!(s[(i, 2)], 0.0);
        }
    }

    #[test]
    fn covariance_errors() {
        let one = Dataset::from_columns(vec![("a", vec![1.0])]).unwrap();
        assert!(matches!(
            estimate_covariance(&one, &names(&["a"])),
            Err(Error::TooFewRows { .. })
        ));
        let missing = Dataset::from_columns(vec![("a", vec![1.0, f64::NAN, 2.0])]).unwrap();
        match estimate_covariance(&missing, &names(&["a"])) {
            Err(Error::MissingValue { column, row }) => {
                assert_eq!(column, "a");
                assert_eq!(row, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            estimate_covariance(&hand_dataset(), &names(&["nope"])),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn decompositions_reproduce_sigma() {
        let id = DMatrix::<f64>::identity(4, 4);
        for m in [
            Decomposition::Auto,
            Decomposition::Eigen,
            Decomposition::Cholesky,
        ] {
            let cov = CovarianceMatrix::from_matrix(id.clone()).unwrap();
            assert!(gram_error(&psd_decompose_with(&cov, m).unwrap(), &id) < 1e-14);
        }
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let rank1 = &v * v.transpose();
        let cov = CovarianceMatrix::from_matrix(rank1.clone()).unwrap();
        for m in [
            Decomposition::Auto,
            Decomposition::Eigen,
            Decomposition::Cholesky,
        ] {
            let a = psd_decompose_with(&cov, m).unwrap();
            assert!(gram_error(&a, &rank1) <= 1e-10 * inf_norm(&rank1));
        }
        let hand = estimate_covariance(&hand_dataset(), &names(&["z", "x"])).unwrap();
        let a = psd_decompose(&hand).unwrap();
        assert!(gram_error(&a, hand.entries()) < 1e-10);
    }

    #[test]
    fn indefinite_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let cov = CovarianceMatrix::from_matrix(s).unwrap();
        for m in [
            Decomposition::Auto,
            Decomposition::Eigen,
            Decomposition::Cholesky,
        ] {
            assert!(matches!(
                psd_decompose_with(&cov, m),
                Err(Error::NotCovariance(_))
            ));
        }
    }

    #[test]
    fn round_off_negative_is_clamped() {
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let mut s = &v * v.transpose();
        s[(0, 0)] += 1e-14;
        s[(1, 1)] -= 1e-14;
        let cov = CovarianceMatrix::from_matrix(s.clone()).unwrap();
        let a = psd_decompose_with(&cov, Decomposition::Eigen).unwrap();
        assert!(gram_error(&a, &s) < 1e-12);
    }

    #[test]
    fn asymmetric_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CovarianceMatrix::from_matrix(s).is_err());
    }

    #[test]
    fn covariance_csv() {
        let text = "z,a,b\n1,0.5,0\n0.5,2,0.1\n0,0.1,1\n";
        let cov = CovarianceMatrix::from_csv(text.as_bytes()).unwrap();
        assert_eq!(cov.labels(), &names(&["z", "a", "b"])[..]);
        assert_eq!(cov.get("a", "b").unwrap(), 0.1);
        assert!(CovarianceMatrix::from_csv("z,a\n1,0\n".as_bytes()).is_err());
        assert!(CovarianceMatrix::from_csv("z,a\n1,x\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn embed_independent_inputs() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let prob = EmbeddedProblem::from_covariance(&s, &[1.0, 1.0]).unwrap();
        assert_close(prob.model_variance(), 5.0, 1e-12);
    }

    #[test]
    fn embed_cancellation() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, -0.99, 0.0, -0.99, 1.0]);
        let prob = EmbeddedProblem::from_covariance(&s, &[1.0, 1.0]).unwrap();
        assert_close(prob.model_variance(), 0.02, 1e-12);
    }

    #[test]
    fn embed_zero_coefficient() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 1.0, 0.1, 0.2, 0.1, 1.0]);
        let prob = EmbeddedProblem::from_covariance(&s, &[0.0, 2.0]).unwrap();
        assert_eq!(prob.c()[0], 0.0);
        assert!(prob.columns().column(0).iter().all(|&v| v == 0.0));
        assert!(prob.c()[1] > 0.0);
    }

    #[test]
    fn embed_errors() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert!(matches!(
            EmbeddedProblem::from_covariance(&s, &[1.0]),
            Err(Error::ConstantProtected)
        ));
        let cov = CovarianceMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let model = LinearModel::new(vec!["nope".into()], vec![1.0], 0.0).unwrap();
        assert!(matches!(embed(&model, &cov), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn embed_uses_label_order_of_model() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 2.0, 0.1, 0.2, 0.1, 3.0]);
        let cov = CovarianceMatrix::new(names(&["z", "a", "b"]), s).unwrap();
        let model = LinearModel::new(names(&["b", "a"]), vec![1.0, 1.0], 0.0).unwrap();
        let prob = embed(&model, &cov).unwrap();
        let x = prob.inputs();
        assert_close(x.column(0).norm_squared(), 3.0, 1e-12);
        assert_close(x.column(0).dot(prob.z()), 0.2, 1e-12);
        assert_close(x.column(1).dot(&x.column(0)), 0.1, 1e-12);
    }
}
