//! Detection of proxy use of a protected attribute in linear regression
//! models.
//!
//! Random variables are embedded as vectors whose dot products are their
//! covariances. A component of the model `Σ αᵢβᵢXᵢ` with `αᵢ ∈ [0, 1]` is a
//! proxy when its squared correlation with the protected attribute is at
//! least `ε` and its share of the model variance is at least `δ`. The search
//! for such components is a maximization over a second-order cone
//! intersected with the unit box.
//!
//! ```
//! use linproxy_core::{detect_approx, EmbeddedProblem, Thresholds, Verdict};
//! use nalgebra::DMatrix;
//!
//! // Z, X1, X2 with Corr(Z, X1) = 0.9 and X2 independent noise.
//! let sigma = DMatrix::from_row_slice(3, 3, &[
//!     1.0, 0.9, 0.0,
//!     0.9, 1.0, 0.0,
//!     0.0, 0.0, 1.0,
//! ]);
//! let prob = EmbeddedProblem::from_covariance(&sigma, &[1.0, 1.0]).unwrap();
//! let finding = detect_approx(&prob, &Thresholds::new(0.5, 0.4).unwrap()).unwrap();
//! assert_eq!(finding.verdict, Verdict::ProxyFound);
//! ```

pub mod audit;
pub mod conic;
pub mod data;
pub mod embedding;
pub mod error;
pub mod model;
pub mod oracle;
pub mod search;

pub use audit::{
    csv_tables, default_epsilons, embedded_problem, emit_report, fit_ols, mode_name, read_csv,
    read_model, run_audit, AuditConfig, AuditReport, DataSource, IngestSpec, ModelSource,
    OutputFormat, SCHEMA_VERSION,
};
pub use conic::{
    solve_linear, solve_norm_max, ConeInstance, NormMaxOptions, Residuals, Side, SolveResult,
    SolveStatus,
};
pub use data::Dataset;
pub use embedding::{
    embed, embed_with, estimate_covariance, psd_decompose, psd_decompose_with, CovarianceMatrix,
    Decomposition, EmbeddedProblem,
};
pub use error::{Error, Result};
pub use model::{
    association, demographic_parity_gap, exemption_status, influence, input_association, is_proxy,
    parity_association_identity, Component, ExemptionStatus, LinearModel, Thresholds,
};
pub use oracle::{
    grid_best, grid_best_multi, grid_has_proxy, grid_has_proxy_restricted, lipschitz_bound,
    GridAnswer, GridSpec,
};
pub use search::{
    detect_approx, detect_exact, detect_exact_with, detect_nonexempt, detect_nonexempt_with,
    detect_restricted, raised_epsilon, sweep, sweep_with, AuditFinding, SearchMode, SearchPath,
    SweepMode, SweepPoint, SweepRow, Verdict,
};
