//! Homogeneous metric structure: gauge norms of Korányi type (and the
//! Carnot-Carathéodory distance itself used as a gauge), horizontal paths
//! with the ball-box construction behind them, a direct-collocation estimator
//! for the CC distance, and empirical estimates of the gauge/CC equivalence
//! constant and the quasi-triangle constant.

mod ballbox;
mod cc;
mod gauge;

pub use ballbox::{ballbox_path, BallBoxDecomposition, HorizontalPath, PathSegment};
pub use cc::{cc_distance, CcBudget, CcEstimate};
pub use gauge::{
    estimate_equivalence_lambda, estimate_quasi_triangle_alpha, GaugeKind, HomogeneousGauge,
    MetricEquivalence,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("gauge layer weights must be strictly positive")]
    NonPositiveWeight,
    #[error("gauge needs one weight per layer ({want}), got {got}")]
    LayerWeightCount { want: usize, got: usize },
    #[error("horizontal weights must be strictly positive and one per horizontal coordinate")]
    BadHorizontalWeights,
    #[error("point dimension {got} does not match the algebra ({want})")]
    DimensionMismatch { got: usize, want: usize },
    #[error("ball-box path endpoint misses the target by {defect:.3e}")]
    PathEndpointDefect { defect: f64 },
    #[error("ball-box moves for layer {layer} could not be solved (degenerate brackets)")]
    UnreachableLayer { layer: usize },
    #[error("CC optimizer failed to produce a finite path (best defect {defect:.3e})")]
    CcNotFinite { defect: f64 },
    #[error("CC upper bound {upper:.6e} fell below the horizontal lower bound {lower:.6e}")]
    UpperBelowLower { upper: f64, lower: f64 },
    #[error("budget must have at least one control interval and one start")]
    BadBudget,
    #[error("ball-box constants violate 0 < b < a (a = {a:.4}, b = {b:.4})")]
    BadBallBoxConstants { a: f64, b: f64 },
    #[error("estimate needs at least one sample")]
    NoSamples,
}
