//! Homogeneous gauges. A gauge assigns every point a nonnegative size that
//! vanishes only at the identity, is symmetric under group inversion and
//! scales linearly under dilations. The workhorse is the Korányi-type family
//!
//! ```text
//! ‖x‖ = ( Σ_j  a_j |x_(j)|^{2k!/j} )^{1/2k!}
//! ```
//!
//! with one positive weight per layer; on the Heisenberg groups the classical
//! second-layer weight 16 makes the induced left-invariant distance an exact
//! metric, so its stored quasi-triangle constant is 1. The CC distance itself
//! is also available as a gauge, backed by the collocation estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cc::{cc_distance, CcBudget};
use super::MetricError;
use crate::algebra::{GroupPoint, StratifiedAlgebra};
use crate::scalar::Real;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum GaugeKind<S: Real> {
    /// Closed-form per-layer gauge; `horizontal_weights` optionally stretches
    /// individual first-layer coordinates, which breaks rotation invariance
    /// (kept available for experiments).
    Koranyi {
        layer_weights: Vec<S>,
        horizontal_weights: Option<Vec<S>>,
    },
    /// The CC distance used as a gauge; every evaluation runs the optimizer.
    CarnotCaratheodory { budget: CcBudget<S> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogeneousGauge<S: Real> {
    kind: GaugeKind<S>,
    /// Quasi-triangle constant `α` with `‖x·y‖ ≤ α(‖x‖+‖y‖)`: exact where
    /// known (1 on abelian and Heisenberg defaults, CC), else a conservative
    /// default refined by [`estimate_quasi_triangle_alpha`].
    alpha: S,
    rotation_invariant: bool,
}

impl<S: Real> HomogeneousGauge<S> {
    /// Default Korányi gauge for an algebra: unit layer weights, except the
    /// classical 16 on the second layer of the Heisenberg groups.
    pub fn koranyi_default(alg: &StratifiedAlgebra<S>) -> Self {
        let heis = alg.name().starts_with("heisenberg");
        let mut layer_weights = vec![S::one(); alg.step()];
        if heis && alg.step() == 2 {
            layer_weights[1] = S::of(16.0);
        }
        let alpha = if alg.step() == 1 || (heis && alg.step() == 2) {
            S::one()
        } else {
            S::of(2.0)
        };
        Self {
            kind: GaugeKind::Koranyi {
                layer_weights,
                horizontal_weights: None,
            },
            alpha,
            rotation_invariant: true,
        }
    }

    /// Korányi gauge with explicit per-layer weights.
    pub fn koranyi(
        alg: &StratifiedAlgebra<S>,
        layer_weights: Vec<S>,
    ) -> Result<Self, MetricError> {
        if layer_weights.len() != alg.step() {
            return Err(MetricError::LayerWeightCount {
                want: alg.step(),
                got: layer_weights.len(),
            });
        }
        if layer_weights.iter().any(|&w| !(w > S::zero())) {
            return Err(MetricError::NonPositiveWeight);
        }
        Ok(Self {
            kind: GaugeKind::Koranyi {
                layer_weights,
                horizontal_weights: None,
            },
            alpha: S::of(2.0),
            rotation_invariant: true,
        })
    }

    /// Anisotropic variant: stretches first-layer coordinate `i` by
    /// `weights[i]` inside the horizontal block norm. Clears the rotation
    /// invariance flag, so κ-type operations will refuse this gauge.
    pub fn with_horizontal_weights(
        mut self,
        alg: &StratifiedAlgebra<S>,
        weights: Vec<S>,
    ) -> Result<Self, MetricError> {
        if weights.len() != alg.horizontal_dim() || weights.iter().any(|&w| !(w > S::zero())) {
            return Err(MetricError::BadHorizontalWeights);
        }
        match &mut self.kind {
            GaugeKind::Koranyi {
                horizontal_weights, ..
            } => *horizontal_weights = Some(weights),
            GaugeKind::CarnotCaratheodory { .. } => {
                return Err(MetricError::BadHorizontalWeights)
            }
        }
        self.rotation_invariant = false;
        Ok(self)
    }

    /// The CC distance as a gauge. A true metric, so `α = 1`; rotation
    /// invariance is not certified for general orthogonal maps, so κ-type
    /// operations refuse it.
    pub fn carnot_caratheodory(budget: CcBudget<S>) -> Self {
        Self {
            kind: GaugeKind::CarnotCaratheodory { budget },
            alpha: S::one(),
            rotation_invariant: false,
        }
    }

    pub fn kind(&self) -> &GaugeKind<S> {
        &self.kind
    }

    pub fn is_koranyi(&self) -> bool {
        matches!(self.kind, GaugeKind::Koranyi { .. })
    }

    pub fn rotation_invariant(&self) -> bool {
        self.rotation_invariant
    }

    pub fn quasi_triangle_alpha(&self) -> S {
        self.alpha
    }

    /// Overrides the stored quasi-triangle constant (e.g. with an empirical
    /// estimate).
    pub fn with_alpha(mut self, alpha: S) -> Self {
        self.alpha = alpha;
        self
    }

    /// Gauge norm of a point.
    pub fn norm(&self, alg: &StratifiedAlgebra<S>, x: &GroupPoint<S>) -> S {
        debug_assert_eq!(x.dim(), alg.n());
        match &self.kind {
            GaugeKind::Koranyi {
                layer_weights,
                horizontal_weights,
            } => {
                let k = alg.step();
                let root = 2 * factorial(k); // 2k!
                let mut sum = S::zero();
                for (layer, &aw) in layer_weights.iter().enumerate() {
                    let w = layer + 1;
                    let mut block2 = S::zero();
                    for i in alg.layer_range(w) {
                        let mut c = x[i];
                        if w == 1 {
                            if let Some(hw) = horizontal_weights {
                                c = c * hw[i];
                            }
                        }
                        block2 += c * c;
                    }
                    // |x_(j)|^{2k!/j} = (block²)^{k!/j}, an integer power.
                    let expo = factorial(k) / w;
                    sum += aw * block2.powi(expo as i32);
                }
                sum.powf(S::one() / S::of(root as f64))
            }
            GaugeKind::CarnotCaratheodory { budget } => {
                let zero = alg.zero();
                match cc_distance(alg, x, &zero, budget) {
                    Ok(est) => est.upper,
                    Err(_) => S::nan(),
                }
            }
        }
    }

    /// Left-invariant gauge distance `d(x, y) = ‖y⁻¹·x‖`.
    pub fn distance(
        &self,
        alg: &StratifiedAlgebra<S>,
        x: &GroupPoint<S>,
        y: &GroupPoint<S>,
    ) -> S {
        self.norm(alg, &alg.displacement(x, y))
    }

    /// Per-coordinate half-widths of the smallest weighted box guaranteed to
    /// contain the unit ball of a Korányi gauge: coordinate `i` of weight `w`
    /// is bounded by `a_w^{-w/(2k!)}` (shrunk further by anisotropic
    /// horizontal weights > 1).
    pub fn unit_box_half_widths(&self, alg: &StratifiedAlgebra<S>) -> Option<Vec<S>> {
        match &self.kind {
            GaugeKind::Koranyi {
                layer_weights,
                horizontal_weights,
            } => {
                let root = S::of((2 * factorial(alg.step())) as f64);
                let mut h = Vec::with_capacity(alg.n());
                for i in 0..alg.n() {
                    let w = alg.weight(i);
                    let aw = layer_weights[w - 1];
                    let mut half = aw.powf(-S::of(w as f64) / root);
                    if w == 1 {
                        if let Some(hw) = horizontal_weights {
                            half = half / hw[i];
                        }
                    }
                    h.push(half);
                }
                Some(h)
            }
            GaugeKind::CarnotCaratheodory { .. } => None,
        }
    }
}

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

/// Outcome of the gauge/CC equivalence estimate: `λ` with
/// `λ⁻¹ d_cc ≤ d_gauge ≤ λ d_cc` over the sampled directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricEquivalence<S> {
    pub lambda: S,
    pub samples: usize,
    pub seed: u64,
    /// Largest CC estimate seen on the unit gauge sphere.
    pub max_cc: S,
    /// Smallest CC estimate seen on the unit gauge sphere.
    pub min_cc: S,
}

/// Estimates the equivalence constant between a gauge and the CC distance by
/// sampling the unit gauge sphere and measuring `max(d_cc, 1/d_cc)`.
pub fn estimate_equivalence_lambda<S: Real>(
    alg: &StratifiedAlgebra<S>,
    gauge: &HomogeneousGauge<S>,
    budget: &CcBudget<S>,
    samples: usize,
    seed: u64,
) -> Result<MetricEquivalence<S>, MetricError> {
    if samples == 0 {
        return Err(MetricError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = alg.zero();
    let mut lambda = S::one();
    let mut max_cc = S::zero();
    let mut min_cc = S::infinity();
    let mut kept = 0usize;
    while kept < samples {
        let coords: Vec<S> = (0..alg.n())
            .map(|_| S::of(rng.random_range(-1.0..1.0)))
            .collect();
        let p = GroupPoint::new(coords);
        let g = gauge.norm(alg, &p);
        if !(g > S::of(1e-9)) {
            continue;
        }
        // Project to the unit gauge sphere by dilation.
        let unit = alg.dilate(S::one() / g, &p);
        let est = cc_distance(alg, &unit, &zero, budget)?;
        let d = est.upper;
        if !d.is_finite() || d <= S::zero() {
            return Err(MetricError::CcNotFinite {
                defect: est.endpoint_defect.as_f64(),
            });
        }
        lambda = lambda.max(d).max(S::one() / d);
        max_cc = max_cc.max(d);
        min_cc = min_cc.min(d);
        kept += 1;
    }
    Ok(MetricEquivalence {
        lambda,
        samples,
        seed,
        max_cc,
        min_cc,
    })
}

/// Empirical quasi-triangle constant: the largest `‖x·y‖/(‖x‖+‖y‖)` over
/// random pairs drawn at mixed relative scales.
pub fn estimate_quasi_triangle_alpha<S: Real>(
    alg: &StratifiedAlgebra<S>,
    gauge: &HomogeneousGauge<S>,
    samples: usize,
    seed: u64,
) -> Result<S, MetricError> {
    if samples == 0 {
        return Err(MetricError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = S::zero();
    for _ in 0..samples {
        let draw = |rng: &mut ChaCha8Rng| {
            let coords: Vec<S> = (0..alg.n())
                .map(|_| S::of(rng.random_range(-1.0..1.0)))
                .collect();
            GroupPoint::new(coords)
        };
        let x = draw(&mut rng);
        // Mixed scales probe the worst relative configuration.
        let scale = S::of(2.0f64.powf(rng.random_range(-4.0..4.0)));
        let y = alg.dilate(scale, &draw(&mut rng));
        let nx = gauge.norm(alg, &x);
        let ny = gauge.norm(alg, &y);
        if nx + ny <= S::zero() {
            continue;
        }
        let nxy = gauge.norm(alg, &alg.multiply(&x, &y));
        alpha = alpha.max(nxy / (nx + ny));
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    type Alg = StratifiedAlgebra<f64>;

    fn h1() -> (Alg, HomogeneousGauge<f64>) {
        let alg = Alg::heisenberg(1).unwrap();
        let gauge = HomogeneousGauge::koranyi_default(&alg);
        (alg, gauge)
    }

    #[test]
    fn h1_default_gauge_values() {
        let (alg, gauge) = h1();
        let e1 = GroupPoint::new(vec![1.0, 0.0, 0.0]);
        let t1 = GroupPoint::new(vec![0.0, 0.0, 1.0]);
        assert!((gauge.norm(&alg, &e1) - 1.0).abs() < 1e-14);
        // (16·1)^{1/4} = 2 with the classical second-layer weight.
        assert!((gauge.norm(&alg, &t1) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauge_axioms_hold_pointwise() {
        let (alg, gauge) = h1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x = GroupPoint::new(
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
            );
            let n = gauge.norm(&alg, &x);
            assert!(n >= 0.0);
            // Symmetry under inversion.
            let ni = gauge.norm(&alg, &alg.inverse(&x));
            assert!((n - ni).abs() < 1e-12);
            // Degree-1 homogeneity.
            let lam = rng.random_range(0.1..3.0);
            let nd = gauge.norm(&alg, &alg.dilate(lam, &x));
            assert!((nd - lam * n).abs() < 1e-12 * (1.0 + nd));
        }
        assert_eq!(gauge.norm(&alg, &alg.zero()), 0.0);
    }

    #[test]
    fn norm_vanishes_only_at_identity() {
        let (alg, gauge) = h1();
        let x = GroupPoint::new(vec![0.0, 0.0, 1e-8]);
        assert!(gauge.norm(&alg, &x) > 0.0);
    }

    #[test]
    fn rotation_invariance_of_default_gauge() {
        let (alg, gauge) = h1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = GroupPoint::new(
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
            );
            let a: Vec<Vec<f64>> = crate::linalg::random_orthogonal(2, &mut rng);
            let y = alg.apply_horizontal_rotation(&a, &x).unwrap();
            assert!((gauge.norm(&alg, &x) - gauge.norm(&alg, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn anisotropic_gauge_loses_rotation_invariance_flag() {
        let (alg, gauge) = h1();
        let g = gauge
            .with_horizontal_weights(&alg, vec![1.0, 3.0])
            .unwrap();
        assert!(!g.rotation_invariant());
        let ex = GroupPoint::new(vec![1.0, 0.0, 0.0]);
        let ey = GroupPoint::new(vec![0.0, 1.0, 0.0]);
        assert!((g.norm(&alg, &ex) - 1.0).abs() < 1e-14);
        assert!((g.norm(&alg, &ey) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn left_invariance_of_gauge_distance() {
        let (alg, gauge) = h1();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let draw = |rng: &mut ChaCha8Rng| {
                GroupPoint::new(
                    (0..3).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
                )
            };
            let (x, y, a) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let d = gauge.distance(&alg, &x, &y);
            let dt = gauge.distance(&alg, &alg.multiply(&a, &x), &alg.multiply(&a, &y));
            assert!((d - dt).abs() < 1e-11 * (1.0 + d));
        }
    }

    #[test]
    fn engel_gauge_homogeneous() {
        let alg = Alg::engel().unwrap();
        let gauge = HomogeneousGauge::koranyi_default(&alg);
        let x = GroupPoint::new(vec![0.3, -0.2, 0.15, 0.4]);
        let n = gauge.norm(&alg, &x);
        let nd = gauge.norm(&alg, &alg.dilate(2.0, &x));
        assert!((nd - 2.0 * n).abs() < 1e-12 * (1.0 + nd));
    }

    #[test]
    fn unit_box_bounds_unit_ball() {
        let (alg, gauge) = h1();
        let h = gauge.unit_box_half_widths(&alg).unwrap();
        // 16^{-2/4} = 1/4 on the vertical coordinate.
        assert!((h[2] - 0.25).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let x = GroupPoint::new(
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
            );
            if gauge.norm(&alg, &x) < 1.0 {
                for i in 0..3 {
                    assert!(x[i].abs() <= h[i] + 1e-12);
                }
            }
        }
    }
}
