//! Horizontal paths and the ball-box construction.
//!
//! A horizontal path is a finite concatenation of flows along first-layer
//! generators; its endpoint is the group product of one-coordinate
//! exponentials, so no ODE integration is involved. `ballbox_path` steers to
//! an arbitrary target layer by layer: straight segments realize the
//! horizontal block, commutator squares `exp(sX_i)exp(uX_j)exp(-sX_i)exp(-uX_j)`
//! realize second-layer displacement `su·[X_i,X_j]`, and for step-3 targets
//! the square is conjugated once more by a first-layer segment (nested
//! squares), which is exact because all brackets of weight ≥ 4 vanish.
//!
//! [`BallBoxDecomposition`] carries the index template of that construction
//! (`M = Σ_l (3·2^{l-1} - 2) m_l` factors) together with empirically
//! calibrated box constants `0 < b < a < 1`: sampled points within CC
//! distance `bR` are reachable with box coordinates below `aR`, and sampled
//! box images with coordinates below `aR` stay inside the CC ball of radius
//! `R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cc::{cc_distance, CcBudget};
use super::MetricError;
use crate::algebra::{GroupPoint, StratifiedAlgebra};
use crate::linalg::least_norm_solve;
use crate::scalar::Real;

/// Duration `t` along generator `i` of the first layer: the flow
/// `τ ↦ x · exp(τ X_i)`, `τ` from 0 to `t`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PathSegment<S> {
    pub generator: usize,
    pub duration: S,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorizontalPath<S> {
    segments: Vec<PathSegment<S>>,
    experimental: bool,
}

impl<S: Real> HorizontalPath<S> {
    pub fn new(segments: Vec<PathSegment<S>>) -> Self {
        Self {
            segments,
            experimental: false,
        }
    }

    pub fn segments(&self) -> &[PathSegment<S>] {
        &self.segments
    }

    /// True when the path came out of the nested-square (step-3)
    /// construction, which is exercised less than the explicit step ≤ 2 one.
    pub fn experimental(&self) -> bool {
        self.experimental
    }

    /// Total time = CC length of the path (all segments are unit-speed
    /// horizontal flows).
    pub fn length(&self) -> S {
        self.segments
            .iter()
            .fold(S::zero(), |acc, s| acc + s.duration.abs())
    }

    pub fn endpoint(&self, alg: &StratifiedAlgebra<S>) -> GroupPoint<S> {
        self.endpoint_from(alg, &alg.zero())
    }

    pub fn endpoint_from(
        &self,
        alg: &StratifiedAlgebra<S>,
        start: &GroupPoint<S>,
    ) -> GroupPoint<S> {
        let mut p = start.clone();
        for seg in &self.segments {
            p = alg.multiply(&p, &alg.exp_generator(seg.generator, seg.duration));
        }
        p
    }
}

/// Intermediate plan: segments plus the largest box coordinate used, which
/// is the path's position in the ball-box anisotropic scaling (`|q|^{1/w}`
/// for a layer-`w` move of strength `q`).
struct Plan<S> {
    segments: Vec<PathSegment<S>>,
    box_extent: S,
    experimental: bool,
}

fn candidate_pairs<S: Real>(
    alg: &StratifiedAlgebra<S>,
    layer: usize,
) -> Vec<(usize, usize, Vec<S>)> {
    let target = alg.layer_range(layer);
    let mut out = Vec::new();
    for i in alg.layer_range(1) {
        for j in alg.layer_range(layer - 1) {
            // Antisymmetry makes (j, i) redundant when both sit in layer 1.
            if j <= i {
                continue;
            }
            let v: Vec<S> = target.clone().map(|l| alg.c(i, j, l)).collect();
            if v.iter().any(|&c| c != S::zero()) {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Commutator square reaching `exp(q·[X_i, X_j])` (plus a harmless
/// higher-layer leak in step-3 groups).
fn square<S: Real>(i: usize, j: usize, q: S) -> ([PathSegment<S>; 4], S) {
    let s = q.abs().sqrt();
    let u = if s > S::zero() { q / s } else { S::zero() };
    (
        [
            PathSegment {
                generator: i,
                duration: s,
            },
            PathSegment {
                generator: j,
                duration: u,
            },
            PathSegment {
                generator: i,
                duration: -s,
            },
            PathSegment {
                generator: j,
                duration: -u,
            },
        ],
        s,
    )
}

fn reverse_negate<S: Real>(segs: &[PathSegment<S>]) -> Vec<PathSegment<S>> {
    segs.iter()
        .rev()
        .map(|s| PathSegment {
            generator: s.generator,
            duration: -s.duration,
        })
        .collect()
}

/// Moves realizing a pure layer-`w` displacement `target` (given in that
/// layer's block coordinates), by strengths solved against the candidate
/// bracket vectors.
fn layer_moves<S: Real>(
    alg: &StratifiedAlgebra<S>,
    layer: usize,
    target: &[S],
) -> Result<Vec<(usize, usize, S)>, MetricError> {
    let cands = candidate_pairs(alg, layer);
    if cands.is_empty() {
        return Err(MetricError::UnreachableLayer { layer });
    }
    let m = target.len();
    let rows: Vec<Vec<S>> = (0..m)
        .map(|l| cands.iter().map(|c| c.2[l]).collect())
        .collect();
    let q = least_norm_solve(&rows, target)
        .ok_or(MetricError::UnreachableLayer { layer })?;
    Ok(cands
        .iter()
        .zip(q)
        .filter(|(_, s)| s.abs() > S::of(1e-300))
        .map(|(&(i, j, _), s)| (i, j, s))
        .collect())
}

fn plan_path<S: Real>(
    alg: &StratifiedAlgebra<S>,
    z: &GroupPoint<S>,
) -> Result<Plan<S>, MetricError> {
    if z.dim() != alg.n() {
        return Err(MetricError::DimensionMismatch {
            got: z.dim(),
            want: alg.n(),
        });
    }
    let mut plan = Plan {
        segments: Vec::new(),
        box_extent: S::zero(),
        experimental: false,
    };
    for i in 0..alg.horizontal_dim() {
        let c = z[i];
        if c != S::zero() {
            plan.segments.push(PathSegment {
                generator: i,
                duration: c,
            });
            plan.box_extent = plan.box_extent.max(c.abs());
        }
    }
    for layer in 2..=alg.step() {
        let reached = HorizontalPath::new(plan.segments.clone()).endpoint(alg);
        let rem = alg.displacement(z, &reached); // reached⁻¹ · z
        let block: Vec<S> = alg.layer_range(layer).map(|l| rem[l]).collect();
        if block.iter().all(|&v| v.abs() < S::of(1e-300)) {
            continue;
        }
        for (i, j, strength) in layer_moves(alg, layer, &block)? {
            if layer == 2 {
                let (segs, extent) = square(i, j, strength);
                plan.segments.extend_from_slice(&segs);
                plan.box_extent = plan.box_extent.max(extent);
            } else {
                // Nested: conjugate a square realizing exp(u X_j), j in the
                // second layer, by exp(s X_i); endpoint exp(s·u·[X_i, X_j]).
                plan.experimental = true;
                let s = strength.abs().powf(S::of(1.0 / 3.0));
                let u = if s > S::zero() {
                    strength / s
                } else {
                    S::zero()
                };
                let mut inner_target = vec![S::zero(); alg.layer_range(2).len()];
                let offset = alg.layer_range(2).start;
                inner_target[j - offset] = u;
                let inner = layer_moves(alg, 2, &inner_target)?;
                let mut b_segs: Vec<PathSegment<S>> = Vec::new();
                let mut extent = s;
                for (bi, bj, bq) in inner {
                    let (segs, e) = square(bi, bj, bq);
                    b_segs.extend_from_slice(&segs);
                    extent = extent.max(e);
                }
                plan.segments.push(PathSegment {
                    generator: i,
                    duration: s,
                });
                plan.segments.extend(b_segs.iter().copied());
                plan.segments.push(PathSegment {
                    generator: i,
                    duration: -s,
                });
                plan.segments.extend(reverse_negate(&b_segs));
                plan.box_extent = plan.box_extent.max(extent);
            }
        }
    }
    Ok(plan)
}

/// Horizontal path from the origin to `z`: explicit segments and commutator
/// squares for step ≤ 2, nested squares (flagged experimental) for step 3.
/// The endpoint is verified to 1e-9 in coordinates.
pub fn ballbox_path<S: Real>(
    alg: &StratifiedAlgebra<S>,
    z: &GroupPoint<S>,
) -> Result<HorizontalPath<S>, MetricError> {
    let plan = plan_path(alg, z)?;
    let path = HorizontalPath {
        segments: plan.segments,
        experimental: plan.experimental,
    };
    let reached = path.endpoint(alg);
    let defect = alg
        .displacement(z, &reached)
        .coords()
        .iter()
        .fold(S::zero(), |acc, &c| acc.max(c.abs()));
    if defect > S::of(1e-9) {
        return Err(MetricError::PathEndpointDefect {
            defect: defect.as_f64(),
        });
    }
    Ok(path)
}

/// Largest box coordinate needed to steer to `z` (layer-`w` strength `q`
/// contributes `|q|^{1/w}`). Scales linearly under dilations of `z`.
pub fn box_extent<S: Real>(
    alg: &StratifiedAlgebra<S>,
    z: &GroupPoint<S>,
) -> Result<S, MetricError> {
    plan_path(alg, z).map(|p| p.box_extent)
}

/// Index template and empirical constants of the ball-box product map
/// `E(t) = Π_k exp((-1)^{ω_k} t_{j_k} X_{i_k})`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallBoxDecomposition<S> {
    /// Generator index per factor (always first-layer).
    pub i_idx: Vec<usize>,
    /// Box coordinate feeding each factor's duration.
    pub j_idx: Vec<usize>,
    /// Sign exponents.
    pub omega: Vec<u8>,
    /// Outer box constant: sampled `E(Q(0, a))` stays in the unit CC ball.
    pub a: Option<S>,
    /// Inner constant: sampled points of the CC ball of radius `b` have box
    /// extent below `a`.
    pub b: Option<S>,
}

impl<S: Real> BallBoxDecomposition<S> {
    /// Number of factors demanded by the layer dimensions.
    pub fn expected_factors(alg: &StratifiedAlgebra<S>) -> usize {
        alg.layer_dims()
            .iter()
            .enumerate()
            .map(|(l, &m)| ((3 << l) - 2) * m) // 3·2^l - 2, l = layer-1
            .sum()
    }

    /// Builds the index template for an algebra (no constants yet).
    pub fn template(alg: &StratifiedAlgebra<S>) -> Result<Self, MetricError> {
        let mut bb = Self {
            i_idx: Vec::new(),
            j_idx: Vec::new(),
            omega: Vec::new(),
            a: None,
            b: None,
        };
        let push = |bb: &mut Self, i: usize, j: usize, w: u8| {
            bb.i_idx.push(i);
            bb.j_idx.push(j);
            bb.omega.push(w);
        };
        for n in alg.layer_range(1) {
            push(&mut bb, n, n, 0);
        }
        if alg.step() >= 2 {
            for l in alg.layer_range(2) {
                let (i, j) = first_pair(alg, 2, l)?;
                for (gen, w) in [(i, 0), (j, 0), (i, 1), (j, 1)] {
                    push(&mut bb, gen, l, w);
                }
            }
        }
        if alg.step() >= 3 {
            for l in alg.layer_range(3) {
                let (i, j2) = first_pair(alg, 3, l)?;
                let (bi, bj) = first_pair(alg, 2, j2)?;
                push(&mut bb, i, l, 0);
                for (gen, w) in [(bi, 0), (bj, 0), (bi, 1), (bj, 1)] {
                    push(&mut bb, gen, l, w);
                }
                push(&mut bb, i, l, 1);
                // Inverse square: reversed order, flipped signs.
                for (gen, w) in [(bj, 0), (bi, 0), (bj, 1), (bi, 1)] {
                    push(&mut bb, gen, l, w);
                }
            }
        }
        debug_assert_eq!(bb.i_idx.len(), Self::expected_factors(alg));
        Ok(bb)
    }

    pub fn factors(&self) -> usize {
        self.i_idx.len()
    }

    /// Evaluates the product map at box coordinates `t` (length `N`).
    pub fn evaluate(&self, alg: &StratifiedAlgebra<S>, t: &[S]) -> GroupPoint<S> {
        debug_assert_eq!(t.len(), alg.n());
        let mut p = alg.zero();
        for k in 0..self.factors() {
            let mut dur = t[self.j_idx[k]];
            if self.omega[k] == 1 {
                dur = -dur;
            }
            p = alg.multiply(&p, &alg.exp_generator(self.i_idx[k], dur));
        }
        p
    }

    /// Calibrates `a` and `b` against the CC estimator: `1/a` is the largest
    /// sampled CC distance of a unit-box image, and `b = a / max(T(z)/d(z))`
    /// over sampled directions `z` (`T` = box extent, `d` = CC estimate).
    /// Both ratios are dilation-invariant, so radius 1 calibration is
    /// general.
    pub fn calibrate(
        &mut self,
        alg: &StratifiedAlgebra<S>,
        budget: &CcBudget<S>,
        samples: usize,
        seed: u64,
    ) -> Result<(), MetricError> {
        if samples == 0 {
            return Err(MetricError::NoSamples);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero = alg.zero();
        // Outer: largest CC size of a unit-box image.
        let mut eta_max = S::zero();
        for _ in 0..samples {
            let t: Vec<S> = (0..alg.n())
                .map(|_| S::of(rng.random_range(-1.0..1.0)))
                .collect();
            let img = self.evaluate(alg, &t);
            let d = cc_distance(alg, &img, &zero, budget)?.upper;
            eta_max = eta_max.max(d);
        }
        // Inner: worst box extent per unit of CC distance.
        let mut rho_max = S::zero();
        for _ in 0..samples {
            let coords: Vec<S> = (0..alg.n())
                .map(|_| S::of(rng.random_range(-1.0..1.0)))
                .collect();
            let z = GroupPoint::new(coords);
            let d = cc_distance(alg, &z, &zero, budget)?.upper;
            if !(d > S::of(1e-9)) {
                continue;
            }
            let t = box_extent(alg, &z)?;
            rho_max = rho_max.max(t / d);
        }
        if !(eta_max > S::zero()) || !(rho_max > S::zero()) {
            return Err(MetricError::NoSamples);
        }
        // Shrinking either constant only weakens the certified inclusions,
        // so clamping below 1 (and b strictly below a) is always sound.
        let a = (S::one() / eta_max).min(S::of(0.99));
        let b = (a / rho_max).min(S::of(0.95) * a);
        if !(S::zero() < b && b < a && a < S::one()) {
            return Err(MetricError::BadBallBoxConstants {
                a: a.as_f64(),
                b: b.as_f64(),
            });
        }
        self.a = Some(a);
        self.b = Some(b);
        Ok(())
    }
}

fn first_pair<S: Real>(
    alg: &StratifiedAlgebra<S>,
    layer: usize,
    l: usize,
) -> Result<(usize, usize), MetricError> {
    for i in alg.layer_range(1) {
        for j in alg.layer_range(layer - 1) {
            if j > i && alg.c(i, j, l) != S::zero() {
                return Ok((i, j));
            }
        }
    }
    Err(MetricError::UnreachableLayer { layer })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Alg = StratifiedAlgebra<f64>;

    #[test]
    fn h1_vertical_target_is_unit_commutator_square() {
        let alg = Alg::heisenberg(1).unwrap();
        let z = GroupPoint::new(vec![0.0, 0.0, 1.0]);
        let path = ballbox_path(&alg, &z).unwrap();
        assert_eq!(path.segments().len(), 4);
        assert!(!path.experimental());
        assert!((path.length() - 4.0).abs() < 1e-12);
        let durations: Vec<f64> = path.segments().iter().map(|s| s.duration).collect();
        assert_eq!(durations, vec![1.0, 1.0, -1.0, -1.0]);
        let end = path.endpoint(&alg);
        assert!((end[0]).abs() < 1e-14 && (end[1]).abs() < 1e-14);
        assert!((end[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn paths_reach_random_targets_on_all_builtins() {
        use rand::{Rng, SeedableRng};
        let algs = [
            Alg::abelian(3).unwrap(),
            Alg::heisenberg(1).unwrap(),
            Alg::heisenberg(2).unwrap(),
            Alg::engel().unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for alg in &algs {
            for _ in 0..200 {
                let z = GroupPoint::new(
                    (0..alg.n())
                        .map(|_| rng.random_range(-1.5..1.5))
                        .collect::<Vec<f64>>(),
                );
                let path = ballbox_path(alg, &z).unwrap();
                assert_eq!(path.experimental(), alg.step() == 3);
                let end = path.endpoint(alg);
                for i in 0..alg.n() {
                    assert!(
                        (end[i] - z[i]).abs() < 1e-9,
                        "{} coordinate {i}: {} vs {}",
                        alg.name(),
                        end[i],
                        z[i]
                    );
                }
                // Horizontal-only segments.
                for seg in path.segments() {
                    assert!(seg.generator < alg.horizontal_dim());
                }
            }
        }
    }

    #[test]
    fn box_extent_is_homogeneous() {
        let alg = Alg::engel().unwrap();
        let z = GroupPoint::new(vec![0.4, -0.2, 0.3, 0.5]);
        let t1 = box_extent(&alg, &z).unwrap();
        let t2 = box_extent(&alg, &alg.dilate(2.0, &z)).unwrap();
        assert!((t2 - 2.0 * t1).abs() < 1e-10);
    }

    #[test]
    fn template_factor_counts_match_formula() {
        let cases = [
            (Alg::abelian(3).unwrap(), 3),
            (Alg::heisenberg(1).unwrap(), 6),
            (Alg::heisenberg(2).unwrap(), 8),
            (Alg::engel().unwrap(), 16),
        ];
        for (alg, want) in &cases {
            let bb = BallBoxDecomposition::template(alg).unwrap();
            assert_eq!(bb.factors(), *want);
            assert_eq!(BallBoxDecomposition::expected_factors(alg), *want);
            for k in 0..bb.factors() {
                assert!(bb.i_idx[k] < alg.horizontal_dim());
                assert!(bb.j_idx[k] < alg.n());
                assert!(bb.omega[k] <= 1);
            }
        }
    }

    #[test]
    fn evaluate_matches_square_on_h1() {
        let alg = Alg::heisenberg(1).unwrap();
        let bb = BallBoxDecomposition::template(&alg).unwrap();
        // t = (0, 0, s): only the vertical square fires; endpoint (0,0,s²).
        let s = 0.7;
        let img = bb.evaluate(&alg, &[0.0, 0.0, s]);
        assert!(img[0].abs() < 1e-14 && img[1].abs() < 1e-14);
        assert!((img[2] - s * s).abs() < 1e-14);
    }

    #[test]
    fn path_serializes_to_json() {
        let alg = Alg::heisenberg(1).unwrap();
        let path = ballbox_path(&alg, &GroupPoint::new(vec![1.0, 2.0, 0.5])).unwrap();
        let json = serde_json::to_string(&path).unwrap();
        let back: HorizontalPath<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.segments().len(), path.segments().len());
    }
}
