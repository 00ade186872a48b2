//! Horizontal calculus and the nonlocal difference functional.
//!
//! The horizontal gradient collects the derivatives of `f` along the
//! left-invariant first-layer fields, evaluated here either analytically
//! (built-in fixtures carry hand-derived components) or by central
//! differences along `x · exp(t X_j)`. Its Euclidean length is invariant
//! under horizontal rotations even though the components are basis
//! dependent.
//!
//! The difference functional
//! `I_n = ∬ |f(y)-f(x)|^p / ‖x⁻¹y‖^p · ρ̃_n(‖x⁻¹y‖) dx dy`
//! is estimated by importance sampling: `h = x⁻¹y` is drawn from the
//! mollifier measure in polar form (radius from the 1-D density, direction
//! from the cone measure), which removes the `‖h‖^{-p}` singularity from
//! the estimator, and `x` is drawn uniformly from a window ball that must
//! cover the support of `f` inflated by the mollifier reach. As n grows,
//! `I_n → κ ∫ |∇_X f|^p` with
//! `κ = (p+Q)/(Q c_B) ∫_{B(0,1)} |⟨ê₁, x̂⟩|^p dx`,
//! and for each n the constant `κ_n` has two independent evaluation routes
//! (direction average vs the factorized ball-times-radial form) that must
//! agree; both exist only for gauges invariant under horizontal rotations.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebra::{GroupPoint, StratifiedAlgebra};
use crate::integrate::{
    integrate_ball, BallSampler, Estimate, IntegrateError, IntegratorConfig,
};
use crate::metric::HomogeneousGauge;
use crate::mollify::{MollifierFamily, MollifyError};
use crate::quad::adaptive_simpson;
use crate::scalar::Real;

const CHUNK: usize = 1 << 16;
const TARGET_GROWTH_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum SobolevError {
    #[error("gauge is not invariant under horizontal rotations; κ is undefined")]
    AnisotropicGauge,
    #[error("exponent p = {p} outside the supported range {range}")]
    BadExponent { p: f64, range: &'static str },
    #[error("direction vector must have m₁ components of unit length")]
    BadDirection,
    #[error("field declares no support radius; the window cannot be certified")]
    UnknownSupport,
    #[error("window radius {got} cannot cover support + mollifier reach (needs ≥ {needed})")]
    SupportLeakage { needed: f64, got: f64 },
    #[error("field produced a non-finite value")]
    NonFiniteField,
    #[error("convergence experiment needs a C¹ field, got {got:?}")]
    NotSmoothEnough { got: Smoothness },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Smoothness {
    C1G,
    LpOnly,
}

/// A scalar function on the group, optionally carrying an analytic
/// horizontal gradient and an effective support radius in the gauge norm
/// (outside it `|f| < 1e-12`, either exactly or by rapid decay).
#[derive(Clone)]
pub struct ScalarField<S> {
    name: String,
    eval: Arc<dyn Fn(&GroupPoint<S>) -> S + Send + Sync>,
    grad: Option<Arc<dyn Fn(&GroupPoint<S>) -> Vec<S> + Send + Sync>>,
    support_radius: Option<S>,
    smoothness: Smoothness,
}

impl<S: Real> ScalarField<S> {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&GroupPoint<S>) -> S + Send + Sync + 'static,
        grad: Option<Arc<dyn Fn(&GroupPoint<S>) -> Vec<S> + Send + Sync>>,
        support_radius: Option<S>,
        smoothness: Smoothness,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            grad,
            support_radius,
            smoothness,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &GroupPoint<S>) -> S {
        (self.eval)(x)
    }

    pub fn analytic_gradient(&self, x: &GroupPoint<S>) -> Option<Vec<S>> {
        self.grad.as_ref().map(|g| g(x))
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn support_radius(&self) -> Option<S> {
        self.support_radius
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn constant(c: S, m1: usize) -> Self {
        Self::new(
            format!("const({c})"),
            move |_| c,
            Some(Arc::new(move |_| vec![S::zero(); m1])),
            None,
            Smoothness::C1G,
        )
    }

    /// The coordinate function `x ↦ x_i`. No analytic gradient and no
    /// support radius are attached; it exists for gradient fixtures.
    pub fn coordinate(i: usize) -> Self {
        Self::new(
            format!("coord({i})"),
            move |x: &GroupPoint<S>| x[i],
            None,
            None,
            Smoothness::C1G,
        )
    }

    /// `exp(-(x² + y² + t²))` on H¹ with the hand-derived horizontal
    /// gradient through `X₁ = ∂_x - (y/2)∂_t`, `X₂ = ∂_y + (x/2)∂_t`.
    pub fn h1_gaussian() -> Self {
        let eval = |x: &GroupPoint<S>| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
        };
        let grad = move |p: &GroupPoint<S>| {
            let f = (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])).exp();
            let half = S::of(0.5);
            let two = S::of(2.0);
            vec![
                -two * f * (p[0] - half * p[1] * p[2]),
                -two * f * (p[1] + half * p[0] * p[2]),
            ]
        };
        Self::new(
            "h1-gaussian",
            eval,
            Some(Arc::new(grad)),
            Some(S::of(5.26)),
            Smoothness::C1G,
        )
    }

    /// `x₁·exp(-(x² + y² + t²))` on H¹: the first coordinate under a
    /// smooth window, odd in `x` so ball averages stay small but nonzero
    /// off-center. Horizontal gradient by hand from `X₁ = ∂x - (y/2)∂t`,
    /// `X₂ = ∂y + (x/2)∂t`.
    pub fn h1_coordinate_window() -> Self {
        let gauss = |x: &GroupPoint<S>| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
        };
        let eval = move |x: &GroupPoint<S>| x[0] * gauss(x);
        let grad = move |p: &GroupPoint<S>| {
            let g = gauss(p);
            let two = S::of(2.0);
            vec![
                g * (S::one() - two * p[0] * p[0] + p[0] * p[1] * p[2]),
                -g * (two * p[0] * p[1] + p[0] * p[0] * p[2]),
            ]
        };
        Self::new(
            "h1-x1-window",
            eval,
            Some(Arc::new(grad)),
            Some(S::of(5.6)),
            Smoothness::C1G,
        )
    }

    /// `exp(-|x|²)` on the Engel group. The first-layer fields are
    /// `X₁ = ∂₁ - (x₂/2)∂₃ - (x₃/2 + x₁x₂/12)∂₄` and
    /// `X₂ = ∂₂ + (x₁/2)∂₃ + (x₁²/12)∂₄`.
    pub fn engel_gaussian() -> Self {
        let sq = |p: &GroupPoint<S>| {
            p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]
        };
        let eval = move |x: &GroupPoint<S>| (-sq(x)).exp();
        let grad = move |p: &GroupPoint<S>| {
            let f = (-sq(p)).exp();
            let half = S::of(0.5);
            let twelfth = S::one() / S::of(12.0);
            let two = S::of(2.0);
            let d1 = p[0] - half * p[1] * p[2]
                - (half * p[2] + twelfth * p[0] * p[1]) * p[3];
            let d2 = p[1] + half * p[0] * p[2] + twelfth * p[0] * p[0] * p[3];
            vec![-two * f * d1, -two * f * d2]
        };
        Self::new(
            "engel-gaussian",
            eval,
            Some(Arc::new(grad)),
            Some(S::of(5.3)),
            Smoothness::C1G,
        )
    }

    /// The standard C∞ bump `exp(-1/(1-|x|²))` on an abelian group,
    /// compactly supported in the unit Euclidean ball.
    pub fn abelian_bump(m1: usize) -> Self {
        let sq = move |p: &GroupPoint<S>| {
            (0..m1).fold(S::zero(), |acc, i| acc + p[i] * p[i])
        };
        let eval = move |x: &GroupPoint<S>| {
            let r2 = sq(x);
            if r2 >= S::one() {
                S::zero()
            } else {
                (-(S::one() / (S::one() - r2))).exp()
            }
        };
        let grad = move |p: &GroupPoint<S>| {
            let r2 = sq(p);
            if r2 >= S::one() {
                return vec![S::zero(); m1];
            }
            let f = (-(S::one() / (S::one() - r2))).exp();
            let d = S::one() - r2;
            (0..m1)
                .map(|i| -S::of(2.0) * p[i] / (d * d) * f)
                .collect()
        };
        Self::new(
            "abelian-bump",
            eval,
            Some(Arc::new(grad)),
            Some(S::one()),
            Smoothness::C1G,
        )
    }

    /// `x ↦ f(δ_λ x)`, with the gradient chain rule
    /// `X_j(f∘δ_λ) = λ (X_j f)∘δ_λ` and support shrunk by `1/λ`.
    pub fn compose_dilation(&self, alg: &StratifiedAlgebra<S>, lambda: S) -> Self {
        let alg2 = alg.clone();
        let eval_inner = self.eval.clone();
        let eval = move |x: &GroupPoint<S>| eval_inner(&alg2.dilate(lambda, x));
        let grad = self.grad.as_ref().map(|g| {
            let g = g.clone();
            let alg3 = alg.clone();
            let f: Arc<dyn Fn(&GroupPoint<S>) -> Vec<S> + Send + Sync> =
                Arc::new(move |x: &GroupPoint<S>| {
                    g(&alg3.dilate(lambda, x))
                        .into_iter()
                        .map(|c| lambda * c)
                        .collect()
                });
            f
        });
        Self {
            name: format!("{}∘δ_{}", self.name, lambda.as_f64()),
            eval: Arc::new(eval),
            grad,
            support_radius: self.support_radius.map(|r| r / lambda),
            smoothness: self.smoothness,
        }
    }
}

/// First-layer derivative components at a point; the norm is the invariant
/// quantity.
#[derive(Clone, Debug, Serialize)]
pub struct HorizontalGradient<S> {
    pub components: Vec<S>,
}

impl<S: Real> HorizontalGradient<S> {
    pub fn norm(&self) -> S {
        self.components
            .iter()
            .fold(S::zero(), |acc, &c| acc + c * c)
            .sqrt()
    }
}

/// Central-difference horizontal gradient:
/// `X_j f(x) ≈ [f(x·exp(h X_j)) - f(x·exp(-h X_j))]/(2h)`.
pub fn horizontal_gradient<S: Real>(
    field: &ScalarField<S>,
    alg: &StratifiedAlgebra<S>,
    x: &GroupPoint<S>,
    h_step: S,
) -> Result<HorizontalGradient<S>, SobolevError> {
    let m1 = alg.layer_range(1).len();
    let mut components = Vec::with_capacity(m1);
    for j in 0..m1 {
        let fwd = field.value(&alg.multiply(x, &alg.exp_generator(j, h_step)));
        let bwd = field.value(&alg.multiply(x, &alg.exp_generator(j, -h_step)));
        let d = (fwd - bwd) / (S::of(2.0) * h_step);
        if !d.is_finite() {
            return Err(SobolevError::NonFiniteField);
        }
        components.push(d);
    }
    Ok(HorizontalGradient { components })
}

fn gradient_at<S: Real>(
    field: &ScalarField<S>,
    alg: &StratifiedAlgebra<S>,
    x: &GroupPoint<S>,
) -> Result<Vec<S>, SobolevError> {
    match field.analytic_gradient(x) {
        Some(g) => Ok(g),
        None => Ok(horizontal_gradient(field, alg, x, S::of(1e-5))?.components),
    }
}

/// First-order Taylor remainder `ω_x(h) = |f(x·h) - f(x) - ⟨∇_X f(x), ĥ⟩|`
/// where `ĥ` is the horizontal part of `h`. For C¹ fields `ω_x(h)/‖h‖ → 0`
/// as `h → 0`.
pub fn pansu_remainder<S: Real>(
    field: &ScalarField<S>,
    alg: &StratifiedAlgebra<S>,
    x: &GroupPoint<S>,
    h: &GroupPoint<S>,
) -> Result<S, SobolevError> {
    let grad = gradient_at(field, alg, x)?;
    let moved = field.value(&alg.multiply(x, h));
    let hh = alg.horizontal_part(h);
    let lin = grad
        .iter()
        .zip(hh.iter())
        .fold(S::zero(), |acc, (&g, &c)| acc + g * c);
    let omega = (moved - field.value(x) - lin).abs();
    if !omega.is_finite() {
        return Err(SobolevError::NonFiniteField);
    }
    Ok(omega)
}

struct ChunkStat<S> {
    sum: S,
    sumsq: S,
    bad: bool,
}

/// Deterministic chunked mean of a randomized functional: one ChaCha
/// stream per chunk, fixed-order reduction, optional relative-error-target
/// growth capped at 64× the configured count.
pub(crate) fn chunked_mean<S: Real, G>(
    seed: u64,
    samples: usize,
    error_target: Option<S>,
    draw: G,
) -> Result<Estimate<S>, SobolevError>
where
    G: Fn(&mut ChaCha8Rng) -> Result<S, SobolevError> + Sync,
{
    if samples == 0 {
        return Err(SobolevError::Integrate(IntegrateError::BadConfig {
            reason: "samples must be ≥ 1",
        }));
    }
    let base_chunks = samples.div_ceil(CHUNK).max(1);
    let mut stats: Vec<ChunkStat<S>> = Vec::new();
    let mut total = 0usize;
    let mut round = 0usize;
    loop {
        let goal = if round == 0 {
            samples
        } else {
            total + base_chunks * CHUNK
        };
        let sizes: Vec<(u64, usize)> = {
            let mut v = Vec::new();
            let mut at = total;
            let mut id = stats.len() as u64;
            while at < goal {
                let take = CHUNK.min(goal - at);
                v.push((id, take));
                at += take;
                id += 1;
            }
            v
        };
        let fresh: Vec<ChunkStat<S>> = sizes
            .par_iter()
            .map(|&(id, take)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(id);
                let mut st = ChunkStat {
                    sum: S::zero(),
                    sumsq: S::zero(),
                    bad: false,
                };
                for _ in 0..take {
                    match draw(&mut rng) {
                        Ok(v) if v.is_finite() => {
                            st.sum += v;
                            st.sumsq += v * v;
                        }
                        _ => {
                            st.bad = true;
                            break;
                        }
                    }
                }
                st
            })
            .collect();
        total = goal;
        stats.extend(fresh);

        let mut sum = S::zero();
        let mut sumsq = S::zero();
        for st in &stats {
            if st.bad {
                return Err(SobolevError::NonFiniteField);
            }
            sum += st.sum;
            sumsq += st.sumsq;
        }
        let n = S::of(total as f64);
        let mean = sum / n;
        let var = ((sumsq - sum * mean) / (n - S::one())).max(S::zero());
        let stderr = (var / n).sqrt();
        let done = match error_target {
            None => true,
            Some(t) => {
                stderr <= t * mean.abs().max(S::of(1e-300))
                    || total >= samples.saturating_mul(TARGET_GROWTH_CAP)
            }
        };
        if done {
            return Ok(Estimate {
                value: mean,
                stderr,
                samples: total as u64,
            });
        }
        round += 1;
    }
}

fn require_rotation_invariant<S: Real>(
    gauge: &HomogeneousGauge<S>,
) -> Result<(), SobolevError> {
    if gauge.rotation_invariant() {
        Ok(())
    } else {
        Err(SobolevError::AnisotropicGauge)
    }
}

fn unit_direction_check<S: Real>(m1: usize, v: &[S]) -> Result<(), SobolevError> {
    if v.len() != m1 {
        return Err(SobolevError::BadDirection);
    }
    let len = v.iter().fold(S::zero(), |a, &c| a + c * c).sqrt();
    if (len - S::one()).abs() > S::of(1e-9) {
        return Err(SobolevError::BadDirection);
    }
    Ok(())
}

/// `κ_n` by its definition `∫_{B(0,1)} |⟨v̂,x̂⟩|^p/‖x‖^p ρ̃_n(‖x‖) dx`,
/// sampled in polar form. The integrand is dilation-degree 0, so the
/// radial draw integrates out exactly into the mollifier mass inside the
/// unit ball and only cone-measure directions are sampled.
pub fn kappa_n<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    p: S,
    family: &MollifierFamily<S>,
    n: usize,
    v_hat: &[S],
) -> Result<Estimate<S>, SobolevError> {
    require_rotation_invariant(gauge)?;
    if !(p >= S::one()) {
        return Err(SobolevError::BadExponent {
            p: p.as_f64(),
            range: "p ≥ 1",
        });
    }
    let m1 = alg.layer_range(1).len();
    unit_direction_check(m1, v_hat)?;
    let sampler = BallSampler::new(alg, gauge, alg.zero(), S::one())?;
    let samples = match cfg.method {
        crate::integrate::Method::MonteCarlo { samples } => samples,
        crate::integrate::Method::Grid { .. } => {
            return Err(SobolevError::Integrate(IntegrateError::BadConfig {
                reason: "kappa_n is Monte Carlo only",
            }))
        }
    };
    let v = v_hat.to_vec();
    let est = chunked_mean(cfg.seed, samples, cfg.error_target, |rng| {
        let sigma = sampler.direction(alg, gauge, rng)?;
        let dot = v
            .iter()
            .zip(alg.horizontal_part(&sigma).iter())
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b);
        Ok(dot.abs().powf(p))
    })?;
    let mass = family.mass_within(n, S::one());
    Ok(Estimate {
        value: mass * est.value,
        stderr: mass * est.stderr,
        samples: est.samples,
    })
}

/// `κ_n` by the factorized route: `(p+Q) · ∫_{B(0,1)} |⟨ê₁,x̂⟩|^p dx ·
/// ∫₀¹ ρ̃_n(r) r^{Q-1} dr`, with a uniform-ball MC for the first factor
/// and 1-D quadrature for the second. Independent of [`kappa_n`]'s
/// direction sampling; the two must agree.
pub fn kappa_n_factorized<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    p: S,
    family: &MollifierFamily<S>,
    n: usize,
) -> Result<Estimate<S>, SobolevError> {
    require_rotation_invariant(gauge)?;
    if !(p >= S::one()) {
        return Err(SobolevError::BadExponent {
            p: p.as_f64(),
            range: "p ≥ 1",
        });
    }
    let q = alg.q();
    let ball = integrate_ball(
        cfg,
        gauge,
        alg,
        |x: &GroupPoint<S>| x[0].abs().powf(p),
        &alg.zero(),
        S::one(),
    )?;
    let lo = match family.kind() {
        crate::mollify::MollifierKind::PowerTail => family.epsilon(n),
        _ => S::zero(),
    };
    let hi = family.support_radius(n).min(S::one());
    let radial = if hi > lo {
        let f = |r: S| family.profile(n, r) * r.powi(q as i32 - 1);
        adaptive_simpson(&f, lo, hi, S::of(1e-12))
            .map_err(|e| SobolevError::Integrate(IntegrateError::Quadrature(e)))?
    } else {
        S::zero()
    };
    let factor = (p + S::of(q as f64)) * radial;
    Ok(Estimate {
        value: factor * ball.value,
        stderr: factor * ball.stderr,
        samples: ball.samples,
    })
}

/// The limit constant `κ = (p+Q)/(Q c_B) ∫_{B(0,1)} |⟨ê₁,x̂⟩|^p dx` with
/// a supplied ball-volume constant.
pub fn kappa_with_cb<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    p: S,
    cb: S,
) -> Result<Estimate<S>, SobolevError> {
    require_rotation_invariant(gauge)?;
    if !(p >= S::one()) {
        return Err(SobolevError::BadExponent {
            p: p.as_f64(),
            range: "p ≥ 1",
        });
    }
    let q = S::of(alg.q() as f64);
    let ball = integrate_ball(
        cfg,
        gauge,
        alg,
        |x: &GroupPoint<S>| x[0].abs().powf(p),
        &alg.zero(),
        S::one(),
    )?;
    let scale = (p + q) / (q * cb);
    Ok(Estimate {
        value: scale * ball.value,
        stderr: scale * ball.stderr,
        samples: ball.samples,
    })
}

/// `κ` with the ball-volume constant estimated under a decorrelated seed;
/// stderr combines both Monte Carlo factors.
pub fn kappa<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    p: S,
) -> Result<Estimate<S>, SobolevError> {
    require_rotation_invariant(gauge)?;
    let mut vol_cfg = cfg.clone();
    vol_cfg.seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    let vol = crate::integrate::ball_volume_constant(&vol_cfg, gauge, alg)?;
    let base = kappa_with_cb(cfg, gauge, alg, p, vol.value)?;
    let rel_vol = vol.stderr / vol.value;
    let stderr = (base.stderr * base.stderr
        + (base.value * rel_vol) * (base.value * rel_vol))
        .sqrt();
    Ok(Estimate {
        value: base.value,
        stderr,
        samples: base.samples + vol.samples,
    })
}

/// One evaluation of the difference functional.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BbmResult<S> {
    pub n: usize,
    pub eps: S,
    pub value: S,
    pub stderr: S,
    pub kappa: S,
    pub energy: S,
    pub energy_stderr: S,
    /// `I_n / (κ · energy)`; `None` when the field has no energy.
    pub ratio: Option<S>,
}

fn window_requirement<S: Real>(
    gauge: &HomogeneousGauge<S>,
    field: &ScalarField<S>,
    family: &MollifierFamily<S>,
    n: usize,
) -> Result<S, SobolevError> {
    let support = field.support_radius().ok_or(SobolevError::UnknownSupport)?;
    let reach = family.support_radius(n);
    Ok(gauge.quasi_triangle_alpha() * (support + reach))
}

/// Raw MC estimate of `I_n` alone: `x` uniform in `B(0, window_radius)`,
/// `h` from the mollifier measure in polar form, estimator
/// `|W| · |f(x·h)-f(x)|^p / r^p`.
pub fn bbm_value<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    field: &ScalarField<S>,
    p: S,
    family: &MollifierFamily<S>,
    n: usize,
    window_radius: S,
) -> Result<Estimate<S>, SobolevError> {
    if !(p >= S::one()) {
        return Err(SobolevError::BadExponent {
            p: p.as_f64(),
            range: "p ≥ 1",
        });
    }
    let needed = window_requirement(gauge, field, family, n)?;
    if window_radius < needed {
        return Err(SobolevError::SupportLeakage {
            needed: needed.as_f64(),
            got: window_radius.as_f64(),
        });
    }
    let window = BallSampler::new(alg, gauge, alg.zero(), window_radius)?;
    let unit = BallSampler::new(alg, gauge, alg.zero(), S::one())?;
    let volume = family.ball_volume() * window_radius.powi(alg.q() as i32);
    let samples = match cfg.method {
        crate::integrate::Method::MonteCarlo { samples } => samples,
        crate::integrate::Method::Grid { .. } => {
            return Err(SobolevError::Integrate(IntegrateError::BadConfig {
                reason: "the difference functional is Monte Carlo only",
            }))
        }
    };
    let est = chunked_mean(cfg.seed, samples, cfg.error_target, |rng| {
        let x = window.sample_offset(alg, gauge, rng)?;
        let r = loop {
            let r = family.sample_radius(n, rng);
            if r > S::of(1e-300) {
                break r;
            }
        };
        let sigma = unit.direction(alg, gauge, rng)?;
        let h = alg.dilate(r, &sigma);
        let diff = (field.value(&alg.multiply(&x, &h)) - field.value(&x)).abs();
        Ok(diff.powf(p) / r.powf(p))
    })?;
    Ok(Estimate {
        value: volume * est.value,
        stderr: volume * est.stderr,
        samples: est.samples,
    })
}

/// Sobolev energy `∫ |∇_X f|^p` over the field's support ball.
pub fn sobolev_energy<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    field: &ScalarField<S>,
    p: S,
) -> Result<Estimate<S>, SobolevError> {
    let support = field.support_radius().ok_or(SobolevError::UnknownSupport)?;
    let e = integrate_ball(
        cfg,
        gauge,
        alg,
        |x: &GroupPoint<S>| {
            let g = gradient_at(field, alg, x).unwrap_or_else(|_| vec![S::nan()]);
            g.iter()
                .fold(S::zero(), |acc, &c| acc + c * c)
                .sqrt()
                .powf(p)
        },
        &alg.zero(),
        support,
    )?;
    Ok(e)
}

/// Full difference-functional evaluation with the κ reference and the
/// Sobolev energy, assembled into a [`BbmResult`].
#[allow(clippy::too_many_arguments)]
pub fn bbm_functional<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    field: &ScalarField<S>,
    p: S,
    family: &MollifierFamily<S>,
    n: usize,
    window_radius: S,
) -> Result<BbmResult<S>, SobolevError> {
    let kap = kappa_with_cb(cfg, gauge, alg, p, family.ball_volume())?;
    let energy = sobolev_energy(cfg, gauge, alg, field, p)?;
    let value = bbm_value(cfg, gauge, alg, field, p, family, n, window_radius)?;
    Ok(assemble(
        n,
        family,
        value,
        kap.value,
        energy,
    ))
}

fn assemble<S: Real>(
    n: usize,
    family: &MollifierFamily<S>,
    value: Estimate<S>,
    kappa: S,
    energy: Estimate<S>,
) -> BbmResult<S> {
    let denom = kappa * energy.value;
    let ratio = if denom.abs() > S::of(1e-300) {
        Some(value.value / denom)
    } else {
        None
    };
    BbmResult {
        n,
        eps: family.epsilon(n),
        value: value.value,
        stderr: value.stderr,
        kappa,
        energy: energy.value,
        energy_stderr: energy.stderr,
        ratio,
    }
}

/// Runs `I_n` across `n_list` for a C¹ compactly supported field, sharing
/// one κ and one energy evaluation; windows are sized per n.
#[allow(clippy::too_many_arguments)]
pub fn convergence_experiment<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    field: &ScalarField<S>,
    p: S,
    family: &MollifierFamily<S>,
    n_list: &[usize],
) -> Result<Vec<BbmResult<S>>, SobolevError> {
    if !(p > S::one()) {
        return Err(SobolevError::BadExponent {
            p: p.as_f64(),
            range: "p > 1",
        });
    }
    if field.smoothness() != Smoothness::C1G {
        return Err(SobolevError::NotSmoothEnough {
            got: field.smoothness(),
        });
    }
    let kap = kappa_with_cb(cfg, gauge, alg, p, family.ball_volume())?;
    let energy = sobolev_energy(cfg, gauge, alg, field, p)?;
    if !energy.value.is_finite() {
        return Err(SobolevError::NonFiniteField);
    }
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let window = window_requirement(gauge, field, family, n)?;
        let value = bbm_value(cfg, gauge, alg, field, p, family, n, window)?;
        out.push(assemble(n, family, value, kap.value, energy));
    }
    Ok(out)
}
