//! Radial mollifier families and their 1-D counterparts.
//!
//! A radial mollifier on the group is a profile `ρ̃_n` of the gauge norm
//! alone, normalized so that `∫₀^∞ ρ̃_n(r) r^{Q-1} dr = 1/(Q c_B)`, which
//! by the radial reduction is exactly `∫ ρ_n = 1`. Its one-dimensional
//! counterpart is `ρ⁽¹⁾_n(r) = Q c_B ρ̃_n(r) r^{Q-1}`, a probability
//! density on the half-line; the correspondence preserves masses of shells,
//! so tail diagnostics agree on both sides.
//!
//! Three built-in families, indexed by `n` with scale `ε_n = 1/n`:
//! `box` is the normalized indicator of `[0, ε_n]` (nonincreasing, closed
//! forms everywhere); `power_tail` is `∝ r^{-Q}` on `[ε_n, 1]` with
//! logarithmic normalization (not nonincreasing, its tail vanishes only
//! like `1/ln n`); `smooth_bump` is the C∞ profile
//! `∝ exp(-1/(1-(r/ε_n)²))` (nonincreasing, no boundary kinks).

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::StratifiedAlgebra;
use crate::quad::adaptive_simpson;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MollifyError {
    #[error("unknown mollifier kind {got:?} (expected box, power_tail, or smooth_bump)")]
    UnknownKind { got: String },
    #[error("ball volume constant must be positive and finite, got {got}")]
    BadVolume { got: f64 },
    #[error("mollifier index n must be ≥ 1")]
    BadIndex,
    #[error("dilation factor must be positive and finite")]
    BadDilation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierKind {
    Box,
    PowerTail,
    SmoothBump,
}

impl FromStr for MollifierKind {
    type Err = MollifyError;

    fn from_str(s: &str) -> Result<Self, MollifyError> {
        match s {
            "box" => Ok(Self::Box),
            "power_tail" => Ok(Self::PowerTail),
            "smooth_bump" => Ok(Self::SmoothBump),
            other => Err(MollifyError::UnknownKind {
                got: other.to_string(),
            }),
        }
    }
}

/// A normalized radial mollifier family for a fixed group `(Q, c_B)`,
/// optionally dilated: `lambda > 1` compresses the support by `1/lambda`
/// while keeping every member normalized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MollifierFamily<S> {
    kind: MollifierKind,
    q: usize,
    cb: S,
    lambda: S,
    nonincreasing: bool,
    /// `∫₀¹ exp(-1/(1-u²)) u^{Q-1} du`, fixed at construction; only the
    /// smooth bump needs it.
    bump_shape_mass: S,
}

impl<S: Real> MollifierFamily<S> {
    pub fn new(
        kind: MollifierKind,
        alg: &StratifiedAlgebra<S>,
        cb: S,
    ) -> Result<Self, MollifyError> {
        if !(cb > S::zero()) || !cb.is_finite() {
            return Err(MollifyError::BadVolume { got: cb.as_f64() });
        }
        let q = alg.q();
        let bump_shape_mass = if kind == MollifierKind::SmoothBump {
            let qi = q as i32;
            let shape = move |u: S| {
                if u >= S::one() {
                    S::zero()
                } else {
                    (-(S::one() / (S::one() - u * u))).exp() * u.powi(qi - 1)
                }
            };
            adaptive_simpson(&shape, S::zero(), S::one(), S::of(1e-13))
                .expect("bump shape integral is smooth and finite")
        } else {
            S::zero()
        };
        Ok(Self {
            kind,
            q,
            cb,
            lambda: S::one(),
            nonincreasing: match kind {
                MollifierKind::Box | MollifierKind::SmoothBump => true,
                MollifierKind::PowerTail => false,
            },
            bump_shape_mass,
        })
    }

    pub fn kind(&self) -> MollifierKind {
        self.kind
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn ball_volume(&self) -> S {
        self.cb
    }

    pub fn nonincreasing(&self) -> bool {
        self.nonincreasing
    }

    pub fn dilation(&self) -> S {
        self.lambda
    }

    /// The same family with profiles `r ↦ λ^Q ρ̃_n(λ r)`; dilations
    /// compose multiplicatively.
    pub fn dilated(&self, lambda: S) -> Result<Self, MollifyError> {
        if !(lambda > S::zero()) || !lambda.is_finite() {
            return Err(MollifyError::BadDilation);
        }
        let mut out = self.clone();
        out.lambda = self.lambda * lambda;
        Ok(out)
    }

    /// Scale of the n-th member. The power-tail support `[ε_n, 1]` is a
    /// null set at n = 1, so that family clamps `ε_1` to 1/2.
    pub fn epsilon(&self, n: usize) -> S {
        let n_eff = match self.kind {
            MollifierKind::PowerTail => n.max(2),
            _ => n.max(1),
        };
        S::one() / S::of(n_eff as f64)
    }

    /// Largest radius carrying any mass (dilation applied).
    pub fn support_radius(&self, n: usize) -> S {
        let base = match self.kind {
            MollifierKind::Box | MollifierKind::SmoothBump => self.epsilon(n),
            MollifierKind::PowerTail => S::one(),
        };
        base / self.lambda
    }

    /// `ρ̃_n(r)`, the radial profile of the group mollifier.
    pub fn profile(&self, n: usize, r: S) -> S {
        let scaled = self.lambda * r;
        self.lambda.powi(self.q as i32) * self.base_profile(n, scaled)
    }

    fn base_profile(&self, n: usize, r: S) -> S {
        let eps = self.epsilon(n);
        let q = self.q as i32;
        match self.kind {
            MollifierKind::Box => {
                // Height 1/(c_B ε^Q) makes ∫ ρ̃ r^{Q-1} dr = 1/(Q c_B).
                if r >= S::zero() && r <= eps {
                    S::one() / (self.cb * eps.powi(q))
                } else {
                    S::zero()
                }
            }
            MollifierKind::PowerTail => {
                // B r^{-Q} on [ε, 1] with B = 1/(Q c_B ln(1/ε)).
                if r >= eps && r <= S::one() {
                    let b = S::one()
                        / (S::of(self.q as f64) * self.cb * (S::one() / eps).ln());
                    b * r.powi(-q)
                } else {
                    S::zero()
                }
            }
            MollifierKind::SmoothBump => {
                let u = r / eps;
                if u >= S::one() || r < S::zero() {
                    S::zero()
                } else {
                    let height = S::one()
                        / (S::of(self.q as f64)
                            * self.cb
                            * eps.powi(q)
                            * self.bump_shape_mass);
                    height * (-(S::one() / (S::one() - u * u))).exp()
                }
            }
        }
    }

    /// `ρ⁽¹⁾_n(r) = Q c_B ρ̃_n(r) r^{Q-1}`, a probability density on ℝ⁺.
    pub fn one_dim(&self, n: usize, r: S) -> S {
        S::of(self.q as f64) * self.cb * self.profile(n, r) * r.powi(self.q as i32 - 1)
    }

    /// Mass beyond radius δ, `∫_δ^∞ ρ⁽¹⁾_n`. Closed forms for box and
    /// power tail; shape-integral ratio for the bump.
    pub fn tail_mass(&self, n: usize, delta: S) -> S {
        let d = (self.lambda * delta).max(S::zero());
        let eps = self.epsilon(n);
        let q = self.q as i32;
        match self.kind {
            MollifierKind::Box => {
                if d >= eps {
                    S::zero()
                } else {
                    S::one() - (d / eps).powi(q)
                }
            }
            MollifierKind::PowerTail => {
                if d >= S::one() {
                    S::zero()
                } else if d <= eps {
                    S::one()
                } else {
                    (S::one() / d).ln() / (S::one() / eps).ln()
                }
            }
            MollifierKind::SmoothBump => {
                let u = d / eps;
                if u >= S::one() {
                    S::zero()
                } else if u <= S::zero() {
                    S::one()
                } else {
                    let qi = self.q as i32;
                    let shape = move |v: S| {
                        if v >= S::one() {
                            S::zero()
                        } else {
                            (-(S::one() / (S::one() - v * v))).exp() * v.powi(qi - 1)
                        }
                    };
                    let head = adaptive_simpson(&shape, S::zero(), u, S::of(1e-13))
                        .expect("bump head integral is smooth and finite");
                    (S::one() - head / self.bump_shape_mass).clamp(S::zero(), S::one())
                }
            }
        }
    }

    /// Mass inside `B(0, δ)`, the complement of the tail.
    pub fn mass_within(&self, n: usize, delta: S) -> S {
        S::one() - self.tail_mass(n, delta)
    }

    /// Draws a radius with density `ρ⁽¹⁾_n`: inverse CDF for box and power
    /// tail, rejection against the `r^{Q-1}` proposal for the bump.
    pub fn sample_radius<R: Rng>(&self, n: usize, rng: &mut R) -> S {
        let eps = self.epsilon(n);
        let inv_q = S::one() / S::of(self.q as f64);
        let base = match self.kind {
            MollifierKind::Box => {
                let u: S = rng.random_range(S::zero()..S::one());
                eps * u.powf(inv_q)
            }
            MollifierKind::PowerTail => {
                // CDF ln(r/ε)/ln(1/ε) inverts to r = ε^{1-U}.
                let u: S = rng.random_range(S::zero()..S::one());
                eps.powf(S::one() - u)
            }
            MollifierKind::SmoothBump => loop {
                let u: S = rng.random_range(S::zero()..S::one());
                let r = eps * u.powf(inv_q);
                let v = r / eps;
                let accept = (S::one() - S::one() / (S::one() - v * v)).exp();
                let coin: S = rng.random_range(S::zero()..S::one());
                if coin < accept {
                    break r;
                }
            },
        };
        base / self.lambda
    }

    /// Quadrature check of `Q c_B ∫ ρ̃_n r^{Q-1} dr` over the support;
    /// should be 1 for every member.
    pub fn radial_mass(&self, n: usize) -> S {
        let lo = match self.kind {
            MollifierKind::PowerTail => self.epsilon(n) / self.lambda,
            _ => S::zero(),
        };
        let hi = self.support_radius(n);
        let f = |r: S| self.one_dim(n, r);
        adaptive_simpson(&f, lo, hi, S::of(1e-12)).expect("mollifier profiles are integrable")
    }

    pub fn to_one_dim(&self, n: usize) -> Result<OneDimMollifier<S>, MollifyError> {
        if n == 0 {
            return Err(MollifyError::BadIndex);
        }
        let nonincreasing = self.one_dim_is_nonincreasing(n);
        Ok(OneDimMollifier {
            family: self.clone(),
            n,
            nonincreasing,
        })
    }

    /// The 1-D density carries an extra `r^{Q-1}`, so monotonicity is not
    /// inherited from the radial profile; it is measured on a grid.
    fn one_dim_is_nonincreasing(&self, n: usize) -> bool {
        let hi = self.support_radius(n);
        let steps = 512;
        let mut prev = S::infinity();
        let slack = S::of(1e-12);
        for k in 1..=steps {
            let r = hi * S::of(k as f64) / S::of(steps as f64);
            let v = self.one_dim(n, r);
            if v > prev * (S::one() + slack) + slack {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// A single 1-D mollifier `ρ⁽¹⁾_n`, the half-line probability density in
/// one-to-one correspondence with the group mollifier of the same index.
#[derive(Clone, Debug)]
pub struct OneDimMollifier<S> {
    family: MollifierFamily<S>,
    n: usize,
    nonincreasing: bool,
}

impl<S: Real> OneDimMollifier<S> {
    pub fn density(&self, r: S) -> S {
        self.family.one_dim(self.n, r)
    }

    pub fn index(&self) -> usize {
        self.n
    }

    /// Recomputed for the 1-D density, not inherited from the family.
    pub fn nonincreasing(&self) -> bool {
        self.nonincreasing
    }

    pub fn support_radius(&self) -> S {
        self.family.support_radius(self.n)
    }

    pub fn tail(&self, delta: S) -> S {
        self.family.tail_mass(self.n, delta)
    }

    pub fn mass(&self) -> S {
        self.family.radial_mass(self.n)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> S {
        self.family.sample_radius(self.n, rng)
    }
}
