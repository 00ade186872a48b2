//! Haar integration over gauge balls.
//!
//! In first-kind exponential coordinates the Haar measure of a stratified
//! group is the Lebesgue measure, so ball integrals reduce to ordinary
//! integrals over star-shaped regions. Sampling works by rejection from the
//! anisotropic box whose half-widths scale like `radius^{w_i}`; integrals
//! over `B(center, r)` pull back to the ball at the origin by left
//! translation, which preserves the measure. The radial (Folland-type)
//! reduction turns integrals of `g(‖x‖)` into weighted 1-D integrals with
//! the factor `Q·c_B·r^{Q-1}`, giving cheap cross-checks and closed forms.
//!
//! Monte Carlo runs are deterministic for a fixed `(seed, config)`: samples
//! are drawn in fixed-size chunks, each chunk on its own counter-indexed RNG
//! stream, and chunk statistics are reduced in index order no matter how the
//! chunks were scheduled.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{GroupPoint, StratifiedAlgebra};
use crate::metric::HomogeneousGauge;
use crate::quad::{adaptive_simpson, QuadError};
use crate::scalar::Real;

/// Samples per RNG stream; the unit of deterministic parallel scheduling.
const CHUNK: usize = 1 << 16;

/// Growth cap when chasing an `error_target`: at most 64 times the
/// configured sample count.
const TARGET_GROWTH_CAP: usize = 64;

/// Rejection draws allowed without a single acceptance before the sampler
/// declares the gauge degenerate.
const ACCEPT_PATIENCE: u32 = 100_000;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("bad integrator config: {reason}")]
    BadConfig { reason: &'static str },
    #[error("gauge provides no rejection box (CC-kind gauges are not samplable)")]
    NoRejectionBox,
    #[error("no sample accepted after {tried} rejection draws")]
    ZeroAcceptance { tried: u64 },
    #[error("integrand returned a non-finite value inside the ball")]
    NonFiniteSample,
    #[error("tensor grids are limited to dimension ≤ 4, got {n}")]
    GridUnsupported { n: usize },
    #[error("radial quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MonteCarlo { samples: usize },
    Grid { resolution: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorConfig<S> {
    pub method: Method,
    pub seed: u64,
    /// Optional relative standard error to chase by enlarging the MC sample
    /// count (up to a fixed growth cap). Ignored by the grid method.
    pub error_target: Option<S>,
}

impl<S: Real> IntegratorConfig<S> {
    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            method: Method::MonteCarlo { samples },
            seed,
            error_target: None,
        }
    }

    pub fn grid(resolution: usize) -> Self {
        Self {
            method: Method::Grid { resolution },
            seed: 0,
            error_target: None,
        }
    }

    fn validate(&self) -> Result<(), IntegrateError> {
        match self.method {
            Method::MonteCarlo { samples } if samples == 0 => Err(IntegrateError::BadConfig {
                reason: "samples must be ≥ 1",
            }),
            Method::Grid { resolution } if resolution == 0 => Err(IntegrateError::BadConfig {
                reason: "grid resolution must be ≥ 1",
            }),
            _ => Ok(()),
        }
    }
}

/// An integral estimate: MC fills `stderr`; the grid method reports 0 and
/// the number of grid nodes in `samples`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate<S> {
    pub value: S,
    pub stderr: S,
    pub samples: u64,
}

/// Uniform sampler for gauge balls, by rejection from the anisotropic
/// bounding box. Only gauges exposing per-coordinate half-widths (the
/// Korányi kinds) can be sampled.
#[derive(Clone, Debug)]
pub struct BallSampler<S> {
    center: GroupPoint<S>,
    radius: S,
    /// Half-widths of the covering box at this radius.
    half: Vec<S>,
    box_volume: S,
}

impl<S: Real> BallSampler<S> {
    pub fn new(
        alg: &StratifiedAlgebra<S>,
        gauge: &HomogeneousGauge<S>,
        center: GroupPoint<S>,
        radius: S,
    ) -> Result<Self, IntegrateError> {
        if !(radius > S::zero()) || !radius.is_finite() {
            return Err(IntegrateError::BadConfig {
                reason: "ball radius must be positive and finite",
            });
        }
        let unit = gauge
            .unit_box_half_widths(alg)
            .ok_or(IntegrateError::NoRejectionBox)?;
        let half: Vec<S> = unit
            .iter()
            .enumerate()
            .map(|(i, &h)| h * radius.powi(alg.weight(i) as i32))
            .collect();
        let two = S::of(2.0);
        let box_volume = half.iter().fold(S::one(), |acc, &h| acc * two * h);
        Ok(Self {
            center,
            radius,
            half,
            box_volume,
        })
    }

    pub fn box_volume(&self) -> S {
        self.box_volume
    }

    pub fn radius(&self) -> S {
        self.radius
    }

    pub fn center(&self) -> &GroupPoint<S> {
        &self.center
    }

    /// Uniform draw from the covering box (offset coordinates, not yet
    /// inside the ball).
    pub fn sample_raw<R: Rng>(&self, rng: &mut R) -> GroupPoint<S> {
        let coords: Vec<S> = self
            .half
            .iter()
            .map(|&h| rng.random_range(-h..h))
            .collect();
        GroupPoint::new(coords)
    }

    /// Offset `h` with `‖h‖ < radius`, uniform for the Haar measure.
    pub fn sample_offset<R: Rng>(
        &self,
        alg: &StratifiedAlgebra<S>,
        gauge: &HomogeneousGauge<S>,
        rng: &mut R,
    ) -> Result<GroupPoint<S>, IntegrateError> {
        for tried in 0..ACCEPT_PATIENCE {
            let h = self.sample_raw(rng);
            if gauge.norm(alg, &h) < self.radius {
                return Ok(h);
            }
            let _ = tried;
        }
        Err(IntegrateError::ZeroAcceptance {
            tried: ACCEPT_PATIENCE as u64,
        })
    }

    /// Uniform point of `B(center, radius)` (left translate of an offset).
    pub fn sample<R: Rng>(
        &self,
        alg: &StratifiedAlgebra<S>,
        gauge: &HomogeneousGauge<S>,
        rng: &mut R,
    ) -> Result<GroupPoint<S>, IntegrateError> {
        let h = self.sample_offset(alg, gauge, rng)?;
        Ok(alg.multiply(&self.center, &h))
    }

    /// Unit-sphere direction under the cone measure: a uniform ball point
    /// dilated onto the unit sphere. Independent of the radial coordinate,
    /// which is what makes polar-style factorized sampling exact.
    pub fn direction<R: Rng>(
        &self,
        alg: &StratifiedAlgebra<S>,
        gauge: &HomogeneousGauge<S>,
        rng: &mut R,
    ) -> Result<GroupPoint<S>, IntegrateError> {
        loop {
            let h = self.sample_offset(alg, gauge, rng)?;
            let n = gauge.norm(alg, &h);
            if n > S::zero() {
                return Ok(alg.dilate(S::one() / n, &h));
            }
        }
    }
}

struct ChunkStat<S> {
    sum: S,
    sumsq: S,
    accepted: u64,
    bad: bool,
}

fn mc_chunk<S: Real, F>(
    alg: &StratifiedAlgebra<S>,
    gauge: &HomogeneousGauge<S>,
    sampler: &BallSampler<S>,
    f: &F,
    seed: u64,
    stream: u64,
    count: usize,
) -> ChunkStat<S>
where
    F: Fn(&GroupPoint<S>) -> S + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut stat = ChunkStat {
        sum: S::zero(),
        sumsq: S::zero(),
        accepted: 0,
        bad: false,
    };
    for _ in 0..count {
        let h = sampler.sample_raw(&mut rng);
        if gauge.norm(alg, &h) < sampler.radius() {
            let x = alg.multiply(sampler.center(), &h);
            let v = f(&x);
            if !v.is_finite() {
                stat.bad = true;
                return stat;
            }
            stat.sum += v;
            stat.sumsq += v * v;
            stat.accepted += 1;
        }
    }
    stat
}

fn mc_integrate<S: Real, F>(
    cfg: &IntegratorConfig<S>,
    alg: &StratifiedAlgebra<S>,
    gauge: &HomogeneousGauge<S>,
    sampler: &BallSampler<S>,
    f: &F,
    samples: usize,
) -> Result<Estimate<S>, IntegrateError>
where
    F: Fn(&GroupPoint<S>) -> S + Sync,
{
    let base_chunks = samples.div_ceil(CHUNK).max(1);
    let mut stats: Vec<ChunkStat<S>> = Vec::new();
    let mut total: usize = 0;
    let mut round = 0usize;
    loop {
        let first = stats.len();
        let goal = if round == 0 {
            samples
        } else {
            total + base_chunks * CHUNK
        };
        let sizes: Vec<(u64, usize)> = {
            let mut v = Vec::new();
            let mut at = total;
            let mut id = first as u64;
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
            .map(|&(id, take)| mc_chunk(alg, gauge, sampler, f, cfg.seed, id, take))
            .collect();
        total = goal;
        stats.extend(fresh);

        // Fixed-order reduction keeps results independent of scheduling.
        let mut sum = S::zero();
        let mut sumsq = S::zero();
        let mut accepted: u64 = 0;
        for st in &stats {
            if st.bad {
                return Err(IntegrateError::NonFiniteSample);
            }
            sum += st.sum;
            sumsq += st.sumsq;
            accepted += st.accepted;
        }
        if accepted == 0 {
            return Err(IntegrateError::ZeroAcceptance {
                tried: total as u64,
            });
        }
        let n = S::of(total as f64);
        let mean = sum / n;
        let var = ((sumsq - sum * mean) / (n - S::one())).max(S::zero());
        let value = sampler.box_volume() * mean;
        let stderr = sampler.box_volume() * (var / n).sqrt();
        let done = match cfg.error_target {
            None => true,
            Some(t) => {
                stderr <= t * value.abs().max(S::of(1e-300))
                    || total >= samples.saturating_mul(TARGET_GROWTH_CAP)
            }
        };
        if done {
            return Ok(Estimate {
                value,
                stderr,
                samples: total as u64,
            });
        }
        round += 1;
    }
}

fn grid_integrate<S: Real, F>(
    alg: &StratifiedAlgebra<S>,
    gauge: &HomogeneousGauge<S>,
    sampler: &BallSampler<S>,
    f: &F,
    resolution: usize,
) -> Result<Estimate<S>, IntegrateError>
where
    F: Fn(&GroupPoint<S>) -> S + Sync,
{
    let n = alg.n();
    if n > 4 {
        return Err(IntegrateError::GridUnsupported { n });
    }
    let half = (0..n)
        .map(|i| {
            gauge.unit_box_half_widths(alg).unwrap()[i]
                * sampler.radius().powi(alg.weight(i) as i32)
        })
        .collect::<Vec<S>>();
    let cells = (0..n)
        .map(|i| S::of(2.0) * half[i] / S::of(resolution as f64))
        .collect::<Vec<S>>();
    let cell_volume = cells.iter().fold(S::one(), |acc, &c| acc * c);
    let mut idx = vec![0usize; n];
    let mut sum = S::zero();
    let mut nodes: u64 = 0;
    loop {
        let coords: Vec<S> = (0..n)
            .map(|i| -half[i] + (S::of(idx[i] as f64) + S::of(0.5)) * cells[i])
            .collect();
        let h = GroupPoint::new(coords);
        if gauge.norm(alg, &h) < sampler.radius() {
            let v = f(&alg.multiply(sampler.center(), &h));
            if !v.is_finite() {
                return Err(IntegrateError::NonFiniteSample);
            }
            sum += v;
        }
        nodes += 1;
        // Odometer increment over the tensor grid.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return Ok(Estimate {
                    value: sum * cell_volume,
                    stderr: S::zero(),
                    samples: nodes,
                });
            }
        }
    }
}

/// Integrates `f` over the gauge ball `B(center, radius)` with the Haar
/// (Lebesgue) measure.
pub fn integrate_ball<S: Real, F>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    f: F,
    center: &GroupPoint<S>,
    radius: S,
) -> Result<Estimate<S>, IntegrateError>
where
    F: Fn(&GroupPoint<S>) -> S + Sync,
{
    cfg.validate()?;
    let sampler = BallSampler::new(alg, gauge, center.clone(), radius)?;
    match cfg.method {
        Method::MonteCarlo { samples } => mc_integrate(cfg, alg, gauge, &sampler, &f, samples),
        Method::Grid { resolution } => grid_integrate(alg, gauge, &sampler, &f, resolution),
    }
}

/// Volume of the unit gauge ball, `c_B`.
pub fn ball_volume_constant<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
) -> Result<Estimate<S>, IntegrateError> {
    integrate_ball(cfg, gauge, alg, |_| S::one(), &alg.zero(), S::one())
}

/// Memo for `ball_volume_constant`, keyed on everything that can change the
/// estimate (algebra structure, gauge, method, seed).
#[derive(Default)]
pub struct VolumeCache<S> {
    map: HashMap<String, Estimate<S>>,
}

impl<S: Real + Serialize> VolumeCache<S> {
    pub fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    pub fn get_or_compute(
        &mut self,
        cfg: &IntegratorConfig<S>,
        gauge: &HomogeneousGauge<S>,
        alg: &StratifiedAlgebra<S>,
    ) -> Result<Estimate<S>, IntegrateError> {
        let key = serde_json::to_string(&(alg.to_spec(), gauge, &cfg.method, cfg.seed))
            .expect("cache key serialization");
        if let Some(hit) = self.map.get(&key) {
            return Ok(*hit);
        }
        let est = ball_volume_constant(cfg, gauge, alg)?;
        self.map.insert(key, est);
        Ok(est)
    }
}

/// Radial side of the Folland-type reduction with an explicit ball-volume
/// constant: `Q·c_B·∫₀^R g(r) r^{Q-1} dr`.
pub fn folland_radial_with_cb<S: Real>(
    cb: S,
    alg: &StratifiedAlgebra<S>,
    g: &dyn Fn(S) -> S,
    r_max: S,
    tol: S,
) -> Result<S, IntegrateError> {
    let q = alg.q() as i32;
    let weighted = |r: S| g(r) * r.powi(q - 1);
    let integral = adaptive_simpson(&weighted, S::zero(), r_max, tol)?;
    Ok(S::of(alg.q() as f64) * cb * integral)
}

/// Radial reduction using an MC estimate of `c_B` under `cfg`.
pub fn folland_radial<S: Real>(
    cfg: &IntegratorConfig<S>,
    gauge: &HomogeneousGauge<S>,
    alg: &StratifiedAlgebra<S>,
    g: &dyn Fn(S) -> S,
    r_max: S,
) -> Result<S, IntegrateError> {
    let cb = ball_volume_constant(cfg, gauge, alg)?.value;
    folland_radial_with_cb(cb, alg, g, r_max, S::of(1e-10))
}
