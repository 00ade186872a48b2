//! Experiment configuration: one JSON file fully determines a run.
//! Unknown keys are rejected so a typo cannot silently change an
//! experiment, and every resolver error names the offending key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use carnot::mollify::MollifierKind;
use carnot::poincare::{PhiWeight, PoincareParams};
use carnot::sobolev::ScalarField;
use carnot::{Algebra, Field, Gauge, Integrator, Mollifiers, Point};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// abelian1..abelian3, heisenberg1, heisenberg2, engel.
    pub group: Option<String>,
    #[serde(default)]
    pub gauge: GaugeConfig,
    /// Field fixture name; see `resolve_field`.
    pub field: Option<String>,
    pub p: Option<f64>,
    /// box, power_tail, or smooth_bump.
    pub mollifier: Option<String>,
    pub n_list: Option<Vec<usize>>,
    pub s_list: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Ball radii for the group inequalities (default [1.0]).
    pub radii: Option<Vec<f64>>,
    /// Non-mollifier weight: constant or one_minus_tau.
    pub phi: Option<String>,
    /// Explicit constant C for the mollifier ball inequality.
    pub constant: Option<f64>,
    /// Relative standard error target for Monte Carlo runs.
    pub error_target: Option<f64>,
    /// Interval count for 1-D grids (even, ≥ 8).
    pub grid: Option<usize>,
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub cpq: Option<f64>,
    /// Ball center in exponential coordinates (default identity).
    pub center: Option<Vec<f64>>,
    /// Horizontal direction for single-direction κ_n runs.
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeConfig {
    /// Per-coordinate first-layer weights; anisotropic when set.
    pub horizontal_weights: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Read and schema-validate a config file; `raw` keeps the exact
    /// bytes for the provenance hash.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let raw = std::fs::read(path).map_err(|e| {
            CliError::Schema(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_slice(&raw)
            .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        Ok((cfg, raw))
    }

    pub fn require_group(&self) -> Result<Algebra, CliError> {
        let name = self.group.as_deref().ok_or_else(|| missing("group"))?;
        resolve_group(name)
    }

    pub fn require_p(&self) -> Result<f64, CliError> {
        self.p.ok_or_else(|| missing("p"))
    }

    pub fn gauge_for(&self, alg: &Algebra) -> Result<Gauge, CliError> {
        match &self.gauge.horizontal_weights {
            None => Ok(Gauge::koranyi_default(alg)),
            Some(w) => Gauge::koranyi_default(alg)
                .with_horizontal_weights(alg, w.clone())
                .map_err(|e| CliError::Schema(format!("gauge.horizontal_weights: {e}"))),
        }
    }

    pub fn integrator(&self, default_samples: usize) -> Integrator {
        let mut cfg = Integrator::monte_carlo(
            self.samples.unwrap_or(default_samples),
            self.seed.unwrap_or(0),
        );
        cfg.error_target = self.error_target;
        cfg
    }

    pub fn mollifier_kind(&self) -> Result<MollifierKind, CliError> {
        let name = self.mollifier.as_deref().ok_or_else(|| missing("mollifier"))?;
        name.parse()
            .map_err(|e| CliError::Schema(format!("mollifier: {e}")))
    }

    pub fn family(&self, alg: &Algebra, cb: f64) -> Result<Mollifiers, CliError> {
        Mollifiers::new(self.mollifier_kind()?, alg, cb)
            .map_err(|e| CliError::Schema(format!("mollifier: {e}")))
    }

    pub fn require_n_list(&self) -> Result<&[usize], CliError> {
        match self.n_list.as_deref() {
            Some([]) | None => Err(missing("n_list")),
            Some(ns) => Ok(ns),
        }
    }

    pub fn require_s_list(&self) -> Result<&[f64], CliError> {
        match self.s_list.as_deref() {
            Some([]) | None => Err(missing("s_list")),
            Some(ss) => Ok(ss),
        }
    }

    pub fn radii(&self) -> Result<Vec<f64>, CliError> {
        let radii = self.radii.clone().unwrap_or_else(|| vec![1.0]);
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(CliError::Schema(
                "radii: every radius must be positive and finite".into(),
            ));
        }
        Ok(radii)
    }

    pub fn center(&self, alg: &Algebra) -> Result<Point, CliError> {
        match &self.center {
            None => Ok(alg.zero()),
            Some(c) if c.len() == alg.n() => Ok(Point::new(c.clone())),
            Some(c) => Err(CliError::Schema(format!(
                "center: expected {} coordinates, got {}",
                alg.n(),
                c.len()
            ))),
        }
    }

    pub fn ball_params(&self, cb: f64) -> PoincareParams<f64> {
        let mut params = PoincareParams::new(cb);
        if let Some(mu) = self.mu {
            params = params.with_mu(mu);
        }
        if let Some(beta) = self.beta {
            params = params.with_beta(beta);
        }
        if let Some(cpq) = self.cpq {
            params = params.with_cpq(cpq);
        }
        params
    }

    /// Plain weight named by the `phi` key (mollifier weights are built
    /// separately since they carry a family and an index).
    pub fn phi_weight(&self) -> Result<PhiWeight<f64>, CliError> {
        match self.phi.as_deref() {
            None | Some("constant") => Ok(PhiWeight::Constant),
            Some("one_minus_tau") => Ok(PhiWeight::OneMinusTau),
            Some(other) => Err(CliError::Schema(format!(
                "phi: unknown weight {other:?} (expected constant or one_minus_tau)"
            ))),
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::Schema(format!("missing required config key `{key}`"))
}

pub fn resolve_group(name: &str) -> Result<Algebra, CliError> {
    let built = match name {
        "abelian1" => Algebra::abelian(1),
        "abelian2" => Algebra::abelian(2),
        "abelian3" => Algebra::abelian(3),
        "heisenberg1" => Algebra::heisenberg(1),
        "heisenberg2" => Algebra::heisenberg(2),
        "engel" => Algebra::engel(),
        other => {
            return Err(CliError::Schema(format!(
                "group: unknown group {other:?} (expected abelian1..abelian3, \
                 heisenberg1, heisenberg2, or engel)"
            )))
        }
    };
    built.map_err(|e| CliError::Schema(format!("group: {e}")))
}

/// Field fixtures are bound to the group they were written for; a
/// mismatch is a config error, not a runtime surprise.
pub fn resolve_field(cfg: &ExperimentConfig, alg: &Algebra) -> Result<Field, CliError> {
    let name = cfg.field.as_deref().ok_or_else(|| missing("field"))?;
    let group = cfg.group.as_deref().unwrap_or("");
    let m1 = alg.layer_range(1).len();
    match name {
        "constant" => Ok(ScalarField::constant(1.0, m1)),
        "coordinate" => Ok(ScalarField::coordinate(0)),
        "abelian_bump" if group.starts_with("abelian") => {
            Ok(ScalarField::abelian_bump(alg.n()))
        }
        "h1_gaussian" if group == "heisenberg1" => Ok(ScalarField::h1_gaussian()),
        "h1_coordinate_window" if group == "heisenberg1" => {
            Ok(ScalarField::h1_coordinate_window())
        }
        "engel_gaussian" if group == "engel" => Ok(ScalarField::engel_gaussian()),
        "abelian_bump" | "h1_gaussian" | "h1_coordinate_window" | "engel_gaussian" => {
            Err(CliError::Schema(format!(
                "field: fixture {name:?} does not exist on group {group:?}"
            )))
        }
        other => Err(CliError::Schema(format!(
            "field: unknown fixture {other:?} (expected constant, coordinate, \
             abelian_bump, h1_gaussian, h1_coordinate_window, or engel_gaussian)"
        ))),
    }
}

/// Ball volume constant for the run: closed forms for the gauges that
/// have them, otherwise a Monte Carlo estimate under a seed derived
/// from the experiment's (so reruns stay bit-identical).
pub fn resolve_cb(
    cfg: &ExperimentConfig,
    gauge: &Gauge,
    alg: &Algebra,
) -> Result<f64, CliError> {
    use std::f64::consts::PI;
    if cfg.gauge.horizontal_weights.is_none() {
        match cfg.group.as_deref() {
            Some("abelian1") => return Ok(2.0),
            Some("abelian2") => return Ok(PI),
            Some("abelian3") => return Ok(4.0 * PI / 3.0),
            Some("heisenberg1") => return Ok(PI * PI / 8.0),
            _ => {}
        }
    }
    let mut mc = cfg.integrator(1 << 17);
    mc.seed ^= 0x5851_f42d_4c95_7f2d;
    mc.error_target = None;
    let est = carnot::integrate::ball_volume_constant(&mc, gauge, alg)
        .map_err(crate::from_integrate)?;
    Ok(est.value)
}
