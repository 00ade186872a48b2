//! One function per subcommand. Each resolves its inputs from the
//! config, runs the core pipeline, writes the artifact plus provenance,
//! and reports invariant violations through the exit code.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use carnot::integrate::ball_volume_constant;
use carnot::poincare::{
    ball_poincare, fractional_poincare, one_dim_inequality, poincare_ponce,
    threshold_index, OneDimSample, PhiWeight, PoincareReport, DEFAULT_GRID,
};
use carnot::sobolev::{convergence_experiment, kappa, kappa_n, kappa_n_factorized};
use carnot::{Algebra, Gauge, Point};

use crate::config::{resolve_cb, resolve_field, resolve_group, ExperimentConfig};
use crate::output::{write_csv, write_json, write_provenance};
use crate::{from_integrate, from_poincare, from_sobolev, CliError};

#[derive(Serialize)]
struct BbmRow {
    n: usize,
    eps: f64,
    i_n: f64,
    stderr: f64,
    kappa: f64,
    energy: f64,
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct PoincareRow {
    r: f64,
    n: Option<usize>,
    s: Option<f64>,
    lhs: f64,
    lhs_stderr: f64,
    rhs: f64,
    rhs_stderr: f64,
    implied_constant: Option<f64>,
}

fn poincare_row(r: f64, n: Option<usize>, s: Option<f64>, rep: &PoincareReport<f64>) -> PoincareRow {
    PoincareRow {
        r,
        n,
        s,
        lhs: rep.lhs,
        lhs_stderr: rep.lhs_stderr,
        rhs: rep.rhs,
        rhs_stderr: rep.rhs_stderr,
        implied_constant: rep.implied_constant,
    }
}

#[derive(Serialize)]
struct GroupInfo {
    name: String,
    coordinates: usize,
    step: usize,
    homogeneous_dimension: usize,
    layer_dimensions: Vec<usize>,
    coordinate_weights: Vec<usize>,
}

pub fn group_info(
    name: Option<&str>,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let name = match (name, cfg.group.as_deref()) {
        (Some(n), _) | (None, Some(n)) => n.to_string(),
        (None, None) => {
            return Err(CliError::Schema(
                "group-info needs a group argument or a config with `group`".into(),
            ))
        }
    };
    let alg = resolve_group(&name)?;
    let info = GroupInfo {
        name,
        coordinates: alg.n(),
        step: alg.step(),
        homogeneous_dimension: alg.q(),
        layer_dimensions: (1..=alg.step())
            .map(|w| alg.layer_range(w).len())
            .collect(),
        coordinate_weights: (0..alg.n()).map(|i| alg.weight(i)).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&info).expect("serializable"));
    if let Some(path) = out {
        write_json(path, &info)?;
        write_provenance(path, "group-info", None, 0, 0)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CbEstimate {
    group: String,
    value: f64,
    stderr: f64,
    samples: u64,
}

pub fn cb_estimate(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let alg = cfg.require_group()?;
    let gauge = cfg.gauge_for(&alg)?;
    let mc = cfg.integrator(1 << 17);
    let est = ball_volume_constant(&mc, &gauge, &alg).map_err(from_integrate)?;
    let result = CbEstimate {
        group: cfg.group.clone().unwrap_or_default(),
        value: est.value,
        stderr: est.stderr,
        samples: est.samples,
    };
    write_json(out, &result)?;
    write_provenance(out, "cb-estimate", raw, mc.seed, mc_samples(&mc))?;
    println!(
        "c_B({}) = {:.6} ± {:.2e} ({} samples) -> {}",
        result.group,
        result.value,
        result.stderr,
        result.samples,
        out.display()
    );
    Ok(())
}

fn mc_samples(cfg: &carnot::Integrator) -> usize {
    match cfg.method {
        carnot::integrate::Method::MonteCarlo { samples } => samples,
        carnot::integrate::Method::Grid { .. } => 0,
    }
}

pub fn run_kappa(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let alg = cfg.require_group()?;
    let gauge = cfg.gauge_for(&alg)?;
    let p = cfg.require_p()?;
    let mc = cfg.integrator(1 << 17);
    let limit = kappa(&mc, &gauge, &alg, p).map_err(from_sobolev)?;

    let mut rows = Vec::new();
    if cfg.mollifier.is_some() {
        let cb = resolve_cb(cfg, &gauge, &alg)?;
        let family = cfg.family(&alg, cb)?;
        for &n in cfg.require_n_list()? {
            let est = match &cfg.direction {
                Some(v) => kappa_n(&mc, &gauge, &alg, p, &family, n, v)
                    .map_err(from_sobolev)?,
                None => kappa_n_factorized(&mc, &gauge, &alg, p, &family, n)
                    .map_err(from_sobolev)?,
            };
            rows.push(BbmRow {
                n,
                eps: family.epsilon(n),
                i_n: est.value,
                stderr: est.stderr,
                kappa: limit.value,
                energy: 1.0,
                ratio: Some(est.value / limit.value),
            });
        }
    }
    if rows.is_empty() {
        write_header(out, &["n", "eps", "i_n", "stderr", "kappa", "energy", "ratio"])?;
    } else {
        write_csv(out, &rows)?;
    }
    write_provenance(out, "kappa", raw, mc.seed, mc_samples(&mc))?;
    println!(
        "kappa = {:.6} ± {:.2e}; {} kappa_n rows -> {}",
        limit.value,
        limit.stderr,
        rows.len(),
        out.display()
    );
    Ok(())
}

fn write_header(out: &Path, header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| CliError::Schema(format!("cannot write {}: {e}", out.display())))?;
    w.write_record(header)
        .and_then(|_| w.flush().map_err(Into::into))
        .map_err(|e| CliError::Schema(format!("cannot write {}: {e}", out.display())))
}

pub fn bbm_converge(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let alg = cfg.require_group()?;
    let gauge = cfg.gauge_for(&alg)?;
    let field = resolve_field(cfg, &alg)?;
    let p = cfg.require_p()?;
    let cb = resolve_cb(cfg, &gauge, &alg)?;
    let family = cfg.family(&alg, cb)?;
    let n_list = cfg.require_n_list()?;
    let mc = cfg.integrator(1 << 17);

    let results = convergence_experiment(&mc, &gauge, &alg, &field, p, &family, n_list)
        .map_err(from_sobolev)?;
    let mut violations = Vec::new();
    let rows: Vec<BbmRow> = results
        .iter()
        .map(|r| {
            let slack = 3.0 * r.stderr.hypot(r.energy_stderr);
            if r.value > r.energy + slack {
                violations.push(format!(
                    "n = {}: I_n = {:.6} exceeds energy {:.6} + {:.2e}",
                    r.n, r.value, r.energy, slack
                ));
            }
            BbmRow {
                n: r.n,
                eps: r.eps,
                i_n: r.value,
                stderr: r.stderr,
                kappa: r.kappa,
                energy: r.energy,
                ratio: r.ratio,
            }
        })
        .collect();
    write_csv(out, &rows)?;
    write_provenance(out, "bbm-converge", raw, mc.seed, mc_samples(&mc))?;
    if let Some(last) = results.last() {
        println!(
            "{} rows -> {}; final ratio {:?} at n = {}",
            rows.len(),
            out.display(),
            last.ratio,
            last.n
        );
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

fn one_dim_fixture(name: &str) -> Result<Box<dyn Fn(f64) -> f64>, CliError> {
    match name {
        "linear" => Ok(Box::new(|t| t)),
        "quadratic" => Ok(Box::new(|t| t * t)),
        "sine" => Ok(Box::new(|t: f64| (2.0 * std::f64::consts::PI * t).sin())),
        other => Err(CliError::Schema(format!(
            "field: unknown 1-D fixture {other:?} (expected linear, quadratic, or sine)"
        ))),
    }
}

pub fn poincare_1d(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let name = cfg
        .field
        .as_deref()
        .ok_or_else(|| CliError::Schema("missing required config key `field`".into()))?;
    let f = one_dim_fixture(name)?;
    let p = cfg.require_p()?;
    let grid = cfg.grid.unwrap_or(DEFAULT_GRID);
    if grid < 8 || grid % 2 != 0 {
        return Err(CliError::Schema(
            "grid: interval count must be even and ≥ 8".into(),
        ));
    }

    let mut weights: Vec<(Option<usize>, PhiWeight<f64>)> = Vec::new();
    if cfg.mollifier.is_some() {
        let line = resolve_group("abelian1")?;
        let family = cfg.family(&line, 2.0)?;
        for &n in cfg.require_n_list()? {
            let phi = PhiWeight::Mollifier {
                family: family.clone(),
                n,
            };
            weights.push((Some(n), phi));
        }
    } else {
        weights.push((None, cfg.phi_weight()?));
    }

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (n, phi) in weights {
        let sample = OneDimSample::from_fn(&f, 0.0, 1.0, p, phi, grid)
            .map_err(from_poincare)?;
        let rep = one_dim_inequality(&sample).map_err(from_poincare)?;
        if !rep.satisfied {
            violations.push(format!(
                "n = {n:?}: lhs {:.6} exceeds rhs {:.6}",
                rep.lhs, rep.rhs
            ));
        }
        rows.push(poincare_row(1.0, n, None, &rep));
    }
    write_csv(out, &rows)?;
    write_provenance(out, "poincare-1d", raw, cfg.seed.unwrap_or(0), 0)?;
    println!("{} rows -> {}", rows.len(), out.display());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

pub fn poincare_ball(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let alg = cfg.require_group()?;
    let gauge = cfg.gauge_for(&alg)?;
    let field = resolve_field(cfg, &alg)?;
    let p = cfg.require_p()?;
    let cb = resolve_cb(cfg, &gauge, &alg)?;
    let params = cfg.ball_params(cb);
    let center = cfg.center(&alg)?;
    let radii = cfg.radii()?;
    let mc = cfg.integrator(1 << 16);

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    if cfg.mollifier.is_some() {
        let family = cfg.family(&alg, cb)?;
        let c = cfg.constant.ok_or_else(|| {
            CliError::Schema("missing required config key `constant`".into())
        })?;
        for &radius in &radii {
            for &n in cfg.require_n_list()? {
                let rep = poincare_ponce(
                    &mc, &gauge, &alg, &field, p, &family, n, radius, &center, c,
                    &params,
                )
                .map_err(from_poincare)?;
                // Below the mass threshold the inequality carries no
                // guarantee; the row is recorded without an assertion.
                let asserted = rep.threshold.map_or(true, |t| n >= t.n0);
                if asserted && !rep.satisfied {
                    violations.push(format!(
                        "R = {radius}, n = {n}: lhs {:.6} exceeds rhs {:.6}",
                        rep.lhs, rep.rhs
                    ));
                }
                rows.push(poincare_row(radius, Some(n), None, &rep));
            }
        }
    } else {
        let phi = cfg.phi_weight()?;
        for &radius in &radii {
            let rep = ball_poincare(
                &mc, &gauge, &alg, &field, p, &phi, radius, &center, &params,
            )
            .map_err(from_poincare)?;
            if !rep.satisfied {
                violations.push(format!(
                    "R = {radius}: lhs {:.6} exceeds rhs {:.6}",
                    rep.lhs, rep.rhs
                ));
            }
            rows.push(poincare_row(radius, None, None, &rep));
        }
    }
    write_csv(out, &rows)?;
    write_provenance(out, "poincare-ball", raw, mc.seed, mc_samples(&mc))?;
    println!("{} rows -> {}", rows.len(), out.display());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

pub fn fractional(
    cfg: &ExperimentConfig,
    raw: Option<&[u8]>,
    out: &Path,
) -> Result<(), CliError> {
    let alg = cfg.require_group()?;
    let gauge = cfg.gauge_for(&alg)?;
    let field = resolve_field(cfg, &alg)?;
    let p = cfg.require_p()?;
    let cb = resolve_cb(cfg, &gauge, &alg)?;
    let params = cfg.ball_params(cb);
    let center = cfg.center(&alg)?;
    let radii = cfg.radii()?;
    let s_list = cfg.require_s_list()?;
    let mc = cfg.integrator(1 << 16);

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for &radius in &radii {
        for &s in s_list {
            let rep = fractional_poincare(
                &mc, &gauge, &alg, &field, p, s, radius, &center, &params,
            )
            .map_err(from_poincare)?;
            if !rep.satisfied {
                violations.push(format!(
                    "R = {radius}, s = {s}: lhs {:.6} exceeds rhs {:.6}",
                    rep.lhs, rep.rhs
                ));
            }
            rows.push(poincare_row(radius, None, Some(s), &rep));
        }
    }
    write_csv(out, &rows)?;
    write_provenance(out, "fractional", raw, mc.seed, mc_samples(&mc))?;
    println!("{} rows -> {}", rows.len(), out.display());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

/// Fixed-seed invariant sweep over the built-in groups; prints one line
/// per check.
pub fn selftest() -> Result<(), CliError> {
    let mut failures = 0usize;
    let mut check = |name: &str, outcome: Result<(), String>| match outcome {
        Ok(()) => println!("ok {name}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            failures += 1;
        }
    };

    let groups: Vec<(&str, Algebra)> = vec![
        ("abelian3", resolve_group("abelian3")?),
        ("heisenberg1", resolve_group("heisenberg1")?),
        ("heisenberg2", resolve_group("heisenberg2")?),
        ("engel", resolve_group("engel")?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for (name, alg) in &groups {
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let [x, y, z] =
                std::array::from_fn(|_| random_point(&mut rng, alg.n()));
            let lam = rng.random_range(0.2..2.0);
            worst = worst
                .max(point_gap(
                    alg,
                    &alg.multiply(&alg.multiply(&x, &y), &z),
                    &alg.multiply(&x, &alg.multiply(&y, &z)),
                ))
                .max(point_gap(alg, &alg.multiply(&x, &alg.zero()), &x))
                .max(point_gap(
                    alg,
                    &alg.multiply(&x, &alg.inverse(&x)),
                    &alg.zero(),
                ))
                .max(point_gap(
                    alg,
                    &alg.dilate(lam, &alg.multiply(&x, &y)),
                    &alg.multiply(&alg.dilate(lam, &x), &alg.dilate(lam, &y)),
                ));
        }
        check(&format!("group axioms on {name}"), threshold(worst, 1e-12));
    }

    let h1 = resolve_group("heisenberg1")?;
    let gauge = Gauge::koranyi_default(&h1);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let x = random_point(&mut rng, 3);
        let lam = rng.random_range(0.2..2.0);
        let hom = (gauge.norm(&h1, &h1.dilate(lam, &x)) - lam * gauge.norm(&h1, &x))
            .abs();
        let sym = (gauge.norm(&h1, &h1.inverse(&x)) - gauge.norm(&h1, &x)).abs();
        worst = worst.max(hom).max(sym);
    }
    check("gauge homogeneity and symmetry on heisenberg1", threshold(worst, 1e-12));

    let mc = carnot::Integrator::monte_carlo(1 << 16, 0xC0FFEE);
    match ball_volume_constant(&mc, &gauge, &h1) {
        Ok(est) => {
            let exact = std::f64::consts::PI * std::f64::consts::PI / 8.0;
            let gap = (est.value - exact).abs();
            check(
                "heisenberg1 ball volume constant",
                if gap <= 3.0 * est.stderr {
                    Ok(())
                } else {
                    Err(format!("{} vs {exact} (3σ = {:.2e})", est.value, 3.0 * est.stderr))
                },
            );
        }
        Err(e) => check("heisenberg1 ball volume constant", Err(e.to_string())),
    }

    for kind in ["box", "power_tail", "smooth_bump"] {
        let outcome = (|| -> Result<(), String> {
            let family = carnot::Mollifiers::new(
                kind.parse().map_err(|e| format!("{e}"))?,
                &h1,
                std::f64::consts::PI * std::f64::consts::PI / 8.0,
            )
            .map_err(|e| e.to_string())?;
            for n in [2usize, 8] {
                let mass = family
                    .to_one_dim(n)
                    .map_err(|e| e.to_string())?
                    .mass();
                if (mass - 1.0).abs() > 1e-3 {
                    return Err(format!("member {n} mass {mass}"));
                }
            }
            Ok(())
        })();
        check(&format!("{kind} member mass is 1"), outcome);
    }

    let outcome = (|| -> Result<(), String> {
        let sample = OneDimSample::unit(|t: f64| t, 1.0, PhiWeight::Constant)
            .map_err(|e| e.to_string())?;
        let rep = one_dim_inequality(&sample).map_err(|e| e.to_string())?;
        if (rep.lhs - 0.25).abs() > 1e-9 {
            return Err(format!("lhs {} vs 0.25", rep.lhs));
        }
        if (rep.rhs - 2.0).abs() > 0.02 {
            return Err(format!("rhs {} vs 2", rep.rhs));
        }
        Ok(())
    })();
    check("unit interval closed form (f = t, p = 1)", outcome);

    let outcome = (|| -> Result<(), String> {
        let line = resolve_group("abelian1").map_err(|e| e.to_string())?;
        let family = carnot::Mollifiers::new("box".parse().unwrap(), &line, 2.0)
            .map_err(|e| e.to_string())?;
        let n0 = threshold_index(&family, 0.1, 0.5).map_err(|e| e.to_string())?;
        if n0 == 6 {
            Ok(())
        } else {
            Err(format!("n0 = {n0}, expected 6"))
        }
    })();
    check("box mass threshold at horizon 0.1", outcome);

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(CliError::Invariant(format!("{failures} selftest check(s) failed")))
    }
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Point {
    Point::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn point_gap(alg: &Algebra, a: &Point, b: &Point) -> f64 {
    (0..alg.n()).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn threshold(worst: f64, tol: f64) -> Result<(), String> {
    if worst < tol {
        Ok(())
    } else {
        Err(format!("max error {worst:.3e} ≥ {tol:.0e}"))
    }
}
