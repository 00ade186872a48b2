//! Rerun determinism: every experiment subcommand, run twice with the
//! same config and seed, must reproduce its artifacts byte for byte.
//! Only the provenance side-car may differ (it carries a timestamp).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_carnot")
}

struct Scenario {
    name: &'static str,
    args: &'static [&'static str],
    config: Option<&'static str>,
    artifacts: &'static [&'static str],
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "group-info",
        args: &["group-info", "heisenberg1", "--out", "group-info.json"],
        config: None,
        artifacts: &["group-info.json"],
    },
    Scenario {
        name: "cb-estimate",
        args: &["cb-estimate", "--config", "config.json"],
        config: Some(
            r#"{"group": "heisenberg1", "samples": 65536, "seed": 11, "out": "cb-estimate.json"}"#,
        ),
        artifacts: &["cb-estimate.json"],
    },
    Scenario {
        name: "kappa",
        args: &["kappa", "--config", "config.json"],
        config: Some(
            r#"{"group": "heisenberg1", "p": 2.0, "mollifier": "box", "n_list": [1, 2, 4],
                "samples": 65536, "seed": 12, "out": "kappa.csv"}"#,
        ),
        artifacts: &["kappa.csv"],
    },
    Scenario {
        name: "bbm-converge",
        args: &["bbm-converge", "--config", "config.json"],
        config: Some(
            r#"{"group": "abelian1", "field": "abelian_bump", "p": 2.0, "mollifier": "box",
                "n_list": [2, 8], "samples": 65536, "seed": 13, "out": "bbm-converge.csv"}"#,
        ),
        artifacts: &["bbm-converge.csv"],
    },
    Scenario {
        name: "poincare-1d",
        args: &["poincare-1d", "--config", "config.json"],
        config: Some(
            r#"{"field": "sine", "p": 2.0, "mollifier": "box", "n_list": [1, 2, 3],
                "out": "poincare-1d.csv"}"#,
        ),
        artifacts: &["poincare-1d.csv"],
    },
    Scenario {
        name: "poincare-ball-phi",
        args: &["poincare-ball", "--config", "config.json"],
        config: Some(
            r#"{"group": "heisenberg1", "field": "h1_gaussian", "p": 2.0, "radii": [1.0],
                "samples": 65536, "seed": 14, "out": "ball-phi.csv"}"#,
        ),
        artifacts: &["ball-phi.csv"],
    },
    Scenario {
        name: "poincare-ball-mollifier",
        args: &["poincare-ball", "--config", "config.json"],
        config: Some(
            r#"{"group": "heisenberg1", "field": "h1_gaussian", "p": 2.0, "radii": [1.0],
                "mollifier": "box", "n_list": [4], "constant": 0.16,
                "samples": 65536, "seed": 15, "out": "ball-ponce.csv"}"#,
        ),
        artifacts: &["ball-ponce.csv"],
    },
    Scenario {
        name: "fractional",
        args: &["fractional", "--config", "config.json"],
        config: Some(
            r#"{"group": "heisenberg1", "field": "h1_gaussian", "p": 2.0, "radii": [1.0],
                "s_list": [0.5, 0.9], "mu": 2.0, "samples": 65536, "seed": 16,
                "out": "fractional.csv"}"#,
        ),
        artifacts: &["fractional.csv"],
    },
];

fn run_once(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn carnot");
    assert!(
        out.status.success(),
        "carnot {args:?} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn artifact_bytes(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names
        .iter()
        .map(|name| {
            fs::read(dir.join(name))
                .unwrap_or_else(|e| panic!("artifact {name} missing: {e}"))
        })
        .collect()
}

#[test]
fn acceptance_10_cli_determinism() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-acceptance");
    let mut details = Vec::new();
    for sc in SCENARIOS {
        let dir = root.join(sc.name);
        if dir.exists() {
            fs::remove_dir_all(&dir).expect("clear scenario dir");
        }
        fs::create_dir_all(&dir).expect("create scenario dir");
        if let Some(cfg) = sc.config {
            fs::write(dir.join("config.json"), cfg).expect("write config");
        }

        let stdout_a = run_once(&dir, sc.args);
        let first = artifact_bytes(&dir, sc.artifacts);
        let stdout_b = run_once(&dir, sc.args);
        let second = artifact_bytes(&dir, sc.artifacts);

        for (name, (a, b)) in sc.artifacts.iter().zip(first.iter().zip(&second)) {
            assert!(
                a == b,
                "[{}] artifact {name} differs between reruns ({} vs {} bytes)",
                sc.name,
                a.len(),
                b.len()
            );
            // Provenance must exist but is exempt from the byte check.
            let prov = dir.join(format!("{name}.provenance.json"));
            assert!(prov.exists(), "[{}] missing provenance for {name}", sc.name);
        }
        assert!(
            stdout_a == stdout_b,
            "[{}] stdout differs between reruns",
            sc.name
        );
        details.push(format!(
            "{}: {} artifact(s), {} bytes",
            sc.name,
            sc.artifacts.len(),
            first.iter().map(Vec::len).sum::<usize>()
        ));
    }
    println!("ACCEPTANCE 10 cli-determinism PASS");
    println!("  [10 cli-determinism] {}", details.join("; "));
}
