//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spacetime-ns")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn heat_demo_passes_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("heat");
    let o = bin(&["heat-demo", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for f in ["config.toml", "v0.txt", "field.txt", "plot.csv", "checks.csv", "report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let r = report(&out);
    assert_eq!(r["pass"], true);
    assert!(r["w_norm"].as_f64().unwrap() <= 1e-6);
    // resolved configuration is echoed, seed included
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.starts_with("# heat-demo"));
    for key in ["seed = 1", "nx = 64", "flux = \"zero\"", "max_iters = 500"] {
        assert!(echo.contains(key), "{key} not in\n{echo}");
    }
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("j,t,energy,dissipation,energy_defect,error_max"));
}

#[test]
fn starved_optimizer_fails_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tg.toml");
    std::fs::write(&cfg, "max_iters = 1\nprecondition = false\n").unwrap();
    let out = tmp.path().join("tg");
    let o = bin(&["taylor-green", "--seed", "3", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("FAIL") && text.contains("w_residual"), "{text}");
    assert_eq!(report(&out)["pass"], false);
}

#[test]
fn usage_errors_exit_2_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("odd.toml");
    std::fs::write(&cfg, "nx = 33\n").unwrap();
    let out = tmp.path().join("odd");
    let o = bin(&["heat-demo", "--seed", "1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let out = tmp.path().join("noseed");
    assert_eq!(bin(&["heat-demo", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert!(!out.exists());

    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let o = bin(&["heat-demo", "--seed", "1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(bin(&["describe", "no-such-experiment"]).status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let out = tmp.path().join(format!("g{i}"));
            let o = bin(&["gradcheck", "--seed", "11", "--out", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
            out
        })
        .collect();
    for f in ["config.toml", "v0.txt", "field.txt", "plot.csv", "checks.csv", "report.json"] {
        let (a, b) = (runs[0].join(f), runs[1].join(f));
        if a.exists() || b.exists() {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), "{f} differs");
        }
    }
}

#[test]
fn describe_lists_every_experiment() {
    for name in ["heat-demo", "taylor-green", "cutoff-sweep", "gradcheck", "oracle-compare", "certify"] {
        let o = bin(&["describe", name]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        assert!(text.contains("defaults:"), "{text}");
        assert!(!text.contains('§') && !text.contains("eq.") && !text.contains("Theorem"), "{text}");
    }
}
