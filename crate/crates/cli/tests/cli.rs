use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_collapse-lab"));
    c.env_remove("COLLAPSE_LAB_DATA");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn small_sweep(seed: u64) -> String {
    format!(
        r#"{{"version": 1, "sweep": {{"runs": [{{
            "spectrum": {{"kind": "isotropic", "d": 20}},
            "t_grid": [40, 80, 160, 320, 640],
            "reg": {{"kind": "lambda", "values": [0.01]}},
            "n_grid": [0, 2],
            "t0": {{"kind": "fixed", "t0": 60}},
            "sigma": 0.5, "sigma0": 0.5, "replicates": 4, "seed": {seed}}}]}}}}"#
    )
}

#[test]
fn help_lists_commands_flags_and_exit_codes() {
    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    for word in [
        "predict",
        "sweep",
        "mnist",
        "slope",
        "compare",
        "--config",
        "--seed",
        "--threads",
        "--out",
        "--preset",
        "COLLAPSE_LAB_DATA",
        "Exit codes",
    ] {
        assert!(text.contains(word), "help lacks {word}");
    }
}

#[test]
fn predict_prints_scaling_exponents() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"version": 1, "scaling": {"beta": 2, "r": 0.375}}"#,
    );
    let o = run(dir.path(), &["--config", "c.json", "predict"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ell_crit     0.8\n"), "{text}");
    assert!(text.contains("c            0.6\n"), "{text}");
}

#[test]
fn predict_without_fake_data_has_zero_fake_terms() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"version": 1, "predict": {
        "spectrum": {"kind": "power_law", "d": 50, "beta": 2, "r": 0.375},
        "t": 100, "ell": 0.8, "sigma": 1}}"#;
    write(dir.path(), "c.json", cfg);
    let o = run(
        dir.path(),
        &["--config", "c.json", "--out", "p.json", "predict", "--json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    let t = &printed["test_error"];
    assert_eq!(t["rho_term"], 0.0);
    assert_eq!(t["delta_bias"], 0.0);
    let total = t["bias"].as_f64().unwrap() + t["variance"].as_f64().unwrap();
    assert!((t["total"].as_f64().unwrap() - total).abs() < 1e-15);
}

#[test]
fn forced_under_parametrized_rho_with_small_t0_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"version": 1, "predict": {
        "spectrum": {"kind": "isotropic", "d": 100}, "n": 2, "t0": 80, "t": 1000,
        "lambda": 0.001, "sigma0": 0.2, "rho_form": "under_parametrized"}}"#;
    write(dir.path(), "c.json", cfg);
    let o = run(dir.path(), &["--config", "c.json", "predict"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("diverges"), "{}", stderr(&o));
}

#[test]
fn inapplicable_theory_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"version": 1, "predict": {
        "spectrum": {"kind": "isotropic", "d": 100}, "n": 2, "t0": 50, "t": 1000,
        "lambda": 0.001, "sigma0": 0.2, "design_mode": "independent"}}"#;
    write(dir.path(), "c.json", cfg);
    assert_eq!(
        run(dir.path(), &["--config", "c.json", "predict"]).status.code(),
        Some(3)
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "typo.json",
        r#"{"version": 1, "scaling": {"beta": 2, "r": 0.3, "gama": 1}}"#,
    );
    write(
        dir.path(),
        "old.json",
        r#"{"version": 0, "scaling": {"beta": 2, "r": 0.3}}"#,
    );
    for args in [
        &["--config", "typo.json", "predict"][..],
        &["--config", "old.json", "predict"],
        &["--config", "missing.json", "predict"],
        &["predict"],
        &["--preset", "fig9", "sweep"],
        &["--preset", "fig1", "predict"],
        &["--threads", "0", "--preset", "fig2", "predict"],
    ] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn fig1_preset_writes_csv_with_header() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["--preset", "fig1", "--threads", "2", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("runs/fig1.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("schema_version,n,T,T0,lambda,ell,"));
    assert_eq!(lines.count(), 700);
    assert!(stdout(&o).contains("|z| < 3:"));
}

#[test]
fn sweep_is_reproducible_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.json", &small_sweep(3));
    for (out, seed) in [("a.csv", None), ("b.csv", None), ("c.csv", Some("9"))] {
        let mut args = vec!["--config", "c.json", "--out", out, "sweep"];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(run(dir.path(), &args).status.success());
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn compare_reports_coverage() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.json", &small_sweep(4));
    assert!(run(dir.path(), &["--config", "c.json", "--out", "s.csv", "sweep"])
        .status
        .success());
    let o = run(dir.path(), &["--out", "r.json", "compare", "s.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("cells: 10, with theory: 10, |z| < 3:"),
        "{}",
        stdout(&o)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let frac = report["fraction_within_3"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));
    assert_eq!(report["cells"].as_array().unwrap().len(), 10);
}

#[test]
fn slope_fits_a_selected_curve() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.json", &small_sweep(5));
    assert!(run(dir.path(), &["--config", "c.json", "--out", "s.csv", "sweep"])
        .status
        .success());

    let o = run(dir.path(), &["slope", "s.csv"]);
    assert_eq!(o.status.code(), Some(2), "two curves need a selection");

    let o = run(dir.path(), &["--out", "fit.json", "slope", "s.csv", "--n", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["points"], 5);
    // Clean ridge error with T >> d decays roughly like 1/T.
    let slope = fit["slope"].as_f64().unwrap();
    assert!((-1.3..-0.6).contains(&slope), "slope {slope}");

    write(
        dir.path(),
        "sel.json",
        r#"{"version": 1, "slope": {"input": "s.csv", "n": 0, "t_min": 80}}"#,
    );
    let o = run(dir.path(), &["--config", "sel.json", "slope"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 points"), "{}", stdout(&o));

    assert_eq!(
        run(dir.path(), &["slope", "absent.csv", "--n", "0"]).status.code(),
        Some(4)
    );
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

/// Tiny MNIST-shaped dataset: 4x4 images whose brightness tracks the label parity.
fn write_fake_mnist(dir: &Path, train: usize, test: usize) {
    let mut state = 12345u32;
    let mut next = || {
        state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
        (state >> 24) as u8
    };
    for (prefix, count) in [("train", train), ("t10k", test)] {
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        let pixels: Vec<u8> = labels
            .iter()
            .flat_map(|&l| {
                (0..16)
                    .map(|_| next() / 2 + if l % 2 == 1 { 100 } else { 0 })
                    .collect::<Vec<_>>()
            })
            .collect();
        fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            idx(0x803, &[count as u32, 4, 4], &pixels),
        )
        .unwrap();
        fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            idx(0x801, &[count as u32], &labels),
        )
        .unwrap();
    }
}

#[test]
fn mnist_smoke_run_on_synthetic_idx_files() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data/mnist");
    fs::create_dir_all(&data).unwrap();
    write_fake_mnist(&data, 120, 60);
    let cfg = r#"{"version": 1, "mnist": {"runs": [{
        "kernel": {"kind": "rbf", "bandwidth": 0.01},
        "capacity": {"beta": 1.65, "r": 0.097},
        "t0": 40, "n_grid": [0, 2], "t_grid": [16, 32, 64], "ells": ["crit", "star"],
        "generator_ell": 1.0, "replicates": 2, "test_size": 50, "seed": 1}]}}"#;
    write(dir.path(), "m.json", cfg);
    let o = bin()
        .current_dir(dir.path())
        .env("COLLAPSE_LAB_DATA", dir.path().join("data"))
        .args(["--config", "m.json", "--out", "m.csv", "mnist"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kernel,n,T,T0,ell,lambda,replicate,test_error,seed"
    );
    assert_eq!(lines.count(), 2 * 3 * 2 * 2);
}

#[test]
fn mnist_without_data_exits_4_with_instructions() {
    let dir = TempDir::new().unwrap();
    let o = bin()
        .current_dir(dir.path())
        .env("COLLAPSE_LAB_DATA", dir.path())
        .args(["--preset", "fig4", "mnist"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(
        err.contains("train-images-idx3-ubyte") && err.contains("COLLAPSE_LAB_DATA"),
        "{err}"
    );
}

fn mnist_root() -> Option<PathBuf> {
    let root = std::env::var_os("COLLAPSE_LAB_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    root.join("mnist").is_dir().then_some(root)
}

#[test]
fn fig4_preset_collapse_curves_on_mnist() {
    let Some(root) = mnist_root() else {
        eprintln!("MNIST not found; fig4 curve check not run");
        return;
    };
    let dir = TempDir::new().unwrap();
    let o = bin()
        .current_dir(dir.path())
        .env("COLLAPSE_LAB_DATA", &root)
        .args(["--preset", "fig4", "mnist"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    #[derive(Default)]
    struct Acc {
        sum: f64,
        sq: f64,
        k: f64,
    }
    let mut cells: std::collections::BTreeMap<(String, String, usize, usize), Acc> = Default::default();
    let csv = fs::read_to_string(dir.path().join("runs/fig4.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let key = (
            f[0].to_string(),
            f[4].to_string(),
            f[1].parse().unwrap(),
            f[2].parse().unwrap(),
        );
        let e: f64 = f[7].parse().unwrap();
        let a = cells.entry(key).or_default();
        a.sum += e;
        a.sq += e * e;
        a.k += 1.0;
    }
    let stat = |a: &Acc| {
        let m = a.sum / a.k;
        (m, ((a.sq / a.k - m * m).max(0.0) * a.k / (a.k - 1.0) / a.k).sqrt())
    };
    let mut ells = std::collections::BTreeSet::new();
    for ((kernel, ell, n, t), a) in &cells {
        ells.insert((kernel.clone(), ell.clone()));
        if *n != 2 {
            continue;
        }
        let (m2, s2) = stat(a);
        let (m0, s0) = stat(&cells[&(kernel.clone(), ell.clone(), 0, *t)]);
        assert!(
            m2 + 2.0 * (s0 * s0 + s2 * s2).sqrt() >= m0,
            "{kernel} ell={ell} T={t}: n=2 {m2} < n=0 {m0}"
        );
    }
    assert_eq!(ells.len(), 4, "two ell curves per kernel");
}
