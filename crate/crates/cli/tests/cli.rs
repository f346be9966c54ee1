use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chemotaxis(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemotaxis"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHEMOTAXIS_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
name = "small"
models = ["fine", "coarse", "sde"]
eps = [0.2]
n_particles = 200
seed = 7
"#;

#[test]
fn run_writes_report_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let first = chemotaxis(&["run", "-o", "out", "small.toml"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let a = fs::read(dir.path().join("out/small.json")).unwrap();
    let second = chemotaxis(&["run", "-o", "out", "small.toml"], dir.path());
    assert!(second.status.success());
    let b = fs::read(dir.path().join("out/small.json")).unwrap();
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["format"], "chemotaxis-report");
    assert_eq!(report["config"]["n_particles"], 200);
    assert_eq!(report["results"]["runs"].as_array().unwrap().len(), 3);
}

#[test]
fn overrides_change_the_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = chemotaxis(
        &["run", "-o", "out", "small.toml", "--n_particles=50", "--models=[\"fine\"]", "--output.positions_csv=true"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/small.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["n_particles"], 50);
    let csv = fs::read_to_string(dir.path().join("out/small.fine.eps0.2.positions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "name = \"bad\"\n[params]\nlamda0 = 1.0\n").unwrap();
    let o = chemotaxis(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda0"), "{}", stderr(&o));

    let o = chemotaxis(&["run", "bad.toml", "--n_particles=many"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = chemotaxis(&["run", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));
}

#[test]
fn newton_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = chemotaxis(
        &["run", "-o", "out", "small.toml", "--models=[\"fine\"]", "--params.newton_max_iter=1", "--params.newton_tol=1e-300"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numerical"));
}

#[test]
fn compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    assert!(chemotaxis(&["run", "-o", "a", "small.toml"], dir.path()).status.success());
    assert!(chemotaxis(&["run", "-o", "b", "small.toml", "--seed=8"], dir.path()).status.success());

    let same = chemotaxis(&["compare", "a/small.json", "a/small.json"], dir.path());
    assert_eq!(same.status.code(), Some(0));

    let o = chemotaxis(&["compare", "a/small.json", "b/small.json", "abs=1e-12"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("FAIL results.runs.0.summary.mean.0"), "{out}");
    assert!(out.contains("FAIL config.seed"));

    // Only the seed, the output directory and the statistics differ.
    fs::write(
        dir.path().join("tol.toml"),
        "[[rule]]\npattern = \"config.seed\"\nignore = true\n[[rule]]\npattern = \"config.output.dir\"\nignore = true\n[[rule]]\npattern = \"results.*\"\nignore = true\n",
    )
    .unwrap();
    let o = chemotaxis(&["compare", "a/small.json", "b/small.json", "tol.toml", "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(table["failed"], 0);

    let o = chemotaxis(&["compare", "a/small.json", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("junk.json"), "{}").unwrap();
    let o = chemotaxis(&["compare", "a/small.json", "junk.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_are_listed_and_shown() {
    let dir = tempfile::tempdir().unwrap();
    let o = chemotaxis(&["presets", "list"], dir.path());
    let names = String::from_utf8_lossy(&o.stdout);
    assert_eq!(names.lines().count(), 11);
    assert!(names.lines().any(|l| l == "diffusion-variance"));
    let o = chemotaxis(&["presets", "show", "epsilon-ladder"], dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("name = \"epsilon-ladder\""));
    let o = chemotaxis(&["presets", "run", "no-such-preset"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pde_density_csv_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let o = chemotaxis(
        &["presets", "run", "-o", "out", "pde-particle", "--n_particles=100", "--pde.cells=101"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/pde-particle.pde.density.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,n"));
    assert_eq!(csv.lines().count(), 102);
}
