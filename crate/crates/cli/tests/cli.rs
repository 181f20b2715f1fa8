use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fissure(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fissure")).args(args).env("FISSURE_OUT", out).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.join("manifest.json").is_file()).collect();
    v.sort();
    v
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

/// A short-horizon medium keeps the solver studies fast.
fn quick(study: &str) -> String {
    let mut t: toml::Table = toml::from_str(&format!("seed = 5\n[study]\n{study}")).unwrap();
    let medium = toml::Value::try_from(fissure_core::scenario::MediumSpec::default_stripes()).unwrap();
    t.insert("medium".into(), medium);
    t["medium"]["horizon"] = toml::Value::Float(0.025);
    t["medium"]["omega_resolution"] = toml::Value::Integer(4);
    toml::to_string(&t).unwrap()
}

#[test]
fn negative_eps_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[study]\nkind = \"simulate\"\neps = -0.25\n");
    for cmd in ["validate", "run"] {
        let out = fissure(&[cmd, cfg.to_str().unwrap()], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("study.eps"));
    }
    assert!(run_dirs(tmp.path()).is_empty());
}

#[test]
fn validate_accepts_a_minimal_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ok.toml", "[study]\nkind = \"converge\"\n");
    let out = fissure(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: converge"));
}

#[test]
fn dyncheck_run_writes_manifest_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "d.toml", "[study]\nkind = \"dyncheck\"\n");
    let out = fissure(&["run", cfg.to_str().unwrap(), "--workers", "1"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    let dir = &dirs[0];
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("dyncheck_"));
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["study"], "dyncheck");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["workers"], 1);
    assert!(m["config_hash"].as_str().unwrap().starts_with(&dir.file_name().unwrap().to_str().unwrap()[9..]));
    let verdict = json(&dir.join("verdict.json"));
    assert_eq!(verdict["all_pass"], true);
    assert!(verdict["checks"].as_object().unwrap().values().all(|v| v == true));
    assert!(fs::read_to_string(dir.join("resolved.toml")).unwrap().contains("kind = \"dyncheck\""));
}

#[test]
fn out_flag_beats_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let other = tmp.path().join("elsewhere");
    let cfg = write(tmp.path(), "d.toml", "[study]\nkind = \"dyncheck\"\nmax_resolution = 4\nresolution = 8\ndraws = 4\nfields = 2\n");
    let out = fissure(&["run", cfg.to_str().unwrap(), "--out", other.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    assert_eq!(run_dirs(&other).len(), 1);
    assert!(run_dirs(tmp.path()).is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", &quick("kind = \"simulate\"\neps = 0.5\ngrid = 32\nsamples = 2\n"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (root, workers) in [(&a, "1"), (&b, "2")] {
        let out = fissure(&["run", cfg.to_str().unwrap(), "--out", root.to_str().unwrap(), "--workers", workers], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (da, db) = (&run_dirs(&a)[0], &run_dirs(&b)[0]);
    assert_eq!(da.file_name(), db.file_name());
    for name in ["energy.csv", "runs.csv", "u_s0_final.snap", "u_s1_final.snap"] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap(), "{name}");
    }
    let energy = fs::read_to_string(da.join("energy.csv")).unwrap();
    assert!(energy.starts_with("sample,seed,eps,grid,step,"));
}

#[test]
fn report_on_an_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fissure(&["report", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no run manifest"));
}

#[test]
fn report_on_a_single_run_has_one_section() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "d.toml", "[study]\nkind = \"dyncheck\"\nmax_resolution = 8\nresolution = 16\n");
    assert!(fissure(&["run", cfg.to_str().unwrap()], tmp.path()).status.success());
    let dir = &run_dirs(tmp.path())[0];
    assert!(fissure(&["report", dir.to_str().unwrap()], tmp.path()).status.success());
    let s = json(&dir.join("summary.json"));
    assert_eq!(s["sections"].as_array().unwrap().len(), 1);
    assert_eq!(s["sections"][0]["study"], "dyncheck");
    assert_eq!(s["sections"][0]["tables"]["checks.csv"]["rows"].as_array().unwrap().len(), 4);
    assert!(dir.join("plots").read_dir().unwrap().count() == 1);
}

#[test]
fn converge_and_twoscale_report_cross_references_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let conv = write(tmp.path(), "c.toml", &quick("kind = \"converge\"\neps = [0.5, 0.25]\nfine_grids = [32, 128]\nmacro_grid = 16\nsamples = 2\n"));
    let two = write(tmp.path(), "t.toml", "seed = 5\n[study]\nkind = \"twoscale\"\nfamily = \"stochastic\"\neps = [0.5, 0.25]\nx_resolution = 64\n");
    for cfg in [&conv, &two] {
        let out = fissure(&["run", cfg.to_str().unwrap(), "--out", root.to_str().unwrap()], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let conv_dir = run_dirs(&root).into_iter().find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("converge_")).unwrap();
    let ladder = fs::read_to_string(conv_dir.join("ladder.csv")).unwrap();
    let mut lines = ladder.lines();
    assert_eq!(lines.next(), Some("eps,distance,samples,seed,fine_grid,macro_grid"));
    for line in lines {
        let d: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(d > 0.0, "{line}");
    }
    assert!(json(&conv_dir.join("verdict.json"))["trend_ok"].is_boolean());

    assert!(fissure(&["report", root.to_str().unwrap()], tmp.path()).status.success());
    let s = json(&root.join("summary.json"));
    let sections = s["sections"].as_array().unwrap();
    let mut studies: Vec<&str> = sections.iter().map(|x| x["study"].as_str().unwrap()).collect();
    studies.sort();
    assert_eq!(studies, ["converge", "twoscale"]);
    let shared = s["seeds"]["5"].as_array().unwrap();
    assert_eq!(shared.len(), 2);
    // Concatenation oracle: each section's tables equal its own CSV files.
    for sec in sections {
        let dir = root.join(sec["run"].as_str().unwrap());
        for (name, table) in sec["tables"].as_object().unwrap() {
            let csv = fs::read_to_string(dir.join(name)).unwrap();
            assert_eq!(table["rows"].as_array().unwrap().len(), csv.lines().count() - 1, "{name}");
            assert_eq!(table["columns"].as_array().unwrap().len(), csv.lines().next().unwrap().split(',').count());
        }
    }
    assert!(root.join("plots").read_dir().unwrap().count() >= 2);
}
