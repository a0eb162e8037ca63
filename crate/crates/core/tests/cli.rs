use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use openbaker::classical::OpenBakerSpec;
use openbaker::quantize::{parity_restrict, quantize_open, ParitySector};
use openbaker::spectral::{count_sector, eigen_spectrum, SectorQuery};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_openbaker"));
    c.env_remove("OPENBAKER_WORKERS");
    c
}

struct Run {
    _tmp: TempDir,
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exited normally")
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }

    fn files(&self) -> BTreeSet<String> {
        disk_files(&self.out)
    }
}

fn disk_files(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect()
}

fn run_with(subcommand: &str, config: &str, extra: &[&str]) -> Run {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, config).unwrap();
    let out = tmp.path().join("out");
    let output = bin()
        .arg(subcommand)
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run { _tmp: tmp, out, output }
}

fn run(subcommand: &str, config: &str) -> Run {
    run_with(subcommand, config, &[])
}

fn counts_rows(text: &str) -> Vec<(usize, f64, usize)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("N,r,count"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

const B5_EVEN: &str = "map.family = dft\nmap.base = 5\nmap.kept = 1,3\ndims.start = 20\ndims.k_max = 1\nspectrum.parity = even\nspectrum.radii = 0.5\n";

#[test]
fn five_baker_counts_match_dense_restriction() {
    let r = run("spectrum", B5_EVEN);
    assert_eq!(r.code(), 0, "{}", String::from_utf8_lossy(&r.output.stderr));
    let rows = counts_rows(&r.read("counts.csv"));
    let q = SectorQuery::annulus(0.5).unwrap();
    let expected: Vec<(usize, f64, usize)> = [20usize, 100]
        .iter()
        .map(|&n| {
            let b = quantize_open(&OpenBakerSpec::five_baker(), n).unwrap();
            let s = eigen_spectrum(&parity_restrict(&b, ParitySector::Even).unwrap()).unwrap();
            (n, 0.5, count_sector(&s, &q))
        })
        .collect();
    assert_eq!(rows, expected);
    assert_eq!(rows.iter().map(|r| r.2).collect::<Vec<_>>(), vec![3, 5]);
    let fit = r.json("weyl_r0.5.json");
    for key in ["slope", "intercept", "points", "doubling_ratios"] {
        assert!(fit.get(key).is_some(), "missing {key}");
    }
    assert_eq!(fit["points"][0]["N"], 20);
    assert!(r.read("profile.csv").starts_with("N,r,count,rescaled\n"));
    assert!(r.read("spectrum_N20_even.csv").starts_with("re,im,modulus,arg\n"));
    assert_eq!(r.read("spectrum_N100_even.csv").lines().count(), 51);
}

#[test]
fn toy_spectra_match_closed_form() {
    let r = run("toy-check", "map.family = toy\ndims.list = 3, 9, 27\n");
    assert_eq!(r.code(), 0);
    for n in [3, 9, 27] {
        assert_eq!(r.json(&format!("toy_match_N{n}.json"))["all_matched"], true);
    }
}

#[test]
fn toy_check_rejects_other_families() {
    assert_eq!(run("toy-check", B5_EVEN).code(), 1);
}

#[test]
fn empty_radii_emit_spectra_only() {
    let r = run("spectrum", "dims.list = 20, 40\n");
    assert_eq!(r.code(), 0);
    assert_eq!(
        r.files(),
        BTreeSet::from(["spectrum_N20_full.csv".to_string(), "spectrum_N40_full.csv".to_string()])
    );
}

#[test]
fn transport_asymptotics_rows() {
    let r = run("transport", "transport.k = 1..4\ntransport.theta = 0\n");
    assert_eq!(r.code(), 0);
    assert_eq!(r.read("asymptotics.csv").lines().count(), 5);
    let t4 = r.json("transport_k4_theta000.json");
    for key in ["k", "theta", "g", "P", "F", "T"] {
        assert!(t4.get(key).is_some(), "missing {key}");
    }
    let g = t4["g"].as_f64().unwrap();
    assert!((g / 32.0 - 1.0).abs() < 0.05, "g = {g}");
    let ts: Vec<f64> = t4["T"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(ts.len(), 64);
    assert!(ts.windows(2).all(|w| w[0] >= w[1]));
    assert!(r.json("transport_k1_theta000.json").get("F").is_none());
}

#[test]
fn transport_theta_grid_files() {
    let r = run("transport", "transport.k = 3\ntransport.theta_count = 8\n");
    assert_eq!(r.code(), 0);
    let results = r.files().iter().filter(|f| f.starts_with("transport_k3_") && f.ends_with(".json")).count();
    assert_eq!(results, 8);
    let report = r.json("asymptotics.json");
    let spread = report["spread"][0]["relative_std_g"].as_f64().unwrap();
    // g varies with ϑ at finite k; the spread is reported, not bounded here
    assert!(spread.is_finite() && spread > 0.0);
}

#[test]
fn transport_beyond_dense_cap_suggests_series() {
    let r = run("transport", "transport.k = 7\ntransport.method = resolvent\n");
    assert_eq!(r.code(), 2);
    let manifest = r.json("manifest.json");
    let err = manifest["jobs"][0]["error"].as_str().unwrap();
    assert!(err.contains("series"), "{err}");
}

#[test]
fn invalid_config_exits_one() {
    assert_eq!(run("transport", "transport.k = 0\n").code(), 1);
    assert_eq!(run("spectrum", "no equals sign\n").code(), 1);
    let missing = bin().args(["spectrum", "/nonexistent/run.conf"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn classical_three_baker() {
    let r = run(
        "classical",
        "map.base = 3\nmap.kept = 0,2\nclassical.resolution = 243\nclassical.t_max = 5\nclassical.transfer_k = 3\n",
    );
    assert_eq!(r.code(), 0);
    for name in ["escape_forward.csv", "escape_backward.csv"] {
        assert_eq!(r.read(name).lines().count(), 243 * 243 + 1);
    }
    let mu = r.json("dimensions.json")["mu"].as_f64().unwrap();
    assert!((mu - 2f64.ln() / 3f64.ln()).abs() < 1e-12);
    assert!((mu - 0.63093).abs() < 1e-5);
    let transfer = r.json("transfer_k3.json");
    let lead = transfer["leading"][0].as_f64().unwrap();
    assert!((lead - 2.0 / 3.0).abs() < 1e-10);
    assert!(transfer["next_modulus"].as_f64().unwrap() < 1e-10);
}

#[test]
fn classical_five_baker_dimension() {
    let r = run("classical", "map.base = 5\nmap.kept = 1,3\nclassical.resolution = 5\n");
    assert_eq!(r.code(), 0);
    let mu = r.json("dimensions.json")["mu"].as_f64().unwrap();
    assert!((mu - 0.4306765).abs() < 1e-7);
}

#[test]
fn closed_map_classical_jobs_fail_in_isolation() {
    let r = run("classical", "map.base = 3\nmap.kept = 0,1,2\nclassical.resolution = 9\nclassical.transfer_k = 1\n");
    assert_eq!(r.code(), 2);
    let manifest = r.json("manifest.json");
    let failed: Vec<&str> = manifest["jobs"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|j| j["status"] == "failed")
        .map(|j| j["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["escape forward", "escape backward", "dimensions"]);
    assert!(r.files().contains("transfer_k1.json"));
}

#[test]
fn failing_dimension_does_not_abort_siblings() {
    let r = run("spectrum", "dims.list = 20, 21, 40\nspectrum.radii = 0.5\n");
    assert_eq!(r.code(), 2);
    let files = r.files();
    assert!(files.contains("spectrum_N20_full.csv"));
    assert!(files.contains("spectrum_N40_full.csv"));
    assert!(!files.contains("spectrum_N21_full.csv"));
    let ns: Vec<usize> = counts_rows(&r.read("counts.csv")).iter().map(|r| r.0).collect();
    assert_eq!(ns, vec![20, 40]);
}

#[test]
fn dimension_cap_is_a_job_error() {
    let r = run("spectrum", "dims.list = 20, 40\nrun.dimension_cap = 30\n");
    assert_eq!(r.code(), 2);
    let manifest = r.json("manifest.json");
    assert!(manifest["jobs"][1]["error"].as_str().unwrap().contains("cap"));
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    disk_files(dir)
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let config = "map.family = dft\ndims.list = 20, 40, 60\nspectrum.radii = 0.1, 0.5\n";
    let a = run_with("spectrum", config, &["--workers", "1"]);
    let b = run_with("spectrum", config, &["--workers", "3"]);
    assert_eq!(a.code(), 0);
    assert_eq!(artifacts(&a.out), artifacts(&b.out));
    let strip = |r: &Run| {
        let mut m = r.json("manifest.json");
        m["total_seconds"] = Value::Null;
        m["config"]["output_dir"] = Value::Null;
        m["config"]["workers"] = Value::Null;
        for j in m["jobs"].as_array_mut().unwrap() {
            j["seconds"] = Value::Null;
        }
        m
    };
    assert_eq!(strip(&a), strip(&b));

    let t1 = run("transport", "transport.k = 2..3\ntransport.theta_count = 3\n");
    let t2 = run("transport", "transport.k = 2..3\ntransport.theta_count = 3\n");
    assert_eq!(artifacts(&t1.out), artifacts(&t2.out));
}

#[test]
fn manifest_lists_every_artifact_once() {
    let r = run("spectrum", B5_EVEN);
    let manifest = r.json("manifest.json");
    let listed: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let unique: BTreeSet<String> = listed.iter().cloned().collect();
    assert_eq!(unique.len(), listed.len());
    assert_eq!(unique, r.files());
    let per_job: Vec<String> = manifest["jobs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|j| j["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()))
        .collect();
    assert_eq!(per_job.len(), listed.len());
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["parity"], "even");

    let check = bin().arg("manifest").arg(&r.out).output().unwrap();
    assert_eq!(check.status.code(), Some(0));
    fs::write(r.out.join("stray.txt"), "x").unwrap();
    fs::remove_file(r.out.join("profile.csv")).unwrap();
    let check = bin().arg("manifest").arg(&r.out).output().unwrap();
    assert_eq!(check.status.code(), Some(2));
    let text = String::from_utf8_lossy(&check.stdout);
    assert!(text.contains("missing: profile.csv") && text.contains("unlisted: stray.txt"), "{text}");
}

#[test]
fn output_directory_reuse() {
    let r = run("spectrum", "dims.list = 20\n");
    let cfg = r._tmp.path().join("run.conf");
    let again = bin().arg("spectrum").arg(&cfg).arg("--out").arg(&r.out).output().unwrap();
    assert_eq!(again.status.code(), Some(1));
    fs::write(&cfg, "dims.list = 40\n").unwrap();
    let replaced = bin()
        .arg("spectrum")
        .arg(&cfg)
        .arg("--out")
        .arg(&r.out)
        .arg("--replace")
        .output()
        .unwrap();
    assert_eq!(replaced.status.code(), Some(0));
    assert_eq!(disk_files(&r.out), BTreeSet::from(["spectrum_N40_full.csv".to_string()]));
}

#[test]
fn worker_environment_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "dims.list = 20\n").unwrap();
    let run = |env: &str, flag: Option<&str>, out: &str| {
        let mut c = bin();
        c.env("OPENBAKER_WORKERS", env).arg("spectrum").arg(&cfg).arg("--out").arg(tmp.path().join(out));
        if let Some(f) = flag {
            c.args(["--workers", f]);
        }
        c.output().unwrap()
    };
    assert_eq!(run("bogus", None, "a").status.code(), Some(1));
    assert_eq!(run("bogus", Some("2"), "b").status.code(), Some(0));
    let ok = run("3", None, "c");
    assert_eq!(ok.status.code(), Some(0));
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("c/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["workers"], 3);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            openbaker::cli::config::RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
