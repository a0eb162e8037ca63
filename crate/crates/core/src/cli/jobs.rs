//! Job orchestration and artifact emission.
//!
//! A run expands the configuration into independent jobs, executes them on
//! up to `workers` threads, then runs single-threaded aggregation steps over
//! the successful results. Every job writes its own files; the manifest is
//! assembled last and never lists itself.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use super::config::{RunConfig, TransportConfig};
use crate::classical::{escape_grid, fractal_dimensions, transfer_matrix, Direction};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::matrix::C64;
use crate::quantize::{build_toy_diagonal, parity_restrict, MapFamily, ParitySector, QuantumMapId};
use crate::spectral::{
    compare_spectra, count_sector, eigen_spectrum, eigen_spectrum_kernel_deflated, profile_curve, sector_spectrum,
    toy_closed_spectrum, weyl_fit, SectorQuery, Spectrum,
};
use crate::transport::{evaluate_transport, summarize_transport, TransportResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Environment override for the worker count.
pub const WORKERS_ENV: &str = "OPENBAKER_WORKERS";

/// Eigenvalues below this modulus count as zero in the transfer report.
const TRANSFER_ZERO: f64 = 1e-10;

/// Distance to the closed-form lattice accepted by the toy comparison.
const TOY_MATCH_TOLERANCE: f64 = 1e-8;

/// Which spectrum-derived artifacts a run emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpectrumOutputs {
    pub counts: bool,
    pub weyl: bool,
    pub profile: bool,
    pub toy_check: bool,
}

impl SpectrumOutputs {
    pub const NONE: Self = Self {
        counts: false,
        weyl: false,
        profile: false,
        toy_check: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct JobRecord {
    pub name: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub jobs: Vec<JobRecord>,
    /// Every emitted artifact, sorted, relative to the output directory.
    pub files: Vec<String>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn all_ok(&self) -> bool {
        self.jobs.iter().all(|j| j.status == JobStatus::Ok)
    }

    pub fn failed(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.iter().filter(|j| j.status == JobStatus::Failed)
    }
}

/// Files written by one job, relative to the output directory.
struct Artifacts<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

fn record(name: String, start: Instant, artifacts: Artifacts<'_>, outcome: Result<()>) -> JobRecord {
    let (status, error) = match outcome {
        Ok(()) => (JobStatus::Ok, None),
        Err(e) => {
            log::warn!("job {name} failed: {e}");
            (JobStatus::Failed, Some(e.to_string()))
        }
    };
    JobRecord {
        name,
        status,
        error,
        files: artifacts.files,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs `f(0..count)` on up to `workers` threads; results keep index order.
fn run_parallel<T: Send>(count: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, count.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = f(i);
                slots.lock().expect("no worker panicked while holding the lock")[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|v| v.expect("every index was processed"))
        .collect()
}

/// Runs `f` as a named job writing into `dir`.
fn job(dir: &Path, name: String, f: impl FnOnce(&mut Artifacts<'_>) -> Result<()>) -> JobRecord {
    let start = Instant::now();
    let mut artifacts = Artifacts::new(dir);
    log::info!("job {name}");
    let outcome = f(&mut artifacts);
    record(name, start, artifacts, outcome)
}

fn spectrum_file(n: usize, parity: ParitySector) -> String {
    format!("spectrum_N{n}_{parity}.csv")
}

/// `N = 3^k` for the toy model, or `None`.
fn power_of_three(n: usize) -> Option<usize> {
    let mut k = 0;
    let mut m = n;
    while m > 1 && m.is_multiple_of(3) {
        m /= 3;
        k += 1;
    }
    (m == 1 && k > 0).then_some(k)
}

fn compute_spectrum(cfg: &RunConfig, n: usize) -> Result<Spectrum> {
    if n > cfg.dimension_cap {
        return Err(Error::Domain(format!(
            "N = {n} exceeds the dimension cap {}",
            cfg.dimension_cap
        )));
    }
    let id = QuantumMapId::new(cfg.family, cfg.spec.clone(), n)?;
    if cfg.family == MapFamily::Dft && cfg.parity != ParitySector::Full {
        return sector_spectrum(&cfg.spec, n, cfg.parity);
    }
    let m = parity_restrict(&id.build()?, cfg.parity)?;
    Ok(eigen_spectrum(&m)?.with_source(id, cfg.parity))
}

fn spectrum_job(cfg: &RunConfig, outputs: SpectrumOutputs, n: usize) -> (JobRecord, Option<Spectrum>) {
    let mut spectrum = None;
    let rec = job(&cfg.output_dir, format!("spectrum N={n}"), |a| {
        let s = compute_spectrum(cfg, n)?;
        a.write(&spectrum_file(n, cfg.parity), |w| s.write_csv(w))?;
        if outputs.toy_check && cfg.family == MapFamily::ToyDiagonal {
            let k = power_of_three(n)
                .ok_or_else(|| Error::Domain(format!("the closed-form toy spectrum needs N = 3^k, got {n}")))?;
            if cfg.parity != ParitySector::Full {
                return Err(Error::Domain("the toy comparison needs the full spectrum".into()));
            }
            let report = compare_spectra(&s, &toy_closed_spectrum(k)?, TOY_MATCH_TOLERANCE)?;
            let matched = report.all_matched();
            a.write_json(&format!("toy_match_N{n}.json"), &ToyMatchReport {
                n,
                k,
                all_matched: matched,
                report,
            })?;
            if !matched {
                return Err(Error::Solver(format!("toy spectrum at N={n} does not match the closed form")));
            }
        }
        spectrum = Some(s);
        Ok(())
    });
    (rec, spectrum)
}

#[derive(Serialize)]
struct ToyMatchReport {
    #[serde(rename = "N")]
    n: usize,
    k: usize,
    all_matched: bool,
    #[serde(flatten)]
    report: crate::spectral::SpectrumMatch,
}

/// Spectra for every configured dimension plus the requested aggregates.
pub fn run_spectrum_job(cfg: &RunConfig, outputs: SpectrumOutputs) -> Vec<JobRecord> {
    let results = run_parallel(cfg.dims.len(), cfg.workers, |i| spectrum_job(cfg, outputs, cfg.dims[i]));
    let mut records = Vec::new();
    let mut spectra = Vec::new();
    for (rec, s) in results {
        records.push(rec);
        spectra.extend(s);
    }
    spectra.sort_by_key(|s| s.dimension);
    if cfg.radii.is_empty() {
        return records;
    }
    let dir = &cfg.output_dir;
    if outputs.counts {
        records.push(job(dir, "counts".into(), |a| {
            let queries = cfg
                .radii
                .iter()
                .map(|&r| SectorQuery::new(r, cfg.sector_theta, cfg.sector_rho))
                .collect::<Result<Vec<_>>>()?;
            a.write("counts.csv", |w| {
                writeln!(w, "N,r,count")?;
                for s in &spectra {
                    for q in &queries {
                        writeln!(w, "{},{},{}", s.dimension, fmt_float(q.r), count_sector(s, q))?;
                    }
                }
                Ok(())
            })
        }));
    }
    if outputs.weyl {
        for &r in &cfg.radii {
            records.push(job(dir, format!("weyl r={}", fmt_float(r)), |a| {
                let q = SectorQuery::new(r, cfg.sector_theta, cfg.sector_rho)?;
                let series: Vec<(usize, usize)> = spectra.iter().map(|s| (s.dimension, count_sector(s, &q))).collect();
                let fit = weyl_fit(&series)?;
                a.write_json(&format!("weyl_r{}.json", fmt_float(r)), &fit)
            }));
        }
    }
    if outputs.profile {
        records.push(job(dir, "profile".into(), |a| {
            let table = profile_curve(&spectra, cfg.spec.base(), cfg.effective_mu(), &cfg.radii)?;
            a.write("profile.csv", |w| table.write_csv(w))
        }));
    }
    records
}

/// One result file per `(k, ϑ)` plus the asymptotics report.
pub fn run_transport_job(cfg: &RunConfig) -> Vec<JobRecord> {
    let Some(tc) = &cfg.transport else {
        return vec![job(&cfg.output_dir, "transport".into(), |_| {
            Err(Error::Config("no transport section (transport.k) in the configuration".into()))
        })];
    };
    let TransportConfig { ks, thetas, method, tol } = tc;
    let pairs: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..thetas.len()).map(move |j| (k, j))).collect();
    let results = run_parallel(pairs.len(), cfg.workers, |i| {
        let (k, j) = pairs[i];
        let mut out = None;
        let rec = job(&cfg.output_dir, format!("transport k={k} theta#{j}"), |a| {
            let r = evaluate_transport(k, thetas[j], *method, *tol)?;
            let stem = format!("transport_k{k}_theta{j:03}");
            a.write_json(&format!("{stem}.json"), &r)?;
            a.write(&format!("{stem}_T.csv"), |w| r.write_transmissions_csv(w))?;
            out = Some(r);
            Ok(())
        });
        (rec, out)
    });
    let mut records = Vec::new();
    let mut done: Vec<TransportResult> = Vec::new();
    for (rec, r) in results {
        records.push(rec);
        done.extend(r);
    }
    records.push(job(&cfg.output_dir, "asymptotics".into(), |a| {
        if done.is_empty() {
            return Err(Error::Domain("no transport result to summarize".into()));
        }
        let report = summarize_transport(&done);
        a.write("asymptotics.csv", |w| report.write_csv(w))?;
        a.write_json("asymptotics.json", &report)
    }));
    records
}

#[derive(Serialize)]
struct TransferReport {
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    /// Eigenvalues with modulus above `zero_threshold`.
    nonzero: Vec<C64>,
    leading: Option<C64>,
    /// Largest modulus after the leading eigenvalue.
    next_modulus: f64,
    zero_threshold: f64,
}

/// Escape grids, trapped-set dimensions and, when requested, the toy transfer-matrix spectrum.
pub fn run_classical_job(cfg: &RunConfig) -> Vec<JobRecord> {
    let c = &cfg.classical;
    let dir = &cfg.output_dir;
    let mut tasks: Vec<Box<dyn Fn() -> JobRecord + Sync + '_>> = Vec::new();
    for (direction, label) in [(Direction::Forward, "forward"), (Direction::Backward, "backward")] {
        tasks.push(Box::new(move || {
            job(dir, format!("escape {label}"), |a| {
                if !cfg.spec.is_open() {
                    return Err(Error::Domain("a closed baker has no escape; escape grids are undefined".into()));
                }
                let grid = escape_grid(&cfg.spec, c.resolution, direction, c.t_max)?;
                a.write(&format!("escape_{label}.csv"), |w| grid.write_csv(w))
            })
        }));
    }
    tasks.push(Box::new(|| {
        job(dir, "dimensions".into(), |a| {
            a.write_json("dimensions.json", &fractal_dimensions(&cfg.spec)?)
        })
    }));
    if let Some(k) = c.transfer_k {
        tasks.push(Box::new(move || {
            job(dir, format!("transfer k={k}"), |a| {
                let n = u32::try_from(k)
                    .ok()
                    .and_then(|e| 3usize.checked_pow(e))
                    .filter(|&n| n <= cfg.dimension_cap)
                    .ok_or_else(|| Error::Domain(format!("3^{k} exceeds the dimension cap {}", cfg.dimension_cap)))?;
                let t = transfer_matrix(&build_toy_diagonal(n)?);
                let s = eigen_spectrum_kernel_deflated(&t, TRANSFER_ZERO)?;
                let nonzero = s.nonzero(TRANSFER_ZERO);
                let report = TransferReport {
                    k,
                    n,
                    leading: nonzero.first().copied(),
                    next_modulus: s.eigenvalues().get(1).map_or(0.0, |z| z.norm()),
                    nonzero,
                    zero_threshold: TRANSFER_ZERO,
                };
                a.write_json(&format!("transfer_k{k}.json"), &report)
            })
        }));
    }
    run_parallel(tasks.len(), cfg.workers, |i| tasks[i]())
}

/// Which pipeline a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Spectrum(SpectrumOutputs),
    Transport,
    Classical,
}

/// Names of the files a previous manifest in `dir` recorded.
fn previous_files(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let value: serde_json::Value = serde_json::from_reader(File::open(&path)?)?;
    Ok(value["files"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default())
}

/// Makes `dir` ready for a fresh run. Files recorded by an earlier manifest
/// are removed only with `replace`; anything else present is an error.
pub fn prepare_output_dir(dir: &Path, replace: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if replace {
        for name in previous_files(dir)? {
            let p = dir.join(&name);
            if Path::new(&name).components().count() == 1 && p.is_file() {
                std::fs::remove_file(p)?;
            }
        }
        let m = dir.join(MANIFEST_FILE);
        if m.exists() {
            std::fs::remove_file(m)?;
        }
    }
    let leftover: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    if !leftover.is_empty() {
        return Err(Error::Config(format!(
            "output directory {} is not empty{}",
            dir.display(),
            if replace { "" } else { " (use --replace to overwrite a previous run)" }
        )));
    }
    Ok(())
}

/// Executes a pipeline and writes `manifest.json`.
pub fn run(cfg: &RunConfig, pipeline: Pipeline, command: &str) -> Result<RunManifest> {
    let start = Instant::now();
    let jobs = match pipeline {
        Pipeline::Spectrum(outputs) => run_spectrum_job(cfg, outputs),
        Pipeline::Transport => run_transport_job(cfg),
        Pipeline::Classical => run_classical_job(cfg),
    };
    let files: BTreeSet<String> = jobs.iter().flat_map(|j| j.files.iter().cloned()).collect();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config: cfg.clone(),
        jobs,
        files: files.into_iter().collect(),
        total_seconds: start.elapsed().as_secs_f64(),
    };
    let mut w = BufWriter::new(File::create(cfg.output_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(manifest)
}

/// Differences between a manifest's file list and the directory contents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ManifestCheck {
    pub missing: Vec<String>,
    pub unlisted: Vec<String>,
    pub duplicated: Vec<String>,
}

impl ManifestCheck {
    pub fn consistent(&self) -> bool {
        self.missing.is_empty() && self.unlisted.is_empty() && self.duplicated.is_empty()
    }
}

pub fn verify_manifest(dir: &Path) -> Result<ManifestCheck> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!("no {MANIFEST_FILE} in {}", dir.display())));
    }
    let listed = previous_files(dir)?;
    let mut seen = BTreeSet::new();
    let mut check = ManifestCheck::default();
    for name in &listed {
        if !seen.insert(name.clone()) {
            check.duplicated.push(name.clone());
        }
    }
    let mut on_disk = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_FILE {
            on_disk.insert(name);
        }
    }
    check.missing = seen.difference(&on_disk).cloned().collect();
    check.unlisted = on_disk.difference(&seen).cloned().collect();
    Ok(check)
}

/// Worker count: flag, then environment, then configuration.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>, configured: usize) -> Result<usize> {
    if let Some(w) = flag {
        return if w == 0 {
            Err(Error::Config("--workers must be positive".into()))
        } else {
            Ok(w)
        };
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(v) => match v.parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        None => Ok(configured),
    }
}
