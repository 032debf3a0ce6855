//! `run`, `verify` and `sweep`.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};

use wbc_core::config::EpisodeConfig;
use wbc_core::episode::{run_episode_with, EpisodeOutcome, EpisodeSummary};
use wbc_core::verify;

use crate::logs::{LogWriter, DIAGNOSTICS_FILE, TRAJECTORY_FILE};
use crate::plot::{write_plots, PLOT_FILES};

/// Overrides the output directory of `run` and `sweep`.
pub const OUTPUT_DIR_ENV: &str = "WBC_OUTPUT_DIR";

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_FELL: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

pub fn exit_code(outcome: &EpisodeOutcome) -> u8 {
    match outcome {
        EpisodeOutcome::Completed => EXIT_OK,
        EpisodeOutcome::Fell { .. } => EXIT_FELL,
        EpisodeOutcome::SolverFailure { .. } | EpisodeOutcome::SimulationFailure { .. } => EXIT_SOLVER,
    }
}

fn output_dir(cfg: &EpisodeConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.output_dir.clone())
}

/// Every file `run` writes, in a fixed order.
pub fn output_files() -> Vec<&'static str> {
    let mut v = vec![TRAJECTORY_FILE, DIAGNOSTICS_FILE];
    v.extend(PLOT_FILES);
    v
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: EpisodeSummary,
    pub dir: PathBuf,
    pub control_median_us: f64,
    pub control_p99_us: f64,
    pub max_com_error: f64,
}

/// Runs one episode, streaming both logs to `dir`, then draws the plots from them.
pub fn run_to(cfg: &EpisodeConfig, dir: &Path) -> Result<RunReport> {
    let mut log = LogWriter::create(dir, &cfg.model)?;
    let mut write_error = None;
    let mut times = Vec::new();
    let mut max_com_error: f64 = 0.0;
    let summary = run_episode_with(cfg, |s| {
        times.push(s.control_time_us);
        max_com_error = max_com_error.max((s.com - s.com_ref).amax());
        if write_error.is_none() {
            write_error = log.write(s).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    log.finish()?;
    write_plots(dir)?;
    times.sort_by(f64::total_cmp);
    let pick = |p: f64| {
        if times.is_empty() {
            f64::NAN
        } else {
            times[((times.len() - 1) as f64 * p).round() as usize]
        }
    };
    Ok(RunReport {
        summary,
        dir: dir.to_path_buf(),
        control_median_us: pick(0.5),
        control_p99_us: pick(0.99),
        max_com_error,
    })
}

fn describe(outcome: &EpisodeOutcome) -> String {
    match outcome {
        EpisodeOutcome::Completed => "completed".into(),
        EpisodeOutcome::Fell { t, .. } => format!("fell at t = {t:.3} s"),
        EpisodeOutcome::SolverFailure { t, message, .. } => format!("solver failure at t = {t:.3} s: {message}"),
        EpisodeOutcome::SimulationFailure { t, message, .. } => format!("simulation failure at t = {t:.3} s: {message}"),
    }
}

fn print_warnings(cfg: &EpisodeConfig) {
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn run(config: &Path) -> Result<u8> {
    let cfg = EpisodeConfig::load(config)?;
    print_warnings(&cfg);
    let dir = output_dir(&cfg);
    let r = run_to(&cfg, &dir)?;
    let s = &r.summary;
    println!("episode {}: {} strides, {} steps, {:.3} s simulated", describe(&s.outcome), s.strides, s.steps, s.final_time);
    println!(
        "control step median {:.0} us, p99 {:.0} us; max |CoM - ref| {:.2e} m",
        r.control_median_us, r.control_p99_us, r.max_com_error
    );
    println!("wrote {} files to {}", output_files().len(), dir.display());
    Ok(exit_code(&s.outcome))
}

pub fn verify(seed: u64) -> Result<u8> {
    println!("verify (seed {seed})");
    let reports = verify::run_all(seed);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{}/{} suites pass", reports.len() - failed, reports.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CONFIG })
}

/// `key=v1,v2,...`
pub fn parse_param(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec.split_once('=').with_context(|| format!("expected key=v1,v2,... in `{spec}`"))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        bail!("expected key=v1,v2,... in `{spec}`");
    }
    Ok((key.trim().to_string(), values))
}

/// Cartesian product of the parameter lists.
pub fn combinations(params: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    params.iter().fold(vec![Vec::new()], |acc, (key, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect()
    })
}

fn slug(combo: &[(String, String)]) -> String {
    combo
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '_' })
        .collect()
}

/// One episode per parameter combination, each in its own subdirectory and
/// on its own thread.
pub fn sweep(config: &Path, specs: &[String]) -> Result<u8> {
    let text = std::fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let params = specs.iter().map(|s| parse_param(s)).collect::<Result<Vec<_>>>()?;
    if params.is_empty() {
        bail!("sweep needs at least one --param");
    }
    let mut configs = Vec::new();
    for combo in combinations(&params) {
        let pairs: Vec<(&str, &str)> = combo.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let cfg = EpisodeConfig::with_overrides(&text, &pairs, base)?;
        print_warnings(&cfg);
        configs.push((combo, cfg));
    }
    let root = configs.first().map(|(_, c)| output_dir(c)).unwrap_or_default();
    let results = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep queue");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some((combo, cfg)) = configs.get(i) else { break };
                let dir = root.join(slug(combo));
                let r = run_to(cfg, &dir);
                results.lock().expect("sweep results").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("sweep results");
    results.sort_by_key(|(i, _)| *i);

    let summary_path = root.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).with_context(|| format!("cannot write {}", summary_path.display()))?;
    let keys: Vec<&str> = params.iter().map(|(k, _)| k.as_str()).collect();
    let mut header: Vec<&str> = keys.clone();
    header.extend(["outcome", "exit_code", "strides", "final_time", "max_com_error", "control_median_us", "control_p99_us", "dir"]);
    w.write_record(&header)?;
    let mut code = EXIT_OK;
    for (i, r) in results {
        let (combo, _) = &configs[i];
        let mut row: Vec<String> = combo.iter().map(|(_, v)| v.clone()).collect();
        match r {
            Ok(r) => {
                let c = exit_code(&r.summary.outcome);
                code = code.max(c);
                println!("{}: {}", slug(combo), describe(&r.summary.outcome));
                row.extend([
                    describe(&r.summary.outcome),
                    c.to_string(),
                    r.summary.strides.to_string(),
                    format!("{}", r.summary.final_time),
                    format!("{:e}", r.max_com_error),
                    format!("{:.1}", r.control_median_us),
                    format!("{:.1}", r.control_p99_us),
                    r.dir.display().to_string(),
                ]);
            }
            Err(e) => {
                code = code.max(EXIT_SOLVER);
                println!("{}: error: {e:#}", slug(combo));
                row.extend([format!("error: {e:#}"), EXIT_SOLVER.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()]);
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("wrote {}", summary_path.display());
    Ok(code)
}
