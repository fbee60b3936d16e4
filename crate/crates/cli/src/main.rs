use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use qubit_monitor::analysis::ScanResult;
use qubit_monitor::config::{apply_override, parse_table, RunConfig, ScanConfig, MICROGAUSS};
use qubit_monitor::experiment::{aggregate, psd_check, ratio_table, run_cell, run_track, scan_cells, NoiseRatio};
use qubit_monitor::protocol::Protocol;
use rayon::prelude::*;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "qmon", version, about = "Monitor-qubit feedforward simulator")]
struct Cli {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for scans (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Override a config key, e.g. --set alpha=0.1
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one tracking stream per protocol
    Track,
    /// Scan probe time for every noise strength and fit tau_max
    ScanProbe,
    /// Collect tau_max against noise strength from scan-probe output
    ScanNoise,
    /// Check the synthesized noise spectrum against the configured ASD
    PsdCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Track => track(cli),
        Command::ScanProbe => scan_probe(cli),
        Command::ScanNoise => scan_noise(cli),
        Command::PsdCheck => psd(cli),
    }
}

fn load_table(cli: &Cli) -> Result<toml::Table> {
    let mut table = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_table(&text)?
        }
        None => toml::Table::new(),
    };
    for o in &cli.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = cli.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    Ok(table)
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    Ok(RunConfig::from_table(load_table(cli)?)?)
}

fn scan_config(cli: &Cli) -> Result<ScanConfig> {
    if cli.config.is_none() {
        bail!("scan commands need --config with probe_times_s and noise_strengths_uG_sqrtHz");
    }
    Ok(ScanConfig::from_table(load_table(cli)?)?)
}

/// Writes through a temporary sibling and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Merges `section` into `out/summary.json` under `key`.
fn update_summary(out: &Path, key: &str, section: Value) -> Result<()> {
    let path = out.join("summary.json");
    let mut summary = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .filter(Value::is_object)
        .unwrap_or_else(|| json!({}));
    summary[key] = section;
    write_atomic(&path, &to_json(&summary)?)
}

fn asd_dir(asd: f64) -> String {
    format!("{asd}")
}

/// The config's own µG/√Hz value for a scan, free of unit round-off.
fn configured_asd(cfg: &ScanConfig, scan: &ScanResult) -> f64 {
    let asd = scan.noise_asd_1hz / MICROGAUSS;
    cfg.noise_strengths_ug_sqrthz
        .iter()
        .copied()
        .find(|a| (a - asd).abs() <= 1e-9 * a.abs())
        .unwrap_or(asd)
}

fn track(cli: &Cli) -> Result<()> {
    let cfg = run_config(cli)?;
    let runs = run_track(&cfg)?;
    let dir = cli.out.join("track");
    let mut summaries = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let name = if i == 0 {
            "run.csv".to_string()
        } else {
            format!("run_{}.csv", run.result.protocol.name())
        };
        let mut buf = Vec::new();
        run.result.write_csv(&mut buf)?;
        write_atomic(&dir.join(&name), &buf)?;
        let s = &run.summary;
        println!(
            "{:<12} realizations {:>6}  measured F {:.4}  predicted F corrected {:.4} uncorrected {:.4}  -> {}",
            s.protocol.name(),
            s.data_realizations,
            s.measured_fidelity,
            s.mean_predicted_corrected,
            s.mean_predicted_uncorrected,
            dir.join(&name).display()
        );
        summaries.push(json!({ "csv": name, "summary": s }));
    }
    update_summary(&cli.out, "track", json!({ "config": cfg, "runs": summaries }))
}

fn scan_probe(cli: &Cli) -> Result<()> {
    let cfg = scan_config(cli)?;
    let keys = scan_cells(&cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
    eprintln!(
        "scan: {} cells ({} noise strengths x {} probe times x {} repeats)",
        keys.len(),
        cfg.noise_strengths_ug_sqrthz.len(),
        cfg.probe_times_s.len(),
        cfg.base.repeats
    );
    let cells = pool.install(|| {
        keys.par_iter()
            .map(|&k| run_cell(&cfg, k))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let output = aggregate(&cfg, &cells);
    let scan_dir = cli.out.join("scan");
    for scan in &output.scans {
        let dir = scan_dir
            .join(scan.protocol.name())
            .join(asd_dir(configured_asd(&cfg, scan)));
        let mut buf = Vec::new();
        scan.write_points_csv(&mut buf)?;
        write_atomic(&dir.join("points.csv"), &buf)?;
        write_atomic(&dir.join("fit.json"), &to_json(scan)?)?;
    }
    if !output.ratios.is_empty() {
        write_atomic(&scan_dir.join("ratios.csv"), ratios_csv(&output.ratios).as_bytes())?;
    }
    let table = tau_max_table(&output.scans, &output.ratios, &cfg);
    write_atomic(&scan_dir.join("tau_max.csv"), table.as_bytes())?;
    print!("{table}");
    update_summary(
        &cli.out,
        "scan_probe",
        json!({ "config": toml_as_json(&cfg.to_toml_string())?, "ratios": output.ratios, "scans": scan_brief(&cfg, &output.scans) }),
    )
}

fn scan_noise(cli: &Cli) -> Result<()> {
    let cfg = scan_config(cli)?;
    if cfg.noise_strengths_ug_sqrthz.len() < 3 {
        bail!("config key `noise_strengths_uG_sqrtHz`: scan-noise needs at least 3 noise strengths");
    }
    let scan_dir = cli.out.join("scan");
    let mut scans = Vec::new();
    let mut missing = Vec::new();
    for &p in cfg.base.protocol.protocols() {
        for &asd in &cfg.noise_strengths_ug_sqrthz {
            let path = scan_dir.join(p.name()).join(asd_dir(asd)).join("points.csv");
            match read_points(&path) {
                Ok(points) => scans.push(ScanResult::from_points(asd * MICROGAUSS, p, points)),
                Err(_) => missing.push(path),
            }
        }
    }
    let asds: Vec<f64> = cfg.noise_strengths_ug_sqrthz.clone();
    let ratios = ratio_table(&scans, &asds);
    let table = tau_max_table(&scans, &ratios, &cfg);
    write_atomic(&scan_dir.join("tau_max.csv"), table.as_bytes())?;
    print!("{table}");
    update_summary(
        &cli.out,
        "scan_noise",
        json!({ "ratios": ratios, "scans": scan_brief(&cfg, &scans), "missing": missing }),
    )?;
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("warning: missing scan cell {}", m.display());
        }
        bail!("{} scan cells missing; table is partial", missing.len());
    }
    Ok(())
}

fn psd(cli: &Cli) -> Result<()> {
    let cfg = run_config(cli)?;
    let report = psd_check(&cfg)?;
    if let Some(spectrum) = &report.spectrum {
        let mut buf = Vec::new();
        spectrum.write_csv(&mut buf)?;
        write_atomic(&cli.out.join("psd").join("psd.csv"), &buf)?;
    }
    let fmt = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |x| format!("{x:.p$e}"));
    println!(
        "psd-check {}: slope {} (target -2.0 ± 0.1), S(1 Hz) {} G²/Hz (target {:.3e}, ×/÷1.3) - {}",
        if report.passed { "PASS" } else { "FAIL" },
        report.slope.map_or("n/a".to_string(), |s| format!("{s:.3}")),
        fmt(report.level_at_1hz, 3),
        report.target_level_at_1hz,
        report.note
    );
    update_summary(&cli.out, "psd_check", serde_json::to_value(&report)?)?;
    if !report.passed {
        bail!("noise spectrum outside tolerance: {}", report.note);
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<qubit_monitor::analysis::ProbePoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> { Ok(row.get(i).context("short row")?.parse()?) };
        points.push(qubit_monitor::analysis::ProbePoint {
            probe_time: field(0)?,
            fidelity: field(1)?,
            stderr: field(2)?,
        });
    }
    Ok(points)
}

fn ratios_csv(ratios: &[NoiseRatio]) -> String {
    let mut s = String::from("asd_uG_sqrtHz,ratio,ratio_err\n");
    for r in ratios {
        match r.ratio {
            Some(q) => s.push_str(&format!("{},{},{}\n", r.asd_ug_sqrthz, q.value, q.uncertainty)),
            None => s.push_str(&format!("{},,\n", r.asd_ug_sqrthz)),
        }
    }
    s
}

fn tau_max_table(scans: &[ScanResult], ratios: &[NoiseRatio], cfg: &ScanConfig) -> String {
    let both = cfg.base.protocol.protocols().len() == 2;
    let mut s = String::from("asd_uG_sqrtHz,protocol,tau_max_s,tau_max_err_s");
    s.push_str(if both { ",ratio\n" } else { "\n" });
    for &asd in &cfg.noise_strengths_ug_sqrthz {
        let ratio = ratios
            .iter()
            .find(|r| r.asd_ug_sqrthz == asd)
            .and_then(|r| r.ratio)
            .map_or(String::new(), |r| r.value.to_string());
        for &p in cfg.base.protocol.protocols() {
            let Some(scan) = scans
                .iter()
                .find(|x| x.protocol == p && x.noise_asd_1hz == asd * MICROGAUSS)
            else {
                continue;
            };
            // extrapolated crossings are not reported
            let (t, e) = match (scan.tau_max.value, scan.tau_max.extrapolated) {
                (Some(t), false) => (t.to_string(), scan.tau_max.err.map_or(String::new(), |e| e.to_string())),
                _ => (String::new(), String::new()),
            };
            s.push_str(&format!("{asd},{},{t},{e}", p.name()));
            if both {
                s.push(',');
                if p == Protocol::Monitor {
                    s.push_str(&ratio);
                }
            }
            s.push('\n');
        }
    }
    s
}

fn scan_brief(cfg: &ScanConfig, scans: &[ScanResult]) -> Value {
    scans
        .iter()
        .map(|s| {
            json!({
                "protocol": s.protocol,
                "asd_uG_sqrtHz": configured_asd(cfg, s),
                "tau_max": s.tau_max,
                "fit": s.fit,
                "fit_error": s.fit_error,
            })
        })
        .collect()
}

fn toml_as_json(text: &str) -> Result<Value> {
    let table: toml::Table = text.parse()?;
    Ok(serde_json::to_value(table)?)
}
