//! Browser bindings: each export takes plain numbers and returns a JSON string.

use qubit_monitor::analysis::ScanResult;
use qubit_monitor::config::{ProtocolChoice, RunConfig, ScanConfig, MICROGAUSS};
use qubit_monitor::experiment::{run_scan, run_track};
use qubit_monitor::noise::{synthesize_applied_field, welch_psd};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_PLOT_POINTS: usize = 1500;

fn stride(len: usize) -> usize {
    len.div_ceil(MAX_PLOT_POINTS).max(1)
}

/// Tracks drifting field with the monitor protocol and returns field,
/// estimate and running fidelity for plotting.
pub fn track_json(asd_ug_sqrthz: f64, duration_s: f64, data_probe_s: f64, seed: u64) -> Result<String, String> {
    let cfg = RunConfig {
        protocol: ProtocolChoice::Monitor,
        noise_asd_ug_sqrthz: asd_ug_sqrthz,
        data_probe_s,
        duration_s,
        seed,
        ..RunConfig::default()
    };
    let runs = run_track(&cfg).map_err(|e| e.to_string())?;
    let run = &runs[0];
    let step = stride(run.result.records.len());
    let recs: Vec<_> = run.result.records.iter().step_by(step).collect();
    Ok(json!({
        "t_s": recs.iter().map(|r| r.t_start).collect::<Vec<_>>(),
        "b_applied_gauss": recs.iter().map(|r| r.b_applied).collect::<Vec<_>>(),
        "b_estimate_gauss": recs.iter().map(|r| r.estimate_after).collect::<Vec<_>>(),
        "f_pred_corr": recs.iter().map(|r| r.predicted_fidelity_corrected).collect::<Vec<_>>(),
        "f_pred_uncorr": recs.iter().map(|r| r.predicted_fidelity_uncorrected).collect::<Vec<_>>(),
        "summary": run.summary,
    })
    .to_string())
}

/// Welch spectrum of a synthesized applied-field trace, log-decimated.
pub fn psd_json(asd_ug_sqrthz: f64, duration_s: f64, seed: u64) -> Result<String, String> {
    let cfg = RunConfig {
        noise_asd_ug_sqrthz: asd_ug_sqrthz,
        ..RunConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = synthesize_applied_field(&cfg.noise_spec(), duration_s, &mut rng).map_err(|e| e.to_string())?;
    let seg = trace.len().min(16_384);
    let est = welch_psd(&trace, seg, 0.5).map_err(|e| e.to_string())?;
    let mut f = Vec::new();
    let mut s = Vec::new();
    let mut next = 0.0;
    for (&fi, &pi) in est.frequencies.iter().zip(&est.psd).skip(1) {
        if fi >= next {
            f.push(fi);
            s.push(pi);
            next = fi * 1.02;
        }
    }
    Ok(json!({
        "f_hz": f,
        "psd_gauss2_per_hz": s,
        "target_asd_gauss": asd_ug_sqrthz * MICROGAUSS,
        "cutoff_hz": cfg.cutoff_hz,
        "slope_0p1_1hz": est.loglog_fit(0.1, 1.0).map(|x| x.0),
    })
    .to_string())
}

/// Probe-time scan of both protocols at one noise strength.
pub fn probe_scan_json(asd_ug_sqrthz: f64, duration_s: f64, repeats: u32, seed: u64) -> Result<String, String> {
    let n = 20;
    let probe_times_s = (0..n)
        .map(|i| 5e-6 * (60e-3f64 / 5e-6).powf(i as f64 / (n - 1) as f64))
        .collect();
    let cfg = ScanConfig {
        base: RunConfig {
            duration_s,
            repeats,
            seed,
            ..RunConfig::default()
        },
        probe_times_s,
        noise_strengths_ug_sqrthz: vec![asd_ug_sqrthz],
    };
    let out = run_scan(&cfg).map_err(|e| e.to_string())?;
    let scan = |s: &ScanResult| -> Value {
        let curve: Vec<[f64; 2]> = s
            .fit
            .iter()
            .flat_map(|f| {
                (0..120).map(move |i| {
                    let t = 5e-6 * (60e-3f64 / 5e-6).powf(i as f64 / 119.0);
                    [t, f.eval(t)]
                })
            })
            .collect();
        json!({
            "protocol": s.protocol,
            "points": s.points,
            "fit_curve": curve,
            "tau_max": s.tau_max,
        })
    };
    Ok(json!({
        "scans": out.scans.iter().map(scan).collect::<Vec<_>>(),
        "ratio": out.ratios.first().and_then(|r| r.ratio),
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn track(asd_ug_sqrthz: f64, duration_s: f64, data_probe_s: f64, seed: u32) -> Result<String, JsValue> {
    js(track_json(asd_ug_sqrthz, duration_s, data_probe_s, u64::from(seed)))
}

#[wasm_bindgen]
pub fn noise_psd(asd_ug_sqrthz: f64, duration_s: f64, seed: u32) -> Result<String, JsValue> {
    js(psd_json(asd_ug_sqrthz, duration_s, u64::from(seed)))
}

#[wasm_bindgen]
pub fn probe_scan(asd_ug_sqrthz: f64, duration_s: f64, repeats: u32, seed: u32) -> Result<String, JsValue> {
    js(probe_scan_json(asd_ug_sqrthz, duration_s, repeats, u64::from(seed)))
}
