//! Experiment drivers: single tracking runs and probe-time scans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bin_fidelity, compare_protocols, mean_and_stderr, FidelitySeries, ProbePoint, ProtocolRatio, ScanResult,
};
use crate::config::{RunConfig, ScanConfig, MICROGAUSS};
use crate::error::Result;
use crate::noise::{synthesize_applied_field, synthesize_random_walk, welch_psd, FieldTrace, SpectrumEstimate};
use crate::protocol::{realization_count, run_cycles, run_protocol, Protocol, RunResult};

/// Independent random streams of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise,
    Outcomes(Protocol),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Noise => 0,
            Stream::Outcomes(Protocol::Monitor) => 1,
            Stream::Outcomes(Protocol::Interleaved) => 2,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-independent seed of one (stream, noise, probe, repeat) cell.
pub fn seed_for(master: u64, stream: Stream, noise_idx: usize, probe_idx: usize, repeat: usize) -> u64 {
    [stream.tag(), noise_idx as u64, probe_idx as u64, repeat as u64]
        .into_iter()
        .fold(splitmix64(master), |h, x| splitmix64(h ^ splitmix64(x)))
}

fn rng_for(master: u64, stream: Stream, noise_idx: usize, probe_idx: usize, repeat: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_for(master, stream, noise_idx, probe_idx, repeat))
}

fn field_trace(cfg: &RunConfig, duration: f64, rng: &mut ChaCha8Rng) -> Result<FieldTrace> {
    if cfg.noise_asd_ug_sqrthz == 0.0 {
        let dt = 1.0 / cfg.sample_rate_hz;
        return FieldTrace::zeros(dt, (duration / dt).ceil() as usize + 1);
    }
    synthesize_applied_field(&cfg.noise_spec(), duration, rng)
}

/// Trace length used by [`psd_check`], seconds.
pub const PSD_CHECK_DURATION_S: f64 = 3600.0;
pub const PSD_SLOPE_TOLERANCE: f64 = 0.1;
pub const PSD_LEVEL_FACTOR: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    /// Log-log slope over 0.1–1 Hz; absent for a zero-power trace.
    pub slope: Option<f64>,
    /// Measured `S(f)·f²` near 1 Hz, G²/Hz.
    pub level_at_1hz: Option<f64>,
    pub target_level_at_1hz: f64,
    pub passed: bool,
    pub note: String,
    #[serde(skip)]
    pub spectrum: Option<SpectrumEstimate>,
}

/// Synthesizes a long commanded random walk and checks its Welch spectrum
/// against the configured ASD.
pub fn psd_check(cfg: &RunConfig) -> Result<PsdReport> {
    cfg.validate()?;
    let spec = cfg.noise_spec();
    let target = spec.asd_at_1hz * spec.asd_at_1hz;
    if spec.asd_at_1hz == 0.0 {
        return Ok(PsdReport {
            slope: None,
            level_at_1hz: None,
            target_level_at_1hz: 0.0,
            passed: true,
            note: "zero noise amplitude: nothing to check".into(),
            spectrum: None,
        });
    }
    let mut rng = rng_for(cfg.seed, Stream::Noise, 0, 0, 0);
    let trace = synthesize_random_walk(&spec, PSD_CHECK_DURATION_S, &mut rng)?;
    let segment = ((65.536 * spec.sample_rate_hz).round() as usize).min(trace.len());
    let est = welch_psd(&trace, segment, 0.5)?;
    let slope = est.loglog_fit(0.1, 1.0).map(|(s, _)| s);
    let level = est.mean_f2_weighted(0.9, 1.1);
    let slope_ok = slope.is_some_and(|s| (s + 2.0).abs() <= PSD_SLOPE_TOLERANCE);
    let level_ok = level.is_some_and(|l| l / target <= PSD_LEVEL_FACTOR && target / l <= PSD_LEVEL_FACTOR);
    let note = match (slope_ok, level_ok) {
        (true, true) => "ok".to_string(),
        (false, _) => format!("slope outside -2 ± {PSD_SLOPE_TOLERANCE}"),
        (_, false) => format!("1 Hz level outside ×/÷{PSD_LEVEL_FACTOR} of target"),
    };
    Ok(PsdReport {
        slope,
        level_at_1hz: level,
        target_level_at_1hz: target,
        passed: slope_ok && level_ok,
        note,
        spectrum: Some(est),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub protocol: Protocol,
    pub realizations: usize,
    pub data_realizations: usize,
    pub measured_fidelity: f64,
    pub mean_predicted_corrected: f64,
    pub mean_predicted_uncorrected: f64,
    /// Final estimate minus the mean applied field of the last realization, G.
    pub final_estimate_error: f64,
    pub binned: FidelitySeries,
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub result: RunResult,
    pub summary: TrackSummary,
}

/// One `duration_s` stream per requested protocol, all on the same field trace.
pub fn run_track(cfg: &RunConfig) -> Result<Vec<TrackRun>> {
    cfg.validate()?;
    let timing = cfg.timing();
    let protocols = cfg.protocol.protocols();
    let mut noise_rng = rng_for(cfg.seed, Stream::Noise, 0, 0, 0);
    let trace = field_trace(cfg, cfg.duration_s, &mut noise_rng)?;
    let options = cfg.sim_options();
    protocols
        .iter()
        .map(|&p| {
            let mut rng = rng_for(cfg.seed, Stream::Outcomes(p), 0, 0, 0);
            let result = run_protocol(p, &trace, &timing, cfg.servo(p)?, cfg.duration_s, &options, &mut rng)?;
            let summary = summarize(&result, cfg.bin_size)?;
            Ok(TrackRun { result, summary })
        })
        .collect()
}

fn summarize(result: &RunResult, bin_size: usize) -> Result<TrackSummary> {
    let outcomes = result.data_outcomes();
    let final_estimate_error = result.records.last().map_or(0.0, |r| r.estimate_after - r.b_applied);
    Ok(TrackSummary {
        protocol: result.protocol,
        realizations: result.records.len(),
        data_realizations: outcomes.len(),
        measured_fidelity: result.measured_fidelity(),
        mean_predicted_corrected: result.mean_predicted_corrected(),
        mean_predicted_uncorrected: result.mean_predicted_uncorrected(),
        final_estimate_error,
        binned: bin_fidelity(&outcomes, bin_size)?,
    })
}

/// Address of one scan cell: every requested protocol at one
/// (noise strength, probe time, repeat) on a shared field trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub noise_idx: usize,
    pub probe_idx: usize,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    /// Data realizations per protocol.
    pub realizations: usize,
    /// Measured data fidelity per requested protocol, in request order.
    pub fidelity: Vec<(Protocol, f64)>,
}

/// All cells of a scan in canonical order.
pub fn scan_cells(cfg: &ScanConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for noise_idx in 0..cfg.noise_strengths_ug_sqrthz.len() {
        for probe_idx in 0..cfg.probe_times_s.len() {
            for repeat in 0..cfg.base.repeats as usize {
                keys.push(CellKey {
                    noise_idx,
                    probe_idx,
                    repeat,
                });
            }
        }
    }
    keys
}

/// Runs one `duration_s` repeat. Both protocols get as many data
/// realizations as the monitor protocol fits in `duration_s`.
pub fn run_cell(cfg: &ScanConfig, key: CellKey) -> Result<CellResult> {
    let run = cfg.cell_config(key.noise_idx, key.probe_idx);
    let timing = run.timing();
    let protocols = run.protocol.protocols();
    let cycles = realization_count(run.duration_s, timing.monitor_period());
    let span = protocols
        .iter()
        .map(|&p| cycles as f64 * timing.period(p))
        .fold(0.0, f64::max);
    let mut noise_rng = rng_for(run.seed, Stream::Noise, key.noise_idx, key.probe_idx, key.repeat);
    let trace = field_trace(&run, span.max(1.0 / run.sample_rate_hz), &mut noise_rng)?;
    let options = run.sim_options();
    let mut fidelity = Vec::with_capacity(protocols.len());
    for &p in protocols {
        let mut rng = rng_for(run.seed, Stream::Outcomes(p), key.noise_idx, key.probe_idx, key.repeat);
        let result = run_cycles(p, &trace, &timing, run.servo(p)?, cycles, &options, &mut rng)?;
        fidelity.push((p, result.measured_fidelity()));
    }
    Ok(CellResult {
        key,
        realizations: cycles,
        fidelity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRatio {
    #[serde(rename = "asd_uG_sqrtHz")]
    pub asd_ug_sqrthz: f64,
    pub ratio: Option<ProtocolRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutput {
    pub scans: Vec<ScanResult>,
    pub ratios: Vec<NoiseRatio>,
}

impl ScanOutput {
    pub fn scan(&self, protocol: Protocol, asd_ug_sqrthz: f64) -> Option<&ScanResult> {
        self.scans.iter().find(|s| {
            s.protocol == protocol
                && (s.noise_asd_1hz / MICROGAUSS - asd_ug_sqrthz).abs() < 1e-9 * asd_ug_sqrthz.max(1.0)
        })
    }
}

/// Averages repeats into probe points and fits every (protocol, noise) scan.
pub fn aggregate(cfg: &ScanConfig, cells: &[CellResult]) -> ScanOutput {
    let mut scans = Vec::new();
    for &p in cfg.base.protocol.protocols() {
        for (ni, &asd) in cfg.noise_strengths_ug_sqrthz.iter().enumerate() {
            let points = cfg
                .probe_times_s
                .iter()
                .enumerate()
                .filter_map(|(pi, &tau)| {
                    let values: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.key.noise_idx == ni && c.key.probe_idx == pi)
                        .filter_map(|c| c.fidelity.iter().find(|(q, _)| *q == p).map(|&(_, f)| f))
                        .filter(|f| f.is_finite())
                        .collect();
                    if values.is_empty() {
                        return None;
                    }
                    let (fidelity, stderr) = mean_and_stderr(&values);
                    Some(ProbePoint {
                        probe_time: tau,
                        fidelity,
                        stderr,
                    })
                })
                .collect();
            scans.push(ScanResult::from_points(asd * MICROGAUSS, p, points));
        }
    }
    let ratios = ratio_table(&scans, &cfg.noise_strengths_ug_sqrthz);
    ScanOutput { scans, ratios }
}

/// Monitor/interleaved ratio per noise strength; empty when only one
/// protocol was scanned.
pub fn ratio_table(scans: &[ScanResult], asds_ug_sqrthz: &[f64]) -> Vec<NoiseRatio> {
    let find = |p: Protocol, asd: f64| {
        scans
            .iter()
            .find(|s| s.protocol == p && (s.noise_asd_1hz - asd * MICROGAUSS).abs() <= 1e-12 * asd * MICROGAUSS)
    };
    asds_ug_sqrthz
        .iter()
        .filter_map(|&asd| {
            let m = find(Protocol::Monitor, asd)?;
            let i = find(Protocol::Interleaved, asd)?;
            Some(NoiseRatio {
                asd_ug_sqrthz: asd,
                ratio: compare_protocols(m, i).ok(),
            })
        })
        .collect()
}

/// Sequential convenience wrapper over [`scan_cells`], [`run_cell`] and [`aggregate`].
pub fn run_scan(cfg: &ScanConfig) -> Result<ScanOutput> {
    cfg.validate()?;
    let cells = scan_cells(cfg)
        .into_iter()
        .map(|k| run_cell(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, &cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProtocolChoice;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for s in [
            Stream::Noise,
            Stream::Outcomes(Protocol::Monitor),
            Stream::Outcomes(Protocol::Interleaved),
        ] {
            for n in 0..4 {
                for p in 0..4 {
                    for r in 0..4 {
                        assert!(seen.insert(seed_for(7, s, n, p, r)));
                    }
                }
            }
        }
        assert_eq!(seed_for(7, Stream::Noise, 1, 2, 3), seed_for(7, Stream::Noise, 1, 2, 3));
        assert_ne!(seed_for(7, Stream::Noise, 1, 2, 3), seed_for(8, Stream::Noise, 1, 2, 3));
    }

    #[test]
    fn psd_check_default_passes() {
        let report = psd_check(&RunConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
        let zero = psd_check(&RunConfig {
            noise_asd_ug_sqrthz: 0.0,
            ..RunConfig::default()
        })
        .unwrap();
        assert!(zero.passed && zero.slope.is_none());
    }

    #[test]
    fn zero_noise_track_is_perfect() {
        let cfg = RunConfig {
            noise_asd_ug_sqrthz: 0.0,
            spam_fidelity: 1.0,
            duration_s: 2.0,
            data_probe_s: 1e-3,
            ..RunConfig::default()
        };
        for run in run_track(&cfg).unwrap() {
            assert_eq!(run.summary.mean_predicted_uncorrected, 1.0);
            assert!(run.summary.mean_predicted_corrected > 0.9);
        }
    }

    #[test]
    fn cells_match_realization_counts() {
        let cfg = ScanConfig {
            base: RunConfig {
                duration_s: 1.0,
                repeats: 2,
                ..RunConfig::default()
            },
            probe_times_s: vec![1e-3, 5e-3],
            noise_strengths_ug_sqrthz: vec![5.0],
        };
        let keys = scan_cells(&cfg);
        assert_eq!(keys.len(), 4);
        let cell = run_cell(&cfg, keys[3]).unwrap();
        let timing = cfg.cell_config(0, 1).timing();
        assert_eq!(cell.realizations, realization_count(1.0, timing.monitor_period()));
        assert_eq!(cell.fidelity.len(), 2);
        assert_eq!(run_cell(&cfg, keys[3]).unwrap(), cell);
    }

    #[test]
    fn single_protocol_has_no_ratios() {
        let cfg = ScanConfig {
            base: RunConfig {
                protocol: ProtocolChoice::Monitor,
                duration_s: 0.5,
                repeats: 2,
                ..RunConfig::default()
            },
            probe_times_s: vec![1e-3, 2e-3, 4e-3, 8e-3],
            noise_strengths_ug_sqrthz: vec![5.0],
        };
        let out = run_scan(&cfg).unwrap();
        assert_eq!(out.scans.len(), 1);
        assert!(out.ratios.is_empty());
        assert_eq!(out.scans[0].points.len(), 4);
    }
}
