//! Realization-by-realization timelines of the two recalibration protocols.
//!
//! Monitor protocol, one realization of period `prep + τ_m + spam`:
//!
//! ```text
//! | prep | monitor Ramsey (τ_m = τ_d + spam)     | monitor SPAM |
//! |      | data Ramsey (τ_d)       | data SPAM   |              |
//! ```
//!
//! Interleaved protocol, one cycle of period `2·prep + τ_m + τ_d + 2·spam`:
//!
//! ```text
//! | prep | calibration Ramsey (τ_m) | SPAM | prep | data Ramsey (τ_d) | SPAM |
//! ```
//!
//! In the monitor protocol the data qubit of realization `i` runs with the
//! estimate produced by realization `i − 1`; the monitor outcome of `i` only
//! affects realization `i + 1`. In the interleaved protocol each data
//! realization uses the estimate from the calibration right before it.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::FieldTrace;
use crate::physics::{
    accumulated_phase, monitor_outcome_probability, sample_outcome, spam_corrupt, EncodingLabel, FidelityConvention,
    QubitEncoding,
};
use crate::servo::ServoState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Per-realization preparation dead time, seconds.
    pub prep_s: f64,
    /// State preparation and measurement of one qubit, seconds.
    pub spam_s: f64,
    /// Data-qubit Ramsey time `τ_d`, seconds.
    pub data_probe_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            prep_s: 100e-6,
            spam_s: 1.1e-3,
            data_probe_s: 14.5e-3,
        }
    }
}

impl TimingConfig {
    pub fn new(prep_s: f64, spam_s: f64, data_probe_s: f64) -> Result<Self> {
        let t = Self {
            prep_s,
            spam_s,
            data_probe_s,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("prep_s", self.prep_s),
            ("spam_s", self.spam_s),
            ("data_probe_s", self.data_probe_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(what, v, "(0, inf) s"));
            }
        }
        Ok(())
    }

    /// The monitor probe spans the data probe and the data qubit's SPAM.
    pub fn monitor_probe_s(&self) -> f64 {
        self.data_probe_s + self.spam_s
    }

    pub fn monitor_period(&self) -> f64 {
        self.prep_s + self.monitor_probe_s() + self.spam_s
    }

    /// Calibration plus data realization.
    pub fn interleaved_period(&self) -> f64 {
        2.0 * self.prep_s + self.monitor_probe_s() + self.data_probe_s + 2.0 * self.spam_s
    }

    pub fn period(&self, protocol: Protocol) -> f64 {
        match protocol {
            Protocol::Monitor => self.monitor_period(),
            Protocol::Interleaved => self.interleaved_period(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Dedicated monitor ion probing in parallel with the data ion.
    Monitor,
    /// One ion alternating calibration and data realizations.
    Interleaved,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Monitor, Protocol::Interleaved];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Monitor => "monitor",
            Protocol::Interleaved => "interleaved",
        }
    }
}

/// How the sensing qubit's readout is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorReadout {
    /// Single-shot projective measurement at the mid-fringe probability.
    #[default]
    Projective,
    /// Zero projection noise: outcome is 1 iff the sensed phase is positive.
    Noiseless,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub convention: FidelityConvention,
    /// Readout fidelity of both qubits (symmetric flip channel).
    pub spam_fidelity: f64,
    /// Apply readout flips to the sensing qubit as well as the data qubit.
    pub monitor_spam: bool,
    pub readout: MonitorReadout,
    /// Qubit used for calibration in the interleaved protocol.
    pub calibration_encoding: EncodingLabel,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            convention: FidelityConvention::Paper,
            spam_fidelity: 0.99,
            monitor_spam: true,
            readout: MonitorReadout::Projective,
            calibration_encoding: EncodingLabel::MonitorM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationKind {
    /// Monitor and data probed together.
    Parallel,
    /// Interleaved calibration (servo update, no data).
    Calibration,
    /// Interleaved data realization (no servo update).
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub kind: RealizationKind,
    pub t_start: f64,
    pub t_end: f64,
    /// `∫ΔB dt` over the sensing window, G·s.
    pub applied_integral_monitor: Option<f64>,
    /// `∫ΔB dt` over the data window, G·s.
    pub applied_integral_data: Option<f64>,
    /// Mean applied field over the data window, or the sensing window for
    /// calibration realizations.
    pub b_applied: f64,
    pub estimate_before: f64,
    pub estimate_after: f64,
    pub monitor_outcome: Option<bool>,
    pub data_outcome: Option<bool>,
    pub phase_corrected: Option<f64>,
    pub phase_uncorrected: Option<f64>,
    pub predicted_fidelity_corrected: Option<f64>,
    pub predicted_fidelity_uncorrected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub protocol: Protocol,
    pub timing: TimingConfig,
    pub options: SimOptions,
    pub servo_init: ServoState,
    pub records: Vec<RealizationRecord>,
    pub wall_time_simulated: f64,
}

impl RunResult {
    pub fn data_records(&self) -> impl Iterator<Item = &RealizationRecord> {
        self.records.iter().filter(|r| r.data_outcome.is_some())
    }

    pub fn data_outcomes(&self) -> Vec<bool> {
        self.data_records().filter_map(|r| r.data_outcome).collect()
    }

    /// Fraction of data realizations that returned the intended state.
    pub fn measured_fidelity(&self) -> f64 {
        let outcomes = self.data_outcomes();
        if outcomes.is_empty() {
            return f64::NAN;
        }
        outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64
    }

    pub fn mean_predicted_corrected(&self) -> f64 {
        mean(self.records.iter().filter_map(|r| r.predicted_fidelity_corrected))
    }

    pub fn mean_predicted_uncorrected(&self) -> f64 {
        mean(self.records.iter().filter_map(|r| r.predicted_fidelity_uncorrected))
    }

    pub fn final_estimate(&self) -> f64 {
        self.records
            .last()
            .map_or(self.servo_init.estimate, |r| r.estimate_after)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "i",
            "t_start_s",
            "t_end_s",
            "b_applied_gauss",
            "b_estimate_gauss",
            "monitor_outcome",
            "data_outcome",
            "f_pred_corr",
            "f_pred_uncorr",
        ])?;
        let bit = |o: Option<bool>| o.map_or(String::new(), |b| u8::from(b).to_string());
        let num = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.t_start.to_string(),
                r.t_end.to_string(),
                r.b_applied.to_string(),
                r.estimate_after.to_string(),
                bit(r.monitor_outcome),
                bit(r.data_outcome),
                num(r.predicted_fidelity_corrected),
                num(r.predicted_fidelity_uncorrected),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Fidelity the data qubit would have had with no tracking at all.
pub fn uncorrected_reference(records: &[RealizationRecord], convention: FidelityConvention) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            r.applied_integral_data.map(|i| {
                let phase = accumulated_phase(&QubitEncoding::DATA_G, i).expect("finite integral");
                convention.fidelity(phase)
            })
        })
        .collect()
}

/// Number of whole periods that fit in `duration`.
pub fn realization_count(duration: f64, period: f64) -> usize {
    (duration / period + 1e-9).floor() as usize
}

pub fn run_monitor_protocol<R: Rng + ?Sized>(
    noise: &FieldTrace,
    timing: &TimingConfig,
    servo_init: ServoState,
    duration: f64,
    options: &SimOptions,
    rng: &mut R,
) -> Result<RunResult> {
    run_protocol(Protocol::Monitor, noise, timing, servo_init, duration, options, rng)
}

pub fn run_interleaved_protocol<R: Rng + ?Sized>(
    noise: &FieldTrace,
    timing: &TimingConfig,
    servo_init: ServoState,
    duration: f64,
    options: &SimOptions,
    rng: &mut R,
) -> Result<RunResult> {
    run_protocol(Protocol::Interleaved, noise, timing, servo_init, duration, options, rng)
}

/// Runs `⌊duration / period⌋` periods of `protocol`.
pub fn run_protocol<R: Rng + ?Sized>(
    protocol: Protocol,
    noise: &FieldTrace,
    timing: &TimingConfig,
    servo_init: ServoState,
    duration: f64,
    options: &SimOptions,
    rng: &mut R,
) -> Result<RunResult> {
    if !(duration > 0.0) {
        return Err(Error::domain("duration", duration, "(0, inf) s"));
    }
    let cycles = realization_count(duration, timing.period(protocol));
    run_cycles(protocol, noise, timing, servo_init, cycles, options, rng)
}

/// Runs exactly `cycles` periods of `protocol`.
pub fn run_cycles<R: Rng + ?Sized>(
    protocol: Protocol,
    noise: &FieldTrace,
    timing: &TimingConfig,
    servo_init: ServoState,
    cycles: usize,
    options: &SimOptions,
    rng: &mut R,
) -> Result<RunResult> {
    timing.validate()?;
    if !(0.5..=1.0).contains(&options.spam_fidelity) {
        return Err(Error::domain("spam_fidelity", options.spam_fidelity, "[0.5, 1]"));
    }
    let period = timing.period(protocol);
    let span = cycles as f64 * period;
    if noise.t0() > 0.0 || noise.t_end() < span - 1e-9 * noise.dt() {
        return Err(Error::OutOfRange {
            start: 0.0,
            end: span,
            lo: noise.t0(),
            hi: noise.t_end(),
        });
    }
    let mut sim = Simulator {
        noise,
        timing,
        options,
        servo: servo_init,
        rng,
        records: Vec::with_capacity(cycles * 2),
    };
    for c in 0..cycles {
        let t = c as f64 * period;
        match protocol {
            Protocol::Monitor => sim.parallel(t)?,
            Protocol::Interleaved => {
                let data_start = sim.calibration(t)?;
                sim.data_only(data_start)?;
            }
        }
    }
    Ok(RunResult {
        protocol,
        timing: *timing,
        options: *options,
        servo_init,
        records: sim.records,
        wall_time_simulated: span,
    })
}

struct Simulator<'a, R: ?Sized> {
    noise: &'a FieldTrace,
    timing: &'a TimingConfig,
    options: &'a SimOptions,
    servo: ServoState,
    rng: &'a mut R,
    records: Vec<RealizationRecord>,
}

struct DataProbe {
    integral: f64,
    phase: f64,
    phase_uncorrected: f64,
    fidelity: f64,
    fidelity_uncorrected: f64,
    outcome: bool,
}

impl<R: Rng + ?Sized> Simulator<'_, R> {
    /// Sensing Ramsey over `[start, start + τ_m]` against the estimate in force.
    fn sense(&mut self, encoding: &QubitEncoding, start: f64) -> Result<(f64, bool)> {
        let tau = self.timing.monitor_probe_s();
        let integral = self.noise.integral(start, start + tau)?;
        let phase = accumulated_phase(encoding, integral - self.servo.estimate * tau)?;
        let raw = match self.options.readout {
            MonitorReadout::Projective => sample_outcome(monitor_outcome_probability(phase), self.rng)?,
            MonitorReadout::Noiseless => phase.0 > 0.0,
        };
        let outcome = if self.options.monitor_spam {
            spam_corrupt(raw, self.options.spam_fidelity, self.rng)?
        } else {
            raw
        };
        Ok((integral, outcome))
    }

    fn probe_data(&mut self, start: f64) -> Result<DataProbe> {
        let tau = self.timing.data_probe_s;
        let integral = self.noise.integral(start, start + tau)?;
        let data = QubitEncoding::DATA_G;
        let phase = accumulated_phase(&data, integral - self.servo.estimate * tau)?;
        let phase_uncorrected = accumulated_phase(&data, integral)?;
        let fidelity = self.options.convention.fidelity(phase);
        let raw = sample_outcome(fidelity, self.rng)?;
        let outcome = spam_corrupt(raw, self.options.spam_fidelity, self.rng)?;
        Ok(DataProbe {
            integral,
            phase: phase.0,
            phase_uncorrected: phase_uncorrected.0,
            fidelity,
            fidelity_uncorrected: self.options.convention.fidelity(phase_uncorrected),
            outcome,
        })
    }

    fn parallel(&mut self, t: f64) -> Result<()> {
        let start = t + self.timing.prep_s;
        let before = self.servo.estimate;
        let (monitor_integral, monitor_outcome) = self.sense(&QubitEncoding::MONITOR_M, start)?;
        // data runs on the estimate from the previous realization
        let data = self.probe_data(start)?;
        self.servo = self.servo.update(monitor_outcome);
        self.records.push(RealizationRecord {
            index: self.records.len(),
            kind: RealizationKind::Parallel,
            t_start: t,
            t_end: t + self.timing.monitor_period(),
            applied_integral_monitor: Some(monitor_integral),
            applied_integral_data: Some(data.integral),
            b_applied: data.integral / self.timing.data_probe_s,
            estimate_before: before,
            estimate_after: self.servo.estimate,
            monitor_outcome: Some(monitor_outcome),
            data_outcome: Some(data.outcome),
            phase_corrected: Some(data.phase),
            phase_uncorrected: Some(data.phase_uncorrected),
            predicted_fidelity_corrected: Some(data.fidelity),
            predicted_fidelity_uncorrected: Some(data.fidelity_uncorrected),
        });
        Ok(())
    }

    /// Returns the end time of the calibration realization.
    fn calibration(&mut self, t: f64) -> Result<f64> {
        let start = t + self.timing.prep_s;
        let before = self.servo.estimate;
        let encoding = QubitEncoding::for_label(self.options.calibration_encoding);
        let (integral, outcome) = self.sense(&encoding, start)?;
        self.servo = self.servo.update(outcome);
        let tau = self.timing.monitor_probe_s();
        let t_end = start + tau + self.timing.spam_s;
        self.records.push(RealizationRecord {
            index: self.records.len(),
            kind: RealizationKind::Calibration,
            t_start: t,
            t_end,
            applied_integral_monitor: Some(integral),
            applied_integral_data: None,
            b_applied: integral / tau,
            estimate_before: before,
            estimate_after: self.servo.estimate,
            monitor_outcome: Some(outcome),
            data_outcome: None,
            phase_corrected: None,
            phase_uncorrected: None,
            predicted_fidelity_corrected: None,
            predicted_fidelity_uncorrected: None,
        });
        Ok(t_end)
    }

    fn data_only(&mut self, t: f64) -> Result<()> {
        let start = t + self.timing.prep_s;
        let data = self.probe_data(start)?;
        let est = self.servo.estimate;
        self.records.push(RealizationRecord {
            index: self.records.len(),
            kind: RealizationKind::Data,
            t_start: t,
            t_end: start + self.timing.data_probe_s + self.timing.spam_s,
            applied_integral_monitor: None,
            applied_integral_data: Some(data.integral),
            b_applied: data.integral / self.timing.data_probe_s,
            estimate_before: est,
            estimate_after: est,
            monitor_outcome: None,
            data_outcome: Some(data.outcome),
            phase_corrected: Some(data.phase),
            phase_uncorrected: Some(data.phase_uncorrected),
            predicted_fidelity_corrected: Some(data.fidelity),
            predicted_fidelity_uncorrected: Some(data.fidelity_uncorrected),
        });
        Ok(())
    }
}
