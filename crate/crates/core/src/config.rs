//! Flat TOML run and scan configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::physics::{EncodingLabel, FidelityConvention, QubitEncoding};
use crate::protocol::{Protocol, SimOptions, TimingConfig};
use crate::servo::{ServoState, StepReference};

/// 1 µG/√Hz in G/√Hz.
pub const MICROGAUSS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolChoice {
    Monitor,
    Interleaved,
    Both,
}

impl ProtocolChoice {
    pub fn protocols(self) -> &'static [Protocol] {
        match self {
            ProtocolChoice::Monitor => &[Protocol::Monitor],
            ProtocolChoice::Interleaved => &[Protocol::Interleaved],
            ProtocolChoice::Both => &Protocol::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServoStep {
    Bohr,
    MonitorFringe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolChoice,
    #[serde(rename = "noise_asd_uG_sqrtHz")]
    pub noise_asd_ug_sqrthz: f64,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub data_probe_s: f64,
    pub prep_s: f64,
    pub spam_s: f64,
    pub alpha: f64,
    pub servo_step: ServoStep,
    pub spam_fidelity: f64,
    pub monitor_spam: bool,
    pub fidelity_convention: FidelityConvention,
    pub calibration_encoding: EncodingLabel,
    pub b_static_gauss: f64,
    pub duration_s: f64,
    pub repeats: u32,
    pub seed: u64,
    pub bin_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let timing = TimingConfig::default();
        let noise = NoiseSpec::default();
        Self {
            protocol: ProtocolChoice::Both,
            noise_asd_ug_sqrthz: noise.asd_at_1hz / MICROGAUSS,
            cutoff_hz: noise.cutoff_hz,
            sample_rate_hz: noise.sample_rate_hz,
            data_probe_s: timing.data_probe_s,
            prep_s: timing.prep_s,
            spam_s: timing.spam_s,
            alpha: 0.05,
            servo_step: ServoStep::MonitorFringe,
            spam_fidelity: 0.99,
            monitor_spam: true,
            fidelity_convention: FidelityConvention::Paper,
            calibration_encoding: EncodingLabel::MonitorM,
            b_static_gauss: 4.0,
            duration_s: 60.0,
            repeats: 10,
            seed: 1,
            bin_size: 100,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "protocol",
    "noise_asd_uG_sqrtHz",
    "cutoff_hz",
    "sample_rate_hz",
    "data_probe_s",
    "prep_s",
    "spam_s",
    "alpha",
    "servo_step",
    "spam_fidelity",
    "monitor_spam",
    "fidelity_convention",
    "calibration_encoding",
    "b_static_gauss",
    "duration_s",
    "repeats",
    "seed",
    "bin_size",
];

const SCAN_KEYS: &[&str] = &["probe_times_s", "noise_strengths_uG_sqrtHz"];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        check_keys(&table, RUN_KEYS)?;
        let cfg: RunConfig = deserialize_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("cutoff_hz", self.cutoff_hz)?;
        positive("sample_rate_hz", self.sample_rate_hz)?;
        positive("data_probe_s", self.data_probe_s)?;
        positive("prep_s", self.prep_s)?;
        positive("spam_s", self.spam_s)?;
        positive("alpha", self.alpha)?;
        positive("duration_s", self.duration_s)?;
        if !(self.noise_asd_ug_sqrthz >= 0.0 && self.noise_asd_ug_sqrthz.is_finite()) {
            return Err(Error::config("noise_asd_uG_sqrtHz", "must be finite and >= 0"));
        }
        if self.cutoff_hz >= self.sample_rate_hz / 2.0 {
            return Err(Error::config(
                "cutoff_hz",
                format!("must be below the Nyquist frequency {} Hz", self.sample_rate_hz / 2.0),
            ));
        }
        if !(0.5..=1.0).contains(&self.spam_fidelity) {
            return Err(Error::config("spam_fidelity", "must lie in [0.5, 1]"));
        }
        if !self.b_static_gauss.is_finite() {
            return Err(Error::config("b_static_gauss", "must be finite"));
        }
        if self.repeats < 1 {
            return Err(Error::config("repeats", "must be >= 1"));
        }
        if self.bin_size < 2 {
            return Err(Error::config("bin_size", "must be >= 2"));
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            asd_at_1hz: self.noise_asd_ug_sqrthz * MICROGAUSS,
            cutoff_hz: self.cutoff_hz,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn timing(&self) -> TimingConfig {
        TimingConfig {
            prep_s: self.prep_s,
            spam_s: self.spam_s,
            data_probe_s: self.data_probe_s,
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            convention: self.fidelity_convention,
            spam_fidelity: self.spam_fidelity,
            monitor_spam: self.monitor_spam,
            calibration_encoding: self.calibration_encoding,
            ..SimOptions::default()
        }
    }

    /// Initial servo for `protocol`, stepping relative to the qubit it senses with.
    pub fn servo(&self, protocol: Protocol) -> Result<ServoState> {
        let sensing = match protocol {
            Protocol::Monitor => QubitEncoding::MONITOR_M,
            Protocol::Interleaved => QubitEncoding::for_label(self.calibration_encoding),
        };
        let reference = match self.servo_step {
            ServoStep::Bohr => StepReference::BohrMagneton,
            ServoStep::MonitorFringe => StepReference::Fringe,
        };
        ServoState::with_reference(self.alpha, self.timing().monitor_probe_s(), reference, &sensing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub base: RunConfig,
    pub probe_times_s: Vec<f64>,
    pub noise_strengths_ug_sqrthz: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScanAxes {
    probe_times_s: Vec<f64>,
    #[serde(rename = "noise_strengths_uG_sqrtHz")]
    noise_strengths_ug_sqrthz: Vec<f64>,
}

impl ScanConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let all: Vec<&str> = RUN_KEYS.iter().chain(SCAN_KEYS).copied().collect();
        check_keys(&table, &all)?;
        let mut axes = toml::Table::new();
        for key in SCAN_KEYS {
            match table.remove(*key) {
                Some(v) => {
                    axes.insert((*key).to_string(), v);
                }
                None => return Err(Error::config(*key, "missing")),
            }
        }
        let axes: ScanAxes = deserialize_table(axes)?;
        let cfg = Self {
            base: RunConfig::from_table(table)?,
            probe_times_s: axes.probe_times_s,
            noise_strengths_ug_sqrthz: axes.noise_strengths_ug_sqrthz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::try_from(&self.base).expect("flat config serializes");
        let axes = toml::Table::try_from(ScanAxes {
            probe_times_s: self.probe_times_s.clone(),
            noise_strengths_ug_sqrthz: self.noise_strengths_ug_sqrthz.clone(),
        })
        .expect("axes serialize");
        table.extend(axes);
        toml::to_string(&table).expect("table serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        increasing("probe_times_s", &self.probe_times_s)?;
        increasing("noise_strengths_uG_sqrtHz", &self.noise_strengths_ug_sqrthz)?;
        if self.probe_times_s[0] <= 0.0 {
            return Err(Error::config("probe_times_s", "probe times must be positive"));
        }
        if self.noise_strengths_ug_sqrthz[0] < 0.0 {
            return Err(Error::config("noise_strengths_uG_sqrtHz", "must be >= 0"));
        }
        Ok(())
    }

    /// Run configuration of one scan cell.
    pub fn cell_config(&self, noise_idx: usize, probe_idx: usize) -> RunConfig {
        RunConfig {
            noise_asd_ug_sqrthz: self.noise_strengths_ug_sqrthz[noise_idx],
            data_probe_s: self.probe_times_s[probe_idx],
            ..self.base.clone()
        }
    }
}

/// Parses TOML text into a table, mapping syntax errors to a config error.
pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config("<file>", e.message().to_string()))
}

/// Applies a `key=value` override. The value is read as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    table.insert(key.to_string(), value);
    Ok(())
}

fn check_keys(table: &toml::Table, allowed: &[&str]) -> Result<()> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
    }
    Ok(())
}

fn deserialize_table<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T> {
    // deserialize key by key first so a type error names its key
    for (key, value) in &table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        if let Err(e) = single.try_into::<T>() {
            let msg = e.message().to_string();
            if !msg.starts_with("missing field") {
                return Err(Error::config(key.clone(), msg));
            }
        }
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive and finite, got {v}")))
    }
}

fn increasing(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(key, "must not be empty"));
    }
    if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(key, "must be finite and strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(text.contains("noise_asd_uG_sqrtHz = 18"));
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn scan_round_trip() {
        let text = "probe_times_s = [1e-3, 2e-3, 4e-3]\nnoise_strengths_uG_sqrtHz = [1.0, 10.0]\nrepeats = 3\n";
        let cfg = ScanConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.base.repeats, 3);
        assert_eq!(ScanConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let cell = cfg.cell_config(1, 2);
        assert_eq!(cell.noise_asd_ug_sqrthz, 10.0);
        assert_eq!(cell.data_probe_s, 4e-3);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(RunConfig::from_toml_str("alpah = 0.1").unwrap_err()), "alpah");
        assert_eq!(key_of(RunConfig::from_toml_str("alpha = -1.0").unwrap_err()), "alpha");
        assert_eq!(
            key_of(RunConfig::from_toml_str("alpha = \"big\"").unwrap_err()),
            "alpha"
        );
        assert_eq!(
            key_of(RunConfig::from_toml_str("protocol = \"sideways\"").unwrap_err()),
            "protocol"
        );
        assert_eq!(
            key_of(RunConfig::from_toml_str("cutoff_hz = 600.0").unwrap_err()),
            "cutoff_hz"
        );
        assert_eq!(key_of(RunConfig::from_toml_str("repeats = 0").unwrap_err()), "repeats");
        assert_eq!(
            key_of(
                ScanConfig::from_toml_str("probe_times_s = [2e-3, 1e-3]\nnoise_strengths_uG_sqrtHz = [1.0]")
                    .unwrap_err()
            ),
            "probe_times_s"
        );
        assert_eq!(
            key_of(ScanConfig::from_toml_str("probe_times_s = [1e-3]").unwrap_err()),
            "noise_strengths_uG_sqrtHz"
        );
    }

    #[test]
    fn overrides() {
        let mut t = parse_table("alpha = 0.05").unwrap();
        apply_override(&mut t, "alpha=0.1").unwrap();
        apply_override(&mut t, "protocol = monitor").unwrap();
        apply_override(&mut t, "monitor_spam=false").unwrap();
        let cfg = RunConfig::from_table(t).unwrap();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.protocol, ProtocolChoice::Monitor);
        assert!(!cfg.monitor_spam);
        assert!(apply_override(&mut toml::Table::new(), "alpha").is_err());
    }

    #[test]
    fn servo_reference_follows_config() {
        let mut cfg = RunConfig::default();
        let fringe = cfg.servo(Protocol::Monitor).unwrap();
        cfg.servo_step = ServoStep::Bohr;
        let bohr = cfg.servo(Protocol::Monitor).unwrap();
        assert!((bohr.step() / fringe.step() - 4.8).abs() < 1e-12);
        assert_eq!(bohr.probe_time, cfg.timing().monitor_probe_s());
    }
}
