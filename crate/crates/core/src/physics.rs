//! Qubit encodings, Ramsey phase accumulation and single-shot readout.
//!
//! Both qubits live in one `⁴⁰Ca⁺` species. The data qubit is the ground
//! `S₁/₂` Zeeman pair (g-type) and the monitor qubit the `D₅/₂ m=+3/2 ↔ −5/2`
//! pair (m-type). Field sensitivities follow from ideal Landé factors, so
//! the monitor/data sensitivity ratio is exactly 2.4.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bohr magneton over Planck constant, Hz per gauss.
pub const MU_B_OVER_H: f64 = 1.3996245e6;

/// Planck constant, J·s (exact SI value).
pub const PLANCK_H: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Hz/G.
    pub mu_b_over_h: f64,
    /// J·s.
    pub h: f64,
    /// J·s.
    pub hbar: f64,
}

impl PhysicalConstants {
    pub const fn new() -> Self {
        Self {
            mu_b_over_h: MU_B_OVER_H,
            h: PLANCK_H,
            hbar: PLANCK_H / (2.0 * PI),
        }
    }

    /// Bohr magneton in J/G.
    pub fn mu_b(&self) -> f64 {
        self.mu_b_over_h * self.h
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// A half-integer magnetic quantum number, stored as `2m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_twice(twice: i32) -> Self {
        Self(twice)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingLabel {
    /// Ground-state Zeeman qubit carrying the computation.
    DataG,
    /// Metastable-state qubit used as the field sensor.
    MonitorM,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitEncoding {
    pub label: EncodingLabel,
    pub lande_g: f64,
    pub m_upper: HalfInt,
    pub m_lower: HalfInt,
}

impl QubitEncoding {
    /// `S₁/₂`, `m = +1/2 ↔ −1/2`, `g_J = 2`.
    pub const DATA_G: QubitEncoding = QubitEncoding {
        label: EncodingLabel::DataG,
        lande_g: 2.0,
        m_upper: HalfInt::from_twice(1),
        m_lower: HalfInt::from_twice(-1),
    };

    /// `D₅/₂`, `m = +3/2 ↔ −5/2`, `g_J = 6/5`.
    pub const MONITOR_M: QubitEncoding = QubitEncoding {
        label: EncodingLabel::MonitorM,
        lande_g: 6.0 / 5.0,
        m_upper: HalfInt::from_twice(3),
        m_lower: HalfInt::from_twice(-5),
    };

    pub fn for_label(label: EncodingLabel) -> Self {
        match label {
            EncodingLabel::DataG => Self::DATA_G,
            EncodingLabel::MonitorM => Self::MONITOR_M,
        }
    }

    /// `|Δm|` between the two qubit levels.
    pub fn delta_m(&self) -> f64 {
        f64::from((self.m_upper.twice() - self.m_lower.twice()).abs()) / 2.0
    }

    /// `g_J · |Δm|`, the splitting in units of `μ_B·B`.
    pub fn zeeman_factor(&self) -> Result<f64> {
        if self.m_upper == self.m_lower {
            return Err(Error::InvalidEncoding(format!(
                "{:?}: m_upper == m_lower == {}",
                self.label, self.m_upper
            )));
        }
        if !(self.lande_g > 0.0) {
            return Err(Error::InvalidEncoding(format!(
                "{:?}: Landé factor {} must be positive",
                self.label, self.lande_g
            )));
        }
        Ok(self.lande_g * self.delta_m())
    }
}

/// Field sensitivity of the qubit splitting in Hz/G.
pub fn sensitivity(encoding: &QubitEncoding) -> Result<f64> {
    Ok(encoding.zeeman_factor()? * MU_B_OVER_H)
}

/// Qubit splitting in Hz at a static field `b_gauss`.
pub fn splitting_at_field(encoding: &QubitEncoding, b_gauss: f64) -> Result<f64> {
    if !(b_gauss >= 0.0) {
        return Err(Error::domain("B", b_gauss, "[0, inf) G"));
    }
    Ok(sensitivity(encoding)? * b_gauss)
}

/// Ramsey phase accrued by a superposition; no wrapping is applied.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct PhaseError(pub f64);

impl PhaseError {
    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Phase accrued over a probe window given `∫ΔB dt` in G·s.
///
/// For a constant offset this reduces to `g·|Δm|·μ_B·ΔB·τ/ħ`, which is the
/// familiar `2μ_B ΔB τ/ħ` for the data qubit.
pub fn accumulated_phase(encoding: &QubitEncoding, field_integral: f64) -> Result<PhaseError> {
    if !field_integral.is_finite() {
        return Err(Error::domain("field integral", field_integral, "finite"));
    }
    Ok(PhaseError(2.0 * PI * sensitivity(encoding)? * field_integral))
}

/// How a data-qubit phase error maps to the probability of the intended
/// Ramsey outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityConvention {
    /// `cos²(δφ)`.
    #[default]
    Paper,
    /// `cos²(δφ/2)`, the textbook Ramsey return probability.
    HalfAngle,
}

impl FidelityConvention {
    pub fn fidelity(self, delta_phi: PhaseError) -> f64 {
        match self {
            FidelityConvention::Paper => predicted_fidelity(delta_phi),
            FidelityConvention::HalfAngle => predicted_fidelity(PhaseError(delta_phi.0 / 2.0)),
        }
    }
}

/// `cos²(δφ)`.
pub fn predicted_fidelity(delta_phi: PhaseError) -> f64 {
    let c = delta_phi.0.cos();
    c * c
}

/// Probability of reading outcome 1 from a mid-fringe monitor Ramsey probe.
/// Positive phase (true field above the estimate) biases toward 1.
pub fn monitor_outcome_probability(delta_phi_m: PhaseError) -> f64 {
    0.5 * (1.0 + delta_phi_m.0.sin())
}

/// One projective measurement: `true` with probability `p`. Always consumes
/// exactly one uniform draw.
pub fn sample_outcome<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("outcome probability", p, "[0, 1]"));
    }
    let u: f64 = rng.random();
    Ok(u < p)
}

/// Symmetric readout bit flip with probability `1 − spam_fidelity`. Always
/// consumes exactly one uniform draw.
pub fn spam_corrupt<R: Rng + ?Sized>(outcome: bool, spam_fidelity: f64, rng: &mut R) -> Result<bool> {
    if !(0.5..=1.0).contains(&spam_fidelity) {
        return Err(Error::domain("spam_fidelity", spam_fidelity, "[0.5, 1]"));
    }
    let u: f64 = rng.random();
    Ok(if u < 1.0 - spam_fidelity { !outcome } else { outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn hbar_is_h_over_two_pi() {
        let c = PhysicalConstants::new();
        assert!(rel(c.hbar * 2.0 * PI, c.h) < 1e-15);
        assert!(c.mu_b_over_h > 0.0);
        // CODATA μ_B = 9.2740100783e-24 J/T = 9.2740100783e-28 J/G
        assert!(rel(c.mu_b(), 9.274_010_078_3e-28) < 1e-7);
    }

    #[test]
    fn sensitivities() {
        let d = sensitivity(&QubitEncoding::DATA_G).unwrap();
        let m = sensitivity(&QubitEncoding::MONITOR_M).unwrap();
        assert!(rel(d, 2.799_249_0e6) < 1e-12);
        assert!(rel(m, 6.718_197_6e6) < 1e-12);
        assert!(rel(m / d, 2.4) < 1e-12);
    }

    #[test]
    fn degenerate_encoding_rejected() {
        let bad = QubitEncoding {
            m_lower: HalfInt::from_twice(1),
            ..QubitEncoding::DATA_G
        };
        assert!(matches!(sensitivity(&bad), Err(Error::InvalidEncoding(_))));
    }

    #[test]
    fn splitting() {
        let d = splitting_at_field(&QubitEncoding::DATA_G, 5.0).unwrap();
        assert!(rel(d, 1.399_62e7) < 1e-5);
        let m = splitting_at_field(&QubitEncoding::MONITOR_M, 5.0).unwrap();
        assert!(rel(m, 3.3591e7) < 1e-4);
        assert_eq!(splitting_at_field(&QubitEncoding::MONITOR_M, 0.0).unwrap(), 0.0);
        assert!(splitting_at_field(&QubitEncoding::DATA_G, -1.0).is_err());
    }

    #[test]
    fn phase_examples() {
        let d = accumulated_phase(&QubitEncoding::DATA_G, 1e-7).unwrap().0;
        assert!(rel(d, 2.0 * PI * 2.799_249e6 * 1e-7) < 1e-6);
        assert!(rel(d, 1.758_77) < 1e-4);
        // same number through 2 μ_B ΔB τ / ħ
        let c = PhysicalConstants::new();
        assert!(rel(d, 2.0 * c.mu_b() * 1e-4 * 1e-3 / c.hbar) < 1e-12);
        let m = accumulated_phase(&QubitEncoding::MONITOR_M, 1e-7).unwrap().0;
        assert!(rel(m, 2.4 * d) < 1e-12);
        assert!(rel(m, 4.221_05) < 1e-4);
        assert_eq!(accumulated_phase(&QubitEncoding::DATA_G, 0.0).unwrap().0, 0.0);
        assert!(accumulated_phase(&QubitEncoding::DATA_G, f64::NAN).is_err());
    }

    #[test]
    fn fidelity_examples() {
        assert_eq!(predicted_fidelity(PhaseError(0.0)), 1.0);
        assert!(predicted_fidelity(PhaseError(PI / 2.0)) < 1e-30);
        assert!((predicted_fidelity(PhaseError(PI / 4.0)) - 0.5).abs() < 1e-15);
        let half = FidelityConvention::HalfAngle.fidelity(PhaseError(PI / 2.0));
        assert!((half - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monitor_probability_examples() {
        assert_eq!(monitor_outcome_probability(PhaseError(0.0)), 0.5);
        assert_eq!(monitor_outcome_probability(PhaseError(PI / 2.0)), 1.0);
        assert!((monitor_outcome_probability(PhaseError(-PI / 6.0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sampling_edges_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(!sample_outcome(0.0, &mut rng).unwrap());
            assert!(sample_outcome(1.0, &mut rng).unwrap());
        }
        assert!(sample_outcome(1.5, &mut rng).is_err());
        assert!(sample_outcome(-0.1, &mut rng).is_err());
        assert!(spam_corrupt(true, 0.4, &mut rng).is_err());
        assert!(spam_corrupt(true, 1.01, &mut rng).is_err());
    }

    #[test]
    fn fair_coin_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_outcome(0.5, &mut rng).unwrap()).count();
        let mean = ones as f64 / n as f64;
        // 3σ of √(p(1−p)/N)
        assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn spam_flip_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        for _ in 0..1000 {
            assert!(spam_corrupt(true, 1.0, &mut rng).unwrap());
        }
        let kept = (0..n).filter(|_| spam_corrupt(true, 0.99, &mut rng).unwrap()).count();
        let mean = kept as f64 / n as f64;
        assert!((mean - 0.99).abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn half_fidelity_spam_decorrelates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = rng.random::<bool>();
            let y = spam_corrupt(x, 0.5, &mut rng).unwrap();
            let (x, y) = (f64::from(u8::from(x)), f64::from(u8::from(y)));
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let r = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(r.abs() < 0.01, "r = {r}");
    }

    #[test]
    fn sampling_is_stream_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..256)
                .map(|i| sample_outcome((i as f64) / 255.0, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(99), draw(99));
    }

    proptest! {
        #[test]
        fn phase_is_linear(x in -1e-3f64..1e-3) {
            let a = accumulated_phase(&QubitEncoding::MONITOR_M, x).unwrap().0;
            let b = accumulated_phase(&QubitEncoding::MONITOR_M, 2.0 * x).unwrap().0;
            prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn fidelity_even_and_pi_periodic(phi in -20.0f64..20.0) {
            let f = predicted_fidelity(PhaseError(phi));
            prop_assert!((f - predicted_fidelity(PhaseError(-phi))).abs() < 1e-15);
            prop_assert!((f - predicted_fidelity(PhaseError(phi + PI))).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn monitor_probability_monotone(a in -1.5f64..1.5, d in 1e-6f64..0.05) {
            let lo = monitor_outcome_probability(PhaseError(a));
            let hi = monitor_outcome_probability(PhaseError(a + d));
            prop_assert!(hi > lo);
        }
    }
}
