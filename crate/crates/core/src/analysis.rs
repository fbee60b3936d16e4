//! Fidelity statistics, tanh fits of fidelity against probe time and the
//! maximum usable probe time derived from them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Protocol;

/// Fixed fully-decohered floor of the tanh model.
pub const FIDELITY_FLOOR: f64 = 0.5;

/// Usable-probe-time threshold: 50 % contrast.
pub const FIDELITY_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FidelitySeries {
    pub bin_centers: Vec<f64>,
    pub mean_fidelity: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl FidelitySeries {
    pub fn len(&self) -> usize {
        self.mean_fidelity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_fidelity.is_empty()
    }
}

/// Groups outcomes into consecutive bins of `bin_size`; a trailing partial
/// bin is dropped. `bin_centers` are realization indices.
pub fn bin_fidelity(outcomes: &[bool], bin_size: usize) -> Result<FidelitySeries> {
    if bin_size < 2 {
        return Err(Error::domain("bin_size", bin_size as f64, "[2, inf)"));
    }
    let mut series = FidelitySeries::default();
    for (k, chunk) in outcomes.chunks_exact(bin_size).enumerate() {
        let n = chunk.len() as f64;
        let p = chunk.iter().filter(|&&o| o).count() as f64 / n;
        series
            .bin_centers
            .push((k * bin_size) as f64 + (bin_size as f64 - 1.0) / 2.0);
        series.mean_fidelity.push(p);
        series.stderr.push((p * (1.0 - p) / n).sqrt());
    }
    Ok(series)
}

/// `(C + 1) / 2`.
pub fn contrast_to_fidelity(contrast: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&contrast) {
        return Err(Error::domain("contrast", contrast, "[-1, 1]"));
    }
    Ok((contrast + 1.0) / 2.0)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean fidelity at one probe time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub probe_time: f64,
    pub fidelity: f64,
    pub stderr: f64,
}

/// `F(τ) = floor + (f_max − floor)·(1 − tanh((τ − τ₀)/width))/2`.
pub fn tanh_model(tau: f64, f_max: f64, tau0: f64, width: f64) -> f64 {
    FIDELITY_FLOOR + (f_max - FIDELITY_FLOOR) * 0.5 * (1.0 - ((tau - tau0) / width).tanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TanhFit {
    pub f_max: f64,
    pub f_floor: f64,
    pub tau0: f64,
    pub width: f64,
    pub residual_rms: f64,
    /// Parameter covariance in the order `(f_max, tau0, width)`.
    pub covariance: [[f64; 3]; 3],
}

impl TanhFit {
    pub fn eval(&self, tau: f64) -> f64 {
        tanh_model(tau, self.f_max, self.tau0, self.width)
    }
}

/// Weighted least-squares tanh fit with the floor fixed at 0.5.
///
/// `f_max` is profiled out in closed form (the model is linear in it) and
/// clamped to `[0.5, 1]`. The remaining `(τ₀, width)` search is a fixed
/// log-spaced grid followed by Nelder–Mead refinement, all in units of the
/// largest probe time, so results are deterministic and scale with the
/// time axis.
pub fn fit_tanh(points: &[ProbePoint]) -> Result<TanhFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "tanh fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| !(w[1].probe_time > w[0].probe_time)) || points[0].probe_time <= 0.0 {
        return Err(Error::Format(
            "probe times must be positive and strictly increasing".into(),
        ));
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.fidelity), hi.max(p.fidelity))
    });
    if hi - lo < 0.02 {
        return Err(Error::NoTransition(format!("fidelities span only {:.4}", hi - lo)));
    }
    if rank_correlation(points) >= 0.0 {
        return Err(Error::NoTransition("fidelity does not decrease with probe time".into()));
    }

    let scale = points[points.len() - 1].probe_time;
    let problem = Problem::new(points, scale);

    // multi-start grid in (u = τ₀/scale, v = ln(width/scale))
    let u_min = points[0].probe_time / scale;
    const NU: usize = 48;
    const NR: usize = 32;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..NU {
        let u = u_min * (1.0 / u_min).powf(i as f64 / (NU - 1) as f64);
        for j in 0..NR {
            let ratio = 0.005 * (600.0f64).powf(j as f64 / (NR - 1) as f64);
            let v = (u * ratio).ln();
            let c = problem.chi2(u, v);
            if c < best.0 {
                best = (c, u, v);
            }
        }
    }
    let mut start = [best.1, best.2];
    let mut value = best.0;
    for _ in 0..3 {
        let (x, fx) = nelder_mead(|x| problem.chi2(x[0], x[1]), start, [0.1 * start[0], 0.3]);
        let moved = (x[0] - start[0]).abs() + (x[1] - start[1]).abs();
        start = x;
        value = fx;
        if moved < 1e-14 {
            break;
        }
    }
    let (amp, u0, v) = problem.polish(problem.amplitude(start[0], start[1]), start[0], start[1], value);
    let tau0 = u0 * scale;
    let width = v.exp() * scale;
    let f_max = FIDELITY_FLOOR + amp;

    let residual_rms = (points
        .iter()
        .map(|p| (p.fidelity - tanh_model(p.probe_time, f_max, tau0, width)).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let covariance = covariance(points, &problem.weights, f_max, tau0, width);
    Ok(TanhFit {
        f_max,
        f_floor: FIDELITY_FLOOR,
        tau0,
        width,
        residual_rms,
        covariance,
    })
}

struct Problem {
    u: Vec<f64>,
    r: Vec<f64>,
    weights: Vec<f64>,
}

impl Problem {
    fn new(points: &[ProbePoint], scale: f64) -> Self {
        let max_finite = points
            .iter()
            .filter(|p| p.stderr > 0.0 && p.stderr.is_finite())
            .map(|p| 1.0 / (p.stderr * p.stderr))
            .fold(0.0, f64::max);
        let weights = points
            .iter()
            .map(|p| {
                if p.stderr > 0.0 && p.stderr.is_finite() {
                    1.0 / (p.stderr * p.stderr)
                } else if max_finite > 0.0 {
                    max_finite
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            u: points.iter().map(|p| p.probe_time / scale).collect(),
            r: points.iter().map(|p| p.fidelity - FIDELITY_FLOOR).collect(),
            weights,
        }
    }

    fn shape(&self, u0: f64, v: f64) -> impl Iterator<Item = f64> + '_ {
        let w = v.exp();
        self.u.iter().map(move |u| 0.5 * (1.0 - ((u - u0) / w).tanh()))
    }

    /// Best `f_max − floor` for a fixed shape, clamped to `[0, 0.5]`.
    fn amplitude(&self, u0: f64, v: f64) -> f64 {
        let (num, den) = self
            .shape(u0, v)
            .zip(&self.r)
            .zip(&self.weights)
            .fold((0.0, 0.0), |(n, d), ((g, r), w)| (n + w * g * r, d + w * g * g));
        if den > 0.0 {
            (num / den).clamp(0.0, 1.0 - FIDELITY_FLOOR)
        } else {
            0.0
        }
    }

    fn chi2(&self, u0: f64, v: f64) -> f64 {
        if !(u0.is_finite() && v.is_finite()) || !(-40.0..=10.0).contains(&v) {
            return f64::INFINITY;
        }
        let a = self.amplitude(u0, v);
        self.shape(u0, v)
            .zip(&self.r)
            .zip(&self.weights)
            .map(|((g, r), w)| w * (r - a * g).powi(2))
            .sum()
    }
}

impl Problem {
    fn chi2_full(&self, a: f64, u0: f64, v: f64) -> f64 {
        self.shape(u0, v)
            .zip(&self.r)
            .zip(&self.weights)
            .map(|((g, r), w)| w * (r - a * g).powi(2))
            .sum()
    }

    /// Levenberg–Marquardt on the analytic Jacobian. Value-only search stalls
    /// at ~√ε relative precision; this drives the gradient itself to zero.
    fn polish(&self, a: f64, u0: f64, v: f64, chi2: f64) -> (f64, f64, f64) {
        let amp_max = 1.0 - FIDELITY_FLOOR;
        // a bound-clamped amplitude stays fixed
        let free_a = a > 0.0 && a < amp_max;
        let mut x = [a, u0, v];
        let mut best = self.chi2_full(x[0], x[1], x[2]).min(chi2);
        let mut lambda = 1e-6;
        for _ in 0..200 {
            let w_scale = x[2].exp();
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for ((u, r), w) in self.u.iter().zip(&self.r).zip(&self.weights) {
                let z = (u - x[1]) / w_scale;
                let t = z.tanh();
                let sech2 = 1.0 - t * t;
                let g = 0.5 * (1.0 - t);
                let j = [g, 0.5 * x[0] * sech2 / w_scale, 0.5 * x[0] * sech2 * z];
                let res = r - x[0] * g;
                for p in 0..3 {
                    jtr[p] += w * j[p] * res;
                    for q in 0..3 {
                        jtj[p][q] += w * j[p] * j[q];
                    }
                }
            }
            if !free_a {
                jtr[0] = 0.0;
                jtj[0] = [1.0, 0.0, 0.0];
                jtj[1][0] = 0.0;
                jtj[2][0] = 0.0;
            }
            let mut improved = false;
            while lambda < 1e12 {
                let mut m = jtj;
                for (p, row) in m.iter_mut().enumerate() {
                    row[p] *= 1.0 + lambda;
                }
                let Some(inv) = invert3(&m) else { break };
                let delta: [f64; 3] = std::array::from_fn(|p| (0..3).map(|q| inv[p][q] * jtr[q]).sum());
                let trial = [(x[0] + delta[0]).clamp(0.0, amp_max), x[1] + delta[1], x[2] + delta[2]];
                let c = self.chi2_full(trial[0], trial[1], trial[2]);
                if c.is_finite() && c <= best + 1e-12 * best {
                    let tiny = delta.iter().zip(&x).all(|(d, xi)| d.abs() <= 1e-15 * (1.0 + xi.abs()));
                    x = trial;
                    best = best.min(c);
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = !tiny;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (x[0], x[1], x[2])
    }
}

/// Spearman-style sign check: correlation between probe-time rank and fidelity.
fn rank_correlation(points: &[ProbePoint]) -> f64 {
    let n = points.len() as f64;
    let mean_rank = (n - 1.0) / 2.0;
    let mean_f = points.iter().map(|p| p.fidelity).sum::<f64>() / n;
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i as f64 - mean_rank) * (p.fidelity - mean_f))
        .sum()
}

fn nelder_mead<F: Fn([f64; 2]) -> f64>(f: F, x0: [f64; 2], step: [f64; 2]) -> ([f64; 2], f64) {
    let mut simplex = [x0, [x0[0] + step[0], x0[1]], [x0[0], x0[1] + step[1]]];
    let mut values = simplex.map(&f);
    for _ in 0..20_000 {
        // order best → worst, ties kept in index order
        let mut idx = [0, 1, 2];
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.map(|i| simplex[i]);
        values = idx.map(|i| values[i]);

        let spread = (values[2] - values[0]).abs();
        let size = (1..3)
            .map(|k| (simplex[k][0] - simplex[0][0]).abs() + (simplex[k][1] - simplex[0][1]).abs())
            .fold(0.0, f64::max);
        if size < 1e-13 && spread <= 1e-15 * values[0].abs() + 1e-300 {
            break;
        }

        let centroid = [
            (simplex[0][0] + simplex[1][0]) / 2.0,
            (simplex[0][1] + simplex[1][1]) / 2.0,
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (simplex[best], values[best])
}

/// `(JᵀWJ)⁻¹` scaled by the reduced χ², parameters `(f_max, τ₀, width)`.
fn covariance(points: &[ProbePoint], weights: &[f64], f_max: f64, tau0: f64, width: f64) -> [[f64; 3]; 3] {
    let mut fisher = [[0.0; 3]; 3];
    let mut chi2 = 0.0;
    for (p, w) in points.iter().zip(weights) {
        let z = (p.probe_time - tau0) / width;
        let t = z.tanh();
        let sech2 = 1.0 - t * t;
        let amp = f_max - FIDELITY_FLOOR;
        let j = [
            0.5 * (1.0 - t),
            0.5 * amp * sech2 / width,
            0.5 * amp * sech2 * z / width,
        ];
        for a in 0..3 {
            for b in 0..3 {
                fisher[a][b] += w * j[a] * j[b];
            }
        }
        chi2 += w * (p.fidelity - tanh_model(p.probe_time, f_max, tau0, width)).powi(2);
    }
    let dof = points.len().saturating_sub(3).max(1) as f64;
    let scale = chi2 / dof;
    match invert3(&fisher) {
        Some(inv) => inv.map(|row| row.map(|v| v * scale)),
        None => [[f64::NAN; 3]; 3],
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    // inverse = adjugate / det, adjugate = cofactorᵀ
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = cof[col][r] / det;
        }
    }
    Some(inv)
}

/// Probe time at which the fitted fidelity falls to 0.75.
pub fn max_probe_time(fit: &TanhFit) -> Result<f64> {
    if !(fit.f_max > FIDELITY_THRESHOLD) {
        return Err(Error::NeverAboveThreshold {
            threshold: FIDELITY_THRESHOLD,
            f_max: fit.f_max,
        });
    }
    Ok(fit.tau0 + fit.width * threshold_arg(fit.f_max).atanh())
}

fn threshold_arg(f_max: f64) -> f64 {
    1.0 - 2.0 * (FIDELITY_THRESHOLD - FIDELITY_FLOOR) / (f_max - FIDELITY_FLOOR)
}

/// One-sigma uncertainty of [`max_probe_time`] from the fit covariance.
pub fn max_probe_time_err(fit: &TanhFit) -> Result<f64> {
    max_probe_time(fit)?;
    let z = threshold_arg(fit.f_max);
    let amp = fit.f_max - FIDELITY_FLOOR;
    // d/df atanh(1 − 0.5/amp) = (0.5/amp²) / (1 − z²)
    let grad = [
        fit.width * (2.0 * (FIDELITY_THRESHOLD - FIDELITY_FLOOR) / (amp * amp)) / (1.0 - z * z),
        1.0,
        z.atanh(),
    ];
    let mut var = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            var += grad[a] * fit.covariance[a][b] * grad[b];
        }
    }
    Ok(var.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMax {
    pub value: Option<f64>,
    pub err: Option<f64>,
    /// Set when the crossing lies outside the scanned range or no crossing
    /// could be extracted.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// G/√Hz.
    pub noise_asd_1hz: f64,
    pub protocol: Protocol,
    pub points: Vec<ProbePoint>,
    pub fit: Option<TanhFit>,
    pub fit_error: Option<String>,
    pub tau_max: TauMax,
}

impl ScanResult {
    /// Fits the points and extracts the maximum usable probe time.
    pub fn from_points(noise_asd_1hz: f64, protocol: Protocol, mut points: Vec<ProbePoint>) -> Self {
        points.sort_by(|a, b| a.probe_time.total_cmp(&b.probe_time));
        let (fit, fit_error) = match fit_tanh(&points) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let mut tau_max = TauMax {
            value: None,
            err: None,
            extrapolated: true,
        };
        if let Some(f) = &fit {
            if let Ok(t) = max_probe_time(f) {
                let lo = points[0].probe_time;
                let hi = points[points.len() - 1].probe_time;
                tau_max = TauMax {
                    value: Some(t),
                    err: max_probe_time_err(f).ok(),
                    extrapolated: !(t >= lo && t <= hi),
                };
            }
        }
        Self {
            noise_asd_1hz,
            protocol,
            points,
            fit,
            fit_error,
            tau_max,
        }
    }

    pub fn write_points_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["probe_time_s", "mean_fidelity", "stderr"])?;
        for p in &self.points {
            w.write_record([p.probe_time.to_string(), p.fidelity.to_string(), p.stderr.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRatio {
    pub value: f64,
    pub uncertainty: f64,
}

/// `τ_max(a) / τ_max(b)` with first-order error propagation.
pub fn compare_protocols(a: &ScanResult, b: &ScanResult) -> Result<ProtocolRatio> {
    let tol = 1e-12 * a.noise_asd_1hz.abs().max(b.noise_asd_1hz.abs());
    if (a.noise_asd_1hz - b.noise_asd_1hz).abs() > tol {
        return Err(Error::Comparison(format!(
            "noise strengths differ: {} vs {} G/√Hz",
            a.noise_asd_1hz, b.noise_asd_1hz
        )));
    }
    let usable = |s: &ScanResult| match (s.tau_max.value, s.tau_max.extrapolated) {
        (Some(v), false) => Ok((v, s.tau_max.err.unwrap_or(0.0))),
        _ => Err(Error::Comparison(format!(
            "{} scan has no in-range maximum probe time",
            s.protocol.name()
        ))),
    };
    let (ta, ea) = usable(a)?;
    let (tb, eb) = usable(b)?;
    let value = ta / tb;
    Ok(ProtocolRatio {
        value,
        uncertainty: value * ((ea / ta).powi(2) + (eb / tb).powi(2)).sqrt(),
    })
}
