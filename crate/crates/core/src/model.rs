//! Domain types and the elementary channel/detector formulas.
//!
//! Everything here is a pure function of its arguments. The per-sender arm
//! has length `L/2`, so a sender's photons reach Charlie's time-basis
//! detectors with efficiency `η = η_d · 10^(−α·L/20)`. The interference
//! basis is modelled with a tenfold lower efficiency, `η_V = η / 10`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error rate of a click caused purely by a dark count.
pub const E0: f64 = 0.5;

/// Ratio between time-basis and interference-basis efficiency.
pub const INTERFERENCE_LOSS_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is outside {domain}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("error rate undefined: no detections possible (zero gain)")]
    ZeroGain,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

fn check(name: &'static str, value: f64, ok: bool, domain: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::OutOfRange {
            name,
            value,
            domain,
        })
    }
}

fn unit_closed(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Fixed hardware and channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExperimentParams", into = "RawExperimentParams")]
pub struct ExperimentParams {
    detector_efficiency: f64,
    dark_count_rate: f64,
    attenuation: f64,
    error_correction_efficiency: f64,
    time_misalignment: f64,
    interference_misalignment: f64,
    total_distance_km: f64,
}

/// Unvalidated mirror of [`ExperimentParams`], used for (de)serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawExperimentParams {
    pub detector_efficiency: f64,
    pub dark_count_rate: f64,
    pub attenuation: f64,
    pub error_correction_efficiency: f64,
    pub time_misalignment: f64,
    pub interference_misalignment: f64,
    pub total_distance_km: f64,
}

impl TryFrom<RawExperimentParams> for ExperimentParams {
    type Error = ModelError;

    fn try_from(raw: RawExperimentParams) -> Result<Self> {
        check(
            "detector_efficiency",
            raw.detector_efficiency,
            unit_closed(raw.detector_efficiency),
            "[0, 1]",
        )?;
        check(
            "dark_count_rate",
            raw.dark_count_rate,
            (0.0..0.5).contains(&raw.dark_count_rate),
            "[0, 0.5)",
        )?;
        check(
            "attenuation",
            raw.attenuation,
            raw.attenuation >= 0.0,
            "[0, inf)",
        )?;
        check(
            "error_correction_efficiency",
            raw.error_correction_efficiency,
            raw.error_correction_efficiency >= 1.0,
            "[1, inf)",
        )?;
        check(
            "time_misalignment",
            raw.time_misalignment,
            (0.0..=0.5).contains(&raw.time_misalignment),
            "[0, 0.5]",
        )?;
        check(
            "interference_misalignment",
            raw.interference_misalignment,
            (0.0..=0.5).contains(&raw.interference_misalignment),
            "[0, 0.5]",
        )?;
        check(
            "total_distance_km",
            raw.total_distance_km,
            raw.total_distance_km >= 0.0,
            "[0, inf)",
        )?;
        Ok(Self {
            detector_efficiency: raw.detector_efficiency,
            dark_count_rate: raw.dark_count_rate,
            attenuation: raw.attenuation,
            error_correction_efficiency: raw.error_correction_efficiency,
            time_misalignment: raw.time_misalignment,
            interference_misalignment: raw.interference_misalignment,
            total_distance_km: raw.total_distance_km,
        })
    }
}

impl From<ExperimentParams> for RawExperimentParams {
    fn from(p: ExperimentParams) -> Self {
        Self {
            detector_efficiency: p.detector_efficiency,
            dark_count_rate: p.dark_count_rate,
            attenuation: p.attenuation,
            error_correction_efficiency: p.error_correction_efficiency,
            time_misalignment: p.time_misalignment,
            interference_misalignment: p.interference_misalignment,
            total_distance_km: p.total_distance_km,
        }
    }
}

impl Default for RawExperimentParams {
    fn default() -> Self {
        ExperimentParams::baseline().into()
    }
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self::baseline()
    }
}

impl ExperimentParams {
    /// Ultralow-loss fiber reference setup: η_d = 56 %, p_d = 1e-8,
    /// α = 0.167 dB/km, f = 1.1, e_d = 0.1 %, with e'_d = 1 % and L = 0.
    pub fn baseline() -> Self {
        Self {
            detector_efficiency: 0.56,
            dark_count_rate: 1e-8,
            attenuation: 0.167,
            error_correction_efficiency: 1.1,
            time_misalignment: 0.001,
            interference_misalignment: 0.01,
            total_distance_km: 0.0,
        }
    }

    pub fn new(raw: RawExperimentParams) -> Result<Self> {
        Self::try_from(raw)
    }

    fn modify(self, f: impl FnOnce(&mut RawExperimentParams)) -> Result<Self> {
        let mut raw = RawExperimentParams::from(self);
        f(&mut raw);
        Self::try_from(raw)
    }

    pub fn with_distance(self, km: f64) -> Result<Self> {
        self.modify(|r| r.total_distance_km = km)
    }

    pub fn with_interference_misalignment(self, e: f64) -> Result<Self> {
        self.modify(|r| r.interference_misalignment = e)
    }

    pub fn with_time_misalignment(self, e: f64) -> Result<Self> {
        self.modify(|r| r.time_misalignment = e)
    }

    pub fn with_dark_count_rate(self, p: f64) -> Result<Self> {
        self.modify(|r| r.dark_count_rate = p)
    }

    pub fn with_detector_efficiency(self, e: f64) -> Result<Self> {
        self.modify(|r| r.detector_efficiency = e)
    }

    pub fn detector_efficiency(&self) -> f64 {
        self.detector_efficiency
    }
    pub fn dark_count_rate(&self) -> f64 {
        self.dark_count_rate
    }
    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }
    pub fn error_correction_efficiency(&self) -> f64 {
        self.error_correction_efficiency
    }
    pub fn time_misalignment(&self) -> f64 {
        self.time_misalignment
    }
    pub fn interference_misalignment(&self) -> f64 {
        self.interference_misalignment
    }
    pub fn total_distance_km(&self) -> f64 {
        self.total_distance_km
    }
}

/// The two knobs the senders control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFreeParams", into = "RawFreeParams")]
pub struct FreeParams {
    send_probability: f64,
    intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFreeParams {
    pub send_probability: f64,
    pub intensity: f64,
}

impl TryFrom<RawFreeParams> for FreeParams {
    type Error = ModelError;

    fn try_from(raw: RawFreeParams) -> Result<Self> {
        FreeParams::new(raw.send_probability, raw.intensity)
    }
}

impl From<FreeParams> for RawFreeParams {
    fn from(p: FreeParams) -> Self {
        Self {
            send_probability: p.send_probability,
            intensity: p.intensity,
        }
    }
}

impl FreeParams {
    /// `send_probability` must lie in (0, 1) and `intensity` must be positive.
    pub fn new(send_probability: f64, intensity: f64) -> Result<Self> {
        check(
            "send_probability",
            send_probability,
            send_probability > 0.0 && send_probability < 1.0,
            "(0, 1)",
        )?;
        check("intensity", intensity, intensity > 0.0, "(0, inf)")?;
        Ok(Self {
            send_probability,
            intensity,
        })
    }

    /// Probability `t` that a sender emits |α⟩.
    pub fn send_probability(&self) -> f64 {
        self.send_probability
    }

    /// Mean photon number `μ = |α|²`.
    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

/// Every intermediate quantity of one key-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub eta: f64,
    pub q_0a: f64,
    pub q_a0: f64,
    pub q_00: f64,
    pub q_aa: f64,
    pub e_t: f64,
    pub visibility: f64,
    pub q_mu: f64,
    pub e_mu: f64,
    pub zeta: f64,
    /// Key rate per slot pair, clamped at zero.
    pub rate: f64,
    pub rate_unclamped: f64,
}

/// Single-arm (length L/2) transmittance times detector efficiency.
pub fn channel_efficiency(params: &ExperimentParams) -> f64 {
    let arm_km = params.total_distance_km / 2.0;
    params.detector_efficiency * 10f64.powf(-params.attenuation * arm_km / 10.0)
}

/// Efficiency seen by the interferometer, `η / 10`.
pub fn interference_efficiency(params: &ExperimentParams) -> f64 {
    channel_efficiency(params) / INTERFERENCE_LOSS_FACTOR
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check("x", x, unit_closed(x), "[0, 1]")?;
    Ok(entropy(x))
}

// Caller guarantees x in [0, 1].
pub(crate) fn entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2
}

fn check_pair_inputs(intensity_a: f64, intensity_b: f64, eta: f64, p_d: f64) -> Result<()> {
    check("intensity_a", intensity_a, intensity_a >= 0.0, "[0, inf)")?;
    check("intensity_b", intensity_b, intensity_b >= 0.0, "[0, inf)")?;
    check("eta", eta, unit_closed(eta), "[0, 1]")?;
    check("p_d", p_d, (0.0..0.5).contains(&p_d), "[0, 0.5)")
}

/// Probability that the pair |k_a⟩|k_b⟩ produces a detection:
/// `1 − (1 − 2p_d)·exp(−(|k_a|² + |k_b|²)η)`.
pub fn pair_gain(intensity_a: f64, intensity_b: f64, eta: f64, p_d: f64) -> Result<f64> {
    check_pair_inputs(intensity_a, intensity_b, eta, p_d)?;
    Ok(gain(intensity_a + intensity_b, eta, p_d))
}

// 1 − (1−2p)e^{−x} = −expm1(−x) + 2p·e^{−x}, exact for tiny x and p.
pub(crate) fn gain(total_intensity: f64, eta: f64, p_d: f64) -> f64 {
    let x = total_intensity * eta;
    -(-x).exp_m1() + 2.0 * p_d * (-x).exp()
}

/// Error rate of detections from |k_a⟩|k_b⟩ given basis misalignment `m`.
pub fn pair_error_rate(
    intensity_a: f64,
    intensity_b: f64,
    eta: f64,
    p_d: f64,
    misalignment: f64,
) -> Result<f64> {
    check_pair_inputs(intensity_a, intensity_b, eta, p_d)?;
    check(
        "misalignment",
        misalignment,
        (0.0..=0.5).contains(&misalignment),
        "[0, 0.5]",
    )?;
    error_rate(intensity_a + intensity_b, eta, p_d, misalignment).ok_or(ModelError::ZeroGain)
}

pub(crate) fn error_rate(
    total_intensity: f64,
    eta: f64,
    p_d: f64,
    misalignment: f64,
) -> Option<f64> {
    let q = gain(total_intensity, eta, p_d);
    if q <= 0.0 {
        return None;
    }
    let dark = 2.0 * p_d * (E0 - misalignment) * (-total_intensity * eta).exp();
    Some(misalignment + dark / q)
}

/// Gain and error of the four intensity pairs in the time basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TimeBasis {
    pub eta: f64,
    pub q_00: f64,
    pub q_0a: f64,
    pub q_a0: f64,
    pub q_aa: f64,
    pub e_0a: f64,
    pub e_a0: f64,
}

impl TimeBasis {
    pub fn new(fp: &FreeParams, ep: &ExperimentParams) -> Self {
        let eta = channel_efficiency(ep);
        let mu = fp.intensity;
        let pd = ep.dark_count_rate;
        let ed = ep.time_misalignment;
        // Symmetric arms: 0α and α0 share the same total intensity.
        let q_0a = gain(mu, eta, pd);
        let e_0a = error_rate(mu, eta, pd, ed).unwrap_or(E0);
        Self {
            eta,
            q_00: gain(0.0, eta, pd),
            q_0a,
            q_a0: q_0a,
            q_aa: gain(2.0 * mu, eta, pd),
            e_0a,
            e_a0: e_0a,
        }
    }

    pub fn error(&self) -> f64 {
        let total = self.q_0a + self.q_a0;
        if total <= 0.0 {
            return E0;
        }
        // Written as an offset from E_α0 so equal arms reproduce it exactly.
        self.e_a0 + (self.e_0a - self.e_a0) * (self.q_0a / total)
    }
}

/// Gain-weighted time-basis error `E_T` over the 0α and α0 pairs.
pub fn time_basis_error(fp: &FreeParams, ep: &ExperimentParams) -> f64 {
    TimeBasis::new(fp, ep).error()
}

/// Interference-basis error `E_V` of the |α⟩|α⟩ pair at efficiency `η/10`.
pub fn interference_error(fp: &FreeParams, ep: &ExperimentParams) -> f64 {
    error_rate(
        2.0 * fp.intensity,
        interference_efficiency(ep),
        ep.dark_count_rate,
        ep.interference_misalignment,
    )
    .unwrap_or(E0)
}

/// Visibility `V = 1 − 2E_V`.
pub fn visibility(fp: &FreeParams, ep: &ExperimentParams) -> f64 {
    1.0 - 2.0 * interference_error(fp, ep)
}

/// Coherence term `ζ(μ, V) = (2V − 1)e^(−μ) − 2·sqrt((1 − e^(−2μ))V(1 − V))`.
pub fn zeta(mu: f64, visibility: f64) -> Result<f64> {
    check("mu", mu, mu >= 0.0, "[0, inf)")?;
    check("visibility", visibility, unit_closed(visibility), "[0, 1]")?;
    Ok(zeta_unchecked(mu, visibility))
}

pub(crate) fn zeta_unchecked(mu: f64, v: f64) -> f64 {
    let loss = -(-2.0 * mu).exp_m1();
    let cross = (loss * v * (1.0 - v)).max(0.0).sqrt();
    (2.0 * v - 1.0) * (-mu).exp() - 2.0 * cross
}

/// Overall time-basis gain `Q_μ` and the error `E_μ` against Charlie's key.
pub fn sifted_gain_and_reference_error(fp: &FreeParams, ep: &ExperimentParams) -> (f64, f64) {
    let tb = TimeBasis::new(fp, ep);
    let t = fp.send_probability;
    let (q_mu, e_mu) = reference_error(t, &tb);
    (q_mu, e_mu)
}

pub(crate) fn reference_error(t: f64, tb: &TimeBasis) -> (f64, f64) {
    let same = (1.0 - t).powi(2) * tb.q_00 + t * t * tb.q_aa;
    let mixed = t * (1.0 - t);
    let q_mu = same + mixed * (tb.q_0a + tb.q_a0);
    if q_mu <= 0.0 {
        return (0.0, E0);
    }
    let errors = 0.5 * same + mixed * (tb.e_0a * tb.q_0a + tb.e_a0 * tb.q_a0);
    (q_mu, (errors / q_mu).clamp(0.0, E0))
}
