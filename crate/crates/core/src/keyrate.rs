//! Conference key rate, the two-party COW rate, and the benchmark bounds.

use serde::{Deserialize, Serialize};

use crate::model::{
    entropy, interference_error, reference_error, zeta_unchecked, ExperimentParams, FreeParams,
    RateBreakdown, TimeBasis,
};

/// Inputs to the conference key-rate expression. Both the analytic engine and
/// the Monte Carlo estimator fill one of these in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    pub send_probability: f64,
    pub intensity: f64,
    pub q_0a: f64,
    pub q_a0: f64,
    pub e_t: f64,
    pub visibility: f64,
    pub q_mu: f64,
    pub e_mu: f64,
    pub error_correction_efficiency: f64,
}

impl RateInputs {
    pub fn zeta(&self) -> f64 {
        zeta_unchecked(self.intensity, self.visibility.clamp(0.0, 1.0))
    }

    /// Unclamped rate: `t(1−t)(Q_0α+Q_α0)[1 − E_T − (1−E_T)h((1+ζ)/2)] − Q_μ f h(E_μ)`.
    pub fn unclamped(&self) -> f64 {
        let t = self.send_probability;
        let pa = ((1.0 + self.zeta()) / 2.0).clamp(0.0, 1.0);
        let e_t = self.e_t.clamp(0.0, 1.0);
        let privacy = 1.0 - e_t - (1.0 - e_t) * entropy(pa);
        let leak =
            self.q_mu * self.error_correction_efficiency * entropy(self.e_mu.clamp(0.0, 1.0));
        t * (1.0 - t) * (self.q_0a + self.q_a0) * privacy - leak
    }

    pub fn rate(&self) -> f64 {
        self.unclamped().max(0.0)
    }
}

/// Full breakdown of the conference key rate at `(t, μ)`.
pub fn conference_key_rate(fp: &FreeParams, ep: &ExperimentParams) -> RateBreakdown {
    let tb = TimeBasis::new(fp, ep);
    let e_t = tb.error();
    let (q_mu, e_mu) = reference_error(fp.send_probability(), &tb);
    let visibility = 1.0 - 2.0 * interference_error(fp, ep);
    let inputs = RateInputs {
        send_probability: fp.send_probability(),
        intensity: fp.intensity(),
        q_0a: tb.q_0a,
        q_a0: tb.q_a0,
        e_t,
        visibility,
        q_mu,
        e_mu,
        error_correction_efficiency: ep.error_correction_efficiency(),
    };
    let rate_unclamped = inputs.unclamped();
    RateBreakdown {
        eta: tb.eta,
        q_0a: tb.q_0a,
        q_a0: tb.q_a0,
        q_00: tb.q_00,
        q_aa: tb.q_aa,
        e_t,
        visibility,
        q_mu,
        e_mu,
        zeta: inputs.zeta(),
        rate: rate_unclamped.max(0.0),
        rate_unclamped,
    }
}

/// Inputs of the two-party coherent one-way rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CowInputs {
    pub sifted_gain: f64,
    pub qber: f64,
    pub intensity: f64,
    pub visibility: f64,
    pub leak_ec: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid COW input {name} = {value}")]
pub struct CowInputError {
    pub name: &'static str,
    pub value: f64,
}

impl CowInputs {
    pub fn validate(&self) -> Result<(), CowInputError> {
        let unit = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(CowInputError { name, value })
            }
        };
        unit("sifted_gain", self.sifted_gain)?;
        unit("qber", self.qber)?;
        unit("visibility", self.visibility)?;
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(CowInputError {
                name: "intensity",
                value: self.intensity,
            });
        }
        if !(self.leak_ec >= 0.0 && self.leak_ec.is_finite()) {
            return Err(CowInputError {
                name: "leak_ec",
                value: self.leak_ec,
            });
        }
        Ok(())
    }

    pub fn unclamped_rate(&self) -> f64 {
        let z = zeta_unchecked(self.intensity, self.visibility);
        let pa = ((1.0 + z) / 2.0).clamp(0.0, 1.0);
        self.sifted_gain * (1.0 - self.qber - (1.0 - self.qber) * entropy(pa)) - self.leak_ec
    }
}

/// `R = R_s[1 − Q − (1−Q)h((1+ζ(μ,V))/2)] − leak_EC`, clamped at zero.
pub fn cow_key_rate(inputs: &CowInputs) -> Result<f64, CowInputError> {
    inputs.validate()?;
    Ok(inputs.unclamped_rate().max(0.0))
}

/// Total efficiency among the quantum channels, `η_d·10^(−αL/10)`.
pub fn eta_lim_bound(ep: &ExperimentParams) -> f64 {
    ep.detector_efficiency() * 10f64.powf(-ep.attenuation() * ep.total_distance_km() / 10.0)
}

/// Repeaterless bound `−log2(1 − η_d·10^(−αL/20))`.
pub fn repeaterless_bound(ep: &ExperimentParams) -> f64 {
    let arm =
        ep.detector_efficiency() * 10f64.powf(-ep.attenuation() * ep.total_distance_km() / 20.0);
    -(-arm).ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub distance_km: f64,
    pub eta_lim: f64,
    pub repeaterless: f64,
}

pub fn bounds_row(ep: &ExperimentParams) -> BoundsRow {
    BoundsRow {
        distance_km: ep.total_distance_km(),
        eta_lim: eta_lim_bound(ep),
        repeaterless: repeaterless_bound(ep),
    }
}
