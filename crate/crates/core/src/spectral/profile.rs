//! Pseudo-Voigt line shape.
//!
//! Total width and mixing follow Thompson, Cox & Hastings (1987):
//! f = (g^5 + 2.69269 g^4 l + 2.42843 g^3 l^2 + 4.47163 g^2 l^3 + 0.07842 g l^4 + l^5)^(1/5),
//! eta = 1.36603 r - 0.47719 r^2 + 0.11116 r^3 with r = l / f.
//! Both components share the width f; `amplitude` is the peak height.

use serde::{Deserialize, Serialize};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoVoigt {
    pub center_nm: f64,
    pub amplitude: f64,
    pub w_g_nm: f64,
    pub w_l_nm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("pseudo-Voigt needs w_G > 0 or w_L > 0")]
pub struct ZeroWidth;

pub fn total_fwhm(w_g: f64, w_l: f64) -> f64 {
    let (g, l) = (w_g.max(0.0), w_l.max(0.0));
    (g.powi(5)
        + 2.69269 * g.powi(4) * l
        + 2.42843 * g.powi(3) * l.powi(2)
        + 4.47163 * g.powi(2) * l.powi(3)
        + 0.07842 * g * l.powi(4)
        + l.powi(5))
    .powf(0.2)
}

pub fn mixing(w_g: f64, w_l: f64) -> f64 {
    let f = total_fwhm(w_g, w_l);
    if f == 0.0 {
        return 0.0;
    }
    let r = w_l.max(0.0) / f;
    (1.36603 * r - 0.47719 * r * r + 0.11116 * r * r * r).clamp(0.0, 1.0)
}

impl PseudoVoigt {
    pub fn new(center_nm: f64, amplitude: f64, w_g_nm: f64, w_l_nm: f64) -> PseudoVoigt {
        PseudoVoigt { center_nm, amplitude, w_g_nm, w_l_nm }
    }

    pub fn fwhm(&self) -> f64 {
        total_fwhm(self.w_g_nm, self.w_l_nm)
    }

    pub fn eta(&self) -> f64 {
        mixing(self.w_g_nm, self.w_l_nm)
    }

    pub fn try_eval(&self, x: f64) -> Result<f64, ZeroWidth> {
        if !(self.w_g_nm > 0.0 || self.w_l_nm > 0.0) {
            return Err(ZeroWidth);
        }
        Ok(self.eval(x))
    }

    /// Panics on zero width in debug builds; see [`PseudoVoigt::try_eval`].
    pub fn eval(&self, x: f64) -> f64 {
        let f = self.fwhm();
        debug_assert!(f > 0.0);
        let eta = self.eta();
        let q = (x - self.center_nm) / f;
        let q2 = 4.0 * q * q;
        let lor = 1.0 / (1.0 + q2);
        let gau = (-LN2 * q2).exp();
        self.amplitude * (eta * lor + (1.0 - eta) * gau)
    }

    /// Integral over the real line.
    pub fn area(&self) -> f64 {
        let f = self.fwhm();
        let eta = self.eta();
        self.amplitude * f * (eta * std::f64::consts::FRAC_PI_2 + (1.0 - eta) * (std::f64::consts::PI / (4.0 * LN2)).sqrt())
    }

    /// Half-extent beyond which the profile is below `frac` of its peak.
    pub fn support(&self, frac: f64) -> f64 {
        let f = self.fwhm();
        let eta = self.eta();
        // Lorentzian tail dominates far out.
        let lor = if eta > 0.0 { 0.5 * f * ((eta / frac - 1.0).max(0.0)).sqrt() } else { 0.0 };
        let gau = 0.5 * f * ((1.0 / frac).ln() / LN2).sqrt();
        lor.max(gau)
    }

    /// Adds the profile to `out`, evaluated at `x`, within `support(1e-7)`.
    pub fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        let reach = self.support(1e-7);
        let lo = x.partition_point(|v| *v < self.center_nm - reach);
        let hi = x.partition_point(|v| *v <= self.center_nm + reach);
        for i in lo..hi {
            out[i] += self.eval(x[i]);
        }
    }
}
