//! Asymmetric Fabry-Pérot cavity acting on the herald arm of a
//! time-ordered photon pair.
//!
//! The herald is reflected off a two-mirror cavity whose back mirror only
//! contributes loss. Close to a resonance the reflection is a prompt echo
//! of amplitude `r1` followed by an exponentially decaying re-emission:
//!
//! ```text
//! h(t) = r1 delta(t) - K gamma exp(-(gamma + 2 pi i D) t) Theta(t)
//! K    = r2 (1 - r1^2) / (1 - r1 r2)
//! ```
//!
//! with field decay rate `gamma = 1 / (2 tau_c)` and detuning `D` of the
//! cavity resonance from the herald centre. `K` makes the resonant
//! response equal the exact two-mirror value `(r1 - r2) / (1 - r1 r2)`.
//!
//! Detecting the herald at `t_h = 0` projects the probe onto
//! `phi(t) = integral h(s) g(t + s) ds`, where `g` is the decaying pair
//! correlation. On resonance the re-emitted part dominates and `phi` rises
//! as `exp(t / 2 tau_c)` before `t = 0`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::envelope::{make_decaying, EnvelopeShape, PhotonEnvelope};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Speed of light in mm/ns.
const C_MM_PER_NS: f64 = 299.792_458;
/// Largest tolerated ratio between cavity and photon time constants.
const MAX_TAU_RATIO: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub length_mm: f64,
    pub finesse: f64,
    /// In-coupling mirror intensity reflectance.
    pub r_in: f64,
    /// Back mirror intensity reflectance.
    pub r_back: f64,
    /// Cavity resonance minus herald centre frequency, MHz.
    #[serde(default)]
    pub detuning_mhz: f64,
}

impl CavityParams {
    /// 125 mm, finesse 103, reflectances 0.943 / 0.9995, on resonance.
    pub fn measured() -> Self {
        CavityParams {
            length_mm: 125.0,
            finesse: 103.0,
            r_in: 0.943,
            r_back: 0.9995,
            detuning_mhz: 0.0,
        }
    }

    pub fn with_detuning(self, detuning_mhz: f64) -> Self {
        CavityParams {
            detuning_mhz,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_mm.is_finite() && self.length_mm > 0.0) {
            return Err(Error::param(
                "length_mm",
                format!("must be positive, got {}", self.length_mm),
            ));
        }
        if !(self.finesse.is_finite() && self.finesse > 0.0) {
            return Err(Error::param(
                "finesse",
                format!("must be positive, got {}", self.finesse),
            ));
        }
        for (name, r) in [("r_in", self.r_in), ("r_back", self.r_back)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::param(
                    name,
                    format!("reflectance must lie in (0, 1], got {r}"),
                ));
            }
        }
        if !self.detuning_mhz.is_finite() {
            return Err(Error::param("detuning_mhz", "must be finite"));
        }
        Ok(())
    }

    /// Free spectral range `c / 2L`, GHz.
    pub fn fsr_ghz(&self) -> f64 {
        C_MM_PER_NS / (2.0 * self.length_mm)
    }

    /// Linewidth `FSR / finesse`, MHz.
    pub fn linewidth_mhz(&self) -> f64 {
        1e3 * self.fsr_ghz() / self.finesse
    }

    fn amplitudes(&self) -> (f64, f64) {
        (self.r_in.sqrt(), self.r_back.sqrt())
    }

    /// Weight of the delayed re-emission relative to a full-strength pole.
    fn coupling_weight(&self) -> f64 {
        let (r1, r2) = self.amplitudes();
        if r1 >= 1.0 {
            return 0.0;
        }
        r2 * (1.0 - r1 * r1) / (1.0 - r1 * r2)
    }
}

/// Energy decay time `finesse / (2 pi FSR)`, ns.
pub fn cavity_decay_time(cav: &CavityParams) -> f64 {
    cav.finesse / (2.0 * PI * cav.fsr_ghz())
}

/// Two-mirror amplitude reflection at `offset_mhz` from the herald centre.
pub fn reflection_coefficient(cav: &CavityParams, offset_mhz: f64) -> Complex64 {
    let (r1, r2) = cav.amplitudes();
    let phi = 2.0 * PI * (offset_mhz - cav.detuning_mhz) * 1e-3 / cav.fsr_ghz();
    let round_trip = Complex64::from_polar(1.0, phi);
    (r1 - round_trip * r2) / (1.0 - round_trip * (r1 * r2))
}

/// Reflection coefficient over a grid of frequency offsets (MHz).
pub fn reflection_response(cav: &CavityParams, freq_mhz: &[f64]) -> Result<Vec<Complex64>> {
    cav.validate()?;
    if freq_mhz.iter().any(|f| !f.is_finite()) {
        return Err(Error::param("freq_mhz", "must be finite"));
    }
    let (lo, hi) = freq_mhz
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| {
            (a.min(f), b.max(f))
        });
    if !(hi - lo >= cav.linewidth_mhz()) {
        return Err(Error::GridTooShort(format!(
            "frequency grid spans {:.3} MHz, narrower than the {:.3} MHz cavity line",
            (hi - lo).max(0.0),
            cav.linewidth_mhz()
        )));
    }
    Ok(freq_mhz
        .iter()
        .map(|&f| reflection_coefficient(cav, f))
        .collect())
}

/// Discretized herald filter: prompt weight `r1` plus the re-emission
/// integrated over each grid interval.
struct HeraldFilter {
    prompt: f64,
    /// Weight of the interval `[0, dt]`.
    first: Complex64,
    /// Ratio between consecutive interval weights, `exp(-beta dt)`.
    ratio: Complex64,
}

impl HeraldFilter {
    fn new(cav: &CavityParams, dt: f64) -> Self {
        let (r1, _) = cav.amplitudes();
        let gamma = 0.5 / cavity_decay_time(cav);
        let beta = Complex64::new(gamma, 2.0 * PI * cav.detuning_mhz * 1e-3);
        let ratio = (-beta * dt).exp();
        let first = -cav.coupling_weight() * gamma * (1.0 - ratio) / beta;
        HeraldFilter {
            prompt: r1,
            first,
            ratio,
        }
    }

    /// Kernel taps `c_m`, with each interval weight split between its two
    /// end nodes (trapezoid rule).
    fn taps(&self, n: usize) -> Vec<Complex64> {
        let mut taps = Vec::with_capacity(n);
        let mut w = self.first;
        let mut prev = Complex64::new(0.0, 0.0);
        for m in 0..n {
            let c = 0.5 * (prev + w) + if m == 0 { self.prompt } else { 0.0 };
            taps.push(c);
            prev = w;
            w *= self.ratio;
        }
        taps
    }

    /// Closed-form `sum_m c_m z^m` for `|z| = 1`.
    fn transfer(&self, z: Complex64) -> Complex64 {
        let w = self.first / (1.0 - self.ratio * z);
        self.prompt + 0.5 * (1.0 + z) * w
    }
}

fn check_shaping_inputs(cav: &CavityParams, tau_p: f64, grid: &TimeGrid) -> Result<()> {
    cav.validate()?;
    if !(tau_p.is_finite() && tau_p > 0.0) {
        return Err(Error::param(
            "tau_p",
            format!("must be positive, got {tau_p}"),
        ));
    }
    let tau_c = cavity_decay_time(cav);
    let ratio = (tau_c / tau_p).max(tau_p / tau_c);
    if ratio > MAX_TAU_RATIO {
        return Err(Error::param(
            "tau_p",
            format!("cavity decay time {tau_c:.2} ns and photon coherence time {tau_p:.2} ns differ by more than {MAX_TAU_RATIO}x; shaping would be poor"),
        ));
    }
    let span = 8.0 * tau_p;
    let tol = grid.step();
    if grid.start() > -span + tol || grid.end() < span - tol {
        return Err(Error::GridTooShort(format!(
            "shaping needs at least [-{span:.2}, {span:.2}] ns, got [{}, {}]",
            grid.start(),
            grid.end()
        )));
    }
    Ok(())
}

/// Unnormalized conditional probe amplitude by direct correlation in time.
pub fn conditional_probe_amplitude(
    cav: &CavityParams,
    tau_p: f64,
    grid: TimeGrid,
) -> Result<Vec<Complex64>> {
    check_shaping_inputs(cav, tau_p, &grid)?;
    let g = make_decaying(tau_p, grid)?;
    let g = g.amplitude();
    let n = g.len();
    let taps = HeraldFilter::new(cav, grid.step()).taps(n);
    Ok((0..n)
        .map(|k| taps.iter().zip(&g[k..]).map(|(c, x)| c * x).sum())
        .collect())
}

/// Same amplitude computed by multiplying spectra and transforming back.
pub fn conditional_probe_amplitude_fft(
    cav: &CavityParams,
    tau_p: f64,
    grid: TimeGrid,
) -> Result<Vec<Complex64>> {
    check_shaping_inputs(cav, tau_p, &grid)?;
    let g = make_decaying(tau_p, grid)?;
    let n = g.amplitude().len();
    let size = (4 * n).next_power_of_two();
    let filter = HeraldFilter::new(cav, grid.step());

    let mut planner = FftPlanner::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    buf[..n].copy_from_slice(g.amplitude());
    planner.plan_fft_forward(size).process(&mut buf);
    // phi_k = sum_m c_m g_{k+m}  <=>  Phi_j = C(exp(+2 pi i j / N)) G_j
    for (j, v) in buf.iter_mut().enumerate() {
        let z = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / size as f64);
        *v *= filter.transfer(z);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let inv = 1.0 / size as f64;
    Ok(buf[..n].iter().map(|v| v * inv).collect())
}

/// Conditional probe envelope for a herald detected at `t = 0`,
/// renormalized to unit norm.
pub fn shape_conditional_probe(
    cav: &CavityParams,
    tau_p: f64,
    grid: TimeGrid,
) -> Result<PhotonEnvelope> {
    let raw = conditional_probe_amplitude(cav, tau_p, grid)?;
    PhotonEnvelope::from_samples(EnvelopeShape::CavityShaped, Some(tau_p), raw, grid)
}
