//! Single-photon temporal envelopes.
//!
//! An envelope is a complex amplitude `xi(t)` in ns^-1/2 sampled on a
//! uniform [`TimeGrid`] and normalized so that `sum |xi_k|^2 dt = 1`.
//! The exponential shapes are kept in closed form as well, so that
//! integrators can evaluate them between nodes and on either side of the
//! step at `t = 0`.
//!
//! At a node where the amplitude jumps, the stored sample has the phase of
//! the nonzero side and the magnitude `sqrt((|left|^2 + |right|^2) / 2)`.
//! With that convention the discrete norm is a trapezoid sum and the
//! renormalization factor differs from one only at second order in `dt`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Series, TimeGrid};

/// Default sampling step of envelope grids, ns.
pub const DEFAULT_STEP_NS: f64 = 0.05;
/// Default half-span of envelope grids in units of the coherence time.
pub const DEFAULT_SPAN_TAUS: f64 = 8.0;
/// Minimum fraction of the continuum norm an exponential envelope must
/// keep on its grid.
const MIN_NORM_FRACTION: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeShape {
    ExpDecaying,
    ExpRising,
    Tabulated,
    CavityShaped,
}

/// The two exponential photon profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Decaying,
    Rising,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rising" | "up" => Ok(Profile::Rising),
            "decaying" | "down" => Ok(Profile::Decaying),
            _ => Err(Error::Config(format!(
                "unknown envelope profile `{s}`, expected `rising` or `decaying`"
            ))),
        }
    }
}

impl Profile {
    pub fn make(self, tau_p: f64, grid: TimeGrid) -> Result<PhotonEnvelope> {
        match self {
            Profile::Decaying => make_decaying(tau_p, grid),
            Profile::Rising => make_rising(tau_p, grid),
        }
    }

    /// Summation window for the extinction, ns: `[-14, 100]` for decaying
    /// photons and `[-100, 14]` for rising ones.
    pub fn extinction_window(self) -> (f64, f64) {
        match self {
            Profile::Decaying => (-14.0, 100.0),
            Profile::Rising => (-100.0, 14.0),
        }
    }

    /// Closed-form amplitude of the unit-norm continuum photon.
    pub fn amplitude(self, tau_p: f64, t: f64, side: Side) -> f64 {
        match self {
            Profile::Decaying => decaying_closed_form(tau_p, t, side),
            Profile::Rising => rising_closed_form(tau_p, t, side),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Decaying => "decaying",
            Profile::Rising => "rising",
        }
    }
}

/// Which one-sided limit to take at a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonEnvelope {
    shape: EnvelopeShape,
    tau_p: Option<f64>,
    grid: TimeGrid,
    amplitude: Vec<Complex64>,
    /// Factor applied to the closed form by discrete renormalization.
    scale: f64,
}

/// Grid spanning `[-8 tau_p, 8 tau_p]` at 0.05 ns.
pub fn default_grid(tau_p: f64) -> Result<TimeGrid> {
    TimeGrid::symmetric(DEFAULT_SPAN_TAUS * tau_p, DEFAULT_STEP_NS)
}

fn check_tau(tau_p: f64) -> Result<()> {
    if tau_p.is_finite() && tau_p > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            "tau_p",
            format!("must be positive, got {tau_p}"),
        ))
    }
}

/// Unnormalized `xi_down(t) = exp(-t / 2 tau_p) / sqrt(tau_p)` for `t > 0`.
fn decaying_closed_form(tau_p: f64, t: f64, side: Side) -> f64 {
    let inside = t > 0.0 || (t == 0.0 && side == Side::Right);
    if inside {
        (-t / (2.0 * tau_p)).exp() / tau_p.sqrt()
    } else {
        0.0
    }
}

fn rising_closed_form(tau_p: f64, t: f64, side: Side) -> f64 {
    let flipped = match side {
        Side::Left => Side::Right,
        Side::Right => Side::Left,
    };
    decaying_closed_form(tau_p, -t, flipped)
}

fn jump_sample(left: Complex64, right: Complex64) -> Complex64 {
    if left == right {
        return left;
    }
    let mag = ((left.norm_sqr() + right.norm_sqr()) / 2.0).sqrt();
    let phase = if right.norm_sqr() >= left.norm_sqr() {
        right.arg()
    } else {
        left.arg()
    };
    Complex64::from_polar(mag, phase)
}

fn discrete_norm(amplitude: &[Complex64], dt: f64) -> f64 {
    amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * dt
}

impl PhotonEnvelope {
    fn exponential(shape: EnvelopeShape, tau_p: f64, grid: TimeGrid) -> Result<Self> {
        check_tau(tau_p)?;
        let form = match shape {
            EnvelopeShape::ExpDecaying => decaying_closed_form,
            EnvelopeShape::ExpRising => rising_closed_form,
            _ => unreachable!("not an exponential shape"),
        };
        // continuum norm kept on [start, end]
        let (lo, hi) = match shape {
            EnvelopeShape::ExpDecaying => (grid.start(), grid.end()),
            _ => (-grid.end(), -grid.start()),
        };
        let kept = (-lo.max(0.0) / tau_p).exp() - (-hi.max(0.0) / tau_p).exp();
        if kept < MIN_NORM_FRACTION {
            return Err(Error::GridTooShort(format!(
                "grid [{}, {}] keeps only {:.4}% of the photon (tau_p = {tau_p} ns)",
                grid.start(),
                grid.end(),
                100.0 * kept
            )));
        }
        let amplitude: Vec<Complex64> = grid
            .times()
            .map(|t| {
                let l = Complex64::new(form(tau_p, t, Side::Left), 0.0);
                let r = Complex64::new(form(tau_p, t, Side::Right), 0.0);
                jump_sample(l, r)
            })
            .collect();
        let scale = 1.0 / discrete_norm(&amplitude, grid.step()).sqrt();
        let amplitude = amplitude.into_iter().map(|a| a * scale).collect();
        Ok(PhotonEnvelope {
            shape,
            tau_p: Some(tau_p),
            grid,
            amplitude,
            scale,
        })
    }

    /// Generic renormalizing constructor for sampled amplitudes.
    pub(crate) fn from_samples(
        shape: EnvelopeShape,
        tau_p: Option<f64>,
        samples: Vec<Complex64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} nodes",
                samples.len(),
                grid.len()
            )));
        }
        if samples
            .iter()
            .any(|a| !(a.re.is_finite() && a.im.is_finite()))
        {
            return Err(Error::Degenerate(
                "envelope samples contain NaN or Inf".into(),
            ));
        }
        let norm = discrete_norm(&samples, grid.step());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("envelope has zero norm".into()));
        }
        let scale = 1.0 / norm.sqrt();
        Ok(PhotonEnvelope {
            shape,
            tau_p,
            grid,
            amplitude: samples.into_iter().map(|a| a * scale).collect(),
            scale,
        })
    }

    pub fn shape(&self) -> EnvelopeShape {
        self.shape
    }

    /// Exponential profile, if this is one of the closed-form shapes.
    pub fn profile(&self) -> Option<Profile> {
        match self.shape {
            EnvelopeShape::ExpDecaying => Some(Profile::Decaying),
            EnvelopeShape::ExpRising => Some(Profile::Rising),
            _ => None,
        }
    }

    /// Coherence time for exponential and cavity-shaped envelopes.
    pub fn tau_p(&self) -> Option<f64> {
        self.tau_p
    }

    /// Lorentzian FWHM `1 / tau_p` of the power spectrum in angular units (rad/ns).
    pub fn linewidth(&self) -> Option<f64> {
        self.tau_p.map(|t| 1.0 / t)
    }

    /// Same width in ordinary frequency, MHz.
    pub fn linewidth_mhz(&self) -> Option<f64> {
        self.tau_p.map(|t| 1e3 / (2.0 * PI * t))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn amplitude(&self) -> &[Complex64] {
        &self.amplitude
    }

    /// Factor applied to the input samples (or closed form) to reach unit
    /// discrete norm.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `sum |xi_k|^2 dt`.
    pub fn norm(&self) -> f64 {
        discrete_norm(&self.amplitude, self.grid.step())
    }

    /// Detection rate `|xi(t)|^2` without an atom, ns^-1.
    pub fn intensity(&self) -> Series {
        let values = self.amplitude.iter().map(|a| a.norm_sqr()).collect();
        Series::new(self.grid, values).expect("lengths agree")
    }

    /// Amplitude at an arbitrary time.
    ///
    /// Exponential shapes use their closed form (times the renormalization
    /// factor) and honour `side` at `t = 0`. Sampled shapes are linearly
    /// interpolated and vanish outside the grid.
    pub fn amplitude_at(&self, t: f64, side: Side) -> Complex64 {
        match (self.shape, self.tau_p) {
            (EnvelopeShape::ExpDecaying, Some(tau)) => {
                Complex64::new(self.scale * decaying_closed_form(tau, t, side), 0.0)
            }
            (EnvelopeShape::ExpRising, Some(tau)) => {
                Complex64::new(self.scale * rising_closed_form(tau, t, side), 0.0)
            }
            _ => self.interpolate(t),
        }
    }

    fn interpolate(&self, t: f64) -> Complex64 {
        let x = (t - self.grid.start()) / self.grid.step();
        let last = (self.grid.len() - 1) as f64;
        if !(x >= -1e-9 && x <= last + 1e-9) {
            return Complex64::new(0.0, 0.0);
        }
        let x = x.clamp(0.0, last);
        let k = (x.floor() as usize).min(self.grid.len() - 2);
        let w = x - k as f64;
        self.amplitude[k] * (1.0 - w) + self.amplitude[k + 1] * w
    }

    /// One-sided limits `(xi(t_k^-), xi(t_k^+))` at node `k`.
    pub fn limits_at_node(&self, k: usize) -> (Complex64, Complex64) {
        match self.shape {
            EnvelopeShape::ExpDecaying | EnvelopeShape::ExpRising => {
                let t = self.grid.time(k);
                (
                    self.amplitude_at(t, Side::Left),
                    self.amplitude_at(t, Side::Right),
                )
            }
            _ => (self.amplitude[k], self.amplitude[k]),
        }
    }

    /// Mirror image `t -> -t`. Exponential shapes swap kind.
    pub fn time_reverse(&self) -> PhotonEnvelope {
        let grid = TimeGrid::new(-self.grid.end(), self.grid.step(), self.grid.len())
            .expect("mirrored grid is valid");
        let shape = match self.shape {
            EnvelopeShape::ExpDecaying => EnvelopeShape::ExpRising,
            EnvelopeShape::ExpRising => EnvelopeShape::ExpDecaying,
            s => s,
        };
        PhotonEnvelope {
            shape,
            tau_p: self.tau_p,
            grid,
            amplitude: self.amplitude.iter().rev().copied().collect(),
            scale: self.scale,
        }
    }

    /// `<self|other> = sum conj(self_k) other_k dt` on a shared grid.
    pub fn inner_product(&self, other: &PhotonEnvelope) -> Result<Complex64> {
        self.grid
            .ensure_same(&other.grid, "envelope inner product")?;
        let s: Complex64 = self
            .amplitude
            .iter()
            .zip(&other.amplitude)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.step())
    }

    /// Mode overlap `|<self|other>|^2`.
    pub fn overlap(&self, other: &PhotonEnvelope) -> Result<f64> {
        Ok(self.inner_product(other)?.norm_sqr())
    }
}

/// Exponentially decaying photon `Theta(t) exp(-t / 2 tau_p) / sqrt(tau_p)`.
pub fn make_decaying(tau_p: f64, grid: TimeGrid) -> Result<PhotonEnvelope> {
    PhotonEnvelope::exponential(EnvelopeShape::ExpDecaying, tau_p, grid)
}

/// Exponentially rising photon `Theta(-t) exp(t / 2 tau_p) / sqrt(tau_p)`.
pub fn make_rising(tau_p: f64, grid: TimeGrid) -> Result<PhotonEnvelope> {
    PhotonEnvelope::exponential(EnvelopeShape::ExpRising, tau_p, grid)
}

/// User-supplied samples, renormalized to unit norm.
pub fn make_tabulated(samples: Vec<Complex64>, grid: TimeGrid) -> Result<PhotonEnvelope> {
    PhotonEnvelope::from_samples(EnvelopeShape::Tabulated, None, samples, grid)
}

/// Power spectral density of an envelope on an ordinary-frequency axis.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Frequencies relative to the carrier, MHz, ascending.
    pub freq_mhz: Vec<f64>,
    /// Density in MHz^-1, normalized so that `sum density * df = 1`.
    pub density: Vec<f64>,
}

impl Spectrum {
    pub fn df_mhz(&self) -> f64 {
        self.freq_mhz[1] - self.freq_mhz[0]
    }

    pub fn peak(&self) -> (usize, f64) {
        self.density
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (k, v)| if v > b.1 { (k, v) } else { b },
            )
    }

    /// Full width at half maximum by linear interpolation of the crossings.
    pub fn fwhm_mhz(&self) -> f64 {
        let (kp, peak) = self.peak();
        let half = peak / 2.0;
        let d = &self.density;
        let f = &self.freq_mhz;
        let mut hi = kp;
        while hi + 1 < d.len() && d[hi + 1] > half {
            hi += 1;
        }
        let mut lo = kp;
        while lo > 0 && d[lo - 1] > half {
            lo -= 1;
        }
        let cross = |a: usize, b: usize| f[a] + (half - d[a]) * (f[b] - f[a]) / (d[b] - d[a]);
        let right = if hi + 1 < d.len() {
            cross(hi, hi + 1)
        } else {
            f[hi]
        };
        let left = if lo > 0 { cross(lo - 1, lo) } else { f[lo] };
        right - left
    }
}

/// Minimum number of FFT points; sets the frequency resolution.
const MIN_FFT_LEN: usize = 1 << 17;

/// `|FT xi|^2` on a zero-padded FFT grid, normalized to unit integral.
pub fn power_spectrum(env: &PhotonEnvelope) -> Spectrum {
    let n = (8 * env.grid().len()).max(MIN_FFT_LEN).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..env.amplitude.len()].copy_from_slice(&env.amplitude);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let dt = env.grid().step();
    let df_mhz = 1e3 / (n as f64 * dt);
    let half = n / 2;
    let mut freq_mhz = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    // fftshift: bins half..n are the negative frequencies
    for j in (half..n).chain(0..half) {
        let signed = if j >= half {
            j as f64 - n as f64
        } else {
            j as f64
        };
        freq_mhz.push(signed * df_mhz);
        density.push(buf[j].norm_sqr());
    }
    let total: f64 = density.iter().sum::<f64>() * df_mhz;
    density.iter_mut().for_each(|v| *v /= total);
    Spectrum { freq_mhz, density }
}
