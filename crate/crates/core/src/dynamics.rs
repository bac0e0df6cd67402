//! Excited-state dynamics of a two-level atom driven by a single photon.
//!
//! The atom is described by the excited-state amplitude `e(t)` obeying
//!
//! ```text
//! de/dt = -e / (2 tau0) + sqrt(lambda / tau0) * xi(t),    P_e = |e|^2
//! ```
//!
//! where `lambda` is the spatial overlap of the photon mode with the atomic
//! dipole mode. The forward detector sees the incident field minus the
//! forward-scattered one, `R_f = |xi - sqrt(lambda / tau0) e|^2`, and the
//! difference `delta = R_f0 - R_f` drives the population according to
//! `dP_e/dt = delta - (1 - lambda) P_e / tau0`.
//!
//! For the exponential envelopes the population has a closed form, which is
//! used both as a fast path and as the oracle for the integrator.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::envelope::{PhotonEnvelope, Profile, Side};
use crate::error::{Error, Result};
use crate::grid::{Series, TimeGrid};

/// Below this separation of `tau_p` and `tau0` (ns) the degenerate branch
/// of the decaying-photon solution is used.
const DEGENERATE_TAU_NS: f64 = 1e-9;
/// Largest relative change of the peak population tolerated when the
/// integration step is halved.
const STEP_CHECK_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomParams {
    tau0: f64,
    lambda: f64,
}

impl AtomParams {
    pub fn new(tau0: f64, lambda: f64) -> Result<Self> {
        if !(tau0.is_finite() && tau0 > 0.0) {
            return Err(Error::param(
                "tau0",
                format!("must be positive, got {tau0}"),
            ));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param(
                "lambda",
                format!("must lie in [0, 1], got {lambda}"),
            ));
        }
        Ok(AtomParams { tau0, lambda })
    }

    /// Excited-state lifetime, ns.
    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    /// Spatial mode overlap.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Natural linewidth `1 / tau0`, ns^-1.
    pub fn gamma0(&self) -> f64 {
        1.0 / self.tau0
    }

    /// Field coupling `sqrt(lambda / tau0)`, ns^-1/2.
    pub fn coupling(&self) -> f64 {
        (self.lambda / self.tau0).sqrt()
    }

    /// Decay rate into modes outside the excitation mode, `(1 - lambda) / tau0`.
    pub fn loss_rate(&self) -> f64 {
        (1.0 - self.lambda) / self.tau0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AnalyticDecaying,
    AnalyticRising,
    OdeNumeric,
    ReconForward,
    ReconBackward,
}

/// Excited-state population sampled on a time grid.
#[derive(Debug, Clone)]
pub struct ExcitationTrace {
    pub grid: TimeGrid,
    pub p_e: Vec<f64>,
    /// Per-sample standard deviation, for reconstructed traces.
    pub sigma: Option<Vec<f64>>,
    /// Complex amplitude `e(t)`, when the trace comes from a model.
    pub amplitude: Option<Vec<Complex64>>,
    pub provenance: Provenance,
}

impl ExcitationTrace {
    /// `(time, value)` of the largest sample.
    pub fn peak(&self) -> (f64, f64) {
        let (k, v) = self.as_series().peak();
        (self.grid.time(k), v)
    }

    pub fn peak_index(&self) -> usize {
        self.as_series().peak().0
    }

    pub fn as_series(&self) -> Series {
        Series {
            grid: self.grid,
            values: self.p_e.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

fn check_tau_p(tau_p: f64) -> Result<()> {
    if tau_p.is_finite() && tau_p > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            "tau_p",
            format!("must be positive, got {tau_p}"),
        ))
    }
}

/// Real excited-state amplitude for a decaying photon.
pub fn amplitude_decaying(atom: &AtomParams, tau_p: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let tau0 = atom.tau0;
    if (tau_p - tau0).abs() < DEGENERATE_TAU_NS {
        return atom.lambda.sqrt() * t / tau0 * (-t / (2.0 * tau0)).exp();
    }
    // (exp(-t/2tau0) - exp(-t/2tau_p)) / (tau0 - tau_p) with the rounding of
    // tau_p - tau0 cancelling between numerator and denominator
    let d = tau_p - tau0;
    let ratio = (-t / (2.0 * tau0)).exp() * (0.5 * t * d / (tau0 * tau_p)).exp_m1() / d;
    (4.0 * atom.lambda * tau0 * tau_p).sqrt() * ratio
}

/// Excited-state population for a decaying photon.
pub fn pe_decaying(atom: &AtomParams, tau_p: f64, t: f64) -> f64 {
    amplitude_decaying(atom, tau_p, t).powi(2)
}

/// `4 lambda tau0 tau_p / (tau_p + tau0)^2`, the rising-photon population at `t = 0`.
pub fn peak_pe_rising(atom: &AtomParams, tau_p: f64) -> f64 {
    4.0 * atom.lambda * atom.tau0 * tau_p / (tau_p + atom.tau0).powi(2)
}

/// Real excited-state amplitude for a rising photon.
pub fn amplitude_rising(atom: &AtomParams, tau_p: f64, t: f64) -> f64 {
    let rate = if t <= 0.0 { t / tau_p } else { -t / atom.tau0 };
    (peak_pe_rising(atom, tau_p) * rate.exp()).sqrt()
}

pub fn pe_rising(atom: &AtomParams, tau_p: f64, t: f64) -> f64 {
    amplitude_rising(atom, tau_p, t).powi(2)
}

/// Time of the decaying-photon population maximum.
pub fn peak_time_decaying(atom: &AtomParams, tau_p: f64) -> f64 {
    let tau0 = atom.tau0;
    if (tau_p - tau0).abs() < DEGENERATE_TAU_NS {
        2.0 * tau0
    } else {
        2.0 * (tau0 / tau_p).ln() / (1.0 / tau_p - 1.0 / tau0)
    }
}

/// Closed-form population maxima `(rising, decaying)`.
pub fn analytic_peaks(atom: &AtomParams, tau_p: f64) -> (f64, f64) {
    let up = peak_pe_rising(atom, tau_p);
    let down = pe_decaying(atom, tau_p, peak_time_decaying(atom, tau_p));
    (up, down)
}

fn analytic_trace(
    atom: &AtomParams,
    tau_p: f64,
    grid: TimeGrid,
    profile: Profile,
) -> Result<ExcitationTrace> {
    check_tau_p(tau_p)?;
    let (amp, provenance): (fn(&AtomParams, f64, f64) -> f64, _) = match profile {
        Profile::Decaying => (amplitude_decaying, Provenance::AnalyticDecaying),
        Profile::Rising => (amplitude_rising, Provenance::AnalyticRising),
    };
    let amplitude: Vec<Complex64> = grid
        .times()
        .map(|t| Complex64::new(amp(atom, tau_p, t), 0.0))
        .collect();
    Ok(ExcitationTrace {
        grid,
        p_e: amplitude.iter().map(|a| a.norm_sqr()).collect(),
        sigma: None,
        amplitude: Some(amplitude),
        provenance,
    })
}

/// Closed-form population for the exponentially decaying photon.
pub fn analytic_pe_decaying(
    atom: &AtomParams,
    tau_p: f64,
    grid: TimeGrid,
) -> Result<ExcitationTrace> {
    analytic_trace(atom, tau_p, grid, Profile::Decaying)
}

/// Closed-form population for the exponentially rising photon.
pub fn analytic_pe_rising(
    atom: &AtomParams,
    tau_p: f64,
    grid: TimeGrid,
) -> Result<ExcitationTrace> {
    analytic_trace(atom, tau_p, grid, Profile::Rising)
}

pub fn analytic_pe(
    atom: &AtomParams,
    tau_p: f64,
    grid: TimeGrid,
    profile: Profile,
) -> Result<ExcitationTrace> {
    analytic_trace(atom, tau_p, grid, profile)
}

/// Continuum rates `(R_f0, R_f, P_e)` at time `t` for a unit-norm
/// exponential photon. `side` selects the limit at `t = 0`.
pub fn analytic_rates_at(
    atom: &AtomParams,
    tau_p: f64,
    profile: Profile,
    t: f64,
    side: Side,
) -> (f64, f64, f64) {
    let xi = profile.amplitude(tau_p, t, side);
    let e = match profile {
        Profile::Decaying => amplitude_decaying(atom, tau_p, t),
        Profile::Rising => amplitude_rising(atom, tau_p, t),
    };
    let r_f0 = xi * xi;
    let r_f = (xi - atom.coupling() * e).powi(2);
    (r_f0, r_f, e * e)
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// RK4 steps per grid interval.
    pub substeps: usize,
    /// Reject the solution if halving the step moves the peak by more than 1e-4 (relative).
    pub check_step: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            substeps: 1,
            check_step: true,
        }
    }
}

fn integrate(atom: &AtomParams, env: &PhotonEnvelope, substeps: usize) -> Vec<Complex64> {
    let grid = env.grid();
    let decay = 0.5 / atom.tau0;
    let g = atom.coupling();
    let h = grid.step() / substeps as f64;
    let rhs = |e: Complex64, xi: Complex64| -e * decay + xi * g;

    let mut e = Complex64::new(0.0, 0.0);
    let mut out = Vec::with_capacity(grid.len());
    out.push(e);
    for k in 0..grid.len() - 1 {
        let (t_k, t_next) = (grid.time(k), grid.time(k + 1));
        for j in 0..substeps {
            let s = t_k + j as f64 * h;
            let s1 = if j + 1 == substeps { t_next } else { s + h };
            // the drive may jump at a node: use the limit from inside the step
            let xi0 = env.amplitude_at(s, Side::Right);
            let xim = env.amplitude_at(s + 0.5 * h, Side::Right);
            let xi1 = env.amplitude_at(s1, Side::Left);
            let k1 = rhs(e, xi0);
            let k2 = rhs(e + k1 * (0.5 * h), xim);
            let k3 = rhs(e + k2 * (0.5 * h), xim);
            let k4 = rhs(e + k3 * h, xi1);
            e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out.push(e);
    }
    out
}

fn peak_norm(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max)
}

/// Integrate the amplitude equation on the envelope grid, starting from
/// the ground state at the first node.
pub fn solve_amplitude_ode(atom: &AtomParams, env: &PhotonEnvelope) -> Result<ExcitationTrace> {
    solve_amplitude_ode_with(atom, env, OdeOptions::default())
}

pub fn solve_amplitude_ode_with(
    atom: &AtomParams,
    env: &PhotonEnvelope,
    opts: OdeOptions,
) -> Result<ExcitationTrace> {
    let substeps = opts.substeps.max(1);
    let amplitude = integrate(atom, env, substeps);
    if opts.check_step {
        let fine = integrate(atom, env, 2 * substeps);
        let (p, q) = (peak_norm(&amplitude), peak_norm(&fine));
        if q > 0.0 {
            let relative_change = (p - q).abs() / q;
            if relative_change > STEP_CHECK_RTOL {
                return Err(Error::StepTooCoarse { relative_change });
            }
        }
    }
    Ok(ExcitationTrace {
        grid: *env.grid(),
        p_e: amplitude.iter().map(|a| a.norm_sqr()).collect(),
        sigma: None,
        amplitude: Some(amplitude),
        provenance: Provenance::OdeNumeric,
    })
}

fn trace_amplitude<'a>(
    env: &PhotonEnvelope,
    trace: &'a ExcitationTrace,
) -> Result<&'a [Complex64]> {
    env.grid()
        .ensure_same(&trace.grid, "envelope vs excitation trace")?;
    trace.amplitude.as_deref().ok_or_else(|| {
        Error::Degenerate(
            "trace carries no amplitude (reconstructed traces cannot drive rates)".into(),
        )
    })
}

/// Forward detection rate with the atom present, `|xi - sqrt(lambda/tau0) e|^2`.
///
/// At a node where the envelope jumps the mean of the two one-sided rates
/// is returned, consistent with how the envelope itself is sampled.
pub fn forward_rate(
    atom: &AtomParams,
    env: &PhotonEnvelope,
    trace: &ExcitationTrace,
) -> Result<Series> {
    let amp = trace_amplitude(env, trace)?;
    let g = atom.coupling();
    let values = amp
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let (l, r) = env.limits_at_node(k);
            if l == r {
                (l - e * g).norm_sqr()
            } else {
                0.5 * ((l - e * g).norm_sqr() + (r - e * g).norm_sqr())
            }
        })
        .collect();
    Series::new(*env.grid(), values)
}

/// `R_f0 - R_f`, pointwise. Uncertainties add in quadrature.
pub fn delta_rate(r_f0: &Series, r_f: &Series) -> Result<Series> {
    r_f0.grid.ensure_same(&r_f.grid, "delta_rate")?;
    let values = r_f0
        .values
        .iter()
        .zip(&r_f.values)
        .map(|(a, b)| a - b)
        .collect();
    let sigma = match (&r_f0.sigma, &r_f.sigma) {
        (None, None) => None,
        _ => Some(
            (0..r_f0.len())
                .map(|k| r_f0.sigma_or_zero(k).hypot(r_f.sigma_or_zero(k)))
                .collect(),
        ),
    };
    Ok(Series {
        grid: r_f0.grid,
        values,
        sigma,
    })
}

/// Backward detection rate `eta_b P_e / tau0`.
pub fn backward_rate(atom: &AtomParams, trace: &ExcitationTrace, eta_b: f64) -> Result<Series> {
    if !(0.0..=1.0).contains(&eta_b) {
        return Err(Error::param(
            "eta_b",
            format!("must lie in [0, 1], got {eta_b}"),
        ));
    }
    let values = trace.p_e.iter().map(|p| eta_b * p / atom.tau0).collect();
    Series::new(trace.grid, values)
}

/// `lambda (1 - lambda) 4 tau_p / (tau0 + tau_p)`; identical for both profiles.
pub fn extinction_closed_form(atom: &AtomParams, tau_p: f64) -> f64 {
    atom.lambda * (1.0 - atom.lambda) * 4.0 * tau_p / (atom.tau0 + tau_p)
}

/// `(sum, sigma)` of `values * step` over samples with `lo <= t_i <= hi`.
pub(crate) fn windowed_sum(series: &Series, window: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = window;
    let tol = 1e-9 * series.grid.step();
    let dt = series.grid.step();
    let mut sum = 0.0;
    let mut var = 0.0;
    for (k, (t, v)) in series.iter().enumerate() {
        if t >= lo - tol && t <= hi + tol {
            sum += v;
            var += series.sigma_or_zero(k).powi(2);
        }
    }
    (sum * dt, var.sqrt() * dt)
}

/// Extinction `dt * sum delta(t_i)` over `lo <= t_i <= hi`.
pub fn extinction_numeric(delta: &Series, window: (f64, f64)) -> f64 {
    windowed_sum(delta, window).0
}

/// Full forward solution for one envelope.
#[derive(Debug, Clone)]
pub struct Scattering {
    pub trace: ExcitationTrace,
    pub r_f0: Series,
    pub r_f: Series,
    pub delta: Series,
}

impl Scattering {
    pub fn extinction(&self) -> f64 {
        self.delta.integral()
    }
}

/// Integrate the dynamics and derive the forward rates.
pub fn scatter(atom: &AtomParams, env: &PhotonEnvelope) -> Result<Scattering> {
    let trace = solve_amplitude_ode(atom, env)?;
    let r_f0 = env.intensity();
    let r_f = forward_rate(atom, env, &trace)?;
    let delta = delta_rate(&r_f0, &r_f)?;
    Ok(Scattering {
        trace,
        r_f0,
        r_f,
        delta,
    })
}

/// Integrals of `R_f0`, `R_f` and `P_e` over each grid interval.
#[derive(Debug, Clone)]
pub struct IntervalIntegrals {
    pub grid: TimeGrid,
    pub r_f0: Vec<f64>,
    pub r_f: Vec<f64>,
    pub p_e: Vec<f64>,
}

/// Trapezoid integrals over `[t_k, t_k+1]` using the one-sided envelope
/// limits inside each interval, so a jump never leaks into its neighbour.
pub fn interval_integrals(
    atom: &AtomParams,
    env: &PhotonEnvelope,
    trace: &ExcitationTrace,
) -> Result<IntervalIntegrals> {
    let amp = trace_amplitude(env, trace)?;
    let g = atom.coupling();
    let half_dt = 0.5 * env.grid().step();
    let n = amp.len() - 1;
    let (mut r_f0, mut r_f, mut p_e) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for k in 0..n {
        let (_, xa) = env.limits_at_node(k);
        let (xb, _) = env.limits_at_node(k + 1);
        let (ea, eb) = (amp[k], amp[k + 1]);
        r_f0.push(half_dt * (xa.norm_sqr() + xb.norm_sqr()));
        r_f.push(half_dt * ((xa - ea * g).norm_sqr() + (xb - eb * g).norm_sqr()));
        p_e.push(half_dt * (ea.norm_sqr() + eb.norm_sqr()));
    }
    Ok(IntervalIntegrals {
        grid: *env.grid(),
        r_f0,
        r_f,
        p_e,
    })
}
