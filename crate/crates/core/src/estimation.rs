//! Parameter estimation from binned data and a spectral overlap figure.
//!
//! Envelope fits maximize the Poisson likelihood of raw counts and report
//! Pearson's chi-square at the optimum. Overlap fits are weighted least
//! squares on the measured rate change; bins carry `sqrt(max(counts, 1))`
//! uncertainties, and the weights use the variances the model predicts.
//! Both are solved by damped Gauss-Newton iterations. Model values are
//! exact bin integrals of the closed-form rates, so noiseless inputs are
//! recovered exactly.

use serde::{Deserialize, Serialize};

use crate::dynamics::{amplitude_decaying, amplitude_rising, AtomParams};
use crate::envelope::{power_spectrum, PhotonEnvelope, Profile, Side};
use crate::error::{Error, Result};
use crate::grid::{Series, TimeGrid};
use crate::histogram::BinnedCounts;
use crate::lm::{minimize, LmOptions, LmSolution};
use crate::synthesis::EfficiencyChain;

/// Fewest bins with counts an envelope fit accepts.
pub const MIN_OCCUPIED_BINS: usize = 20;
/// Sub-intervals per bin for numerical bin averages of the scattering model.
const BIN_QUADRATURE: usize = 64;
/// A fitted overlap further than this many standard deviations outside
/// `[0, 1]` is rejected.
const LAMBDA_RANGE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub profile: Profile,
    pub tau_p: f64,
    pub tau_p_sigma: f64,
    /// Expected true counts in the whole photon, `n_heralds * eta_f`.
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    /// Flat background per bin, held fixed.
    pub background: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
    pub n_iterations: usize,
    /// Objective value after each accepted iteration.
    pub objective_history: Vec<f64>,
    pub window_ns: (f64, f64),
}

impl EnvelopeFit {
    /// Forward coincidence probability per herald implied by the amplitude.
    pub fn eta_f(&self, n_heralds: f64) -> (f64, f64) {
        (self.amplitude / n_heralds, self.amplitude_sigma / n_heralds)
    }
}

/// Fraction of a unit-norm exponential photon arriving in `[a, b]`.
pub fn bin_fraction(profile: Profile, tau_p: f64, a: f64, b: f64) -> f64 {
    let decaying = |a: f64, b: f64| {
        if b <= 0.0 {
            0.0
        } else {
            (-a.max(0.0) / tau_p).exp() - (-b / tau_p).exp()
        }
    };
    match profile {
        Profile::Decaying => decaying(a, b),
        Profile::Rising => decaying(-b, -a),
    }
}

/// Signed square root of one bin's Poisson deviance. `None` when the
/// expectation is negative, or zero under observed counts.
fn poisson_deviance_residual(c: f64, mu: f64) -> Option<f64> {
    if mu < 0.0 || (mu == 0.0 && c > 0.0) {
        return None;
    }
    let d = if c > 0.0 {
        c * (c / mu).ln() - (c - mu)
    } else {
        mu
    };
    Some((c - mu).signum() * (2.0 * d.max(0.0)).sqrt())
}

fn select_bins(bins: &crate::histogram::BinSpec, window: (f64, f64)) -> Vec<usize> {
    let tol = 1e-9 * bins.width;
    (0..bins.count)
        .filter(|&i| {
            let t = bins.bin_start(i);
            t >= window.0 - tol && t <= window.1 + tol
        })
        .collect()
}

fn dof(sol: &LmSolution) -> usize {
    sol.n_residuals.saturating_sub(sol.params.len())
}

fn sd(sol: &LmSolution, j: usize) -> f64 {
    sol.covariance[(j, j)].max(0.0).sqrt()
}

/// Fit `amplitude * fraction_i(tau_p) + background` to the raw counts of
/// the bins whose start lies in `window`. The background, in counts per
/// bin, is measured elsewhere (for example from the accidental floor) and
/// held fixed.
pub fn fit_envelope(
    data: &BinnedCounts,
    profile: Profile,
    window: (f64, f64),
    background: f64,
) -> Result<EnvelopeFit> {
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::param(
            "background",
            format!("must be finite and non-negative, got {background}"),
        ));
    }
    let idx = select_bins(&data.bins, window);
    let occupied = idx.iter().filter(|&&i| data.counts[i] > 0.0).count();
    if occupied < MIN_OCCUPIED_BINS {
        return Err(Error::Degenerate(format!(
            "{occupied} bins with counts in [{}, {}] ns; need at least {MIN_OCCUPIED_BINS}",
            window.0, window.1
        )));
    }
    let first = data.counts[idx[0]];
    if idx.iter().all(|&i| data.counts[i] == first) {
        return Err(Error::Degenerate(
            "flat histogram carries no envelope".into(),
        ));
    }
    let edges: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (data.bins.bin_start(i), data.bins.bin_end(i)))
        .collect();
    let obs: Vec<f64> = idx.iter().map(|&i| data.counts[i]).collect();
    if let Some(c) = obs.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::param(
            "counts",
            format!("envelope fits need raw non-negative counts, got {c}"),
        ));
    }
    let model = |p: &[f64]| -> Option<Vec<f64>> {
        let (tau, amp) = (p[0], p[1]);
        if !(tau > 0.0 && tau.is_finite()) {
            return None;
        }
        Some(
            edges
                .iter()
                .map(|(a, b)| amp * bin_fraction(profile, tau, *a, *b) + background)
                .collect(),
        )
    };
    // Poisson deviance residuals: their squares sum to the likelihood-ratio
    // statistic, so the least-squares minimum is the maximum-likelihood fit.
    let residuals = |p: &[f64]| {
        model(p)?
            .iter()
            .zip(&obs)
            .map(|(&mu, &c)| poisson_deviance_residual(c, mu))
            .collect()
    };

    // moment estimate of tau_p from the counts' distance to t = 0
    let (mut m0, mut m1) = (0.0, 0.0);
    for ((a, b), o) in edges.iter().zip(&obs) {
        let t = 0.5 * (a + b);
        let w = o.max(0.0);
        m0 += w;
        m1 += w * t.abs();
    }
    let tau0 = if m0 > 0.0 {
        (m1 / m0).clamp(0.5, 200.0)
    } else {
        10.0
    };
    let total = (obs.iter().sum::<f64>() - background * obs.len() as f64).max(1.0);
    let x0 = [tau0, total];
    let scales = [1.0, total];
    let sol = minimize(residuals, &x0, &scales, LmOptions::default()).map_err(|e| match e {
        Error::Degenerate(_) if residuals(&x0).is_none() => {
            Error::Degenerate("counts fall where the model and background predict none".into())
        }
        e => e,
    })?;
    let dof = dof(&sol);
    // goodness of fit is Pearson's statistic at the likelihood maximum
    let chi2: f64 = model(&sol.params)
        .expect("solution lies in the model domain")
        .iter()
        .zip(&obs)
        .map(|(&mu, &c)| (c - mu).powi(2) / mu.max(f64::MIN_POSITIVE))
        .sum();
    Ok(EnvelopeFit {
        profile,
        tau_p: sol.params[0],
        tau_p_sigma: sd(&sol, 0),
        amplitude: sol.params[1],
        amplitude_sigma: sd(&sol, 1),
        background,
        chi2,
        dof,
        chi2_reduced: chi2 / dof.max(1) as f64,
        n_iterations: sol.iterations,
        objective_history: sol.history,
        window_ns: window,
    })
}

/// Measured change of the forward rate for one envelope shape, restricted
/// to a window.
#[derive(Debug, Clone)]
pub struct DeltaData {
    pub profile: Profile,
    /// `R_f0 - R_f` per bin with its uncertainty; nodes are bin starts.
    pub delta: Series,
    pub window: (f64, f64),
    /// Counting model behind `delta`; when present the overlap fit weights
    /// bins by predicted rather than observed variances.
    pub counting: Option<CountingNoise>,
}

/// How `delta` arose from two Poisson histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountingNoise {
    /// Rate per count for `G_f0` and `G_f`, `1 / (N eta_f dt)`.
    pub per_count: (f64, f64),
    /// Subtracted accidental floor of each histogram, counts per bin.
    pub floor: (f64, f64),
}

impl CountingNoise {
    /// Variance of `delta` in one bin whose no-atom rate is `r0` and whose
    /// predicted change is `d`. Expected counts are floored at one, as for
    /// observed counts.
    pub fn variance(&self, r0: f64, d: f64) -> f64 {
        let (n0, n1) = self.per_count;
        let mu0 = (r0 / n0 + self.floor.0).max(1.0);
        let mu1 = ((r0 - d) / n1 + self.floor.1).max(1.0);
        mu0 * n0 * n0 + mu1 * n1 * n1
    }
}

impl DeltaData {
    /// Build from (accidental-corrected) counts. Each count's uncertainty
    /// is floored at one count, so empty bins keep a finite weight.
    pub fn from_counts(
        g_f0: &BinnedCounts,
        g_f: &BinnedCounts,
        chain: &EfficiencyChain,
        profile: Profile,
        window: (f64, f64),
    ) -> Result<Self> {
        g_f0.bins.ensure_same(&g_f.bins, "G_f0 vs G_f")?;
        if !(g_f0.n_heralds > 0.0 && g_f.n_heralds > 0.0) {
            return Err(Error::param("n_heralds", "histogram has no heralds"));
        }
        if !(chain.eta_f > 0.0) {
            return Err(Error::param("eta_f", "must be positive"));
        }
        let dt = g_f0.bins.width;
        let n0 = 1.0 / (g_f0.n_heralds * chain.eta_f * dt);
        let n1 = 1.0 / (g_f.n_heralds * chain.eta_f * dt);
        let values = (0..g_f0.bins.count)
            .map(|i| g_f0.counts[i] * n0 - g_f.counts[i] * n1)
            .collect();
        let sigma = (0..g_f0.bins.count)
            .map(|i| (g_f0.weight_sigma(i) * n0).hypot(g_f.weight_sigma(i) * n1))
            .collect();
        let grid = TimeGrid::new(g_f0.bins.start, dt, g_f0.bins.count)?;
        Ok(DeltaData {
            profile,
            delta: Series::with_sigma(grid, values, sigma)?,
            window,
            counting: Some(CountingNoise {
                per_count: (n0, n1),
                floor: (0.0, 0.0),
            }),
        })
    }

    /// Record the accidental floors, in counts per bin, that were
    /// subtracted from the two histograms.
    pub fn with_floors(mut self, f0: f64, f: f64) -> Self {
        if let Some(c) = &mut self.counting {
            c.floor = (f0, f);
        }
        self
    }
}

/// Bin averages of the two terms of `delta = lambda f1 - lambda^2 f2`,
/// `f1 = 2 xi e1 / sqrt(tau0)` and `f2 = e1^2 / tau0`, where `e1` is the
/// excited-state amplitude at unit overlap.
pub fn delta_basis(profile: Profile, tau_p: f64, tau0: f64, a: f64, b: f64) -> (f64, f64) {
    let unit = AtomParams::new(tau0, 1.0).expect("positive tau0");
    let e1 = |t: f64| match profile {
        Profile::Decaying => amplitude_decaying(&unit, tau_p, t),
        Profile::Rising => amplitude_rising(&unit, tau_p, t),
    };
    let terms = |t: f64, side: Side| {
        let xi = profile.amplitude(tau_p, t, side);
        let e = e1(t);
        (2.0 * xi * e / tau0.sqrt(), e * e / tau0)
    };
    // Simpson on each side of the envelope's jump at t = 0
    let simpson = |lo: f64, hi: f64| {
        let h = (hi - lo) / BIN_QUADRATURE as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for j in 0..=BIN_QUADRATURE {
            let w = if j == 0 || j == BIN_QUADRATURE {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let side = if j == BIN_QUADRATURE {
                Side::Left
            } else {
                Side::Right
            };
            let (f1, f2) = terms(lo + j as f64 * h, side);
            s1 += w * f1;
            s2 += w * f2;
        }
        (s1 * h / 3.0, s2 * h / 3.0)
    };
    let (i1, i2) = if a < 0.0 && b > 0.0 {
        let (l1, l2) = simpson(a, 0.0);
        let (r1, r2) = simpson(0.0, b);
        (l1 + r1, l2 + r2)
    } else {
        simpson(a, b)
    };
    (i1 / (b - a), i2 / (b - a))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub lambda_sigma: f64,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
    pub n_iterations: usize,
    pub objective_history: Vec<f64>,
}

/// Fit the overlap to one or more measured `delta` curves with `tau_p`
/// and `tau0` held fixed.
///
/// The model is written as the polynomial `lambda f1 - lambda^2 f2` so the
/// estimate may wander slightly below zero on atom-free data. Estimates
/// more than three standard deviations outside `[0, 1]` are rejected.
pub fn fit_lambda(data: &[DeltaData], tau_p: f64, tau0: f64) -> Result<LambdaFit> {
    if !(tau_p > 0.0 && tau0 > 0.0) {
        return Err(Error::param("tau_p", "time constants must be positive"));
    }
    // per bin: delta basis, observation, observed sigma, no-atom rate and
    // counting model
    struct Bin {
        f1: f64,
        f2: f64,
        value: f64,
        sigma: f64,
        r0: f64,
        counting: Option<CountingNoise>,
    }
    let mut bins = Vec::new();
    for d in data {
        let g = &d.delta.grid;
        let tol = 1e-9 * g.step();
        for (k, (t, v)) in d.delta.iter().enumerate() {
            if t < d.window.0 - tol || t > d.window.1 + tol {
                continue;
            }
            let s = d.delta.sigma_or_zero(k);
            if d.counting.is_none() && !(s > 0.0) {
                return Err(Error::Degenerate(format!(
                    "delta at {t} ns has no uncertainty"
                )));
            }
            let (a, b) = (t, t + g.step());
            let (f1, f2) = delta_basis(d.profile, tau_p, tau0, a, b);
            bins.push(Bin {
                f1,
                f2,
                value: v,
                sigma: s,
                r0: bin_fraction(d.profile, tau_p, a, b) / (b - a),
                counting: d.counting,
            });
        }
    }
    if bins.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than two bins inside the fit windows".into(),
        ));
    }
    // Observed-count weights correlate with each bin's own fluctuation and
    // pull the estimate low by about one count per bin; predicted variances
    // at the current estimate avoid that.
    let residuals = |p: &[f64]| {
        let l = p[0];
        Some(
            bins.iter()
                .map(|b| {
                    let model = l * b.f1 - l * l * b.f2;
                    let s = match &b.counting {
                        Some(c) => c.variance(b.r0, model).sqrt(),
                        None => b.sigma,
                    };
                    (model - b.value) / s
                })
                .collect(),
        )
    };
    let sol = minimize(residuals, &[0.05], &[0.01], LmOptions::default())?;
    let lambda = sol.params[0];
    let sigma = sd(&sol, 0);
    if lambda < -LAMBDA_RANGE_SIGMAS * sigma || lambda > 1.0 + LAMBDA_RANGE_SIGMAS * sigma {
        return Err(Error::FitOutOfRange(format!(
            "lambda = {lambda:.4} +- {sigma:.4} lies outside [0, 1]"
        )));
    }
    let dof = dof(&sol);
    Ok(LambdaFit {
        lambda,
        lambda_sigma: sigma,
        chi2: sol.chi2,
        dof,
        chi2_reduced: sol.chi2 / dof.max(1) as f64,
        n_iterations: sol.iterations,
        objective_history: sol.history,
    })
}

/// Summary of an envelope fit and an overlap fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub tau_p_ns: f64,
    pub tau_p_sigma: f64,
    pub lambda: f64,
    pub lambda_sigma: f64,
    /// Pooled over every fit: total chi-square over total degrees of freedom.
    pub chi2_reduced: f64,
    pub n_iterations: usize,
    pub window_ns: (f64, f64),
}

impl FitReport {
    pub fn new(envelopes: &[&EnvelopeFit], tau_p: (f64, f64), lambda: &LambdaFit) -> Self {
        let chi2 = envelopes.iter().map(|f| f.chi2).sum::<f64>() + lambda.chi2;
        let dof = envelopes.iter().map(|f| f.dof).sum::<usize>() + lambda.dof;
        let lo = envelopes
            .iter()
            .map(|f| f.window_ns.0)
            .fold(f64::INFINITY, f64::min);
        let hi = envelopes
            .iter()
            .map(|f| f.window_ns.1)
            .fold(f64::NEG_INFINITY, f64::max);
        FitReport {
            tau_p_ns: tau_p.0,
            tau_p_sigma: tau_p.1,
            lambda: lambda.lambda,
            lambda_sigma: lambda.lambda_sigma,
            chi2_reduced: chi2 / dof.max(1) as f64,
            n_iterations: envelopes.iter().map(|f| f.n_iterations).sum::<usize>()
                + lambda.n_iterations,
            window_ns: (lo, hi),
        }
    }
}

/// Inverse-variance weighted mean of independent `tau_p` estimates.
pub fn combine_tau_p(fits: &[&EnvelopeFit]) -> (f64, f64) {
    let (mut w, mut wx) = (0.0, 0.0);
    for f in fits {
        let wi = 1.0 / f.tau_p_sigma.powi(2);
        w += wi;
        wx += wi * f.tau_p;
    }
    (wx / w, w.sqrt().recip())
}

/// Overlap of the photon power spectrum with the atomic line:
/// `(integral S_p S_a)^2 / (integral S_p^2 integral S_a^2)`.
///
/// The atomic line is a Lorentzian of FWHM `1 / (2 pi tau0)`. The figure
/// is 1 for identical line shapes and falls to 0 for a photon much broader
/// or narrower than the atom. For two Lorentzians it equals
/// `4 tau_p tau0 / (tau_p + tau0)^2`.
pub fn spectral_overlap(env: &PhotonEnvelope, atom: &AtomParams) -> f64 {
    let spec = power_spectrum(env);
    let hwhm = 1e3 / (4.0 * std::f64::consts::PI * atom.tau0());
    let (mut cross, mut pp, mut aa) = (0.0, 0.0, 0.0);
    for (f, s) in spec.freq_mhz.iter().zip(&spec.density) {
        let a = hwhm / (std::f64::consts::PI * (f * f + hwhm * hwhm));
        cross += s * a;
        pp += s * s;
        aa += a * a;
    }
    if pp == 0.0 {
        return 0.0;
    }
    cross * cross / (pp * aa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{interval_integrals, scatter};
    use crate::envelope::{make_decaying, make_rising};
    use crate::histogram::{BinSpec, Channel};
    use crate::reconstruction::{subtract_accidentals, DEFAULT_SIGNAL_WINDOW};
    use crate::synthesis::{
        coincidence_probabilities, synthesis_grid, synthesize_from, SynthesisConfig,
    };

    const TAU0: f64 = 26.2;
    const TAU_P: f64 = 13.3;
    const LAMBDA: f64 = 0.033;

    fn model_counts(profile: Profile, tau: f64, amp: f64, bg: f64) -> BinnedCounts {
        let bins = BinSpec::forward_default();
        let counts = (0..bins.count)
            .map(|i| amp * bin_fraction(profile, tau, bins.bin_start(i), bins.bin_end(i)) + bg)
            .collect();
        BinnedCounts::expected(bins, counts, 1e7, Channel::ForwardNoAtom).unwrap()
    }

    #[test]
    fn fraction_integrates_to_one() {
        for p in [Profile::Rising, Profile::Decaying] {
            assert!((bin_fraction(p, TAU_P, -1e4, 1e4) - 1.0).abs() < 1e-15);
            assert!(
                (bin_fraction(p, TAU_P, -10.0, 0.0) + bin_fraction(p, TAU_P, 0.0, 10.0)
                    - bin_fraction(p, TAU_P, -10.0, 10.0))
                .abs()
                    < 1e-15
            );
        }
        assert_eq!(bin_fraction(Profile::Decaying, TAU_P, -4.0, -2.0), 0.0);
        assert_eq!(bin_fraction(Profile::Rising, TAU_P, 2.0, 4.0), 0.0);
    }

    #[test]
    fn noiseless_counts_recovered_exactly() {
        for p in [Profile::Rising, Profile::Decaying] {
            let data = model_counts(p, TAU_P, 37_000.0, 0.2);
            let fit = fit_envelope(&data, p, p.extinction_window(), 0.2).unwrap();
            assert!((fit.tau_p / TAU_P - 1.0).abs() < 1e-6, "{}", fit.tau_p);
            assert!((fit.amplitude / 37_000.0 - 1.0).abs() < 1e-6);
            assert!(fit.chi2_reduced < 1e-10);
        }
    }

    #[test]
    fn objective_never_increases() {
        let data = model_counts(Profile::Decaying, 9.0, 5_000.0, 1.0);
        let fit = fit_envelope(&data, Profile::Decaying, (-14.0, 100.0), 1.0).unwrap();
        assert!(fit.objective_history.len() >= 2);
        assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let flat = model_counts(Profile::Decaying, TAU_P, 0.0, 3.0);
        assert!(matches!(
            fit_envelope(&flat, Profile::Decaying, (-14.0, 100.0), 3.0),
            Err(Error::Degenerate(_))
        ));
        let mut sparse = model_counts(Profile::Decaying, 2.0, 100.0, 0.0);
        sparse.counts.iter_mut().for_each(|c| *c = c.floor());
        assert!(matches!(
            fit_envelope(&sparse, Profile::Decaying, (-14.0, 100.0), 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    fn synthetic(
        profile: Profile,
        n: u64,
        seed: u64,
    ) -> (BinnedCounts, BinnedCounts, EfficiencyChain) {
        let chain = EfficiencyChain::measured();
        let bins = BinSpec::forward_default();
        let g = synthesis_grid(&bins, &BinSpec::backward_default(), 0.05).unwrap();
        let env = profile.make(TAU_P, g).unwrap();
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        let p = coincidence_probabilities(&env, &atom, &chain, &bins, &BinSpec::backward_default())
            .unwrap();
        let h = synthesize_from(&p, &SynthesisConfig::new(chain, n, seed)).unwrap();
        (h.g_f0.to_binned(), h.g_f.to_binned(), chain)
    }

    #[test]
    fn model_selection_prefers_the_true_shape() {
        let (f0, _, _) = synthetic(Profile::Rising, 10_000_000, 8);
        let w = Profile::Rising.extinction_window();
        let floor = subtract_accidentals(&f0, DEFAULT_SIGNAL_WINDOW)
            .unwrap()
            .floor;
        let right = fit_envelope(&f0, Profile::Rising, w, floor).unwrap();
        let wrong = fit_envelope(&f0, Profile::Decaying, w, floor).unwrap();
        assert!(
            wrong.chi2 > 10.0 * right.chi2,
            "{} vs {}",
            wrong.chi2,
            right.chi2
        );
        assert!((right.tau_p - TAU_P).abs() < 0.2);
    }

    #[test]
    fn basis_reproduces_model_delta() {
        // the basis at the true overlap equals bin-averaged R_f0 - R_f
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        for profile in [Profile::Rising, Profile::Decaying] {
            let g = TimeGrid::symmetric(300.0, 0.01).unwrap();
            let env = profile.make(TAU_P, g).unwrap();
            let s = scatter(&atom, &env).unwrap();
            let ints = interval_integrals(&atom, &env, &s.trace).unwrap();
            for a in [-20.0, -2.0, 0.0, 6.0, 40.0] {
                let (k0, n) = (((a + 300.0) / 0.01) as usize, 200);
                let want: f64 = (k0..k0 + n)
                    .map(|k| ints.r_f0[k] - ints.r_f[k])
                    .sum::<f64>()
                    / 2.0;
                let (f1, f2) = delta_basis(profile, TAU_P, TAU0, a, a + 2.0);
                let got = LAMBDA * f1 - LAMBDA * LAMBDA * f2;
                assert!(
                    (got - want).abs() < 1e-6 * want.abs().max(1e-3),
                    "{profile:?} a={a}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn noiseless_lambda_recovered() {
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        let bins = BinSpec::forward_default();
        let mut data = Vec::new();
        for profile in [Profile::Rising, Profile::Decaying] {
            let g = TimeGrid::new(bins.start, bins.width, bins.count).unwrap();
            let values: Vec<f64> = g
                .times()
                .map(|t| {
                    let (f1, f2) = delta_basis(profile, TAU_P, atom.tau0(), t, t + 2.0);
                    LAMBDA * f1 - LAMBDA * LAMBDA * f2
                })
                .collect();
            let sigma = vec![1e-4; values.len()];
            data.push(DeltaData {
                profile,
                delta: Series::with_sigma(g, values, sigma).unwrap(),
                window: profile.extinction_window(),
                counting: None,
            });
        }
        let fit = fit_lambda(&data, TAU_P, TAU0).unwrap();
        assert!((fit.lambda / LAMBDA - 1.0).abs() < 1e-8);
        let single = fit_lambda(&data[..1], TAU_P, TAU0).unwrap();
        assert!(single.lambda_sigma > fit.lambda_sigma);
    }

    #[test]
    fn identical_histograms_give_zero_overlap() {
        let (f0, _, chain) = synthetic(Profile::Decaying, 10_000_000, 4);
        let d =
            DeltaData::from_counts(&f0, &f0, &chain, Profile::Decaying, (-14.0, 100.0)).unwrap();
        let fit = fit_lambda(&[d], TAU_P, TAU0).unwrap();
        assert!(
            fit.lambda.abs() < 1e-9 + fit.lambda_sigma * 1e-3,
            "{}",
            fit.lambda
        );
    }

    #[test]
    fn mismatched_bins_rejected() {
        let (f0, f, chain) = synthetic(Profile::Decaying, 1_000_000, 4);
        let other = BinnedCounts {
            bins: BinSpec::from_range(-300.0, 300.0, 5.0).unwrap(),
            counts: vec![0.0; 120],
            sigma: vec![0.0; 120],
            ..f.clone()
        };
        assert!(matches!(
            DeltaData::from_counts(&f0, &other, &chain, Profile::Decaying, (-14.0, 100.0)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn synthetic_lambda_is_consistent() {
        let mut data = Vec::new();
        for (profile, seed) in [(Profile::Rising, 21), (Profile::Decaying, 22)] {
            let (f0, f, chain) = synthetic(profile, 10_000_000, seed);
            data.push(corrected_delta(&f0, &f, &chain, profile));
        }
        let fit = fit_lambda(&data, TAU_P, TAU0).unwrap();
        assert!(
            (fit.lambda - LAMBDA).abs() < 4.0 * fit.lambda_sigma,
            "{} +- {}",
            fit.lambda,
            fit.lambda_sigma
        );
        assert!(fit.lambda_sigma > 0.002 && fit.lambda_sigma < 0.01);
    }

    fn corrected_delta(
        f0: &BinnedCounts,
        f: &BinnedCounts,
        chain: &EfficiencyChain,
        profile: Profile,
    ) -> DeltaData {
        let c0 = subtract_accidentals(f0, DEFAULT_SIGNAL_WINDOW).unwrap();
        let c1 = subtract_accidentals(f, DEFAULT_SIGNAL_WINDOW).unwrap();
        DeltaData::from_counts(
            &c0.corrected,
            &c1.corrected,
            chain,
            profile,
            profile.extinction_window(),
        )
        .unwrap()
        .with_floors(c0.floor, c1.floor)
    }

    #[test]
    fn coherence_time_estimate_is_unbiased() {
        let runs = 40;
        let fits: Vec<f64> = (0..runs)
            .map(|seed| {
                let profile = if seed % 2 == 0 {
                    Profile::Rising
                } else {
                    Profile::Decaying
                };
                let (f0, _, _) = synthetic(profile, 10_000_000, 2000 + seed);
                let floor = subtract_accidentals(&f0, DEFAULT_SIGNAL_WINDOW)
                    .unwrap()
                    .floor;
                fit_envelope(&f0, profile, profile.extinction_window(), floor)
                    .unwrap()
                    .tau_p
            })
            .collect();
        let mean = fits.iter().sum::<f64>() / runs as f64;
        let var = fits.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - TAU_P).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn overlap_estimate_is_unbiased() {
        // the mean over independent datasets sits within 3 standard errors
        let runs = 40;
        let fits: Vec<f64> = (0..runs)
            .map(|seed| {
                let data: Vec<DeltaData> = [Profile::Rising, Profile::Decaying]
                    .into_iter()
                    .enumerate()
                    .map(|(j, profile)| {
                        let (f0, f, chain) =
                            synthetic(profile, 10_000_000, 1000 + 2 * seed + j as u64);
                        corrected_delta(&f0, &f, &chain, profile)
                    })
                    .collect();
                fit_lambda(&data, TAU_P, TAU0).unwrap().lambda
            })
            .collect();
        let mean = fits.iter().sum::<f64>() / runs as f64;
        let var = fits.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - LAMBDA).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    /// Independent oracle: overlap of two Lorentzians under this definition.
    fn lorentzian_overlap(tau_p: f64, tau0: f64) -> f64 {
        4.0 * tau_p * tau0 / (tau_p + tau0).powi(2)
    }

    fn wide(tau_p: f64) -> PhotonEnvelope {
        make_decaying(tau_p, TimeGrid::symmetric(30.0 * tau_p, 0.02).unwrap()).unwrap()
    }

    #[test]
    fn spectral_overlap_values() {
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        let o = spectral_overlap(&wide(TAU_P), &atom);
        assert!((o - lorentzian_overlap(TAU_P, TAU0)).abs() < 5e-3, "{o}");
        assert!((o - 0.9).abs() < 0.02);
        let matched = spectral_overlap(&wide(TAU0), &atom);
        assert!((matched - 1.0).abs() < 5e-3, "{matched}");
        // time reversal leaves the spectrum and hence the overlap unchanged
        let up = make_rising(TAU_P, TimeGrid::symmetric(30.0 * TAU_P, 0.02).unwrap()).unwrap();
        assert!((spectral_overlap(&up, &atom) - o).abs() < 1e-9);
        assert!(spectral_overlap(&wide(0.3), &atom) < 0.2);
    }

    #[test]
    fn spectral_overlap_peaks_at_matched_width() {
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        let taus = [6.0, 13.3, 20.0, 26.2, 35.0, 52.4];
        let o: Vec<f64> = taus
            .iter()
            .map(|&t| spectral_overlap(&wide(t), &atom))
            .collect();
        assert!(o[0] < o[1] && o[1] < o[2] && o[2] < o[3]);
        assert!(o[3] > o[4] && o[4] > o[5]);
    }
}
