//! From coincidence histograms back to rates, excited-state population
//! and extinction.
//!
//! Histogram counts are per-herald probabilities once divided by the herald
//! number. Rate series produced here live on a grid whose nodes are the bin
//! starts; a window `[a, b]` selects the bins with `a <= t_i <= b`.

use crate::dynamics::{delta_rate, windowed_sum, AtomParams, ExcitationTrace, Provenance};
use crate::error::{Error, Result};
use crate::grid::{Series, TimeGrid};
use crate::histogram::{BinSpec, BinnedCounts, Channel};
use crate::synthesis::EfficiencyChain;

/// Minimum span of background-only bins on each side of the signal window, ns.
pub const MIN_FLOOR_SPAN_NS: f64 = 20.0;
/// Default signal window for accidental estimation, ns. Both exponential
/// photons and the atomic decay are negligible outside it.
pub const DEFAULT_SIGNAL_WINDOW: (f64, f64) = (-160.0, 200.0);

fn bin_start_grid(bins: &BinSpec) -> TimeGrid {
    TimeGrid::new(bins.start, bins.width, bins.count).expect("validated bins")
}

/// Detection rate per herald per ns, `counts / (n_heralds eta dt)`.
///
/// Forward channels are normalized by `eta_f`, the backward channel by
/// `eta_f_tilde eta_q`. Uncertainties are the count uncertainties scaled
/// the same way; empty bins give rate 0 with uncertainty 0.
pub fn counts_to_rate(hist: &BinnedCounts, chain: &EfficiencyChain) -> Result<Series> {
    if !(hist.n_heralds > 0.0) {
        return Err(Error::param("n_heralds", "histogram has no heralds"));
    }
    let eta = match hist.channel {
        Channel::ForwardNoAtom | Channel::ForwardWithAtom => chain.eta_f,
        Channel::Backward => chain.eta_f_tilde * chain.eta_q,
    };
    if !(eta > 0.0) {
        return Err(Error::param(
            "efficiency chain",
            format!("zero efficiency for {}", hist.channel.label()),
        ));
    }
    let norm = 1.0 / (hist.n_heralds * eta * hist.bins.width);
    Series::with_sigma(
        bin_start_grid(&hist.bins),
        hist.counts.iter().map(|c| c * norm).collect(),
        hist.sigma.iter().map(|s| s * norm).collect(),
    )
}

/// Result of removing a flat accidental floor.
#[derive(Debug, Clone)]
pub struct AccidentalCorrection {
    pub corrected: BinnedCounts,
    /// Mean background counts per bin.
    pub floor: f64,
    pub floor_sigma: f64,
    /// Number of bins the floor was estimated from.
    pub n_floor_bins: usize,
}

/// Estimate a flat floor from bins lying entirely outside `signal_window`
/// and subtract it. Corrected counts may be fractional or negative; their
/// uncertainty includes the floor uncertainty.
pub fn subtract_accidentals(
    hist: &BinnedCounts,
    signal_window: (f64, f64),
) -> Result<AccidentalCorrection> {
    let (lo, hi) = signal_window;
    if !(hi > lo) {
        return Err(Error::param(
            "signal_window",
            format!("empty window [{lo}, {hi}]"),
        ));
    }
    let bins = &hist.bins;
    let (mut left, mut right) = (0.0, 0.0);
    let (mut sum, mut var, mut n) = (0.0, 0.0, 0usize);
    for i in 0..bins.count {
        let (a, b) = (bins.bin_start(i), bins.bin_end(i));
        let outside_left = b <= lo + 1e-9;
        let outside_right = a >= hi - 1e-9;
        if outside_left || outside_right {
            if outside_left {
                left += bins.width;
            } else {
                right += bins.width;
            }
            sum += hist.counts[i];
            var += hist.sigma[i].powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate(format!(
            "no bins outside the signal window [{lo}, {hi}] ns to estimate accidentals from"
        )));
    }
    if left < MIN_FLOOR_SPAN_NS - 1e-9 || right < MIN_FLOOR_SPAN_NS - 1e-9 {
        return Err(Error::GridTooShort(format!(
            "accidental floor needs {MIN_FLOOR_SPAN_NS} ns of bins on each side of [{lo}, {hi}] ns, found {left} and {right} ns"
        )));
    }
    let floor = sum / n as f64;
    // Poisson: the spread of a mean of n counts
    let floor_sigma = if var > 0.0 {
        var.sqrt() / n as f64
    } else {
        0.0
    };
    let corrected = BinnedCounts {
        bins: *bins,
        counts: hist.counts.iter().map(|c| c - floor).collect(),
        sigma: hist.sigma.iter().map(|s| s.hypot(floor_sigma)).collect(),
        n_heralds: hist.n_heralds,
        channel: hist.channel,
    };
    Ok(AccidentalCorrection {
        corrected,
        floor,
        floor_sigma,
        n_floor_bins: n,
    })
}

/// Integrate `dP_e/dt = delta - (1 - lambda) P_e / tau0` over the bins.
///
/// Each bin's mean `delta_i` drives the exact solution of the linear
/// equation across the bin,
/// `P_{i+1} = P_i d + delta_i (1 - d) / k` with `k = (1 - lambda) / tau0`
/// and `d = exp(-k dt)`, which is accurate to second order in `dt` for a
/// smoothly varying `delta`. The trace is returned on the bin edges,
/// starting from `P_e = 0` at the first edge.
pub fn reconstruct_forward(
    r_f0: &Series,
    r_f: &Series,
    atom: &AtomParams,
) -> Result<ExcitationTrace> {
    let delta = delta_rate(r_f0, r_f)?;
    reconstruct_from_delta(&delta, atom)
}

/// As [`reconstruct_forward`], from a precomputed `delta` series.
pub fn reconstruct_from_delta(delta: &Series, atom: &AtomParams) -> Result<ExcitationTrace> {
    let dt = delta.grid.step();
    let k = atom.loss_rate();
    let d = (-k * dt).exp();
    // (1 - d) / k, tending to dt as k -> 0
    let gain = if k > 0.0 { -(-k * dt).exp_m1() / k } else { dt };
    let n = delta.len();
    let mut p = Vec::with_capacity(n + 1);
    let mut var = Vec::with_capacity(n + 1);
    let (mut pi, mut vi) = (0.0, 0.0);
    p.push(pi);
    var.push(vi);
    for i in 0..n {
        pi = pi * d + delta.values[i] * gain;
        vi = vi * d * d + (delta.sigma_or_zero(i) * gain).powi(2);
        p.push(pi);
        var.push(vi);
    }
    let grid = TimeGrid::new(delta.grid.start(), dt, n + 1)?;
    Ok(ExcitationTrace {
        grid,
        p_e: p,
        sigma: Some(var.into_iter().map(f64::sqrt).collect()),
        amplitude: None,
        provenance: Provenance::ReconForward,
    })
}

/// Per-bin population from backward counts,
/// `P_e = G_b tau0 / (n_heralds eta_f_tilde eta_q eta_b dt)`.
///
/// The trace is placed at the bin centres, since each value is a bin average.
pub fn reconstruct_backward(
    g_b: &BinnedCounts,
    chain: &EfficiencyChain,
    atom: &AtomParams,
) -> Result<ExcitationTrace> {
    if !(chain.eta_f_tilde > 0.0 && chain.eta_q > 0.0 && chain.eta_b > 0.0) {
        return Err(Error::param(
            "efficiency chain",
            "eta_f_tilde, eta_q and eta_b must all be positive for backward reconstruction",
        ));
    }
    if !(g_b.n_heralds > 0.0) {
        return Err(Error::param("n_heralds", "histogram has no heralds"));
    }
    let bins = &g_b.bins;
    let norm = atom.tau0() / (g_b.n_heralds * chain.backward_efficiency() * bins.width);
    let grid = TimeGrid::new(bins.center(0), bins.width, bins.count)?;
    Ok(ExcitationTrace {
        grid,
        p_e: g_b.counts.iter().map(|c| c * norm).collect(),
        sigma: Some(g_b.sigma.iter().map(|s| s * norm).collect()),
        amplitude: None,
        provenance: Provenance::ReconBackward,
    })
}

/// Windowed extinction `dt sum (R_f0 - R_f)` with its propagated uncertainty.
pub fn extinction_from_data(r_f0: &Series, r_f: &Series, window: (f64, f64)) -> Result<(f64, f64)> {
    if !(window.1 >= window.0) {
        return Err(Error::param(
            "window",
            format!("empty window [{}, {}]", window.0, window.1),
        ));
    }
    let delta = delta_rate(r_f0, r_f)?;
    Ok(windowed_sum(&delta, window))
}

/// Linear interpolation of a trace at `t`; `None` outside its grid.
pub(crate) fn interpolate_trace(trace: &ExcitationTrace, t: f64) -> Option<(f64, f64)> {
    let g = &trace.grid;
    let x = (t - g.start()) / g.step();
    let last = (g.len() - 1) as f64;
    if !(x >= -1e-9 && x <= last + 1e-9) {
        return None;
    }
    let x = x.clamp(0.0, last);
    let k = (x.floor() as usize).min(g.len().saturating_sub(2));
    let w = x - k as f64;
    let sig = |i: usize| trace.sigma.as_ref().map_or(0.0, |s| s[i]);
    if g.len() == 1 {
        return Some((trace.p_e[0], sig(0)));
    }
    Some((
        trace.p_e[k] * (1.0 - w) + trace.p_e[k + 1] * w,
        sig(k) * (1.0 - w) + sig(k + 1) * w,
    ))
}

/// Per-bin comparison of two reconstructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub compared: usize,
    pub within: usize,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        if self.compared == 0 {
            0.0
        } else {
            self.within as f64 / self.compared as f64
        }
    }
}

/// Count backward bins whose population agrees with the forward trace,
/// interpolated at the bin centre, within `n_sigma` combined standard
/// deviations.
///
/// The backward variance is the count the forward trace predicts plus the
/// accidental floor and its uncertainty, floored at one count. Observed
/// counts would understate the spread of every low fluctuation.
pub fn compare_forward_backward(
    forward: &ExcitationTrace,
    backward: &ExcitationTrace,
    g_b: &AccidentalCorrection,
    chain: &EfficiencyChain,
    atom: &AtomParams,
    n_sigma: f64,
) -> Agreement {
    let bins = &g_b.corrected.bins;
    let norm = atom.tau0() / (g_b.corrected.n_heralds * chain.backward_efficiency() * bins.width);
    let mut out = Agreement {
        compared: 0,
        within: 0,
    };
    for (i, t) in backward.grid.times().enumerate() {
        let Some((pf, sf)) = interpolate_trace(forward, t) else {
            continue;
        };
        let predicted = pf.max(0.0) / norm + g_b.floor;
        let sb = (predicted.max(1.0) + g_b.floor_sigma.powi(2)).sqrt() * norm;
        out.compared += 1;
        if (backward.p_e[i] - pf).abs() <= n_sigma * sf.hypot(sb) {
            out.within += 1;
        }
    }
    out
}
