//! End-to-end runs: model simulation, histogram synthesis and the full
//! histogram analysis, with their file outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::dynamics::{
    backward_rate, extinction_closed_form, extinction_numeric, scatter, AtomParams,
    ExcitationTrace, Scattering,
};
use crate::envelope::{EnvelopeShape, PhotonEnvelope, Profile};
use crate::error::{Error, Result};
use crate::estimation::{
    combine_tau_p, fit_envelope, fit_lambda, DeltaData, EnvelopeFit, FitReport, LambdaFit,
};
use crate::grid::Series;
use crate::histogram::{BinnedCounts, Channel, CoincidenceHistogram};
use crate::io::{
    read_histogram, write_histogram, write_json, write_series_csv, write_trace_csv, ParamsFile,
    Provenance,
};
use crate::reconstruction::{
    compare_forward_backward, counts_to_rate, extinction_from_data, reconstruct_backward,
    reconstruct_forward, subtract_accidentals, Agreement, DEFAULT_SIGNAL_WINDOW,
};
use crate::synthesis::{synthesize, EfficiencyChain, HistogramSet, SynthesisConfig};

/// Model curves for one configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub envelope: PhotonEnvelope,
    pub scattering: Scattering,
    pub r_b: Series,
    pub summary: SimulationSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub envelope: String,
    pub tau0_ns: f64,
    pub tau_p_ns: f64,
    pub lambda: f64,
    /// Extinction over the whole grid.
    pub epsilon: f64,
    /// Extinction over the standard window of an exponential envelope.
    pub epsilon_window: Option<f64>,
    pub epsilon_closed_form: Option<f64>,
    pub peak_pe: f64,
    pub peak_time_ns: f64,
    pub provenance: Provenance,
}

pub fn simulate(cfg: &SimConfig, base_dir: &Path, prov: Provenance) -> Result<Simulation> {
    let atom = cfg.atom()?;
    let envelope = cfg.envelope(base_dir)?;
    let scattering = scatter(&atom, &envelope)?;
    let r_b = backward_rate(&atom, &scattering.trace, cfg.chain.eta_b)?;
    let profile = cfg.envelope.profile();
    let (peak_time_ns, peak_pe) = scattering.trace.peak();
    let summary = SimulationSummary {
        envelope: cfg.envelope.label().to_string(),
        tau0_ns: cfg.tau0_ns,
        tau_p_ns: cfg.tau_p_ns,
        lambda: cfg.lambda,
        epsilon: scattering.extinction(),
        epsilon_window: profile
            .map(|p| extinction_numeric(&scattering.delta, p.extinction_window())),
        epsilon_closed_form: profile.map(|_| extinction_closed_form(&atom, cfg.tau_p_ns)),
        peak_pe,
        peak_time_ns,
        provenance: prov,
    };
    Ok(Simulation {
        envelope,
        scattering,
        r_b,
        summary,
    })
}

/// Write `envelope.csv`, `p_e.csv`, `r_f0.csv`, `r_f.csv`, `r_b.csv`,
/// `delta.csv` and `summary.json`.
pub fn write_simulation(sim: &Simulation, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let prov = &sim.summary.provenance;
    let s = &sim.scattering;
    let mut written = Vec::new();
    let mut put = |name: &str, series: &Series| -> Result<()> {
        let p = out_dir.join(name);
        write_series_csv(&p, series, prov)?;
        written.push(p);
        Ok(())
    };
    put("p_e.csv", &s.trace.as_series())?;
    put("r_f0.csv", &s.r_f0)?;
    put("r_f.csv", &s.r_f)?;
    put("r_b.csv", &sim.r_b)?;
    put("delta.csv", &s.delta)?;
    let env_path = out_dir.join("envelope.csv");
    crate::io::write_envelope_csv(&env_path, &sim.envelope, prov)?;
    written.push(env_path);
    let summary = out_dir.join("summary.json");
    write_json(&summary, &sim.summary)?;
    written.push(summary);
    Ok(written)
}

/// Synthesize the configured envelope and write `g_f0`, `g_f`, `g_b`
/// histograms with sidecars.
pub fn synthesize_to_dir(
    cfg: &SimConfig,
    base_dir: &Path,
    n_heralds: u64,
    seed: u64,
    threads: Option<usize>,
    out_dir: &Path,
    prov: &Provenance,
) -> Result<HistogramSet> {
    let atom = cfg.atom()?;
    let env = cfg.envelope(base_dir)?;
    let sc = SynthesisConfig {
        chain: cfg.chain,
        n_heralds,
        forward_bins: cfg.bins.forward()?,
        backward_bins: cfg.bins.backward()?,
        seed,
        threads,
    };
    let set = synthesize(&env, &atom, &sc)?;
    fs::create_dir_all(out_dir)?;
    for ch in Channel::ALL {
        let path = out_dir.join(format!("{}.csv", ch.label()));
        write_histogram(
            &path,
            set.get(ch),
            Some(seed),
            Some(cfg.envelope.label()),
            prov,
        )?;
    }
    Ok(set)
}

/// Forward (and optionally backward) histograms taken with one envelope.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub profile: Profile,
    pub g_f0: CoincidenceHistogram,
    pub g_f: CoincidenceHistogram,
    pub g_b: Option<CoincidenceHistogram>,
}

impl Dataset {
    /// Load `g_f0.csv`, `g_f.csv` and, if present, `g_b.csv` from a directory.
    /// The profile comes from `profile` or else from the sidecars.
    pub fn load_dir(dir: &Path, profile: Option<Profile>) -> Result<Self> {
        let g_b = dir.join("g_b.csv");
        let g_b = g_b.exists().then_some(g_b);
        Dataset::load_files(
            &dir.join("g_f0.csv"),
            &dir.join("g_f.csv"),
            g_b.as_deref(),
            profile,
        )
    }

    pub fn load_files(
        g_f0: &Path,
        g_f: &Path,
        g_b: Option<&Path>,
        profile: Option<Profile>,
    ) -> Result<Self> {
        let (h0, s0) = read_histogram(g_f0)?;
        let (h1, _) = read_histogram(g_f)?;
        let hb = g_b.map(read_histogram).transpose()?.map(|(h, _)| h);
        let profile = match profile {
            Some(p) => p,
            None => match s0.envelope.as_deref() {
                Some("rising") => Profile::Rising,
                Some("decaying") => Profile::Decaying,
                other => {
                    return Err(Error::Config(format!(
                        "cannot tell the envelope profile of {} (sidecar says {:?}); pass it explicitly",
                        g_f0.display(),
                        other
                    )))
                }
            },
        };
        h0.bins
            .ensure_same(&h1.bins, "G_f0 vs G_f")
            .map_err(|e| Error::DataFormat {
                path: g_f.to_path_buf(),
                reason: e.to_string(),
            })?;
        Ok(Dataset {
            profile,
            g_f0: h0,
            g_f: h1,
            g_b: hb,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub chain: EfficiencyChain,
    /// Bins outside this window set the accidental floor.
    pub signal_window: (f64, f64),
    /// Extinction and fit window; `None` uses each profile's standard window.
    pub window: Option<(f64, f64)>,
    /// Agreement threshold for the forward/backward comparison.
    pub n_sigma: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            chain: EfficiencyChain::measured(),
            signal_window: DEFAULT_SIGNAL_WINDOW,
            window: None,
            n_sigma: 2.0,
        }
    }
}

/// Full result for one dataset.
#[derive(Debug, Clone)]
pub struct ProfileAnalysis {
    pub profile: Profile,
    pub window: (f64, f64),
    pub floors: [(f64, f64); 2],
    pub r_f0: Series,
    pub r_f: Series,
    pub delta: Series,
    pub epsilon: (f64, f64),
    pub forward: ExcitationTrace,
    pub peak: PeakEstimate,
    pub backward: Option<ExcitationTrace>,
    pub agreement: Option<Agreement>,
    pub envelope_fit: Option<EnvelopeFit>,
    pub envelope_fit_error: Option<String>,
    corrected: (BinnedCounts, BinnedCounts),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub peak_pe: f64,
    pub peak_pe_sigma: f64,
    pub peak_time_ns: f64,
}

fn peak_of(trace: &ExcitationTrace) -> PeakEstimate {
    let k = trace.peak_index();
    PeakEstimate {
        peak_pe: trace.p_e[k],
        peak_pe_sigma: trace.sigma.as_ref().map_or(0.0, |s| s[k]),
        peak_time_ns: trace.grid.time(k),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub profile: Profile,
    pub epsilon: f64,
    pub epsilon_sigma: f64,
    pub window_ns: (f64, f64),
    pub peak_pe: f64,
    pub peak_pe_sigma: f64,
    pub peak_time_ns: f64,
    pub accidental_floor_f0: f64,
    pub accidental_floor_f: f64,
    pub tau_p_ns: Option<f64>,
    pub tau_p_sigma: Option<f64>,
    pub envelope_chi2_reduced: Option<f64>,
    pub envelope_fit_error: Option<String>,
    /// Fraction of backward bins agreeing with the forward trace.
    pub backward_agreement: Option<f64>,
}

/// Analysis report written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub profiles: Vec<ProfileSummary>,
    pub epsilon_down: Option<f64>,
    pub epsilon_down_sigma: Option<f64>,
    pub epsilon_up: Option<f64>,
    pub epsilon_up_sigma: Option<f64>,
    /// `P_e,max(rising) / P_e,max(decaying) - 1`.
    pub peak_increase: Option<f64>,
    pub peak_increase_sigma: Option<f64>,
    pub fit: Option<FitReport>,
    pub fit_error: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub profiles: Vec<ProfileAnalysis>,
    pub lambda_fit: Option<LambdaFit>,
    pub report: AnalysisReport,
}

fn analyze_profile(
    ds: &Dataset,
    atom: &AtomParams,
    opts: &AnalysisOptions,
) -> Result<ProfileAnalysis> {
    let window = opts.window.unwrap_or(ds.profile.extinction_window());
    let c0 = subtract_accidentals(&ds.g_f0.to_binned(), opts.signal_window)?;
    let c1 = subtract_accidentals(&ds.g_f.to_binned(), opts.signal_window)?;
    let r_f0 = counts_to_rate(&c0.corrected, &opts.chain)?;
    let r_f = counts_to_rate(&c1.corrected, &opts.chain)?;
    let delta = crate::dynamics::delta_rate(&r_f0, &r_f)?;
    let epsilon = extinction_from_data(&r_f0, &r_f, window)?;
    let forward = reconstruct_forward(&r_f0, &r_f, atom)?;
    let peak = peak_of(&forward);
    let (backward, agreement) = match &ds.g_b {
        Some(g_b) => {
            let cb = subtract_accidentals(&g_b.to_binned(), opts.signal_window)?;
            let tr = reconstruct_backward(&cb.corrected, &opts.chain, atom)?;
            let agree =
                compare_forward_backward(&forward, &tr, &cb, &opts.chain, atom, opts.n_sigma);
            (Some(tr), Some(agree))
        }
        None => (None, None),
    };
    let (envelope_fit, envelope_fit_error) =
        match fit_envelope(&ds.g_f0.to_binned(), ds.profile, window, c0.floor) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
    Ok(ProfileAnalysis {
        profile: ds.profile,
        window,
        floors: [(c0.floor, c0.floor_sigma), (c1.floor, c1.floor_sigma)],
        r_f0,
        r_f,
        delta,
        epsilon,
        forward,
        peak,
        backward,
        agreement,
        envelope_fit,
        envelope_fit_error,
        corrected: (c0.corrected, c1.corrected),
    })
}

/// Accidental correction, rates, extinction, forward and backward
/// reconstruction for every dataset, then fits of `tau_p` and `lambda`.
///
/// Reconstruction uses the overlap from `params`; the fitted overlap is
/// reported separately. Fit failures are recorded in the report rather
/// than aborting the analysis.
pub fn analyze_dataset(
    datasets: &[Dataset],
    params: &ParamsFile,
    opts: &AnalysisOptions,
    prov: Provenance,
) -> Result<Analysis> {
    if datasets.is_empty() {
        return Err(Error::Config("no datasets to analyze".into()));
    }
    opts.chain.validate()?;
    let atom = params.atom()?;
    let profiles = datasets
        .iter()
        .map(|d| analyze_profile(d, &atom, opts))
        .collect::<Result<Vec<_>>>()?;

    let env_fits: Vec<&EnvelopeFit> = profiles
        .iter()
        .filter_map(|p| p.envelope_fit.as_ref())
        .collect();
    let (lambda_fit, fit, fit_error) = if env_fits.is_empty() {
        let why = profiles
            .iter()
            .filter_map(|p| p.envelope_fit_error.clone())
            .collect::<Vec<_>>()
            .join("; ");
        (None, None, Some(format!("envelope fit failed: {why}")))
    } else {
        let tau_p = combine_tau_p(&env_fits);
        let deltas = profiles
            .iter()
            .map(|p| {
                DeltaData::from_counts(
                    &p.corrected.0,
                    &p.corrected.1,
                    &opts.chain,
                    p.profile,
                    p.window,
                )
                .map(|d| d.with_floors(p.floors[0].0, p.floors[1].0))
            })
            .collect::<Result<Vec<_>>>()?;
        match fit_lambda(&deltas, tau_p.0, atom.tau0()) {
            Ok(lf) => {
                let report = FitReport::new(&env_fits, tau_p, &lf);
                (Some(lf), Some(report), None)
            }
            Err(e) => (None, None, Some(format!("overlap fit failed: {e}"))),
        }
    };

    let find = |p: Profile| profiles.iter().find(|a| a.profile == p);
    let (up, down) = (find(Profile::Rising), find(Profile::Decaying));
    let (peak_increase, peak_increase_sigma) = match (up, down) {
        (Some(u), Some(d)) if d.peak.peak_pe > 0.0 && u.peak.peak_pe > 0.0 => {
            let r = u.peak.peak_pe / d.peak.peak_pe;
            let rel = (u.peak.peak_pe_sigma / u.peak.peak_pe)
                .hypot(d.peak.peak_pe_sigma / d.peak.peak_pe);
            (Some(r - 1.0), Some(r * rel))
        }
        _ => (None, None),
    };
    let summaries = profiles
        .iter()
        .map(|p| ProfileSummary {
            profile: p.profile,
            epsilon: p.epsilon.0,
            epsilon_sigma: p.epsilon.1,
            window_ns: p.window,
            peak_pe: p.peak.peak_pe,
            peak_pe_sigma: p.peak.peak_pe_sigma,
            peak_time_ns: p.peak.peak_time_ns,
            accidental_floor_f0: p.floors[0].0,
            accidental_floor_f: p.floors[1].0,
            tau_p_ns: p.envelope_fit.as_ref().map(|f| f.tau_p),
            tau_p_sigma: p.envelope_fit.as_ref().map(|f| f.tau_p_sigma),
            envelope_chi2_reduced: p.envelope_fit.as_ref().map(|f| f.chi2_reduced),
            envelope_fit_error: p.envelope_fit_error.clone(),
            backward_agreement: p.agreement.map(|a| a.fraction()),
        })
        .collect();
    let report = AnalysisReport {
        profiles: summaries,
        epsilon_down: down.map(|d| d.epsilon.0),
        epsilon_down_sigma: down.map(|d| d.epsilon.1),
        epsilon_up: up.map(|u| u.epsilon.0),
        epsilon_up_sigma: up.map(|u| u.epsilon.1),
        peak_increase,
        peak_increase_sigma,
        fit,
        fit_error,
        provenance: prov,
    };
    Ok(Analysis {
        profiles,
        lambda_fit,
        report,
    })
}

/// Write per-profile figure data and `report.json`.
pub fn write_analysis(analysis: &Analysis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let prov = &analysis.report.provenance;
    let mut written = Vec::new();
    for p in &analysis.profiles {
        let name = p.profile.name();
        let mut put_series = |stem: &str, s: &Series| -> Result<()> {
            let path = out_dir.join(format!("{stem}_{name}.csv"));
            write_series_csv(&path, s, prov)?;
            written.push(path);
            Ok(())
        };
        put_series("r_f0", &p.r_f0)?;
        put_series("r_f", &p.r_f)?;
        put_series("delta", &p.delta)?;
        let path = out_dir.join(format!("p_e_forward_{name}.csv"));
        write_trace_csv(&path, &p.forward, prov)?;
        written.push(path);
        if let Some(b) = &p.backward {
            let path = out_dir.join(format!("p_e_backward_{name}.csv"));
            write_trace_csv(&path, b, prov)?;
            written.push(path);
        }
    }
    let path = out_dir.join("report.json");
    write_json(&path, &analysis.report)?;
    written.push(path);
    Ok(written)
}

/// The envelope shape label used in file sidecars.
pub fn shape_label(shape: EnvelopeShape) -> &'static str {
    match shape {
        EnvelopeShape::ExpDecaying => "decaying",
        EnvelopeShape::ExpRising => "rising",
        EnvelopeShape::Tabulated => "tabulated",
        EnvelopeShape::CavityShaped => "cavity",
    }
}
