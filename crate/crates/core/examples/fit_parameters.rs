//! Fit the photon coherence time and the spatial mode overlap to synthetic
//! histograms, and compute the spectral overlap of photon and atom.
//!
//! ```bash
//! cargo run --release --example fit_parameters
//! ```

use photon_atom::dynamics::AtomParams;
use photon_atom::envelope::{make_decaying, Profile};
use photon_atom::estimation::{
    combine_tau_p, fit_envelope, fit_lambda, spectral_overlap, DeltaData, FitReport,
};
use photon_atom::grid::TimeGrid;
use photon_atom::reconstruction::{subtract_accidentals, DEFAULT_SIGNAL_WINDOW};
use photon_atom::synthesis::{synthesis_grid, synthesize, EfficiencyChain, SynthesisConfig};

fn main() -> photon_atom::Result<()> {
    let atom = AtomParams::new(26.2, 0.033)?;
    let chain = EfficiencyChain::measured();
    let mut fits = Vec::new();
    let mut deltas = Vec::new();
    for (profile, seed) in [(Profile::Rising, 31), (Profile::Decaying, 32)] {
        let cfg = SynthesisConfig::new(chain, 10_000_000, seed);
        let env = profile.make(
            13.3,
            synthesis_grid(&cfg.forward_bins, &cfg.backward_bins, 0.05)?,
        )?;
        let h = synthesize(&env, &atom, &cfg)?;
        let window = profile.extinction_window();
        let c0 = subtract_accidentals(&h.g_f0.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
        let c1 = subtract_accidentals(&h.g_f.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
        let fit = fit_envelope(&h.g_f0.to_binned(), profile, window, c0.floor)?;
        let (eta, eta_sigma) = fit.eta_f(cfg.n_heralds as f64);
        println!(
            "{:>8}: tau_p {:.3} +- {:.3} ns, eta_f {:.3e} +- {:.1e}, reduced chi2 {:.3} ({} iterations)",
            profile.name(),
            fit.tau_p,
            fit.tau_p_sigma,
            eta,
            eta_sigma,
            fit.chi2_reduced,
            fit.n_iterations
        );
        fits.push(fit);
        deltas.push(
            DeltaData::from_counts(&c0.corrected, &c1.corrected, &chain, profile, window)?
                .with_floors(c0.floor, c1.floor),
        );
    }
    let refs: Vec<_> = fits.iter().collect();
    let tau_p = combine_tau_p(&refs);
    let lambda = fit_lambda(&deltas, tau_p.0, atom.tau0())?;
    let report = FitReport::new(&refs, tau_p, &lambda);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );

    let env = make_decaying(13.3, TimeGrid::symmetric(400.0, 0.02)?)?;
    println!(
        "spectral overlap of photon and atomic line: {:.3}",
        spectral_overlap(&env, &atom)
    );
    Ok(())
}
