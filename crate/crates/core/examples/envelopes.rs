//! Build the rising and decaying single-photon envelopes, check their
//! normalization, overlap and spectra.
//!
//! ```bash
//! cargo run --release --example envelopes
//! ```

use photon_atom::envelope::{default_grid, make_decaying, make_rising, power_spectrum, Side};
use photon_atom::grid::TimeGrid;

fn main() -> photon_atom::Result<()> {
    let tau_p = 13.3;
    let grid = default_grid(tau_p)?;
    let down = make_decaying(tau_p, grid)?;
    let up = make_rising(tau_p, grid)?;

    println!(
        "grid: {} nodes over [{}, {}] ns",
        grid.len(),
        grid.start(),
        grid.end()
    );
    println!(
        "norms: decaying {:.12}, rising {:.12}",
        down.norm(),
        up.norm()
    );
    println!("overlap |<up|down>|^2 = {:.4e}", up.overlap(&down)?);
    let reversed = down.time_reverse();
    println!(
        "time-reversed decaying vs rising: {:.12}",
        reversed.overlap(&up)?
    );

    for t in [-20.0, -1.0, 0.0, 1.0, 20.0] {
        let l = down.amplitude_at(t, Side::Left).re;
        let r = down.amplitude_at(t, Side::Right).re;
        println!("xi_down({t:>5}) left {l:.6} right {r:.6}");
    }

    // the spectrum needs the long tail: use a grid spanning +-20 tau_p
    let wide = make_decaying(tau_p, TimeGrid::symmetric(20.0 * tau_p, 0.05)?)?;
    let spectrum = power_spectrum(&wide);
    let expected = 1e3 / (2.0 * std::f64::consts::PI * tau_p);
    println!(
        "spectral FWHM {:.3} MHz (Lorentzian 1/(2 pi tau_p) = {expected:.3} MHz)",
        spectrum.fwhm_mhz()
    );
    println!(
        "linewidth from the envelope: {:.3} MHz",
        down.linewidth_mhz().unwrap_or(f64::NAN)
    );
    Ok(())
}
