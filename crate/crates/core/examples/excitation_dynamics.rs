//! Excited-state population driven by single photons: closed forms, the
//! numerical integrator and the resulting forward and backward rates.
//!
//! ```bash
//! cargo run --release --example excitation_dynamics
//! ```

use photon_atom::dynamics::{
    analytic_pe, analytic_peaks, backward_rate, extinction_closed_form, scatter, AtomParams,
};
use photon_atom::envelope::Profile;
use photon_atom::grid::TimeGrid;

fn main() -> photon_atom::Result<()> {
    let atom = AtomParams::new(26.2, 0.033)?;
    let tau_p = 13.3;
    let grid = TimeGrid::symmetric(300.0, 0.01)?;

    let (up, down) = analytic_peaks(&atom, tau_p);
    println!(
        "peak P_e: rising {up:.5}, decaying {down:.5}, ratio - 1 = {:.1}%",
        100.0 * (up / down - 1.0)
    );
    println!(
        "closed-form extinction {:.3}%",
        100.0 * extinction_closed_form(&atom, tau_p)
    );

    for profile in [Profile::Rising, Profile::Decaying] {
        let env = profile.make(tau_p, grid)?;
        let s = scatter(&atom, &env)?;
        let exact = analytic_pe(&atom, tau_p, grid, profile)?;
        let err = s
            .trace
            .p_e
            .iter()
            .zip(&exact.p_e)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let (t_peak, p_peak) = s.trace.peak();
        let r_b = backward_rate(&atom, &s.trace, 1.0)?;
        println!(
            "{:>8}: numeric peak {p_peak:.5} at {t_peak:6.2} ns, max |numeric - exact| {err:.1e}, \
             extinction {:.4}%, backward photons per incident photon {:.5}",
            profile.name(),
            100.0 * s.extinction(),
            r_b.integral()
        );
    }
    Ok(())
}
