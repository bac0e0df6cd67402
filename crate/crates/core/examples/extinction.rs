//! Extinction of a weak coherent probe by the atom: closed form, numerical
//! integrals over full and truncated windows, and the dependence on the
//! photon coherence time.
//!
//! ```bash
//! cargo run --release --example extinction
//! ```

use photon_atom::dynamics::{extinction_closed_form, extinction_numeric, scatter, AtomParams};
use photon_atom::envelope::Profile;
use photon_atom::grid::TimeGrid;

fn main() -> photon_atom::Result<()> {
    let atom = AtomParams::new(26.2, 0.033)?;
    let grid = TimeGrid::symmetric(400.0, 0.02)?;
    println!(
        "closed form at tau_p = 13.3 ns: {:.4}%",
        100.0 * extinction_closed_form(&atom, 13.3)
    );
    for profile in [Profile::Rising, Profile::Decaying] {
        let s = scatter(&atom, &profile.make(13.3, grid)?)?;
        let w = profile.extinction_window();
        println!(
            "{:>8}: full support {:.4}%, window [{}, {}] ns {:.4}%",
            profile.name(),
            100.0 * s.extinction(),
            w.0,
            w.1,
            100.0 * extinction_numeric(&s.delta, w)
        );
    }
    println!("tau_p/tau0  epsilon");
    for ratio in [0.1, 0.25, 0.5, 1.0, 2.0, 4.0] {
        println!(
            "{ratio:>10}  {:.4}%",
            100.0 * extinction_closed_form(&atom, ratio * atom.tau0())
        );
    }
    Ok(())
}
