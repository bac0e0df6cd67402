//! Shape a conditional probe photon by reflecting its herald off a
//! Fabry-Perot cavity, on and off resonance.
//!
//! ```bash
//! cargo run --release --example cavity_shaping
//! ```

use photon_atom::cavity::{cavity_decay_time, shape_conditional_probe, CavityParams};
use photon_atom::dynamics::{scatter, AtomParams};
use photon_atom::envelope::{make_decaying, make_rising};
use photon_atom::grid::TimeGrid;

fn main() -> photon_atom::Result<()> {
    let tau_p = 13.3;
    let cavity = CavityParams::measured();
    println!(
        "cavity: FSR {:.3} GHz, linewidth {:.3} MHz, decay time {:.2} ns",
        cavity.fsr_ghz(),
        cavity.linewidth_mhz(),
        cavity_decay_time(&cavity)
    );

    let grid = TimeGrid::symmetric(300.0, 0.02)?;
    let up = make_rising(tau_p, grid)?;
    let down = make_decaying(tau_p, grid)?;
    let atom = AtomParams::new(26.2, 0.033)?;
    for detuning in [0.0, 10.0, 30.0, 70.0, 200.0] {
        let shaped = shape_conditional_probe(&cavity.with_detuning(detuning), tau_p, grid)?;
        let (_, peak) = scatter(&atom, &shaped)?.trace.peak();
        println!(
            "detuning {detuning:>5} MHz: overlap with rising {:.4}, with decaying {:.4}, peak P_e {peak:.5}",
            shaped.overlap(&up)?,
            shaped.overlap(&down)?
        );
    }
    Ok(())
}
