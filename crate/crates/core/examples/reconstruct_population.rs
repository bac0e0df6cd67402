//! Recover the excited-state population from synthetic histograms, once
//! from the forward extinction and once from backward emission.
//!
//! ```bash
//! cargo run --release --example reconstruct_population
//! ```

use photon_atom::dynamics::{analytic_pe, AtomParams};
use photon_atom::envelope::Profile;
use photon_atom::grid::TimeGrid;
use photon_atom::reconstruction::{
    compare_forward_backward, counts_to_rate, reconstruct_backward, reconstruct_forward,
    subtract_accidentals, DEFAULT_SIGNAL_WINDOW,
};
use photon_atom::synthesis::{synthesis_grid, synthesize, EfficiencyChain, SynthesisConfig};

fn main() -> photon_atom::Result<()> {
    let atom = AtomParams::new(26.2, 0.033)?;
    let chain = EfficiencyChain::measured();
    let tau_p = 13.3;
    let cfg = SynthesisConfig::new(chain, 100_000_000, 5);
    let grid = synthesis_grid(&cfg.forward_bins, &cfg.backward_bins, 0.05)?;
    let exact = analytic_pe(
        &atom,
        tau_p,
        TimeGrid::symmetric(300.0, 0.05)?,
        Profile::Rising,
    )?;

    let env = Profile::Rising.make(tau_p, grid)?;
    let h = synthesize(&env, &atom, &cfg)?;
    let g_f0 = subtract_accidentals(&h.g_f0.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
    let g_f = subtract_accidentals(&h.g_f.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
    let g_b = subtract_accidentals(&h.g_b.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
    println!(
        "accidental floors per bin: G_f0 {:.2}, G_f {:.2}, G_b {:.2}",
        g_f0.floor, g_f.floor, g_b.floor
    );

    let r_f0 = counts_to_rate(&g_f0.corrected, &chain)?;
    let r_f = counts_to_rate(&g_f.corrected, &chain)?;
    let fwd = reconstruct_forward(&r_f0, &r_f, &atom)?;
    let bwd = reconstruct_backward(&g_b.corrected, &chain, &atom)?;

    println!("    t_ns   forward          backward         model");
    for t in [-40.0, -20.0, -10.0, 0.0, 10.0, 20.0, 40.0, 80.0] {
        let k = fwd.grid.node_index(t).expect("bin edge");
        let kb = ((t - bwd.grid.start()) / bwd.grid.step()).round() as usize;
        let m = exact.grid.node_index(t).expect("model node");
        let sf = fwd.sigma.as_ref().map_or(0.0, |s| s[k]);
        let sb = bwd.sigma.as_ref().map_or(0.0, |s| s[kb]);
        println!(
            "{t:>8.1}  {:.4}({:.4})  {:.4}({:.4})  {:.4}  [backward at {:.1} ns]",
            fwd.p_e[k],
            sf,
            bwd.p_e[kb],
            sb,
            exact.p_e[m],
            bwd.grid.time(kb)
        );
    }
    let agree = compare_forward_backward(&fwd, &bwd, &g_b, &chain, &atom, 2.0);
    println!(
        "backward bins within 2 sigma of forward: {}/{} ({:.1}%)",
        agree.within,
        agree.compared,
        100.0 * agree.fraction()
    );
    Ok(())
}
