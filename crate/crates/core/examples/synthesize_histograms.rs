//! Draw seeded coincidence histograms for both envelopes and compare them
//! with their expectations.
//!
//! ```bash
//! cargo run --release --example synthesize_histograms [out_dir]
//! ```

use std::path::{Path, PathBuf};

use photon_atom::config::{EnvelopeConfig, SimConfig};
use photon_atom::histogram::Channel;
use photon_atom::io::Provenance;
use photon_atom::pipeline::synthesize_to_dir;

fn main() -> photon_atom::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("photon-atom-synth"));
    let heralds = 10_000_000;
    for (envelope, seed) in [(EnvelopeConfig::Rising, 1), (EnvelopeConfig::Decaying, 2)] {
        let cfg = SimConfig::measured(envelope);
        let label = cfg.envelope.label();
        let prov = Provenance::of_inputs(&[label.as_bytes()]);
        let dir = out.join(label);
        let set = synthesize_to_dir(&cfg, Path::new("."), heralds, seed, None, &dir, &prov)?;
        println!(
            "{label}: {heralds} heralds, seed {seed} -> {}",
            dir.display()
        );
        for ch in Channel::ALL {
            let h = set.get(ch);
            println!(
                "  {:>5}: {:>6} counts in {} bins of {} ns",
                ch.label(),
                h.total(),
                h.bins.count,
                h.bins.width
            );
        }
        let expected_f0 = heralds as f64 * cfg.chain.eta_f;
        println!("  expected G_f0 total without accidentals {expected_f0:.0}");
    }
    Ok(())
}
