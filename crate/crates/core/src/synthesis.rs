//! Monte Carlo coincidence histograms for the three detection channels.
//!
//! Every herald yields at most one true coincidence per channel. For a
//! block of `n` heralds the per-bin counts are therefore multinomial with
//! the per-herald bin probabilities, drawn here as a chain of conditional
//! binomials. Accidentals are an independent Poisson floor, flat in time.
//!
//! Heralds are processed in fixed-size blocks, each with its own ChaCha
//! stream derived from the master seed, the channel and the block index.
//! Histograms are sums of integer block results, so they do not depend on
//! the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{interval_integrals, scatter, AtomParams};
use crate::envelope::PhotonEnvelope;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::histogram::{BinSpec, BinnedCounts, Channel, CoincidenceHistogram};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PHOTON_ATOM_THREADS";
/// Heralds per independently seeded block.
const BLOCK_HERALDS: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyChain {
    /// Forward coincidence probability per herald without an atom.
    pub eta_f: f64,
    /// Heralding efficiency of the probe path.
    pub eta_f_tilde: f64,
    /// Backward collection efficiency.
    pub eta_b: f64,
    /// Backward detector quantum efficiency.
    pub eta_q: f64,
    /// Flat background per herald per ns, in every channel.
    pub accidental_rate: f64,
}

impl EfficiencyChain {
    /// Measured efficiencies with a background of 1e-8 per herald per ns.
    pub fn measured() -> Self {
        EfficiencyChain {
            eta_f: 3.70e-3,
            eta_f_tilde: 0.0155,
            eta_b: 0.0126,
            eta_q: 0.56,
            accidental_rate: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_f", self.eta_f),
            ("eta_f_tilde", self.eta_f_tilde),
            ("eta_b", self.eta_b),
            ("eta_q", self.eta_q),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.accidental_rate.is_finite() && self.accidental_rate >= 0.0) {
            return Err(Error::param(
                "accidental_rate",
                format!("must be non-negative, got {}", self.accidental_rate),
            ));
        }
        Ok(())
    }

    /// `eta_f_tilde * eta_q * eta_b`: backward coincidences per herald per unit `integral P_e dt / tau0`.
    pub fn backward_efficiency(&self) -> f64 {
        self.eta_f_tilde * self.eta_q * self.eta_b
    }
}

/// True-coincidence probability per herald in each bin.
#[derive(Debug, Clone)]
pub struct ChannelProbabilities {
    pub forward_bins: BinSpec,
    pub backward_bins: BinSpec,
    pub f0: Vec<f64>,
    pub f: Vec<f64>,
    pub b: Vec<f64>,
}

impl ChannelProbabilities {
    pub fn bins(&self, channel: Channel) -> BinSpec {
        if channel.is_forward() {
            self.forward_bins
        } else {
            self.backward_bins
        }
    }

    pub fn get(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::ForwardNoAtom => &self.f0,
            Channel::ForwardWithAtom => &self.f,
            Channel::Backward => &self.b,
        }
    }
}

/// Grid with step `step` covering both bin ranges, for building envelopes
/// that can feed [`synthesize`].
pub fn synthesis_grid(forward: &BinSpec, backward: &BinSpec, step: f64) -> Result<TimeGrid> {
    let lo = forward.start.min(backward.start);
    let hi = forward.end().max(backward.end());
    TimeGrid::from_range(lo, hi, step)
}

fn sum_bins(per_interval: &[f64], bins: &BinSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    let (first, stride) = bins.locate_on(grid)?;
    Ok((0..bins.count)
        .map(|i| {
            let a = first + i * stride;
            per_interval[a..a + stride].iter().sum()
        })
        .collect())
}

/// Per-bin coincidence probabilities from the scattering model.
///
/// Forward bins get `eta_f` times the fraction of the photon arriving in
/// the bin; backward bins get `eta_f_tilde eta_q eta_b integral P_e / tau0`.
/// The envelope grid must contain every bin edge as a node.
pub fn coincidence_probabilities(
    env: &PhotonEnvelope,
    atom: &AtomParams,
    chain: &EfficiencyChain,
    forward: &BinSpec,
    backward: &BinSpec,
) -> Result<ChannelProbabilities> {
    chain.validate()?;
    let grid = *env.grid();
    forward.locate_on(&grid)?;
    backward.locate_on(&grid)?;
    let s = scatter(atom, env)?;
    let ints = interval_integrals(atom, env, &s.trace)?;
    let norm: f64 = ints.r_f0.iter().sum();
    let fwd = chain.eta_f / norm;
    let bwd = chain.backward_efficiency() / atom.tau0();
    let scale = |v: Vec<f64>, c: f64| v.into_iter().map(|x| x * c).collect::<Vec<_>>();
    let probs = ChannelProbabilities {
        forward_bins: *forward,
        backward_bins: *backward,
        f0: scale(sum_bins(&ints.r_f0, forward, &grid)?, fwd),
        f: scale(sum_bins(&ints.r_f, forward, &grid)?, fwd),
        b: scale(sum_bins(&ints.p_e, backward, &grid)?, bwd),
    };
    for ch in Channel::ALL {
        let total: f64 = probs.get(ch).iter().sum();
        if total > 1.0 + 1e-12 || probs.get(ch).iter().any(|p| !(*p >= -1e-15)) {
            return Err(Error::param(
                "efficiency chain",
                format!(
                    "{} coincidence probability per herald is {total}, outside [0, 1]",
                    ch.label()
                ),
            ));
        }
    }
    Ok(probs)
}

/// The three synthesized histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub g_f0: CoincidenceHistogram,
    pub g_f: CoincidenceHistogram,
    pub g_b: CoincidenceHistogram,
}

impl HistogramSet {
    pub fn get(&self, channel: Channel) -> &CoincidenceHistogram {
        match channel {
            Channel::ForwardNoAtom => &self.g_f0,
            Channel::ForwardWithAtom => &self.g_f,
            Channel::Backward => &self.g_b,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisConfig {
    pub chain: EfficiencyChain,
    pub n_heralds: u64,
    pub forward_bins: BinSpec,
    pub backward_bins: BinSpec,
    pub seed: u64,
    /// Worker thread cap; `None` reads [`THREADS_ENV`], falling back to all cores.
    pub threads: Option<usize>,
}

impl SynthesisConfig {
    pub fn new(chain: EfficiencyChain, n_heralds: u64, seed: u64) -> Self {
        SynthesisConfig {
            chain,
            n_heralds,
            forward_bins: BinSpec::forward_default(),
            backward_bins: BinSpec::backward_default(),
            seed,
            threads: None,
        }
    }
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

fn channel_index(channel: Channel) -> u64 {
    match channel {
        Channel::ForwardNoAtom => 0,
        Channel::ForwardWithAtom => 1,
        Channel::Backward => 2,
    }
}

fn block_rng(seed: u64, channel: Channel, block: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((channel_index(channel) << 48) | block);
    rng
}

/// Counts for `n` heralds: multinomial true coincidences plus a Poisson floor.
fn sample_block(probs: &[f64], accidental_mean: f64, n: u64, rng: &mut ChaCha20Rng) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (c, &p) in counts.iter_mut().zip(probs) {
        if left == 0 {
            break;
        }
        if p > 0.0 {
            let q = (p / mass).clamp(0.0, 1.0);
            let k = Binomial::new(left, q)
                .expect("probability clamped to [0, 1]")
                .sample(rng);
            *c = k;
            left -= k;
        }
        mass = (mass - p).max(f64::MIN_POSITIVE);
    }
    if accidental_mean > 0.0 {
        let mean = accidental_mean * n as f64;
        let poisson = Poisson::new(mean).expect("positive finite mean");
        for c in counts.iter_mut() {
            *c += poisson.sample(rng) as u64;
        }
    }
    counts
}

fn sample_channel(
    probs: &[f64],
    accidental_mean: f64,
    n: u64,
    seed: u64,
    channel: Channel,
) -> Vec<u64> {
    let blocks = n.div_ceil(BLOCK_HERALDS);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let size = BLOCK_HERALDS.min(n - b * BLOCK_HERALDS);
            let mut rng = block_rng(seed, channel, b);
            sample_block(probs, accidental_mean, size, &mut rng)
        })
        .reduce(
            || vec![0u64; probs.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Draw histograms from precomputed bin probabilities.
pub fn synthesize_from(
    probs: &ChannelProbabilities,
    cfg: &SynthesisConfig,
) -> Result<HistogramSet> {
    cfg.chain.validate()?;
    if cfg.n_heralds == 0 {
        return Err(Error::param("n_heralds", "must be positive"));
    }
    let threads = cfg.threads.or_else(threads_from_env).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let draw = |ch: Channel| -> Result<CoincidenceHistogram> {
        let bins = probs.bins(ch);
        let accidental_mean = cfg.chain.accidental_rate * bins.width;
        let counts = pool.install(|| {
            sample_channel(probs.get(ch), accidental_mean, cfg.n_heralds, cfg.seed, ch)
        });
        CoincidenceHistogram::new(bins, counts, cfg.n_heralds, ch)
    };
    Ok(HistogramSet {
        g_f0: draw(Channel::ForwardNoAtom)?,
        g_f: draw(Channel::ForwardWithAtom)?,
        g_b: draw(Channel::Backward)?,
    })
}

/// Synthesize `(G_f0, G_f, G_b)` for `cfg.n_heralds` heralds.
pub fn synthesize(
    env: &PhotonEnvelope,
    atom: &AtomParams,
    cfg: &SynthesisConfig,
) -> Result<HistogramSet> {
    if cfg.n_heralds == 0 {
        return Err(Error::param("n_heralds", "must be positive"));
    }
    let probs =
        coincidence_probabilities(env, atom, &cfg.chain, &cfg.forward_bins, &cfg.backward_bins)?;
    synthesize_from(&probs, cfg)
}

/// Mean counts the synthesizer would produce, accidentals included.
pub fn expected_counts(
    probs: &ChannelProbabilities,
    chain: &EfficiencyChain,
    n_heralds: f64,
) -> Result<[BinnedCounts; 3]> {
    let make = |ch: Channel| {
        let bins = probs.bins(ch);
        let floor = chain.accidental_rate * bins.width;
        let counts = probs
            .get(ch)
            .iter()
            .map(|p| n_heralds * (p + floor))
            .collect();
        BinnedCounts::expected(bins, counts, n_heralds, ch)
    };
    Ok([
        make(Channel::ForwardNoAtom)?,
        make(Channel::ForwardWithAtom)?,
        make(Channel::Backward)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{make_decaying, make_rising};
    use proptest::prelude::*;

    const TAU0: f64 = 26.2;
    const TAU_P: f64 = 13.3;
    const LAMBDA: f64 = 0.033;

    fn setup(rising: bool) -> (PhotonEnvelope, AtomParams) {
        let grid = synthesis_grid(
            &BinSpec::forward_default(),
            &BinSpec::backward_default(),
            0.05,
        )
        .unwrap();
        let env = if rising {
            make_rising(TAU_P, grid).unwrap()
        } else {
            make_decaying(TAU_P, grid).unwrap()
        };
        (env, AtomParams::new(TAU0, LAMBDA).unwrap())
    }

    /// Upper chi-square quantile by the Wilson-Hilferty approximation.
    fn chi2_quantile(k: f64, z: f64) -> f64 {
        let a = 2.0 / (9.0 * k);
        k * (1.0 - a + z * a.sqrt()).powi(3)
    }

    /// Pearson statistic over bins with expectation of at least 5, pooling the rest.
    fn pearson(observed: &[u64], expected: &[f64]) -> (f64, usize) {
        let (mut chi2, mut dof) = (0.0, 0usize);
        let (mut pool_o, mut pool_e) = (0.0, 0.0);
        for (&o, &e) in observed.iter().zip(expected) {
            if e >= 5.0 {
                chi2 += (o as f64 - e).powi(2) / e;
                dof += 1;
            } else {
                pool_o += o as f64;
                pool_e += e;
            }
        }
        if pool_e >= 5.0 {
            chi2 += (pool_o - pool_e).powi(2) / pool_e;
            dof += 1;
        }
        (chi2, dof)
    }

    #[test]
    fn probabilities_follow_the_chain() {
        let (env, atom) = setup(true);
        let chain = EfficiencyChain::measured();
        let p = coincidence_probabilities(
            &env,
            &atom,
            &chain,
            &BinSpec::forward_default(),
            &BinSpec::backward_default(),
        )
        .unwrap();
        let f0: f64 = p.f0.iter().sum();
        assert!((f0 - chain.eta_f).abs() < 1e-12);
        let f: f64 = p.f.iter().sum();
        let eps = crate::dynamics::extinction_closed_form(&atom, TAU_P);
        assert!((f / chain.eta_f - (1.0 - eps)).abs() < 1e-4);
        // integral of the rising-photon population is P_e(0) (tau_p + tau0)
        let b: f64 = p.b.iter().sum();
        let pe_area = crate::dynamics::peak_pe_rising(&atom, TAU_P) * (TAU_P + TAU0);
        let want = chain.eta_f_tilde * chain.eta_q * chain.eta_b * pe_area / TAU0;
        assert!((b / want - 1.0).abs() < 1e-3, "{b} vs {want}");
    }

    #[test]
    fn total_forward_counts() {
        let (env, atom) = setup(false);
        let cfg = SynthesisConfig {
            chain: EfficiencyChain {
                accidental_rate: 0.0,
                ..EfficiencyChain::measured()
            },
            ..SynthesisConfig::new(EfficiencyChain::measured(), 10_000_000, 11)
        };
        let h = synthesize(&env, &atom, &cfg).unwrap();
        let total = h.g_f0.total() as f64;
        assert!((total - 37_000.0).abs() < 3.0 * 37_000f64.sqrt(), "{total}");
        assert_eq!(h.g_f0.n_heralds, 10_000_000);
        assert_eq!(h.g_b.bins, BinSpec::backward_default());
    }

    #[test]
    fn zero_efficiency_gives_empty_histograms() {
        let (env, atom) = setup(true);
        let chain = EfficiencyChain {
            eta_f: 0.0,
            eta_b: 0.0,
            accidental_rate: 0.0,
            ..EfficiencyChain::measured()
        };
        let h = synthesize(&env, &atom, &SynthesisConfig::new(chain, 1_000_000, 5)).unwrap();
        for ch in Channel::ALL {
            assert_eq!(h.get(ch).total(), 0);
        }
    }

    #[test]
    fn zero_heralds_and_bad_chain_rejected() {
        let (env, atom) = setup(true);
        let cfg = SynthesisConfig::new(EfficiencyChain::measured(), 0, 1);
        assert!(synthesize(&env, &atom, &cfg).is_err());
        let bad = EfficiencyChain {
            eta_f: 1.5,
            ..EfficiencyChain::measured()
        };
        assert!(synthesize(&env, &atom, &SynthesisConfig::new(bad, 10, 1)).is_err());
    }

    #[test]
    fn envelope_must_cover_bins() {
        let env = make_decaying(TAU_P, crate::envelope::default_grid(TAU_P).unwrap()).unwrap();
        let atom = AtomParams::new(TAU0, LAMBDA).unwrap();
        let cfg = SynthesisConfig::new(EfficiencyChain::measured(), 10, 1);
        assert!(matches!(
            synthesize(&env, &atom, &cfg),
            Err(Error::GridTooShort(_))
        ));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let (env, atom) = setup(true);
        let mut cfg = SynthesisConfig::new(EfficiencyChain::measured(), 5_000_000, 42);
        cfg.threads = Some(1);
        let a = synthesize(&env, &atom, &cfg).unwrap();
        cfg.threads = Some(4);
        let b = synthesize(&env, &atom, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        let c = synthesize(&env, &atom, &cfg).unwrap();
        assert_ne!(a.g_f0.counts, c.g_f0.counts);
    }

    #[test]
    fn chi_square_goodness_of_fit() {
        let (env, atom) = setup(false);
        let chain = EfficiencyChain::measured();
        let (fb, bb) = (BinSpec::forward_default(), BinSpec::backward_default());
        let probs = coincidence_probabilities(&env, &atom, &chain, &fb, &bb).unwrap();
        // the backward channel needs more heralds to populate enough bins
        for (n, channels) in [
            (
                10_000_000u64,
                &[Channel::ForwardNoAtom, Channel::ForwardWithAtom][..],
            ),
            (1_000_000_000, &[Channel::Backward][..]),
        ] {
            let cfg = SynthesisConfig::new(chain, n, 2024);
            let h = synthesize_from(&probs, &cfg).unwrap();
            let expected = expected_counts(&probs, &chain, n as f64).unwrap();
            for &ch in channels {
                let exp = expected.iter().find(|e| e.channel == ch).unwrap();
                let (chi2, dof) = pearson(&h.get(ch).counts, &exp.counts);
                assert!(dof >= 10, "{ch:?}: {dof} usable bins");
                // 0.1% upper tail
                assert!(
                    chi2 < chi2_quantile(dof as f64, 3.090),
                    "{ch:?}: chi2 {chi2} for {dof} dof"
                );
            }
        }
    }

    #[test]
    fn channels_are_uncorrelated() {
        let (env, atom) = setup(true);
        // strong efficiencies so every channel carries many counts per run
        let chain = EfficiencyChain {
            eta_f: 0.5,
            eta_f_tilde: 1.0,
            eta_b: 1.0,
            eta_q: 1.0,
            accidental_rate: 0.0,
        };
        let probs = coincidence_probabilities(
            &env,
            &atom,
            &chain,
            &BinSpec::forward_default(),
            &BinSpec::backward_default(),
        )
        .unwrap();
        let runs = 400;
        let totals: Vec<(f64, f64)> = (0..runs)
            .map(|seed| {
                let cfg = SynthesisConfig {
                    threads: Some(1),
                    ..SynthesisConfig::new(chain, 20_000, seed)
                };
                let h = synthesize_from(&probs, &cfg).unwrap();
                (h.g_f.total() as f64, h.g_b.total() as f64)
            })
            .collect();
        let n = runs as f64;
        let (mx, my) = totals
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in &totals {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() < 4.0 / n.sqrt(), "correlation {r}");
    }

    #[test]
    fn accidentals_are_flat() {
        let (env, atom) = setup(true);
        let chain = EfficiencyChain {
            eta_f: 0.0,
            eta_b: 0.0,
            accidental_rate: 1e-6,
            ..EfficiencyChain::measured()
        };
        let h = synthesize(&env, &atom, &SynthesisConfig::new(chain, 1_000_000, 9)).unwrap();
        // mean 2 per forward bin, 5 per backward bin
        let mean = h.g_f0.total() as f64 / 300.0;
        assert!((mean - 2.0).abs() < 4.0 * (2.0f64 / 300.0).sqrt());
        let mean_b = h.g_b.total() as f64 / 120.0;
        assert!((mean_b - 5.0).abs() < 4.0 * (5.0f64 / 120.0).sqrt());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn true_coincidences_never_exceed_heralds(seed in any::<u64>(), n in 1u64..200_000, rising in any::<bool>()) {
            let (env, atom) = setup(rising);
            let chain = EfficiencyChain { accidental_rate: 0.0, ..EfficiencyChain::measured() };
            let cfg = SynthesisConfig::new(chain, n, seed);
            let h = synthesize(&env, &atom, &cfg).unwrap();
            for ch in Channel::ALL {
                prop_assert!(h.get(ch).counts.iter().sum::<u64>() <= n);
            }
            prop_assert_eq!(&h, &synthesize(&env, &atom, &cfg).unwrap());
        }
    }
}
