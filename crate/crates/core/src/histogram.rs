//! Coincidence histograms: uniform delay bins relative to the herald.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Relative tolerance when matching bin edges against grid nodes.
const EDGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    ForwardNoAtom,
    ForwardWithAtom,
    Backward,
}

impl Channel {
    pub const ALL: [Channel; 3] = [
        Channel::ForwardNoAtom,
        Channel::ForwardWithAtom,
        Channel::Backward,
    ];

    /// Short label used in file names: `g_f0`, `g_f`, `g_b`.
    pub fn label(self) -> &'static str {
        match self {
            Channel::ForwardNoAtom => "g_f0",
            Channel::ForwardWithAtom => "g_f",
            Channel::Backward => "g_b",
        }
    }

    pub fn is_forward(self) -> bool {
        !matches!(self, Channel::Backward)
    }
}

/// `count` uniform bins `[start + i width, start + (i + 1) width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub start: f64,
    pub width: f64,
    pub count: usize,
}

impl BinSpec {
    pub fn new(start: f64, width: f64, count: usize) -> Result<Self> {
        if !start.is_finite() {
            return Err(Error::param("bin_start", "must be finite"));
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::param(
                "bin_width",
                format!("must be positive, got {width}"),
            ));
        }
        if count == 0 {
            return Err(Error::param("bin_count", "need at least one bin"));
        }
        Ok(BinSpec {
            start,
            width,
            count,
        })
    }

    /// Bins of width `width` tiling `[lo, hi]`; `hi - lo` must be a multiple of `width`.
    pub fn from_range(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::param(
                "bin_width",
                format!("must be positive, got {width}"),
            ));
        }
        let n = (hi - lo) / width;
        let count = n.round();
        if !(count >= 1.0) || (n - count).abs() > EDGE_TOL {
            return Err(Error::param(
                "bins",
                format!("[{lo}, {hi}] ns is not a whole number of {width} ns bins"),
            ));
        }
        BinSpec::new(lo, width, count as usize)
    }

    /// 2 ns bins over [-300, 300] ns.
    pub fn forward_default() -> Self {
        BinSpec::from_range(-300.0, 300.0, 2.0).expect("valid default")
    }

    /// 5 ns bins over [-300, 300] ns.
    pub fn backward_default() -> Self {
        BinSpec::from_range(-300.0, 300.0, 5.0).expect("valid default")
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.start + i as f64 * self.width
    }

    pub fn bin_end(&self, i: usize) -> f64 {
        self.bin_start(i + 1)
    }

    pub fn center(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.width
    }

    pub fn end(&self) -> f64 {
        self.bin_start(self.count)
    }

    pub fn starts(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.bin_start(i))
    }

    /// Bin edges as a grid with one more node than there are bins.
    pub fn edge_grid(&self) -> TimeGrid {
        TimeGrid::new(self.start, self.width, self.count + 1).expect("validated bins")
    }

    pub fn same_as(&self, other: &BinSpec) -> bool {
        self.count == other.count
            && (self.width - other.width).abs() <= EDGE_TOL * self.width
            && (self.start - other.start).abs() <= EDGE_TOL * self.width
    }

    pub(crate) fn ensure_same(&self, other: &BinSpec, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: bins {}+{}x{} vs {}+{}x{}",
                self.start, self.count, self.width, other.start, other.count, other.width
            )))
        }
    }

    /// `(first node, nodes per bin)` locating the bins on `grid`.
    pub(crate) fn locate_on(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        let per_bin = self.width / grid.step();
        let stride = per_bin.round();
        let offset = (self.start - grid.start()) / grid.step();
        let first = offset.round();
        if stride < 1.0 || (per_bin - stride).abs() > EDGE_TOL * per_bin.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "bin width {} ns is not a multiple of the grid step {} ns",
                self.width,
                grid.step()
            )));
        }
        if (offset - first).abs() > EDGE_TOL * per_bin.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "bin edge {} ns does not fall on a grid node",
                self.start
            )));
        }
        let (first, stride) = (first as i64, stride as usize);
        let last = first + (self.count * stride) as i64;
        if first < 0 || last > grid.len() as i64 - 1 {
            return Err(Error::GridTooShort(format!(
                "bins [{}, {}] ns exceed the grid [{}, {}] ns",
                self.start,
                self.end(),
                grid.start(),
                grid.end()
            )));
        }
        Ok((first as usize, stride))
    }
}

/// Raw integer coincidence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bins: BinSpec,
    pub counts: Vec<u64>,
    pub n_heralds: u64,
    pub channel: Channel,
}

impl CoincidenceHistogram {
    pub fn new(bins: BinSpec, counts: Vec<u64>, n_heralds: u64, channel: Channel) -> Result<Self> {
        if counts.len() != bins.count {
            return Err(Error::GridMismatch(format!(
                "{} counts for {} bins",
                counts.len(),
                bins.count
            )));
        }
        Ok(CoincidenceHistogram {
            bins,
            counts,
            n_heralds,
            channel,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts as reals with Poisson uncertainty `sqrt(c)`.
    pub fn to_binned(&self) -> BinnedCounts {
        BinnedCounts {
            bins: self.bins,
            counts: self.counts.iter().map(|&c| c as f64).collect(),
            sigma: self.counts.iter().map(|&c| (c as f64).sqrt()).collect(),
            n_heralds: self.n_heralds as f64,
            channel: self.channel,
        }
    }
}

/// Real-valued counts with per-bin uncertainty: accidental-corrected data
/// or noiseless expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts {
    pub bins: BinSpec,
    pub counts: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_heralds: f64,
    pub channel: Channel,
}

impl BinnedCounts {
    /// Noiseless counts, with the Poisson uncertainty they would carry.
    pub fn expected(
        bins: BinSpec,
        counts: Vec<f64>,
        n_heralds: f64,
        channel: Channel,
    ) -> Result<Self> {
        if counts.len() != bins.count {
            return Err(Error::GridMismatch(format!(
                "{} counts for {} bins",
                counts.len(),
                bins.count
            )));
        }
        let sigma = counts.iter().map(|c| c.max(0.0).sqrt()).collect();
        Ok(BinnedCounts {
            bins,
            counts,
            sigma,
            n_heralds,
            channel,
        })
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Uncertainty with the one-count floor used for weighting, `sqrt(max(c, 1))`
    /// for raw Poisson data.
    pub fn weight_sigma(&self, i: usize) -> f64 {
        self.sigma[i].max(1.0)
    }

    /// A copy with every count and the herald number multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> BinnedCounts {
        BinnedCounts {
            bins: self.bins,
            counts: self.counts.iter().map(|c| c * factor).collect(),
            sigma: self.sigma.iter().map(|s| s * factor.abs().sqrt()).collect(),
            n_heralds: self.n_heralds * factor,
            channel: self.channel,
        }
    }
}
