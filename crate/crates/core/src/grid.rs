//! Uniform time grids and sampled series on them.
//!
//! All times are in nanoseconds. A grid is the set of nodes
//! `start + k * step` for `k` in `0..len`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing grid nodes.
const NODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl TimeGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::param(
                "step",
                format!("must be positive, got {step}"),
            ));
        }
        if !start.is_finite() {
            return Err(Error::param("start", "must be finite"));
        }
        if len < 2 {
            return Err(Error::GridTooShort(format!(
                "need at least 2 nodes, got {len}"
            )));
        }
        Ok(TimeGrid { start, step, len })
    }

    /// Grid over `[t_min, t_max]`. `t_max` is rounded to the nearest node.
    pub fn from_range(t_min: f64, t_max: f64, step: f64) -> Result<Self> {
        if !(t_max > t_min) {
            return Err(Error::param(
                "t_max",
                format!("must exceed t_min ({t_min}), got {t_max}"),
            ));
        }
        if !(step > 0.0) {
            return Err(Error::param(
                "step",
                format!("must be positive, got {step}"),
            ));
        }
        let n = ((t_max - t_min) / step).round() as usize + 1;
        TimeGrid::new(t_min, step, n)
    }

    /// Grid symmetric about `t = 0` that contains `t = 0` as a node and
    /// reaches at least `half_span` on both sides.
    pub fn symmetric(half_span: f64, step: f64) -> Result<Self> {
        if !(half_span > 0.0) {
            return Err(Error::param(
                "half_span",
                format!("must be positive, got {half_span}"),
            ));
        }
        if !(step > 0.0) {
            return Err(Error::param(
                "step",
                format!("must be positive, got {step}"),
            ));
        }
        let n_half = (half_span / step - NODE_TOL).ceil() as usize;
        TimeGrid::new(-(n_half as f64) * step, step, 2 * n_half + 1)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Last node.
    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }

    #[inline]
    /// Node time. A node within rounding of `t = 0` is exactly zero, so
    /// one-sided limits at the origin are selected correctly.
    pub fn time(&self, k: usize) -> f64 {
        let t = self.start + k as f64 * self.step;
        if t.abs() < NODE_TOL * self.step {
            0.0
        } else {
            t
        }
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |k| self.time(k))
    }

    /// Index of the node at `t`, if `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.start) / self.step;
        let k = x.round();
        if (x - k).abs() <= 1e-6 && k >= 0.0 && (k as usize) < self.len {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        let scale = self.step.abs().max(other.step.abs());
        self.len == other.len
            && (self.step - other.step).abs() <= NODE_TOL * scale
            && (self.start - other.start).abs() <= 1e-6 * scale
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: [{}, step {}, {} nodes] vs [{}, step {}, {} nodes]",
                self.start, self.step, self.len, other.start, other.step, other.len
            )))
        }
    }
}

/// Samples of a real quantity on a uniform grid, optionally with a
/// per-sample standard deviation.
///
/// For histogram-derived series the grid nodes are the bin starts and
/// `step` is the bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl Series {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Series {
            grid,
            values,
            sigma: None,
        })
    }

    pub fn with_sigma(grid: TimeGrid, values: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != values.len() {
            return Err(Error::GridMismatch(format!(
                "{} sigmas for {} values",
                sigma.len(),
                values.len()
            )));
        }
        let mut s = Series::new(grid, values)?;
        s.sigma = Some(sigma);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.times().zip(self.values.iter().copied())
    }

    /// Sum of `values * step` over all samples.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.step()
    }

    pub fn sigma_or_zero(&self, k: usize) -> f64 {
        self.sigma.as_ref().map_or(0.0, |s| s[k])
    }

    /// Index and value of the largest sample.
    pub fn peak(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| {
                if v > best.1 {
                    (k, v)
                } else {
                    best
                }
            })
    }
}
