//! CSV and JSON files.
//!
//! Every CSV written here starts with one `#` comment line naming the tool
//! version and the SHA-256 of the inputs it was derived from; readers skip
//! `#` lines. JSON outputs carry the same information in a `provenance`
//! object. Floats are printed in shortest round-trip form, so identical
//! inputs give byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{AtomParams, ExcitationTrace};
use crate::envelope::{make_tabulated, PhotonEnvelope};
use crate::error::{Error, Result};
use crate::grid::{Series, TimeGrid};
use crate::histogram::{BinSpec, Channel, CoincidenceHistogram};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Relative tolerance on the spacing of time columns read from files.
const SPACING_RTOL: f64 = 1e-6;

/// Tool version and input digest stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub input_sha256: String,
}

impl Provenance {
    /// Digest of `inputs`, each prefixed with its length so that
    /// concatenation boundaries matter.
    pub fn of_inputs(inputs: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for part in inputs {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            input_sha256: hex::encode(h.finalize()),
        }
    }

    /// Digest of the contents of `paths`.
    pub fn of_files(paths: &[&Path]) -> Result<Self> {
        let contents = paths
            .iter()
            .map(fs::read)
            .collect::<std::io::Result<Vec<_>>>()?;
        let parts: Vec<&[u8]> = contents.iter().map(Vec::as_slice).collect();
        Ok(Provenance::of_inputs(&parts))
    }

    pub fn header_line(&self) -> String {
        format!(
            "# {} {} input-sha256={}",
            self.tool, self.version, self.input_sha256
        )
    }
}

fn data_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::DataFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Write a header comment, a column-name row and numeric rows.
pub fn write_columns(
    path: &Path,
    prov: &Provenance,
    names: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", prov.header_line())?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(names)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Header names and rows of a numeric CSV, skipping `#` lines.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_error(path, e.to_string()))?;
    let names: Vec<String> = r
        .headers()
        .map_err(|e| data_error(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| data_error(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    data_error(
                        path,
                        format!("data row {}: `{f}` is not a number", line + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

fn require_columns(path: &Path, names: &[String], want: &[&str]) -> Result<()> {
    if names.len() < want.len() || names.iter().zip(want).any(|(a, b)| a != b) {
        return Err(data_error(
            path,
            format!(
                "expected columns {}, found {}",
                want.join(","),
                names.join(",")
            ),
        ));
    }
    Ok(())
}

/// Uniform grid through the given times.
fn grid_from_times(path: &Path, times: &[f64]) -> Result<TimeGrid> {
    if times.len() < 2 {
        return Err(data_error(path, "need at least two rows"));
    }
    let step = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(data_error(path, "times must increase"));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * step)).abs() > SPACING_RTOL * step.max(1.0) {
            return Err(data_error(
                path,
                format!("time column is not uniform at row {}", k + 1),
            ));
        }
    }
    TimeGrid::new(times[0], step, times.len())
}

/// Envelope CSV: `t_ns, re_amplitude, im_amplitude`.
pub fn write_envelope_csv(path: &Path, env: &PhotonEnvelope, prov: &Provenance) -> Result<()> {
    let g = env.grid();
    write_columns(
        path,
        prov,
        &["t_ns", "re_amplitude", "im_amplitude"],
        g.times()
            .zip(env.amplitude())
            .map(|(t, a)| vec![t, a.re, a.im]),
    )
}

/// Read an envelope CSV as a tabulated (renormalized) envelope.
pub fn read_envelope_csv(path: &Path) -> Result<PhotonEnvelope> {
    let (names, rows) = read_columns(path)?;
    require_columns(path, &names, &["t_ns", "re_amplitude", "im_amplitude"])?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let grid = grid_from_times(path, &times)?;
    let samples = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
    make_tabulated(samples, grid).map_err(|e| data_error(path, e.to_string()))
}

/// Series CSV: `t_ns, value`, plus `sigma` when the series carries one.
pub fn write_series_csv(path: &Path, series: &Series, prov: &Provenance) -> Result<()> {
    match &series.sigma {
        Some(s) => write_columns(
            path,
            prov,
            &["t_ns", "value", "sigma"],
            series.iter().zip(s).map(|((t, v), s)| vec![t, v, *s]),
        ),
        None => write_columns(
            path,
            prov,
            &["t_ns", "value"],
            series.iter().map(|(t, v)| vec![t, v]),
        ),
    }
}

pub fn read_series_csv(path: &Path) -> Result<Series> {
    let (names, rows) = read_columns(path)?;
    require_columns(path, &names, &["t_ns", "value"])?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let grid = grid_from_times(path, &times)?;
    let values = rows.iter().map(|r| r[1]).collect();
    if names.get(2).map(String::as_str) == Some("sigma") {
        Series::with_sigma(grid, values, rows.iter().map(|r| r[2]).collect())
    } else {
        Series::new(grid, values)
    }
}

/// Trace CSV: `t_ns, p_e, sigma` (sigma 0 for model traces).
pub fn write_trace_csv(path: &Path, trace: &ExcitationTrace, prov: &Provenance) -> Result<()> {
    let sigma = |k: usize| trace.sigma.as_ref().map_or(0.0, |s| s[k]);
    write_columns(
        path,
        prov,
        &["t_ns", "p_e", "sigma"],
        trace
            .grid
            .times()
            .zip(&trace.p_e)
            .enumerate()
            .map(|(k, (t, p))| vec![t, *p, sigma(k)]),
    )
}

/// JSON sidecar next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub n_heralds: u64,
    pub channel: Channel,
    pub dt_ns: f64,
    pub seed: Option<u64>,
    /// Envelope profile the data was generated with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `g_f0.csv` -> `g_f0.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Write `bin_start_ns, bin_end_ns, counts` and the sidecar.
pub fn write_histogram(
    csv_path: &Path,
    hist: &CoincidenceHistogram,
    seed: Option<u64>,
    envelope: Option<&str>,
    prov: &Provenance,
) -> Result<()> {
    let bins = &hist.bins;
    let mut out = Vec::new();
    writeln!(out, "{}", prov.header_line())?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["bin_start_ns", "bin_end_ns", "counts"])?;
        for (i, c) in hist.counts.iter().enumerate() {
            w.write_record([
                bins.bin_start(i).to_string(),
                bins.bin_end(i).to_string(),
                c.to_string(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(csv_path, out)?;
    let sidecar = HistogramSidecar {
        n_heralds: hist.n_heralds,
        channel: hist.channel,
        dt_ns: bins.width,
        seed,
        envelope: envelope.map(str::to_string),
        provenance: Some(prov.clone()),
    };
    write_json(&sidecar_path(csv_path), &sidecar)
}

/// Read a histogram CSV and its sidecar, checking that they agree.
pub fn read_histogram(csv_path: &Path) -> Result<(CoincidenceHistogram, HistogramSidecar)> {
    let side_path = sidecar_path(csv_path);
    let sidecar: HistogramSidecar = read_json(&side_path).map_err(|e| match e {
        Error::Io(io) => data_error(&side_path, format!("cannot read sidecar: {io}")),
        Error::Json(j) => data_error(&side_path, j.to_string()),
        other => other,
    })?;
    let (names, rows) = read_columns(csv_path)?;
    require_columns(csv_path, &names, &["bin_start_ns", "bin_end_ns", "counts"])?;
    if rows.is_empty() {
        return Err(data_error(csv_path, "no bins"));
    }
    let dt = sidecar.dt_ns;
    let start = rows[0][0];
    for (i, r) in rows.iter().enumerate() {
        let (a, b) = (start + i as f64 * dt, start + (i + 1) as f64 * dt);
        if (r[0] - a).abs() > SPACING_RTOL * dt || (r[1] - b).abs() > SPACING_RTOL * dt {
            return Err(data_error(
                csv_path,
                format!(
                    "bin {} is [{}, {}], expected uniform {dt} ns bins",
                    i + 1,
                    r[0],
                    r[1]
                ),
            ));
        }
        if !(r[2] >= 0.0 && r[2].fract() == 0.0) {
            return Err(data_error(
                csv_path,
                format!("bin {}: counts must be non-negative integers", i + 1),
            ));
        }
    }
    let bins =
        BinSpec::new(start, dt, rows.len()).map_err(|e| data_error(csv_path, e.to_string()))?;
    let counts = rows.iter().map(|r| r[2] as u64).collect();
    let hist = CoincidenceHistogram::new(bins, counts, sidecar.n_heralds, sidecar.channel)?;
    Ok((hist, sidecar))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Parameter file `{tau0_ns, tau_p_ns, lambda}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub tau0_ns: f64,
    pub tau_p_ns: f64,
    pub lambda: f64,
}

impl ParamsFile {
    /// Any read or structural problem is a [`Error::Config`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn atom(&self) -> Result<AtomParams> {
        AtomParams::new(self.tau0_ns, self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{default_grid, make_decaying, EnvelopeShape};

    fn prov() -> Provenance {
        Provenance::of_inputs(&[b"test"])
    }

    #[test]
    fn provenance_digest() {
        let p = Provenance::of_inputs(&[b"ab", b"c"]);
        let q = Provenance::of_inputs(&[b"a", b"bc"]);
        assert_ne!(p.input_sha256, q.input_sha256);
        assert_eq!(p.input_sha256.len(), 64);
        assert!(p.header_line().starts_with("# photon-atom "));
    }

    #[test]
    fn envelope_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.csv");
        let env = make_decaying(13.3, default_grid(13.3).unwrap()).unwrap();
        write_envelope_csv(&path, &env, &prov()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# photon-atom"));
        assert!(text.lines().nth(1).unwrap() == "t_ns,re_amplitude,im_amplitude");
        let back = read_envelope_csv(&path).unwrap();
        assert_eq!(back.shape(), EnvelopeShape::Tabulated);
        assert!(back.grid().same_as(env.grid()));
        for (a, b) in back.amplitude().iter().zip(env.amplitude()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g_f.csv");
        let bins = BinSpec::new(-4.0, 2.0, 4).unwrap();
        let h = CoincidenceHistogram::new(bins, vec![0, 3, 17, 1], 1000, Channel::ForwardWithAtom)
            .unwrap();
        write_histogram(&path, &h, Some(7), Some("rising"), &prov()).unwrap();
        let (back, side) = read_histogram(&path).unwrap();
        assert_eq!(back, h);
        assert_eq!(side.seed, Some(7));
        assert_eq!(side.envelope.as_deref(), Some("rising"));
        let sidecar: serde_json::Value = read_json(&sidecar_path(&path)).unwrap();
        for key in ["n_heralds", "channel", "dt_ns", "seed"] {
            assert!(sidecar.get(key).is_some(), "{key}");
        }
        assert_eq!(sidecar["channel"], "forward_with_atom");
    }

    #[test]
    fn malformed_histograms_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let bins = BinSpec::new(0.0, 2.0, 3).unwrap();
        let h = CoincidenceHistogram::new(bins, vec![1, 2, 3], 10, Channel::Backward).unwrap();
        write_histogram(&path, &h, None, None, &prov()).unwrap();

        let good = fs::read_to_string(&path).unwrap();
        fs::write(&path, good.replace("2,4,2", "2,5,2")).unwrap();
        assert!(matches!(
            read_histogram(&path),
            Err(Error::DataFormat { .. })
        ));
        fs::write(&path, good.replace("2,4,2", "2,4,x")).unwrap();
        assert!(matches!(
            read_histogram(&path),
            Err(Error::DataFormat { .. })
        ));
        fs::write(&path, good.replace("2,4,2", "2,4,1.5")).unwrap();
        assert!(matches!(
            read_histogram(&path),
            Err(Error::DataFormat { .. })
        ));
        fs::write(&path, &good).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(
            read_histogram(&path),
            Err(Error::DataFormat { .. })
        ));
    }

    #[test]
    fn series_with_and_without_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let g = TimeGrid::new(-1.0, 0.5, 5).unwrap();
        let s = Series::with_sigma(g, vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.1; 5]).unwrap();
        let p = dir.path().join("s.csv");
        write_series_csv(&p, &s, &prov()).unwrap();
        assert_eq!(read_series_csv(&p).unwrap(), s);
        let plain = Series::new(g, vec![0.0; 5]).unwrap();
        write_series_csv(&p, &plain, &prov()).unwrap();
        assert_eq!(read_series_csv(&p).unwrap(), plain);
    }

    #[test]
    fn params_file_names_missing_key() {
        let err = serde_json::from_str::<ParamsFile>(r#"{"tau_p_ns": 13.3, "lambda": 0.033}"#)
            .unwrap_err();
        assert!(err.to_string().contains("tau0_ns"));
    }
}
