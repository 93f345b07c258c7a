//! CSV and manifest files of a run, and reading counts back for re-analysis.

use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::VisibilityStats;
use crate::error::{Error, Result};
use crate::scenario::RunResult;

pub const COUNTS_FILE: &str = "counts.csv";
pub const PD_FILE: &str = "pd.csv";
pub const VISIBILITY_FILE: &str = "visibility.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes the visibility and histogram tables of an analysis.
pub fn write_analysis(stats: &VisibilityStats, bin_s: f64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let vis = dir.join(VISIBILITY_FILE);
    write_csv(
        &vis,
        &["time_s", "V", "valid"],
        stats.visibility.iter().zip(&stats.valid).enumerate().map(|(i, (v, ok))| {
            [num((i as f64 + 0.5) * bin_s), num(*v), u8::from(*ok).to_string()]
        }),
    )?;
    let hist = dir.join(HISTOGRAM_FILE);
    write_csv(
        &hist,
        &["bin_lo", "bin_hi", "freq"],
        stats.histogram.bins().map(|(lo, hi, f)| [num(lo), num(hi), f.to_string()]),
    )?;
    Ok(vec![vis, hist])
}

/// Writes every output file of a run into `dir`, creating it if needed.
pub fn write_outputs(result: &RunResult, stats: &VisibilityStats, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let counts = &result.counts;

    let counts_path = dir.join(COUNTS_FILE);
    write_csv(
        &counts_path,
        &["time_s", "raw", "net"],
        counts
            .times()
            .zip(counts.raw.iter().zip(&counts.net))
            .map(|(t, (r, n))| [num(t), r.to_string(), num(*n)]),
    )?;

    let pd_path = dir.join(PD_FILE);
    write_csv(
        &pd_path,
        &["time_s", "intensity"],
        result.pd.iter().map(|(t, i)| [num(*t), num(*i)]),
    )?;

    let diag_path = dir.join(DIAGNOSTICS_FILE);
    write_csv(
        &diag_path,
        &[
            "time_s",
            "overlap_q",
            "overlap_ph",
            "visibility_q",
            "expected_counts",
            "phase_q",
            "phase_ph",
            "lock_error_rms",
            "ph_fringes",
            "pol_objective_arm1",
            "pol_objective_arm2",
            "stretcher_resets",
        ],
        result.diagnostics.iter().map(|d| {
            [
                num(d.time_s),
                num(d.overlap_q),
                num(d.overlap_ph),
                num(d.visibility_q),
                num(d.expected_counts),
                num(d.phase_q),
                num(d.phase_ph),
                num(d.lock_error_rms),
                num(d.ph_fringes),
                num(d.pol_objective[0]),
                num(d.pol_objective[1]),
                d.stretcher_resets.to_string(),
            ]
        }),
    )?;

    let mut written = vec![counts_path, pd_path, diag_path];
    written.extend(write_analysis(stats, counts.bin_s, dir)?);

    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, result.config.to_manifest()).map_err(io_err(&manifest))?;
    written.push(manifest);
    Ok(written)
}

/// Net counts and bin width recovered from a `counts.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountsTable {
    pub time_s: Vec<f64>,
    pub raw: Vec<u64>,
    pub net: Vec<f64>,
}

impl CountsTable {
    /// Bin width from the spacing of the first two rows, or twice the first
    /// bin centre for a single-row table.
    pub fn bin_s(&self) -> Result<f64> {
        let dt = match self.time_s.as_slice() {
            [a, b, ..] => b - a,
            [a] => 2.0 * a,
            [] => return Err(Error::invalid("counts table is empty")),
        };
        if !(dt > 0.0) {
            return Err(Error::invalid("counts table times are not increasing"));
        }
        Ok(dt)
    }
}

pub fn read_counts(path: &Path) -> Result<CountsTable> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column `{name}`", path.display())))
    };
    let (it, ir, inet) = (col("time_s")?, col("raw")?, col("net")?);
    let mut table = CountsTable {
        time_s: Vec::new(),
        raw: Vec::new(),
        net: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::invalid(format!("{}: row {}: bad {what}", path.display(), line + 2));
        table.time_s.push(field(it).parse().map_err(|_| bad("time_s"))?);
        table.raw.push(field(ir).parse().map_err(|_| bad("raw"))?);
        table.net.push(field(inet).parse().map_err(|_| bad("net"))?);
    }
    Ok(table)
}
