//! CSV and JSON files read and written by the command-line tool.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file reads back to the exact values that were written.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::FmrlsOutput;
use crate::ecm_sim::{EcmParameters, EcmPoint, SampledDataset};
use crate::error::{Error, Result};
use crate::identify::PhysicalCurves;
use crate::regression::{RegressionProblem, N_BLOCKS};

/// Relative sampling jitter accepted without an explicit resampling request.
pub const JITTER_TOLERANCE: f64 = 1e-6;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Column names of the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub t: String,
    pub i_b: String,
    pub v_b: String,
    /// Measured SOC column, used when present. The simulator's `z_true`
    /// is ground truth and is not read unless mapped here.
    pub z: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            t: "t".into(),
            i_b: "i_b".into(),
            v_b: "v_b".into(),
            z: "z".into(),
        }
    }
}

impl ColumnMap {
    /// Parses `key=name` pairs separated by commas, e.g. `t=time,v_b=voltage`.
    pub fn parse_overrides(&mut self, spec: &str) -> Result<()> {
        for pair in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, name) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("column mapping '{pair}' is not key=name"))
            })?;
            let slot = match key.trim() {
                "t" => &mut self.t,
                "i_b" => &mut self.i_b,
                "v_b" => &mut self.v_b,
                "z" => &mut self.z,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown column key '{other}' (expected t, i_b, v_b or z)"
                    )))
                }
            };
            *slot = name.trim().to_string();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvOptions {
    pub columns: ColumnMap,
    /// Negate the current column on ingest.
    pub discharge_positive: bool,
    /// Resample to the median step even when jitter exceeds the tolerance.
    pub resample: bool,
}

/// Dataset plus the SOC column if the file had one.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: SampledDataset,
    pub z: Option<Vec<f64>>,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
    index: HashMap<String, usize>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let index = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.clone(), i))
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok(Table {
        headers,
        rows,
        index,
    })
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<Vec<f64>> {
        let col = *self.index.get(name).ok_or_else(|| {
            schema(
                path,
                format!(
                    "missing column '{name}' (found: {})",
                    self.headers.join(", ")
                ),
            )
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                let raw = rec.get(col).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    // header is line 1
                    schema(
                        path,
                        format!(
                            "line {}, column '{name}': cannot parse '{raw}' as a number",
                            r + 2
                        ),
                    )
                })
            })
            .collect()
    }

    fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

/// Reads a current/voltage record, resampling slightly irregular time
/// stamps onto a uniform grid.
pub fn read_dataset_csv(path: &Path, opts: &CsvOptions) -> Result<LoadedDataset> {
    let table = read_table(path)?;
    let t = table.column(path, &opts.columns.t)?;
    let mut i_b = table.column(path, &opts.columns.i_b)?;
    let v_b = table.column(path, &opts.columns.v_b)?;
    let z = if table.has(&opts.columns.z) {
        Some(table.column(path, &opts.columns.z)?)
    } else {
        None
    };
    if opts.discharge_positive {
        i_b.iter_mut().for_each(|v| *v = -*v);
    }
    if t.len() < 2 {
        return Err(schema(
            path,
            format!("need at least 2 rows, found {}", t.len()),
        ));
    }
    if let Some((k, _)) = t
        .iter()
        .chain(&i_b)
        .chain(&v_b)
        .enumerate()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(schema(
            path,
            format!("non-finite value at line {}", k % t.len() + 2),
        ));
    }

    let mut steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|&d| !(d > 0.0)) {
        return Err(schema(path, "time stamps must be strictly increasing"));
    }
    steps.sort_by(|a, b| a.total_cmp(b));
    let dt = steps[steps.len() / 2];
    let jitter = t
        .windows(2)
        .map(|w| ((w[1] - w[0]) - dt).abs() / dt)
        .fold(0.0, f64::max);

    let (t, i_b, v_b, z) = match SampledDataset::new(t.clone(), i_b.clone(), v_b.clone()) {
        Ok(_) => (t, i_b, v_b, z),
        Err(_) if jitter <= JITTER_TOLERANCE || opts.resample => {
            log::warn!(
                "{}: sampling jitter {:.3e} relative; resampling to dt = {dt} by zero-order hold",
                path.display(),
                jitter
            );
            let grid = zoh_grid(&t, dt);
            let pick = |x: &[f64]| grid.iter().map(|&k| x[k]).collect::<Vec<_>>();
            let t_new = (0..grid.len()).map(|k| t[0] + k as f64 * dt).collect();
            (t_new, pick(&i_b), pick(&v_b), z.as_deref().map(pick))
        }
        Err(_) => {
            return Err(schema(
                path,
                format!(
                    "non-uniform sampling (relative jitter {jitter:.3e} exceeds {JITTER_TOLERANCE:e}); pass --resample to resample"
                ),
            ))
        }
    };
    let data = SampledDataset::new(t, i_b, v_b)?;
    Ok(LoadedDataset { data, z })
}

// For each uniform grid time, the index of the last sample at or before it.
fn zoh_grid(t: &[f64], dt: f64) -> Vec<usize> {
    let n = ((t[t.len() - 1] - t[0]) / dt + 1e-9).floor() as usize + 1;
    let mut idx = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let tk = t[0] + k as f64 * dt;
        let slack = 1e-9 * dt;
        while j + 1 < t.len() && t[j + 1] <= tk + slack {
            j += 1;
        }
        idx.push(j);
    }
    idx
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn flag(v: bool) -> String {
    if v { "1" } else { "0" }.to_string()
}

/// Writes `t,i_b,v_b[,z_true]`.
pub fn write_dataset_csv(path: &Path, data: &SampledDataset, z_true: Option<&[f64]>) -> Result<()> {
    if let Some(z) = z_true {
        if z.len() != data.len() {
            return Err(Error::LengthMismatch {
                left: z.len(),
                right: data.len(),
            });
        }
    }
    let header: &[&str] = if z_true.is_some() {
        &["t", "i_b", "v_b", "z_true"]
    } else {
        &["t", "i_b", "v_b"]
    };
    write_rows(
        path,
        header,
        (0..data.len()).map(|k| {
            let mut row = vec![num(data.t[k]), num(data.i_b[k]), num(data.v_b[k])];
            if let Some(z) = z_true {
                row.push(num(z[k]));
            }
            row
        }),
    )
}

const CURVE_HEADER: [&str; 6] = ["z", "r0", "r1", "tau1", "voc", "valid"];

/// Writes `z,r0,r1,tau1,voc,valid`.
pub fn write_curves_csv(path: &Path, curves: &PhysicalCurves) -> Result<()> {
    write_rows(
        path,
        &CURVE_HEADER,
        (0..curves.len()).map(|k| {
            vec![
                num(curves.z[k]),
                num(curves.r0[k]),
                num(curves.r1[k]),
                num(curves.tau1[k]),
                num(curves.voc[k]),
                flag(curves.valid[k]),
            ]
        }),
    )
}

fn parse_flags(path: &Path, table: &Table, name: &str) -> Result<Vec<bool>> {
    let raw = table.column(path, name)?;
    raw.iter()
        .enumerate()
        .map(|(r, &v)| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            _ => Err(schema(
                path,
                format!("line {}, column '{name}': expected 0 or 1", r + 2),
            )),
        })
        .collect()
}

pub fn read_curves_csv(path: &Path) -> Result<PhysicalCurves> {
    let table = read_table(path)?;
    let valid = if table.has("valid") {
        parse_flags(path, &table, "valid")?
    } else {
        vec![true; table.rows.len()]
    };
    Ok(PhysicalCurves {
        z: table.column(path, "z")?,
        r0: table.column(path, "r0")?,
        r1: table.column(path, "r1")?,
        tau1: table.column(path, "tau1")?,
        voc: table.column(path, "voc")?,
        valid,
    })
}

/// Writes `t,z,r0,r1,tau1,voc,valid`; `z` is empty when unknown.
pub fn write_fmrls_csv(path: &Path, out: &FmrlsOutput) -> Result<()> {
    write_rows(
        path,
        &["t", "z", "r0", "r1", "tau1", "voc", "valid"],
        (0..out.len()).map(|k| {
            vec![
                num(out.t[k]),
                out.z.as_ref().map(|z| num(z[k])).unwrap_or_default(),
                num(out.r0[k]),
                num(out.r1[k]),
                num(out.tau1[k]),
                num(out.voc[k]),
                flag(out.valid[k]),
            ]
        }),
    )
}

pub fn read_fmrls_csv(path: &Path) -> Result<FmrlsOutput> {
    let table = read_table(path)?;
    let z_raw: Vec<&str> = table
        .rows
        .iter()
        .map(|r| {
            r.get(table.index.get("z").copied().unwrap_or(usize::MAX))
                .unwrap_or("")
        })
        .collect();
    let z = if z_raw.iter().all(|s| s.is_empty()) {
        None
    } else {
        Some(table.column(path, "z")?)
    };
    Ok(FmrlsOutput {
        t: table.column(path, "t")?,
        z,
        r0: table.column(path, "r0")?,
        r1: table.column(path, "r1")?,
        tau1: table.column(path, "tau1")?,
        voc: table.column(path, "voc")?,
        valid: parse_flags(path, &table, "valid")?,
    })
}

/// Writes `t,v_b_measured,v_b_predicted,error` with `error = measured -
/// predicted`.
pub fn write_prediction_csv(
    path: &Path,
    t: &[f64],
    measured: &[f64],
    predicted: &[f64],
) -> Result<()> {
    if t.len() != measured.len() || t.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: measured.len(),
            right: predicted.len(),
        });
    }
    write_rows(
        path,
        &["t", "v_b_measured", "v_b_predicted", "error"],
        (0..t.len()).map(|k| {
            vec![
                num(t[k]),
                num(measured[k]),
                num(predicted[k]),
                num(measured[k] - predicted[k]),
            ]
        }),
    )
}

/// Reads two named columns of any CSV file.
pub fn read_columns(path: &Path, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let table = read_table(path)?;
    Ok((table.column(path, a)?, table.column(path, b)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parameter curves given on a grid, linearly interpolated and held
/// constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedParameters {
    curves: PhysicalCurves,
}

impl TabulatedParameters {
    pub fn new(curves: PhysicalCurves) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if curves.z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "tabulated SOC grid must be strictly increasing".into(),
            ));
        }
        Ok(TabulatedParameters { curves })
    }

    pub fn curves(&self) -> &PhysicalCurves {
        &self.curves
    }
}

impl EcmParameters for TabulatedParameters {
    fn at(&self, z: f64) -> EcmPoint {
        let c = &self.curves;
        let n = c.len();
        let lerp = |s: &[f64]| {
            if n == 1 || z <= c.z[0] {
                return s[0];
            }
            if z >= c.z[n - 1] {
                return s[n - 1];
            }
            let j = c.z.partition_point(|&x| x <= z);
            let w = (z - c.z[j - 1]) / (c.z[j] - c.z[j - 1]);
            s[j - 1] + w * (s[j] - s[j - 1])
        };
        EcmPoint {
            r0: lerp(&c.r0),
            r1: lerp(&c.r1),
            tau1: lerp(&c.tau1),
            voc: lerp(&c.voc),
        }
    }
}

/// Magic bytes of the regression dump.
pub const DUMP_MAGIC: &[u8; 8] = b"CTLPVDMP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub rows: usize,
    pub cols: usize,
    /// Basis functions per block.
    pub h: usize,
    pub blocks: Vec<String>,
    pub cutoff: f64,
    pub dt: f64,
    pub warmup: usize,
    pub seed: u64,
    pub perturb_sigma: f64,
    /// Always `"f64-le: y, then A column-major"`.
    pub layout: String,
}

/// Writes the target and regressor matrix as magic, a little-endian `u64`
/// header length, the JSON header, then raw little-endian doubles.
pub fn write_problem_dump(path: &Path, problem: &RegressionProblem) -> Result<()> {
    let header = DumpHeader {
        rows: problem.rows(),
        cols: problem.a.ncols(),
        h: problem.h(),
        blocks: ["F0[g v_b]", "F1[g i_b]", "F0[g i_b]", "F1[g]", "F0[g]"]
            .iter()
            .take(N_BLOCKS)
            .map(|s| s.to_string())
            .collect(),
        cutoff: problem.svf.cutoff,
        dt: problem.svf.dt,
        warmup: problem.warmup,
        seed: problem.seed,
        perturb_sigma: problem.perturb_sigma,
        layout: "f64-le: y, then A column-major".into(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = create(path)?;
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    put(DUMP_MAGIC)?;
    put(&(json.len() as u64).to_le_bytes())?;
    put(&json)?;
    for v in problem.y.iter().chain(problem.a.iter()) {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a dump back as `(header, y, A)`.
pub fn read_problem_dump(
    path: &Path,
) -> Result<(DumpHeader, nalgebra::DVector<f64>, nalgebra::DMatrix<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let bad = |m: &str| schema(path, m.to_string());
    if bytes.len() < 16 || &bytes[..8] != DUMP_MAGIC {
        return Err(bad("not a regression dump"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16 + hlen;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let header: DumpHeader = serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let count = header.rows * (header.cols + 1);
    if bytes.len() != body + 8 * count {
        return Err(bad("data size does not match header"));
    }
    let values: Vec<f64> = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let y = nalgebra::DVector::from_column_slice(&values[..header.rows]);
    let a = nalgebra::DMatrix::from_column_slice(header.rows, header.cols, &values[header.rows..]);
    Ok((header, y, a))
}
