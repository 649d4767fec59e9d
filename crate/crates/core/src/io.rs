//! Dataset directories and atomic file writes.
//!
//! A dataset directory holds
//! - `manifest.json`: `{P, L, K, T, N, grid, has_truth}`;
//! - `data.csv`: `sample,node,function,time_index,value`, 0-based indices;
//! - with ground truth: `adjacency.csv` (P rows of 0/1), `truth_params.json`
//!   (model schema) and `latents.csv` (N rows of M latent coefficients).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::topological_order;
use crate::linalg::Mat;
use crate::model::{FunctionalDataset, ModelParams, ProblemShape};
use crate::synth::GroundTruth;

pub const MANIFEST: &str = "manifest.json";
pub const DATA: &str = "data.csv";
pub const ADJACENCY: &str = "adjacency.csv";
pub const TRUTH_PARAMS: &str = "truth_params.json";
pub const LATENTS: &str = "latents.csv";

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Number formatting used in every CSV file: 17 significant digits, which
/// round-trips any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    /// Basis counts used to generate the data, when known.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub grid: Vec<f64>,
    pub has_truth: bool,
}

fn data_csv(data: &FunctionalDataset) -> Result<Vec<u8>> {
    let s = &data.shape;
    let mut w = csv::Writer::from_writer(Vec::new());
    let sink = |e: csv::Error| Error::Input(format!("csv encoding failed: {e}"));
    w.write_record(["sample", "node", "function", "time_index", "value"]).map_err(sink)?;
    for n in 0..s.n {
        for (j, l) in s.series() {
            let off = s.obs_offset(j, l);
            for t in 0..s.t {
                w.write_record([
                    n.to_string(),
                    j.to_string(),
                    l.to_string(),
                    t.to_string(),
                    fmt_f64(data.values[(n, off + t)]),
                ])
                .map_err(sink)?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv encoding failed: {e}")))
}

fn matrix_csv(rows: usize, cols: usize, cell: impl Fn(usize, usize) -> String) -> Vec<u8> {
    let mut out = String::new();
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| cell(i, j)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Write a dataset directory, creating it if needed.
pub fn write_dataset(dir: &Path, data: &FunctionalDataset, truth: Option<&GroundTruth>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &data.shape;
    let manifest = Manifest {
        p: s.p,
        l: s.l.clone(),
        k: Some(s.k.clone()),
        t: s.t,
        n: s.n,
        grid: data.grid.clone(),
        has_truth: truth.is_some(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    write_atomic(&dir.join(DATA), &data_csv(data)?)?;
    if let Some(t) = truth {
        let p = s.p;
        let adj = matrix_csv(p, p, |i, j| if t.adjacency_true[i][j] { "1".into() } else { "0".into() });
        write_atomic(&dir.join(ADJACENCY), &adj)?;
        write_json(&dir.join(TRUTH_PARAMS), &t.params_true)?;
        if let Some(x) = &t.latents {
            write_atomic(&dir.join(LATENTS), &matrix_csv(x.nrows(), x.ncols(), |i, j| fmt_f64(x[(i, j)])))?;
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, what: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing {what}"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        reason: format!("bad {what} {raw:?}"),
    })
}

/// Parse `data.csv` against the manifest. Every (sample, node, function,
/// time) cell must appear exactly once.
pub fn parse_data_csv(text: &str, shape: &ProblemShape) -> Result<Mat> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected = ["sample", "node", "function", "time_index", "value"];
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header must be {}", expected.join(",")),
        });
    }
    let mut values = Mat::zeros(shape.n, shape.obs_len());
    let mut seen = vec![false; shape.n * shape.obs_len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        if rec.len() != 5 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let n: usize = parse_field(&rec, 0, "sample", line)?;
        let j: usize = parse_field(&rec, 1, "node", line)?;
        let l: usize = parse_field(&rec, 2, "function", line)?;
        let t: usize = parse_field(&rec, 3, "time_index", line)?;
        let v: f64 = parse_field(&rec, 4, "value", line)?;
        if n >= shape.n || j >= shape.p || t >= shape.t || l >= shape.l[j] {
            return Err(Error::Parse {
                line,
                reason: format!("index ({n}, {j}, {l}, {t}) outside the manifest shape"),
            });
        }
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                reason: "value is not finite".into(),
            });
        }
        let col = shape.obs_offset(j, l) + t;
        let cell = n * shape.obs_len() + col;
        if seen[cell] {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate entry for ({n}, {j}, {l}, {t})"),
            });
        }
        seen[cell] = true;
        values[(n, col)] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let (n, col) = (missing / shape.obs_len(), missing % shape.obs_len());
        return Err(Error::Input(format!(
            "data.csv is missing entries (first: sample {n}, column {col})"
        )));
    }
    Ok(values)
}

fn parse_matrix<T: std::str::FromStr>(text: &str, rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<T>>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(Error::Input(format!("{what}: expected {rows} rows, found {}", lines.len())));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let cells: Vec<&str> = l.split(',').map(str::trim).collect();
            if cells.len() != cols {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("{what}: expected {cols} fields"),
                });
            }
            cells
                .iter()
                .map(|c| {
                    c.parse().map_err(|_| Error::Parse {
                        line: i + 1,
                        reason: format!("{what}: bad value {c:?}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Loaded dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub data: FunctionalDataset,
    pub truth: Option<GroundTruth>,
}

/// Read a dataset directory. Datasets without a recorded `K` get
/// `K_j = min(3, T - 1)` as a placeholder; fitting normally overrides it.
pub fn read_dataset(dir: &Path) -> Result<DatasetDir> {
    let mpath = dir.join(MANIFEST);
    if !mpath.is_file() {
        return Err(Error::Input(format!("{} not found", mpath.display())));
    }
    let manifest: Manifest = serde_json::from_str(&read_to_string(&mpath)?)
        .map_err(|e| Error::Input(format!("{}: {e}", mpath.display())))?;
    if manifest.l.len() != manifest.p {
        return Err(Error::config("L", format!("has {} entries, expected P = {}", manifest.l.len(), manifest.p)));
    }
    let k = manifest
        .k
        .clone()
        .unwrap_or_else(|| vec![3.min(manifest.t.saturating_sub(1)).max(1); manifest.p]);
    let shape = ProblemShape::new(manifest.l.clone(), k, manifest.t, manifest.n)?;
    let dpath = dir.join(DATA);
    let values = parse_data_csv(&read_to_string(&dpath)?, &shape).map_err(|e| match e {
        Error::Parse { line, reason } => Error::Input(format!("{}:{line}: {reason}", dpath.display())),
        other => other,
    })?;
    let data = FunctionalDataset::with_grid(shape, values, manifest.grid.clone())?;

    let truth = if manifest.has_truth {
        let p = manifest.p;
        let adj: Vec<Vec<u8>> = parse_matrix(&read_to_string(&dir.join(ADJACENCY))?, p, p, ADJACENCY)?;
        let adjacency: Vec<Vec<bool>> = adj.iter().map(|r| r.iter().map(|&v| v != 0).collect()).collect();
        let order = topological_order(&adjacency)
            .ok_or_else(|| Error::Input(format!("{ADJACENCY} contains a cycle")))?;
        let params: ModelParams = serde_json::from_str(&read_to_string(&dir.join(TRUTH_PARAMS))?)
            .map_err(|e| Error::Input(format!("{TRUTH_PARAMS}: {e}")))?;
        let lpath = dir.join(LATENTS);
        let latents = if lpath.is_file() {
            let m = params.shape.m();
            let rows: Vec<Vec<f64>> = parse_matrix(&read_to_string(&lpath)?, manifest.n, m, LATENTS)?;
            Some(Mat::from_fn(manifest.n, m, |i, j| rows[i][j]))
        } else {
            None
        };
        Some(GroundTruth {
            params_true: params,
            adjacency_true: adjacency,
            order,
            coefficients: Vec::new(),
            latents,
        })
    } else {
        None
    };
    Ok(DatasetDir {
        path: dir.to_path_buf(),
        manifest,
        data,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    #[test]
    fn dataset_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            shape: ProblemShape::uniform(3, 2, 2, 7, 4).unwrap(),
            seed: 3,
            ..SynthConfig::default()
        };
        let (data, truth) = generate_dataset(&cfg).unwrap();
        write_dataset(dir.path(), &data, Some(&truth)).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.data.values, data.values);
        let t = back.truth.unwrap();
        assert_eq!(t.params_true, truth.params_true);
        assert_eq!(t.adjacency_true, truth.adjacency_true);
        assert_eq!(t.latents, truth.latents);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let shape = ProblemShape::uniform(1, 1, 1, 2, 1).unwrap();
        let text = "sample,node,function,time_index,value\n0,0,0,0,1.0\n0,0,0,1,abc\n";
        match parse_data_csv(text, &shape) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "sample,node,function,time_index,value\n0,0,0,0,1.0\n";
        assert!(matches!(parse_data_csv(text, &shape), Err(Error::Input(_))));
    }

    #[test]
    fn number_format_keeps_precision() {
        let v = 0.1 + 0.2;
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert!(s.chars().filter(|c| c.is_ascii_digit()).count() >= 15);
    }
}
