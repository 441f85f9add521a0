//! File formats: panel CSV, coefficient CSV and the JSON documents.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use narvb_core::{CoefficientTensor, IndicatorSet, NodeType, Segmentation, TimeSeriesPanel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Marker opening the optional node-type row of a panel CSV.
pub const TYPE_MARKER: &str = "#type:";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes a float so that it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a panel: a header row of node ids, an optional `#type:` row, then one
/// row per time step, oldest first.
pub fn read_panel(path: &Path) -> Result<TimeSeriesPanel> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| CliError::format(path, e.to_string()))?,
        None => return Err(CliError::format(path, "missing header row")),
    };
    let ids: Vec<String> = header.iter().map(str::to_owned).collect();
    let m = ids.len();
    if ids.iter().any(String::is_empty) {
        return Err(CliError::format(path, "empty node id in header"));
    }

    let mut types = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for rec in records {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rows == 0 && types.is_none() && rec.get(0).is_some_and(|c| c.starts_with(TYPE_MARKER)) {
            types = Some(parse_types(path, &rec, m, line)?);
            continue;
        }
        if rec.len() != m {
            return Err(CliError::RaggedRows { path: path.to_path_buf(), line, found: rec.len(), expected: m });
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                cell: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(CliError::NonFiniteCell {
                    path: path.to_path_buf(),
                    line,
                    column: c + 1,
                    cell: cell.to_owned(),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let mut panel = TimeSeriesPanel::new(DMatrix::from_row_slice(rows, m, &values), ids)?;
    if let Some(t) = types {
        panel = panel.with_node_types(t)?;
    }
    Ok(panel)
}

fn parse_types(path: &Path, rec: &csv::StringRecord, m: usize, line: u64) -> Result<Vec<NodeType>> {
    if rec.len() != m {
        return Err(CliError::RaggedRows { path: path.to_path_buf(), line, found: rec.len(), expected: m });
    }
    rec.iter()
        .enumerate()
        .map(|(c, cell)| {
            let cell = if c == 0 { &cell[TYPE_MARKER.len()..] } else { cell };
            NodeType::parse(cell).ok_or_else(|| {
                CliError::format(path, format!("line {line}, column {}: unknown node type {cell:?}", c + 1))
            })
        })
        .collect()
}

pub fn write_panel(path: &Path, panel: &TimeSeriesPanel) -> Result<()> {
    let mut w = create(path)?;
    let mut out = String::new();
    out.push_str(&panel.node_ids().join(","));
    out.push('\n');
    if let Some(types) = panel.node_types() {
        out.push_str(TYPE_MARKER);
        let names: Vec<&str> = types.iter().map(|t| t.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for row in panel.values().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// `lag,source,target,value` with 1-based indices, every entry.
pub fn write_coefficients(path: &Path, b: &CoefficientTensor) -> Result<()> {
    let mut out = String::from("lag,source,target,value\n");
    for l in 0..b.p() {
        for i in 0..b.m() {
            for j in 0..b.m() {
                out.push_str(&format!("{},{},{},{}\n", l + 1, i + 1, j + 1, fmt_f64(b.get(l, i, j))));
            }
        }
    }
    write_text(path, &out)
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientTensor> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut entries = Vec::new();
    for rec in reader.deserialize::<(usize, usize, usize, f64)>() {
        let (l, i, j, v) = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        if l == 0 || i == 0 || j == 0 || !v.is_finite() {
            return Err(CliError::format(path, "indices are 1-based and values finite"));
        }
        entries.push((l - 1, i - 1, j - 1, v));
    }
    let p = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let m = entries.iter().map(|e| e.1.max(e.2) + 1).max().unwrap_or(0);
    let mut b = CoefficientTensor::zeros(p, m);
    for (l, i, j, v) in entries {
        b.set(l, i, j, v);
    }
    Ok(b)
}

/// Two-column numeric CSV with a header.
pub fn write_series(path: &Path, header: &str, rows: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
    let mut out = format!("{header}\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{}\n", fmt_f64(v)));
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// Segmentation file `{"groups": [[1, 2], [3]]}` checked against `m` nodes.
pub fn read_segmentation(path: &Path, m: usize) -> Result<Segmentation> {
    let seg: Segmentation = read_json(path)?;
    if seg.m() != m {
        return Err(CliError::format(path, format!("segmentation covers {} nodes, panel has {m}", seg.m())));
    }
    Ok(seg)
}

/// Groups nodes by their declared type, in order of first appearance.
pub fn segmentation_by_type(panel: &TimeSeriesPanel, path: &Path) -> Result<Segmentation> {
    let types = panel
        .node_types()
        .ok_or_else(|| CliError::format(path, "panel has no #type: row to group by"))?;
    let mut order: Vec<NodeType> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, t) in types.iter().enumerate() {
        match order.iter().position(|o| o == t) {
            Some(k) => groups[k].push(i),
            None => {
                order.push(*t);
                groups.push(vec![i]);
            }
        }
    }
    Ok(Segmentation::new(groups, types.len())?)
}

/// `indicators.json` / `truth.json`: the selection and the grouping it refers
/// to, 1-based groups, `gamma[lag][node]`, `eta[lag][node][group]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorFile {
    pub p: usize,
    pub m: usize,
    pub groups: Vec<Vec<usize>>,
    pub gamma: Vec<Vec<bool>>,
    pub eta: Vec<Vec<Vec<bool>>>,
}

impl IndicatorFile {
    pub fn new(ind: &IndicatorSet, seg: &Segmentation) -> Self {
        let gamma = (0..ind.p).map(|l| (0..ind.m).map(|i| ind.gamma(l, i)).collect()).collect();
        let eta = (0..ind.p)
            .map(|l| (0..ind.m).map(|i| (0..ind.g).map(|k| ind.eta(l, i, k)).collect()).collect())
            .collect();
        IndicatorFile { p: ind.p, m: ind.m, groups: seg.to_one_based(), gamma, eta }
    }

    pub fn load(path: &Path) -> Result<(IndicatorSet, Segmentation)> {
        let f: IndicatorFile = read_json(path)?;
        f.into_parts().map_err(|msg| CliError::format(path, msg))
    }

    pub fn into_parts(self) -> std::result::Result<(IndicatorSet, Segmentation), String> {
        let seg = Segmentation::from_one_based(&self.groups, self.m).map_err(|e| e.to_string())?;
        let g = seg.g();
        let shape_ok = self.gamma.len() == self.p
            && self.eta.len() == self.p
            && self.gamma.iter().all(|r| r.len() == self.m)
            && self.eta.iter().all(|r| r.len() == self.m && r.iter().all(|e| e.len() == g));
        if !shape_ok {
            return Err(format!("gamma/eta must be {} x {} (x {g} groups)", self.p, self.m));
        }
        let mut ind = IndicatorSet::empty(self.p, self.m, g);
        for l in 0..self.p {
            for i in 0..self.m {
                ind.set_gamma(l, i, self.gamma[l][i]);
                for k in 0..g {
                    ind.set_eta(l, i, k, self.eta[l][i][k]);
                }
            }
        }
        Ok((ind, seg))
    }
}
