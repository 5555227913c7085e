//! Long-format dataset ingestion and the blocks spec.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{
    close, zero_replace, CompositionBlock, ControlSeries, FunctionalPanel, CLOSURE_TOL,
    DEFAULT_ZERO_REPLACEMENT,
};
use crate::error::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

/// Tolerance on the unit sum of a share row read from disk.
pub const SHARE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    /// Nonnegative counts: zeros are replaced, then rows are closed.
    Counts,
    /// Shares that must already sum to one.
    #[default]
    Shares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDecl {
    pub name: String,
    #[serde(default)]
    pub values: ValueKind,
    /// Series names of the parts; part labels in the panel are the same names.
    pub parts: Vec<String>,
}

/// Which series play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSpec {
    pub version: u32,
    pub response: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default = "default_zero")]
    pub zero_replacement: f64,
    pub blocks: Vec<BlockDecl>,
}

fn default_zero() -> f64 {
    DEFAULT_ZERO_REPLACEMENT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridPolicy {
    /// Keep only the times observed for every unit and series.
    #[default]
    Intersect,
    /// Fail on the first missing cell.
    Error,
}

impl GridPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intersect" => Ok(GridPolicy::Intersect),
            "error" => Ok(GridPolicy::Error),
            _ => Err(Error::Config(format!("unknown grid policy `{s}` (intersect|error)"))),
        }
    }
}

impl BlocksSpec {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: BlocksSpec = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SPEC_VERSION {
            return Err(Error::Config(format!(
                "blocks spec version {} is not supported (expected {SPEC_VERSION})",
                self.version
            )));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("the blocks spec declares no blocks".into()));
        }
        if !(self.zero_replacement > 0.0) {
            return Err(Error::Config("zero_replacement must be positive".into()));
        }
        let mut seen = HashSet::new();
        let names = std::iter::once(&self.response)
            .chain(&self.controls)
            .chain(self.blocks.iter().flat_map(|b| &b.parts));
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("series `{name}` is declared twice")));
            }
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if b.parts.len() < 2 {
                return Err(Error::DegenerateBlock {
                    block: j,
                    size: b.parts.len(),
                });
            }
        }
        Ok(())
    }

    fn series_count(&self) -> usize {
        1 + self.controls.len() + self.blocks.iter().map(|b| b.parts.len()).sum::<usize>()
    }
}

struct Cell {
    value: f64,
    line: usize,
}

/// Reads a long CSV (`unit,time,series,value`) and assembles a validated
/// panel according to `spec`.
pub fn ingest_dataset(data_csv: &Path, blocks_spec: &Path, policy: GridPolicy) -> Result<FunctionalPanel> {
    let spec = BlocksSpec::read(blocks_spec)?;
    ingest_with_spec(data_csv, &spec, policy)
}

pub fn ingest_with_spec(data_csv: &Path, spec: &BlocksSpec, policy: GridPolicy) -> Result<FunctionalPanel> {
    spec.validate()?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: data_csv.to_path_buf(),
        line,
        message,
    };
    let series_index: HashMap<&str, usize> = {
        let mut order: Vec<&str> = vec![spec.response.as_str()];
        order.extend(spec.controls.iter().map(String::as_str));
        order.extend(spec.blocks.iter().flat_map(|b| b.parts.iter().map(String::as_str)));
        order.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(data_csv)
        .map_err(|e| parse_err(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected = ["unit", "time", "series", "value"];
    if header.len() != 4 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(
            1,
            format!("header must be `unit,time,series,value`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut times: HashSet<u64> = HashSet::new();
    let mut cells: HashMap<(usize, u64, usize), Cell> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let (unit, time, series, value) = (&record[0], &record[1], &record[2], &record[3]);
        if unit.is_empty() {
            return Err(parse_err(line, "empty unit".into()));
        }
        let time: f64 = time
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| parse_err(line, format!("time `{time}` is not a finite number")))?;
        let value: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("value `{value}` is not a finite number")))?;
        let s = *series_index
            .get(series)
            .ok_or_else(|| parse_err(line, format!("unknown series `{series}`")))?;
        let u = match unit_index.get(unit) {
            Some(&u) => u,
            None => {
                units.push(unit.to_string());
                unit_index.insert(unit.to_string(), units.len() - 1);
                units.len() - 1
            }
        };
        // +0.0 folds -0.0 onto 0.0
        let key = (time + 0.0).to_bits();
        times.insert(key);
        if let Some(prev) = cells.insert((u, key, s), Cell { value, line }) {
            return Err(parse_err(
                line,
                format!("duplicate entry for unit `{unit}`, time {time}, series `{series}` (first at line {})", prev.line),
            ));
        }
    }
    if units.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }

    let mut all_times: Vec<f64> = times.into_iter().map(f64::from_bits).collect();
    all_times.sort_by(f64::total_cmp);
    let n_series = spec.series_count();
    let complete = |u: usize, t: f64| (0..n_series).all(|s| cells.contains_key(&(u, t.to_bits(), s)));
    let grid: Vec<f64> = match policy {
        GridPolicy::Error => {
            for (u, name) in units.iter().enumerate() {
                for &t in &all_times {
                    if !complete(u, t) {
                        return Err(Error::MissingCell {
                            unit: name.clone(),
                            time: t,
                        });
                    }
                }
            }
            all_times
        }
        GridPolicy::Intersect => all_times
            .into_iter()
            .filter(|&t| (0..units.len()).all(|u| complete(u, t)))
            .collect(),
    };
    if grid.len() < 2 {
        return Err(Error::InsufficientGrid(grid.len()));
    }

    let n = units.len();
    let v_len = grid.len();
    let at = |u: usize, v: usize, s: usize| &cells[&(u, grid[v].to_bits(), s)];
    let response = DMatrix::from_fn(n, v_len, |u, v| at(u, v, 0).value);
    let controls = spec
        .controls
        .iter()
        .enumerate()
        .map(|(c, name)| ControlSeries {
            name: name.clone(),
            values: DMatrix::from_fn(n, v_len, |u, v| at(u, v, 1 + c).value),
        })
        .collect();

    let mut first = 1 + spec.controls.len();
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    for decl in &spec.blocks {
        let size = decl.parts.len();
        let mut shares = vec![DMatrix::zeros(n, size); v_len];
        for (v, slice) in shares.iter_mut().enumerate() {
            for u in 0..n {
                let row: Vec<&Cell> = (0..size).map(|l| at(u, v, first + l)).collect();
                let line = row.iter().map(|c| c.line).min().unwrap_or(0);
                let values: Vec<f64> = row.iter().map(|c| c.value).collect();
                let closed = match decl.values {
                    ValueKind::Counts => {
                        if let Some(c) = row.iter().find(|c| c.value < 0.0) {
                            return Err(parse_err(c.line, format!("negative count in block `{}`", decl.name)));
                        }
                        if values.iter().all(|&x| x == 0.0) {
                            return Err(parse_err(
                                line,
                                format!(
                                    "all-zero count row in block `{}` for unit `{}` at time {}",
                                    decl.name, units[u], grid[v]
                                ),
                            ));
                        }
                        close(&zero_replace(&values, spec.zero_replacement)?)?
                    }
                    ValueKind::Shares => {
                        if let Some(c) = row.iter().find(|c| !(c.value > 0.0)) {
                            return Err(parse_err(
                                c.line,
                                format!("share {} in block `{}` is not positive", c.value, decl.name),
                            ));
                        }
                        let sum: f64 = values.iter().sum();
                        if (sum - 1.0).abs() > SHARE_TOL {
                            return Err(parse_err(
                                line,
                                format!(
                                    "shares of block `{}` for unit `{}` at time {} sum to {sum}",
                                    decl.name, units[u], grid[v]
                                ),
                            ));
                        }
                        if (sum - 1.0).abs() > CLOSURE_TOL {
                            close(&values)?
                        } else {
                            values
                        }
                    }
                };
                slice.row_mut(u).copy_from_slice(&closed);
            }
        }
        blocks.push(CompositionBlock {
            name: decl.name.clone(),
            parts: decl.parts.clone(),
            shares,
        });
        first += size;
    }
    FunctionalPanel::new(units, grid, response, blocks, controls)
}

/// Writes a panel as a long CSV of shares plus the matching blocks spec.
/// Part names must be unique across blocks since they double as series names.
pub fn export_panel(panel: &FunctionalPanel, response: &str, data_csv: &Path, blocks_spec: &Path) -> Result<()> {
    let spec = BlocksSpec {
        version: SPEC_VERSION,
        response: response.to_string(),
        controls: panel.controls.iter().map(|c| c.name.clone()).collect(),
        zero_replacement: DEFAULT_ZERO_REPLACEMENT,
        blocks: panel
            .blocks
            .iter()
            .map(|b| BlockDecl {
                name: b.name.clone(),
                values: ValueKind::Shares,
                parts: b.parts.clone(),
            })
            .collect(),
    };
    spec.validate()?;
    let mut w = csv::Writer::from_path(data_csv)?;
    w.write_record(["unit", "time", "series", "value"])?;
    for (u, unit) in panel.units.iter().enumerate() {
        for (v, t) in panel.grid.iter().enumerate() {
            let t = t.to_string();
            w.write_record([unit.as_str(), &t, response, &panel.response[(u, v)].to_string()])?;
            for c in &panel.controls {
                w.write_record([unit.as_str(), &t, &c.name, &c.values[(u, v)].to_string()])?;
            }
            for b in &panel.blocks {
                for (l, part) in b.parts.iter().enumerate() {
                    w.write_record([unit.as_str(), &t, part, &b.shares[v][(u, l)].to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    let text = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    fs::File::create(blocks_spec)?.write_all(text.as_bytes())?;
    Ok(())
}

/// Paths of an exported panel inside `dir`.
pub fn export_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("panel.csv"), dir.join("blocks.toml"))
}
