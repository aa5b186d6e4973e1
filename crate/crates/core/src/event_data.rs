//! Multivariate recurrent-event panels.
//!
//! A panel holds, for each observation unit `i` and event type `j`, the sorted
//! event times of the counting process `Y_ij` on `[0, 1]`, plus an optional
//! observation mask. Cells whose mask entry is `false` are treated as missing
//! by the likelihood layer.
//!
//! The on-disk format is a headerless CSV of `unit_id,type_id,time` rows with
//! 0-based ids and times printed to 12 significant digits. A JSON container
//! carrying the dimensions and the mask is also supported.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significant digits used when writing event times.
pub const TIME_SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EventPanel {
    n_units: usize,
    n_types: usize,
    /// Row-major `i * n_types + j`.
    events: Vec<Vec<f64>>,
    mask: Option<Vec<bool>>,
}

impl EventPanel {
    /// A panel with every cell empty.
    pub fn empty(n_units: usize, n_types: usize) -> Self {
        Self {
            n_units,
            n_types,
            events: vec![Vec::new(); n_units * n_types],
            mask: None,
        }
    }

    /// Builds a panel from `(unit, type, time)` triples. Times are validated and
    /// each cell is sorted; duplicates are kept.
    pub fn from_triples<I>(n_units: usize, n_types: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut panel = Self::empty(n_units, n_types);
        for (i, j, t) in triples {
            panel.check_index(i, j)?;
            check_time(t)?;
            panel.events[i * n_types + j].push(t);
        }
        panel.sort_cells();
        Ok(panel)
    }

    /// Builds a panel from per-cell event vectors (row-major, length `N*J`).
    pub fn from_cells(n_units: usize, n_types: usize, cells: Vec<Vec<f64>>) -> Result<Self> {
        if cells.len() != n_units * n_types {
            return Err(Error::DimensionMismatch(format!(
                "expected {} cells, got {}",
                n_units * n_types,
                cells.len()
            )));
        }
        for &t in cells.iter().flatten() {
            check_time(t)?;
        }
        let mut panel = Self {
            n_units,
            n_types,
            events: cells,
            mask: None,
        };
        panel.sort_cells();
        Ok(panel)
    }

    /// Attaches an observation mask (`true` = observed), row-major `N*J`.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n_units * self.n_types {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries, panel has {} cells",
                mask.len(),
                self.n_units * self.n_types
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    fn sort_cells(&mut self) {
        for cell in &mut self.events {
            cell.sort_by(|a, b| a.total_cmp(b));
        }
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.n_units {
            return Err(Error::IndexOutOfRange {
                what: "unit",
                index: i,
                limit: self.n_units,
            });
        }
        if j >= self.n_types {
            return Err(Error::IndexOutOfRange {
                what: "type",
                index: j,
                limit: self.n_types,
            });
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    /// Sorted event times of cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> Result<&[f64]> {
        self.check_index(i, j)?;
        Ok(&self.events[i * self.n_types + j])
    }

    /// Unchecked row-major access used by inner loops.
    pub(crate) fn cell_unchecked(&self, i: usize, j: usize) -> &[f64] {
        &self.events[i * self.n_types + j]
    }

    /// `Y_ij(1)`: the number of events in cell `(i, j)`.
    pub fn total_count(&self, i: usize, j: usize) -> Result<usize> {
        Ok(self.cell(i, j)?.len())
    }

    /// Total number of events of unit `i` over all types.
    pub fn unit_total(&self, i: usize) -> Result<usize> {
        self.check_index(i, 0)?;
        Ok((0..self.n_types).map(|j| self.cell_unchecked(i, j).len()).sum())
    }

    pub fn total_events(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Whether cell `(i, j)` is observed; absent mask means all observed.
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m[i * self.n_types + j])
    }

    /// Iterates `(unit, type, time)` in row-major cell order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.events.iter().enumerate().flat_map(move |(idx, cell)| {
            let (i, j) = (idx / self.n_types, idx % self.n_types);
            cell.iter().map(move |&t| (i, j, t))
        })
    }

    /// Linearly maps the window `[a, b]` onto `[0, 1]`, dropping events outside.
    pub fn rescale_window(&self, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidConfig(format!(
                "rescale window requires a < b, got [{a}, {b}]"
            )));
        }
        let width = b - a;
        let events = self
            .events
            .iter()
            .map(|cell| {
                cell.iter()
                    .filter(|&&t| t >= a && t <= b)
                    .map(|&t| ((t - a) / width).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_units: self.n_units,
            n_types: self.n_types,
            events,
            mask: self.mask.clone(),
        })
    }

    pub fn to_json(&self) -> PanelJson {
        PanelJson {
            n_units: self.n_units,
            n_types: self.n_types,
            events: self.triples().map(|(i, j, t)| (i, j, t)).collect(),
            mask: self.mask.as_ref().map(|m| {
                m.chunks(self.n_types.max(1))
                    .map(<[bool]>::to_vec)
                    .collect()
            }),
        }
    }

    pub fn from_json(doc: PanelJson) -> Result<Self> {
        let panel = Self::from_triples(doc.n_units, doc.n_types, doc.events)?;
        match doc.mask {
            None => Ok(panel),
            Some(rows) => {
                if rows.len() != doc.n_units || rows.iter().any(|r| r.len() != doc.n_types) {
                    return Err(Error::DimensionMismatch(
                        "mask must be n_units rows of n_types booleans".into(),
                    ));
                }
                panel.with_mask(rows.into_iter().flatten().collect())
            }
        }
    }
}

/// JSON container for a panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelJson {
    pub n_units: usize,
    pub n_types: usize,
    pub events: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<Vec<bool>>>,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

/// Formats a time with 12 significant digits, shortest representation.
pub fn format_time(t: f64) -> String {
    let rounded: f64 = format!("{:.*e}", TIME_SIGNIFICANT_DIGITS - 1, t)
        .parse()
        .expect("scientific notation always parses");
    format!("{rounded}")
}

/// Reads a headerless `unit_id,type_id,time` CSV.
pub fn load_events(path: impl AsRef<Path>, n_units: usize, n_types: usize) -> Result<EventPanel> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut panel = EventPanel::empty(n_units, n_types);
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (i, j, t) = parse_row(trimmed).map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        panel.check_index(i, j).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        check_time(t).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        panel.events[i * n_types + j].push(t);
    }
    panel.sort_cells();
    Ok(panel)
}

fn parse_row(line: &str) -> std::result::Result<(usize, usize, f64), String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    }
    let i = fields[0]
        .parse()
        .map_err(|_| format!("bad unit id {:?}", fields[0]))?;
    let j = fields[1]
        .parse()
        .map_err(|_| format!("bad type id {:?}", fields[1]))?;
    let t = fields[2]
        .parse()
        .map_err(|_| format!("bad time {:?}", fields[2]))?;
    Ok((i, j, t))
}

/// Writes the panel as a headerless CSV in row-major cell order.
pub fn save_events(panel: &EventPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, j, t) in panel.triples() {
        writeln!(w, "{i},{j},{}", format_time(t)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
