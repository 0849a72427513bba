use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::grid::GridGeometry;
use crate::error::{Error, Result};

/// Integer habitat codes with their labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Legend {
    entries: BTreeMap<i64, String>,
}

impl Legend {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (i64, S)>,
        S: Into<String>,
    {
        Self {
            entries: entries.into_iter().map(|(c, l)| (c, l.into())).collect(),
        }
    }

    /// Reads a `code,label` CSV file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(source, 1, e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "code" || &headers[1] != "label" {
            return Err(Error::parse(source, 1, "legend header must be `code,label`"));
        }
        let mut entries = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
            let code: i64 = rec[0]
                .parse()
                .map_err(|_| Error::parse(source, line, format!("invalid habitat code `{}`", &rec[0])))?;
            if entries.insert(code, rec[1].to_string()).is_some() {
                return Err(Error::parse(source, line, format!("duplicate habitat code {code}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, code: i64) -> bool {
        self.entries.contains_key(&code)
    }

    pub fn label(&self, code: i64) -> Option<&str> {
        self.entries.get(&code).map(String::as_str)
    }

    pub fn code(&self, label: &str) -> Option<i64> {
        self.entries.iter().find(|(_, l)| l.as_str() == label).map(|(c, _)| *c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &str)> {
        self.entries.iter().map(|(c, l)| (*c, l.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterKind {
    Continuous,
    Categorical(Legend),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducer {
    Mean,
    Majority,
}

/// Gridded values; `None` marks a missing (NODATA) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub geometry: GridGeometry,
    pub values: Vec<Option<f64>>,
    pub kind: RasterKind,
}

impl RasterGrid {
    pub fn new(geometry: GridGeometry, values: Vec<Option<f64>>, kind: RasterKind) -> Result<Self> {
        if values.len() != geometry.n_cells() {
            return Err(Error::InvalidInput(format!(
                "raster has {} values but {}x{} cells",
                values.len(),
                geometry.n_rows,
                geometry.n_cols
            )));
        }
        if let RasterKind::Categorical(legend) = &kind {
            for (idx, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    if v.fract() != 0.0 || !legend.contains(*v as i64) {
                        return Err(Error::InvalidInput(format!(
                            "cell {idx} holds code {v} which is not in the legend"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            geometry,
            values,
            kind,
        })
    }

    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        Self {
            geometry,
            values: vec![Some(value); geometry.n_cells()],
            kind: RasterKind::Continuous,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, RasterKind::Categorical(_))
    }

    pub fn legend(&self) -> Option<&Legend> {
        match &self.kind {
            RasterKind::Categorical(l) => Some(l),
            RasterKind::Continuous => None,
        }
    }

    pub fn code(&self, idx: usize) -> Option<i64> {
        self.values[idx].map(|v| v as i64)
    }

    /// Total area of non-missing cells (m²).
    pub fn valid_area(&self) -> f64 {
        self.values.iter().filter(|v| v.is_some()).count() as f64 * self.geometry.cell_area()
    }

    pub fn area(&self) -> f64 {
        self.geometry.n_cells() as f64 * self.geometry.cell_area()
    }
}

const NODATA_DEFAULT: f64 = -9999.0;

/// Reads an ESRI ASCII grid.
pub fn load_raster(path: impl AsRef<Path>, kind: RasterKind) -> Result<RasterGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, kind, &path.display().to_string())
}

/// Parses ESRI ASCII-grid text. `source` names the input in error messages.
///
/// Recognised header keys: `ncols`, `nrows`, `xllcorner`/`xllcenter`,
/// `yllcorner`/`yllcenter`, `cellsize` (or `dx` and `dy`), `NODATA_value`.
pub fn parse_ascii_grid(text: &str, kind: RasterKind, source: &str) -> Result<RasterGrid> {
    let mut lines = text.lines().enumerate().peekable();
    let mut header: BTreeMap<String, (f64, usize)> = BTreeMap::new();

    while let Some(&(i, line)) = lines.peek() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            lines.next();
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let key = parts.next().unwrap();
        if !key.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            break;
        }
        let key = key.to_ascii_lowercase();
        let value = parts
            .next()
            .ok_or_else(|| Error::parse(source, i + 1, format!("malformed header: `{key}` has no value")))?;
        if parts.next().is_some() {
            return Err(Error::parse(source, i + 1, format!("malformed header line `{trimmed}`")));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("malformed header: `{key}` value `{value}`")))?;
        header.insert(key, (value, i + 1));
        lines.next();
    }

    let last_header_line = header.values().map(|(_, l)| *l).max().unwrap_or(0);
    let require = |key: &str| -> Result<f64> {
        header
            .get(key)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::parse(source, last_header_line.max(1), format!("malformed header: missing `{key}`")))
    };
    let as_count = |key: &str| -> Result<usize> {
        let v = require(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            let line = header[key].1;
            return Err(Error::parse(source, line, format!("malformed header: `{key}` must be a positive integer")));
        }
        Ok(v as usize)
    };
    let n_cols = as_count("ncols")?;
    let n_rows = as_count("nrows")?;
    let (dx, dy) = match (header.get("cellsize"), header.get("dx"), header.get("dy")) {
        (Some((c, _)), _, _) => (*c, *c),
        (None, Some((dx, _)), Some((dy, _))) => (*dx, *dy),
        _ => {
            return Err(Error::parse(
                source,
                last_header_line.max(1),
                "malformed header: missing `cellsize`",
            ))
        }
    };
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::parse(source, last_header_line, "malformed header: cell size must be positive"));
    }
    let origin_x = match (header.get("xllcorner"), header.get("xllcenter")) {
        (Some((v, _)), _) => *v,
        (None, Some((v, _))) => v - dx / 2.0,
        _ => return Err(Error::parse(source, last_header_line.max(1), "malformed header: missing `xllcorner`")),
    };
    let origin_y = match (header.get("yllcorner"), header.get("yllcenter")) {
        (Some((v, _)), _) => *v,
        (None, Some((v, _))) => v - dy / 2.0,
        _ => return Err(Error::parse(source, last_header_line.max(1), "malformed header: missing `yllcorner`")),
    };
    let nodata = header.get("nodata_value").map_or(NODATA_DEFAULT, |(v, _)| *v);
    let geometry = GridGeometry::new(origin_x, origin_y, dx, dy, n_rows, n_cols);

    let mut values = Vec::with_capacity(geometry.n_cells());
    let mut rows_read = 0;
    for (i, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let line_no = i + 1;
        if rows_read == n_rows {
            return Err(Error::parse(source, line_no, format!("more than {n_rows} data rows")));
        }
        let start = values.len();
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("invalid value `{tok}`")))?;
            if v == nodata || v.is_nan() {
                values.push(None);
                continue;
            }
            if let RasterKind::Categorical(legend) = &kind {
                if v.fract() != 0.0 || !legend.contains(v as i64) {
                    return Err(Error::parse(source, line_no, format!("unknown categorical code `{tok}`")));
                }
            }
            values.push(Some(v));
        }
        let got = values.len() - start;
        if got != n_cols {
            return Err(Error::parse(
                source,
                line_no,
                format!("row length mismatch: expected {n_cols} values, found {got}"),
            ));
        }
        rows_read += 1;
    }
    if rows_read != n_rows {
        return Err(Error::parse(
            source,
            text.lines().count().max(1),
            format!("row count mismatch: expected {n_rows} rows, found {rows_read}"),
        ));
    }
    RasterGrid::new(geometry, values, kind)
}

/// Renders a raster as ESRI ASCII-grid text.
pub fn format_ascii_grid(raster: &RasterGrid) -> String {
    let g = &raster.geometry;
    let mut out = String::new();
    writeln!(out, "ncols {}", g.n_cols).unwrap();
    writeln!(out, "nrows {}", g.n_rows).unwrap();
    writeln!(out, "xllcorner {}", g.origin_x).unwrap();
    writeln!(out, "yllcorner {}", g.origin_y).unwrap();
    if g.cell_dx == g.cell_dy {
        writeln!(out, "cellsize {}", g.cell_dx).unwrap();
    } else {
        writeln!(out, "dx {}", g.cell_dx).unwrap();
        writeln!(out, "dy {}", g.cell_dy).unwrap();
    }
    writeln!(out, "NODATA_value {NODATA_DEFAULT}").unwrap();
    for row in 0..g.n_rows {
        let line: Vec<String> = (0..g.n_cols)
            .map(|col| match raster.values[g.index(row, col)] {
                Some(v) => format!("{v}"),
                None => format!("{NODATA_DEFAULT}"),
            })
            .collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// Aggregates a fine raster onto a coarser square lattice sharing its origin.
///
/// Every fine cell contributes to the coarse cell containing its center.
/// Missing fine cells are ignored; coarse cells with no valid fine cell stay
/// missing. Majority ties resolve to the smallest code.
pub fn zonal_aggregate(fine: &RasterGrid, coarse_cell: f64, reducer: Reducer) -> Result<RasterGrid> {
    let g = &fine.geometry;
    if !(coarse_cell > 0.0) || coarse_cell < g.cell_dx.max(g.cell_dy) {
        return Err(Error::Usage(format!(
            "coarse cell {coarse_cell} must be at least the fine cell size {}",
            g.cell_dx.max(g.cell_dy)
        )));
    }
    match (&fine.kind, reducer) {
        (RasterKind::Continuous, Reducer::Majority) => {
            return Err(Error::Usage("majority reducer requires a categorical raster".into()))
        }
        (RasterKind::Categorical(_), Reducer::Mean) => {
            return Err(Error::Usage("categorical rasters must be aggregated with the majority reducer".into()))
        }
        _ => {}
    }

    let count = |extent: f64| ((extent / coarse_cell) - 1e-9).ceil().max(1.0) as usize;
    let coarse = GridGeometry::new(
        g.origin_x,
        g.origin_y,
        coarse_cell,
        coarse_cell,
        count(g.height()),
        count(g.width()),
    );
    // Anchor the coarse lattice at the fine grid's top edge so row 0 lines up.
    let coarse = GridGeometry {
        origin_y: g.origin_y + g.height() - coarse.height(),
        ..coarse
    };

    let n = coarse.n_cells();
    let values = match reducer {
        Reducer::Mean => {
            let mut sum = vec![0.0; n];
            let mut cnt = vec![0usize; n];
            for (idx, v) in fine.values.iter().enumerate() {
                if let Some(v) = v {
                    let (x, y) = g.cell_center(idx);
                    if let Some(c) = coarse.cell_of(x, y) {
                        sum[c] += v;
                        cnt[c] += 1;
                    }
                }
            }
            sum.iter()
                .zip(&cnt)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect()
        }
        Reducer::Majority => {
            let mut tallies: Vec<BTreeMap<i64, usize>> = vec![BTreeMap::new(); n];
            for (idx, v) in fine.values.iter().enumerate() {
                if let Some(v) = v {
                    let (x, y) = g.cell_center(idx);
                    if let Some(c) = coarse.cell_of(x, y) {
                        *tallies[c].entry(*v as i64).or_default() += 1;
                    }
                }
            }
            tallies
                .iter()
                .map(|t| {
                    // BTreeMap iterates codes ascending; keep the first maximum.
                    let mut best: Option<(i64, usize)> = None;
                    for (&code, &n) in t {
                        if best.is_none_or(|(_, m)| n > m) {
                            best = Some((code, n));
                        }
                    }
                    best.map(|(code, _)| code as f64)
                })
                .collect()
        }
    };
    RasterGrid::new(coarse, values, fine.kind.clone())
}
