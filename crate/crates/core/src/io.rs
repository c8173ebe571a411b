//! Tabular and matrix file formats.
//!
//! CSV tables carry a header row and every float is written as `{:.16e}` (17 significant
//! digits), so identical numbers give identical bytes and parse back exactly.
//!
//! Image CSV: a first line `#grid nx=<n> ny=<n> pitch_nm=<f> origin_nm=<x>,<y>` followed by
//! `ny` rows of `nx` values. Image binary (little endian): the 8 bytes `NVIMG\0\0\x01`, `nx` and
//! `ny` as u64, pitch and the two origin coordinates as f64, then `nx·ny` f64 values row-major.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};
use crate::spatial::{DifferenceImage, GridSpec, StraggleRow};
use crate::spin::{c, CMatrix};

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> NvError {
    NvError::Io(format!("{}: {e}", path.display()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        CsvTable {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(NvError::Dimension(format!("row of {} values for {} columns", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| NvError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| fmt_float(*x))).map_err(|e| NvError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| NvError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| NvError::Io(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| io_err(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| NvError::Io(e.to_string()))?.iter().map(String::from).collect();
        let mut t = CsvTable { header, rows: Vec::new() };
        for rec in r.records() {
            let rec = rec.map_err(|e| NvError::Io(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| NvError::Io(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            t.push(row)?;
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// One arrival time in ns per line; blank lines and `#` comments are skipped.
pub fn parse_timestamps(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let v: f64 = l.parse().map_err(|e| NvError::Io(format!("line {}: {e}", i + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(NvError::Io(format!("line {}: non-finite timestamp", i + 1)))
            }
        })
        .collect()
}

pub fn read_timestamps(path: &Path) -> Result<Vec<f64>> {
    parse_timestamps(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

/// Straggle table with columns `energy_kev,sigma_nm,depth_nm`.
pub fn parse_straggle_table(text: &str) -> Result<Vec<StraggleRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<StraggleRow>, _>>()
        .map_err(|e| NvError::Io(e.to_string()))?;
    if rows.is_empty() {
        return Err(NvError::InvalidArgument("straggle table is empty".into()));
    }
    Ok(rows)
}

pub fn read_straggle_table(path: &Path) -> Result<Vec<StraggleRow>> {
    parse_straggle_table(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn image_to_csv(img: &DifferenceImage) -> String {
    let g = img.grid;
    let mut s = format!(
        "#grid nx={} ny={} pitch_nm={} origin_nm={},{}\n",
        g.nx,
        g.ny,
        fmt_float(g.pitch_nm),
        fmt_float(g.origin_nm[0]),
        fmt_float(g.origin_nm[1])
    );
    for row in img.values.chunks(g.nx) {
        s += &row.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>().join(",");
        s.push('\n');
    }
    s
}

pub fn image_from_csv(text: &str) -> Result<DifferenceImage> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| NvError::Io("empty image file".into()))?;
    let rest = head
        .strip_prefix("#grid")
        .ok_or_else(|| NvError::Io("image CSV must start with a #grid line".into()))?;
    let mut nx = None;
    let mut ny = None;
    let mut pitch = None;
    let mut origin = None;
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| NvError::Io(format!("bad grid field {kv:?}")))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| NvError::Io(format!("{k}: {e}")));
        match k {
            "nx" => nx = Some(v.parse::<usize>().map_err(|e| NvError::Io(format!("nx: {e}")))?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|e| NvError::Io(format!("ny: {e}")))?),
            "pitch_nm" => pitch = Some(num(v)?),
            "origin_nm" => {
                let (x, y) = v.split_once(',').ok_or_else(|| NvError::Io("origin_nm needs x,y".into()))?;
                origin = Some([num(x)?, num(y)?]);
            }
            _ => return Err(NvError::Io(format!("unknown grid field {k:?}"))),
        }
    }
    let grid = GridSpec {
        nx: nx.ok_or_else(|| NvError::Io("missing nx".into()))?,
        ny: ny.ok_or_else(|| NvError::Io("missing ny".into()))?,
        pitch_nm: pitch.ok_or_else(|| NvError::Io("missing pitch_nm".into()))?,
        origin_nm: origin.unwrap_or([0.0, 0.0]),
    };
    grid.validate()?;
    let mut values = Vec::with_capacity(grid.len());
    for l in lines.filter(|l| !l.trim().is_empty()) {
        let row = l
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| NvError::Io(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != grid.nx {
            return Err(NvError::Dimension(format!("image row of {} values, expected {}", row.len(), grid.nx)));
        }
        values.extend(row);
    }
    if values.len() != grid.len() {
        return Err(NvError::Dimension(format!("{} image values for a {}×{} grid", values.len(), grid.nx, grid.ny)));
    }
    Ok(DifferenceImage { grid, values })
}

const IMAGE_MAGIC: &[u8; 8] = b"NVIMG\0\0\x01";

pub fn write_image_binary<W: Write>(img: &DifferenceImage, w: &mut W) -> Result<()> {
    let g = img.grid;
    let mut buf = Vec::with_capacity(48 + 8 * img.values.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&(g.nx as u64).to_le_bytes());
    buf.extend_from_slice(&(g.ny as u64).to_le_bytes());
    for v in [g.pitch_nm, g.origin_nm[0], g.origin_nm[1]].iter().chain(&img.values) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| NvError::Io(e.to_string()))
}

pub fn read_image_binary<R: Read>(r: &mut R) -> Result<DifferenceImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| NvError::Io(e.to_string()))?;
    if bytes.len() < 48 || &bytes[..8] != IMAGE_MAGIC {
        return Err(NvError::Io("not an image file".into()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8 bytes") };
    let nx = u64::from_le_bytes(word(8)) as usize;
    let ny = u64::from_le_bytes(word(16)) as usize;
    let grid = GridSpec {
        nx,
        ny,
        pitch_nm: f64::from_le_bytes(word(24)),
        origin_nm: [f64::from_le_bytes(word(32)), f64::from_le_bytes(word(40))],
    };
    grid.validate()?;
    if bytes.len() != 48 + 8 * grid.len() {
        return Err(NvError::Dimension(format!("image payload of {} bytes for a {nx}×{ny} grid", bytes.len() - 48)));
    }
    let values = (0..grid.len()).map(|i| f64::from_le_bytes(word(48 + 8 * i))).collect();
    Ok(DifferenceImage { grid, values })
}

/// Complex matrix as separate real and imaginary row arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&crate::Complex64) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect();
        MatrixJson {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.re.len();
        let m = self.re.first().map_or(0, Vec::len);
        if self.im.len() != n || self.re.iter().chain(&self.im).any(|r| r.len() != m) {
            return Err(NvError::Dimension("real and imaginary parts must be equal rectangles".into()));
        }
        Ok(CMatrix::from_fn(n, m, |i, j| c(self.re[i][j], self.im[i][j])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = CsvTable::new(&["t_s", "signal"]);
        t.push(vec![0.1, 1.0 / 3.0]).unwrap();
        t.push(vec![-2.5e-300, f64::MAX]).unwrap();
        let s = t.to_csv_string().unwrap();
        assert!(s.starts_with("t_s,signal\n1.0000000000000001e-1,"));
        assert_eq!(CsvTable::parse(&s).unwrap(), t);
        assert!(t.push(vec![1.0]).is_err());
    }

    #[test]
    fn timestamps_and_tables() {
        assert_eq!(parse_timestamps("# ch A\n1.5\n\n 20 \n").unwrap(), vec![1.5, 20.0]);
        assert!(parse_timestamps("1\nx\n").is_err());
        let rows = parse_straggle_table("energy_kev,sigma_nm,depth_nm\n1000, 118.9, 730\n").unwrap();
        assert_eq!(rows[0].sigma_nm, 118.9);
        assert!(parse_straggle_table("energy_kev,sigma_nm,depth_nm\n").is_err());
    }

    #[test]
    fn image_formats_round_trip() {
        let img = DifferenceImage {
            grid: GridSpec::centred(3, 20.0),
            values: (0..9).map(|i| i as f64 * 0.7 - 2.0).collect(),
        };
        assert_eq!(image_from_csv(&image_to_csv(&img)).unwrap(), img);
        let mut buf = Vec::new();
        write_image_binary(&img, &mut buf).unwrap();
        assert_eq!(buf.len(), 48 + 72);
        assert_eq!(read_image_binary(&mut buf.as_slice()).unwrap(), img);
        assert!(image_from_csv("1,2\n").is_err());
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = CMatrix::from_fn(2, 2, |i, j| c(i as f64, -(j as f64) * 0.5));
        let j = serde_json::to_string(&MatrixJson::from_matrix(&m)).unwrap();
        let back: MatrixJson = serde_json::from_str(&j).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }
}
