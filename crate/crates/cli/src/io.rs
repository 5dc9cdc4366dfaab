//! Dataset ingestion and result files: histogram CSVs and PGM images.

use std::fs;
use std::path::{Path, PathBuf};

use wdl_core::grid::{normalize, Grid};

use crate::config::DataFormat;
use crate::error::CliError;

/// Histograms as rows, with the grid they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: Grid,
    pub rows: Vec<Vec<f64>>,
    /// Where each row came from, for diagnostics.
    pub labels: Vec<String>,
}

/// Reads, validates, jitters and normalizes a dataset. `grid` fixes the
/// shape of CSV rows; PGM images carry their own shape.
pub fn ingest(path: &Path, format: DataFormat, grid: Option<&[usize]>, jitter: f64) -> Result<Dataset, CliError> {
    let (dims, raw, labels) = match format {
        DataFormat::CsvRows => {
            let rows = read_csv_rows(path)?;
            let n = rows[0].len();
            let dims = grid.map_or(vec![n], <[usize]>::to_vec);
            let labels = (0..rows.len()).map(|i| format!("{} row {}", path.display(), i + 1)).collect();
            (dims, rows, labels)
        }
        DataFormat::PgmDir => read_pgm_dir(path)?,
    };
    let grid_obj = Grid::unit(&dims)?;
    let mut rows = Vec::with_capacity(raw.len());
    for (row, label) in raw.into_iter().zip(&labels) {
        if row.len() != grid_obj.len() {
            return Err(CliError::Input(format!(
                "{label}: {} values but the grid {} has {} bins",
                row.len(),
                crate::config::format_grid(&dims),
                grid_obj.len()
            )));
        }
        if let Some(i) = row.iter().position(|&v| v < 0.0) {
            return Err(CliError::Input(format!("{label}: negative value {} at bin {i}", row[i])));
        }
        if row.iter().all(|&v| v == 0.0) {
            return Err(CliError::Input(format!("{label}: all values are zero")));
        }
        rows.push(normalize(row, Some(jitter)).map_err(|e| CliError::Input(format!("{label}: {e}")))?);
    }
    Ok(Dataset {
        grid: grid_obj,
        rows,
        labels,
    })
}

/// Numeric CSV rows. A first line that does not parse as numbers is taken
/// as a header and skipped.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.iter().all(str::is_empty) {
            return Err(CliError::Input(format!("{} row {}: empty row", path.display(), i + 1)));
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                    return Err(CliError::Input(format!(
                        "{} row {}: non-finite value in column {}",
                        path.display(),
                        i + 1,
                        j + 1
                    )));
                }
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(CliError::Input(format!(
                            "{} row {}: {} columns, expected {}",
                            path.display(),
                            i + 1,
                            row.len(),
                            first.len()
                        )));
                    }
                }
                rows.push(row);
            }
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(CliError::Input(format!(
                    "{} row {}: not a number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Input(format!("{}: {other:?}", path.display())),
    }
}

/// Writes rows under a `{prefix}_0, {prefix}_1, ...` header. Values use the
/// shortest round-trip decimal form.
pub fn write_rows(path: &Path, prefix: &str, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = String::new();
    let header: Vec<String> = (0..width).map(|i| format!("{prefix}_{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(CliError::Input(format!("row {r} has {} values, expected {width}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(CliError::Input(format!("row {r} contains non-finite value {v}")));
        }
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Histogram rows under a `bin_0..bin_{N-1}` header.
pub fn write_histograms(path: &Path, rows: &[Vec<f64>]) -> Result<(), CliError> {
    write_rows(path, "bin", rows)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// A grayscale image: `height x width` samples, row-major, with `maxval`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub pixels: Vec<u32>,
}

/// Parses plain (`P2`) or raw (`P5`) PGM data.
pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, String> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let mut field = |what: &str| -> Result<u32, String> {
        let t = token(&mut pos)?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    if magic != "P2" && magic != "P5" {
        return Err(format!("unsupported magic `{magic}` (P2 or P5 expected)"));
    }
    let width = field("width")? as usize;
    let height = field("height")? as usize;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let count = width * height;
    let pixels: Vec<u32> = if magic == "P2" {
        (0..count)
            .map(|_| {
                let t = token(&mut pos)?;
                t.parse().map_err(|_| format!("bad sample `{t}`"))
            })
            .collect::<Result<_, String>>()?
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(pos)));
        }
        let raster = &bytes[pos..pos + need];
        if wide {
            raster.chunks_exact(2).map(|c| u32::from(c[0]) << 8 | u32::from(c[1])).collect()
        } else {
            raster.iter().map(|&b| u32::from(b)).collect()
        }
    };
    if let Some(v) = pixels.iter().find(|&&v| v > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        pixels,
    })
}

/// Plain PGM with samples scaled so the largest value maps to 65535.
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    let top = values.iter().fold(0.0f64, |m, &v| m.max(v));
    let scale = if top > 0.0 { 65535.0 / top } else { 0.0 };
    let mut out = format!("P2\n{width} {height}\n65535\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|&v| ((v.max(0.0) * scale).round() as u32).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

fn read_pgm_dir(dir: &Path) -> Result<(Vec<usize>, Vec<Vec<f64>>, Vec<String>), CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!("{}: no .pgm files", dir.display())));
    }
    let mut dims: Option<Vec<usize>> = None;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
        let img = parse_pgm(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        let shape = vec![img.height, img.width];
        match &dims {
            Some(d) if *d != shape => {
                return Err(CliError::Input(format!(
                    "{}: image is {}x{}, expected {}x{}",
                    f.display(),
                    img.height,
                    img.width,
                    d[0],
                    d[1]
                )))
            }
            Some(_) => {}
            None => dims = Some(shape),
        }
        rows.push(img.pixels.iter().map(|&v| f64::from(v) / f64::from(img.maxval)).collect());
        labels.push(f.display().to_string());
    }
    Ok((dims.expect("at least one file"), rows, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_raw_pgm() {
        let p2 = parse_pgm(b"P2\n# comment\n2 2\n255\n0 10\n20 255\n").unwrap();
        assert_eq!((p2.width, p2.height, p2.maxval), (2, 2, 255));
        assert_eq!(p2.pixels, vec![0, 10, 20, 255]);
        let mut p5 = b"P5 2 1 65535\n".to_vec();
        p5.extend_from_slice(&[0x01, 0x00, 0xff, 0xff]);
        assert_eq!(parse_pgm(&p5).unwrap().pixels, vec![256, 65535]);
        let mut p5_8 = b"P5\n3 1\n255\n".to_vec();
        p5_8.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_pgm(&p5_8).unwrap().pixels, vec![1, 2, 3]);
    }

    #[test]
    fn bad_pgm() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3\n").is_err());
        assert!(parse_pgm(b"P2\n1 1\n10\n11\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn encode_then_parse() {
        let v = [0.0, 0.5, 1.0, 0.25, 0.75, 0.1];
        let img = parse_pgm(&encode_pgm(&v, 2, 3)).unwrap();
        assert_eq!((img.height, img.width), (2, 3));
        assert_eq!(img.pixels[2], 65535);
        assert_eq!(img.pixels[1], 32768);
    }
}
