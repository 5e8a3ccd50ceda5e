//! Matrix ingestion (CSV, TSV, binary) and report output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{PbjError, Result};

const BINARY_VERSION: u32 = 1;
const KNOWN_MAGIC: [[u8; 4]; 3] = [*b"PBJN", *b"PERM", *b"PBJM"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Tsv,
    Binary,
}

impl MatrixFormat {
    /// Guesses the format from the file extension; anything unknown is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("tsv") | Some("tab") | Some("txt") => MatrixFormat::Tsv,
            Some("bin") | Some("pbj") => MatrixFormat::Binary,
            _ => MatrixFormat::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = PbjError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "tsv" => Ok(MatrixFormat::Tsv),
            "binary" | "bin" => Ok(MatrixFormat::Binary),
            other => Err(PbjError::invalid(format!("unknown matrix format '{other}'"))),
        }
    }
}

/// A numeric matrix with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub data: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl LabeledMatrix {
    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<LabeledMatrix> {
    let file = File::open(path).map_err(|e| PbjError::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        MatrixFormat::Csv => parse_delimited(reader, b',', path),
        MatrixFormat::Tsv => parse_delimited(reader, b'\t', path),
        MatrixFormat::Binary => {
            let (_, rows, cols, data) = read_binary_at(reader, path)?;
            Ok(LabeledMatrix {
                data: DMatrix::from_row_slice(rows, cols, &data),
                labels: (1..=cols).map(|j| format!("v{j}")).collect(),
            })
        }
    }
}

/// Parses delimited text with a header row. Rows and columns in error
/// messages are 1-based line and field numbers.
pub fn parse_delimited<R: Read>(reader: R, delimiter: u8, path: &Path) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |row: usize, col: usize, message: String| PbjError::Parse {
        path: path.to_path_buf(),
        row,
        col,
        message,
    };
    let labels: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if labels.is_empty() || (labels.len() == 1 && labels[0].is_empty()) {
        return Err(parse_err(1, 0, "missing header row".into()));
    }
    let cols = labels.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, 0, e.to_string()))?;
        if rec.len() != cols {
            return Err(parse_err(
                line,
                rec.len().min(cols) + 1,
                format!("expected {cols} fields, found {}", rec.len()),
            ));
        }
        for (j, cell) in rec.iter().enumerate() {
            let x: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, j + 1, format!("'{cell}' is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(line, j + 1, format!("'{cell}' is not finite")));
            }
            values.push(x);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(2, 0, "no data rows".into()));
    }
    Ok(LabeledMatrix {
        data: DMatrix::from_row_slice(rows, cols, &values),
        labels,
    })
}

/// Writes a labelled matrix as delimited text. Values use the shortest
/// representation that parses back to the same double.
pub fn write_delimited<W: Write>(w: W, m: &LabeledMatrix, delimiter: u8) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
    wtr.write_record(&m.labels)?;
    let mut buf = Vec::with_capacity(m.data.ncols());
    for i in 0..m.data.nrows() {
        buf.clear();
        buf.extend(m.data.row(i).iter().map(|x| format!("{x}")));
        wtr.write_record(&buf)?;
    }
    wtr.flush()
}

pub fn save_delimited(path: &Path, m: &LabeledMatrix, delimiter: u8) -> Result<()> {
    let file = File::create(path).map_err(|e| PbjError::io(path, e))?;
    write_delimited(BufWriter::new(file), m, delimiter).map_err(|e| PbjError::io(path, e))
}

/// Binary layout: 4-byte magic, then little-endian `u32` version, rows and
/// columns, then `rows × cols` little-endian doubles in row-major order.
pub fn write_binary_matrix<W: Write>(
    mut w: W,
    magic: [u8; 4],
    rows: usize,
    cols: usize,
    data: &[f64],
) -> std::io::Result<()> {
    let too_big = || std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32");
    let r = u32::try_from(rows).map_err(|_| too_big())?;
    let c = u32::try_from(cols).map_err(|_| too_big())?;
    if data.len() != rows * cols {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "data length does not match dimensions",
        ));
    }
    w.write_all(&magic)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&r.to_le_bytes())?;
    w.write_all(&c.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * data.len().min(1 << 16));
    for chunk in data.chunks(1 << 16) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

/// Reads the format written by [`write_binary_matrix`].
pub fn read_binary_matrix<R: Read>(r: R) -> Result<([u8; 4], usize, usize, Vec<f64>)> {
    read_binary_at(r, Path::new("<binary stream>"))
}

fn read_binary_at<R: Read>(mut r: R, path: &Path) -> Result<([u8; 4], usize, usize, Vec<f64>)> {
    let parse_err = |message: String| PbjError::Parse {
        path: PathBuf::from(path),
        row: 0,
        col: 0,
        message,
    };
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| parse_err("truncated header".into()))?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if !KNOWN_MAGIC.contains(&magic) {
        return Err(parse_err(format!("unrecognised magic {magic:?}")));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != BINARY_VERSION {
        return Err(parse_err(format!("unsupported version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let bytes = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse_err(format!("dimensions {rows}x{cols} overflow")))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| PbjError::io(path, e))?;
    if raw.len() != bytes {
        return Err(parse_err(format!(
            "expected {bytes} data bytes for {rows}x{cols}, found {}",
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((magic, rows, cols, data))
}

/// Formats `x` with six significant digits, like C's `%g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One line of an analysis report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub f: f64,
    pub z: f64,
    pub p_raw: f64,
    /// One adjusted p-value per method, in header order.
    pub p_adj: Vec<f64>,
    pub degenerate: bool,
}

pub fn write_report<W: Write>(w: W, methods: &[String], rows: &[ReportRow]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["location".to_string(), "F".into(), "Z".into(), "p_raw".into()];
    header.extend(methods.iter().map(|m| format!("p_adj_{m}")));
    header.push("degenerate".into());
    wtr.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.id.clone(),
            fmt_sig6(row.f),
            fmt_sig6(row.z),
            fmt_sig6(row.p_raw),
        ];
        rec.extend(row.p_adj.iter().map(|&p| fmt_sig6(p)));
        rec.push(if row.degenerate { "1" } else { "0" }.into());
        wtr.write_record(&rec)?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LabeledMatrix> {
        parse_delimited(s.as_bytes(), b',', Path::new("t.csv"))
    }

    #[test]
    fn small_csv() {
        let m = parse("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(m.labels, vec!["a", "b"]);
        assert_eq!(m.data, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn tsv_with_spaces() {
        let m = parse_delimited("x\ty\n 1.5 \t-2e3\n".as_bytes(), b'\t', Path::new("t.tsv")).unwrap();
        assert_eq!(m.data[(0, 1)], -2000.0);
    }

    #[test]
    fn ragged_row_is_named() {
        match parse("a,b\n1,2\n3\n") {
            Err(PbjError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_located() {
        match parse("a,b\n1,2\n3,x\n") {
            Err(PbjError::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("a,b\n").is_err());
        assert!(parse("a,b\n1,nan\n").is_err());
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let data = vec![0.1, -3.5e-300, f64::MAX, 7.0, 0.0, 1.0 / 3.0];
        let mut buf = Vec::new();
        write_binary_matrix(&mut buf, *b"PBJN", 2, 3, &data).unwrap();
        assert_eq!(buf.len(), 16 + 48);
        let (magic, r, c, back) = read_binary_matrix(buf.as_slice()).unwrap();
        assert_eq!((&magic, r, c), (b"PBJN", 2, 3));
        assert!(data.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn binary_rejects_truncation_and_bad_magic() {
        let mut buf = Vec::new();
        write_binary_matrix(&mut buf, *b"PERM", 2, 2, &[1.0; 4]).unwrap();
        assert!(read_binary_matrix(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_binary_matrix(buf.as_slice()).is_err());
        assert!(read_binary_matrix(&buf[..10]).is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.05), "0.05");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e+08");
        assert_eq!(fmt_sig6(2.5e-7), "2.5e-07");
        assert_eq!(fmt_sig6(999999.7), "1e+06");
        assert_eq!(fmt_sig6(-12.5), "-12.5");
        assert_eq!(fmt_sig6(0.0001), "0.0001");
    }

    #[test]
    fn format_names() {
        assert_eq!("TSV".parse::<MatrixFormat>().unwrap(), MatrixFormat::Tsv);
        assert!("xlsx".parse::<MatrixFormat>().is_err());
        assert_eq!(MatrixFormat::from_path(Path::new("a/b.bin")), MatrixFormat::Binary);
    }
}
