//! Headerless 0/1 CSV files and JSON helpers.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::BinaryMatrix;

pub fn write_binary_rows<'a, W: Write>(writer: W, rows: impl Iterator<Item = &'a [u8]>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in rows {
        wtr.write_record(row.iter().map(|v| if *v == 1 { "1" } else { "0" }))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_binary_matrix<R: Read>(reader: R) -> Result<BinaryMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|cell| match cell.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Parse(format!("line {}: non-binary cell {other:?}", line + 1))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(row);
    }
    BinaryMatrix::from_rows(&rows)
}

pub fn load_binary_matrix(path: impl AsRef<Path>) -> Result<BinaryMatrix> {
    read_binary_matrix(std::fs::File::open(path)?)
}

pub fn save_binary_matrix(m: &BinaryMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_binary_rows(std::fs::File::create(path)?, m.iter_rows())
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
}
