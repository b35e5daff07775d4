//! Q-matrix type, validity checks and CSV I/O.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::profile::{bits_to_mask, MAX_ATTRIBUTES};

/// J x K item-by-attribute requirement matrix.
///
/// Every item measures at least one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct QMatrix {
    k: usize,
    masks: Vec<u32>,
}

impl QMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.is_empty() {
            return Err(domain("Q-matrix has no items"));
        }
        if k == 0 || k > MAX_ATTRIBUTES {
            return Err(domain(format!("attribute count {k} outside 1..={MAX_ATTRIBUTES}")));
        }
        let mut masks = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(domain(format!("Q row {j} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(domain(format!("Q row {j} is not binary")));
            }
            let mask = bits_to_mask(row);
            if mask == 0 {
                return Err(domain(format!("Q row {j} measures no attribute")));
            }
            masks.push(mask);
        }
        Ok(Self { k, masks })
    }

    pub fn from_masks(k: usize, masks: Vec<u32>) -> Result<Self> {
        let rows: Vec<Vec<u8>> = masks
            .iter()
            .map(|&m| (0..k).map(|b| ((m >> b) & 1) as u8).collect())
            .collect();
        if masks.iter().any(|&m| k < 32 && m >> k != 0) {
            return Err(domain("mask has bits beyond K"));
        }
        Self::from_rows(&rows)
    }

    pub fn n_items(&self) -> usize {
        self.masks.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.k
    }

    /// Required-attribute bitmask of item `j`.
    #[inline]
    pub fn mask(&self, j: usize) -> u32 {
        self.masks[j]
    }

    pub fn masks(&self) -> &[u32] {
        &self.masks
    }

    pub fn row(&self, j: usize) -> Vec<u8> {
        (0..self.k).map(|b| ((self.masks[j] >> b) & 1) as u8).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.n_items()).map(|j| self.row(j)).collect()
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> u8 {
        ((self.masks[j] >> k) & 1) as u8
    }

    /// Number of attributes item `j` requires.
    pub fn required_count(&self, j: usize) -> usize {
        self.masks[j].count_ones() as usize
    }

    /// Items measuring exactly one attribute.
    pub fn single_attribute_items(&self) -> Vec<usize> {
        (0..self.n_items()).filter(|&j| self.required_count(j) == 1).collect()
    }

    pub fn permute_items(&self, perm: &[usize]) -> Self {
        Self { k: self.k, masks: perm.iter().map(|&p| self.masks[p]).collect() }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|cell| match cell.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(Error::Parse(format!("Q-matrix line {}: non-binary cell {other:?}", line + 1))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        crate::io::write_binary_rows(writer, self.rows().iter().map(Vec::as_slice))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl TryFrom<Vec<Vec<u8>>> for QMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<QMatrix> for Vec<Vec<u8>> {
    fn from(q: QMatrix) -> Self {
        q.rows()
    }
}

/// Outcome of [`validate_q`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub complete: bool,
    pub identifiable_proxy: bool,
    pub notes: Vec<String>,
}

impl ValidityReport {
    pub fn passes(&self) -> bool {
        self.complete && self.identifiable_proxy
    }

    pub fn same_flags(&self, other: &Self) -> bool {
        self.complete == other.complete && self.identifiable_proxy == other.identifiable_proxy
    }
}

/// Completeness and a proxy identifiability check.
///
/// `complete` holds when every attribute has a single-attribute item.
/// `identifiable_proxy` additionally requires each attribute to appear in at
/// least three items and all Q columns to be distinct.
pub fn validate_q(q: &QMatrix) -> ValidityReport {
    let k = q.n_attributes();
    let mut notes = Vec::new();

    let missing_unit: Vec<usize> = (0..k)
        .filter(|&a| !q.masks().iter().any(|&m| m == 1 << a))
        .collect();
    let complete = missing_unit.is_empty();
    if !complete {
        notes.push(format!("no single-attribute item for attributes {missing_unit:?}"));
    }

    let appearances: Vec<usize> = (0..k)
        .map(|a| q.masks().iter().filter(|&&m| m >> a & 1 == 1).count())
        .collect();
    let sparse: Vec<usize> = (0..k).filter(|&a| appearances[a] < 3).collect();
    if !sparse.is_empty() {
        notes.push(format!("attributes measured by fewer than 3 items: {sparse:?}"));
    }

    let columns: Vec<Vec<u8>> = (0..k)
        .map(|a| (0..q.n_items()).map(|j| q.get(j, a)).collect())
        .collect();
    let mut duplicate_pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if columns[a] == columns[b] {
                duplicate_pairs.push((a, b));
            }
        }
    }
    if !duplicate_pairs.is_empty() {
        notes.push(format!("identical Q columns: {duplicate_pairs:?}"));
    }

    let identifiable_proxy = complete && sparse.is_empty() && duplicate_pairs.is_empty();
    notes.push(
        "identifiability is a proxy: completeness, >=3 items per attribute, distinct columns".to_string(),
    );
    ValidityReport { complete, identifiable_proxy, notes }
}
