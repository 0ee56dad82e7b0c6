//! CSV ingestion of labelled contingency tables, the bundled Berkeley
//! admissions data and the JSON run report.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::procedures::{iv_ternary, IvResult};
use crate::stats::{Card, ContingencyTable};

/// Whether the table carries an instrument column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// Header `z,x,y,count`.
    WithZ,
    /// Header `x,y,count`.
    WithoutZ,
}

impl Schema {
    fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::WithZ => &["z", "x", "y", "count"],
            Schema::WithoutZ => &["x", "y", "count"],
        }
    }
}

/// Category labels per axis, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<String>>,
    pub x: Vec<String>,
    pub y: Vec<String>,
}

/// A contingency table with the labels of its categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledTable {
    pub table: ContingencyTable,
    pub categories: Categories,
}

#[derive(Default)]
struct Axis {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Axis {
    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }
}

/// Parse a long-format table. Rows with the same labels are summed.
pub fn read_table<R: Read>(reader: R, schema: Schema) -> Result<LabeledTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let expected = schema.columns();
    if header != expected {
        let missing: Vec<&str> = expected.iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
        return Err(Error::Schema(if missing.is_empty() {
            format!("header {header:?} does not match expected {expected:?}")
        } else {
            format!("missing column(s) {missing:?}; expected header {}", expected.join(","))
        }));
    }
    let with_z = schema == Schema::WithZ;
    let (mut zs, mut xs, mut ys) = (Axis::default(), Axis::default(), Axis::default());
    let mut cells: Vec<((usize, usize, usize), u64)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        let raw = &record[expected.len() - 1];
        let count: i64 =
            raw.parse().map_err(|_| Error::Parse { line, message: format!("count {raw:?} is not an integer") })?;
        if count < 0 {
            return Err(Error::Validation(format!("line {line}: negative count {count}")));
        }
        let z = if with_z { zs.intern(&record[0]) } else { 0 };
        let off = usize::from(with_z);
        let x = xs.intern(&record[off]);
        let y = ys.intern(&record[off + 1]);
        cells.push(((z, x, y), count as u64));
    }
    if cells.is_empty() {
        return Err(Error::Schema("table has no data rows".into()));
    }
    let card = Card { z: with_z.then_some(zs.labels.len()), x: xs.labels.len(), y: ys.labels.len() };
    let mut counts = vec![0u64; card.cells()];
    for ((z, x, y), k) in cells {
        let i = (z * card.x + x) * card.y + y;
        counts[i] = counts[i]
            .checked_add(k)
            .ok_or_else(|| Error::Validation("cell count overflows".into()))?;
    }
    Ok(LabeledTable {
        table: ContingencyTable::new(card, counts)?,
        categories: Categories { z: with_z.then_some(zs.labels), x: xs.labels, y: ys.labels },
    })
}

pub fn load_table(path: &Path, schema: Schema) -> Result<LabeledTable> {
    read_table(std::fs::File::open(path)?, schema)
}

/// Write a table in the long format read by [`read_table`], one row per
/// cell including zeros.
pub fn write_table_csv<W: Write>(out: W, t: &LabeledTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let card = t.table.card();
    let with_z = card.z.is_some();
    if with_z {
        w.write_record(["z", "x", "y", "count"])?;
    } else {
        w.write_record(["x", "y", "count"])?;
    }
    let zs: Vec<Option<&str>> = match &t.categories.z {
        Some(z) => z.iter().map(|s| Some(s.as_str())).collect(),
        None => vec![None],
    };
    for (zi, z) in zs.iter().enumerate() {
        for (xi, x) in t.categories.x.iter().enumerate() {
            for (yi, y) in t.categories.y.iter().enumerate() {
                let count = t.table.count(zi, xi, yi).to_string();
                let mut rec: Vec<&str> = z.iter().copied().collect();
                rec.extend([x.as_str(), y.as_str(), count.as_str()]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reorder a labelled binary `(X, Y)` table so that index 0 is label `"0"`
/// and index 1 is label `"1"` on both axes.
pub fn binary_xy_table(t: &LabeledTable) -> Result<ContingencyTable> {
    let card = t.table.card();
    if card.z.is_some() {
        return Err(Error::Schema("expected an (X, Y) table without Z".into()));
    }
    let position = |labels: &[String], axis: &str| -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| match l.as_str() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Schema(format!("{axis} label {other:?} is not 0 or 1"))),
            })
            .collect()
    };
    let xs = position(&t.categories.x, "x")?;
    let ys = position(&t.categories.y, "y")?;
    let mut cells = [0u64; 4];
    for (xi, &x) in xs.iter().enumerate() {
        for (yi, &y) in ys.iter().enumerate() {
            cells[2 * x + y] += t.table.count(0, xi, yi);
        }
    }
    Ok(ContingencyTable::binary_xy(cells[0], cells[1], cells[2], cells[3]))
}

/// UC Berkeley 1973 admissions by sex, department and decision.
pub const BERKELEY_CSV: &str = include_str!("../data/ucb_admissions.csv");

pub fn berkeley_table() -> Result<LabeledTable> {
    read_table(BERKELEY_CSV.as_bytes(), Schema::WithZ)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const REPORT_SCHEMA: u32 = 1;

/// Machine-readable record of one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub version: String,
    pub command: Vec<String>,
    /// SHA-256 of the input file (data table or simulation config).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub result: serde_json::Value,
}

impl RunReport {
    pub fn new(command: Vec<String>, input_digest: Option<String>, seed: Option<u64>, result: serde_json::Value) -> Self {
        RunReport { schema: REPORT_SCHEMA, version: env!("CARGO_PKG_VERSION").to_string(), command, input_digest, seed, result }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerkeleyResult {
    pub categories: Categories,
    pub total: u64,
    pub alpha: f64,
    pub bootstrap: usize,
    #[serde(flatten)]
    pub iv: IvResult,
}

/// The IV ternary test with sex as instrument, department as treatment and
/// admission as outcome.
pub fn berkeley_analysis(alpha: f64, bootstrap: usize, seed: u64) -> Result<RunReport> {
    let data = berkeley_table()?;
    let iv = iv_ternary(&data.table, alpha, bootstrap, seed)?;
    let result = BerkeleyResult { total: data.table.total(), categories: data.categories, alpha, bootstrap, iv };
    let command = vec![
        "berkeley".to_string(),
        format!("--alpha={alpha}"),
        format!("--bootstrap={bootstrap}"),
        format!("--seed={seed}"),
    ];
    Ok(RunReport::new(command, Some(sha256_hex(BERKELEY_CSV.as_bytes())), Some(seed), serde_json::to_value(result)?))
}
