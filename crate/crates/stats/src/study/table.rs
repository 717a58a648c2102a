use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Result, StatsError};

pub const SCORE_MIN: i32 = -4;
pub const SCORE_MAX: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Intuitivity,
    Semantics,
    Quality,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Intuitivity, Criterion::Semantics, Criterion::Quality];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Intuitivity => "intuitivity",
            Criterion::Semantics => "semantics",
            Criterion::Quality => "quality",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "intuitivity" => Ok(Criterion::Intuitivity),
            "semantics" => Ok(Criterion::Semantics),
            "quality" => Ok(Criterion::Quality),
            other => Err(format!("unknown criterion {other:?}")),
        }
    }
}

/// One answer. Raw scores are integers in `[-4, 4]`; adjusted tables hold reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub rater_id: String,
    pub item_id: String,
    pub method: String,
    pub criterion: Criterion,
    pub score: f64,
    pub variant: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    records: Vec<Response>,
}

#[derive(Deserialize)]
struct CsvRow {
    rater_id: String,
    item_id: String,
    method: String,
    criterion: String,
    score: String,
    variant: String,
}

impl ResponseTable {
    /// Builds a table, rejecting duplicate (rater, item, method, criterion) keys.
    pub fn new(records: Vec<Response>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !r.score.is_finite() {
                return Err(StatsError::Schema { row: i + 1, message: "score is not finite".into() });
            }
            if !seen.insert((&r.rater_id, &r.item_id, &r.method, r.criterion)) {
                return Err(StatsError::Schema {
                    row: i + 1,
                    message: format!(
                        "duplicate answer for rater {} item {} method {} criterion {}",
                        r.rater_id, r.item_id, r.method, r.criterion
                    ),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    /// Reads `rater_id,item_id,method,criterion,score,variant`. Row numbers in
    /// errors count data rows from 1 (the header is row 0).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let expected = ["rater_id", "item_id", "method", "criterion", "score", "variant"];
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(StatsError::Schema {
                row: 0,
                message: format!("expected header {}, found {}", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| StatsError::Schema { row: row_no, message: e.to_string() })?;
            let schema = |message: String| StatsError::Schema { row: row_no, message };
            let criterion = row.criterion.parse::<Criterion>().map_err(schema)?;
            let score: i32 = row
                .score
                .parse()
                .map_err(|_| schema(format!("score {:?} is not an integer", row.score)))?;
            if !(SCORE_MIN..=SCORE_MAX).contains(&score) {
                return Err(schema(format!("score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")));
            }
            if row.variant != "A" && row.variant != "B" {
                return Err(schema(format!("variant {:?} is not A or B", row.variant)));
            }
            for (field, v) in [("rater_id", &row.rater_id), ("item_id", &row.item_id), ("method", &row.method)] {
                if v.is_empty() {
                    return Err(schema(format!("{field} is empty")));
                }
            }
            records.push(Response {
                rater_id: row.rater_id,
                item_id: row.item_id,
                method: row.method,
                criterion,
                score: score as f64,
                variant: row.variant,
            });
        }
        Self::new(records)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rater_id", "item_id", "method", "criterion", "score", "variant"])?;
        for r in &self.records {
            w.write_record([
                r.rater_id.as_str(),
                r.item_id.as_str(),
                r.method.as_str(),
                r.criterion.name(),
                &r.score.to_string(),
                r.variant.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn records(&self) -> &[Response] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn raters(&self) -> Vec<String> {
        sorted_unique(self.records.iter().map(|r| &r.rater_id))
    }

    pub fn items(&self) -> Vec<String> {
        sorted_unique(self.records.iter().map(|r| &r.item_id))
    }

    pub fn methods(&self) -> Vec<String> {
        sorted_unique(self.records.iter().map(|r| &r.method))
    }

    pub fn variants(&self) -> Vec<String> {
        sorted_unique(self.records.iter().map(|r| &r.variant))
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        self.records.iter().map(|r| r.criterion).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Same records with every score passed through `f`.
    pub fn map_scores(&self, mut f: impl FnMut(&Response) -> f64) -> Self {
        let records = self.records.iter().map(|r| Response { score: f(r), ..r.clone() }).collect();
        Self { records }
    }
}

fn sorted_unique<'a>(it: impl Iterator<Item = &'a String>) -> Vec<String> {
    it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
}
