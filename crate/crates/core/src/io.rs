//! File formats: JSON environment files, JSON-lines dataset and evaluation
//! streams, and comma-separated rating triples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::TestQuery;
use crate::environment::{EnvironmentSpec, GeneratedData, Rating};
use crate::error::{Error, Result};
use crate::estimation::{OfflineDataset, Sample};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, reason: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

pub fn write_env(path: &Path, env: &EnvironmentSpec) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, env).map_err(|e| parse_err(path, 0, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_env(path: &Path) -> Result<EnvironmentSpec> {
    let env: EnvironmentSpec = serde_json::from_reader(open(path)?).map_err(|e| parse_err(path, e.line(), e))?;
    env.validate()?;
    Ok(env)
}

#[derive(Serialize, Deserialize)]
struct EventRecord<'a> {
    u: usize,
    #[serde(borrow)]
    a: std::borrow::Cow<'a, [f64]>,
    r: f64,
}

/// Writes training events as `{"u":…,"a":[…],"r":…}` lines in event order.
pub fn write_dataset(path: &Path, data: &GeneratedData) -> Result<()> {
    let mut w = create(path)?;
    for (u, s) in data.events() {
        let rec = EventRecord {
            u,
            a: std::borrow::Cow::Borrowed(&s.action),
            r: s.reward,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| parse_err(path, 0, e))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file into per-user lists (event order preserved within
/// each user).
pub fn read_dataset(path: &Path, dim: usize, num_users: usize) -> Result<OfflineDataset> {
    let mut data = OfflineDataset::new(dim, num_users);
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        data.push(rec.u, Sample::new(rec.a.into_owned(), rec.r))
            .map_err(|e| parse_err(path, i + 1, e))?;
    }
    Ok(data)
}

/// Writes evaluation queries as `{"u":…,"candidates":[[…],…]}` lines.
pub fn write_queries(path: &Path, queries: &[TestQuery]) -> Result<()> {
    let mut w = create(path)?;
    for q in queries {
        serde_json::to_writer(&mut w, q).map_err(|e| parse_err(path, 0, e))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_queries(path: &Path, dim: usize) -> Result<Vec<TestQuery>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: TestQuery = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        q.validate(dim).map_err(|e| parse_err(path, i + 1, e))?;
        out.push(q);
    }
    Ok(out)
}

/// Reads `user_id,item_id,rating` rows after a single header line.
pub fn read_ratings(path: &Path) -> Result<Vec<Rating>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e))?;
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let rating = rec[2].parse::<f64>().map_err(|e| parse_err(path, line, e))?;
        out.push(Rating {
            user: rec[0].to_string(),
            item: rec[1].to_string(),
            rating,
        });
    }
    Ok(out)
}
