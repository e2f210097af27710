//! CSV ingestion of stage data and CSV output helpers.
//!
//! A stage file has a header row, a treatment column `a`, an optional outcome
//! column `y`, an optional `id` column, and covariates under any other names.
//! The long format stacks all stages with an extra `stage` column (1-based)
//! and requires `id`; a covariate left blank on every row of a stage is not
//! part of that stage's history.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{encode_treatment, Coefficients, StageHistory, Trial};
use crate::error::{Error, Result};
use crate::linalg::Columns;
use crate::scalar::Scalar;

const TREATMENT: &str = "a";
const OUTCOME: &str = "y";
const ID: &str = "id";
const STAGE: &str = "stage";

/// One parsed stage file.
#[derive(Debug, Clone)]
pub struct StageTable<F> {
    pub history: StageHistory<F>,
    pub y: Option<Vec<F>>,
    pub ids: Option<Vec<String>>,
    /// Original treatment levels mapped to (0, 1), when not already 0/1.
    pub treatment_levels: Option<(f64, f64)>,
}

fn parse_cell(s: &str, column: &str, row: usize) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("column `{column}`, row {}: cannot parse `{t}` as a number", row + 1)))
}

fn required(v: Option<f64>, column: &str, row: usize) -> Result<f64> {
    v.ok_or_else(|| Error::MissingValue { column: column.to_string(), row })
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = std::collections::HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Table { header, rows })
}

impl Table {
    fn index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn to_f<F: Scalar>(v: Vec<f64>) -> Vec<F> {
    v.into_iter().map(F::lit).collect()
}

/// Parse one stage from CSV.
pub fn read_stage<F: Scalar, R: Read>(reader: R) -> Result<StageTable<F>> {
    let t = read_table(reader)?;
    let ai = t.index(TREATMENT).ok_or_else(|| Error::UnknownColumn(TREATMENT.into()))?;
    parse_stage(t, Some(ai))
}

/// Parse covariates for new patients. A treatment column is optional and
/// ignored; the returned history carries an all-zero placeholder treatment.
pub fn read_covariates<F: Scalar, R: Read>(reader: R) -> Result<StageTable<F>> {
    let t = read_table(reader)?;
    parse_stage(t, None)
}

fn parse_stage<F: Scalar>(t: Table, ai: Option<usize>) -> Result<StageTable<F>> {
    let skip = t.index(TREATMENT);
    let yi = t.index(OUTCOME);
    let ii = t.index(ID);
    let covs: Vec<usize> = (0..t.header.len()).filter(|&j| Some(j) != skip && Some(j) != yi && Some(j) != ii).collect();
    let n = t.rows.len();
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut cols = vec![Vec::with_capacity(n); covs.len()];
    let mut ids = Vec::with_capacity(n);
    for (r, rec) in t.rows.iter().enumerate() {
        if let Some(ai) = ai {
            a.push(required(parse_cell(&rec[ai], TREATMENT, r)?, TREATMENT, r)?);
        }
        if let Some(yi) = yi {
            y.push(required(parse_cell(&rec[yi], OUTCOME, r)?, OUTCOME, r)?);
        }
        if let Some(ii) = ii {
            ids.push(rec[ii].to_string());
        }
        for (c, &j) in covs.iter().enumerate() {
            cols[c].push(required(parse_cell(&rec[j], &t.header[j], r)?, &t.header[j], r)?);
        }
    }
    let (a, levels) = match ai {
        Some(_) => encode_treatment(&a)?,
        None => (vec![0; n], None),
    };
    let names = covs.iter().map(|&j| t.header[j].clone()).collect();
    let x = Columns::from_columns(n, cols.into_iter().map(to_f).collect())?;
    Ok(StageTable {
        history: StageHistory::new(a, x, names)?,
        y: yi.map(|_| to_f(y)),
        ids: ii.map(|_| ids),
        treatment_levels: levels,
    })
}

pub fn read_stage_file<F: Scalar>(path: impl AsRef<Path>) -> Result<StageTable<F>> {
    read_stage(std::fs::File::open(path)?)
}

pub fn read_covariates_file<F: Scalar>(path: impl AsRef<Path>) -> Result<StageTable<F>> {
    read_covariates(std::fs::File::open(path)?)
}

/// Assemble a trial from per-stage tables (stage 1 first). The last table
/// must carry `y`. When every table has `id`, rows are aligned by id;
/// otherwise row order must agree.
pub fn trial_from_tables<F: Scalar>(tables: Vec<StageTable<F>>) -> Result<(Trial<F>, Option<Vec<String>>)> {
    let last = tables.last().ok_or_else(|| Error::Config("no stage files given".into()))?;
    let y = last.y.clone().ok_or_else(|| Error::UnknownColumn("y (final stage)".into()))?;
    let ids = last.ids.clone();
    let mut stages = Vec::with_capacity(tables.len());
    for (k, t) in tables.iter().enumerate() {
        let h = match (&ids, &t.ids) {
            (Some(target), Some(own)) if own != target => {
                let pos: BTreeMap<&str, usize> = own.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
                let rows = target
                    .iter()
                    .map(|id| {
                        pos.get(id.as_str())
                            .copied()
                            .ok_or_else(|| Error::Shape(format!("id `{id}` missing from stage {}", k + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if own.len() != target.len() {
                    return Err(Error::Shape(format!("stage {} has {} rows, expected {}", k + 1, own.len(), target.len())));
                }
                t.history.select_rows(&rows)
            }
            _ => t.history.clone(),
        };
        stages.push(h);
    }
    Ok((Trial::new(stages, y)?, ids))
}

pub fn read_trial_files<F: Scalar>(paths: &[impl AsRef<Path>]) -> Result<(Trial<F>, Option<Vec<String>>)> {
    let tables = paths.iter().map(read_stage_file).collect::<Result<Vec<_>>>()?;
    trial_from_tables(tables)
}

/// Parse the long multi-stage format.
pub fn read_long<F: Scalar, R: Read>(reader: R) -> Result<(Trial<F>, Vec<String>)> {
    let t = read_table(reader)?;
    let si = t.index(STAGE).ok_or_else(|| Error::UnknownColumn(STAGE.into()))?;
    let ii = t.index(ID).ok_or_else(|| Error::UnknownColumn(ID.into()))?;
    let ai = t.index(TREATMENT).ok_or_else(|| Error::UnknownColumn(TREATMENT.into()))?;
    let yi = t.index(OUTCOME).ok_or_else(|| Error::UnknownColumn(OUTCOME.into()))?;
    let covs: Vec<usize> = (0..t.header.len()).filter(|&j| ![si, ii, ai, yi].contains(&j)).collect();
    let mut by_stage: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, rec) in t.rows.iter().enumerate() {
        let s = rec[si]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("column `stage`, row {}: `{}` is not a stage number", r + 1, &rec[si])))?;
        by_stage.entry(s).or_default().push(r);
    }
    let k = by_stage.len();
    if by_stage.keys().copied().ne(1..=k) {
        return Err(Error::Config(format!("stages must be numbered 1..K, found {:?}", by_stage.keys().collect::<Vec<_>>())));
    }
    let mut tables = Vec::with_capacity(k);
    for (s, rows) in &by_stage {
        let mut sorted = rows.clone();
        sorted.sort_by(|&x, &y| t.rows[x][ii].cmp(&t.rows[y][ii]));
        let ids: Vec<String> = sorted.iter().map(|&r| t.rows[r][ii].to_string()).collect();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate id within stage {s}")));
        }
        let present: Vec<usize> =
            covs.iter().copied().filter(|&j| sorted.iter().any(|&r| !t.rows[r][j].trim().is_empty())).collect();
        let mut a = Vec::with_capacity(sorted.len());
        let mut cols = vec![Vec::with_capacity(sorted.len()); present.len()];
        let mut y = Vec::new();
        for &r in &sorted {
            let rec = &t.rows[r];
            a.push(required(parse_cell(&rec[ai], TREATMENT, r)?, TREATMENT, r)?);
            for (c, &j) in present.iter().enumerate() {
                cols[c].push(required(parse_cell(&rec[j], &t.header[j], r)?, &t.header[j], r)?);
            }
            if *s == k {
                y.push(required(parse_cell(&rec[yi], OUTCOME, r)?, OUTCOME, r)?);
            }
        }
        let (a, levels) = encode_treatment(&a)?;
        let x = Columns::from_columns(sorted.len(), cols.into_iter().map(to_f).collect())?;
        tables.push(StageTable {
            history: StageHistory::new(a, x, present.iter().map(|&j| t.header[j].clone()).collect())?,
            y: (*s == k).then(|| to_f(y)),
            ids: Some(ids),
            treatment_levels: levels,
        });
    }
    let (trial, ids) = trial_from_tables(tables)?;
    Ok((trial, ids.unwrap_or_default()))
}

/// Read a weight vector from a CSV with a `w` column (or a single column).
pub fn read_weights<F: Scalar, R: Read>(reader: R) -> Result<Vec<F>> {
    let t = read_table(reader)?;
    let j = match (t.index("w"), t.header.len()) {
        (Some(j), _) => j,
        (None, 1) => 0,
        _ => return Err(Error::UnknownColumn("w".into())),
    };
    let name = t.header[j].clone();
    let w = t
        .rows
        .iter()
        .enumerate()
        .map(|(r, rec)| required(parse_cell(&rec[j], &name, r)?, &name, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(to_f(w))
}

/// Shortest representation that parses back to the same value.
pub fn fmt_num<F: Scalar>(v: F) -> String {
    format!("{v}")
}

/// Original-scale coefficient table: `term,kind,estimate`.
pub fn write_coefficients<F: Scalar, W: Write>(c: &Coefficients<F>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "kind", "estimate"])?;
    w.write_record(["(intercept)", "intercept", &fmt_num(c.intercept)])?;
    w.write_record(["A", "treatment", &fmt_num(c.psi0)])?;
    for (t, &b) in c.main_terms.iter().zip(&c.beta) {
        w.write_record([t.label(), "main", &fmt_num(b)])?;
    }
    for (t, &p) in c.interaction_terms.iter().zip(&c.psi) {
        w.write_record([&format!("A*{}", t.label()), "interaction", &fmt_num(p)])?;
    }
    w.flush()?;
    Ok(())
}
