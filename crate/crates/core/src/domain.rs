//! Core data model: molecule libraries, soft-descriptor samples, experiment
//! results and benchmark answer sheets, plus CSV ingestion for each.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix that marks a column of `molecules.csv` as a hard descriptor.
pub const HARD_PREFIX: &str = "hf_";

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate id `{id}` at row {row}")]
    DuplicateId { id: String, row: usize },
    #[error("duplicate soft sample ({molecule_id}, {sample_idx}) at row {row}")]
    DuplicateSample {
        molecule_id: String,
        sample_idx: usize,
        row: usize,
    },
    #[error("cannot parse value `{value}` at row {row}, column `{column}`")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid SMILES `{smiles}` at row {row}")]
    InvalidSmiles { smiles: String, row: usize },
    #[error("value out of range at row {row}, column `{column}`: {value}")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("invalid result for `{molecule_id}`: {reason}")]
    InvalidResult { molecule_id: String, reason: String },
    #[error("molecule `{0}` has a different hard-descriptor set than the library")]
    DescriptorMismatch(String),
    #[error("benchmark sheet is empty or has no model columns")]
    EmptyBenchmark,
}

/// The six mechanistic dimensions scored by the reasoning oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Binding,
    InterfacialShielding,
    HydrophobicProtection,
    IonInteraction,
    ElectronicModulation,
    PredictedEffect,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Binding,
        Dimension::InterfacialShielding,
        Dimension::HydrophobicProtection,
        Dimension::IonInteraction,
        Dimension::ElectronicModulation,
        Dimension::PredictedEffect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Binding => "binding",
            Dimension::InterfacialShielding => "interfacial_shielding",
            Dimension::HydrophobicProtection => "hydrophobic_protection",
            Dimension::IonInteraction => "ion_interaction",
            Dimension::ElectronicModulation => "electronic_modulation",
            Dimension::PredictedEffect => "predicted_effect",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores over the six dimensions, indexed by [`Dimension::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScores(pub [f64; 6]);

impl SoftScores {
    pub fn get(&self, dim: Dimension) -> f64 {
        self.0[dim.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub id: String,
    pub smiles: String,
    pub name: String,
    pub hard: BTreeMap<String, f64>,
}

/// A validated set of molecules sharing one hard-descriptor schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LibraryRepr", into = "LibraryRepr")]
pub struct Library {
    descriptor_names: Vec<String>,
    records: Vec<MoleculeRecord>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LibraryRepr {
    descriptor_names: Vec<String>,
    records: Vec<MoleculeRecord>,
}

impl TryFrom<LibraryRepr> for Library {
    type Error = DomainError;

    fn try_from(repr: LibraryRepr) -> Result<Self, Self::Error> {
        Library::new(repr.descriptor_names, repr.records)
    }
}

impl From<Library> for LibraryRepr {
    fn from(lib: Library) -> Self {
        LibraryRepr {
            descriptor_names: lib.descriptor_names,
            records: lib.records,
        }
    }
}

impl Library {
    /// Builds a library, enforcing unique ids, a shared descriptor set and
    /// finite descriptor values.
    pub fn new(
        mut descriptor_names: Vec<String>,
        records: Vec<MoleculeRecord>,
    ) -> Result<Self, DomainError> {
        descriptor_names.sort();
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(DomainError::DuplicateId {
                    id: rec.id.clone(),
                    row: i + 1,
                });
            }
            if rec.hard.len() != descriptor_names.len()
                || !descriptor_names.iter().all(|n| rec.hard.contains_key(n))
            {
                return Err(DomainError::DescriptorMismatch(rec.id.clone()));
            }
            for (name, &v) in &rec.hard {
                if !v.is_finite() {
                    return Err(DomainError::OutOfRange {
                        row: i + 1,
                        column: name.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Library {
            descriptor_names,
            records,
            index,
        })
    }

    /// Sorted hard-descriptor names shared by every record.
    pub fn descriptor_names(&self) -> &[String] {
        &self.descriptor_names
    }

    pub fn records(&self) -> &[MoleculeRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&MoleculeRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSample {
    pub molecule_id: String,
    pub sample_idx: usize,
    pub scores: SoftScores,
}

/// A measured device outcome. `delta_rel` is always derived from the two
/// PCE values and never set independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub molecule_id: String,
    pub round: u32,
    pub pce_additive: f64,
    pub pce_control: f64,
    pub delta_rel: f64,
}

impl ExperimentResult {
    pub fn new(
        molecule_id: impl Into<String>,
        round: u32,
        pce_additive: f64,
        pce_control: f64,
    ) -> Result<Self, DomainError> {
        let molecule_id = molecule_id.into();
        let bad = |reason: String| DomainError::InvalidResult {
            molecule_id: molecule_id.clone(),
            reason,
        };
        if !(pce_control.is_finite() && pce_control > 0.0) {
            return Err(bad(format!("pce_control must be > 0, got {pce_control}")));
        }
        if !(pce_additive.is_finite() && pce_additive > 0.0 && pce_additive < 100.0) {
            return Err(bad(format!("pce_additive must be in (0, 100), got {pce_additive}")));
        }
        if pce_control >= 100.0 {
            return Err(bad(format!("pce_control must be < 100, got {pce_control}")));
        }
        Ok(ExperimentResult {
            delta_rel: relative_change(pce_additive, pce_control),
            molecule_id,
            round,
            pce_additive,
            pce_control,
        })
    }
}

/// Relative PCE change `(additive - control) / control`.
pub fn relative_change(pce_additive: f64, pce_control: f64) -> f64 {
    (pce_additive - pce_control) / pce_control
}

/// Paired correctness vectors for a multiple-choice benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSheet {
    pub question_ids: Vec<String>,
    /// Model columns in file order.
    pub models: Vec<(String, Vec<bool>)>,
}

impl BenchmarkSheet {
    pub fn model(&self, name: &str) -> Option<&[bool]> {
        self.models
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Syntactic SMILES check: alphabet, balanced branches and brackets, and
/// paired ring-closure labels. No chemistry is interpreted.
pub fn validate_smiles(s: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    let bytes = s.as_bytes();
    let mut depth = 0i64;
    let mut open_rings: HashSet<u32> = HashSet::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'[' => {
                // bracket atom: consume to the matching ']', no nesting
                let mut j = i + 1;
                while j < bytes.len() && bytes[j] != b']' {
                    let b = bytes[j];
                    if !(b.is_ascii_alphanumeric() || matches!(b, b'+' | b'-' | b'@' | b':' | b'*')) {
                        return false;
                    }
                    j += 1;
                }
                if j >= bytes.len() || j == i + 1 {
                    return false;
                }
                i = j + 1;
                continue;
            }
            b']' => return false,
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            b'0'..=b'9' => {
                toggle_ring(&mut open_rings, u32::from(c - b'0'));
            }
            b'%' => {
                let (d1, d2) = (bytes.get(i + 1), bytes.get(i + 2));
                match (d1, d2) {
                    (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                        let label = 100 + u32::from(a - b'0') * 10 + u32::from(b - b'0');
                        toggle_ring(&mut open_rings, label);
                        i += 3;
                        continue;
                    }
                    _ => return false,
                }
            }
            b'=' | b'#' | b'$' | b':' | b'/' | b'\\' | b'.' | b'-' | b'+' | b'@' | b'*' => {}
            c if c.is_ascii_alphabetic() => {}
            _ => return false,
        }
        i += 1;
    }
    depth == 0 && open_rings.is_empty()
}

fn toggle_ring(open: &mut HashSet<u32>, label: u32) {
    if !open.remove(&label) {
        open.insert(label);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DomainError + '_ {
    move |source| DomainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<std::fs::File, DomainError> {
    std::fs::File::open(path).map_err(io_err(path))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(reader: R) -> Result<Self, DomainError> {
        let mut rdr = csv_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| DomainError::Csv {
                row: 0,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| DomainError::Csv {
                row,
                message: e.to_string(),
            })?;
            if rec.len() != header.len() {
                return Err(DomainError::RaggedRow {
                    row,
                    expected: header.len(),
                    found: rec.len(),
                });
            }
            rows.push(rec);
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize, DomainError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DomainError::MissingColumn(name.to_string()))
    }
}

fn parse_f64(rec: &csv::StringRecord, col: usize, row: usize, name: &str) -> Result<f64, DomainError> {
    let raw = &rec[col];
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DomainError::ParseError {
            row,
            column: name.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn parse_usize(rec: &csv::StringRecord, col: usize, row: usize, name: &str) -> Result<usize, DomainError> {
    rec[col].parse::<usize>().map_err(|_| DomainError::ParseError {
        row,
        column: name.to_string(),
        value: rec[col].to_string(),
    })
}

/// Reads `molecules.csv`. Rows are numbered from 1 (the header is not counted).
pub fn ingest_molecules(path: impl AsRef<Path>) -> Result<Library, DomainError> {
    let path = path.as_ref();
    read_molecules(open(path)?)
}

pub fn read_molecules<R: Read>(reader: R) -> Result<Library, DomainError> {
    let table = Table::read(reader)?;
    let id_col = table.column("id")?;
    let smiles_col = table.column("smiles")?;
    let name_col = table.column("name")?;
    let mut hard_cols = Vec::new();
    for (i, h) in table.header.iter().enumerate() {
        if h.starts_with(HARD_PREFIX) {
            hard_cols.push((i, h.clone()));
        } else if !matches!(h.as_str(), "id" | "smiles" | "name") {
            log::warn!("ignoring non-descriptor column `{h}`");
        }
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let id = rec[id_col].to_string();
        if !seen.insert(id.clone()) {
            return Err(DomainError::DuplicateId { id, row });
        }
        let smiles = rec[smiles_col].to_string();
        if !validate_smiles(&smiles) {
            return Err(DomainError::InvalidSmiles { smiles, row });
        }
        let mut hard = BTreeMap::new();
        for (col, name) in &hard_cols {
            hard.insert(name.clone(), parse_f64(rec, *col, row, name)?);
        }
        records.push(MoleculeRecord {
            id,
            smiles,
            name: rec[name_col].to_string(),
            hard,
        });
    }
    Library::new(hard_cols.into_iter().map(|(_, n)| n).collect(), records)
}

pub fn write_molecules<W: Write>(lib: &Library, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "smiles".to_string(), "name".to_string()];
    header.extend(lib.descriptor_names().iter().cloned());
    w.write_record(&header)?;
    for rec in lib.records() {
        let mut row = vec![rec.id.clone(), rec.smiles.clone(), rec.name.clone()];
        row.extend(lib.descriptor_names().iter().map(|n| rec.hard[n].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `results.csv` (`molecule_id,round,pce_additive,pce_control`).
pub fn ingest_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentResult>, DomainError> {
    let path = path.as_ref();
    read_results(open(path)?)
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ExperimentResult>, DomainError> {
    let table = Table::read(reader)?;
    let id_col = table.column("molecule_id")?;
    let round_col = table.column("round")?;
    let add_col = table.column("pce_additive")?;
    let ctl_col = table.column("pce_control")?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let round = parse_usize(rec, round_col, row, "round")? as u32;
        let add = parse_f64(rec, add_col, row, "pce_additive")?;
        let ctl = parse_f64(rec, ctl_col, row, "pce_control")?;
        out.push(ExperimentResult::new(&rec[id_col], round, add, ctl)?);
    }
    Ok(out)
}

pub fn write_results<W: Write>(results: &[ExperimentResult], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["molecule_id", "round", "pce_additive", "pce_control"])?;
    for r in results {
        w.write_record([
            r.molecule_id.clone(),
            r.round.to_string(),
            r.pce_additive.to_string(),
            r.pce_control.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `soft_samples.csv`; every score must lie in [0, 1] and each
/// `(molecule_id, sample_idx)` pair may appear once.
pub fn ingest_soft_samples(path: impl AsRef<Path>) -> Result<Vec<SoftSample>, DomainError> {
    let path = path.as_ref();
    read_soft_samples(open(path)?)
}

pub fn read_soft_samples<R: Read>(reader: R) -> Result<Vec<SoftSample>, DomainError> {
    let table = Table::read(reader)?;
    let id_col = table.column("molecule_id")?;
    let idx_col = table.column("sample_idx")?;
    let dim_cols = Dimension::ALL
        .iter()
        .map(|d| table.column(d.name()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        let molecule_id = rec[id_col].to_string();
        let sample_idx = parse_usize(rec, idx_col, row, "sample_idx")?;
        if !seen.insert((molecule_id.clone(), sample_idx)) {
            return Err(DomainError::DuplicateSample {
                molecule_id,
                sample_idx,
                row,
            });
        }
        let mut scores = [0.0; 6];
        for (d, &col) in Dimension::ALL.iter().zip(&dim_cols) {
            let v = parse_f64(rec, col, row, d.name())?;
            if !(0.0..=1.0).contains(&v) {
                return Err(DomainError::OutOfRange {
                    row,
                    column: d.name().to_string(),
                    value: v,
                });
            }
            scores[d.index()] = v;
        }
        out.push(SoftSample {
            molecule_id,
            sample_idx,
            scores: SoftScores(scores),
        });
    }
    Ok(out)
}

pub fn write_soft_samples<W: Write>(samples: &[SoftSample], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["molecule_id".to_string(), "sample_idx".to_string()];
    header.extend(Dimension::ALL.iter().map(|d| d.name().to_string()));
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.molecule_id.clone(), s.sample_idx.to_string()];
        row.extend(s.scores.0.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `benchmark.csv` (`question_id,<model>...`, cells 0/1).
pub fn ingest_benchmark(path: impl AsRef<Path>) -> Result<BenchmarkSheet, DomainError> {
    let path = path.as_ref();
    read_benchmark(open(path)?)
}

pub fn read_benchmark<R: Read>(reader: R) -> Result<BenchmarkSheet, DomainError> {
    let table = Table::read(reader)?;
    let q_col = table.column("question_id")?;
    let model_cols: Vec<(usize, String)> = table
        .header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q_col)
        .map(|(i, h)| (i, h.clone()))
        .collect();
    if model_cols.is_empty() || table.rows.is_empty() {
        return Err(DomainError::EmptyBenchmark);
    }
    let mut question_ids = Vec::with_capacity(table.rows.len());
    let mut models: Vec<(String, Vec<bool>)> = model_cols
        .iter()
        .map(|(_, n)| (n.clone(), Vec::with_capacity(table.rows.len())))
        .collect();
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 1;
        question_ids.push(rec[q_col].to_string());
        for ((col, name), (_, v)) in model_cols.iter().zip(models.iter_mut()) {
            let bit = match &rec[*col] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DomainError::ParseError {
                        row,
                        column: name.clone(),
                        value: other.to_string(),
                    })
                }
            };
            v.push(bit);
        }
    }
    Ok(BenchmarkSheet {
        question_ids,
        models,
    })
}
