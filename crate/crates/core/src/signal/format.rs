//! Record files: the `CECG` binary container and lead-per-column CSV.
//!
//! CECG layout (little-endian): `b"CECG"`, u16 version (1), u16 lead count,
//! u32 sample count, f32 sampling rate, lead-major f32 samples, then an
//! optional u32-length-prefixed JSON metadata block.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{default_lead_names, EcgRecord, Label};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CECG";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordFormat {
    Cecg,
    /// CSV carries no sampling rate, so the reader is told.
    Csv { fs: f64 },
}

impl RecordFormat {
    /// Guesses from the file extension; CSV needs the caller's rate.
    pub fn from_path(path: &Path, csv_fs: f64) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => RecordFormat::Csv { fs: csv_fs },
            _ => RecordFormat::Cecg,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    record_id: String,
    leads: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

pub fn read_record(path: &Path, format: RecordFormat) -> Result<EcgRecord> {
    match format {
        RecordFormat::Cecg => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_cecg(&bytes, path)
        }
        RecordFormat::Csv { fs } => read_csv(path, fs),
    }
}

pub fn write_record(rec: &EcgRecord, path: &Path, format: RecordFormat) -> Result<()> {
    let bytes = match format {
        RecordFormat::Cecg => encode_cecg(rec)?,
        RecordFormat::Csv { .. } => encode_csv(rec)?,
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_cecg(rec: &EcgRecord) -> Result<Vec<u8>> {
    let c = u16::try_from(rec.n_leads())
        .map_err(|_| Error::DimensionMismatch { context: rec.record_id.clone(), detail: "too many leads".into() })?;
    let t = u32::try_from(rec.len())
        .map_err(|_| Error::DimensionMismatch { context: rec.record_id.clone(), detail: "too many samples".into() })?;
    let meta = serde_json::to_vec(&Metadata { record_id: rec.record_id.clone(), leads: rec.leads.clone(), label: rec.label.clone() })?;
    let mut out = Vec::with_capacity(HEADER_LEN + rec.samples.len() * 4 + 4 + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&(rec.fs as f32).to_le_bytes());
    for v in &rec.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn decode_cecg(bytes: &[u8], path: &Path) -> Result<EcgRecord> {
    let malformed = |detail: String| Error::MalformedHeader { path: path.to_path_buf(), detail };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let c = u16_at(6) as usize;
    let t = u32_at(8) as usize;
    let fs = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let n = c * t;
    let data_end = HEADER_LEN + n * 4;
    let context = path.display().to_string();
    if bytes.len() < data_end {
        return Err(Error::DimensionMismatch {
            context,
            detail: format!("header declares {c}x{t} samples, file holds {}", (bytes.len() - HEADER_LEN) / 4),
        });
    }
    let samples: Vec<f32> =
        bytes[HEADER_LEN..data_end].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();

    let rest = &bytes[data_end..];
    let meta: Option<Metadata> = match rest.len() {
        0 => None,
        1..=3 => return Err(malformed("truncated metadata length".into())),
        _ => {
            let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            if rest.len() != 4 + len {
                return Err(malformed(format!("metadata block declares {len} bytes, found {}", rest.len() - 4)));
            }
            Some(serde_json::from_slice(&rest[4..]).map_err(|e| malformed(format!("metadata: {e}")))?)
        }
    };
    let (record_id, leads, label) = match meta {
        Some(m) => (m.record_id, m.leads, m.label),
        None => (file_stem(path), default_lead_names(c), None),
    };
    if leads.len() != c {
        return Err(Error::DimensionMismatch { context, detail: format!("{} lead names for {c} leads", leads.len()) });
    }
    let rec = EcgRecord { record_id, leads, fs, samples, label }.standardize_lead_order()?;
    rec.validate()?;
    Ok(rec)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string()
}

pub fn read_csv(path: &Path, fs: f64) -> Result<EcgRecord> {
    let context = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let leads: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if leads.is_empty() || leads.iter().any(String::is_empty) {
        return Err(Error::MalformedHeader { path: path.to_path_buf(), detail: "empty lead name".into() });
    }
    let c = leads.len();
    let mut columns: Vec<Vec<f32>> = vec![Vec::new(); c];
    for (row, result) in reader.records().enumerate() {
        let record = result?;
        if record.len() != c {
            return Err(Error::DimensionMismatch {
                context,
                detail: format!("row {} has {} fields, header has {c}", row + 1, record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| Error::DimensionMismatch {
                context: context.clone(),
                detail: format!("row {}, column {}: not a number: {field:?}", row + 1, col + 1),
            })?;
            columns[col].push(v);
        }
    }
    let rec = EcgRecord { record_id: file_stem(path), leads, fs, samples: columns.concat(), label: None };
    let rec = rec.standardize_lead_order()?;
    rec.validate()?;
    Ok(rec)
}

pub fn encode_csv(rec: &EcgRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&rec.leads)?;
    let t = rec.len();
    let mut row = Vec::with_capacity(rec.n_leads());
    for i in 0..t {
        row.clear();
        row.extend((0..rec.n_leads()).map(|c| rec.samples[c * t + i].to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}
