//! Binary container shared by segment records, feature caches, salience
//! exchange files and checkpoints.
//!
//! Byte layout of one record (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"IREC"
//! 4       4     format version, u32 (currently 1)
//! 8       4     record kind, 4 ASCII bytes (b"SEG ", b"FEAT", b"PSAL", b"CKPT")
//! 12      4     header length H, u32
//! 16      H     header, UTF-8 JSON object
//! 16+H    ...   payload: f32 little-endian values of every tensor listed in
//!               header["tensors"] ([{"name": .., "shape": [..]}, ..]),
//!               concatenated in that order, each row-major
//! ```
//!
//! A file may hold several records back to back.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IREC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One decoded record: kind tag, JSON header (minus the tensor table) and
/// named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: [u8; 4],
    pub header: Value,
    pub tensors: Vec<(TensorInfo, Vec<f32>)>,
}

impl Record {
    pub fn new(kind: &[u8; 4], header: Value) -> Self {
        Self {
            kind: *kind,
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((
            TensorInfo {
                name: name.to_owned(),
                shape: shape.to_vec(),
            },
            data,
        ));
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(info, _)| info.name == name)
            .map(|(info, data)| (info.shape.as_slice(), data.as_slice()))
    }

    pub fn encode(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut header = self.header.clone();
        let table: Vec<&TensorInfo> = self.tensors.iter().map(|(t, _)| t).collect();
        if let Value::Object(map) = &mut header {
            map.insert("tensors".into(), serde_json::to_value(table)?);
        }
        let header = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&self.kind)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for (_, data) in &self.tensors {
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Decodes one record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), String> {
        let take = |at: usize, n: usize| -> Result<&[u8], String> {
            bytes
                .get(at..at + n)
                .ok_or_else(|| format!("truncated at byte {at}"))
        };
        if take(0, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let kind: [u8; 4] = take(8, 4)?.try_into().unwrap();
        let header_len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
        let mut header: Value =
            serde_json::from_slice(take(16, header_len)?).map_err(|e| e.to_string())?;
        let table: Vec<TensorInfo> = match header.as_object_mut().and_then(|m| m.remove("tensors")) {
            Some(v) => serde_json::from_value(v).map_err(|e| e.to_string())?,
            None => Vec::new(),
        };
        let mut at = 16 + header_len;
        let mut tensors = Vec::with_capacity(table.len());
        for info in table {
            let n = info.len();
            let raw = take(at, n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at += n * 4;
            tensors.push((info, data));
        }
        Ok((
            Self {
                kind,
                header,
                tensors,
            },
            at,
        ))
    }
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        record.encode(&mut out).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (record, used) = Record::decode(&bytes[at..]).map_err(|message| Error::Container {
            path: path.to_owned(),
            message,
        })?;
        records.push(record);
        at += used;
    }
    Ok(records)
}

/// Reads a file that must contain exactly one record of the given kind.
pub fn read_single(path: &Path, kind: &[u8; 4]) -> Result<Record> {
    let mut records = read_records(path)?;
    let malformed = |message: String| Error::Container {
        path: path.to_owned(),
        message,
    };
    if records.len() != 1 {
        return Err(malformed(format!("expected 1 record, found {}", records.len())));
    }
    let record = records.pop().unwrap();
    if &record.kind != kind {
        return Err(malformed(format!(
            "expected record kind {:?}, found {:?}",
            String::from_utf8_lossy(kind),
            String::from_utf8_lossy(&record.kind)
        )));
    }
    Ok(record)
}
