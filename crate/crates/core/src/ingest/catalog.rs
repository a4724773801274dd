use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::INSTRUMENTS;

/// Canonical instrument names. Position is the label-vector index.
pub const INSTRUMENT_NAMES: [&str; INSTRUMENTS] = [
    "Piano", "Violin", "Viola", "Cello", "Clarinet", "Bassoon", "Horn",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub code: u32,
    pub name: String,
}

/// Maps dataset instrument codes onto the seven recognized instruments.
///
/// Codes are configuration. The defaults are the MusicNet program numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentCatalog {
    instruments: Vec<CatalogEntry>,
}

impl Default for InstrumentCatalog {
    fn default() -> Self {
        let codes = [1, 41, 42, 43, 72, 71, 61];
        Self {
            instruments: codes
                .iter()
                .zip(INSTRUMENT_NAMES)
                .map(|(&code, name)| CatalogEntry {
                    code,
                    name: name.to_owned(),
                })
                .collect(),
        }
    }
}

impl InstrumentCatalog {
    /// Builds a catalog from codes listed in canonical instrument order.
    pub fn with_codes(codes: [u32; INSTRUMENTS]) -> Result<Self> {
        Self {
            instruments: codes
                .iter()
                .zip(INSTRUMENT_NAMES)
                .map(|(&code, name)| CatalogEntry {
                    code,
                    name: name.to_owned(),
                })
                .collect(),
        }
        .validated()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let catalog: Self = serde_json::from_str(text)?;
        catalog.validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validated(self) -> Result<Self> {
        if self.instruments.len() != INSTRUMENTS {
            return Err(Error::Config(format!(
                "catalog must list exactly {INSTRUMENTS} instruments, found {}",
                self.instruments.len()
            )));
        }
        for (entry, expected) in self.instruments.iter().zip(INSTRUMENT_NAMES) {
            if entry.name != expected {
                return Err(Error::Config(format!(
                    "catalog order is fixed ({}); found {:?} where {expected:?} belongs",
                    INSTRUMENT_NAMES.join(", "),
                    entry.name
                )));
            }
        }
        let codes: HashSet<u32> = self.instruments.iter().map(|e| e.code).collect();
        if codes.len() != INSTRUMENTS {
            return Err(Error::Config("catalog instrument codes must be unique".into()));
        }
        Ok(self)
    }

    /// Label index of a dataset instrument code, `None` for unlisted codes.
    pub fn index_of(&self, code: u32) -> Option<usize> {
        self.instruments.iter().position(|e| e.code == code)
    }

    pub fn code(&self, index: usize) -> u32 {
        self.instruments[index].code
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.instruments
    }
}
