use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::InstrumentCatalog;
use crate::error::{Error, Result};

/// One annotated note. Times are sample indices at 44.1 kHz, offset
/// exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_sample: u64,
    pub offset_sample: u64,
    pub midi_pitch: u8,
    pub instrument_code: u32,
    /// Catalog index, `None` when the code is not one of the recognized
    /// instruments. Such notes stay in the pitch roll but never set a label.
    pub instrument: Option<usize>,
}

impl NoteEvent {
    pub fn new(
        onset_sample: u64,
        offset_sample: u64,
        midi_pitch: u8,
        instrument_code: u32,
        catalog: &InstrumentCatalog,
    ) -> Result<Self, String> {
        if onset_sample >= offset_sample {
            return Err(format!(
                "onset {onset_sample} must precede offset {offset_sample}"
            ));
        }
        if midi_pitch > 127 {
            return Err(format!("MIDI pitch {midi_pitch} out of range 0..=127"));
        }
        Ok(Self {
            onset_sample,
            offset_sample,
            midi_pitch,
            instrument_code,
            instrument: catalog.index_of(instrument_code),
        })
    }

    pub fn is_labeled(&self) -> bool {
        self.instrument.is_some()
    }

    /// The part of this note inside `[start, end)`, re-based to `start`.
    pub fn clipped(&self, start: u64, end: u64) -> Option<Self> {
        let onset = self.onset_sample.max(start);
        let offset = self.offset_sample.min(end);
        (onset < offset).then(|| Self {
            onset_sample: onset - start,
            offset_sample: offset - start,
            ..*self
        })
    }
}

/// Parses a MusicNet label table: a CSV with a header naming at least
/// `start_time`, `end_time`, `instrument` and `note` (times in samples).
/// Other columns are ignored.
pub fn parse_labels(path: &Path, catalog: &InstrumentCatalog) -> Result<Vec<NoteEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels_str(&text, catalog).map_err(|(row, message)| Error::LabelParse {
        path: path.to_owned(),
        row,
        message,
    })
}

/// Parses label text. Errors carry the 1-based line number.
pub fn parse_labels_str(
    text: &str,
    catalog: &InstrumentCatalog,
) -> Result<Vec<NoteEvent>, (usize, String)> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| (1, e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| (1, format!("missing column {name:?}")))
    };
    let (onset_col, offset_col) = (column("start_time")?, column("end_time")?);
    let (instr_col, note_col) = (column("instrument")?, column("note")?);

    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| (line, e.to_string()))?;
        let field = |col: usize, name: &str| -> Result<&str, (usize, String)> {
            record
                .get(col)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| (line, format!("missing {name}")))
        };
        let parse_u64 = |col: usize, name: &str| -> Result<u64, (usize, String)> {
            let raw = field(col, name)?;
            raw.parse()
                .map_err(|_| (line, format!("{name} {raw:?} is not a sample index")))
        };
        let onset = parse_u64(onset_col, "start_time")?;
        let offset = parse_u64(offset_col, "end_time")?;
        let raw_instr = field(instr_col, "instrument")?;
        let code: u32 = raw_instr
            .parse()
            .map_err(|_| (line, format!("instrument {raw_instr:?} is not an integer code")))?;
        let raw_note = field(note_col, "note")?;
        let pitch: u8 = raw_note
            .parse()
            .map_err(|_| (line, format!("note {raw_note:?} is not a MIDI number")))?;
        let event = NoteEvent::new(onset, offset, pitch, code, catalog).map_err(|m| (line, m))?;
        events.push(event);
    }
    Ok(events)
}

/// Writes events in the same table layout [`parse_labels`] reads.
pub fn write_labels(path: &Path, events: &[NoteEvent]) -> Result<()> {
    let mut text = String::from("start_time,end_time,instrument,note,start_beat,end_beat,note_value\n");
    for e in events {
        text.push_str(&format!(
            "{},{},{},{},0,0,\n",
            e.onset_sample, e.offset_sample, e.instrument_code, e.midi_pitch
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
