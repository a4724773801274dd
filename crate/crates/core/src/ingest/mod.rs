//! Dataset ingestion: label tables, clip audio, 3-second segmentation and
//! frame rasterization.

mod catalog;
mod dataset;
mod labels;
mod segment;
mod store;

pub use catalog::{CatalogEntry, InstrumentCatalog, INSTRUMENT_NAMES};
pub use dataset::{
    audio_path, labels_path, load_audio, read_split_manifest, resample_linear, scan_dataset,
    write_audio, ClipManifest, Split, EXPECTED_LAYOUT, MANIFEST_FILE,
};
pub use labels::{parse_labels, parse_labels_str, write_labels, NoteEvent};
pub use segment::{rasterize_labels, rasterize_pitch, reassemble_audio, segment_clip, SegmentRecord};
pub use store::{SegmentStore, StoreIndex, StoredClip, STORE_VERSION};
