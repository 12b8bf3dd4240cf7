//! File formats: CSV for matrices and tables, JSON for model archives.

pub mod archive;
pub mod table;

pub use archive::{ModelArchive, ModelKind, TrainingMetadata};
pub use table::{load_csv, load_table, save_csv, save_snapshots, save_table, Table};
