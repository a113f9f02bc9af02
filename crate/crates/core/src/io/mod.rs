//! Tag file formats.

pub mod qtag;

pub use qtag::{
    read_dataset, read_metadata, stream_dataset, write_atomic, write_dataset, QtagDirSink,
};
