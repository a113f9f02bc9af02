//! QTAG binary tag files and dataset directories.
//!
//! A file starts with a 32-byte header (magic `QTAG`, u16 version, u16
//! header length, u64 start ps, u64 end ps, u64 reserved) followed by 16-byte
//! little-endian records (u64 timestamp ps, u16 channel, u16 flags, u32
//! reserved). A dataset directory holds one file per channel plus the JSON
//! metadata sidecar `dataset.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::detector::{ChannelId, TimeTagRecord, FLAG_DARK};
use crate::engine::dataset::{ChannelStream, RunMetadata, TagDataset, TagSink};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;
pub const SIDECAR: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QtagHeader {
    pub version: u16,
    pub header_len: u16,
    pub t_start_ps: u64,
    pub t_end_ps: u64,
}

impl QtagHeader {
    pub fn new(t_start_ps: u64, t_end_ps: u64) -> Self {
        QtagHeader {
            version: VERSION,
            header_len: HEADER_LEN as u16,
            t_start_ps,
            t_end_ps,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.header_len.to_le_bytes());
        b[8..16].copy_from_slice(&self.t_start_ps.to_le_bytes());
        b[16..24].copy_from_slice(&self.t_end_ps.to_le_bytes());
        b
    }
}

pub fn encode_record(r: &TimeTagRecord) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[0..8].copy_from_slice(&r.timestamp.to_le_bytes());
    b[8..10].copy_from_slice(&r.channel.to_le_bytes());
    b[10..12].copy_from_slice(&r.flags.to_le_bytes());
    b
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: msg.into(),
    }
}

/// File name used for `channel` inside a dataset directory.
pub fn channel_file_name(channel: ChannelId) -> String {
    format!("ch{channel:02}.qtag")
}

/// Buffered writer for one QTAG file. Records must be appended in time order.
pub struct QtagWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last: Option<u64>,
    clear_dark: bool,
    pub records: u64,
}

impl QtagWriter {
    pub fn create(path: &Path, header: QtagHeader, blind: bool) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, f);
        out.write_all(&header.encode())
            .map_err(|e| Error::io(path, e))?;
        Ok(QtagWriter {
            path: path.to_path_buf(),
            out,
            last: None,
            clear_dark: blind,
            records: 0,
        })
    }

    pub fn write(&mut self, recs: &[TimeTagRecord]) -> Result<()> {
        for r in recs {
            if self.last.is_some_and(|l| r.timestamp < l) {
                return Err(Error::invalid(format!(
                    "{}: record at {} ps precedes previous record",
                    self.path.display(),
                    r.timestamp
                )));
            }
            self.last = Some(r.timestamp);
            let mut r = *r;
            if self.clear_dark {
                r.flags &= !FLAG_DARK;
            }
            self.out
                .write_all(&encode_record(&r))
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.records += recs.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        self.out
            .get_ref()
            .sync_all()
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Sequential reader for one QTAG file.
pub struct QtagReader {
    path: PathBuf,
    input: BufReader<File>,
    pub header: QtagHeader,
    remaining: u64,
    last: Option<u64>,
    peeked: Option<TimeTagRecord>,
}

impl QtagReader {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut input = BufReader::with_capacity(1 << 20, f);
        let mut h = [0u8; HEADER_LEN];
        if len < HEADER_LEN as u64 {
            return Err(format_err(
                path,
                format!("file is {len} bytes, shorter than the header"),
            ));
        }
        input.read_exact(&mut h).map_err(|e| Error::io(path, e))?;
        if &h[0..4] != MAGIC {
            return Err(format_err(path, "bad magic, expected QTAG"));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let header_len = u16::from_le_bytes([h[6], h[7]]);
        if (header_len as usize) < HEADER_LEN || len < header_len as u64 {
            return Err(format_err(
                path,
                format!("invalid header length {header_len}"),
            ));
        }
        let extra = header_len as u64 - HEADER_LEN as u64;
        if extra > 0 {
            std::io::copy(&mut (&mut input).take(extra), &mut std::io::sink())
                .map_err(|e| Error::io(path, e))?;
        }
        let body = len - header_len as u64;
        if !body.is_multiple_of(RECORD_LEN as u64) {
            return Err(format_err(
                path,
                format!("record section of {body} bytes is not a multiple of {RECORD_LEN}"),
            ));
        }
        let header = QtagHeader {
            version,
            header_len,
            t_start_ps: u64::from_le_bytes(h[8..16].try_into().expect("8 bytes")),
            t_end_ps: u64::from_le_bytes(h[16..24].try_into().expect("8 bytes")),
        };
        Ok(QtagReader {
            path: path.to_path_buf(),
            input,
            header,
            remaining: body / RECORD_LEN as u64,
            last: None,
            peeked: None,
        })
    }

    pub fn remaining(&self) -> u64 {
        self.remaining + u64::from(self.peeked.is_some())
    }

    fn read_one(&mut self) -> Result<Option<TimeTagRecord>> {
        if let Some(r) = self.peeked.take() {
            return Ok(Some(r));
        }
        if self.remaining == 0 {
            return Ok(None);
        }
        let mut b = [0u8; RECORD_LEN];
        self.input
            .read_exact(&mut b)
            .map_err(|e| Error::io(&self.path, e))?;
        self.remaining -= 1;
        let r = TimeTagRecord {
            timestamp: u64::from_le_bytes(b[0..8].try_into().expect("8 bytes")),
            channel: u16::from_le_bytes([b[8], b[9]]),
            flags: u16::from_le_bytes([b[10], b[11]]),
        };
        if b[12..16] != [0; 4] {
            return Err(format_err(
                &self.path,
                format!("non-zero reserved field at {} ps", r.timestamp),
            ));
        }
        if self.last.is_some_and(|l| r.timestamp < l) {
            return Err(format_err(
                &self.path,
                format!("records out of order at {} ps", r.timestamp),
            ));
        }
        self.last = Some(r.timestamp);
        Ok(Some(r))
    }

    /// Appends every remaining record with timestamp `< end` to `out`.
    pub fn read_until(&mut self, end: u64, out: &mut Vec<TimeTagRecord>) -> Result<()> {
        while let Some(r) = self.read_one()? {
            if r.timestamp >= end {
                self.peeked = Some(r);
                break;
            }
            out.push(r);
        }
        Ok(())
    }

    pub fn read_all(mut self) -> Result<Vec<TimeTagRecord>> {
        let mut out = Vec::with_capacity(self.remaining as usize);
        self.read_until(u64::MAX, &mut out)?;
        if let Some(r) = self.peeked.take() {
            out.push(r);
        }
        Ok(out)
    }
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Sink writing a dataset directory. Files appear under their final names
/// only when the run finishes.
pub struct QtagDirSink {
    dir: PathBuf,
    blind: bool,
    writers: BTreeMap<ChannelId, QtagWriter>,
    written: Vec<PathBuf>,
}

impl QtagDirSink {
    pub fn new(dir: &Path, blind: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(QtagDirSink {
            dir: dir.to_path_buf(),
            blind,
            writers: BTreeMap::new(),
            written: Vec::new(),
        })
    }

    /// Final paths of the files written, channel files first.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

impl TagSink for QtagDirSink {
    fn begin(&mut self, meta: &RunMetadata) -> Result<()> {
        let header = QtagHeader::new(meta.t_start_ps, meta.t_end_ps);
        for (ch, _) in meta.channels.all() {
            let path = tmp_path(&self.dir.join(channel_file_name(ch)));
            self.writers
                .insert(ch, QtagWriter::create(&path, header, self.blind)?);
        }
        Ok(())
    }

    fn accept(&mut self, channel: ChannelId, tags: &[TimeTagRecord]) -> Result<()> {
        match self.writers.get_mut(&channel) {
            Some(w) => w.write(tags),
            None => Err(Error::invalid(format!(
                "channel {channel} is not in the channel map"
            ))),
        }
    }

    fn advance(&mut self, _marks: &[(ChannelId, u64)]) -> Result<()> {
        Ok(())
    }

    fn finish(&mut self, meta: &RunMetadata) -> Result<()> {
        for (ch, w) in std::mem::take(&mut self.writers) {
            w.finish()?;
            let fin = self.dir.join(channel_file_name(ch));
            fs::rename(tmp_path(&fin), &fin).map_err(|e| Error::io(&fin, e))?;
            self.written.push(fin);
        }
        let side = self.dir.join(SIDECAR);
        write_atomic(&side, meta.to_json_pretty().as_bytes())?;
        self.written.push(side);
        Ok(())
    }
}

/// Writes an in-memory dataset as a directory.
pub fn write_dataset(dataset: &TagDataset, dir: &Path, blind: bool) -> Result<Vec<PathBuf>> {
    let mut sink = QtagDirSink::new(dir, blind)?;
    dataset.replay(&mut sink, u64::MAX / 4)?;
    Ok(sink.written)
}

pub fn read_metadata(dir: &Path) -> Result<RunMetadata> {
    let side = dir.join(SIDECAR);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    RunMetadata::from_json_str(&text).map_err(|e| match e {
        Error::Config { path, message } => format_err(&side, format!("{path}: {message}")),
        other => other,
    })
}

fn open_channels(dir: &Path, meta: &RunMetadata) -> Result<Vec<(ChannelId, QtagReader)>> {
    meta.channels
        .all()
        .iter()
        .map(|(ch, _)| Ok((*ch, QtagReader::open(&dir.join(channel_file_name(*ch)))?)))
        .collect()
}

fn check_channel(path: &Path, want: ChannelId, recs: &[TimeTagRecord]) -> Result<()> {
    match recs.iter().find(|r| r.channel != want) {
        Some(r) => Err(format_err(
            path,
            format!(
                "record for channel {} in the file of channel {want}",
                r.channel
            ),
        )),
        None => Ok(()),
    }
}

/// Loads a dataset directory into memory.
pub fn read_dataset(dir: &Path) -> Result<TagDataset> {
    let metadata = read_metadata(dir)?;
    let mut streams = BTreeMap::new();
    for (ch, r) in open_channels(dir, &metadata)? {
        let path = r.path.clone();
        let recs = r.read_all()?;
        check_channel(&path, ch, &recs)?;
        let mut s = ChannelStream::default();
        s.timestamps.reserve(recs.len());
        s.flags.reserve(recs.len());
        for rec in &recs {
            s.push(rec);
        }
        streams.insert(ch, s);
    }
    Ok(TagDataset { metadata, streams })
}

/// Streams a dataset directory into `sink` in time blocks of `block_ps`
/// without loading it whole.
pub fn stream_dataset<S: TagSink + ?Sized>(
    dir: &Path,
    sink: &mut S,
    block_ps: u64,
) -> Result<RunMetadata> {
    let meta = read_metadata(dir)?;
    let mut readers = open_channels(dir, &meta)?;
    sink.begin(&meta)?;
    let block = block_ps.max(1);
    let mut end = meta.t_start_ps.saturating_add(block);
    let mut buf = Vec::new();
    let mut marks = Vec::with_capacity(readers.len());
    loop {
        marks.clear();
        let mut left = 0;
        for (ch, r) in readers.iter_mut() {
            buf.clear();
            r.read_until(end, &mut buf)?;
            check_channel(&r.path, *ch, &buf)?;
            if !buf.is_empty() {
                sink.accept(*ch, &buf)?;
            }
            marks.push((*ch, end));
            left += r.remaining();
        }
        sink.advance(&marks)?;
        if left == 0 || end == u64::MAX {
            break;
        }
        end = end.saturating_add(block);
    }
    let fin: Vec<(ChannelId, u64)> = readers.iter().map(|(c, _)| (*c, u64::MAX)).collect();
    sink.advance(&fin)?;
    sink.finish(&meta)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_record_layout_is_bit_exact() {
        let h = QtagHeader::new(0x0102030405060708, 9).encode();
        assert_eq!(&h[0..4], b"QTAG");
        assert_eq!(&h[4..8], &[1, 0, 32, 0]);
        assert_eq!(&h[8..16], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&h[16..24], &[9, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&h[24..32], &[0; 8]);
        let r = encode_record(&TimeTagRecord {
            timestamp: 258,
            channel: 3,
            flags: 1,
        });
        assert_eq!(r, [2, 1, 0, 0, 0, 0, 0, 0, 3, 0, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.qtag");
        let recs: Vec<TimeTagRecord> = (0..1000u64)
            .map(|i| TimeTagRecord {
                timestamp: i * 7,
                channel: 5,
                flags: (i % 2) as u16,
            })
            .collect();
        let mut w = QtagWriter::create(&p, QtagHeader::new(0, 7000), false).unwrap();
        w.write(&recs).unwrap();
        w.finish().unwrap();
        let r = QtagReader::open(&p).unwrap();
        assert_eq!(r.header, QtagHeader::new(0, 7000));
        assert_eq!(r.read_all().unwrap(), recs);

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(QtagReader::open(&p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(QtagReader::open(&p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[32..40].copy_from_slice(&100u64.to_le_bytes());
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            QtagReader::open(&p).unwrap().read_all(),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            QtagReader::open(&dir.path().join("none")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn blind_writer_clears_dark_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.qtag");
        let mut w = QtagWriter::create(&p, QtagHeader::new(0, 1), true).unwrap();
        w.write(&[TimeTagRecord {
            timestamp: 1,
            channel: 1,
            flags: FLAG_DARK | 4,
        }])
        .unwrap();
        w.finish().unwrap();
        assert_eq!(
            QtagReader::open(&p).unwrap().read_all().unwrap()[0].flags,
            4
        );
    }
}
