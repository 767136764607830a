//! Binary record files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "DDX1" | u32 version=1 | u32 num_records | u32 channels
//! | u32 num_classes | u8 label_arity (1 = class index, 2 = multi-label)
//! per record:
//!   u32 id_len | UTF-8 id | u32 T
//!   | label: u32 class (arity 1) or num_classes bytes of {0,1} (arity 2)
//!   | C*T float32 samples, channel-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{Dataset, Label, SeriesRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DDX1";
const VERSION: u32 = 1;

/// Writes the dataset; `load_binary(write_binary(d)) == d` bit-exactly.
pub fn write_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    let arity = if dataset.is_multi_label() { 2u8 } else { 1u8 };
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dataset.records.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dataset.channels() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dataset.num_classes as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&[arity]).map_err(io_err)?;
    for r in &dataset.records {
        let id = r.record_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(id).map_err(io_err)?;
        w.write_all(&(r.len() as u32).to_le_bytes()).map_err(io_err)?;
        match &r.label {
            Label::Class(c) => w.write_all(&(*c as u32).to_le_bytes()).map_err(io_err)?,
            Label::Multi(bits) => w.write_all(bits).map_err(io_err)?,
        }
        for &v in r.samples.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Loads and validates a binary record file.
pub fn load_binary(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };

    let magic = r.bytes_array::<4>()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:02x?}, expected \"DDX1\"",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let num_records = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let arity = r.u8()?;
    if arity != 1 && arity != 2 {
        return Err(Error::Format(format!(
            "{}: label arity must be 1 or 2, got {arity}",
            path.display()
        )));
    }
    if num_records == 0 || channels == 0 || num_classes == 0 {
        return Err(Error::Format(format!(
            "{}: empty header field (records {num_records}, channels {channels}, classes {num_classes})",
            path.display()
        )));
    }

    let mut records = Vec::with_capacity(num_records);
    for i in 0..num_records {
        let id_len = r.u32()? as usize;
        let id = String::from_utf8(r.bytes_vec(id_len)?).map_err(|_| {
            Error::Format(format!("{}: record {i} id is not UTF-8", path.display()))
        })?;
        let t = r.u32()? as usize;
        if t == 0 {
            return Err(Error::Format(format!(
                "{}: record `{id}` has zero length",
                path.display()
            )));
        }
        let label = if arity == 1 {
            let c = r.u32()? as usize;
            if c >= num_classes {
                return Err(Error::Schema(format!(
                    "record `{id}` has class {c}, file declares {num_classes} classes"
                )));
            }
            Label::Class(c)
        } else {
            let bits = r.bytes_vec(num_classes)?;
            if bits.iter().any(|&b| b > 1) {
                return Err(Error::Format(format!(
                    "{}: record `{id}` has a label byte outside {{0,1}}",
                    path.display()
                )));
            }
            Label::Multi(bits)
        };
        let mut data = vec![0f32; channels * t];
        for v in &mut data {
            *v = f32::from_le_bytes(r.bytes_array::<4>()?);
        }
        records.push(SeriesRecord {
            record_id: id,
            samples: Tensor::from_vec(&[channels, t], data)?,
            label,
        });
    }
    // Trailing bytes indicate a corrupted or mislabeled file.
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format(format!(
                "{}: trailing bytes after the last record",
                path.display()
            )))
        }
        Err(e) => return Err(Error::io(path, e)),
    }
    Dataset::new(records, num_classes)
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes_array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn bytes_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes_array::<4>()?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes_array::<1>()?[0])
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Length(format!(
                    "{}: file ends before the declared payload",
                    self.path.display()
                ))
            } else {
                Error::io(self.path, e)
            }
        })
    }
}
