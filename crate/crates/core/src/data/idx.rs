use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    let truncated = |_| Error::Truncated(format!("{what} header"));
    let found = cur.read_u32::<BigEndian>().map_err(truncated)?;
    if found != magic {
        return Err(Error::Format(format!(
            "{what}: magic {found:#010x}, expected {magic:#010x}"
        )));
    }
    (0..dims)
        .map(|_| Ok(cur.read_u32::<BigEndian>().map_err(truncated)? as usize))
        .collect()
}

/// Decodes an unsigned-byte IDX image file `[n, rows, cols]` and its label
/// file into single-channel images scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], n_classes: usize) -> Result<Dataset> {
    let dims = header(images, IMAGES_MAGIC, 3, "idx images")?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let ldims = header(labels, LABELS_MAGIC, 1, "idx labels")?;
    if ldims[0] != n {
        return Err(Error::Data(format!(
            "{n} images but {} labels",
            ldims[0]
        )));
    }
    let body = &images[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "idx images: expected {} pixel bytes, found {}",
            n * rows * cols,
            body.len()
        )));
    }
    let lbody = &labels[8..];
    if lbody.len() != n {
        return Err(Error::Format(format!(
            "idx labels: expected {n} bytes, found {}",
            lbody.len()
        )));
    }
    let pixels = body.iter().map(|&b| f32::from(b) / 255.0).collect();
    let labels = lbody.iter().map(|&b| b as usize).collect();
    Dataset::new([1, rows, cols], n_classes, pixels, labels)
}

pub fn load_idx(images: &Path, labels: &Path, n_classes: usize) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))
    };
    parse_idx(&read(images)?, &read(labels)?, n_classes)
}
