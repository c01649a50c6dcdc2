use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};

/// Records per canonical batch file (five train batches, one test batch for
/// the 10-class set; one 50000-record train file for the 100-class set).
pub const CIFAR_BATCH_RECORDS: usize = 10_000;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    /// 100 fine classes; the coarse label byte is carried but unused.
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn files(self) -> (Vec<&'static str>, &'static str, &'static str) {
        match self {
            CifarVariant::Cifar10 => (
                vec![
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ],
                "test_batch.bin",
                "cifar-10-batches-bin",
            ),
            CifarVariant::Cifar100 => (vec!["train.bin"], "test.bin", "cifar-100-binary"),
        }
    }
}

/// Decodes concatenated binary records: label byte(s), then 3072 pixel
/// bytes in R, G, B planes, each row-major. Pixels are scaled by 1/255.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<Dataset> {
    let rec = variant.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "expected a multiple of {rec} bytes, got {} ({} bytes past the last whole record)",
            bytes.len(),
            bytes.len() % rec
        )));
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let fine = r[variant.label_bytes() - 1] as usize;
        if fine >= variant.n_classes() {
            return Err(Error::Data(format!(
                "record {i}: label {fine} out of range for {} classes",
                variant.n_classes()
            )));
        }
        if variant == CifarVariant::Cifar100 {
            coarse.push(r[0]);
        }
        labels.push(fine);
        pixels.extend(r[variant.label_bytes()..].iter().map(|&b| f32::from(b) / 255.0));
    }
    let ds = Dataset::new([3, 32, 32], variant.n_classes(), pixels, labels)?;
    Ok(match variant {
        CifarVariant::Cifar10 => ds,
        CifarVariant::Cifar100 => ds.with_coarse(coarse),
    })
}

/// Inverse of [`parse_cifar`]. Pixels are rounded back to bytes; a
/// missing coarse label is written as 0.
pub fn encode_cifar(ds: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if ds.image_shape() != [3, 32, 32] {
        return Err(Error::Shape(format!(
            "records hold 3x32x32 images, dataset has {:?}",
            ds.image_shape()
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(ds.coarse().map_or(0, |c| c[i]));
        }
        out.push(ds.label(i) as u8);
        out.extend(
            ds.image(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

fn read_batch(path: &Path, variant: CifarVariant, records: usize) -> Result<Dataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let expected = records * variant.record_len();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    parse_cifar(&bytes, variant)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let first = &parts[0];
    let (shape, n_classes) = (first.image_shape(), first.n_classes);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut coarse = Vec::new();
    for p in &parts {
        for i in 0..p.len() {
            pixels.extend_from_slice(p.image(i));
            labels.push(p.label(i));
        }
        if let Some(c) = p.coarse() {
            coarse.extend_from_slice(c);
        }
    }
    let ds = Dataset::new(shape, n_classes, pixels, labels)?;
    Ok(if coarse.is_empty() {
        ds
    } else {
        ds.with_coarse(coarse)
    })
}

/// Loads the canonical train and test files from `dir` (or from the
/// archive's own subdirectory inside `dir`).
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let (train_files, test_file, subdir) = variant.files();
    let root: PathBuf = if dir.join(test_file).exists() {
        dir.to_path_buf()
    } else {
        dir.join(subdir)
    };
    let train_records = 50_000 / train_files.len();
    let train = train_files
        .iter()
        .map(|f| read_batch(&root.join(f), variant, train_records))
        .collect::<Result<Vec<_>>>()?;
    let test = read_batch(&root.join(test_file), variant, CIFAR_BATCH_RECORDS)?;
    Ok((concat(train)?, test))
}
