//! CIFAR-10 binary-batch format: 3073-byte records, one label byte followed
//! by a 32x32 RGB image stored planar (all red, all green, all blue).

use std::path::Path;

use crate::error::{Error, Result};

use super::idx::read_maybe_gz;
use super::Dataset;

const RECORD: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

/// Parse one CIFAR-10 binary batch into a dataset of `[n,32,32,3]` images
/// (planar source layout converted to interleaved) with labels.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::data(format!(
            "cifar10: {} bytes is not a whole number of {RECORD}-byte records \
             ({} bytes over at offset {})",
            bytes.len(),
            bytes.len() % RECORD,
            bytes.len() - bytes.len() % RECORD
        )));
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = vec![0u8; n * PLANE * 3];
    for rec in 0..n {
        let at = rec * RECORD;
        let label = bytes[at];
        if label > 9 {
            return Err(Error::data(format!(
                "cifar10: label {label} out of range at offset {at}"
            )));
        }
        labels.push(label);
        let planes = &bytes[at + 1..at + RECORD];
        let dst = &mut pixels[rec * PLANE * 3..(rec + 1) * PLANE * 3];
        for p in 0..PLANE {
            for ch in 0..3 {
                dst[p * 3 + ch] = planes[ch * PLANE + p];
            }
        }
    }
    Dataset::from_bytes(vec![n, SIDE, SIDE, 3], &pixels, labels)
}

/// Serialize a `[n,32,32,3]` dataset back to CIFAR-10 binary records. Pixel
/// values are requantized as round(v*255); parsing the output of a parse is
/// byte-identical to the input.
pub fn serialize_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    if (ds.h(), ds.w(), ds.c()) != (SIDE, SIDE, 3) {
        return Err(Error::data(format!(
            "cifar10: cannot serialize images of shape [{},{},{}]",
            ds.h(),
            ds.w(),
            ds.c()
        )));
    }
    let mut out = Vec::with_capacity(ds.n() * RECORD);
    for i in 0..ds.n() {
        out.push(ds.class_labels()[i]);
        let img = ds.image(i);
        for ch in 0..3 {
            for p in 0..PLANE {
                out.push((img[p * 3 + ch] * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Load the standard CIFAR-10 binary layout from a directory:
/// `data_batch_1..5.bin` concatenated as train, `test_batch.bin` as test.
/// Files may be gzipped with a `.gz` suffix.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let read_batch = |stem: &str| -> Result<Vec<u8>> {
        for candidate in [
            dir.join(format!("{stem}.bin")),
            dir.join(format!("{stem}.bin.gz")),
            dir.join(stem),
        ] {
            if candidate.is_file() {
                return read_maybe_gz(&candidate);
            }
        }
        Err(Error::data(format!(
            "missing dataset file {stem}.bin[.gz] under {}",
            dir.display()
        )))
    };
    let mut train_bytes = Vec::new();
    for k in 1..=5 {
        train_bytes.extend_from_slice(&read_batch(&format!("data_batch_{k}"))?);
    }
    let train = parse_cifar10_bin(&train_bytes)?;
    let test = parse_cifar10_bin(&read_batch("test_batch")?)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, seed: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend((0..3 * PLANE).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)));
        rec
    }

    #[test]
    fn planar_source_becomes_interleaved() {
        let bytes = record(3, 1);
        let ds = parse_cifar10_bin(&bytes).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.class_labels(), &[3]);
        // Pixel 0: red = planes[0], green = planes[PLANE], blue = planes[2*PLANE].
        let img = ds.image(0);
        assert_eq!(img[0], bytes[1] as f32 / 255.0);
        assert_eq!(img[1], bytes[1 + PLANE] as f32 / 255.0);
        assert_eq!(img[2], bytes[1 + 2 * PLANE] as f32 / 255.0);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut bytes = record(0, 7);
        bytes.extend(record(9, 201));
        let ds = parse_cifar10_bin(&bytes).unwrap();
        assert_eq!(serialize_cifar10(&ds).unwrap(), bytes);
    }

    #[test]
    fn ragged_length_names_offset() {
        let mut bytes = record(1, 0);
        bytes.truncate(RECORD - 10);
        let err = parse_cifar10_bin(&bytes).unwrap_err().to_string();
        assert!(err.contains("3063 bytes over at offset 0"), "{err}");
    }

    #[test]
    fn out_of_range_label_rejected() {
        let bytes = record(10, 0);
        let err = parse_cifar10_bin(&bytes).unwrap_err().to_string();
        assert!(err.contains("label 10 out of range at offset 0"), "{err}");
    }
}
