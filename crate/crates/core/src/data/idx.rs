//! IDX binary format (MNIST / Fashion-MNIST distribution files), with
//! transparent gzip detection.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

use super::Dataset;

/// A decoded IDX file: magic word, dimension sizes, and the raw unsigned
/// byte payload in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxPayload {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::data(format!(
            "idx: expected 4 bytes at offset {offset}, got {}",
            bytes.len().saturating_sub(offset)
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an (uncompressed) IDX byte image or label file. The magic word must
/// be `0x00000803` (3-dimensional unsigned bytes: images) or `0x00000801`
/// (1-dimensional unsigned bytes: labels); anything else is a data error
/// naming the offending bytes and offset.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxPayload> {
    let magic = read_u32(bytes, 0)?;
    let ndim = match magic {
        IDX_MAGIC_IMAGES => 3,
        IDX_MAGIC_LABELS => 1,
        other => {
            return Err(Error::data(format!(
                "idx: unsupported magic 0x{other:08x} at offset 0 \
                 (expected 0x00000803 for images or 0x00000801 for labels)"
            )))
        }
    };
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let got = bytes.len() - header;
    if got < expected {
        return Err(Error::data(format!(
            "idx: payload truncated at offset {}: expected {expected} bytes, got {got}",
            bytes.len()
        )));
    }
    if got > expected {
        return Err(Error::data(format!(
            "idx: {} trailing bytes after payload at offset {}",
            got - expected,
            header + expected
        )));
    }
    Ok(IdxPayload {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Read a file, transparently gunzipping when it starts with the gzip
/// signature `1f 8b`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Load an IDX image file: returns `(n, rows, cols, pixels)`.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let payload = parse_idx(&read_maybe_gz(path)?)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if payload.magic != IDX_MAGIC_IMAGES {
        return Err(Error::data(format!(
            "{}: expected image magic 0x{IDX_MAGIC_IMAGES:08x}, found label magic 0x{:08x}",
            path.display(),
            payload.magic
        )));
    }
    Ok((
        payload.dims[0],
        payload.dims[1],
        payload.dims[2],
        payload.data,
    ))
}

/// Load an IDX label file: returns one class byte per sample.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let payload = parse_idx(&read_maybe_gz(path)?)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if payload.magic != IDX_MAGIC_LABELS {
        return Err(Error::data(format!(
            "{}: expected label magic 0x{IDX_MAGIC_LABELS:08x}, found image magic 0x{:08x}",
            path.display(),
            payload.magic
        )));
    }
    Ok(payload.data)
}

fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::data(format!(
        "missing dataset file {stem}[.gz] under {}",
        dir.display()
    )))
}

/// Load the standard four-file MNIST/Fashion-MNIST layout from a directory
/// (plain or gzipped), returning `(train, test)` datasets with single-channel
/// images scaled to [0,1].
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let part = |images_stem: &str, labels_stem: &str| -> Result<Dataset> {
        let (n, h, w, pixels) = load_idx_images(&find_idx_file(dir, images_stem)?)?;
        let labels = load_idx_labels(&find_idx_file(dir, labels_stem)?)?;
        if labels.len() != n {
            return Err(Error::data(format!(
                "{images_stem}: {n} images but {} labels",
                labels.len()
            )));
        }
        Dataset::from_bytes(vec![n, h, w, 1], &pixels, labels)
    };
    Ok((
        part("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        part("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn image_fixture() -> Vec<u8> {
        // One 2x2 image: magic 0x803, dims [1,2,2], payload [0,128,255,64].
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        for d in [1u32, 2, 2] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(&[0, 128, 255, 64]);
        b
    }

    #[test]
    fn parses_image_fixture() {
        let p = parse_idx(&image_fixture()).unwrap();
        assert_eq!(p.magic, IDX_MAGIC_IMAGES);
        assert_eq!(p.dims, vec![1, 2, 2]);
        assert_eq!(p.data, vec![0, 128, 255, 64]);
    }

    #[test]
    fn parses_label_fixture() {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[5, 0, 9]);
        let p = parse_idx(&b).unwrap();
        assert_eq!(p.dims, vec![3]);
        assert_eq!(p.data, vec![5, 0, 9]);
    }

    #[test]
    fn bad_magic_names_offset() {
        let mut b = image_fixture();
        b[2] = 0x09;
        let err = parse_idx(&b).unwrap_err().to_string();
        assert!(err.contains("0x00000903"), "{err}");
        assert!(err.contains("offset 0"), "{err}");
    }

    #[test]
    fn truncation_reports_expected_and_got() {
        let b = image_fixture();
        let err = parse_idx(&b[..b.len() - 2]).unwrap_err().to_string();
        assert!(err.contains("expected 4 bytes, got 2"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = image_fixture();
        b.push(7);
        let err = parse_idx(&b).unwrap_err().to_string();
        assert!(err.contains("1 trailing bytes"), "{err}");
        assert!(err.contains("offset 20"), "{err}");
    }

    #[test]
    fn header_shorter_than_dims_is_an_error() {
        let b = 0x0000_0803u32.to_be_bytes();
        let err = parse_idx(&b).unwrap_err().to_string();
        assert!(err.contains("offset 4"), "{err}");
    }

    #[test]
    fn gzip_is_detected_by_signature() {
        let dir = std::env::temp_dir().join(format!("idx-gz-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("train-images-idx3-ubyte.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&image_fixture()).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        let (n, h, w, data) = load_idx_images(&path).unwrap();
        assert_eq!((n, h, w), (1, 2, 2));
        assert_eq!(data, vec![0, 128, 255, 64]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn label_magic_on_image_path_is_rejected() {
        let dir = std::env::temp_dir().join(format!("idx-magic-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels-as-images");
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&1u32.to_be_bytes());
        b.push(4);
        std::fs::write(&path, &b).unwrap();
        let err = load_idx_images(&path).unwrap_err().to_string();
        assert!(err.contains("label magic"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
