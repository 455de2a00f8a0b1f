//! Dataset ingestion and assembly: IDX (MNIST/Fashion-MNIST) and CIFAR-10
//! binary parsers, the synthetic blobs-vs-rings generator, and the
//! one-vs-rest experiment protocol.

mod cifar;
mod idx;
mod protocol;
mod synthetic;

pub use cifar::{load_cifar10_dir, parse_cifar10_bin, serialize_cifar10};
pub use idx::{load_idx_images, load_idx_labels, load_mnist_dir, parse_idx, IdxPayload};
pub use protocol::{make_protocol, ProtocolSplit};
pub use synthetic::{make_synthetic, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An image collection: `[n,h,w,c]` pixels in [0,1], original class labels,
/// and per-sample binary roles (false = normal, true = abnormal). Roles are
/// all-normal until a protocol assigns them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    class_labels: Vec<u8>,
    roles: Vec<bool>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, class_labels: Vec<u8>, roles: Vec<bool>) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::data(format!(
                "dataset images must be [n,h,w,c], got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if class_labels.len() != n || roles.len() != n {
            return Err(Error::data(format!(
                "dataset arrays disagree: {} images, {} labels, {} roles",
                n,
                class_labels.len(),
                roles.len()
            )));
        }
        if !images.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::data("dataset pixel values outside [0,1]".to_string()));
        }
        Ok(Dataset {
            images,
            class_labels,
            roles,
        })
    }

    /// Construct from raw bytes (normalized as value/255).
    pub fn from_bytes(shape_nhwc: Vec<usize>, bytes: &[u8], class_labels: Vec<u8>) -> Result<Self> {
        let images = Tensor::new(shape_nhwc, bytes.iter().map(|&b| b as f32 / 255.0).collect())
            .map_err(|e| Error::data(format!("image payload: {e}")))?;
        let n = images.shape()[0];
        Dataset::new(images, class_labels, vec![false; n])
    }

    pub fn n(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn c(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn class_labels(&self) -> &[u8] {
        &self.class_labels
    }

    pub fn roles(&self) -> &[bool] {
        &self.roles
    }

    /// Pixels of sample `i` as a flat `[h*w*c]` slice.
    pub fn image(&self, i: usize) -> &[f32] {
        let stride = self.h() * self.w() * self.c();
        &self.images.as_slice()[i * stride..(i + 1) * stride]
    }

    /// Sample `i` as an `[h,w,c]` tensor (for the similarity metrics).
    pub fn image_tensor(&self, i: usize) -> Tensor<f32> {
        Tensor::new(vec![self.h(), self.w(), self.c()], self.image(i).to_vec())
            .expect("slice length matches shape")
    }

    /// Gather a sub-dataset by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let stride = self.h() * self.w() * self.c();
        let mut values = Vec::with_capacity(idx.len() * stride);
        let mut labels = Vec::with_capacity(idx.len());
        let mut roles = Vec::with_capacity(idx.len());
        for &i in idx {
            values.extend_from_slice(self.image(i));
            labels.push(self.class_labels[i]);
            roles.push(self.roles[i]);
        }
        Dataset {
            images: Tensor::new(vec![idx.len(), self.h(), self.w(), self.c()], values)
                .expect("gathered length matches shape"),
            class_labels: labels,
            roles,
        }
    }

    /// Gather samples into a channel-first `[B,c,h,w]` batch for the networks.
    pub fn batch_nchw(&self, idx: &[usize]) -> Tensor<f32> {
        let (h, w, c) = (self.h(), self.w(), self.c());
        let mut values = vec![0.0f32; idx.len() * c * h * w];
        for (bi, &i) in idx.iter().enumerate() {
            let src = self.image(i);
            let dst = &mut values[bi * c * h * w..(bi + 1) * c * h * w];
            for ch in 0..c {
                for r in 0..h {
                    for col in 0..w {
                        dst[ch * h * w + r * w + col] = src[(r * w + col) * c + ch];
                    }
                }
            }
        }
        Tensor::new(vec![idx.len(), c, h, w], values).expect("batch length matches shape")
    }

    /// Replace the roles (used by protocol assembly).
    pub fn with_roles(mut self, roles: Vec<bool>) -> Result<Self> {
        if roles.len() != self.n() {
            return Err(Error::data(format!(
                "roles length {} does not match dataset size {}",
                roles.len(),
                self.n()
            )));
        }
        self.roles = roles;
        Ok(self)
    }

    /// Concatenate two datasets with identical image geometry.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.images.shape()[1..] != other.images.shape()[1..] {
            return Err(Error::data(format!(
                "cannot concatenate datasets of shapes {:?} and {:?}",
                self.images.shape(),
                other.images.shape()
            )));
        }
        let mut values = self.images.as_slice().to_vec();
        values.extend_from_slice(other.images.as_slice());
        let mut labels = self.class_labels.clone();
        labels.extend_from_slice(&other.class_labels);
        let mut roles = self.roles.clone();
        roles.extend_from_slice(&other.roles);
        Ok(Dataset {
            images: Tensor::new(
                vec![self.n() + other.n(), self.h(), self.w(), self.c()],
                values,
            )
            .expect("concatenated length matches shape"),
            class_labels: labels,
            roles,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let bytes: Vec<u8> = (0..2 * 2 * 2).map(|i| (i * 30) as u8).collect();
        Dataset::from_bytes(vec![2, 2, 2, 1], &bytes, vec![3, 7]).unwrap()
    }

    #[test]
    fn normalization_is_exactly_over_255() {
        let d = tiny();
        assert_eq!(d.image(0)[1], 30.0 / 255.0);
        assert_eq!(d.image(1)[3], 210.0 / 255.0);
    }

    #[test]
    fn select_gathers_rows_in_order() {
        let d = tiny();
        let s = d.select(&[1, 0]);
        assert_eq!(s.class_labels(), &[7, 3]);
        assert_eq!(s.image(0), d.image(1));
    }

    #[test]
    fn batch_nchw_transposes_channels() {
        // Two channels: even positions channel 0, odd positions channel 1.
        let bytes: Vec<u8> = (0..8).collect();
        let d = Dataset::from_bytes(vec![1, 2, 2, 2], &bytes, vec![0]).unwrap();
        let b = d.batch_nchw(&[0]);
        assert_eq!(b.shape(), &[1, 2, 2, 2]);
        let v: Vec<f32> = [0u8, 2, 4, 6, 1, 3, 5, 7].iter().map(|&x| x as f32 / 255.0).collect();
        assert_eq!(b.as_slice(), &v[..]);
    }

    #[test]
    fn mismatched_arrays_rejected() {
        let bytes = vec![0u8; 8];
        assert!(Dataset::from_bytes(vec![2, 2, 2, 1], &bytes, vec![1]).is_err());
    }
}
