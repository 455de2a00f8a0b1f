//! Synthetic blobs-vs-rings benchmark. Both classes are anisotropic Gaussian
//! blobs (random position, scale, eccentricity, orientation, brightness)
//! whose center may be suppressed by a matched, narrower Gaussian hole.
//! Normal samples have at most a shallow central dip; abnormal samples have a
//! deep hole, leaving a bright rim — a soft ring/annulus. Hole depth is the
//! class signal, and the normal class's own depth spread (plus eccentricity
//! and scale extremes) gives it deliberate internal structure: clean filled
//! blobs are plentiful, dimple-centered ones are a minority that already leans
//! toward the ring class.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, ProtocolSplit};

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    BlobsVsRings,
}

/// Additive pixel noise, standard deviation.
const NOISE_SIGMA: f64 = 0.05;

/// Shared shape parameters (all lengths relative to image side).
const BLOB_CENTER: (f64, f64) = (0.36, 0.64);
const BLOB_SIGMA: (f64, f64) = (0.20, 0.24);
const BLOB_ECC: (f64, f64) = (0.60, 1.0);
const BLOB_PEAK: (f64, f64) = (0.80, 1.00);
/// Rings are rendered slightly brighter. Holes are energy-preserving (the
/// removed center mass comes back as rim gain), so within each class total
/// brightness is independent of hole depth; the ring/blob mean-intensity gap
/// comes solely from this peak scaling.
const RING_PEAK: (f64, f64) = (0.93, 1.16);

/// Width of the central hole relative to the blob's own width. Ring holes
/// are wider, thinning the rim.
const BLOB_HOLE_SCALE: f64 = 0.65;
const RING_HOLE_SCALE: f64 = 0.85;

/// Hole-depth ranges: normals are filled to lightly dimpled, abnormals are
/// rings. The gap between the ranges is what a detector must generalize
/// across; the normal range's upper tail is what intra-class splitting finds.
const NORMAL_HOLE: (f64, f64) = (0.0, 0.68);
const ABNORMAL_HOLE: (f64, f64) = (0.82, 1.0);

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..range.1)
}

/// Render one blob with a center hole of the given depth range. Both classes
/// draw the same nuisance parameters in the same order; only the hole range
/// differs, so total-intensity statistics overlap heavily across classes.
fn render_shape(
    size: usize,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    peak_range: (f64, f64),
    hole_range: (f64, f64),
    hole_scale: f64,
) -> Vec<f32> {
    let s = size as f64;
    let cx = uniform(rng, BLOB_CENTER) * s;
    let cy = uniform(rng, BLOB_CENTER) * s;
    let sigma_a = uniform(rng, BLOB_SIGMA) * s;
    let sigma_b = sigma_a * uniform(rng, BLOB_ECC);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let peak = uniform(rng, peak_range);
    let hole = uniform(rng, hole_range);
    let (sin_t, cos_t) = theta.sin_cos();
    // exp(-q/2) is the blob; the hole subtracts the same shape narrowed by
    // HOLE_SCALE, so exponent (1+k^2)/(2k^2) in q. The subtracted mass is a
    // k^2/(1+k^2) fraction of the blob's, and the gain returns it to the rim
    // so that total image energy does not encode hole depth.
    let k2 = hole_scale * hole_scale;
    let hole_exp = (1.0 + k2) / (2.0 * k2);
    let gain = 1.0 / (1.0 - hole * k2 / (1.0 + k2));
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let q = (u / sigma_a).powi(2) + (v / sigma_b).powi(2);
            let val = peak * gain * ((-0.5 * q).exp() - hole * (-hole_exp * q).exp())
                + noise.sample(rng);
            out.push(val.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Generate a synthetic one-vs-rest benchmark: `n_train` normal blobs for
/// training, and a test set of `n_test_normal` blobs followed by
/// `n_test_abnormal` rings (roles mark the rings). Class labels are 0 for
/// blobs, 1 for rings. Deterministic per seed.
pub fn make_synthetic(
    kind: SyntheticKind,
    n_train: usize,
    n_test_normal: usize,
    n_test_abnormal: usize,
    image_size: usize,
    seed: u64,
) -> Result<ProtocolSplit> {
    let SyntheticKind::BlobsVsRings = kind;
    if image_size < 8 {
        return Err(Error::config(format!(
            "synthetic image size must be at least 8, got {image_size}"
        )));
    }
    if n_train == 0 || n_test_normal == 0 || n_test_abnormal == 0 {
        return Err(Error::config(
            "synthetic sample counts must all be positive".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let mut render_many = |n: usize, ring: bool| -> Vec<f32> {
        let (peaks, holes, scale) = if ring {
            (RING_PEAK, ABNORMAL_HOLE, RING_HOLE_SCALE)
        } else {
            (BLOB_PEAK, NORMAL_HOLE, BLOB_HOLE_SCALE)
        };
        let mut values = Vec::with_capacity(n * image_size * image_size);
        for _ in 0..n {
            values.extend_from_slice(&render_shape(
                image_size, &mut rng, &noise, peaks, holes, scale,
            ));
        }
        values
    };

    let train_values = render_many(n_train, false);
    let test_normal_values = render_many(n_test_normal, false);
    let test_ring_values = render_many(n_test_abnormal, true);

    let train = Dataset::new(
        Tensor::new(vec![n_train, image_size, image_size, 1], train_values)?,
        vec![0; n_train],
        vec![false; n_train],
    )?;
    let mut test_values = test_normal_values;
    test_values.extend_from_slice(&test_ring_values);
    let mut labels = vec![0u8; n_test_normal];
    labels.extend(std::iter::repeat_n(1u8, n_test_abnormal));
    let mut roles = vec![false; n_test_normal];
    roles.extend(std::iter::repeat_n(true, n_test_abnormal));
    let test = Dataset::new(
        Tensor::new(
            vec![
                n_test_normal + n_test_abnormal,
                image_size,
                image_size,
                1,
            ],
            test_values,
        )?,
        labels,
        roles,
    )?;
    Ok(ProtocolSplit { train, test })
}
