//! Intra-class splitting: train an autoencoder on the normal class, score
//! every training sample by the structural similarity between the sample and
//! its reconstruction, and partition the lowest-similarity rho percent off as
//! the atypical subset.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{derive_seed, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{ssim, SsimParams};
use crate::nn::{build_autoencoder, init_params, Network};
use crate::optim::{Adam, AdamState};
use crate::tensor::Tensor;

/// A typical/atypical partition of a training set, with the similarity
/// scores that produced it (aligned with dataset order).
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub scores: Vec<f64>,
    pub typical_idx: Vec<usize>,
    pub atypical_idx: Vec<usize>,
    pub rho: f64,
}

impl SplitResult {
    /// CSV export: `index,ssim_score,subset`.
    pub fn to_csv(&self) -> String {
        let mut atypical = vec![false; self.scores.len()];
        for &i in &self.atypical_idx {
            atypical[i] = true;
        }
        let mut out = String::from("index,ssim_score,subset\n");
        for (i, score) in self.scores.iter().enumerate() {
            out.push_str(&format!(
                "{i},{score},{}\n",
                if atypical[i] { "atypical" } else { "typical" }
            ));
        }
        out
    }
}

/// Deepest downsampling depth (at most 3 halvings) that divides both spatial
/// dims; images whose sides are not even are rejected.
pub fn ae_stages_for(h: usize, w: usize) -> Result<usize> {
    for stages in (1..=3usize).rev() {
        let f = 1usize << stages;
        if h.is_multiple_of(f) && w.is_multiple_of(f) && h / f >= 2 && w / f >= 2 {
            return Ok(stages);
        }
    }
    Err(Error::config(format!(
        "image size {h}x{w} does not support stride-2 downsampling"
    )))
}

/// Train the splitting autoencoder on a normals-only dataset by minimizing
/// reconstruction MSE for `config.ae_iterations` mini-batches. Deterministic
/// given `seed`.
pub fn train_split_autoencoder(
    data: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Network<f32>> {
    if data.n() == 0 {
        return Err(Error::data("cannot train autoencoder on empty dataset".to_string()));
    }
    let input_shape = vec![data.c(), data.h(), data.w()];
    let stages = ae_stages_for(data.h(), data.w())?;
    let mut net = build_autoencoder::<f32>(&input_shape, config.code_dim, stages, config.ae_width)?;
    init_params(&mut net, derive_seed("split-ae-init", seed));

    let adam = Adam::<f32>::new(config.ae_lr, config.l2_decay);
    let mut state = AdamState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("split-ae-batch", seed));
    let batch = config.batch.min(data.n());

    for _ in 0..config.ae_iterations {
        let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..data.n())).collect();
        let mut g = Graph::new();
        let x = g.constant(data.batch_nchw(&idx));
        let pass = net.forward(&mut g, x, true)?;
        let diff = g.sub(pass.output(), x)?;
        let sq = g.square(diff)?;
        let loss = g.mean_all(sq)?;
        g.backward(loss)?;
        let grads: Vec<Option<Tensor<f32>>> = pass.params.iter().map(|&id| g.grad(id)).collect();
        adam.step(net.params_mut(), &grads, &mut state)?;
    }
    Ok(net)
}

/// Run the autoencoder over the whole dataset (in batches) and return each
/// sample's reconstruction as an `[h,w,c]` tensor.
fn reconstruct_all(data: &Dataset, ae: &Network<f32>, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let (h, w, c) = (data.h(), data.w(), data.c());
    let mut out = Vec::with_capacity(data.n());
    let all: Vec<usize> = (0..data.n()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(data.batch_nchw(chunk));
        let pass = ae.forward(&mut g, x, false)?;
        let recon = g.value(pass.output());
        for bi in 0..chunk.len() {
            let src = &recon.as_slice()[bi * c * h * w..(bi + 1) * c * h * w];
            let mut hwc = vec![0.0f32; h * w * c];
            for ch in 0..c {
                for r in 0..h {
                    for col in 0..w {
                        hwc[(r * w + col) * c + ch] = src[ch * h * w + r * w + col];
                    }
                }
            }
            out.push(Tensor::new(vec![h, w, c], hwc)?);
        }
    }
    Ok(out)
}

/// SSIM between every sample and its reconstruction, in dataset order.
pub fn reconstruction_similarity(data: &Dataset, ae: &Network<f32>) -> Result<Vec<f64>> {
    let recons = reconstruct_all(data, ae, 256)?;
    let p = SsimParams::default();
    (0..data.n())
        .into_par_iter()
        .map(|i| ssim(&data.image_tensor(i), &recons[i], &p))
        .collect()
}

/// Rank scores ascending (ties broken by lower index first) and cut off
/// floor(rho*n/100) samples as atypical. The atypical subset is empty
/// whenever rho*n < 100; training rejects splits with an empty subset, but
/// the partition itself is well-defined.
fn rank_split(scores: &[f64], rho: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(rho > 0.0 && rho < 100.0) {
        return Err(Error::config(format!("rho must be in (0,100), got {rho}")));
    }
    let n = scores.len();
    let k = (rho * n as f64 / 100.0).floor() as usize;
    if k >= n {
        return Err(Error::config(format!(
            "rho={rho} on {n} samples leaves no typical subset"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("similarity scores are finite")
            .then(a.cmp(&b))
    });
    let mut atypical: Vec<usize> = order[..k].to_vec();
    let mut typical: Vec<usize> = order[k..].to_vec();
    atypical.sort_unstable();
    typical.sort_unstable();
    Ok((typical, atypical))
}

/// Score `data` under `ae` and split off the lowest-similarity `rho` percent
/// as atypical. Pure given its inputs: rerunning yields the identical
/// partition.
pub fn split(data: &Dataset, ae: &Network<f32>, rho: f64) -> Result<SplitResult> {
    let scores = reconstruction_similarity(data, ae)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "split_scores" });
    }
    let (typical_idx, atypical_idx) = rank_split(&scores, rho)?;
    Ok(SplitResult {
        scores,
        typical_idx,
        atypical_idx,
        rho,
    })
}

/// Reconstruction-error abnormality baseline: 1 − SSIM(x, x̂) per sample
/// (higher = more abnormal).
pub fn recon_error_score(data: &Dataset, ae: &Network<f32>) -> Result<Vec<f64>> {
    Ok(reconstruction_similarity(data, ae)?
        .into_iter()
        .map(|s| 1.0 - s)
        .collect())
}
