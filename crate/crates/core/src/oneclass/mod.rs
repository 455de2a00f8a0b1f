//! The one-class classifier: a convolutional backbone producing a latent
//! representation z and an abnormality head ŷ, plus a distance subnetwork
//! D(z_i, z_j) trained on latent differences. Training alternates three
//! objectives per iteration: pull typical pairs together (closeness), tell
//! typical from atypical apart (intra-class BCE), and push atypical pairs
//! apart (dispersion).

mod persist;

pub use persist::{load_checkpoint, save_checkpoint};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ExperimentConfig, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{
    backbone_latent_layer, build_backbone, build_distance_net, init_params, Network,
};
use crate::optim::{Adam, AdamState};
use crate::scalar::Scalar;
use crate::split::SplitResult;
use crate::tensor::Tensor;

/// Clamp bound keeping the loss logarithms finite.
const LOG_EPS: f64 = 1e-7;

/// Backbone + distance subnetwork.
#[derive(Debug, Clone)]
pub struct OneClassModel {
    pub backbone: Network<f32>,
    pub distance_net: Network<f32>,
}

impl OneClassModel {
    pub fn new(input_shape: &[usize], latent_dim: usize, base_width: usize) -> Result<Self> {
        Ok(OneClassModel {
            backbone: build_backbone(input_shape, latent_dim, base_width)?,
            distance_net: build_distance_net(latent_dim)?,
        })
    }

    /// Seed both subnetworks' parameters (independent streams).
    pub fn init(&mut self, seed: u64) {
        init_params(&mut self.backbone, derive_seed("oneclass-backbone-init", seed));
        init_params(&mut self.distance_net, derive_seed("oneclass-distance-init", seed));
    }

    /// Abnormality scores ŷ = f(x) for every sample, in dataset order.
    /// Stateless; per-sample results are independent of batching.
    pub fn score(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.n());
        let all: Vec<usize> = (0..data.n()).collect();
        for chunk in all.chunks(256) {
            let mut g = Graph::new();
            let x = g.constant(data.batch_nchw(chunk));
            let pass = self.backbone.forward(&mut g, x, false)?;
            out.extend(g.value(pass.output()).as_slice().iter().map(|&v| v as f64));
        }
        Ok(out)
    }
}

/// Everything that evolves during training; saving and restoring this (plus
/// the model) reproduces an uninterrupted run bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub iteration: u64,
    pub opt_backbone: AdamState<f32>,
    pub opt_distance: AdamState<f32>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &OneClassModel, seed: u64) -> Self {
        TrainState {
            iteration: 0,
            opt_backbone: AdamState::new(model.backbone.params()),
            opt_distance: AdamState::new(model.distance_net.params()),
            rng: ChaCha8Rng::seed_from_u64(derive_seed("train-batch", seed)),
        }
    }
}

/// Pair up a batch of size `b` as (σ(k), σ(k+1 mod b)) for a random
/// permutation σ: exactly `b` pairs, never self-paired.
pub fn pair_indices(b: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if b < 2 {
        return Err(Error::config(format!(
            "pairing needs a batch of at least 2, got {b}"
        )));
    }
    let mut perm: Vec<usize> = (0..b).collect();
    for i in 0..b - 1 {
        let j = rng.gen_range(i..b);
        perm.swap(i, j);
    }
    Ok((0..b).map(|k| (perm[k], perm[(k + 1) % b])).collect())
}

/// Gather z_i − z_j rows for each pair, expressed as two constant
/// permutation-matrix products so gradients flow back into z.
pub fn pair_difference<S: Scalar>(
    g: &mut Graph<S>,
    z: NodeId,
    pairs: &[(usize, usize)],
) -> Result<NodeId> {
    let b = g.value(z).shape()[0];
    let mut pi = Tensor::zeros(vec![pairs.len(), b]);
    let mut pj = Tensor::zeros(vec![pairs.len(), b]);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        if i >= b || j >= b {
            return Err(Error::config(format!(
                "pair ({i},{j}) out of range for batch {b}"
            )));
        }
        pi.as_mut_slice()[row * b + i] = S::one();
        pj.as_mut_slice()[row * b + j] = S::one();
    }
    let pi = g.constant(pi);
    let pj = g.constant(pj);
    let zi = g.matmul(pi, z)?;
    let zj = g.matmul(pj, z)?;
    g.sub(zi, zj)
}

fn clamp_unit<S: Scalar>(g: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
    let eps = S::from_f64(LOG_EPS);
    g.clamp(x, eps, S::one() - eps)
}

/// Closeness loss: −(1/B) Σ log(1 − D) over typical pairs; 0 exactly when
/// every pair distance is 0.
pub fn closeness_loss<S: Scalar>(g: &mut Graph<S>, d: NodeId) -> Result<NodeId> {
    let dc = clamp_unit(g, d)?;
    let one = g.constant(Tensor::full(g.value(dc).shape().to_vec(), S::one()));
    let om = g.sub(one, dc)?;
    let lg = g.log(om)?;
    let mean = g.mean_all(lg)?;
    let neg = g.constant(Tensor::scalar(-S::one()));
    g.mul(mean, neg)
}

/// Dispersion loss: −(1/B) Σ log D over atypical pairs; 0 exactly when every
/// pair distance is 1.
pub fn dispersion_loss<S: Scalar>(g: &mut Graph<S>, d: NodeId) -> Result<NodeId> {
    let dc = clamp_unit(g, d)?;
    let lg = g.log(dc)?;
    let mean = g.mean_all(lg)?;
    let neg = g.constant(Tensor::scalar(-S::one()));
    g.mul(mean, neg)
}

/// Intra-class loss: binary cross-entropy of ŷ against labels y (0 typical,
/// 1 atypical), averaged over the batch.
pub fn intra_class_loss<S: Scalar>(g: &mut Graph<S>, y: NodeId, y_hat: NodeId) -> Result<NodeId> {
    let yc = clamp_unit(g, y_hat)?;
    let shape = g.value(yc).shape().to_vec();
    let one = g.constant(Tensor::full(shape, S::one()));
    let log_p = g.log(yc)?;
    let om = g.sub(one, yc)?;
    let log_q = g.log(om)?;
    let oy = g.sub(one, y)?;
    let pos = g.mul(y, log_p)?;
    let neg_term = g.mul(oy, log_q)?;
    let sum = g.add(pos, neg_term)?;
    let mean = g.mean_all(sum)?;
    let neg = g.constant(Tensor::scalar(-S::one()));
    g.mul(mean, neg)
}

#[derive(Clone, Copy)]
enum PairLoss {
    Closeness,
    Dispersion,
}

/// One optimizer step of a pair loss (closeness or dispersion): batch →
/// backbone → z → paired differences → distance net → loss; updates backbone
/// and distance parameters jointly.
#[allow(clippy::too_many_arguments)]
fn step_pair(
    model: &mut OneClassModel,
    data: &Dataset,
    idx: &[usize],
    pairs: &[(usize, usize)],
    which: PairLoss,
    adam: &Adam<f32>,
    opt_backbone: &mut AdamState<f32>,
    opt_distance: &mut AdamState<f32>,
) -> Result<()> {
    let mut g = Graph::new();
    let x = g.constant(data.batch_nchw(idx));
    let pass = model.backbone.forward(&mut g, x, true)?;
    let z = pass.outputs[backbone_latent_layer(&model.backbone)];
    let dz = pair_difference(&mut g, z, pairs)?;
    let dpass = model.distance_net.forward(&mut g, dz, true)?;
    let loss = match which {
        PairLoss::Closeness => closeness_loss(&mut g, dpass.output())?,
        PairLoss::Dispersion => dispersion_loss(&mut g, dpass.output())?,
    };
    g.backward(loss)?;
    let gb: Vec<Option<Tensor<f32>>> = pass.params.iter().map(|&p| g.grad(p)).collect();
    let gd: Vec<Option<Tensor<f32>>> = dpass.params.iter().map(|&p| g.grad(p)).collect();
    adam.step(model.backbone.params_mut(), &gb, opt_backbone)?;
    adam.step(model.distance_net.params_mut(), &gd, opt_distance)?;
    Ok(())
}

/// One optimizer step of the intra-class BCE on a labeled batch; the distance
/// subnetwork is not on ŷ's path, so only the backbone (and head) update.
fn step_bce(
    model: &mut OneClassModel,
    data: &Dataset,
    idx: &[usize],
    labels: &[f32],
    adam: &Adam<f32>,
    opt_backbone: &mut AdamState<f32>,
) -> Result<()> {
    let mut g = Graph::new();
    let x = g.constant(data.batch_nchw(idx));
    let pass = model.backbone.forward(&mut g, x, true)?;
    let y = g.constant(Tensor::new(vec![labels.len(), 1], labels.to_vec())?);
    let loss = intra_class_loss(&mut g, y, pass.output())?;
    g.backward(loss)?;
    let gb: Vec<Option<Tensor<f32>>> = pass.params.iter().map(|&p| g.grad(p)).collect();
    adam.step(model.backbone.params_mut(), &gb, opt_backbone)?;
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, pool: &[usize], b: usize) -> Vec<usize> {
    (0..b).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// Half-typical/half-atypical batch (with replacement) and its labels.
fn mixed_batch(
    rng: &mut ChaCha8Rng,
    split: &SplitResult,
    b: usize,
) -> (Vec<usize>, Vec<f32>) {
    let n_typ = b / 2;
    let n_aty = b - n_typ;
    let mut idx = draw(rng, &split.typical_idx, n_typ);
    idx.extend(draw(rng, &split.atypical_idx, n_aty));
    let mut labels = vec![0.0f32; n_typ];
    labels.extend(std::iter::repeat_n(1.0f32, n_aty));
    (idx, labels)
}

/// Advance training to `until_iteration`. Each iteration runs the step
/// schedule of `config.mode`:
///
/// * `ours` — (1) closeness on a typical batch, (2) intra-class BCE on a
///   mixed batch, (3) dispersion on an atypical batch;
/// * `nn_with_ics` — intra-class BCE on a mixed batch only;
/// * `naive_nn` — BCE with every sample labeled 0, drawn from all data
///   (`split` must be None).
///
/// Resumable: the same (model, state) pair continues exactly where it
/// stopped.
pub fn train(
    model: &mut OneClassModel,
    data: &Dataset,
    split: Option<&SplitResult>,
    config: &ExperimentConfig,
    state: &mut TrainState,
    until_iteration: u64,
) -> Result<()> {
    let b = config.batch;
    if b < 2 {
        return Err(Error::config(format!("batch must be at least 2, got {b}")));
    }
    if data.n() == 0 {
        return Err(Error::data("cannot train on an empty dataset".to_string()));
    }
    let need_split = || {
        split.ok_or_else(|| {
            Error::config(format!("mode {} requires an ICS split", config.mode))
        })
    };
    match config.mode {
        Mode::Ours | Mode::NnWithIcs => {
            let s = need_split()?;
            if s.typical_idx.is_empty() || s.atypical_idx.is_empty() {
                return Err(Error::config(
                    "both split subsets must be non-empty for training".to_string(),
                ));
            }
        }
        Mode::NaiveNn => {
            if split.is_some() {
                return Err(Error::config(
                    "naive_nn trains without a split; none must be supplied".to_string(),
                ));
            }
        }
        Mode::ReconBaseline => {
            return Err(Error::config(
                "recon_baseline has no classifier to train".to_string(),
            ))
        }
    }
    let adam = Adam::<f32>::new(config.lr, config.l2_decay);
    let all: Vec<usize> = (0..data.n()).collect();

    while state.iteration < until_iteration {
        match config.mode {
            Mode::Ours => {
                let s = need_split()?;
                let typ = draw(&mut state.rng, &s.typical_idx, b);
                let pairs = pair_indices(b, &mut state.rng)?;
                step_pair(
                    model, data, &typ, &pairs, PairLoss::Closeness, &adam,
                    &mut state.opt_backbone, &mut state.opt_distance,
                )?;
                let (mix, labels) = mixed_batch(&mut state.rng, s, b);
                step_bce(model, data, &mix, &labels, &adam, &mut state.opt_backbone)?;
                let aty = draw(&mut state.rng, &s.atypical_idx, b);
                let pairs = pair_indices(b, &mut state.rng)?;
                step_pair(
                    model, data, &aty, &pairs, PairLoss::Dispersion, &adam,
                    &mut state.opt_backbone, &mut state.opt_distance,
                )?;
            }
            Mode::NnWithIcs => {
                let s = need_split()?;
                let (mix, labels) = mixed_batch(&mut state.rng, s, b);
                step_bce(model, data, &mix, &labels, &adam, &mut state.opt_backbone)?;
            }
            Mode::NaiveNn => {
                let idx = draw(&mut state.rng, &all, b);
                let labels = vec![0.0f32; b];
                step_bce(model, data, &idx, &labels, &adam, &mut state.opt_backbone)?;
            }
            Mode::ReconBaseline => unreachable!("rejected above"),
        }
        state.iteration += 1;
    }
    Ok(())
}
