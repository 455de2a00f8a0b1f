//! Checkpointing: parameters and optimizer moments in the binary tensor
//! format, everything else (iteration, RNG position, moment counters, config
//! snapshot) in a JSON sidecar. A restored (model, state) pair continues
//! training bit-exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_params, save_params};
use crate::nn::{Network, Param};
use crate::optim::AdamState;
use crate::tensor::Tensor;

use super::{OneClassModel, TrainState};

#[derive(Serialize, Deserialize)]
struct Sidecar {
    iteration: u64,
    input_shape: Vec<usize>,
    rng_seed_hex: String,
    /// Stream position as decimal text (u128 does not survive JSON numbers).
    rng_word_pos: String,
    t_backbone: Vec<u64>,
    t_distance: Vec<u64>,
    config: String,
}

fn model_file(dir: &Path) -> std::path::PathBuf {
    dir.join("model.icsp")
}

fn optim_file(dir: &Path) -> std::path::PathBuf {
    dir.join("optim.icsp")
}

fn state_file(dir: &Path) -> std::path::PathBuf {
    dir.join("state.json")
}

fn prefixed<'a>(net: &'a Network<f32>, prefix: &str) -> Vec<(String, &'a Tensor<f32>)> {
    net.params()
        .iter()
        .map(|p| (format!("{prefix}.{}", p.name), &p.value))
        .collect()
}

/// Write `dir/model.icsp`, `dir/optim.icsp`, and `dir/state.json`.
pub fn save_checkpoint(
    dir: &Path,
    model: &OneClassModel,
    state: &TrainState,
    config: &ExperimentConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut entries = prefixed(&model.backbone, "backbone");
    entries.extend(prefixed(&model.distance_net, "distance"));
    let borrowed: Vec<(&str, &Tensor<f32>)> =
        entries.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    save_params(&model_file(dir), &borrowed)?;

    let mut moments: Vec<(String, Tensor<f32>)> = Vec::new();
    let mut push_moments =
        |net: &Network<f32>, opt: &AdamState<f32>, prefix: &str| -> Result<()> {
            for (i, p) in net.params().iter().enumerate() {
                moments.push((
                    format!("{prefix}.{}.m", p.name),
                    Tensor::new(vec![opt.m[i].len()], opt.m[i].clone())?,
                ));
                moments.push((
                    format!("{prefix}.{}.v", p.name),
                    Tensor::new(vec![opt.v[i].len()], opt.v[i].clone())?,
                ));
            }
            Ok(())
        };
    push_moments(&model.backbone, &state.opt_backbone, "backbone")?;
    push_moments(&model.distance_net, &state.opt_distance, "distance")?;
    let borrowed: Vec<(&str, &Tensor<f32>)> =
        moments.iter().map(|(n, t)| (n.as_str(), t)).collect();
    save_params(&optim_file(dir), &borrowed)?;

    let seed_hex: String = state
        .rng
        .get_seed()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let sidecar = Sidecar {
        iteration: state.iteration,
        input_shape: model.backbone.input_shape().to_vec(),
        rng_seed_hex: seed_hex,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        t_backbone: state.opt_backbone.t.clone(),
        t_distance: state.opt_distance.t.clone(),
        config: config.to_kv_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::data(format!("checkpoint sidecar: {e}")))?;
    std::fs::write(state_file(dir), json)
        .map_err(|e| Error::io(state_file(dir).display().to_string(), e))?;
    Ok(())
}

fn fill_params(net: &mut Network<f32>, prefix: &str, loaded: &[(String, Tensor<f32>)]) -> Result<()> {
    for p in net.params_mut() {
        let want = format!("{prefix}.{}", p.name);
        let found = loaded
            .iter()
            .find(|(n, _)| *n == want)
            .ok_or_else(|| Error::data(format!("checkpoint is missing parameter {want}")))?;
        if found.1.shape() != p.value.shape() {
            return Err(Error::data(format!(
                "checkpoint parameter {want} has shape {:?}, expected {:?}",
                found.1.shape(),
                p.value.shape()
            )));
        }
        p.value = found.1.clone();
    }
    Ok(())
}

fn fill_moments(
    params: &[Param<f32>],
    prefix: &str,
    loaded: &[(String, Tensor<f32>)],
    t: Vec<u64>,
) -> Result<AdamState<f32>> {
    let mut state = AdamState::new(params);
    if t.len() != params.len() {
        return Err(Error::data(format!(
            "checkpoint has {} step counters for {} parameters",
            t.len(),
            params.len()
        )));
    }
    state.t = t;
    for (i, p) in params.iter().enumerate() {
        for (suffix, dst) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
            let want = format!("{prefix}.{}.{suffix}", p.name);
            let found = loaded
                .iter()
                .find(|(n, _)| *n == want)
                .ok_or_else(|| Error::data(format!("checkpoint is missing moment {want}")))?;
            if found.1.len() != dst.len() {
                return Err(Error::data(format!(
                    "checkpoint moment {want} has {} values, expected {}",
                    found.1.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(found.1.as_slice());
        }
    }
    Ok(state)
}

/// Restore a checkpoint written by [`save_checkpoint`]. Returns the model,
/// the training state, and the configuration snapshot it was saved with.
pub fn load_checkpoint(dir: &Path) -> Result<(OneClassModel, TrainState, ExperimentConfig)> {
    let json = std::fs::read_to_string(state_file(dir))
        .map_err(|e| Error::io(state_file(dir).display().to_string(), e))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| Error::data(format!("checkpoint sidecar: {e}")))?;

    let mut config = ExperimentConfig::desk();
    for line in sidecar.config.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("checkpoint config snapshot line '{line}'")))?;
        config.apply_kv(key, value)?;
    }

    let mut model =
        OneClassModel::new(&sidecar.input_shape, config.latent_dim, config.backbone_width)?;
    let loaded = load_params(&model_file(dir))?;
    let expected = model.backbone.params().len() + model.distance_net.params().len();
    if loaded.len() != expected {
        return Err(Error::data(format!(
            "checkpoint holds {} parameters, expected {expected}",
            loaded.len()
        )));
    }
    fill_params(&mut model.backbone, "backbone", &loaded)?;
    fill_params(&mut model.distance_net, "distance", &loaded)?;

    let moments = load_params(&optim_file(dir))?;
    let opt_backbone = fill_moments(
        model.backbone.params(),
        "backbone",
        &moments,
        sidecar.t_backbone,
    )?;
    let opt_distance = fill_moments(
        model.distance_net.params(),
        "distance",
        &moments,
        sidecar.t_distance,
    )?;

    if sidecar.rng_seed_hex.len() != 64 || !sidecar.rng_seed_hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::data(format!(
            "checkpoint rng seed must be 64 hex chars, got '{}'",
            sidecar.rng_seed_hex
        )));
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.iter_mut().enumerate() {
        *chunk = u8::from_str_radix(&sidecar.rng_seed_hex[2 * i..2 * i + 2], 16)
            .map_err(|e| Error::data(format!("checkpoint rng seed: {e}")))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let pos: u128 = sidecar
        .rng_word_pos
        .parse()
        .map_err(|e| Error::data(format!("checkpoint rng position: {e}")))?;
    rng.set_word_pos(pos);

    let state = TrainState {
        iteration: sidecar.iteration,
        opt_backbone,
        opt_distance,
        rng,
    };
    Ok((model, state, config))
}
