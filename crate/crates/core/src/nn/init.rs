//! Deterministic parameter initialization.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::scalar::Scalar;

use super::{Init, LayerSpec, Network};

/// Fill a network's parameters in place: kernels per their layer's `init`
/// family, biases zero. Identical seeds produce identical parameter bytes.
pub fn init_params<S: Scalar>(net: &mut Network<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Init> = net
        .layers()
        .iter()
        .filter_map(|layer| match *layer {
            LayerSpec::Dense { init, .. }
            | LayerSpec::Conv2d { init, .. }
            | LayerSpec::TConv2d { init, .. } => Some(init),
            _ => None,
        })
        .collect();

    let mut layer_no = 0usize;
    for param in net.params_mut() {
        if param.name.ends_with(".bias") {
            for v in param.value.as_mut_slice() {
                *v = S::zero();
            }
            layer_no += 1; // kernel then bias per layer: advance after the pair
            continue;
        }
        let (fan_in, fan_out) = fans(param.value.shape());
        match inits[layer_no] {
            Init::HeNormal => {
                let dist = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                for v in param.value.as_mut_slice() {
                    *v = S::from_f64(dist.sample(&mut rng));
                }
            }
            Init::GlorotUniform => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new(-a, a);
                for v in param.value.as_mut_slice() {
                    *v = S::from_f64(dist.sample(&mut rng));
                }
            }
        }
    }
}

/// (fan_in, fan_out) of a kernel tensor. Dense kernels are `[in,out]`;
/// conv kernels `[cout,cin,kh,kw]`; transposed-conv kernels `[cin,cout,kh,kw]`
/// count their receptive field from the output side, matching their role as
/// the adjoint of a convolution.
fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [fan_in, fan_out] => (fan_in, fan_out),
        [cout, cin, kh, kw] => (cin * kh * kw, cout * kh * kw),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_backbone, Network};
    use super::*;

    fn param_bytes(net: &Network<f32>) -> Vec<u32> {
        net.params()
            .iter()
            .flat_map(|p| p.value.as_slice().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut a = build_backbone::<f32>(&[1, 16, 16], 8, 8).unwrap();
        let mut b = build_backbone::<f32>(&[1, 16, 16], 8, 8).unwrap();
        init_params(&mut a, 42);
        init_params(&mut b, 42);
        assert_eq!(param_bytes(&a), param_bytes(&b));
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = build_backbone::<f32>(&[1, 16, 16], 8, 8).unwrap();
        let mut b = build_backbone::<f32>(&[1, 16, 16], 8, 8).unwrap();
        init_params(&mut a, 1);
        init_params(&mut b, 2);
        assert_ne!(param_bytes(&a), param_bytes(&b));
    }

    #[test]
    fn biases_start_at_zero() {
        let mut net = build_backbone::<f32>(&[1, 16, 16], 8, 8).unwrap();
        init_params(&mut net, 9);
        for p in net.params() {
            if p.name.ends_with(".bias") {
                assert!(p.value.as_slice().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn he_kernel_variance_near_two_over_fan_in() {
        // The 128-channel conv kernel has 73728 elements with fan_in 576.
        let mut net = build_backbone::<f32>(&[1, 32, 32], 8, 32).unwrap();
        init_params(&mut net, 7);
        let kernel = net
            .params()
            .iter()
            .find(|p| p.name == "layer4.kernel")
            .expect("third conv kernel");
        assert!(kernel.value.len() > 10_000);
        let vals: Vec<f64> = kernel.value.as_slice().iter().map(|&v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let target = 2.0 / 576.0;
        assert!(
            (var - target).abs() < 0.2 * target,
            "variance {var} vs target {target}"
        );
    }
}
