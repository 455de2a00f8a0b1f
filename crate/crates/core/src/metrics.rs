//! Similarity and evaluation metrics: windowed SSIM, MSE, and ROC-AUC.
//!
//! All three are pure functions computed in double precision regardless of
//! the tensor scalar type.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SSIM configuration. Defaults: 7×7 uniform window, k1=0.01, k2=0.03,
/// dynamic range 1.0 (images normalized to [0,1]).
#[derive(Debug, Clone, Copy)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

/// Mean structural similarity over all fully-contained windows, averaged
/// across channels for `[h,w,c]` images (`[h,w]` treated as single-channel).
///
/// Windows use uniform weights and biased (1/n) moments. The result lies in
/// [-1, 1]; for non-negative images it is effectively [0, 1].
pub fn ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, p: &SsimParams) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "ssim",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let (h, w, c) = match *x.shape() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::Shape {
                op: "ssim",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            })
        }
    };
    let win = p.window;
    if win == 0 || win.is_multiple_of(2) {
        return Err(Error::config(format!("ssim window must be odd and positive, got {win}")));
    }
    if win > h || win > w {
        return Err(Error::config(format!(
            "ssim window {win} exceeds image {h}x{w}"
        )));
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let n = (win * win) as f64;
    let (ho, wo) = (h - win + 1, w - win + 1);

    let mut channel_sum = 0.0;
    for ch in 0..c {
        // Extract the channel as f64 planes once.
        let mut px = vec![0.0f64; h * w];
        let mut py = vec![0.0f64; h * w];
        for i in 0..h * w {
            px[i] = x.as_slice()[i * c + ch].to_f64_();
            py[i] = y.as_slice()[i * c + ch].to_f64_();
        }

        // Sliding vertical band: per-column sums of the five window statistics
        // over rows [oi, oi+win). Horizontal sums are recomputed per window.
        let mut sx = vec![0.0f64; w];
        let mut sy = vec![0.0f64; w];
        let mut sxx = vec![0.0f64; w];
        let mut syy = vec![0.0f64; w];
        let mut sxy = vec![0.0f64; w];
        for i in 0..win {
            for j in 0..w {
                let (a, b) = (px[i * w + j], py[i * w + j]);
                sx[j] += a;
                sy[j] += b;
                sxx[j] += a * a;
                syy[j] += b * b;
                sxy[j] += a * b;
            }
        }

        let mut window_sum = 0.0;
        for oi in 0..ho {
            if oi > 0 {
                let (add, del) = (oi + win - 1, oi - 1);
                for j in 0..w {
                    let (a, b) = (px[add * w + j], py[add * w + j]);
                    let (da, db) = (px[del * w + j], py[del * w + j]);
                    sx[j] += a - da;
                    sy[j] += b - db;
                    sxx[j] += a * a - da * da;
                    syy[j] += b * b - db * db;
                    sxy[j] += a * b - da * db;
                }
            }
            for oj in 0..wo {
                let (mut tx, mut ty, mut txx, mut tyy, mut txy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in oj..oj + win {
                    tx += sx[j];
                    ty += sy[j];
                    txx += sxx[j];
                    tyy += syy[j];
                    txy += sxy[j];
                }
                let mx = tx / n;
                let my = ty / n;
                let vx = txx / n - mx * mx;
                let vy = tyy / n - my * my;
                let cxy = txy / n - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                window_sum += num / den;
            }
        }
        channel_sum += window_sum / (ho * wo) as f64;
    }
    Ok(channel_sum / c as f64)
}

/// Mean squared elementwise difference, in double precision.
pub fn mse<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "mse",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&a, &b)| {
            let d = a.to_f64_() - b.to_f64_();
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// ROC-AUC of abnormality scores (higher = more abnormal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucResult {
    pub auc: f64,
    pub n_normal: usize,
    pub n_abnormal: usize,
}

/// Mann–Whitney AUC via the rank statistic: the probability that a random
/// abnormal score exceeds a random normal score, ties counting half.
/// O(n log n) in the combined size.
pub fn auc(scores_normal: &[f64], scores_abnormal: &[f64]) -> Result<AucResult> {
    if scores_normal.is_empty() || scores_abnormal.is_empty() {
        return Err(Error::config("auc requires non-empty score lists for both classes"));
    }
    if scores_normal.iter().chain(scores_abnormal).any(|v| !v.is_finite()) {
        return Err(Error::config("auc scores must be finite"));
    }
    let n_n = scores_normal.len();
    let n_a = scores_abnormal.len();
    let mut all: Vec<(f64, bool)> = Vec::with_capacity(n_n + n_a);
    all.extend(scores_normal.iter().map(|&s| (s, false)));
    all.extend(scores_abnormal.iter().map(|&s| (s, true)));
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // Sum of average ranks (1-based) over the abnormal class.
    let mut rank_sum_abnormal = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let abnormal_in_group = all[i..=j].iter().filter(|(_, a)| *a).count();
        rank_sum_abnormal += avg_rank * abnormal_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum_abnormal - (n_a * (n_a + 1)) as f64 / 2.0;
    Ok(AucResult {
        auc: u / (n_n as f64 * n_a as f64),
        n_normal: n_n,
        n_abnormal: n_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![h, w], f)
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = image(16, 16, |_| rng.gen_range(0.0..1.0));
        let s = ssim(&x, &x, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = image(16, 16, |_| rng.gen_range(0.0..1.0));
        let y = image(16, 16, |_| rng.gen_range(0.0..1.0));
        let p = SsimParams::default();
        assert_eq!(ssim(&x, &y, &p).unwrap(), ssim(&y, &x, &p).unwrap());
    }

    #[test]
    fn ssim_zeros_vs_ones_closed_form() {
        // Both variances vanish, so SSIM reduces to C1/(1+C1) with L=1.
        let x = image(16, 16, |_| 0.0);
        let y = image(16, 16, |_| 1.0);
        let s = ssim(&x, &y, &SsimParams::default()).unwrap();
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn ssim_rejects_bad_windows() {
        let x = image(8, 8, |_| 0.5);
        let p = SsimParams {
            window: 9,
            ..Default::default()
        };
        assert!(ssim(&x, &x, &p).is_err());
        let p = SsimParams {
            window: 4,
            ..Default::default()
        };
        assert!(ssim(&x, &x, &p).is_err());
    }

    #[test]
    fn ssim_multi_channel_averages() {
        // Two channels: one identical pair, one zeros-vs-ones pair; the score
        // must be the mean of the per-channel scores.
        let h = 9;
        let x = Tensor::from_fn(vec![h, h, 2], |i| if i % 2 == 0 { 0.3 } else { 0.0 });
        let y = Tensor::from_fn(vec![h, h, 2], |i| if i % 2 == 0 { 0.3 } else { 1.0 });
        let s = ssim(&x, &y, &SsimParams::default()).unwrap();
        let c1 = 1e-4;
        let expected = (1.0 + c1 / (1.0 + c1)) / 2.0;
        assert!((s - expected).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0f64, 1.0]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        let c = Tensor::new(vec![2], vec![0.0f64, 1.0]).unwrap();
        assert_eq!(mse(&c, &b).unwrap(), 0.5);
    }

    #[test]
    fn auc_perfect_separation() {
        let r = auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!((r.n_normal, r.n_abnormal), (2, 2));
    }

    #[test]
    fn auc_all_ties_is_half() {
        let r = auc(&[0.7, 0.7, 0.7], &[0.7, 0.7]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn auc_interleaved_pairs() {
        // Pairs ordered correctly: (0.1,0.5), (0.1,0.6); incorrectly:
        // (0.9,0.5), (0.9,0.6) → 2 of 4.
        let r = auc(&[0.1, 0.9], &[0.5, 0.6]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn auc_rejects_empty_or_nonfinite() {
        assert!(auc(&[], &[0.5]).is_err());
        assert!(auc(&[0.5], &[]).is_err());
        assert!(auc(&[f64::NAN], &[0.5]).is_err());
    }

    proptest! {
        #[test]
        fn auc_antisymmetry_without_ties(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..40);
            let m = rng.gen_range(1..40);
            // Distinct scores: permute a strictly increasing sequence.
            let mut scores: Vec<f64> = (0..n + m).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
            for i in (1..scores.len()).rev() {
                let j = rng.gen_range(0..=i);
                scores.swap(i, j);
            }
            let (a, b) = scores.split_at(n);
            let fwd = auc(a, b).unwrap().auc;
            let rev = auc(b, a).unwrap().auc;
            prop_assert!((fwd + rev - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_transform(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
            let n = rng.gen_range(1..30);
            let m = rng.gen_range(1..30);
            // Quantized scores so ties occur.
            let gen = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
                (0..k).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect()
            };
            let a = gen(&mut rng, n);
            let b = gen(&mut rng, m);
            let base = auc(&a, &b).unwrap().auc;
            let tf = |v: &f64| v * 3.0 + 1.0; // strictly increasing, tie-preserving
            let ta: Vec<f64> = a.iter().map(tf).collect();
            let tb: Vec<f64> = b.iter().map(tf).collect();
            let after = auc(&ta, &tb).unwrap().auc;
            prop_assert_eq!(base, after);
        }
    }
}
