mod common;

use rand::Rng;
use safseg::losses::{loss_value, ms_ssim_loss, ssim_index, ssim_loss, LossTerm, SsimConfig};
use safseg::{Tape, Tensor};

const K: usize = 11;
const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

fn fast_ssim_loss(p: &[f64], g: &[f64], shape: &[usize], cfg: &SsimConfig) -> f64 {
    let mut t = Tape::new();
    let pv = t.constant(Tensor::new(shape.to_vec(), p.to_vec()).unwrap());
    let gv = t.constant(Tensor::new(shape.to_vec(), g.to_vec()).unwrap());
    let l = ssim_loss(&mut t, pv, gv, cfg).unwrap();
    t.value(l).item()
}

fn random_pair(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = (0..h * w).map(|_| r.random::<f64>()).collect();
    let g: Vec<f64> = if r.random::<bool>() {
        (0..h * w).map(|_| f64::from(u8::from(r.random::<f64>() < 0.4))).collect()
    } else {
        (0..h * w).map(|_| r.random::<f64>()).collect()
    };
    (p, g)
}

#[test]
fn ssim_loss_equals_per_window_brute_force() {
    let cfg = SsimConfig::default();
    assert_eq!((cfg.k, cfg.c1, cfg.c2), (K, C1, C2));
    let mut r = common::rng(20);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (r.random_range(16..=32), r.random_range(16..=32));
        let (p, g) = random_pair(&mut r, h, w);
        let fast = fast_ssim_loss(&p, &g, &[h, w], &cfg);
        let slow = common::brute_ssim_loss(&p, &g, h, w, K, C1, C2);
        worst = worst.max((fast - slow).abs());
    }
    assert!(worst < 1e-9, "{worst:e}");
}

#[test]
fn batched_loss_is_the_mean_over_samples() {
    let cfg = SsimConfig::default();
    let mut r = common::rng(21);
    let (h, w) = (18, 24);
    let pairs: Vec<_> = (0..3).map(|_| random_pair(&mut r, h, w)).collect();
    let p: Vec<f64> = pairs.iter().flat_map(|x| x.0.clone()).collect();
    let g: Vec<f64> = pairs.iter().flat_map(|x| x.1.clone()).collect();
    let fast = fast_ssim_loss(&p, &g, &[3, 1, h, w], &cfg);
    let slow = pairs.iter().map(|(p, g)| common::brute_ssim_loss(p, g, h, w, K, C1, C2)).sum::<f64>() / 3.0;
    assert!((fast - slow).abs() < 1e-9);
}

#[test]
fn window_index_matches_two_pass_statistics() {
    let cfg = SsimConfig::default();
    let mut r = common::rng(22);
    for _ in 0..50 {
        let (x, y) = random_pair(&mut r, K, K);
        let got = ssim_index(&x, &y, &cfg).unwrap();
        let (want, _) = common::window_ssim(&|u, v| x[u * K + v], &|u, v| y[u * K + v], K, C1, C2);
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn two_scale_loss_equals_brute_force() {
    let mut r = common::rng(23);
    for wts in [(0.5, 0.5), (0.3, 0.7)] {
        let cfg = SsimConfig { ms_weights: vec![wts.0, wts.1], ..SsimConfig::default() };
        for _ in 0..10 {
            let (h, w) = (2 * r.random_range(11..=16), 2 * r.random_range(11..=16));
            let (p, g) = random_pair(&mut r, h, w);
            let mut t = Tape::new();
            let pv = t.constant(Tensor::new(vec![h, w], p.clone()).unwrap());
            let gv = t.constant(Tensor::new(vec![h, w], g.clone()).unwrap());
            let l = ms_ssim_loss(&mut t, pv, gv, &cfg).unwrap();
            let slow = common::brute_ms_ssim_loss_2(&p, &g, h, w, K, C1, C2, wts);
            assert!((t.value(l).item() - slow).abs() < 1e-8);
        }
    }
}

#[test]
fn one_scale_is_the_plain_loss() {
    let mut r = common::rng(24);
    let (p, g) = random_pair(&mut r, 20, 20);
    let pt = Tensor::new(vec![20, 20], p.clone()).unwrap();
    let gt = Tensor::new(vec![20, 20], g.clone()).unwrap();
    let cfg = SsimConfig::default();
    assert_eq!(loss_value(LossTerm::Ssim, &pt, &gt, &cfg).unwrap(), fast_ssim_loss(&p, &g, &[20, 20], &cfg));
}

#[test]
fn loss_is_zero_for_identical_maps_and_symmetric() {
    let cfg = SsimConfig::default();
    let mut r = common::rng(25);
    let (p, g) = random_pair(&mut r, 16, 16);
    assert!(fast_ssim_loss(&p, &p, &[16, 16], &cfg).abs() < 1e-12);
    let a = fast_ssim_loss(&p, &g, &[16, 16], &cfg);
    let b = fast_ssim_loss(&g, &p, &[16, 16], &cfg);
    assert!((a - b).abs() < 1e-12);
    assert!(a > 0.0 && a <= 2.0);
}

#[test]
fn maps_smaller_than_the_window_are_rejected() {
    let t = Tensor::<f64>::zeros(vec![8, 8]);
    assert!(loss_value(LossTerm::Ssim, &t, &t, &SsimConfig::default()).is_err());
}
