mod common;

use safseg::{Attention, Fusion, Mode, Model, NetworkConfig, SkipSet, Tensor};

fn input(b: usize, s: usize, seed: u64) -> Tensor<f64> {
    common::uniform(&[b, 3, s, s], 0.0, 1.0, &mut common::rng(seed))
}

#[test]
fn same_seed_same_model() {
    let cfg = NetworkConfig::unet(32, 3, 4).with_fusion(Fusion::Adaptive, 3);
    let a = Model::<f32>::build(&cfg, 5).unwrap();
    let b = Model::<f32>::build(&cfg, 5).unwrap();
    let c = Model::<f32>::build(&cfg, 6).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.to_bytes(), c.to_bytes());
    let x = input(2, 32, 1).cast::<f32>();
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}

#[test]
fn eval_predictions_do_not_depend_on_batch_companions() {
    let cfg = NetworkConfig::unet(16, 3, 4).with_fusion(Fusion::Adaptive, 2);
    let m = Model::<f64>::build(&cfg, 2).unwrap();
    let x = input(3, 16, 3);
    let batched = m.predict(&x).unwrap();
    for i in 0..3 {
        let alone = m.predict(&x.index0(i)).unwrap();
        assert!(alone.max_abs_diff(&batched.index0(i)) < 1e-12);
    }
}

#[test]
fn outputs_are_probabilities_of_the_input_size() {
    for fusion in [Fusion::Single, Fusion::Average, Fusion::Adaptive] {
        let n = if fusion == Fusion::Single { 1 } else { 3 };
        let cfg = NetworkConfig::unet(16, 3, 4).with_fusion(fusion, n);
        let m = Model::<f64>::build(&cfg, 4).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let y = m.forward(&input(2, 16, 5), mode).unwrap();
            assert_eq!(y.shape(), &[2, 1, 16, 16]);
            assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}

#[test]
fn averaging_one_scale_is_the_single_output() {
    let single = Model::<f64>::build(&NetworkConfig::unet(16, 3, 4), 7).unwrap();
    let avg = Model::<f64>::build(&NetworkConfig::unet(16, 3, 4).with_fusion(Fusion::Average, 1), 7).unwrap();
    assert_eq!(single.param_count(), avg.param_count());
    let x = input(2, 16, 8);
    assert_eq!(single.predict(&x).unwrap(), avg.predict(&x).unwrap());
}

#[test]
fn adaptive_fusion_weights_are_convex() {
    let cfg = NetworkConfig::unet(16, 3, 4).with_fusion(Fusion::Adaptive, 3);
    let m = Model::<f64>::build(&cfg, 9).unwrap();
    let (_, state) = m.forward_with_state(&input(2, 16, 10), Mode::Eval).unwrap();
    let state = state.unwrap();
    for b in 0..2 {
        let w = state.weights(b);
        assert_eq!((w.n, w.channels), (3, 4));
        for c in 0..4 {
            assert!((w.branch_sum(c) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn parameter_counts_follow_the_architecture() {
    let count = |cfg: &NetworkConfig| Model::<f32>::build(cfg, 0).unwrap().param_count();
    let d3 = count(&NetworkConfig::unet(64, 3, 8));
    let d5 = count(&NetworkConfig::unet(64, 5, 8));
    assert!(d3 < d5);
    let mut se = NetworkConfig::unet(64, 3, 8);
    se.attention = Attention::Se;
    assert!(count(&se) > d3);
    let mut no_skip = NetworkConfig::unet(64, 3, 8);
    no_skip.skip_set = SkipSet::all(3).without(0);
    assert!(count(&no_skip) < d3);
    let avg = count(&NetworkConfig::unet(64, 3, 8).with_fusion(Fusion::Average, 3));
    let ada = count(&NetworkConfig::unet(64, 3, 8).with_fusion(Fusion::Adaptive, 3));
    assert!(d3 < avg && avg < ada);
}

#[test]
fn checkpoints_round_trip_and_convert_precision() {
    let cfg = NetworkConfig::unet(16, 3, 4).with_fusion(Fusion::Adaptive, 2);
    let m = Model::<f32>::build(&cfg, 11).unwrap();
    let bytes = m.to_bytes();
    let back = Model::<f32>::load(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.config(), &cfg);
    let x = input(1, 16, 12).cast::<f32>();
    assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    let wide = Model::<f64>::load(&mut bytes.as_slice()).unwrap();
    assert!(wide.predict(&x.cast()).unwrap().cast::<f32>().max_abs_diff(&m.predict(&x).unwrap()) < 1e-5);
    assert!(Model::<f32>::load(&mut &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::<f32>::load(&mut bad.as_slice()).is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = Model::<f32>::build(&NetworkConfig::unet(16, 3, 4), 0).unwrap();
    assert!(m.predict(&Tensor::zeros(vec![1, 3, 8, 8])).is_err());
    assert!(m.predict(&Tensor::zeros(vec![1, 1, 16, 16])).is_err());
    assert!(Model::<f32>::build(&NetworkConfig::unet(18, 3, 4), 0).is_err());
    assert!(Model::<f32>::build(&NetworkConfig::unet(16, 3, 4).with_fusion(Fusion::Adaptive, 4), 0).is_err());
}
