mod common;

use common::grad_suite::*;
use safseg::nn::BlockKind;

#[test]
fn every_op_matches_finite_differences() {
    for case in op_cases() {
        let err = run_case(&case, SEEDS).unwrap();
        assert!(err < OP_TOL, "{}: {err:e}", case.name);
    }
}

#[test]
fn every_loss_matches_finite_differences() {
    for case in loss_cases() {
        let err = run_case(&case, SEEDS).unwrap();
        assert!(err < OP_TOL, "{}: {err:e}", case.name);
    }
}

#[test]
fn blocks_match_finite_differences() {
    for seed in 0..SEEDS {
        for (kind, se) in [(BlockKind::Basic, false), (BlockKind::Shortcut, false), (BlockKind::Basic, true)] {
            let err = block_case(kind, se, seed).unwrap();
            assert!(err < OP_TOL, "{kind:?} se={se} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn safs_matches_finite_differences() {
    for seed in 0..SEEDS {
        for n in 1..=3 {
            let err = safs_case(n, seed).unwrap();
            assert!(err < OP_TOL, "n={n} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn tiny_network_end_to_end() {
    for seed in 0..4 {
        let err = network_case(seed, 3, NET_H).unwrap();
        assert!(err < NET_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn conv_relu_sum_is_tight() {
    use safseg::autodiff::check_gradients;
    let mut r = common::rng(11);
    let x = common::uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut r);
    let w = common::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut r);
    let err = check_gradients(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, 1, 1)?;
            let y = t.relu(y);
            Ok(t.sum(y))
        },
        &[x, w],
        H,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}
