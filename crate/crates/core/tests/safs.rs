mod common;

use proptest::prelude::*;
use common::safs_oracle::{build, maps, oracle, run};
use safseg::nn::{avg_fuse, Ctx};
use safseg::Mode;

#[test]
fn loop_oracle_for_two_and_three_branches() {
    for n in [2, 3] {
        for seed in 0..10 {
            let (store, safs) = build(n, 6, seed);
            let m = maps(n, &[2, 6, 5, 4], seed + 50);
            let (got, _) = run(&store, &safs, &m);
            let d = got.max_abs_diff(&oracle(&store, &safs, &m));
            assert!(d < 1e-12, "n={n} seed {seed}: {d:e}");
        }
    }
}

#[test]
fn single_branch_is_the_identity() {
    let (store, safs) = build(1, 4, 1);
    let m = maps(1, &[2, 4, 3, 3], 2);
    let (got, state) = run(&store, &safs, &m);
    assert_eq!(got, m[0]);
    assert!(state.q.data().iter().all(|&q| q == 1.0));
}

#[test]
fn tied_branches_weight_every_scale_equally() {
    for n in [2, 3] {
        let (mut store, safs) = build(n, 4, 3);
        let first = &safs.branches[0];
        let (w, b) = (store.get(first.weight).value.clone(), store.get(first.bias.unwrap()).value.clone());
        for l in &safs.branches[1..] {
            store.set_value(l.weight, w.clone()).unwrap();
            store.set_value(l.bias.unwrap(), b.clone()).unwrap();
        }
        let m = maps(n, &[2, 4, 3, 5], 4);
        let (got, state) = run(&store, &safs, &m);
        assert!(state.q.data().iter().all(|&q| q == 1.0 / n as f64));
        let mut cx = Ctx::new(&store, Mode::Eval);
        let vars: Vec<_> = m.iter().map(|t| cx.tape.constant(t.clone())).collect();
        let avg = avg_fuse(&mut cx.tape, &vars).unwrap();
        assert!(got.max_abs_diff(cx.tape.value(avg)) < 1e-14);
    }
}

#[test]
fn permuting_maps_with_their_branches_changes_nothing() {
    let (mut store, safs) = build(3, 4, 5);
    let m = maps(3, &[1, 4, 4, 4], 6);
    let (before, _) = run(&store, &safs, &m);
    let params: Vec<_> = safs
        .branches
        .iter()
        .map(|l| (store.get(l.weight).value.clone(), store.get(l.bias.unwrap()).value.clone()))
        .collect();
    let perm = [2, 0, 1];
    for (i, &from) in perm.iter().enumerate() {
        store.set_value(safs.branches[i].weight, params[from].0.clone()).unwrap();
        store.set_value(safs.branches[i].bias.unwrap(), params[from].1.clone()).unwrap();
    }
    let permuted: Vec<_> = perm.iter().map(|&i| m[i].clone()).collect();
    let (after, _) = run(&store, &safs, &permuted);
    assert!(before.max_abs_diff(&after) < 1e-14);
}

#[test]
fn branch_count_mismatch_is_an_error() {
    let (store, safs) = build(2, 4, 7);
    let m = maps(3, &[1, 4, 2, 2], 8);
    let mut cx = Ctx::new(&store, Mode::Eval);
    let vars: Vec<_> = m.iter().map(|t| cx.tape.constant(t.clone())).collect();
    assert!(safs.forward(&mut cx, &vars).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_convex_per_channel(n in 1usize..=4, c in 1usize..=8, seed in 0u64..1000) {
        let (store, safs) = build(n, c, seed);
        let m = maps(n, &[2, c, 3, 3], seed + 1);
        let (out, state) = run(&store, &safs, &m);
        for b in 0..2 {
            let w = state.weights(b);
            for ch in 0..c {
                prop_assert!((w.branch_sum(ch) - 1.0).abs() < 1e-6);
                for i in 0..n {
                    prop_assert!((0.0..=1.0).contains(&w.get(i, ch)));
                }
            }
        }
        for (k, &v) in out.data().iter().enumerate() {
            let lo = m.iter().map(|t| t.data()[k]).fold(f64::INFINITY, f64::min);
            let hi = m.iter().map(|t| t.data()[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
