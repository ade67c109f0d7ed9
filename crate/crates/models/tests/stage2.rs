use df3d_models::blocks::zero_params;
use df3d_models::report::sr_cost;
use df3d_models::*;
use df3d_nn::ops::{voxel_shuffle_array, voxel_unshuffle_array};
use df3d_nn::{Array, Ctx, ParamStore, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn vol(d: usize) -> [usize; 5] {
    [1, 1, d, d, d]
}

#[test]
fn dpfe_shapes() {
    let cfg = SRNetConfig::default();
    let mut store = ParamStore::<f32>::new();
    let net = SrNet::build(&cfg, &mut store, 1).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let env = ctx.input(rand_array(1, &vol(32), 0.0, 1.0).cast());
    let tx = ctx.input(Array::zeros(&vol(32)));
    let lr = ctx.input(rand_array(2, &vol(8), 0.0, 1.0).cast());
    let t = net.trace(&ctx, env, tx, lr);
    assert_eq!(t.f0.shape(), vec![1, 16, 8, 8, 8]);
    assert_eq!(t.e_bar.shape(), vec![1, 16, 32, 32, 32]);
    assert_eq!(t.m.shape(), vec![1, 16, 8, 8, 8]);
    assert_eq!(t.output.shape(), vec![1, 1, 32, 32, 32]);
    assert!(t
        .output
        .value()
        .data()
        .iter()
        .all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn degenerate_inputs_are_finite_and_deterministic() {
    let cfg = SRNetConfig::with_channels(4, 1, 1);
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 3).unwrap();
    let run = || {
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, &store);
        let z = |d| ctx.input(Array::zeros(&vol(d)));
        let t = net.trace(&ctx, z(8), z(8), z(4));
        ((*t.f0.value()).clone(), (*t.output.value()).clone())
    };
    let (f0, out) = run();
    assert!(f0.all_finite() && out.all_finite());
    let (f1, out1) = run();
    assert_eq!(f0.data(), f1.data());
    assert_eq!(out.data(), out1.data());
}

#[test]
fn adaptive_pooling_of_block_constant_field() {
    let fine = Array::<f64>::from_fn(&[1, 1, 8, 8, 8], |i| {
        let (x, y, z) = (i / 64, (i / 8) % 8, i % 8);
        ((x / 4) * 4 + (y / 4) * 2 + z / 4) as f64 * 0.5
    });
    let tape = Tape::inference();
    let p = tape.constant(fine).adaptive_avg_pool3d([2, 2, 2]).value();
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                assert_eq!(p.at(&[0, 0, a, b, c]), ((a * 4 + b * 2 + c) as f64) * 0.5);
            }
        }
    }
    let ramp = Array::<f64>::from_fn(&[1, 1, 4, 4, 4], |i| (i / 16) as f64);
    let p = tape.constant(ramp).adaptive_avg_pool3d([2, 2, 2]).value();
    assert_eq!(p.at(&[0, 0, 0, 0, 0]), 0.5);
    assert_eq!(p.at(&[0, 0, 1, 1, 1]), 2.5);
}

#[test]
fn rrdb_identities() {
    let cfg = SRNetConfig::with_channels(8, 2, 1);
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 4).unwrap();
    let f = rand_array(5, &[1, 8, 4, 4, 4], -1.0, 1.0);
    {
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, &store);
        let x = ctx.input(f.clone());
        let r = &net.rrdbs[0];
        let out = r.forward(&ctx, x).value();
        let inner = r.inner(&ctx, x).value();
        let diff: f64 = out
            .data()
            .iter()
            .zip(f.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = inner.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((diff - 0.2 * norm).abs() <= 1e-12 * norm.max(1.0));
        assert!(norm > 0.0);
    }
    for r in &net.rrdbs {
        zero_params(&mut store, r.aggregate_params());
    }
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let x = ctx.input(f.clone());
    for r in &net.rrdbs {
        assert_eq!(r.forward(&ctx, x).value().data(), f.data());
    }
}

#[test]
fn dfr_passthrough_and_composition() {
    let cfg = SRNetConfig::with_channels(8, 2, 1);
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 6).unwrap();
    let f0 = rand_array(7, &[1, 8, 4, 4, 4], -1.0, 1.0);
    let m = rand_array(8, &[1, 8, 4, 4, 4], -1.0, 1.0);
    {
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, &store);
        let (a, b) = (ctx.input(f0.clone()), ctx.input(m.clone()));
        let direct = net.dfr(&ctx, a, b).value();
        assert!(direct.all_finite());
        let by_hand = net
            .dfr_conv
            .forward(
                &ctx,
                net.rrdbs[1].forward(&ctx, net.rrdbs[0].forward(&ctx, a)),
            )
            .add(b)
            .value();
        assert_eq!(direct.data(), by_hand.data());
    }
    for r in &net.rrdbs {
        zero_params(&mut store, r.aggregate_params());
    }
    zero_params(&mut store, net.dfr_conv_params());
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let out = net.dfr(&ctx, ctx.input(f0), ctx.input(m.clone())).value();
    assert_eq!(out.data(), m.data());
}

#[test]
fn shuffle_parity_and_round_trip() {
    let x = Array::<f64>::from_fn(&[1, 8, 2, 2, 2], |i| (i / 8) as f64 + 0.25);
    let y = voxel_shuffle_array(&x);
    assert_eq!(y.shape(), &[1, 1, 4, 4, 4]);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let ch = 4 * (i % 2) + 2 * (j % 2) + k % 2;
                assert_eq!(y.at(&[0, 0, i, j, k]), ch as f64 + 0.25);
            }
        }
    }
    let mut a: Vec<f64> = x.data().to_vec();
    let mut b: Vec<f64> = y.data().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    assert_eq!(voxel_unshuffle_array(&y).data(), x.data());
}

#[test]
fn zero_alpha_gives_zero_map() {
    let cfg = SRNetConfig {
        alpha_init: 0.0,
        ..SRNetConfig::with_channels(4, 1, 1)
    };
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 9).unwrap();
    let tape = Tape::inference();
    let ctx = Ctx::eval(&tape, &store);
    let out = net.forward(
        &ctx,
        ctx.input(rand_array(1, &vol(8), 0.0, 1.0)),
        ctx.input(rand_array(2, &vol(8), 0.0, 1.0)),
        ctx.input(rand_array(3, &vol(4), 0.0, 1.0)),
    );
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn alpha_gradient_matches_finite_difference() {
    let cfg = SRNetConfig::with_channels(4, 1, 1);
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 10).unwrap();
    let inputs = [
        rand_array(1, &vol(8), 0.0, 1.0),
        rand_array(2, &vol(8), 0.0, 1.0),
        rand_array(3, &vol(4), 0.0, 1.0),
    ];
    let mean_out = |store: &ParamStore<f64>| {
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, store);
        let [e, t, l] = inputs.clone().map(|a| ctx.input(a));
        net.forward(&ctx, e, t, l).mean().item()
    };
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let [e, t, l] = inputs.clone().map(|a| ctx.input(a));
    let tr = net.trace(&ctx, e, t, l);
    let p = tr.p_tilde.value();
    assert!(
        p.data().iter().all(|v| (0.0..1.0).contains(v)),
        "P~ left (0, 1) at init"
    );
    let p_mean = p.sum() / p.len() as f64;
    let grads = tape.backward(tr.output.mean());
    let g = grads.param(net.alpha).unwrap().item();
    assert!(g != 0.0);
    assert!((g - p_mean).abs() <= 1e-12);
    let eps = 1e-4;
    let mut plus = store.clone();
    plus.get_mut(net.alpha).data_mut()[0] += eps;
    let mut minus = store.clone();
    minus.get_mut(net.alpha).data_mut()[0] -= eps;
    let fd = (mean_out(&plus) - mean_out(&minus)) / (2.0 * eps);
    assert!((fd - g).abs() <= 1e-6 * g.abs(), "fd {fd} vs {g}");
}

#[test]
fn every_parameter_gets_a_gradient() {
    let cfg = SRNetConfig::with_channels(4, 2, 1);
    let mut store = ParamStore::<f64>::new();
    let net = SrNet::build(&cfg, &mut store, 11).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store, true, 0);
    let out = net.forward(
        &ctx,
        ctx.input(rand_array(1, &[2, 1, 8, 8, 8], 0.0, 1.0)),
        ctx.input(rand_array(2, &[2, 1, 8, 8, 8], 0.0, 1.0)),
        ctx.input(rand_array(3, &[2, 1, 4, 4, 4], 0.0, 1.0)),
    );
    let grads = tape.backward(out.mean());
    for (id, p) in store.iter() {
        let g = grads
            .param(id)
            .unwrap_or_else(|| panic!("no gradient for {}", p.name));
        assert!(g.all_finite(), "{}", p.name);
    }
    assert!(grads.param(net.alpha).unwrap().max_abs() > 0.0);
}

#[test]
fn config_checks() {
    let cfg = SRNetConfig::default();
    assert!(cfg.check_ratio(1.0, 4.0).is_ok());
    assert!(cfg.check_ratio(1.0, 8.0).is_err());
    let mut store = ParamStore::<f32>::new();
    assert!(SrNet::build(
        &SRNetConfig {
            rrdb_count: 0,
            ..cfg.clone()
        },
        &mut store,
        0
    )
    .is_err());
    assert_eq!(sr_param_report(&cfg).unwrap().total, {
        let mut s = ParamStore::<f32>::new();
        SrNet::build(&cfg, &mut s, 5).unwrap();
        s.num_scalars()
    });
}

#[test]
fn hr_stage_cost_grows_with_volume() {
    let small = SRNetConfig::with_channels(4, 1, 1);
    let big = SRNetConfig::with_channels(4, 1, 2);
    let c1 = sr_cost(&small, [4, 4, 4]).unwrap();
    let c2 = sr_cost(&big, [4, 4, 4]).unwrap();
    let ratio = c2.macs as f64 / c1.macs as f64;
    assert!(ratio > 5.0 && ratio < 9.0, "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]
    #[test]
    fn output_grid_is_fine_grid(u in 1usize..=3, a in 1usize..=2, b in 1usize..=2) {
        let cfg = SRNetConfig::with_channels(2, 1, u);
        let f = cfg.factor();
        let coarse = [a, b, 1];
        let fine = coarse.map(|d| d * f);
        let mut store = ParamStore::<f32>::new();
        let net = SrNet::build(&cfg, &mut store, 0).unwrap();
        let tape = Tape::inference();
        let ctx = Ctx::eval(&tape, &store);
        let z = |d: [usize; 3]| ctx.input(Array::zeros(&[1, 1, d[0], d[1], d[2]]));
        let y = net.forward(&ctx, z(fine), z(fine), z(coarse));
        prop_assert_eq!(y.shape(), vec![1, 1, fine[0], fine[1], fine[2]]);
    }
}
