use df3d_models::losses::{combine_values, LossBreakdown};
use df3d_models::*;
use df3d_nn::{Array, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(seed: u64, shape: &[usize]) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn eval<F>(a: &Array<f64>, b: &Array<f64>, f: F) -> f64
where
    F: for<'t> Fn(Var<'t, f64>, Var<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::inference();
    f(tape.constant(a.clone()), tape.constant(b.clone())).item()
}

#[test]
fn pointwise_losses() {
    let t = rand_array(1, &[1, 1, 4, 4, 4]);
    let shifted = t.map(|v| v + 0.1);
    assert_eq!(eval(&t, &t, |a, b| mse_loss(a, b).unwrap()), 0.0);
    assert_eq!(eval(&t, &t, |a, b| l1_loss(a, b).unwrap()), 0.0);
    assert!((eval(&shifted, &t, |a, b| mse_loss(a, b).unwrap()) - 0.01).abs() < 1e-12);
    assert!((eval(&shifted, &t, |a, b| l1_loss(a, b).unwrap()) - 0.1).abs() < 1e-12);

    let p = rand_array(2, &[1, 1, 4, 4, 4]);
    let (mut se, mut ae) = (0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let d = p.at(&[0, 0, i, j, k]) - t.at(&[0, 0, i, j, k]);
                se += d * d;
                ae += d.abs();
            }
        }
    }
    assert!((eval(&p, &t, |a, b| mse_loss(a, b).unwrap()) - se / 64.0).abs() < 1e-14);
    assert!((eval(&p, &t, |a, b| l1_loss(a, b).unwrap()) - ae / 64.0).abs() < 1e-14);

    let tape = Tape::inference();
    assert!(mse_loss(
        tape.constant(p.clone()),
        tape.constant(Array::zeros(&[1, 1, 4, 4, 2]))
    )
    .is_err());
}

#[test]
fn perceptual_fixed_points() {
    let t = rand_array(3, &[2, 1, 8, 8, 4]);
    let p = rand_array(4, &[2, 1, 8, 8, 4]);
    for fx in [
        FeatureExtractor::random_conv(1),
        FeatureExtractor::identity(),
    ] {
        assert_eq!(
            eval(&t, &t, |a, b| perceptual_loss(a, b, &fx).unwrap()),
            0.0
        );
    }
    let id = FeatureExtractor::identity();
    let per = eval(&p, &t, |a, b| perceptual_loss(a, b, &id).unwrap());
    let mse = eval(&p, &t, |a, b| mse_loss(a, b).unwrap());
    assert!((per - mse).abs() < 1e-14);
    assert!(
        eval(&p, &t, |a, b| perceptual_loss(
            a,
            b,
            &FeatureExtractor::random_conv(1)
        )
        .unwrap())
            > 0.0
    );
}

#[test]
fn linear_extractor_matches_hand_convolution() {
    let kernel = Array::from_vec(&[1, 1, 1, 2, 2], vec![1.0, -2.0, 0.5, 3.0]);
    let fx = FeatureExtractor::linear(kernel.clone(), [0, 0]);
    let p = rand_array(5, &[1, 1, 4, 4, 1]);
    let t = rand_array(6, &[1, 1, 4, 4, 1]);
    let k = kernel.data();
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let conv = |x: &Array<f64>| {
                k[0] * x.at(&[0, 0, i, j, 0])
                    + k[1] * x.at(&[0, 0, i, j + 1, 0])
                    + k[2] * x.at(&[0, 0, i + 1, j, 0])
                    + k[3] * x.at(&[0, 0, i + 1, j + 1, 0])
            };
            acc += (conv(&p) - conv(&t)).powi(2);
        }
    }
    let got = eval(&p, &t, |a, b| perceptual_loss(a, b, &fx).unwrap());
    assert!((got - acc / 9.0).abs() < 1e-13, "{got} vs {}", acc / 9.0);
}

#[test]
fn perceptual_ignores_slice_order() {
    let fx = FeatureExtractor::random_conv(2);
    let p = rand_array(7, &[1, 1, 8, 8, 4]);
    let t = rand_array(8, &[1, 1, 8, 8, 4]);
    let perm = [2, 0, 3, 1];
    let reorder =
        |x: &Array<f64>| Array::from_fn(x.shape(), |i| x.data()[(i / 4) * 4 + perm[i % 4]]);
    let a = eval(&p, &t, |a, b| perceptual_loss(a, b, &fx).unwrap());
    let b = eval(&reorder(&p), &reorder(&t), |a, b| {
        perceptual_loss(a, b, &fx).unwrap()
    });
    assert!((a - b).abs() < 1e-12 * a);
}

#[test]
fn incompatible_slice_rejected() {
    let fx = FeatureExtractor::random_conv(2);
    let p = rand_array(9, &[1, 1, 6, 6, 2]);
    let tape = Tape::inference();
    assert!(perceptual_loss(tape.constant(p.clone()), tape.constant(p), &fx).is_err());
}

fn breakdown_values(
    p: &Array<f64>,
    t: &Array<f64>,
    w: &LossWeights,
    fx: &FeatureExtractor,
) -> LossValues {
    let tape = Tape::inference();
    let b: LossBreakdown<'_, f64> =
        combined_loss(tape.constant(p.clone()), tape.constant(t.clone()), w, fx).unwrap();
    b.values()
}

#[test]
fn combined_is_weighted_sum() {
    let w = LossWeights::default();
    assert!((combine_values(0.01, 0.1, 0.05, &w) - 0.12).abs() < 1e-15);
    let fx = FeatureExtractor::random_conv(3);
    let p = rand_array(10, &[1, 1, 8, 8, 2]);
    let t = rand_array(11, &[1, 1, 8, 8, 2]);
    let v = breakdown_values(&p, &t, &w, &fx);
    assert!((v.total - combine_values(v.mse, v.l1, v.perceptual, &w)).abs() < 1e-14);
    let no_p = breakdown_values(
        &p,
        &t,
        &LossWeights {
            gamma_loss: 0.0,
            ..w
        },
        &fx,
    );
    assert_eq!(no_p.total, no_p.mse + no_p.l1);
    let double = breakdown_values(&p, &t, &LossWeights { lambda: 2.0, ..w }, &fx);
    assert!((double.total - v.total - v.l1).abs() < 1e-14);
    let tape = Tape::inference();
    let bad = LossWeights {
        lambda: -1.0,
        gamma_loss: 0.2,
    };
    assert!(combined_loss(tape.constant(p.clone()), tape.constant(t), &bad, &fx).is_err());
}

#[test]
fn combined_gradient_matches_finite_differences() {
    let fx = FeatureExtractor::random_conv(4);
    let w = LossWeights::default();
    let x = rand_array(12, &[1, 1, 8, 8, 2]);
    let t = rand_array(13, &[1, 1, 8, 8, 2]);
    // pred = sigmoid(a * x + b) * c
    let loss = |theta: [f64; 3]| -> (f64, [f64; 3]) {
        let tape = Tape::new();
        let ps = theta.map(|v| tape.leaf(Array::full(&[1, 1, 1, 1, 1], v)));
        let pred = tape
            .constant(x.clone())
            .mul_bcast(ps[0])
            .add_bcast(ps[1])
            .sigmoid()
            .mul_bcast(ps[2]);
        let l = combined_loss(pred, tape.constant(t.clone()), &w, &fx)
            .unwrap()
            .total;
        let g = tape.backward(l);
        (l.item(), ps.map(|p| g.wrt(p).unwrap().item()))
    };
    let theta = [0.7, -0.2, 0.9];
    let (_, g) = loss(theta);
    let eps = 1e-6;
    for i in 0..3 {
        let mut hi = theta;
        hi[i] += eps;
        let mut lo = theta;
        lo[i] -= eps;
        let fd = (loss(hi).0 - loss(lo).0) / (2.0 * eps);
        assert!(
            (fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-8),
            "param {i}: fd {fd} vs {}",
            g[i]
        );
    }
}
