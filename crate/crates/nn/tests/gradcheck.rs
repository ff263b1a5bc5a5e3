//! Finite-difference checks of every layer's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermomark_nn::loss;
use thermomark_nn::{
    AvgPool2, Conv2d, ConvTranspose2d, GlobalAvgPool, Layer, Linear, MaxPool2, Model, Sequential,
    Sigmoid, Tensor,
};

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// loss = Σ out · probe, so d loss / d out = probe.
fn probe_loss(net: &Sequential, x: &Tensor, probe: &Tensor) -> f64 {
    net.forward(x)
        .data()
        .iter()
        .zip(probe.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

fn check(mut net: Sequential, in_shape: [usize; 4], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, in_shape);
    let out_shape = *net.shape_trace(in_shape).last().unwrap();
    let probe = random_tensor(&mut rng, out_shape);

    net.zero_grad();
    let out = net.forward_train(&x);
    assert_eq!(out.shape(), out_shape);
    let dx = net.backward(&probe);

    let eps = 2e-3f32;
    let tol = |a: f64, b: f64| (a - b).abs() <= 2e-2 * a.abs().max(b.abs()).max(0.05);

    for i in (0..x.len()).step_by((x.len() / 17).max(1)) {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let fd = (probe_loss(&net, &xp, &probe) - probe_loss(&net, &xm, &probe)) / (2.0 * eps as f64);
        let an = dx.data()[i] as f64;
        assert!(tol(fd, an), "input grad {i}: fd {fd} analytic {an}");
    }

    let grads: Vec<Vec<f32>> = net.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, g) in grads.iter().enumerate() {
        for j in (0..g.len()).step_by((g.len() / 11).max(1)) {
            let orig = net.params()[pi].value[j];
            net.params_mut()[pi].value[j] = orig + eps;
            let lp = probe_loss(&net, &x, &probe);
            net.params_mut()[pi].value[j] = orig - eps;
            let lm = probe_loss(&net, &x, &probe);
            net.params_mut()[pi].value[j] = orig;
            let fd = (lp - lm) / (2.0 * eps as f64);
            let name = net.params()[pi].name.clone();
            assert!(tol(fd, g[j] as f64), "{name}[{j}]: fd {fd} analytic {}", g[j]);
        }
    }
}

#[test]
fn conv2d_stride_one_and_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Sequential::new()
        .with(Conv2d::new("a", 2, 3, 3, 1, 1, &mut rng))
        .with(Sigmoid::default())
        .with(Conv2d::new("b", 3, 2, 3, 2, 1, &mut rng));
    check(net, [2, 2, 7, 6], 11);
}

#[test]
fn conv_transpose_with_output_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Sequential::new()
        .with(ConvTranspose2d::new("t", 3, 2, 3, 2, 1, 1, &mut rng))
        .with(Sigmoid::default())
        .with(ConvTranspose2d::new("u", 2, 2, 2, 2, 0, 0, &mut rng));
    check(net, [2, 3, 3, 4], 12);
}

#[test]
fn pooling_and_linear_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Sequential::new()
        .with(Conv2d::new("c", 1, 4, 3, 1, 1, &mut rng))
        .with(MaxPool2::default())
        .with(AvgPool2::default())
        .with(GlobalAvgPool::default())
        .with(Linear::new("fc", 4, 3, &mut rng));
    check(net, [3, 1, 8, 8], 13);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // With shared weights and no bias, <conv(x), y> == <x, convT(y)>.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let conv = Conv2d::new("c", 3, 5, 3, 2, 1, &mut rng);
    let mut convt = ConvTranspose2d::new("t", 5, 3, 3, 2, 1, 1, &mut rng);
    // conv weight is out×(in·k·k) = 5×27; convT weight is in×(out·k·k) = 5×27.
    convt.weight.value.copy_from_slice(&conv.weight.value);
    let x = random_tensor(&mut rng, [1, 3, 8, 8]);
    let y = random_tensor(&mut rng, [1, 5, 4, 4]);
    let cx = conv.forward(&x);
    let ty = convt.forward(&y);
    assert_eq!(ty.shape(), x.shape());
    let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
    let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
    assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
}

#[test]
fn losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random_tensor(&mut rng, [2, 1, 3, 3]);
    let t = Tensor::from_vec([2, 1, 3, 3], (0..18).map(|i| (i % 3 == 0) as u8 as f32).collect());
    type LossFn = fn(&Tensor, &Tensor) -> (f64, Tensor);
    let fns: [(&str, LossFn); 3] = [
        ("mse", loss::mse),
        ("bce", loss::bce_with_logits),
        ("dice", loss::soft_dice_with_logits),
    ];
    for (name, f) in fns {
        let (_, g) = f(&z, &t);
        for i in 0..z.len() {
            let eps = 1e-3f32;
            let mut zp = z.clone();
            zp.data_mut()[i] += eps;
            let mut zm = z.clone();
            zm.data_mut()[i] -= eps;
            let fd = (f(&zp, &t).0 - f(&zm, &t).0) / (2.0 * eps as f64);
            let an = g.data()[i] as f64;
            assert!((fd - an).abs() < 1e-3 * fd.abs().max(1e-1), "{name}[{i}]: {fd} vs {an}");
        }
    }
}
