//! Central finite-difference checks of every differentiable operation,
//! including gradients of gradients.

use coloc_autograd::{grad, ConvGeom, Tensor, Var};

fn pseudo(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Relative error between an analytic gradient and central differences of
/// `f` around `x`.
fn check(x: &Tensor<f64>, f: impl Fn(&Var<f64>) -> Var<f64>) -> f64 {
    let v = Var::leaf(x.clone());
    let out = f(&v);
    let g = grad(&out, &[&v], false)[0]
        .clone()
        .map(|g| g.value().clone())
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let h = 1e-6;
    let mut num = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fp = f(&Var::constant(xp)).value().sum();
        let fm = f(&Var::constant(xm)).value().sum();
        num[i] = (fp - fm) / (2.0 * h);
    }
    let diff: f64 = g
        .data()
        .iter()
        .zip(&num)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = g
        .data()
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn elementwise_ops() {
    let x = pseudo(vec![3, 4], 1);
    let c = Var::constant(pseudo(vec![3, 4], 2));
    let row = Var::constant(pseudo(vec![4], 3));
    let cases: Vec<(&str, Box<dyn Fn(&Var<f64>) -> Var<f64>>)> = vec![
        ("add", Box::new(|v| v.add(&c).square())),
        ("sub", Box::new(|v| row.sub(v).square())),
        ("mul", Box::new(|v| v.mul(&row).mul(v))),
        ("scale", Box::new(|v| v.scale(-2.5).square())),
        ("powf", Box::new(|v| v.square().add_scalar(0.5).powf(-0.5))),
        ("sqrt", Box::new(|v| v.square().add_scalar(0.1).sqrt())),
        (
            "recip",
            Box::new(|v| v.square().add_scalar(0.3).safe_recip()),
        ),
        ("sigmoid", Box::new(|v| v.scale(3.0).sigmoid())),
        ("softplus", Box::new(|v| v.scale(4.0).softplus())),
        ("tanh", Box::new(|v| v.scale(2.0).tanh().mul(&c))),
        (
            "leaky",
            Box::new(|v| v.add_scalar(0.01).leaky_relu(0.2).mul(&c)),
        ),
        ("mean_axes", Box::new(|v| v.mean_axes(&[0]).square())),
        (
            "broadcast",
            Box::new(|v| v.sum_axes(&[1]).broadcast_to(&[3, 4]).mul(&c)),
        ),
        (
            "reshape",
            Box::new(|v| v.reshape(vec![2, 6]).sum_axes(&[1]).square()),
        ),
        ("sum_all", Box::new(|v| v.sum_all().square())),
    ];
    for (name, f) in cases {
        let err = check(&x, f);
        assert!(err < 1e-7, "{name}: relative error {err}");
    }
}

#[test]
fn matmul_all_transposes() {
    let a = pseudo(vec![3, 4], 5);
    let b = pseudo(vec![4, 2], 6);
    let bt = pseudo(vec![2, 4], 7);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let (lhs, rhs) = match (ta, tb) {
            (false, false) => (a.clone(), b.clone()),
            (true, false) => (a.reshape(vec![4, 3]), b.clone()),
            (false, true) => (a.clone(), bt.clone()),
            (true, true) => (a.reshape(vec![4, 3]), bt.clone()),
        };
        let r = Var::constant(rhs.clone());
        let err = check(&lhs, |v| v.matmul_t(&r, ta, tb).square());
        assert!(err < 1e-7, "lhs ({ta},{tb}): {err}");
        let l = Var::constant(lhs.clone());
        let err = check(&rhs, |v| l.matmul_t(v, ta, tb).square());
        assert!(err < 1e-7, "rhs ({ta},{tb}): {err}");
    }
}

#[test]
fn convolution_family() {
    let g = ConvGeom::new((6, 6), 2, 3, 4, 2, (1, 1)).unwrap();
    let x = pseudo(g.input_shape(2).to_vec(), 9);
    let w = pseudo(g.weight_shape().to_vec(), 10);
    let gy = pseudo(g.output_shape(2).to_vec(), 11);
    let (xv, wv, gyv) = (
        Var::constant(x.clone()),
        Var::constant(w.clone()),
        Var::constant(gy.clone()),
    );
    assert!(check(&x, |v| v.conv2d(&wv, g).square()) < 1e-7);
    assert!(check(&w, |v| xv.conv2d(v, g).square()) < 1e-7);
    assert!(check(&gy, |v| v.conv2d_transpose(&wv, g).square()) < 1e-7);
    assert!(check(&w, |v| gyv.conv2d_transpose(v, g).square()) < 1e-7);
}

/// d/dw of ||∇_x f(x, w)||² where f is a small conv net; exercises every
/// pullback-of-a-pullback path used by gradient penalties.
#[test]
fn second_order_through_conv_net() {
    let g1 = ConvGeom::new((6, 6), 2, 3, 4, 2, (1, 1)).unwrap();
    let g2 = ConvGeom::new((3, 3), 3, 2, 2, 1, (0, 0)).unwrap();
    let x = pseudo(g1.input_shape(2).to_vec(), 12);
    let w1 = pseudo(g1.weight_shape().to_vec(), 13);
    let w2 = pseudo(g2.weight_shape().to_vec(), 14);
    let lin = Var::constant(pseudo(vec![2, 1], 15));
    let penalty = |w1v: &Var<f64>, w2v: &Var<f64>| {
        let xv = Var::leaf(x.clone());
        let h = xv.conv2d(w1v, g1);
        let mean = h.mean_axes(&[1, 2, 3]);
        let centered = h.sub(&mean);
        let var = centered.square().mean_axes(&[1, 2, 3]).add_scalar(1e-5);
        let h = centered.mul(&var.powf(-0.5)).leaky_relu(0.2);
        let h = h.conv2d(w2v, g2).tanh();
        let pooled = h.mean_axes(&[1, 2]).reshape(vec![2, 2]);
        let logits = pooled.matmul(&lin).softplus();
        let gx = grad(&logits.sum_all(), &[&xv], true)[0].clone().unwrap();
        let norms = gx.square().sum_axes(&[1, 2, 3]).sqrt();
        norms.add_scalar(-1.0).square().mean_all()
    };
    let w2c = Var::constant(w2.clone());
    let err = check(&w1, |v| penalty(v, &w2c));
    assert!(err < 1e-6, "w1 second order: {err}");
    let w1c = Var::constant(w1.clone());
    let err = check(&w2, |v| penalty(&w1c, v));
    assert!(err < 1e-6, "w2 second order: {err}");
}

#[test]
fn unrelated_input_has_no_gradient() {
    let a = Var::leaf(Tensor::<f64>::ones(vec![2]));
    let b = Var::leaf(Tensor::<f64>::ones(vec![2]));
    let out = a.square().sum_all();
    let g = grad(&out, &[&a, &b], false);
    assert!(g[0].is_some());
    assert!(g[1].is_none());
}

#[test]
fn sqrt_at_zero_has_zero_gradient() {
    let a = Var::leaf(Tensor::<f64>::zeros(vec![3]));
    let out = a.sqrt().sum_all();
    let g = grad(&out, &[&a], false)[0].clone().unwrap();
    assert!(g.value().data().iter().all(|v| *v == 0.0));
}

#[test]
fn stable_softplus_extremes() {
    let x = Var::<f32>::constant(Tensor::new(vec![4], vec![-80.0, -1.0, 1.0, 80.0]));
    let y = x.softplus();
    assert!(y.value().all_finite());
    assert!((y.value().data()[3] - 80.0).abs() < 1e-4);
    assert!(y.value().data()[0] >= 0.0);
}
