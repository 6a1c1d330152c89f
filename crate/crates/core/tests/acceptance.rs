//! Acceptance checks, one PASS/FAIL line each. `ACCEPTANCE_ONLY=1,4` runs a
//! subset.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use coloc_core::autograd::{grad, Tensor, Var};
use coloc_core::checkpoint::Checkpoint;
use coloc_core::config::ExperimentConfig;
use coloc_core::data::{build_dataset, find_spec, synthetic_dataset, AnnotatedImage};
use coloc_core::evaluation::{gt_known_loc, iou, ms_ssim, ms_ssim_diversity, ImageSampler};
use coloc_core::experiment::run_experiment;
use coloc_core::localization::{connected_components, localize};
use coloc_core::losses::{
    d_loss_ns_logits, g_loss_ns_logits, gradient_penalty, perturb_anchor, wgan_d_loss, wgan_g_loss,
    Critic, PenaltyMode,
};
use coloc_core::models::{
    spectral_normalize, Activation, BindOptions, Bound, FeatureNorm, LayerKind, LayerSpec, Net,
    NormMode, Normalization, ParamStore,
};
use coloc_core::saliency::raw_cam;
use coloc_core::training::{log_lines, train, TrainOptions};
use coloc_core::{
    AugmentationPolicy, BBox, Connectivity, DiscriminatorReadout, Gan, GanConfig, LocalizeOptions,
    SaliencyMap, Trainer, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// --- 1 ----------------------------------------------------------------------

fn expected_shapes(size: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let g = vec![
        vec![4, 4, 128],
        vec![8, 8, 512],
        vec![16, 16, 256],
        vec![32, 32, 128],
        vec![size, size, 3],
    ];
    let d = vec![
        vec![size / 2 * (64 / size), size / 2 * (64 / size), 64],
        vec![16, 16, 128],
        vec![8, 8, 256],
        vec![4, 4, 512],
        vec![1, 1, 512],
        vec![1],
    ];
    (g, d)
}

fn ac1_architecture() -> Check {
    let mut runs = 0;
    for size in [64, 32] {
        let (g_want, d_want) = expected_shapes(size);
        for v in Variant::ALL {
            let cfg = GanConfig::new(v, size);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let gan = Gan::<f32>::new(&cfg, &mut rng).map_err(err)?;
            let z: Tensor<f32> = gan.sample_latent(2, &mut rng);
            let g = gan
                .generator
                .bind(&gan.params, &gan.buffers, BindOptions::INFERENCE)
                .map_err(err)?;
            let gf = g.forward(&Var::constant(z)).map_err(err)?;
            ensure(gf.shapes == g_want, || {
                format!("{v} {size}px generator shapes {:?}", gf.shapes)
            })?;
            let d = gan
                .discriminator
                .bind(&gan.params, &gan.buffers, BindOptions::INFERENCE)
                .map_err(err)?;
            let df = d
                .forward(&Var::constant(gf.output.value().clone()))
                .map_err(err)?;
            ensure(df.shapes == d_want, || {
                format!("{v} {size}px discriminator shapes {:?}", df.shapes)
            })?;
            let strides: Vec<usize> = gan.discriminator.layers.iter().map(|l| l.stride).collect();
            let first = if size == 32 { 1 } else { 2 };
            ensure(strides[0] == first, || {
                format!("{v} {size}px first conv stride {}", strides[0])
            })?;
            let last_g = gan.generator.layers.last().unwrap().stride;
            ensure(last_g == first, || {
                format!("{v} {size}px last deconv stride {last_g}")
            })?;
            let norms: Vec<Normalization> = gan
                .discriminator
                .layers
                .iter()
                .flat_map(|l| l.normalizations())
                .collect();
            let count = |n: Normalization| norms.iter().filter(|x| **x == n).count();
            let (bn, ln, sn) = (
                count(Normalization::Batch),
                count(Normalization::Layer),
                count(Normalization::Spectral),
            );
            let want = match v {
                Variant::Dcgan | Variant::Dragan => (4, 0, 0),
                Variant::SnDcgan => (0, 0, 5),
                Variant::WganGp => (0, 4, 0),
                Variant::SnWganGp => (0, 4, 5),
            };
            ensure((bn, ln, sn) == want, || {
                format!("{v}: (batch, layer, spectral) norms {:?}", (bn, ln, sn))
            })?;
            let g_sn = gan.generator.layers.iter().filter(|l| l.spectral).count();
            ensure(g_sn == 0, || {
                format!("{v}: generator has spectral normalization")
            })?;
            let r = gan.discriminator_forward(gf.output.value()).map_err(err)?;
            ensure(r.gap_weights.numel() == 512, || {
                format!("{v}: K = {}", r.gap_weights.numel())
            })?;
            runs += 1;
        }
    }
    Ok(format!("{runs} variant/size combinations match"))
}

// --- 2 ----------------------------------------------------------------------

fn layer(
    name: &str,
    kind: LayerKind,
    k: usize,
    s: usize,
    c: usize,
    norm: FeatureNorm,
    sn: bool,
    act: Activation,
    out: Vec<usize>,
) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind,
        kernel: k,
        stride: s,
        padding: if matches!(kind, LayerKind::Conv | LayerKind::TransposedConv) {
            (1, 1)
        } else {
            (0, 0)
        },
        out_channels: c,
        norm,
        spectral: sn,
        activation: act,
        output_shape: out,
    }
}

fn tiny_critic(norm: FeatureNorm, sn: bool) -> Net {
    let lrelu = Activation::LeakyRelu(0.2);
    Net::new(
        "discriminator",
        vec![4, 4, 3],
        vec![
            layer(
                "conv1",
                LayerKind::Conv,
                3,
                1,
                4,
                norm,
                sn,
                lrelu,
                vec![4, 4, 4],
            ),
            layer(
                "conv2",
                LayerKind::Conv,
                3,
                2,
                4,
                FeatureNorm::None,
                sn,
                lrelu,
                vec![2, 2, 4],
            ),
            layer(
                "gap",
                LayerKind::GlobalAveragePool,
                1,
                1,
                4,
                FeatureNorm::None,
                false,
                Activation::None,
                vec![1, 1, 4],
            ),
            layer(
                "fc",
                LayerKind::Linear,
                1,
                1,
                1,
                FeatureNorm::None,
                sn,
                Activation::None,
                vec![1],
            ),
        ],
    )
    .unwrap()
}

fn tiny_generator() -> Net {
    Net::new(
        "generator",
        vec![4],
        vec![
            layer(
                "fc",
                LayerKind::Linear,
                1,
                1,
                12,
                FeatureNorm::Batch,
                false,
                Activation::Relu,
                vec![2, 2, 3],
            ),
            layer(
                "deconv",
                LayerKind::TransposedConv,
                4,
                2,
                3,
                FeatureNorm::None,
                false,
                Activation::Tanh,
                vec![4, 4, 3],
            ),
        ],
    )
    .unwrap()
}

const TRAIN: BindOptions = BindOptions {
    trainable: true,
    sn_iterations: 0,
    mode: NormMode::Batch,
};
const FIXED: BindOptions = BindOptions {
    trainable: false,
    sn_iterations: 0,
    mode: NormMode::Batch,
};

fn grads_of(loss: &Var<f64>, bounds: &[&Bound<'_, f64>]) -> Vec<(String, Tensor<f64>)> {
    let leaves: Vec<(String, Var<f64>)> = bounds.iter().flat_map(|b| b.leaves().to_vec()).collect();
    let refs: Vec<&Var<f64>> = leaves.iter().map(|(_, v)| v).collect();
    let g = grad(loss, &refs, false);
    leaves
        .into_iter()
        .zip(g)
        .map(|((n, v), g)| {
            (
                n,
                g.map(|g| g.value().clone())
                    .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec())),
            )
        })
        .collect()
}

type LossFn<'a> = dyn Fn(&ParamStore<f64>, bool) -> (f64, Vec<(String, Tensor<f64>)>) + 'a;

/// Worst `|a - n| / max(|a|, |n|, 1e-6)` over every parameter entry.
fn max_relative_error(params: &ParamStore<f64>, f: &LossFn) -> (f64, usize) {
    let h = 1e-6;
    let (_, analytic) = f(params, true);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (name, g) in &analytic {
        for i in 0..g.numel() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += h;
            let lp = f(&p, false).0;
            p.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
            let lm = f(&p, false).0;
            let num = (lp - lm) / (2.0 * h);
            let a = g.data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
            n += 1;
        }
    }
    (worst, n)
}

fn ac2_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let critic_bn = tiny_critic(FeatureNorm::Batch, false);
    let critic_ln = tiny_critic(FeatureNorm::Layer, true);
    let generator = tiny_generator();
    let mut params_bn = ParamStore::new();
    let mut params_ln = ParamStore::new();
    let mut buffers = ParamStore::new();
    generator.init(&mut rng, &mut params_bn, &mut buffers);
    critic_bn.init(&mut rng, &mut params_bn, &mut buffers);
    generator.init(&mut rng, &mut params_ln, &mut buffers);
    critic_ln.init(&mut rng, &mut params_ln, &mut buffers);
    // Larger weights keep activations away from the leaky-ReLU kink scale.
    for store in [&mut params_bn, &mut params_ln] {
        let names: Vec<String> = store
            .names()
            .into_iter()
            .filter(|n| n.ends_with("weight"))
            .cloned()
            .collect();
        for n in names {
            store
                .get_mut(&n)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= 20.0);
        }
    }
    let d_count = params_ln.count_with_prefix("discriminator");
    let g_count = params_ln.count_with_prefix("generator");
    let img =
        |rng: &mut ChaCha8Rng| Tensor::from_fn(vec![3, 4, 4, 3], |_| rng.random_range(-1.0..1.0));
    let real = img(&mut rng);
    let fake = img(&mut rng);
    let z = Tensor::from_fn(vec![3, 4], |_| rng.random_range(-1.0..1.0));
    let anchor = perturb_anchor(&real, 0.5, &mut rng);
    let opts = |t: bool| if t { TRAIN } else { FIXED };

    let cases: Vec<(&str, &ParamStore<f64>, Box<LossFn>)> = vec![
        (
            "non-saturating discriminator loss",
            &params_bn,
            Box::new(|p, t| {
                let d = critic_bn.bind(p, &buffers, opts(t)).unwrap();
                let r = d.scores(&Var::constant(real.clone())).unwrap();
                let f = d.scores(&Var::constant(fake.clone())).unwrap();
                let l = d_loss_ns_logits(&r, &f);
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&d]) } else { vec![] },
                )
            }),
        ),
        (
            "non-saturating generator loss",
            &params_bn,
            Box::new(|p, t| {
                let g = generator.bind(p, &buffers, opts(t)).unwrap();
                let d = critic_bn.bind(p, &buffers, opts(t)).unwrap();
                let x = g.forward(&Var::constant(z.clone())).unwrap().output;
                let l = g_loss_ns_logits(&d.scores(&x).unwrap());
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&g, &d]) } else { vec![] },
                )
            }),
        ),
        (
            "wasserstein critic loss",
            &params_ln,
            Box::new(|p, t| {
                let d = critic_ln.bind(p, &buffers, opts(t)).unwrap();
                let r = d.scores(&Var::constant(real.clone())).unwrap();
                let f = d.scores(&Var::constant(fake.clone())).unwrap();
                let l = wgan_d_loss(&r, &f);
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&d]) } else { vec![] },
                )
            }),
        ),
        (
            "wasserstein generator loss",
            &params_ln,
            Box::new(|p, t| {
                let g = generator.bind(p, &buffers, opts(t)).unwrap();
                let d = critic_ln.bind(p, &buffers, opts(t)).unwrap();
                let x = g.forward(&Var::constant(z.clone())).unwrap().output;
                let l = wgan_g_loss(&d.scores(&x).unwrap());
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&g, &d]) } else { vec![] },
                )
            }),
        ),
        (
            "interpolation penalty",
            &params_ln,
            Box::new(|p, t| {
                let d = critic_ln.bind(p, &buffers, opts(t)).unwrap();
                let mut r = ChaCha8Rng::seed_from_u64(7);
                let l = gradient_penalty(&d, &real, &fake, PenaltyMode::Interpolate, &mut r)
                    .unwrap()
                    .penalty;
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&d]) } else { vec![] },
                )
            }),
        ),
        (
            "perturbation penalty",
            &params_bn,
            Box::new(|p, t| {
                let d = critic_bn.bind(p, &buffers, opts(t)).unwrap();
                let mut r = ChaCha8Rng::seed_from_u64(8);
                let l = gradient_penalty(&d, &real, &anchor, PenaltyMode::Perturb, &mut r)
                    .unwrap()
                    .penalty;
                (
                    l.value().item(),
                    if t { grads_of(&l, &[&d]) } else { vec![] },
                )
            }),
        ),
    ];
    let mut summary = Vec::new();
    let mut worst_all: f64 = 0.0;
    for (name, params, f) in &cases {
        let (worst, n) = max_relative_error(params, f.as_ref());
        ensure(n > 0, || format!("{name}: no parameters checked"))?;
        ensure(worst < 1e-4, || {
            format!("{name}: relative error {worst:.3e} over {n} entries")
        })?;
        summary.push(format!("{name} {worst:.1e}"));
        worst_all = worst_all.max(worst);
    }
    ensure(d_count + g_count <= 500, || {
        format!("{} parameters", d_count + g_count)
    })?;
    Ok(format!(
        "max relative error {worst_all:.2e} ({} discriminator + {} generator parameters): {}",
        d_count,
        g_count,
        summary.join(", ")
    ))
}

// --- 3 ----------------------------------------------------------------------

struct LinearCritic {
    w: Tensor<f64>,
    gain: f64,
}

impl Critic<f64> for LinearCritic {
    fn scores(&self, x: &Var<f64>) -> coloc_core::Result<Var<f64>> {
        let n = x.shape()[0];
        let axes: Vec<usize> = (1..x.shape().len()).collect();
        Ok(x.mul(&Var::constant(self.w.clone()))
            .sum_axes(&axes)
            .reshape(vec![n])
            .scale(self.gain))
    }
}

struct ConstantCritic(f64);

impl Critic<f64> for ConstantCritic {
    fn scores(&self, x: &Var<f64>) -> coloc_core::Result<Var<f64>> {
        Ok(Var::constant(Tensor::full(vec![x.shape()[0]], self.0)))
    }
}

fn ac3_penalty_zero_point() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = vec![6, 5, 5, 3];
    let raw: Vec<f64> = (0..75).map(|_| rng.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w = Tensor::new(vec![1, 5, 5, 3], raw.iter().map(|v| v / norm).collect());
    let mut worst = [0.0f64; 3];
    for trial in 0..20 {
        let real = Tensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
        let other = Tensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0));
        let mode = if trial % 2 == 0 {
            PenaltyMode::Interpolate
        } else {
            PenaltyMode::Perturb
        };
        let unit = LinearCritic {
            w: w.clone(),
            gain: 1.0,
        };
        let p = gradient_penalty(&unit, &real, &other, mode, &mut rng)
            .map_err(err)?
            .penalty
            .value()
            .item();
        ensure(p < 1e-10, || {
            format!("unit-norm linear critic penalty {p:e}")
        })?;
        worst[0] = worst[0].max(p);
        let c = gradient_penalty(&ConstantCritic(0.7), &real, &other, mode, &mut rng)
            .map_err(err)?
            .penalty
            .value()
            .item();
        ensure((c - 1.0).abs() <= 1e-6, || {
            format!("constant critic penalty {c}")
        })?;
        worst[1] = worst[1].max((c - 1.0).abs());
        let scaled = LinearCritic {
            w: w.clone(),
            gain: 3.0,
        };
        let s = gradient_penalty(&scaled, &real, &other, mode, &mut rng)
            .map_err(err)?
            .penalty
            .value()
            .item();
        ensure((s - 4.0).abs() <= 1e-4, || {
            format!("gain-3 critic penalty {s}")
        })?;
        worst[2] = worst[2].max((s - 4.0).abs());
    }
    // Finite-difference view of the gain-3 case: the directional slope along
    // w is 3, so (3 - 1)^2 = 4.
    let x0 = Tensor::from_fn(vec![1, 5, 5, 3], |_| rng.random_range(-1.0..1.0));
    let f = |t: f64| -> f64 {
        let x = Tensor::from_fn(vec![1, 5, 5, 3], |i| x0.data()[i] + t * w.data()[i]);
        3.0 * x
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let slope = (f(1e-4) - f(-1e-4)) / 2e-4;
    ensure(((slope - 1.0).powi(2) - 4.0).abs() < 1e-6, || {
        format!("finite-difference slope {slope}")
    })?;
    Ok(format!(
        "unit {:.1e}, constant |p-1| {:.1e}, gain-3 |p-4| {:.1e} over 20 batches",
        worst[0], worst[1], worst[2]
    ))
}

// --- 4 ----------------------------------------------------------------------

fn ac4_spectral() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sigma, mut worst_unit): (f64, f64) = (0.0, 0.0);
    let iterations = 500;
    for _ in 0..100 {
        let rows = rng.random_range(2..=16);
        let cols = rng.random_range(2..=48);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let w = Tensor::new(vec![rows, cols], data.clone());
        let u0: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = Tensor::new(vec![rows], u0.iter().map(|v| v / norm).collect());
        let out = spectral_normalize(&w, &u, iterations);
        let oracle = common::top_singular_value(rows, cols, &data);
        let e = (out.sigma - oracle).abs();
        ensure(e <= 1e-3, || {
            format!("{rows}x{cols}: sigma {} vs SVD {oracle}", out.sigma)
        })?;
        let after = common::top_singular_value(rows, cols, out.normalized.data());
        ensure((after - 1.0).abs() <= 1e-3, || {
            format!("{rows}x{cols}: normalized top singular value {after}")
        })?;
        worst_sigma = worst_sigma.max(e);
        worst_unit = worst_unit.max((after - 1.0).abs());
    }
    Ok(format!(
        "100 matrices, {iterations} iterations: max |sigma - svd| {worst_sigma:.1e}, max |s1 - 1| {worst_unit:.1e}"
    ))
}

// --- 5 ----------------------------------------------------------------------

fn ac5_cam() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let shape = [
            rng.random_range(1..=4),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=32),
        ];
        let feats: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let weights: Vec<f64> = (0..shape[3]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let readout = DiscriminatorReadout {
            logits: Tensor::zeros(vec![shape[0]]),
            feature_maps: Tensor::new(shape.to_vec(), feats.clone()),
            gap_weights: Tensor::new(vec![shape[3]], weights.clone()),
            gap_bias: 0.0,
        };
        for i in 0..shape[0] {
            let raw = raw_cam(&readout, i).map_err(err)?;
            for r in 0..shape[1] {
                for c in 0..shape[2] {
                    let want = common::cam_pixel(&feats, shape, &weights, i, r, c);
                    worst = worst.max((raw.values[r * shape[2] + c] - want).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 readouts, max deviation {worst:.1e}"))
}

// --- 6 ----------------------------------------------------------------------

fn mask_map(mask: &[bool], h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::from_values(
        h,
        w,
        mask.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
    )
}

fn compare_mask(mask: &[bool], h: usize, w: usize) -> Result<(), String> {
    let bm = coloc_core::BinaryMask::new(h, w, mask.to_vec());
    let opts = LocalizeOptions::default();
    for (conn, eight) in [(Connectivity::Eight, true), (Connectivity::Four, false)] {
        let got = connected_components(&bm, conn);
        let want = common::flood_fill_components(mask, h, w, eight);
        ensure(got == want, || {
            format!("{conn:?} components differ for mask {mask:?}")
        })?;
    }
    let got = localize(&mask_map(mask, h, w), &opts).bbox;
    let want = common::best_box_oracle(mask, h, w);
    ensure(got == want, || {
        format!("box {got} vs oracle {want} for mask {mask:?}")
    })
}

fn ac6_post_processing() -> Check {
    for bits in 0u32..1 << 16 {
        let mask: Vec<bool> = (0..16).map(|i| bits >> i & 1 == 1).collect();
        compare_mask(&mask, 4, 4)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..1000 {
        let density = [0.1, 0.3, 0.5, 0.7][k % 4];
        let mask: Vec<bool> = (0..256).map(|_| rng.random_bool(density)).collect();
        compare_mask(&mask, 16, 16)?;
    }
    Ok("65536 4x4 masks and 1000 random 16x16 masks identical (8- and 4-connectivity, box selection)".into())
}

// --- 7 ----------------------------------------------------------------------

fn ac7_iou() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_box = |rng: &mut ChaCha8Rng| {
        let (x0, y0) = (rng.random_range(0..63), rng.random_range(0..63));
        BBox::new(
            x0,
            y0,
            rng.random_range(x0 + 1..=64),
            rng.random_range(y0 + 1..=64),
        )
    };
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let want = common::iou_by_counting(&a, &b, 64);
        let got = iou(&a, &b);
        ensure(got == want, || {
            format!("iou({a}, {b}) = {got}, counting gives {want}")
        })?;
        overlapping += (want > 0.0) as usize;
    }
    let a = BBox::new(0, 0, 10, 15);
    let b = BBox::new(0, 5, 10, 20);
    ensure(iou(&a, &b) == 0.5, || {
        "boundary pair is not exactly 0.5".into()
    })?;
    let acc = gt_known_loc(&[a], &[b]).map_err(err)?;
    ensure(acc == 0.0, || format!("IoU 0.5 counted correct ({acc})"))?;
    Ok(format!(
        "1000 pairs exact ({overlapping} overlapping); IoU = 0.5 counted incorrect"
    ))
}

// --- 8 ----------------------------------------------------------------------

const DESK_CONFIG: &str = "configs/desk/sn_dcgan_synthetic.conf";

fn ac8_desk_scale() -> Check {
    let path = repo_root().join(DESK_CONFIG);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = ExperimentConfig::parse(&text).map_err(err)?;
    ensure(
        cfg.gan.variant == Variant::SnDcgan && !cfg.gan.augmentation,
        || "desk config is not SN-DCGAN w/o augmentation".into(),
    )?;
    ensure(
        cfg.gan.input_size == 32 && cfg.dataset == "synthetic",
        || "desk config is not 32px synthetic".into(),
    )?;
    ensure(
        (
            cfg.synthetic_train,
            cfg.synthetic_test,
            cfg.synthetic_square,
        ) == (1000, 100, 12),
        || "synthetic dataset is not 1000/100 with 12x12 squares".into(),
    )?;
    ensure((cfg.ratio - 0.2).abs() < 1e-12, || {
        format!("ratio {}", cfg.ratio)
    })?;
    ensure(cfg.gan.max_iterations <= 5000, || {
        format!("{} generator iterations", cfg.gan.max_iterations)
    })?;
    let data = build_dataset(&cfg).map_err(err)?;
    let start = Instant::now();
    let mut trainer = Trainer::new(&cfg.gan, &cfg.augmentation).map_err(err)?;
    let outcome = run_experiment(&cfg, &data, &mut trainer, None, &mut ()).map_err(err)?;
    let elapsed = start.elapsed();
    let peak = outcome.peak_score().ok_or("no checkpoint scores")?;
    let curve: Vec<String> = outcome
        .scores
        .iter()
        .map(|s| format!("{}:{:.2}", s.iteration, s.gt_known_loc))
        .collect();
    let detail = format!(
        "peak GT-known Loc {:.2} at iteration {} of {} ({:.1} min; curve {})",
        peak.gt_known_loc,
        peak.iteration,
        cfg.gan.max_iterations,
        elapsed.as_secs_f64() / 60.0,
        curve.join(" ")
    );
    ensure(peak.gt_known_loc >= 0.5, || detail.clone())?;
    ensure(elapsed <= Duration::from_secs(30 * 60), || {
        format!("over 30 minutes: {detail}")
    })?;
    Ok(detail)
}

// --- 9 ----------------------------------------------------------------------

/// Reference GT-known Loc (%) per dataset: DCGAN w/o, DCGAN w/, SN-DCGAN
/// w/o, SN-DCGAN w/ augmentation.
const REFERENCE: [(&str, &str, [f64; 4]); 6] = [
    (
        "four_legs_animals",
        "Four-legs animals",
        [41.4, 43.0, 54.4, 44.0],
    ),
    ("bird", "Bird", [49.4, 52.3, 58.0, 60.6]),
    ("bottle", "Bottle", [36.0, 36.4, 38.0, 41.0]),
    ("cat", "Cat", [66.3, 71.8, 78.0, 76.5]),
    ("dog", "Dog", [55.0, 60.8, 63.0, 63.0]),
    ("vehicle", "Vehicle", [54.0, 61.7, 75.0, 68.0]),
];

fn ac9_reference_configs() -> Check {
    let dir = repo_root().join("configs/reference");
    let docs = std::fs::read_to_string(repo_root().join("docs/reference_results.md"))
        .map_err(|e| format!("docs/reference_results.md: {e}"))?;
    let mut n = 0;
    for (stem, dataset, numbers) in REFERENCE {
        ensure(find_spec(dataset).is_some(), || {
            format!("no dataset spec for {dataset}")
        })?;
        let cells = [
            (Variant::Dcgan, false),
            (Variant::Dcgan, true),
            (Variant::SnDcgan, false),
            (Variant::SnDcgan, true),
        ];
        for ((variant, aug), reference) in cells.into_iter().zip(numbers) {
            let file = dir.join(format!(
                "{stem}_{}_{}.conf",
                variant.to_string().to_lowercase(),
                if aug { "aug" } else { "noaug" }
            ));
            let text =
                std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let cfg =
                ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", file.display()))?;
            let g = &cfg.gan;
            ensure(
                g.variant == variant
                    && g.augmentation == aug
                    && g.input_size == 64
                    && g.batch_size == 128
                    && g.max_iterations == 250_000
                    && g.channel_divisor == 1
                    && find_spec(&cfg.dataset).map(|s| s.name)
                        == find_spec(dataset).map(|s| s.name),
                || {
                    format!(
                        "{} does not describe {dataset} {variant} aug={aug}",
                        file.display()
                    )
                },
            )?;
            ensure(text.contains(&format!("{reference:.1}")), || {
                format!("{} lacks reference {reference:.1}", file.display())
            })?;
            let row = docs
                .lines()
                .find(|l| l.contains(dataset))
                .ok_or_else(|| format!("docs lack a {dataset} row"))?;
            ensure(row.contains(&format!("{reference:.1}")), || {
                format!("docs row for {dataset} lacks {reference:.1}")
            })?;
            n += 1;
        }
    }
    Ok(format!(
        "{n} cell configs parse and match their variant/augmentation; reference numbers documented"
    ))
}

// --- 10 ---------------------------------------------------------------------

fn tiny_config(variant: Variant, seed: u64) -> GanConfig {
    let mut cfg = GanConfig::new(variant, 32);
    cfg.channel_divisor = 16;
    cfg.latent_dim = 16;
    cfg.batch_size = 8;
    cfg.seed = seed;
    cfg
}

fn tiny_data() -> Vec<AnnotatedImage> {
    synthetic_dataset(40, 1, 32, 12, &mut ChaCha8Rng::seed_from_u64(10))
        .unwrap()
        .train
}

struct LogCapture(String);

impl coloc_core::training::TrainObserver for LogCapture {
    fn on_step(
        &mut self,
        iteration: u64,
        losses: &coloc_core::losses::LossBundle,
    ) -> coloc_core::Result<()> {
        self.0.push_str(&log_lines(iteration, losses));
        Ok(())
    }
}

fn ac10_determinism() -> Check {
    let data = tiny_data();
    let mut cfg = tiny_config(Variant::Dragan, 21);
    cfg.augmentation = true;
    cfg.max_iterations = 100;
    let opts = TrainOptions {
        checkpoint_interval: 100,
        out_dir: None,
        keep_models: false,
    };
    let run = || -> Result<(String, Checkpoint), String> {
        let mut t = Trainer::new(&cfg, &AugmentationPolicy::default()).map_err(err)?;
        let mut log = LogCapture(String::new());
        train(&mut t, &data, &opts, &mut log).map_err(err)?;
        Ok((log.0, t.to_checkpoint()))
    };
    let (log_a, ck_a) = run()?;
    let (log_b, ck_b) = run()?;
    ensure(log_a.lines().count() == 100 * 6, || {
        format!("{} log lines", log_a.lines().count())
    })?;
    ensure(log_a == log_b, || {
        "loss logs differ between identical runs".into()
    })?;
    ensure(ck_a.to_bytes() == ck_b.to_bytes(), || {
        "iteration-100 checkpoints differ".into()
    })?;

    // Resume through a file and compare with an uninterrupted run.
    let mut cfg = tiny_config(Variant::WganGp, 22);
    cfg.augmentation = true;
    let policy = AugmentationPolicy::default();
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut straight = Trainer::new(&cfg, &policy).map_err(err)?;
    for _ in 0..5 {
        straight.step(&data).map_err(err)?;
    }
    let file = tmp.path().join("resume.ckpt");
    straight.to_checkpoint().save(&file).map_err(err)?;
    let mut resumed =
        Trainer::from_checkpoint(Checkpoint::load(&file).map_err(err)?).map_err(err)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a = straight.step(&data).map_err(err)?;
        let b = resumed.step(&data).map_err(err)?;
        for ((na, va), (nb, vb)) in a.entries().iter().zip(b.entries().iter()) {
            ensure(na == nb, || format!("log entries differ: {na} vs {nb}"))?;
            worst = worst.max((va - vb).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("resume deviates by {worst:e}"))?;
    Ok(format!("100-iteration logs and checkpoints identical; resume max deviation {worst:.1e} over 10 iterations"))
}

// --- 11 ---------------------------------------------------------------------

fn ac11_schedule() -> Check {
    let data = tiny_data();
    let mut seen = Vec::new();
    for v in Variant::ALL {
        let mut cfg = tiny_config(v, 30);
        cfg.max_iterations = 50;
        let mut t = Trainer::new(&cfg, &AugmentationPolicy::default()).map_err(err)?;
        let opts = TrainOptions {
            checkpoint_interval: 50,
            out_dir: None,
            keep_models: false,
        };
        train(&mut t, &data, &opts, &mut ()).map_err(err)?;
        let per = if v.is_wasserstein() { 5 } else { 1 };
        let c = t.counters;
        ensure(c.g_updates == 50 && c.d_updates == 50 * per, || {
            format!("{v}: {} D / {} G updates", c.d_updates, c.g_updates)
        })?;
        seen.push(format!("{v} {}:{}", c.d_updates, c.g_updates));
    }
    Ok(seen.join(", "))
}

// --- 12 ---------------------------------------------------------------------

struct Collapsed(Tensor<f32>);

impl ImageSampler for Collapsed {
    fn sample(
        &mut self,
        n: usize,
        _rng: &mut dyn rand::RngCore,
    ) -> coloc_core::Result<Tensor<f32>> {
        let per = self.0.numel();
        let mut shape = vec![n];
        shape.extend_from_slice(self.0.shape());
        Ok(Tensor::from_fn(shape, |i| self.0.data()[i % per]))
    }
}

fn ac12_ms_ssim() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_id: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for size in [32usize, 64] {
        let scales = if size == 64 { 3 } else { 2 };
        for _ in 0..10 {
            let n = size * size * 3;
            let a: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let same = ms_ssim(&a, &a, size, size, scales).map_err(err)?;
            worst_id = worst_id.max((same - 1.0).abs());
            let ab = ms_ssim(&a, &b, size, size, scales).map_err(err)?;
            let ba = ms_ssim(&b, &a, size, size, scales).map_err(err)?;
            ensure((0.0..=1.0).contains(&ab), || {
                format!("score {ab} outside [0, 1]")
            })?;
            worst_sym = worst_sym.max((ab - ba).abs());
        }
    }
    ensure(worst_id <= 1e-6, || {
        format!("identical pair off by {worst_id:e}")
    })?;
    ensure(worst_sym <= 1e-12, || format!("asymmetry {worst_sym:e}"))?;
    let mut collapsed = Collapsed(Tensor::full(vec![32, 32, 3], 0.25));
    let (mean, _) = ms_ssim_diversity(&mut collapsed, 50, &mut rng, None).map_err(err)?;
    ensure((mean - 1.0).abs() <= 1e-3, || {
        format!("collapsed generator mean {mean}")
    })?;
    let mut textured = Collapsed(Tensor::from_fn(vec![64, 64, 3], |i| {
        ((i * 31 % 17) as f32) / 8.5 - 1.0
    }));
    let (mean64, scales) = ms_ssim_diversity(&mut textured, 20, &mut rng, None).map_err(err)?;
    ensure((mean64 - 1.0).abs() <= 1e-3 && scales == 3, || {
        format!("64px collapsed mean {mean64}, {scales} scales")
    })?;
    Ok(format!(
        "identical |s-1| {worst_id:.1e}, asymmetry {worst_sym:.1e}, collapsed mean {mean:.6}"
    ))
}

// ----------------------------------------------------------------------------

fn main() {
    let checks: Vec<(u32, &str, fn() -> Check)> = vec![
        (1, "architecture conformance", ac1_architecture),
        (2, "gradient correctness", ac2_gradients),
        (3, "gradient-penalty zero point", ac3_penalty_zero_point),
        (4, "spectral normalization", ac4_spectral),
        (5, "CAM equivalence", ac5_cam),
        (6, "post-processing oracle", ac6_post_processing),
        (7, "IoU oracle", ac7_iou),
        (8, "desk-scale end-to-end", ac8_desk_scale),
        (
            9,
            "full-scale configs and reference numbers",
            ac9_reference_configs,
        ),
        (10, "determinism and resume", ac10_determinism),
        (11, "update schedule", ac11_schedule),
        (12, "MS-SSIM sanity", ac12_ms_ssim),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut results = BTreeMap::new();
    for (id, name, f) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        println!("AC{id:<2} {tag} {name} [{secs:.1}s]: {detail}");
        if outcome.is_err() {
            failed.push(id);
        }
        results.insert(id, outcome.is_ok());
    }
    let passed = results.values().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
