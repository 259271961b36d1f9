mod common;

use ntp_core::engine::kernels::{
    bilstm_forward, conv2d_forward, fc_forward, lstm_forward, softmax, KernelCtx, LstmWeights,
};
use ntp_core::graph::{Activation, ConvParams, Padding};
use ntp_core::{Axis, KernelCounters, Tensor, TensorShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn tensor(axes: &[(Axis, usize)], data: Vec<f32>) -> Tensor {
    Tensor::new(TensorShape::fp32(axes), data)
}

#[test]
fn fc_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let (t, b, i, o) = (
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let clip = (case % 2 == 0).then_some(0.5f32);
        let x = values(&mut rng, t * b * i);
        let w = values(&mut rng, i * o);
        let bias = values(&mut rng, o);
        let act = clip.map_or(Activation::None, |c| Activation::ReluClip { clip: c });
        let mut k = KernelCounters::default();
        let y = fc_forward(
            &KernelCtx::default(),
            &tensor(&[(Axis::T, t), (Axis::B, b), (Axis::F, i)], x.clone()),
            &w,
            &bias,
            o,
            act,
            &mut k,
        )
        .unwrap();
        let want = common::fc(&x, &w, &bias, t * b, i, o, clip);
        let err = common::rel_err(&y.data, &want);
        assert!(err <= TOL, "case {case}: err {err}");
        assert_eq!(k.macs, (t * b * i * o) as u64);
    }
}

#[test]
fn lstm_and_bilstm_match_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..40 {
        let (t, b, i, h) = (
            rng.random_range(1..=8),
            rng.random_range(1..=4),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let x = values(&mut rng, t * b * i);
        let f = (values(&mut rng, i * 4 * h), values(&mut rng, h * 4 * h), values(&mut rng, 4 * h));
        let r = (values(&mut rng, i * 4 * h), values(&mut rng, h * 4 * h), values(&mut rng, 4 * h));
        let xt = tensor(&[(Axis::T, t), (Axis::B, b), (Axis::F, i)], x.clone());
        let fw = LstmWeights { wx: &f.0, wh: &f.1, bias: &f.2 };
        let bw = LstmWeights { wx: &r.0, wh: &r.1, bias: &r.2 };
        let ctx = KernelCtx::default();
        let mut k = KernelCounters::default();

        let reverse = case % 3 == 0;
        let single = lstm_forward(&ctx, &xt, &fw, h, reverse, &mut k).unwrap();
        let want = common::lstm(&x, &f.0, &f.1, &f.2, t, b, i, h, reverse);
        let err = common::rel_err(&single.data, &want);
        assert!(err <= TOL, "lstm case {case}: err {err}");

        let both = bilstm_forward(&ctx, &xt, &fw, &bw, h, &mut k).unwrap();
        let fwd = common::lstm(&x, &f.0, &f.1, &f.2, t, b, i, h, false);
        let bwd = common::lstm(&x, &r.0, &r.1, &r.2, t, b, i, h, true);
        let err = common::rel_err(&both.data, &common::bilstm(&fwd, &bwd, t * b, h));
        assert!(err <= TOL, "bilstm case {case}: err {err}");
    }
}

#[test]
fn conv_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..60 {
        let (n, c, hh, ww) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(3..=8),
            rng.random_range(3..=8),
        );
        let filters = rng.random_range(1..=6);
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let stride = rng.random_range(1..=2);
        let same = case % 2 == 0;
        let x = values(&mut rng, n * c * hh * ww);
        let w = values(&mut rng, filters * c * kh * kw);
        let bias = values(&mut rng, filters);
        let params = ConvParams {
            filters,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding: if same { Padding::Same } else { Padding::Valid },
        };
        let mut k = KernelCounters::default();
        let y = conv2d_forward(
            &KernelCtx::default(),
            &tensor(&[(Axis::B, n), (Axis::C, c), (Axis::H, hh), (Axis::W, ww)], x.clone()),
            &w,
            &bias,
            &params,
            &mut k,
        )
        .unwrap();
        let (want, ho, wo) = common::conv2d(&x, &w, &bias, (n, c, hh, ww), filters, (kh, kw), stride, same);
        assert_eq!(y.shape.extent(Axis::H), Some(ho), "case {case}");
        assert_eq!(y.shape.extent(Axis::W), Some(wo), "case {case}");
        let err = common::rel_err(&y.data, &want);
        assert!(err <= TOL, "case {case}: err {err}");
    }
}

#[test]
fn softmax_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..40 {
        let (t, f) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let x: Vec<f32> = values(&mut rng, t * f).iter().map(|v| v * 10.0).collect();
        let mut k = KernelCounters::default();
        let y = softmax(&tensor(&[(Axis::T, t), (Axis::F, f)], x.clone()), &mut k).unwrap();
        let err = common::rel_err(&y.data, &common::softmax(&x, f));
        assert!(err <= TOL, "case {case}: err {err}");
        for row in y.data.chunks(f) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn pointwise_conv_equals_fc_over_channels() {
    // A 1x1 convolution is an FC applied at every pixel with the channel axis as features.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (c, hh, ww, filters) = (5, 4, 3, 7);
    let x = values(&mut rng, c * hh * ww);
    let w_conv = values(&mut rng, filters * c);
    let bias = values(&mut rng, filters);
    let params = ConvParams {
        filters,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        padding: Padding::Valid,
    };
    let mut k = KernelCounters::default();
    let conv = conv2d_forward(
        &KernelCtx::default(),
        &tensor(&[(Axis::B, 1), (Axis::C, c), (Axis::H, hh), (Axis::W, ww)], x.clone()),
        &w_conv,
        &bias,
        &params,
        &mut k,
    )
    .unwrap();
    // Pixel-major input and [in, out] weights for the FC.
    let pixels = hh * ww;
    let x_fc: Vec<f32> = (0..pixels).flat_map(|p| (0..c).map(move |ch| (p, ch))).map(|(p, ch)| x[ch * pixels + p]).collect();
    let w_fc: Vec<f32> = (0..c).flat_map(|ch| (0..filters).map(move |f| (ch, f))).map(|(ch, f)| w_conv[f * c + ch]).collect();
    let fc = fc_forward(
        &KernelCtx::default(),
        &tensor(&[(Axis::T, pixels), (Axis::F, c)], x_fc),
        &w_fc,
        &bias,
        filters,
        Activation::None,
        &mut k,
    )
    .unwrap();
    for p in 0..pixels {
        for f in 0..filters {
            let a = conv.data[f * pixels + p];
            let b = fc.data[p * filters + f];
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "pixel {p} filter {f}: {a} vs {b}");
        }
    }
}
