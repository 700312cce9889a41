use evoclass_core::tensor::{conv2d_forward, conv_output_size, linear_forward, relu, Conv2dParams, LinearParams};
use evoclass_core::Tensor;
use proptest::prelude::*;

/// Direct quadruple loop over output position and kernel taps.
fn naive_conv(input: &Tensor, kernels: &Tensor, biases: &[f32], stride: usize, pad: usize) -> Vec<f32> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; c_out * h_out * w_out];
    for o in 0..c_out {
        for i in 0..h_out {
            for j in 0..w_out {
                let mut acc = biases[o] as f64;
                for c in 0..c_in {
                    for r in 0..kh {
                        for s in 0..kw {
                            let y = (i * stride + r) as isize - pad as isize;
                            let xx = (j * stride + s) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += k[((o * c_in + c) * kh + r) * kw + s] as f64
                                * x[(c * h + y as usize) * w + xx as usize] as f64;
                        }
                    }
                }
                out[(o * h_out + i) * w_out + j] = acc as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct ConvCase {
    input: Tensor,
    kernels: Tensor,
    biases: Vec<f32>,
    stride: usize,
    pad: usize,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..=4, 1usize..=4, 3usize..=16, 3usize..=16, 1usize..=2, 0usize..=1).prop_flat_map(
        |(c_in, c_out, h, w, stride, pad)| {
            (
                prop::collection::vec(-1.0f32..1.0, c_in * h * w),
                prop::collection::vec(-1.0f32..1.0, c_out * c_in * 9),
                prop::collection::vec(-1.0f32..1.0, c_out),
            )
                .prop_map(move |(x, k, b)| ConvCase {
                    input: Tensor::new(vec![c_in, h, w], x).unwrap(),
                    kernels: Tensor::new(vec![c_out, c_in, 3, 3], k).unwrap(),
                    biases: b,
                    stride,
                    pad,
                })
        },
    )
}

fn params(case: &ConvCase) -> Conv2dParams {
    Conv2dParams::new(
        case.kernels.clone(),
        Tensor::vector(case.biases.clone()).unwrap(),
        case.stride,
        case.pad,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_matches_naive_loop(case in conv_case()) {
        let fast = conv2d_forward(&case.input, &params(&case)).unwrap();
        let slow = naive_conv(&case.input, &case.kernels, &case.biases, case.stride, case.pad);
        let (h, w) = (case.input.shape()[1], case.input.shape()[2]);
        prop_assert_eq!(
            fast.shape(),
            &[
                case.kernels.shape()[0],
                conv_output_size(h, 3, case.stride, case.pad).unwrap(),
                conv_output_size(w, 3, case.stride, case.pad).unwrap(),
            ][..]
        );
        for (a, b) in fast.data().iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn conv_is_linear_in_input(case in conv_case(), alpha in -2.0f32..2.0) {
        // With zero bias, conv(a·x) = a·conv(x).
        let mut case = case;
        case.biases.iter_mut().for_each(|b| *b = 0.0);
        let p = params(&case);
        let base = conv2d_forward(&case.input, &p).unwrap();
        let scaled = conv2d_forward(&case.input.map(|v| alpha * v), &p).unwrap();
        for (a, b) in scaled.data().iter().zip(base.data()) {
            prop_assert!((a - alpha * b).abs() <= 1e-4);
        }
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(values in prop::collection::vec(-10.0f32..10.0, 1..64)) {
        let t = Tensor::vector(values).unwrap();
        let once = relu(&t);
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(relu(&once), once);
    }

    #[test]
    fn linear_matches_dot_products(
        (n_in, n_out, x, w, b) in (1usize..20, 1usize..10).prop_flat_map(|(i, o)| (
            Just(i),
            Just(o),
            prop::collection::vec(-1.0f32..1.0, i),
            prop::collection::vec(-1.0f32..1.0, i * o),
            prop::collection::vec(-1.0f32..1.0, o),
        ))
    ) {
        let p = LinearParams::new(Tensor::new(vec![n_out, n_in], w.clone()).unwrap(), Tensor::vector(b.clone()).unwrap()).unwrap();
        let y = linear_forward(&Tensor::vector(x.clone()).unwrap(), &p).unwrap();
        for o in 0..n_out {
            let expected: f64 = b[o] as f64 + (0..n_in).map(|i| w[o * n_in + i] as f64 * x[i] as f64).sum::<f64>();
            prop_assert!((y.data()[o] as f64 - expected).abs() <= 1e-5);
        }
    }
}

#[test]
fn hand_computed_two_channel_conv() {
    // Two 2×2 input channels, one output channel, padding 1.
    let input = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
    let mut k = vec![0.0; 18];
    k[4] = 1.0; // centre tap, channel 0
    k[9 + 8] = 2.0; // bottom-right tap, channel 1
    let p = Conv2dParams::new(
        Tensor::new(vec![1, 2, 3, 3], k).unwrap(),
        Tensor::vector(vec![0.25]).unwrap(),
        1,
        1,
    )
    .unwrap();
    let out = conv2d_forward(&input, &p).unwrap();
    // Bottom-right tap reads (i+1, j+1): only (0,0) sees channel 1.
    assert_eq!(out.data(), &[1.0 + 1.0 + 0.25, 2.25, 3.25, 4.25]);
}
