use evoclass_core::model::{forward, glorot_init, pack, param_count, unpack, ConvLayerSpec, LayerShape};
use evoclass_core::rng::SplitMix64;
use evoclass_core::{ArchitectureSpec, Genome, Tensor};
use proptest::prelude::*;

fn small_spec() -> impl Strategy<Value = ArchitectureSpec> {
    (
        1usize..=2,
        6usize..=12,
        prop::collection::vec((1usize..=4, 1usize..=2, 0usize..=1), 1..=2),
        prop::collection::vec(1usize..=8, 0..=2),
        2usize..=5,
    )
        .prop_map(|(c, size, convs, fc_sizes, num_classes)| ArchitectureSpec {
            input_shape: [c, size, size],
            conv_layers: convs.into_iter().map(|(o, s, p)| ConvLayerSpec::new(o, s, p)).collect(),
            fc_sizes,
            num_classes,
        })
        .prop_filter("conv stack must leave a nonempty map", |spec| spec.validate().is_ok())
}

fn random_genome(spec: &ArchitectureSpec, seed: u64) -> Genome {
    let mut rng = SplitMix64::new(seed);
    let n = param_count(spec).unwrap();
    Genome::new(spec, (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pack_inverts_unpack(spec in small_spec(), seed in any::<u64>()) {
        let genome = random_genome(&spec, seed);
        let model = unpack(&genome, &spec).unwrap();
        let again = pack(&model);
        prop_assert!(again.bit_eq(&genome));
        prop_assert_eq!(unpack(&again, &spec).unwrap(), model);
    }

    #[test]
    fn glorot_respects_layer_bounds(spec in small_spec(), seed in any::<u64>()) {
        let genome = glorot_init(&spec, seed).unwrap();
        let mut rest = genome.values();
        for shape in spec.layer_shapes() {
            let bound = shape.glorot_bound() as f32;
            let (w, tail) = rest.split_at(shape.weight_count());
            let (b, tail) = tail.split_at(shape.bias_count());
            prop_assert!(w.iter().all(|v| v.abs() <= bound));
            prop_assert!(b.iter().all(|&v| v == 0.0));
            rest = tail;
        }
        prop_assert!(rest.is_empty());
    }

    #[test]
    fn classifier_bias_moves_only_its_score(spec in small_spec(), seed in any::<u64>(), class in 0usize..5, delta in 0.1f32..2.0) {
        let class = class % spec.num_classes;
        let genome = random_genome(&spec, seed);
        let [c, h, w] = spec.input_shape;
        let mut rng = SplitMix64::new(seed ^ 1);
        let image = Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let base = forward(&genome, &spec, &image).unwrap();
        let mut values = genome.values().to_vec();
        let n = values.len();
        values[n - spec.num_classes + class] += delta;
        let moved = forward(&genome.with_values(values).unwrap(), &spec, &image).unwrap();
        for k in 0..spec.num_classes {
            if k == class {
                prop_assert!((moved.data()[k] - base.data()[k] - delta).abs() <= 1e-5);
            } else {
                prop_assert_eq!(moved.data()[k], base.data()[k]);
            }
        }
    }
}

#[test]
fn glorot_default_spec_over_many_samples() {
    let spec = ArchitectureSpec::default();
    let genome = glorot_init(&spec, 7).unwrap();
    let mut rest = genome.values();
    let mut checked = 0;
    for shape in spec.layer_shapes() {
        let bound = shape.glorot_bound();
        let (w, tail) = rest.split_at(shape.weight_count());
        rest = &tail[shape.bias_count()..];
        assert!(w.iter().all(|v| (v.abs() as f64) <= bound));
        if w.len() >= 10_000 {
            // Uniform on [-b, b]: mean 0, variance b²/3.
            let n = w.len() as f64;
            let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02 * bound, "mean {mean} bound {bound}");
            assert!((var / (bound * bound / 3.0) - 1.0).abs() < 0.05, "var {var}");
            checked += 1;
        }
    }
    assert!(checked >= 2);
}

#[test]
fn hand_computed_tiny_network() {
    // 1×4×4 input, one stride-2 3×3 conv (centre tap 1, bias -1), then a
    // 4→2 classifier.
    let spec = ArchitectureSpec {
        input_shape: [1, 4, 4],
        conv_layers: vec![ConvLayerSpec::new(1, 2, 1)],
        fc_sizes: vec![],
        num_classes: 2,
    };
    assert!(matches!(spec.layer_shapes()[1], LayerShape::Linear { in_features: 4, out_features: 2 }));
    let mut values = vec![0.0f32; 9];
    values[4] = 1.0;
    values.push(-1.0);
    values.extend([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    values.extend([0.5, 0.0]);
    let genome = Genome::new(&spec, values).unwrap();
    let image = Tensor::new(vec![1, 4, 4], (1..=16).map(|v| v as f32).collect()).unwrap();
    // The centre tap samples pixels (0,0), (0,2), (2,0), (2,2) = 1, 3, 9, 11;
    // after bias and ReLU the map is [0, 2, 8, 10], so scores are [0.5, 10].
    assert_eq!(forward(&genome, &spec, &image).unwrap().data(), &[0.5, 10.0]);
}
