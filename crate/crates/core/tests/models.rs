use mcnet::backbones::{
    count_stats, propagate_shapes, BackboneSpec, BlockSpec, ClassifierMode, FlopConvention, Model,
    Reduction, SetSpec,
};
use mcnet::heads::{aggregate_scores, predict, ClassifierHead};
use mcnet::layers::{Layer, Mode};
use mcnet::scorenorm::NormalizerKind;
use mcnet::tensor::RandomDist;
use mcnet::{Error, SeededRng, Tensor};
use proptest::prelude::*;

const L2: ClassifierMode = ClassifierMode::MultiHeads(NormalizerKind::L2SqrtExp);

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = SeededRng::new(seed);
    Tensor::random(
        shape,
        RandomDist::Normal {
            mean: 0.0,
            std: 1.0,
        },
        &mut rng,
    )
    .unwrap()
}

fn conv_params(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    k * k * cin * cout + if bias { cout } else { 0 }
}

fn fc_params(i: usize, o: usize) -> usize {
    i * o + o
}

fn bn_params(c: usize) -> usize {
    2 * c
}

/// Head on a set with `c` channels, all heads mapping to 512 channels.
fn head_params(c: usize, target: usize, classes: usize) -> usize {
    conv_params(c, target, 3, false) + bn_params(target) + fc_params(target, classes)
}

const VGG: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

fn vgg16_conv_params() -> usize {
    let mut cin = 3;
    let mut total = 0;
    for (c, reps) in VGG {
        for _ in 0..reps {
            total += conv_params(cin, c, 3, true);
            cin = c;
        }
    }
    total
}

fn resnet18_backbone_params() -> usize {
    let mut total = conv_params(3, 64, 3, false) + bn_params(64);
    let mut cin = 64;
    for (stage, c) in [64, 128, 256, 512].into_iter().enumerate() {
        for block in 0..2 {
            let first_in = if block == 0 { cin } else { c };
            total += conv_params(first_in, c, 3, false) + bn_params(c);
            total += conv_params(c, c, 3, false) + bn_params(c);
            if block == 0 && stage > 0 {
                total += conv_params(first_in, c, 1, false) + bn_params(c);
            }
        }
        cin = c;
    }
    total
}

/// 3x3 conv MACs per image for VGG16 at 32x32 plus its FC stack.
fn vgg16_macs() -> u64 {
    let mut cin = 3u64;
    let mut side = 32u64;
    let mut macs = 0;
    for (c, reps) in VGG {
        for _ in 0..reps {
            macs += side * side * 9 * cin * c as u64;
            cin = c as u64;
        }
        side /= 2;
    }
    macs + 512 * 4096 + 4096 * 4096 + 4096 * 10
}

#[test]
fn vgg16_original_params_closed_form() {
    let mut rng = SeededRng::new(0);
    let m = Model::<f32>::build(&BackboneSpec::vgg16(), ClassifierMode::Original, 10, &mut rng).unwrap();
    let oracle = vgg16_conv_params() + fc_params(512, 4096) + fc_params(4096, 4096) + fc_params(4096, 10);
    assert_eq!(m.param_count(), oracle);
    let s = count_stats(&m, &[1, 3, 32, 32], FlopConvention::Mac).unwrap();
    assert_eq!(s.params, oracle);
    let macs: u64 = s.parts().map(|p| p.macs).sum();
    assert_eq!(macs, vgg16_macs());
}

#[test]
fn vgg16_multi_params_closed_form() {
    let mut rng = SeededRng::new(0);
    let m = Model::<f32>::build(&BackboneSpec::vgg16(), L2, 10, &mut rng).unwrap();
    let heads: usize = VGG.iter().map(|&(c, _)| head_params(c, 512, 10)).sum();
    assert_eq!(m.param_count(), vgg16_conv_params() + heads);
}

#[test]
fn resnet18_params_closed_form() {
    let mut rng = SeededRng::new(0);
    let orig = Model::<f32>::build(&BackboneSpec::resnet18(), ClassifierMode::Original, 10, &mut rng).unwrap();
    let multi = Model::<f32>::build(&BackboneSpec::resnet18(), L2, 10, &mut rng).unwrap();
    // the original classifier here has no hidden layers
    assert_eq!(orig.param_count(), resnet18_backbone_params() + fc_params(512, 10));
    let heads: usize = [64, 64, 128, 256, 512].iter().map(|&c| head_params(c, 512, 10)).sum();
    assert_eq!(multi.param_count(), resnet18_backbone_params() + heads);
}

#[test]
fn stats_are_additive_and_conventions_differ_by_macs() {
    let mut rng = SeededRng::new(1);
    for spec in [BackboneSpec::mini_vgg(), BackboneSpec::mini_resnet(), BackboneSpec::mini_cnn()] {
        let m = Model::<f32>::build(&spec, L2, 10, &mut rng).unwrap();
        let a = count_stats(&m, &[1, 3, 32, 32], FlopConvention::Mac).unwrap();
        let b = count_stats(&m, &[1, 3, 32, 32], FlopConvention::TwoPerMac).unwrap();
        assert_eq!(a.params, m.param_count());
        assert_eq!(a.params, a.parts().map(|p| p.params).sum::<usize>());
        assert_eq!(a.flops, a.parts().map(|p| p.flops).sum::<u64>());
        let macs: u64 = a.parts().map(|p| p.macs).sum();
        assert_eq!(b.flops - a.flops, macs);
        assert_eq!(a.heads.len(), spec.depth());
        assert!(a.classifier.is_none());
    }
}

#[test]
fn flops_scale_with_batch() {
    let mut rng = SeededRng::new(1);
    let m = Model::<f32>::build(&BackboneSpec::mini_resnet(), L2, 10, &mut rng).unwrap();
    let one = count_stats(&m, &[1, 3, 16, 16], FlopConvention::Mac).unwrap();
    let four = count_stats(&m, &[4, 3, 16, 16], FlopConvention::Mac).unwrap();
    assert_eq!(four.flops, 4 * one.flops);
    assert_eq!(four.params, one.params);
}

#[test]
fn forward_shapes_follow_the_symbolic_plan() {
    let mut rng = SeededRng::new(2);
    for spec in [BackboneSpec::mini_vgg(), BackboneSpec::mini_resnet(), BackboneSpec::mini_cnn()] {
        let mut m = Model::<f64>::build(&spec, L2, 5, &mut rng).unwrap();
        for side in [8, 9, 16] {
            let x = rand(&[2, 3, side, side], side as u64);
            let plan = propagate_shapes(&spec, x.shape()).unwrap();
            let s = count_stats(&m, x.shape(), FlopConvention::Mac).unwrap();
            for (part, expect) in s.sets.iter().zip(&plan) {
                assert_eq!(&part.out_shape, expect, "{} at {side}", spec.name);
            }
            let out = m.forward(&x, Mode::Eval).unwrap();
            assert_eq!(out.output.shape(), &[2, 5]);
            assert!(out.output.all_finite());
        }
    }
}

#[test]
fn multi_output_is_sum_of_head_scores() {
    let mut rng = SeededRng::new(3);
    let mut m = Model::<f64>::build(&BackboneSpec::mini_vgg(), L2, 4, &mut rng).unwrap();
    let out = m.forward(&rand(&[3, 3, 8, 8], 1), Mode::Train).unwrap();
    let heads = out.per_head.unwrap();
    assert_eq!(heads.len(), 3);
    let sum = aggregate_scores(&heads).unwrap();
    for (a, b) in out.output.data().iter().zip(sum.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for h in &heads {
        for row in h.data().chunks(4) {
            let norm: f64 = row.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregation_of_nothing_is_an_error() {
    assert!(matches!(aggregate_scores::<f64>(&[]), Err(Error::Contract(_))));
}

#[test]
fn predict_breaks_ties_low() {
    let s = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
    assert_eq!(predict(&s).unwrap(), vec![0, 1]);
}

#[test]
fn head_rejects_wrong_channels() {
    let mut rng = SeededRng::new(0);
    let mut head = ClassifierHead::<f64>::new(2, 4, 8, 3, NormalizerKind::L2SqrtExp, &mut rng).unwrap();
    assert!(matches!(head.forward(&rand(&[2, 5, 4, 4], 0), Mode::Train), Err(Error::Shape(_))));
}

#[test]
fn too_small_input_names_the_set() {
    let spec = BackboneSpec::vgg16();
    match propagate_shapes(&spec, &[1, 3, 8, 8]) {
        Err(Error::Shape(msg)) => assert!(msg.contains("set4"), "{msg}"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn custom_spec_with_bad_channels_fails_to_build() {
    let spec = BackboneSpec {
        name: "custom".into(),
        in_channels: 3,
        sets: vec![
            SetSpec::new(vec![BlockSpec::plain(3, 8, 1)], Reduction::MaxPool),
            SetSpec::new(vec![BlockSpec::plain(3, 16, 1)], Reduction::None).expecting(7),
        ],
        batchnorm: false,
        classifier_hidden: vec![],
    };
    match Model::<f32>::build(&spec, L2, 3, &mut SeededRng::new(0)) {
        Err(Error::Build(msg)) => assert!(msg.contains("set2"), "{msg}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("build should fail"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn head_scores_are_unit_norm_for_any_spatial_size(
        h in 1usize..9, w in 1usize..9, c in 1usize..5, n in 2usize..8, seed in 0u64..1000,
    ) {
        let mut rng = SeededRng::new(seed);
        let mut head = ClassifierHead::<f64>::new(1, c, 6, n, NormalizerKind::L2SqrtExp, &mut rng).unwrap();
        let y = head.forward(&rand(&[3, c, h, w], seed), Mode::Train).unwrap();
        prop_assert_eq!(y.shape(), &[3, n]);
        for row in y.data().chunks(n) {
            let norm: f64 = row.iter().map(|v| v * v).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
        let cost = head.cost(&[3, c, h, w]).unwrap();
        // everything after the global pool is independent of the spatial size
        prop_assert_eq!(cost.params, 9 * c * 6 + 2 * 6 + 6 * n + n);
    }

    #[test]
    fn softmax_heads_sum_to_one(h in 1usize..6, n in 2usize..6, seed in 0u64..1000) {
        let mut rng = SeededRng::new(seed);
        let mut head = ClassifierHead::<f64>::new(1, 2, 4, n, NormalizerKind::Softmax, &mut rng).unwrap();
        let y = head.forward(&rand(&[2, 2, h, h], seed), Mode::Train).unwrap();
        for row in y.data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
