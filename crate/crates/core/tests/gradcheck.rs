use mcnet::gradcheck::{
    check_gradients, layer_cases, run_scope, GradCheckConfig, LayerTarget, PerturbedBackward, Scope,
};
use mcnet::layers::{Conv2d, LayerKind, Mode};
use mcnet::{SeededRng, Tensor};
use mcnet::tensor::RandomDist;

fn show(reports: &[mcnet::gradcheck::GradReport]) {
    for r in reports {
        let counts: Vec<String> = r
            .tensors
            .iter()
            .map(|t| format!("{}:{}/{}:{:.1e}", t.name, t.checked, t.skipped, t.max_rel_err))
            .collect();
        println!("{} {:.2e} {}", r.name, r.max_rel_err, counts.join(" "));
    }
}

#[test]
fn every_layer_kind_passes() {
    let reports = run_scope(Scope::Layers, &GradCheckConfig::default()).unwrap();
    show(&reports);
    for r in &reports {
        assert!(r.passed, "{} max rel err {:e}", r.name, r.max_rel_err);
    }
}

#[test]
fn cases_cover_every_kind() {
    let mut kinds: Vec<LayerKind> = Vec::new();
    for (name, layer, _, _) in layer_cases(0).unwrap() {
        for (_, k) in mcnet::layers::leaf_kinds(layer.as_ref(), &name) {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if !kinds.contains(&layer.kind()) {
            kinds.push(layer.kind());
        }
    }
    for k in [
        LayerKind::Conv3x3,
        LayerKind::Conv1x1,
        LayerKind::MaxPool2x2,
        LayerKind::AdaptiveMaxPool,
        LayerKind::BatchNorm2d,
        LayerKind::Linear,
        LayerKind::Relu,
        LayerKind::Softplus,
        LayerKind::AddSkip,
        LayerKind::ScoreNorm,
    ] {
        assert!(kinds.contains(&k), "{k:?} not covered");
    }
}

#[test]
fn head_passes() {
    let reports = run_scope(Scope::Head, &GradCheckConfig::default()).unwrap();
    show(&reports);
    assert!(reports.iter().all(|r| r.passed));
}

#[test]
fn mini_model_passes() {
    let reports = run_scope(Scope::ModelMini, &GradCheckConfig::default()).unwrap();
    show(&reports);
    assert!(reports.iter().all(|r| r.passed));
}

#[test]
fn several_seeds_pass() {
    for seed in 1..4 {
        let config = GradCheckConfig {
            seed,
            ..Default::default()
        };
        for scope in [Scope::Layers, Scope::Head] {
            let reports = run_scope(scope, &config).unwrap();
            for r in &reports {
                assert!(r.passed, "seed {seed} {} {:e}", r.name, r.max_rel_err);
            }
        }
    }
}

#[test]
fn perturbed_backward_is_reported_by_name() {
    let mut rng = SeededRng::new(3);
    let conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, true, &mut rng).unwrap();
    let mut faulty = PerturbedBackward {
        inner: conv,
        scale: 1.01,
    };
    let x = Tensor::random(
        &[2, 2, 4, 4],
        RandomDist::Uniform {
            low: -1.0,
            high: 1.0,
        },
        &mut rng,
    )
    .unwrap();
    let mut target = LayerTarget {
        layer: &mut faulty,
        mode: Mode::Train,
    };
    let r = check_gradients("conv3x3", &mut target, &x, &GradCheckConfig::default()).unwrap();
    assert!(!r.passed);
    assert_eq!(r.name, "conv3x3");
    let input = r.tensors.iter().find(|t| t.name == "input").unwrap();
    assert!(input.max_rel_err > 5e-3);
    assert!(r.tensors.iter().filter(|t| t.name != "input").all(|t| t.max_rel_err < 1e-4));
}
