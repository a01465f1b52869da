use promptseg::promptsim::{GuidanceConfig, GuidanceLayout, PromptType};
use promptseg::segnet::*;
use promptseg::synthgen::{generate_cases, PhantomConfig, Preset};
use promptseg::evalkit::{run_benchmark, BenchmarkConfig, NetworkModel};

fn small_config() -> (NetworkConfig, TrainConfig) {
    let net = NetworkConfig::with_widths(GuidanceLayout::Shared, vec![4, 8], vec![1, 1]);
    let cfg = TrainConfig {
        patch_size: [16, 16, 16],
        batch_size: 2,
        epochs: 5,
        steps_per_epoch: 8,
        val_instances: 2,
        rounds: 1,
        seed: 17,
        ..TrainConfig::toy()
    };
    (net, cfg)
}

#[test]
fn short_run_learns_and_repeats() {
    let cases = generate_cases(&PhantomConfig::preset(Preset::Easy, 32, 8), 16, 4).unwrap();
    let (net, cfg) = small_config();
    let g = GuidanceConfig::default();
    let a = train(&cases, &net, &cfg, &g, None).unwrap();
    let losses: Vec<f64> = a.history.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[4] < losses[0], "{losses:?}");

    let b = train(&cases, &net, &cfg, &g, None).unwrap();
    assert_eq!(a.weights.to_bytes(), b.weights.to_bytes());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.bin");
    a.weights.save(&p).unwrap();
    let back = load_weights(&p, Some(&net)).unwrap();
    assert_eq!(back.to_bytes(), a.weights.to_bytes());
    assert!(load_weights(&p, Some(&NetworkConfig::toy(GuidanceLayout::Shared))).is_err());

    let val: Vec<_> = cases.iter().filter(|c| c.split == promptseg::synthgen::Split::Val).cloned().collect();
    let model = NetworkModel::from_weights("small", &back).unwrap();
    let r1 = run_benchmark(&model, &val, &BenchmarkConfig::new(PromptType::Box, 1, 0)).unwrap();
    let r2 = run_benchmark(&model, &val, &BenchmarkConfig::new(PromptType::Box, 1, 0)).unwrap();
    assert_eq!(r1.to_json(), r2.to_json());
}

#[test]
fn config_validation() {
    let (net, mut cfg) = small_config();
    cfg.patch_size = [17, 16, 16];
    assert!(cfg.validate(&net).is_err());
    let json = r#"{"epochs": 3, "bogus": 1}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
    let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!(ok.epochs, 3);
    assert!((poly_lr(0.01, 0, 10, 0.9) - 0.01).abs() < 1e-15);
    assert!(poly_lr(0.01, 9, 10, 0.9) < 0.002);
}
