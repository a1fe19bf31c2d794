use shufflemixer::train::{grad_check, grad_check_config};
use shufflemixer::{Fusion, ModelConfig, Variant};

#[test]
fn model_gradients_match_finite_differences() {
    let report = grad_check(&grad_check_config(), 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 200);
}

#[test]
fn ablation_trunk_gradients_match_finite_differences() {
    for (variant, fusion) in [
        (Variant::Cdc, Fusion::CConv),
        (Variant::Css, Fusion::None),
        (Variant::ConvMixerBaseline, Fusion::None),
    ] {
        let cfg = ModelConfig {
            channels: 4,
            n_fmb: 1,
            scale: 3,
            ..ModelConfig::ablation(variant, fusion)
        };
        let report = grad_check(&cfg, 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{variant} {fusion}: {report:?}"
        );
    }
}
