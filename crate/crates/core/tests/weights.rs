use proptest::prelude::*;
use shufflemixer::weights::{
    checksum, from_bytes, init_params, load, save, to_bytes, WeightsError,
};
use shufflemixer::{Fusion, ModelConfig, ParamTree, Variant};

fn small() -> ModelConfig {
    ModelConfig {
        channels: 8,
        n_fmb: 1,
        ..ModelConfig::tiny(2)
    }
}

#[test]
fn every_truncation_is_reported() {
    let cfg = small();
    let tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
    let bytes = to_bytes(&tree, &cfg).unwrap();
    for len in 0..bytes.len() {
        match from_bytes(&bytes[..len]) {
            Err(WeightsError::Truncated(ctx)) => {
                let in_header = len < 4 + 2 + 14;
                assert_eq!(ctx == "header", in_header, "prefix {len}: {ctx}");
            }
            other => panic!("prefix {len}: {other:?}"),
        }
    }
}

#[test]
fn truncation_names_the_tensor() {
    let cfg = small();
    let tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
    let bytes = to_bytes(&tree, &cfg).unwrap();
    let err = from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
    assert_eq!(err.to_string(), "file truncated in tensor `head.bias`");
}

#[test]
fn corrupted_magic_is_rejected_at_every_byte() {
    let cfg = small();
    let tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
    let bytes = to_bytes(&tree, &cfg).unwrap();
    for i in 0..4 {
        let mut bad = bytes.clone();
        bad[i] ^= 0x20;
        assert!(
            matches!(from_bytes(&bad), Err(WeightsError::BadMagic(_))),
            "byte {i}"
        );
    }
}

#[test]
fn header_codes_are_validated() {
    let cfg = small();
    let tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
    let bytes = to_bytes(&tree, &cfg).unwrap();
    // Header fields follow magic and version: D, k, n_fmb, s, C', variant, fusion.
    for (field, value) in [(1usize, 4u16), (3, 5), (5, 9), (6, 9), (0, 7)] {
        let mut bad = bytes.clone();
        let at = 6 + 2 * field;
        bad[at..at + 2].copy_from_slice(&value.to_le_bytes());
        assert!(
            matches!(from_bytes(&bad), Err(WeightsError::InvalidConfig(_))),
            "field {field}"
        );
    }
}

#[test]
fn non_finite_payload_is_rejected() {
    let cfg = small();
    let tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
    let mut bytes = to_bytes(&tree, &cfg).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(
        matches!(from_bytes(&bytes), Err(WeightsError::NonFinite(name)) if name == "head.bias")
    );
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load(dir.path().join("absent.smxw")),
        Err(WeightsError::Io(_))
    ));
}

#[test]
fn checksums_follow_config_and_seed() {
    let cfg = small();
    let a: ParamTree<f32> = init_params(&cfg, 1).unwrap();
    let b: ParamTree<f32> = init_params(&cfg, 1).unwrap();
    let c: ParamTree<f32> = init_params(&cfg, 2).unwrap();
    assert_eq!(checksum(&a, &cfg).unwrap(), checksum(&b, &cfg).unwrap());
    assert_ne!(checksum(&a, &cfg).unwrap(), checksum(&c, &cfg).unwrap());
}

fn any_config() -> impl Strategy<Value = ModelConfig> {
    let trunk = prop_oneof![
        Just((Variant::Full, Fusion::SFmbConv)),
        (0usize..Fusion::ALL.len()).prop_map(|i| (Variant::Cdc, Fusion::ALL[i])),
        Just((Variant::Css, Fusion::None)),
        Just((Variant::ConvMixerBaseline, Fusion::None)),
    ];
    (1usize..5, 0usize..6, 1usize..3, 2usize..5, 1usize..9, trunk).prop_map(
        |(half, k, n, s, e, (variant, fusion))| ModelConfig {
            channels: 2 * half,
            dw_kernel: 3 + 2 * k,
            n_fmb: n,
            scale: s,
            expansion: e,
            variant,
            fusion,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_load_round_trip_is_bitwise(cfg in any_config(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.smxw");
        let tree: ParamTree<f32> = init_params(&cfg, seed).unwrap();
        save(&tree, &cfg, &path).unwrap();
        let (back, back_cfg) = load(&path).unwrap();
        prop_assert_eq!(back_cfg, cfg);
        for (a, b) in tree.iter().zip(back.iter()) {
            prop_assert_eq!(&a.name, &b.name);
            let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
        prop_assert_eq!(to_bytes(&back, &back_cfg).unwrap(), std::fs::read(&path).unwrap());
    }
}
