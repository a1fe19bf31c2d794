use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shufflemixer::complexity::count_params;
use shufflemixer::graph::{Eager, Graph};
use shufflemixer::model::{channel_projection, forward_taped, layers};
use shufflemixer::ops::bilinear_resize;
use shufflemixer::weights::init_params;
use shufflemixer::{forward, Fusion, ModelConfig, ParamTree, Shape, Tensor4, Variant};

fn random(shape: Shape, seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0))
}

fn small(scale: usize) -> ModelConfig {
    ModelConfig {
        channels: 8,
        n_fmb: 2,
        ..ModelConfig::tiny(scale)
    }
}

#[test]
fn closed_form_count_matches_instantiated_tree() {
    let mut cfgs = Vec::new();
    for scale in [2, 3, 4] {
        cfgs.push(ModelConfig::base(scale));
        cfgs.push(ModelConfig::tiny(scale));
        for k in [5, 9, 13] {
            cfgs.push(ModelConfig {
                dw_kernel: k,
                channels: 12,
                n_fmb: 2,
                ..ModelConfig::tiny(scale)
            });
        }
    }
    for &fusion in Fusion::ALL {
        cfgs.push(ModelConfig::ablation(Variant::Cdc, fusion));
    }
    cfgs.push(ModelConfig::ablation(Variant::Css, Fusion::None));
    cfgs.push(ModelConfig::ablation(
        Variant::ConvMixerBaseline,
        Fusion::None,
    ));
    for cfg in cfgs {
        let tree: ParamTree<f32> = init_params(&cfg, 0).unwrap();
        assert_eq!(
            tree.scalar_count() as u64,
            count_params(&cfg).unwrap(),
            "{cfg:?}"
        );
        let from_layers: usize = layers(&cfg)
            .unwrap()
            .iter()
            .flat_map(|l| l.tensors())
            .map(|(_, _, s)| s.len())
            .sum();
        assert_eq!(tree.scalar_count(), from_layers);
    }
}

#[test]
fn zero_head_reduces_to_bilinear() {
    for scale in [2, 3, 4] {
        let cfg = small(scale);
        let mut tree: ParamTree<f32> = init_params(&cfg, 3).unwrap();
        tree.get_mut("head.coeffs").unwrap().data_mut().fill(0.0);
        let lr: Tensor4<f32> = random(Shape::new(2, 3, 7, 9), 1).cast();
        let out = forward(&tree, &cfg, &lr).unwrap();
        let base = bilinear_resize(&lr, scale).unwrap();
        assert!(out.max_abs_diff(&base) <= 1e-6, "scale {scale}");
    }
}

#[test]
fn output_shape_and_finiteness() {
    let cfg = small(3);
    let tree: ParamTree<f32> = init_params(&cfg, 1).unwrap();
    let out = forward(&tree, &cfg, &random(Shape::new(1, 3, 17, 23), 2).cast()).unwrap();
    assert_eq!(out.dims(), [1, 3, 51, 69]);
    assert!(out.is_finite());
    assert!(forward(&tree, &cfg, &Tensor4::<f32>::zeros(Shape::new(1, 4, 8, 8))).is_err());
}

#[test]
fn every_variant_runs() {
    let mut cfgs: Vec<ModelConfig> = Fusion::ALL
        .iter()
        .map(|&f| ModelConfig {
            channels: 8,
            n_fmb: 1,
            ..ModelConfig::ablation(Variant::Cdc, f)
        })
        .collect();
    cfgs.push(ModelConfig {
        channels: 8,
        n_fmb: 1,
        ..ModelConfig::ablation(Variant::Css, Fusion::None)
    });
    cfgs.push(ModelConfig {
        channels: 8,
        n_fmb: 1,
        ..ModelConfig::ablation(Variant::ConvMixerBaseline, Fusion::None)
    });
    let lr = random(Shape::new(1, 3, 5, 6), 4);
    for cfg in cfgs {
        let tree: ParamTree<f64> = init_params(&cfg, 5).unwrap();
        let out = forward(&tree, &cfg, &lr).unwrap();
        assert_eq!(out.dims(), [1, 3, 20, 24], "{cfg:?}");
        assert!(out.is_finite());
    }
}

#[test]
fn forward_is_deterministic_and_seeded() {
    let cfg = small(2);
    let a: ParamTree<f32> = init_params(&cfg, 9).unwrap();
    assert_eq!(a, init_params(&cfg, 9).unwrap());
    assert_ne!(a, init_params(&cfg, 10).unwrap());
    let lr: Tensor4<f32> = random(Shape::new(1, 3, 9, 9), 3).cast();
    assert_eq!(
        forward(&a, &cfg, &lr).unwrap(),
        forward(&a, &cfg, &lr).unwrap()
    );
}

#[test]
fn taped_and_eager_forward_agree() {
    let cfg = small(4);
    let tree: ParamTree<f64> = init_params(&cfg, 2).unwrap();
    let lr = random(Shape::new(1, 3, 6, 5), 8);
    let eager = forward(&tree, &cfg, &lr).unwrap();
    let (tape, out) = forward_taped(&tree, &cfg, lr).unwrap();
    assert_eq!(tape.value(&out), &eager);
}

#[test]
fn batch_items_are_independent() {
    let cfg = small(2);
    let tree: ParamTree<f64> = init_params(&cfg, 2).unwrap();
    let lr = random(Shape::new(3, 3, 6, 6), 1);
    let whole = forward(&tree, &cfg, &lr).unwrap();
    for i in 0..3 {
        let single = forward(&tree, &cfg, &lr.batch_item(i)).unwrap();
        assert!(single.max_abs_diff(&whole.batch_item(i)) < 1e-12);
    }
}

/// Per-pixel reference for one projection with explicit loops.
fn projection_oracle(tree: &ParamTree<f64>, prefix: &str, x: &Tensor4<f64>) -> Tensor4<f64> {
    let d = x.c();
    let half = d / 2;
    let gamma = tree
        .get(&format!("{prefix}.norm.gamma"))
        .unwrap()
        .data()
        .to_vec();
    let w0 = tree
        .get(&format!("{prefix}.w0.coeffs"))
        .unwrap()
        .data()
        .to_vec();
    let b0 = tree
        .get(&format!("{prefix}.w0.bias"))
        .unwrap()
        .data()
        .to_vec();
    let w1 = tree
        .get(&format!("{prefix}.w1.coeffs"))
        .unwrap()
        .data()
        .to_vec();
    let b1 = tree
        .get(&format!("{prefix}.w1.bias"))
        .unwrap()
        .data()
        .to_vec();
    let mut out = x.clone();
    for n in 0..x.n() {
        for y in 0..x.h() {
            for xx in 0..x.w() {
                let v: Vec<f64> = (0..d).map(|c| x.at(n, c, y, xx)).collect();
                let mean = v.iter().sum::<f64>() / d as f64;
                let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / d as f64;
                let normed: Vec<f64> = (0..d)
                    .map(|c| gamma[c] * (v[c] - mean) / (var + 1e-6).sqrt())
                    .collect();
                let hidden: Vec<f64> = (0..d)
                    .map(|o| {
                        let s =
                            b0[o] + (0..half).map(|i| w0[o * half + i] * normed[i]).sum::<f64>();
                        s / (1.0 + (-s).exp())
                    })
                    .collect();
                for m in 0..half {
                    let mixed = b1[m] + (0..d).map(|i| w1[m * d + i] * hidden[i]).sum::<f64>();
                    out.set(n, 2 * m, y, xx, v[2 * m] + mixed);
                    out.set(n, 2 * m + 1, y, xx, v[2 * m + 1] + normed[half + m]);
                }
            }
        }
    }
    out
}

fn run_projection(tree: &ParamTree<f64>, prefix: &str, x: &Tensor4<f64>) -> Tensor4<f64> {
    let mut g = Eager::new(tree);
    channel_projection(&mut g, prefix, &Cow::Borrowed(x))
        .unwrap()
        .into_owned()
}

#[test]
fn projection_matches_straight_line_oracle() {
    let cfg = small(2);
    let mut tree: ParamTree<f64> = init_params(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for p in tree.iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".gamma") {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    let x = random(Shape::new(2, 8, 3, 4), 7);
    let prefix = "fmb.1.mixer.0.proj_out";
    let got = run_projection(&tree, prefix, &x);
    assert!(got.max_abs_diff(&projection_oracle(&tree, prefix, &x)) < 1e-12);
}

#[test]
fn zero_gamma_projection_is_identity() {
    let cfg = small(2);
    let mut tree: ParamTree<f64> = init_params(&cfg, 4).unwrap();
    let prefix = "fmb.0.mixer.1.proj_in";
    tree.get_mut(&format!("{prefix}.norm.gamma"))
        .unwrap()
        .data_mut()
        .fill(0.0);
    let x = random(Shape::new(1, 8, 4, 4), 3);
    assert_eq!(run_projection(&tree, prefix, &x), x);
}

#[test]
fn mismatched_tree_is_rejected() {
    let cfg = small(2);
    let tree: ParamTree<f64> = init_params(&small(3), 4).unwrap();
    assert!(forward(&tree, &cfg, &random(Shape::new(1, 3, 4, 4), 1)).is_err());
}
