use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shufflemixer::metrics::{evaluate_pair, psnr, quantize_8bit, ssim, EvalProtocol};
use shufflemixer::{Shape, Tensor4};

mod support;
use support::{psnr_oracle, ssim_oracle};

fn random_plane(seed: u64, side: usize) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(Shape::new(1, 1, side, side), |_, _, _, _| {
        rng.gen_range(0.0..255.0)
    })
}

fn plain() -> EvalProtocol {
    EvalProtocol {
        shave: 0,
        y_only: true,
        data_range: 255.0,
    }
}

#[test]
fn psnr_matches_oracle_on_random_pairs() {
    for seed in 0..5 {
        let (a, b) = (random_plane(seed, 16), random_plane(seed + 50, 16));
        assert!((psnr(&a, &b, &plain()).unwrap() - psnr_oracle(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn ssim_matches_oracle_on_random_pairs() {
    for seed in 0..5 {
        let a = random_plane(seed, 16);
        let noise = random_plane(seed + 50, 16);
        let b = Tensor4::from_fn(a.shape(), |i, j, y, x| {
            0.7 * a.at(i, j, y, x) + 0.3 * noise.at(i, j, y, x)
        });
        assert!((ssim(&a, &b, &plain()).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        assert!((ssim(&a, &noise, &plain()).unwrap() - ssim_oracle(&a, &noise)).abs() < 1e-9);
    }
}

#[test]
fn uniform_offset_gives_twenty_db() {
    let a = random_plane(3, 16).map(|v| v * 0.8);
    let b = a.map(|v| v + 25.5);
    assert_eq!(psnr(&a, &b, &plain()).unwrap(), 20.0);
    assert!((ssim(&a, &a, &plain()).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn evaluation_shaves_by_scale_on_luma() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hr: Tensor4<f64> = Tensor4::from_fn(Shape::new(1, 3, 20, 20), |_, _, _, _| {
        rng.gen_range(0.0..1.0)
    });
    let mut sr = hr.clone();
    for c in 0..3 {
        sr.set(0, c, 1, 1, 0.0);
    }
    let (p, s) = evaluate_pair(&sr, &hr, &EvalProtocol::for_scale(2)).unwrap();
    assert_eq!(p, f64::INFINITY);
    assert!((s - 1.0).abs() < 1e-12);
    let (p, _) = evaluate_pair(
        &sr,
        &hr,
        &EvalProtocol {
            shave: 1,
            ..EvalProtocol::for_scale(2)
        },
    )
    .unwrap();
    assert!(p.is_finite());
}

#[test]
fn quantized_images_live_on_the_8bit_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t: Tensor4<f32> = Tensor4::from_fn(Shape::new(1, 3, 4, 4), |_, _, _, _| {
        rng.gen_range(-0.5..1.5)
    });
    let q = quantize_8bit(&t);
    assert!(q.data().iter().all(|&v| {
        let k = v * 255.0;
        (0.0..=255.0).contains(&k) && (k - k.round()).abs() < 1e-4
    }));
    assert_eq!(quantize_8bit(&q), q);
}
