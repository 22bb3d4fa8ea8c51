use proptest::prelude::*;

use hdt_core::metrics::{psnr, ssim};
use hdt_core::model::window::{window_partition, window_reverse};
use hdt_core::ops::softmax;
use hdt_core::train::{inverse_code, patch_positions, transform_pixels};
use hdt_core::{RunConfig, Tape, Tensor};

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::from_fn(&[1, h, w, 3], |i| {
        let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed.wrapping_mul(1442695040888963407));
        ((x >> 11) as f64) / (1u64 << 53) as f64
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentations_form_a_group(side in 1usize..6, a in 0u8..8, b in 0u8..8) {
        let (h, w) = (side, side);
        let px: Vec<f32> = (0..h * w * 3).map(|i| i as f32).collect();
        let (h1, w1, once) = transform_pixels(h, w, &px, a).unwrap();
        let (h2, w2, back) = transform_pixels(h1, w1, &once, inverse_code(a)).unwrap();
        prop_assert_eq!((h2, w2), (h, w));
        prop_assert_eq!(&back, &px);
        let (_, _, twice) = transform_pixels(h1, w1, &once, b).unwrap();
        let found = (0u8..8).any(|c| transform_pixels(h, w, &px, c).unwrap().2 == twice);
        prop_assert!(found);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), small in 0.001f64..0.05, factor in 1.5f64..10.0) {
        let gt = image(8, 8, seed);
        let noise = image(8, 8, seed ^ 1).map(|v| v - 0.5);
        let add = |s: f64| gt.zip_map(&noise, |a, n| a + s * n).unwrap();
        prop_assert!(psnr(&add(small), &gt, 1.0).unwrap() > psnr(&add(small * factor), &gt, 1.0).unwrap());
    }

    #[test]
    fn ssim_of_image_with_itself_is_one(h in 11usize..20, w in 11usize..20, seed in any::<u64>()) {
        let x = image(h, w, seed);
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn window_round_trip(h in 1usize..20, w in 1usize..20, window in 1usize..8, shifted in any::<bool>(), seed in any::<u64>()) {
        let x = image(h, w, seed);
        let shift = if shifted { window / 2 } else { 0 };
        let back = window_reverse(&window_partition(&x, window, shift).unwrap(), window, shift, h, w).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..40, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let tape = Tape::<f64>::no_grad();
        let logits = image(rows, cols, seed).reshape(&[rows, cols * 3]).unwrap().map(|v| (v - 0.5) * scale);
        let p = softmax(&tape.constant(logits));
        for row in p.value().data().chunks(cols * 3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn crops_cover_every_pixel(len in 1usize..200, patch in 1usize..64, stride in 1usize..64) {
        prop_assume!(stride <= patch && patch <= len);
        let pos = patch_positions(len, patch, stride).unwrap();
        prop_assert_eq!(pos[0], 0);
        prop_assert_eq!(*pos.last().unwrap(), len - patch);
        prop_assert!(pos.windows(2).all(|p| p[0] < p[1] && p[1] - p[0] <= stride));
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), epochs in 1usize..500, sar in any::<bool>(), deformable in any::<bool>(), lr in 1e-6f64..1e-2) {
        let mut cfg = RunConfig::preset("tiny").unwrap();
        cfg.train.seed = seed;
        cfg.train.epochs = epochs;
        cfg.train.adam.lr = lr;
        cfg.model.sar = sar;
        cfg.model.deformable = deformable;
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
