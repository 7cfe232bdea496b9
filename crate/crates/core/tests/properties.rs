use proptest::prelude::*;

use texfilter::fm::implicit_policies;
use texfilter::metrics::{mean_abs_diff, psnr, rms_diff, ssim};
use texfilter::{
    load_image, normalize_group, reduce, reduce_adjoint, save_image, to_luma, upsample, Grid, Image,
    PyramidConfig, UpsamplerKind,
};

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, h * w * c).prop_map(move |d| Image::new(h, w, c, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (2usize..12, 2usize..12, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(h, w, c)| image(h, w, c))
}

fn image_pair() -> impl Strategy<Value = (Image, Image)> {
    (4usize..14, 4usize..14).prop_flat_map(|(h, w)| (image(h, w, 3), image(h, w, 3)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn png_round_trip_is_within_quantization(img in sized_image()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        prop_assert_eq!(back.dims(), img.dims());
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // a second round trip is lossless
        save_image(&back, &p).unwrap();
        prop_assert_eq!(load_image(&p).unwrap(), back);
    }

    #[test]
    fn luma_of_gray_is_the_gray_level(h in 1usize..8, w in 1usize..8, levels in prop::collection::vec(0.0f64..=1.0, 64)) {
        let img = Image::from_fn(h, w, 3, |y, x, _| levels[y * 8 + x]);
        let l = to_luma(&img).unwrap();
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(l.get(y, x, 0), levels[y * 8 + x]);
            }
        }
    }

    #[test]
    fn distance_axioms((a, b) in image_pair()) {
        prop_assert_eq!(mean_abs_diff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(rms_diff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(mean_abs_diff(&a, &b).unwrap(), mean_abs_diff(&b, &a).unwrap());
        prop_assert_eq!(rms_diff(&a, &b).unwrap(), rms_diff(&b, &a).unwrap());
        prop_assert!(mean_abs_diff(&a, &b).unwrap() >= 0.0);
        prop_assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn rms_dominates_mean_abs((a, b) in image_pair()) {
        prop_assert!(rms_diff(&a, &b).unwrap() + 1e-15 >= mean_abs_diff(&a, &b).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded((a, b) in image_pair()) {
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduce_is_adjoint_to_reduce_adjoint(
        h in 2usize..20,
        w in 2usize..20,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = PyramidConfig::with_depth(1);
        let x = Image::from_fn(h, w, 1, |_, _, _| rng.random_range(0.0..1.0));
        let y = Grid::from_fn(h.div_ceil(2), w.div_ceil(2), 1, |_, _, _| rng.random_range(-1.0..1.0));
        let lhs = reduce(&x, &cfg).unwrap().grid().dot(&y).unwrap();
        let rhs = x.grid().dot(&reduce_adjoint(&y, (h, w), &cfg).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn reduce_and_upsample_keep_constants(h in 2usize..24, w in 2usize..24, v in 0.0f64..=1.0) {
        let img = Image::filled(h, w, 3, v);
        let r = reduce(&img, &PyramidConfig::default()).unwrap();
        prop_assert!(r.data().iter().all(|x| (x - v).abs() < 1e-12));
        for kind in [UpsamplerKind::Nearest, UpsamplerKind::Bilinear, UpsamplerKind::Bicubic, UpsamplerKind::Lanczos3] {
            let u = upsample(&img, 2, &kind).unwrap();
            prop_assert!(u.data().iter().all(|x| (x - v).abs() < 1e-9));
        }
    }

    #[test]
    fn normalized_group_is_bounded_and_order_preserving(raw in prop::collection::vec(-100.0f64..100.0, 2..24)) {
        let g = normalize_group(&raw).unwrap();
        for (i, a) in g.normalized.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(a));
            for (j, b) in g.normalized.iter().enumerate() {
                if raw[i] < raw[j] {
                    prop_assert!(a <= b);
                }
            }
        }
    }

    #[test]
    fn implicit_policies_average_to_old(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
        beta in 0.0f64..3.0,
    ) {
        let (old, theta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (p, m) = implicit_policies(&old, &theta, beta).unwrap();
        for i in 0..old.len() {
            prop_assert!((p[i] + m[i] - 2.0 * old[i]).abs() < 1e-12);
        }
    }
}
