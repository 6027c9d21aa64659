//! Fast paths checked against brute-force references, plus property tests
//! for the basic invariants of convolution and the metrics.

mod support;

use kernel_diff::blur::{convolve_array, convolve_array_direct, Boundary};
use kernel_diff::metrics::{mnc, ssim};
use kernel_diff::rng::rng_for;
use kernel_diff::Image;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;
use support::{mnc_naive, random_array, ssim_naive};

#[test]
fn fft_convolution_matches_direct_sum() {
    for i in 0..24 {
        let mut rng = rng_for(11, "conv-oracle", i);
        let ks = [1, 3, 5, 7, 9, 11][rng.random_range(0..6)];
        let h = rng.random_range(ks.max(8)..=32);
        let w = rng.random_range(ks.max(8)..=32);
        let x = random_array(&mut rng, h, w);
        let k = random_array(&mut rng, ks, ks);
        for boundary in [Boundary::Symmetric, Boundary::Circular] {
            let fast = convolve_array(&x, &k, boundary).unwrap();
            let slow = convolve_array_direct(&x, &k, boundary).unwrap();
            let err = support::max_abs_diff(&fast, &slow);
            assert!(err <= 1e-8, "instance {i} {boundary:?}: max error {err}");
        }
    }
}

#[test]
fn ssim_matches_per_window_evaluation() {
    for i in 0..20 {
        let mut rng = rng_for(12, "ssim-oracle", i);
        let h = rng.random_range(11..=24);
        let w = rng.random_range(11..=24);
        let x = random_array(&mut rng, h, w);
        let noise = random_array(&mut rng, h, w);
        let y = &x * 0.7 + &noise * 0.3;
        let fast = ssim(&Image::new(x.clone()).unwrap(), &Image::new(y.clone()).unwrap(), 1.0).unwrap();
        let slow = ssim_naive(&x, &y, 1.0);
        assert!((fast - slow).abs() <= 1e-8, "instance {i}: {fast} vs {slow}");
    }
}

#[test]
fn mnc_matches_shift_search() {
    for i in 0..20 {
        let mut rng = rng_for(13, "mnc-oracle", i);
        let ks = [3, 5, 7, 9, 11][rng.random_range(0..5)];
        let a = random_array(&mut rng, ks, ks);
        let b = random_array(&mut rng, ks, ks);
        let fast = mnc(&a, &b).unwrap();
        let slow = mnc_naive(&a, &b);
        assert!((fast - slow).abs() <= 1e-10, "instance {i}: {fast} vs {slow}");
    }
}

#[test]
fn mnc_of_shifted_copy_is_one() {
    let mut a = Array2::zeros((7, 7));
    let mut b = Array2::zeros((7, 7));
    a[[2, 3]] = 0.6;
    a[[3, 3]] = 0.4;
    b[[4, 1]] = 0.6;
    b[[5, 1]] = 0.4;
    assert!((mnc(&a, &b).unwrap() - 1.0).abs() < 1e-12);
}

fn arrays(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0f64..1.0, h * w).prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_is_linear(x1 in arrays(12, 14), x2 in arrays(12, 14), k in arrays(5, 5), a in -2.0f64..2.0) {
        let lhs = convolve_array(&(&x1 * a + &x2), &k, Boundary::Symmetric).unwrap();
        let rhs = convolve_array(&x1, &k, Boundary::Symmetric).unwrap() * a
            + convolve_array(&x2, &k, Boundary::Symmetric).unwrap();
        let err = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn normalized_kernel_preserves_constants(k in arrays(5, 5), c in -3.0f64..3.0) {
        let k = k.mapv(f64::abs) + 1e-3;
        let k = &k / k.sum();
        let x = Array2::from_elem((10, 9), c);
        let y = convolve_array(&x, &k, Boundary::Symmetric).unwrap();
        prop_assert!(y.iter().all(|v| (v - c).abs() < 1e-10));
    }

    #[test]
    fn mnc_is_scale_invariant_and_bounded(a in arrays(5, 5), b in arrays(5, 5), s in 0.01f64..100.0) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let m = mnc(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((mnc(&(&a * s), &b).unwrap() - m).abs() < 1e-10);
        prop_assert!((mnc(&a, &a).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(x in arrays(12, 12), y in arrays(12, 12)) {
        let (xi, yi) = (Image::new(x.mapv(|v| v * 0.5 + 0.5)).unwrap(), Image::new(y.mapv(|v| v * 0.5 + 0.5)).unwrap());
        let s = ssim(&xi, &yi, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&yi, &xi, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&xi, &xi, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
