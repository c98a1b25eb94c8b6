use lqgan::autodiff::Tensor;
use lqgan::metrics::*;
use lqgan::rng::{standard_normal_vec, Streams};
use lqgan::Result;
use proptest::prelude::*;

fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Tensor {
    let v = standard_normal_vec(&mut Streams::new(seed).stream("g"), n * d);
    Tensor::new(vec![n, d], v.into_iter().map(|x| x + shift).collect()).unwrap()
}

#[test]
fn shifted_isotropic_gaussians() {
    let a = gaussian(50_000, 8, 0.0, 1);
    let b = gaussian(50_000, 8, 1.0, 2);
    let r = fid(&a, &b, &FeatureExtractor::PixelFlatten).unwrap();
    assert!((r.fid - 8.0).abs() < 0.1, "fid {}", r.fid);
    assert!(!r.under_sampled);
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let a = gaussian(500, 6, 0.3, 4);
    let r = fid(&a, &a, &FeatureExtractor::PixelFlatten).unwrap();
    assert!(r.fid.abs() < 1e-8, "fid {}", r.fid);
}

struct Identity;
impl Reconstructor for Identity {
    fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        Ok(images.clone())
    }
}

struct Constant(f64);
impl Reconstructor for Constant {
    fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        Ok(Tensor::full(images.shape(), self.0))
    }
}

#[test]
fn rfid_of_test_doubles() {
    let images = gaussian(400, 5, 0.0, 7).map(|v| 0.5 + 0.1 * v);
    let ex = FeatureExtractor::PixelFlatten;
    assert!(rfid(&Identity, &images, &ex).unwrap().fid.abs() < 1e-8);

    // A constant reconstruction has zero covariance: FID = |μ - c|² + tr(C).
    let stats = GaussianStats::from_samples(&images).unwrap();
    let d = 5;
    let expect: f64 = (0..d).map(|i| (stats.mean[i] - 0.2).powi(2) + stats.cov[(i, i)]).sum();
    let got = rfid(&Constant(0.2), &images, &ex).unwrap().fid;
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn random_projection_of_identical_sets_is_zero() {
    let images = gaussian(300, 12, 0.5, 9);
    let ex = FeatureExtractor::random_projection(12, 4, 0);
    assert!(fid(&images, &images, &ex).unwrap().fid.abs() < 1e-8);
}

#[test]
fn jsd_extremes() {
    let p = Tensor::full(&[100, 3], 0.1);
    let q = Tensor::full(&[100, 3], 0.9);
    assert_eq!(jsd(&p, &p, JsdSpace::Raw, 64).unwrap(), 0.0);
    assert!((jsd(&p, &q, JsdSpace::Raw, 64).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

fn reversed_rows(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    let d = t.len() / n;
    let mut data = Vec::with_capacity(t.len());
    for i in (0..n).rev() {
        data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jsd_is_symmetric_and_bounded(seed in 0u64..1000, shift in -0.5f64..0.5) {
        let p = gaussian(200, 3, 0.0, seed).map(|v| (0.3 * v).tanh());
        let q = gaussian(150, 3, shift, seed + 1).map(|v| (0.3 * v).tanh());
        let a = jsd(&p, &q, JsdSpace::Feature, 32).unwrap();
        let b = jsd(&q, &p, JsdSpace::Feature, 32).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a));
    }

    #[test]
    fn fid_is_symmetric_nonnegative_and_order_free(seed in 0u64..1000, shift in -1.0f64..1.0) {
        let p = gaussian(120, 4, 0.0, seed);
        let q = gaussian(100, 4, shift, seed + 7);
        let ex = FeatureExtractor::PixelFlatten;
        let a = fid(&p, &q, &ex).unwrap().fid;
        let b = fid(&q, &p, &ex).unwrap().fid;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        let c = fid(&reversed_rows(&p), &q, &ex).unwrap().fid;
        prop_assert!((a - c).abs() <= 1e-9 * a.max(1.0));
    }
}
