//! Convolution against the direct loop reference, and the transposed
//! convolution as its exact adjoint.

use cswin::rng;
use cswin::tensor::ops::{conv3d_reference, ConvGeometry};
use cswin::{Array64, Tensor64};
use proptest::prelude::*;
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Array64 {
    let mut r = rng::rng(seed);
    Array64::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn geometry() -> impl Strategy<Value = ([usize; 5], [usize; 5], ConvGeometry)> {
    (1..=2usize, 1..=3usize, 1..=3usize, [1..=5usize, 1..=5usize, 1..=5usize])
        .prop_flat_map(|(n, ci, co, sp)| {
            let kernel = [1..=sp[0].min(3), 1..=sp[1].min(3), 1..=sp[2].min(3)];
            (Just((n, ci, co, sp)), kernel, [1..=2usize, 1..=2usize, 1..=2usize], [0..=1usize, 0..=1usize, 0..=1usize])
        })
        .prop_map(|((n, ci, co, sp), kernel, stride, padding)| {
            let g = ConvGeometry { kernel, stride, padding };
            ([n, ci, sp[0], sp[1], sp[2]], [co, ci, kernel[0], kernel[1], kernel[2]], g)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_seven_loop_reference((xs, ws, g) in geometry(), seed in any::<u64>()) {
        let x = random(&xs, seed);
        let w = random(&ws, seed ^ 1);
        let b = random(&[ws[0]], seed ^ 2);
        let fast = Tensor64::constant(x.clone())
            .conv3d(&Tensor64::constant(w.clone()), Some(&Tensor64::constant(b.clone())), g)
            .unwrap();
        let slow = conv3d_reference(&x, &w, Some(&b), g).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.value().max_abs_diff(&slow) < 1e-6);
    }

    #[test]
    fn transpose_is_adjoint((xs, ws, g) in geometry(), seed in any::<u64>()) {
        // <conv(x), y> = <x, conv_t(y)> whenever conv_t maps back onto x's extent.
        let x = random(&xs, seed);
        let w = Tensor64::constant(random(&ws, seed ^ 1));
        let y_fwd = Tensor64::constant(x.clone()).conv3d(&w, None, g).unwrap();
        let y = random(y_fwd.shape(), seed ^ 3);
        let back = Tensor64::constant(y.clone()).conv_transpose3d(&w, None, g).unwrap();
        let fits = back.shape() == x.shape();
        prop_assume!(fits);
        let lhs: f64 = y_fwd.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = back.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn f32_agrees_with_reference() {
    let g = ConvGeometry::cubic(3, 2, 1);
    let x = random(&[2, 3, 5, 5, 5], 4);
    let w = random(&[2, 3, 3, 3, 3], 5);
    let slow = conv3d_reference(&x, &w, None, g).unwrap();
    let fast = Tensor64::constant(x)
        .conv3d(&Tensor64::constant(w), None, g)
        .unwrap();
    assert!(fast.value().max_abs_diff(&slow) < 1e-12);
    let x32 = random(&[2, 3, 5, 5, 5], 4).cast::<f32>();
    let w32 = random(&[2, 3, 3, 3, 3], 5).cast::<f32>();
    let fast32 = cswin::Tensor32::constant(x32)
        .conv3d(&cswin::Tensor32::constant(w32), None, g)
        .unwrap();
    assert!(fast32.value().cast::<f64>().max_abs_diff(&slow) < 1e-5);
}
