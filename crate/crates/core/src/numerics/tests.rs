use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::{self, Stream};
use crate::{Error, Result};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, Stream::Init, &[99]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ y ∘ R` for a fixed random `R`, turning any tensor output into a scalar with generic gradients.
fn weighted(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.value(y).shape(), seed ^ 0xABCD))?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn softmax_of_equal_scores_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(&[2, 5], 3.0)).unwrap();
    let y = t.softmax_rows(x).unwrap();
    assert!(t.value(y).as_slice().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn relu_backward_passthrough() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::vector(vec![-2.0, 2.0])).unwrap();
    let y = t.relu(x).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().as_slice(), &[0.0, 1.0]);
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let params = [random(&[2, 3], 1), random(&[3, 2], 2)];
    let r = grad_check(&params, 1e-5, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted(t, y, 3)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-7, "{r:?}");
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::<f64>::new();
    let ones = t.constant(Tensor::full(&[2], 1.0)).unwrap();
    let zeros = t.constant(Tensor::zeros(&[2])).unwrap();
    let x = t.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap()).unwrap();
    let y = t.layer_norm(x, ones, zeros, 0.0).unwrap();
    assert_eq!(t.value(y).as_slice(), &[-1.0, 1.0]);

    let c = t.constant(Tensor::full(&[1, 4], 7.5)).unwrap();
    let g4 = t.constant(Tensor::full(&[4], 1.0)).unwrap();
    let b4 = t.constant(Tensor::zeros(&[4])).unwrap();
    let y = t.layer_norm(c, g4, b4, 1e-5).unwrap();
    assert!(t.value(y).as_slice().iter().all(|&v| v == 0.0));

    let gz = t.constant(Tensor::zeros(&[4])).unwrap();
    let beta = t.constant(Tensor::vector(vec![0.5, -1.0, 2.0, 0.0])).unwrap();
    let x = t.constant(random(&[3, 4], 8)).unwrap();
    let y = t.layer_norm(x, gz, beta, 1e-5).unwrap();
    for r in 0..3 {
        assert_eq!(t.value(y).row(r), &[0.5, -1.0, 2.0, 0.0]);
    }
}

#[test]
fn layer_norm_zero_variance_without_eps_is_non_finite() {
    let mut t = Tape::<f64>::new();
    let g = t.constant(Tensor::full(&[3], 1.0)).unwrap();
    let b = t.constant(Tensor::zeros(&[3])).unwrap();
    let x = t.constant(Tensor::full(&[1, 3], 2.0)).unwrap();
    assert!(matches!(t.layer_norm(x, g, b, 0.0), Err(Error::NonFinite(_))));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.param(random(&[3, 4], 4)).unwrap();
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().as_slice().iter().all(|&v| v == 1.0));
    assert_eq!(g.get(x).unwrap().shape(), &[3, 4]);
}

#[test]
fn backward_of_half_square() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let h = t.scale(s, 0.5).unwrap();
    let g = t.backward(h).unwrap();
    assert_eq!(g.get(x).unwrap().as_slice(), &[1.0, -2.0, 3.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::<f64>::new();
    let x = t.param(random(&[2, 2], 1)).unwrap();
    assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    match t.matmul(a, b) {
        Err(Error::ShapeMismatch { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("{other:?}"),
    }
    let c = t.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(t.add(a, c).is_err());
}

#[test]
fn non_finite_result_is_an_error() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::full(&[1, 1], f32::MAX)).unwrap();
    assert!(matches!(t.scale(a, 10.0), Err(Error::NonFinite(_))));
    assert!(t.constant(Tensor::full(&[1], f32::NAN)).is_err());
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
    let a = t.scale(x, 2.0).unwrap();
    let b = t.scale(x, 3.0).unwrap();
    let c = t.add(a, b).unwrap();
    let s = t.sum(c).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().as_slice(), &[5.0, 5.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::<f64>::new();
    let c = t.constant(random(&[2, 2], 1)).unwrap();
    let p = t.param(random(&[2, 2], 2)).unwrap();
    let y = t.mul(c, p).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().as_slice(), t.value(c).as_slice());
}

#[test]
fn softmax_nll_validates_targets() {
    let mut t = Tape::<f64>::new();
    let l = t.param(random(&[2, 3], 1)).unwrap();
    assert!(t.softmax_nll(l, &[vec![0]]).is_err());
    assert!(t.softmax_nll(l, &[vec![0], vec![3]]).is_err());
    let e = t.softmax_nll(l, &[vec![], vec![]]).unwrap();
    assert_eq!(t.value(e).item(), 0.0);
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=8, 1usize..=8, 1usize..=8)
}

// Round-off in the central difference is about 1e-11 absolute, which against the 1e-6 floor can
// reach a few 1e-6 on tiny entries; a wrong backward rule is off by far more.
const PRIMITIVE_TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_are_distributions((r, c, _) in dims(), seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut t = Tape::<f32>::new();
        let x = t.constant(random(&[r, c], seed).map(|v| v * scale).cast()).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for row in 0..r {
            let s: f32 = t.value(y).row(row).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
            prop_assert!(t.value(y).row(row).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn layer_norm_statistics((r, c, _) in dims(), seed in any::<u64>()) {
        prop_assume!(c >= 2);
        let mut t = Tape::<f32>::new();
        let x = t.constant(random(&[r, c], seed).map(|v| v * 3.0 + 1.0).cast()).unwrap();
        let g = t.constant(Tensor::full(&[c], 1.0)).unwrap();
        let b = t.constant(Tensor::zeros(&[c])).unwrap();
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        for row in 0..r {
            let xs = t.value(x).row(row);
            let xm = xs.iter().sum::<f32>() / c as f32;
            let xv = xs.iter().map(|v| (v - xm) * (v - xm)).sum::<f32>() / c as f32;
            prop_assume!(xv > 1e-2);
            let ys = t.value(y).row(row);
            let m = ys.iter().sum::<f32>() / c as f32;
            let v = ys.iter().map(|y| (y - m) * (y - m)).sum::<f32>() / c as f32;
            prop_assert!(m.abs() < 1e-5);
            // eps inside the root shrinks the variance by var / (var + eps)
            prop_assert!((v - 1.0).abs() < 1e-4 + 1e-5 / xv, "variance {}", v);
        }
    }

    #[test]
    fn matmul_primitives_fd((m, k, n) in dims(), seed in any::<u64>()) {
        let ps = [random(&[m, k], seed), random(&[k, n], seed + 1), random(&[n, k], seed + 2)];
        let r = grad_check(&ps, 1e-5, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let z = t.matmul_nt(v[0], v[2])?;
            let a = weighted(t, y, seed)?;
            let b = weighted(t, z, seed + 7)?;
            t.add(a, b)
        }).unwrap();
        prop_assert!(r.max_rel_error < PRIMITIVE_TOL, "{:?}", r);
    }

    #[test]
    fn block_matmul_primitives_fd(blocks in 1usize..4, blk in 1usize..5, p in 1usize..6, seed in any::<u64>()) {
        let rows = blocks * blk;
        let ps = [random(&[rows, p], seed), random(&[rows, p], seed + 1), random(&[rows, blk], seed + 2)];
        let r = grad_check(&ps, 1e-5, |t, v| {
            let s = t.block_matmul_nt(v[0], v[1], blk)?;
            let o = t.block_matmul(v[2], v[0], blk)?;
            let a = weighted(t, s, seed)?;
            let b = weighted(t, o, seed + 3)?;
            t.add(a, b)
        }).unwrap();
        prop_assert!(r.max_rel_error < PRIMITIVE_TOL, "{:?}", r);
    }

    #[test]
    fn elementwise_primitives_fd((r, c, _) in dims(), seed in any::<u64>()) {
        let ps = [random(&[r, c], seed), random(&[r, c], seed + 1), random(&[c], seed + 2)];
        // keep relu inputs away from the kink
        prop_assume!(ps[0].as_slice().iter().all(|x| x.abs() > 1e-3));
        let res = grad_check(&ps, 1e-5, |t, v| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[1])?;
            let b = t.add_bias(m, v[2])?;
            let s = t.scale(b, 0.7)?;
            let relu = t.relu(v[0])?;
            let y = t.add(s, relu)?;
            weighted(t, y, seed)
        }).unwrap();
        prop_assert!(res.max_rel_error < PRIMITIVE_TOL, "{:?}", res);
    }

    #[test]
    fn structural_primitives_fd((r, c, k) in dims(), seed in any::<u64>()) {
        let ps = [random(&[r, c], seed), random(&[r, k], seed + 1)];
        let ids: Vec<usize> = (0..(r + 2)).map(|i| (i * 7 + seed as usize) % r).collect();
        let res = grad_check(&ps, 1e-5, |t, v| {
            let cat = t.concat_cols(&[v[0], v[1], v[0]])?;
            let sl = t.slice_cols(cat, c / 2, c + k)?;
            let g = t.gather_rows(sl, &ids)?;
            weighted(t, g, seed)
        }).unwrap();
        prop_assert!(res.max_rel_error < PRIMITIVE_TOL, "{:?}", res);
    }

    #[test]
    fn softmax_and_norm_primitives_fd((r, c, _) in dims(), seed in any::<u64>()) {
        prop_assume!(c >= 2);
        let ps = [random(&[r, c], seed), random(&[c], seed + 1), random(&[c], seed + 2)];
        // nearly constant rows make layer norm so curved that central differences lose accuracy
        for i in 0..r {
            let row = ps[0].row(i);
            let m = row.iter().sum::<f64>() / c as f64;
            prop_assume!(row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c as f64) > 0.05);
        }
        let targets: Vec<Vec<usize>> = (0..r).map(|i| (0..(i % 3)).map(|j| (i + j * 5) % c).collect()).collect();
        let res = grad_check(&ps, 1e-5, |t, v| {
            let sm = t.softmax_rows(v[0])?;
            let a = weighted(t, sm, seed)?;
            let ln = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let b = weighted(t, ln, seed + 1)?;
            let nll = t.softmax_nll(v[0], &targets)?;
            let ab = t.add(a, b)?;
            t.add(ab, nll)
        }).unwrap();
        prop_assert!(res.max_rel_error < PRIMITIVE_TOL, "{:?}", res);
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut t = Tape::<f32>::new();
            let a = t.param(random(&[8, 8], seed).cast()).unwrap();
            let b = t.param(random(&[8, 8], seed + 1).cast()).unwrap();
            let y = t.matmul_nt(a, b).unwrap();
            let y = t.softmax_rows(y).unwrap();
            let s = t.sum(y).unwrap();
            let y2 = t.scale(s, 3.0).unwrap();
            let g = t.backward(y2).unwrap();
            (g.get(a).unwrap().clone(), g.get(b).unwrap().clone())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        prop_assert_eq!(a1.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        a2.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(b1, b2);
    }
}
