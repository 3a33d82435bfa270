use proptest::prelude::*;

use super::*;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn p64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::parameter(shape, data).unwrap()
}

/// Central differences of `f` at `x` for every element.
fn numeric_grad(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn new_fills() {
    let z = Tensor::<f32>::zeros(&[2, 3]).unwrap();
    assert_eq!(z.shape(), &[2, 3]);
    assert_eq!(z.data(), &[0.0; 6]);
    let c = Tensor::<f32>::full(&[1], 7.5).unwrap();
    assert_eq!(c.data(), &[7.5]);
}

#[test]
fn uniform_fill_is_reproducible() {
    let a = Tensor::<f32>::uniform(&[4], -1.0, 1.0, 42).unwrap();
    let b = Tensor::<f32>::uniform(&[4], -1.0, 1.0, 42).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
}

#[test]
fn invalid_shapes_and_fills() {
    assert!(matches!(Tensor::<f32>::zeros(&[2, 0]), Err(Error::InvalidShape { .. })));
    assert!(Tensor::<f32>::uniform(&[2], 1.0, 1.0, 0).is_err());
    assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
}

#[test]
fn sigmoid_and_relu_values() {
    let s = t64(&[1], &[0.0]).sigmoid();
    assert_eq!(s.data(), &[0.5]);
    let r = t64(&[3], &[-2.0, 0.0, 3.0]).relu();
    assert_eq!(r.data(), &[0.0, 0.0, 3.0]);
    // no overflow in the tails
    let tails = t64(&[2], &[-1000.0, 1000.0]).sigmoid();
    assert_eq!(tails.data(), &[0.0, 1.0]);
}

#[test]
fn broadcast_add_expands_both_operands() {
    let a = t64(&[2, 1], &[1.0, 2.0]);
    let b = t64(&[1, 3], &[10.0, 20.0, 30.0]);
    let c = a.add(&b).unwrap();
    assert_eq!(c.shape(), &[2, 3]);
    assert_eq!(c.data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
}

#[test]
fn incompatible_broadcast_is_an_error() {
    let a = t64(&[2, 3], &[0.0; 6]);
    let b = t64(&[4], &[0.0; 4]);
    assert!(matches!(a.mul(&b), Err(Error::ShapeMismatch { .. })));
    assert!(Tensor::ew(EwKind::Add, &a, None).is_err());
}

#[test]
fn mean_examples() {
    let x = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let m = x.mean(&[0, 1], false).unwrap();
    assert_eq!(m.data(), &[2.5]);
    let c = t64(&[2, 3], &[4.25; 6]);
    assert!(c.mean(&[1], false).unwrap().data().iter().all(|&v| v == 4.25));
    assert_eq!(c.mean(&[1], true).unwrap().shape(), &[2, 1]);
    assert_eq!(c.mean(&[0], false).unwrap().shape(), &[3]);
    assert!(matches!(
        c.mean(&[2], false),
        Err(Error::InvalidAxis { axis: 2, rank: 2 })
    ));
}

#[test]
fn matmul_examples() {
    let eye = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let m = t64(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(eye.matmul(&m).unwrap().data(), m.data());
    let a = t64(&[1, 2], &[1.0, 2.0]);
    let b = t64(&[2, 1], &[3.0, 4.0]);
    assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    assert!(a.matmul(&a).is_err());
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a0 = uniform_vec(12, -1.0, 1.0, 1);
    let b0 = uniform_vec(8, -1.0, 1.0, 2);
    let probe = uniform_vec(6, -1.0, 1.0, 3);
    let loss = |a: &[f64], b: &[f64]| {
        let y = t64(&[3, 4], a).matmul(&t64(&[4, 2], b)).unwrap();
        y.data().iter().zip(&probe).map(|(y, p)| y * p).sum::<f64>()
    };
    let a = p64(&[3, 4], a0.clone());
    let b = p64(&[4, 2], b0.clone());
    let y = a.matmul(&b).unwrap();
    y.mul(&t64(&[3, 2], &probe)).unwrap().sum().backward().unwrap();
    let na = numeric_grad(&a0, 1e-4, |a| loss(a, &b0));
    let nb = numeric_grad(&b0, 1e-4, |b| loss(&a0, b));
    assert!(max_rel_err(&a.grad().unwrap(), &na) < 1e-6);
    assert!(max_rel_err(&b.grad().unwrap(), &nb) < 1e-6);
}

#[test]
fn backward_examples() {
    let x = p64(&[3], vec![1.0, 2.0, 3.0]);
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

    let x = p64(&[3], vec![1.0, 2.0, 3.0]);
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);

    let x = p64(&[2], vec![0.3, -0.7]);
    let y = x.scale(3.0);
    y.sum().add(&y.sum()).unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_and_untracked() {
    let x = p64(&[2], vec![1.0, 2.0]);
    assert!(matches!(x.relu().backward(), Err(Error::InvalidArgument(_))));
    let c = t64(&[1], &[1.0]);
    assert!(c.backward().is_err());
}

#[test]
fn constants_never_accumulate_gradient() {
    let x = p64(&[2], vec![1.0, 2.0]);
    let c = t64(&[2], &[3.0, 4.0]);
    x.mul(&c).unwrap().sum().backward().unwrap();
    assert!(c.grad().is_none());
    assert_eq!(x.grad().unwrap(), vec![3.0, 4.0]);
}

#[test]
fn no_grad_records_nothing() {
    let x = p64(&[2], vec![1.0, 2.0]);
    let y = no_grad(|| x.relu());
    assert!(!y.requires_grad());
    assert!(is_recording());
}

#[test]
fn record_is_topologically_ordered() {
    let x = p64(&[2], vec![1.0, -2.0]);
    let h = x.relu();
    let y = h.mul(&x).unwrap().add(&h).unwrap().sum();
    let rec = ComputationRecord::reachable_from(&y);
    let pos = |t: &Tensor<f64>| rec.tensors().iter().position(|r| r.id() == t.id()).unwrap();
    for (i, t) in rec.tensors().iter().enumerate() {
        if let Some(node) = t.node() {
            for input in &node.inputs {
                assert!(pos(input) < i);
            }
        }
    }
    // each node appears once even though x and h are used twice
    let mut ids: Vec<u64> = rec.tensors().iter().map(|t| t.id()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), rec.len());
    assert_eq!(rec.op_names().last(), Some(&"scale"));
}

#[test]
fn permute_and_reshape() {
    let x = t64(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let p = x.permute(&[1, 0]).unwrap();
    assert_eq!(p.shape(), &[3, 2]);
    assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    assert!(x.permute(&[0, 0]).is_err());
    assert!(x.reshape(&[4]).is_err());
    assert_eq!(x.reshape(&[3, 2]).unwrap().data(), x.data());
}

/// Evaluates a scalar loss built from the op under test on plain data.
fn check_op(shapes: &[Vec<usize>], seed: u64, f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>) -> f64 {
    let inits: Vec<Vec<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| uniform_vec(numel_of(s), -1.0, 1.0, seed + i as u64))
        .collect();
    let params: Vec<Tensor<f64>> = shapes.iter().zip(&inits).map(|(s, d)| p64(s, d.clone())).collect();
    let out = f(&params);
    let probe = uniform_vec(out.numel(), -1.0, 1.0, seed ^ 0xabcd);
    let probe_t = t64(out.shape(), &probe);
    out.mul(&probe_t).unwrap().sum().backward().unwrap();
    let mut worst: f64 = 0.0;
    for (k, s) in shapes.iter().enumerate() {
        let numeric = numeric_grad(&inits[k], 1e-4, |v| {
            let args: Vec<Tensor<f64>> = shapes
                .iter()
                .enumerate()
                .map(|(j, sj)| if j == k { t64(s, v) } else { t64(sj, &inits[j]) })
                .collect();
            let y = f(&args);
            y.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        });
        worst = worst.max(max_rel_err(&params[k].grad().unwrap(), &numeric));
    }
    worst
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 1..=4)
}

/// Variant of `shape` with a random subset of axes collapsed to 1.
fn collapse(shape: &[usize], mask: u8) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &e)| if mask & (1 << i) != 0 { 1 } else { e })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn primitive_gradients_match_finite_differences(
        shape in shape_strategy(),
        mask in 0u8..16,
        seed in 0u64..1000,
    ) {
        let small = collapse(&shape, mask);
        let pair = vec![shape.clone(), small.clone()];
        prop_assert!(check_op(&pair, seed, |t| t[0].add(&t[1]).unwrap()) < 1e-5);
        prop_assert!(check_op(&pair, seed, |t| t[0].sub(&t[1]).unwrap()) < 1e-5);
        prop_assert!(check_op(&pair, seed, |t| t[1].mul(&t[0]).unwrap()) < 1e-5);
        let one = vec![shape.clone()];
        prop_assert!(check_op(&one, seed, |t| t[0].sigmoid()) < 1e-5);
        prop_assert!(check_op(&one, seed, |t| t[0].scale(-1.5)) < 1e-5);
        let axes: Vec<usize> = (0..shape.len()).filter(|i| mask & (1 << i) != 0).collect();
        prop_assert!(check_op(&one, seed, |t| t[0].mean(&axes, mask & 1 == 0).unwrap()) < 1e-5);
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        perm.rotate_left(1);
        prop_assert!(check_op(&one, seed, |t| t[0].permute(&perm).unwrap()) < 1e-5);
    }

    #[test]
    fn relu_gradient_away_from_kink(shape in shape_strategy(), seed in 0u64..1000) {
        // keep inputs at least 0.01 from zero so eps never crosses the kink
        let n = numel_of(&shape);
        let data: Vec<f64> = uniform_vec(n, -1.0, 1.0, seed)
            .into_iter()
            .map(|v| if v.abs() < 0.01 { v + 0.02f64.copysign(v) } else { v })
            .collect();
        let x = p64(&shape, data.clone());
        x.relu().sum().backward().unwrap();
        let numeric = numeric_grad(&data, 1e-4, |v| v.iter().map(|u| u.max(0.0)).sum());
        prop_assert!(max_rel_err(&x.grad().unwrap(), &numeric) < 1e-5);
    }

    #[test]
    fn broadcast_backward_equals_tiled_sum(
        shape in shape_strategy(),
        mask in 0u8..16,
        seed in 0u64..1000,
    ) {
        let small = collapse(&shape, mask);
        let sdata = uniform_vec(numel_of(&small), -1.0, 1.0, seed);
        let probe = uniform_vec(numel_of(&shape), -1.0, 1.0, seed + 7);
        let s = p64(&small, sdata);
        let big = t64(&shape, &vec![0.0; numel_of(&shape)]);
        big.add(&s).unwrap().mul(&t64(&shape, &probe)).unwrap().sum().backward().unwrap();

        // brute force: tile explicitly and sum every replica back
        let strides = contiguous_strides(&shape);
        let sstrides = contiguous_strides(&small);
        let mut expect = vec![0.0; numel_of(&small)];
        for (flat, p) in probe.iter().enumerate() {
            let mut rem = flat;
            let mut target = 0;
            for d in 0..shape.len() {
                let idx = rem / strides[d];
                rem %= strides[d];
                if small[d] != 1 {
                    target += idx * sstrides[d];
                }
            }
            expect[target] += p;
        }
        let got = s.grad().unwrap();
        for (g, e) in got.iter().zip(&expect) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic(shape in shape_strategy(), seed in 0u64..1000) {
        let run = || {
            let a = Tensor::<f32>::uniform(&shape, -1.0, 1.0, seed).unwrap();
            let b = Tensor::<f32>::uniform(&shape, -1.0, 1.0, seed + 1).unwrap();
            a.mul(&b).unwrap().sigmoid().mean(&[0], true).unwrap()
        };
        let (x, y) = (run(), run());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&x), bits(&y));
    }
}
