use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, ScalarFn};
use super::*;
use crate::error::{Error, Result};

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::parameter(data, shape).unwrap()
}

/// Random weights turn any tensor-valued op into a generic scalar loss.
fn weighted_sum(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w: Vec<f64> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::from_vec(w, y.shape())?;
    Ok(sum(&mul(y, &w)?))
}

fn assert_gradcheck(name: &str, inputs: &[Tensor<f64>], f: &ScalarFn<'_, f64>) {
    let errs = check_gradients(f, inputs, 1e-6).unwrap();
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < 1e-5, "{name}: input {i} rel err {e:e}");
    }
}

#[test]
fn identity_matmul_returns_input() {
    let a = Tensor::<f64>::from_vec(vec![1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
    let eye = Tensor::from_vec(vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], &[3, 3]).unwrap();
    assert_eq!(matmul(&a, &eye).unwrap().to_vec(), a.to_vec());
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[4, 5]);
    match matmul(&a, &b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 5]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn gradient_of_sum_of_product_is_other_factor() {
    let a = Tensor::<f64>::parameter(vec![1., -2., 3.], &[3]).unwrap();
    let b = Tensor::<f64>::from_vec(vec![4., 5., -6.], &[3]).unwrap();
    sum(&mul(&a, &b).unwrap()).backward().unwrap();
    assert_eq!(a.grad().unwrap(), b.to_vec());
}

#[test]
fn square_gradient_at_three_is_six() {
    let x = Tensor::<f64>::parameter(vec![3.0], &[1]).unwrap();
    sum(&mul(&x, &x).unwrap()).backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
}

#[test]
fn shared_subexpression_accumulates_both_paths() {
    // y = (2x) + (2x)·x  →  dy/dx = 2 + 4x
    let x = Tensor::<f64>::parameter(vec![1.5], &[1]).unwrap();
    let t = scale(&x, 2.0);
    let y = sum(&add(&t, &mul(&t, &x).unwrap()).unwrap());
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0 + 4.0 * 1.5]);
}

#[test]
fn second_backward_accumulates_without_zeroing() {
    let x = Tensor::<f64>::parameter(vec![3.0], &[1]).unwrap();
    let y = sum(&mul(&x, &x).unwrap());
    y.backward().unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![12.0]);
    x.zero_grad();
    assert_eq!(x.grad().unwrap(), vec![0.0]);
}

#[test]
fn backward_requires_scalar() {
    let x = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
    assert!(scale(&x, 2.0).backward().is_err());
}

#[test]
fn no_grad_records_nothing() {
    let x = Tensor::<f64>::parameter(vec![1.0], &[1]).unwrap();
    let y = no_grad(|| scale(&x, 2.0));
    assert!(!y.requires_grad());
    assert!(grad_enabled());
}

#[test]
fn elementwise_and_broadcast_gradients() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn(&mut rng, &[2, 3, 4]);
        let b = randn(&mut rng, &[3, 1]);
        let c = Tensor::parameter((0..24).map(|_| rng.random_range(0.5..1.5)).collect(), &[2, 3, 4]).unwrap();
        assert_gradcheck("add", &[a.clone(), b.clone()], &|t| {
            weighted_sum(&add(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("sub", &[a.clone(), b.clone()], &|t| {
            weighted_sum(&sub(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("mul", &[a.clone(), b.clone()], &|t| {
            weighted_sum(&mul(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("div", &[a.clone(), c.clone()], &|t| {
            weighted_sum(&div(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("scale", std::slice::from_ref(&a), &|t| {
            weighted_sum(&scale(&t[0], -1.7), seed)
        });
        assert_gradcheck("broadcast_to", std::slice::from_ref(&b), &|t| {
            weighted_sum(&broadcast_to(&t[0], &[2, 3, 4])?, seed)
        });
    }
}

#[test]
fn activation_gradients() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // keep relu inputs away from the kink
        let x = Tensor::parameter(
            (0..30)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..1.0);
                    if rng.random::<bool>() {
                        v
                    } else {
                        -v
                    }
                })
                .collect(),
            &[5, 6],
        )
        .unwrap();
        assert_gradcheck("relu", std::slice::from_ref(&x), &|t| weighted_sum(&relu(&t[0]), seed));
        assert_gradcheck("gelu", std::slice::from_ref(&x), &|t| weighted_sum(&gelu(&t[0]), seed));
        assert_gradcheck("sigmoid", std::slice::from_ref(&x), &|t| {
            weighted_sum(&sigmoid(&t[0]), seed)
        });
        assert_gradcheck("tanh", std::slice::from_ref(&x), &|t| weighted_sum(&tanh(&t[0]), seed));
        assert_gradcheck("softmax0", std::slice::from_ref(&x), &|t| {
            weighted_sum(&softmax(&t[0], 0)?, seed)
        });
        assert_gradcheck("softmax1", std::slice::from_ref(&x), &|t| {
            weighted_sum(&softmax(&t[0], 1)?, seed)
        });
    }
}

#[test]
fn structural_op_gradients() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let a = randn(&mut rng, &[2, 3, 4]);
        let b = randn(&mut rng, &[2, 2, 4]);
        let m1 = randn(&mut rng, &[2, 3, 5]);
        let m2 = randn(&mut rng, &[2, 5, 4]);
        let w = randn(&mut rng, &[5, 4]);
        assert_gradcheck("matmul", &[m1.clone(), m2.clone()], &|t| {
            weighted_sum(&matmul(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("matmul shared", &[m1.clone(), w.clone()], &|t| {
            weighted_sum(&matmul(&t[0], &t[1])?, seed)
        });
        assert_gradcheck("permute", std::slice::from_ref(&a), &|t| {
            weighted_sum(&permute(&t[0], &[2, 0, 1])?, seed)
        });
        assert_gradcheck("transpose", std::slice::from_ref(&a), &|t| {
            weighted_sum(&transpose(&t[0], 1, 2)?, seed)
        });
        assert_gradcheck("reshape", std::slice::from_ref(&a), &|t| {
            weighted_sum(&reshape(&t[0], &[6, 4])?, seed)
        });
        assert_gradcheck("concat", &[a.clone(), b.clone()], &|t| {
            weighted_sum(&concat(&[&t[0], &t[1]], 1)?, seed)
        });
        assert_gradcheck("slice", std::slice::from_ref(&a), &|t| {
            weighted_sum(&slice(&t[0], 2, 1, 3)?, seed)
        });
        assert_gradcheck("sum", std::slice::from_ref(&a), &|t| Ok(scale(&sum(&t[0]), 0.3)));
        assert_gradcheck("mean", std::slice::from_ref(&a), &|t| Ok(scale(&mean(&t[0]), 0.3)));
        assert_gradcheck("sum_axis", std::slice::from_ref(&a), &|t| {
            weighted_sum(&sum_axis(&t[0], 1, false)?, seed)
        });
        assert_gradcheck("mean_axis", std::slice::from_ref(&a), &|t| {
            weighted_sum(&mean_axis(&t[0], 2, true)?, seed)
        });
        assert_gradcheck("max_axis", std::slice::from_ref(&a), &|t| {
            weighted_sum(&max_axis(&t[0], 1, false)?, seed)
        });
    }
}

#[test]
fn softmax_rows_sum_to_one_and_ignore_shifts() {
    let x = Tensor::<f64>::from_vec(vec![0.1, 2.0, -3.0, 0.5, 0.5, 0.5], &[2, 3]).unwrap();
    let y = softmax(&x, 1).unwrap().to_vec();
    for row in y.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(y[3..].iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let shifted = add_scalar(&x, 100.0);
    let ys = softmax(&shifted, 1).unwrap().to_vec();
    for (a, b) in y.iter().zip(&ys) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[4, 16]);
    let g = Tensor::full(&[16], 1.0);
    let b = Tensor::zeros(&[16]);
    let y = layer_norm(&x, &g, &b, 1e-12).unwrap().to_vec();
    for row in y.chunks(16) {
        let m = row.iter().sum::<f64>() / 16.0;
        let v = row.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / 16.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_and_linear_gradients() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = randn(&mut rng, &[2, 3, 6]);
        let g = randn(&mut rng, &[6]);
        let b = randn(&mut rng, &[6]);
        let w = randn(&mut rng, &[4, 6]);
        let wb = randn(&mut rng, &[4]);
        assert_gradcheck("layer_norm", &[x.clone(), g.clone(), b.clone()], &|t| {
            weighted_sum(&layer_norm(&t[0], &t[1], &t[2], 1e-5)?, seed)
        });
        assert_gradcheck("linear", &[x.clone(), w.clone(), wb.clone()], &|t| {
            weighted_sum(&linear(&t[0], &t[1], Some(&t[2]))?, seed)
        });
        let table = randn(&mut rng, &[5, 3]);
        assert_gradcheck("embedding", &[table], &|t| {
            weighted_sum(&embedding(&t[0], &[4, 0, 4, 2])?, seed)
        });
    }
}

#[test]
fn pointwise_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&mut rng, &[2, 1, 4, 5]);
    let w = Tensor::from_vec(vec![1.0], &[1, 1, 1, 1]).unwrap();
    assert_eq!(conv2d(&x, &w, None, (1, 1), (0, 0)).unwrap().to_vec(), x.to_vec());
}

#[test]
fn same_padding_preserves_spatial_dims() {
    let x = Tensor::<f32>::zeros(&[1, 2, 7, 9]);
    let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
    assert_eq!(conv2d(&x, &w, None, (1, 1), (1, 1)).unwrap().shape(), &[1, 3, 7, 9]);
    let big = Tensor::<f32>::zeros(&[1, 2, 5, 5, 5]);
    assert!(conv2d(&big, &w, None, (1, 1), (1, 1)).is_err());
}

#[test]
fn conv2d_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, &[2, 3, 5, 6]);
    let w = randn(&mut rng, &[4, 3, 3, 2]);
    let b = randn(&mut rng, &[4]);
    let y = conv2d(&x, &w, Some(&b), (2, 1), (1, 0)).unwrap();
    let (ho, wo) = ((5 + 2 - 3) / 2 + 1, 6 - 2 + 1);
    assert_eq!(y.shape(), &[2, 4, ho, wo]);
    let (xv, wv, bv, yv) = (x.to_vec(), w.to_vec(), b.to_vec(), y.to_vec());
    for n in 0..2 {
        for co in 0..4 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bv[co];
                    for ci in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..2 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = ox + kx;
                                if (0..5).contains(&iy) {
                                    acc += xv[((n * 3 + ci) * 5 + iy as usize) * 6 + ix]
                                        * wv[((co * 3 + ci) * 3 + ky) * 2 + kx];
                                }
                            }
                        }
                    }
                    let got = yv[((n * 4 + co) * ho + oy) * wo + ox];
                    assert!((acc - got).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv2d_gradients() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = randn(&mut rng, &[2, 3, 5, 5]);
        let w = randn(&mut rng, &[4, 3, 3, 3]);
        let b = randn(&mut rng, &[4]);
        assert_gradcheck("conv2d", &[x.clone(), w.clone(), b.clone()], &|t| {
            weighted_sum(&conv2d(&t[0], &t[1], Some(&t[2]), (1, 1), (1, 1))?, seed)
        });
        let w1 = randn(&mut rng, &[2, 3, 1, 1]);
        assert_gradcheck("conv2d 1x1", &[x.clone(), w1], &|t| {
            weighted_sum(&conv2d(&t[0], &t[1], None, (1, 1), (0, 0))?, seed)
        });
    }
}

#[test]
fn max_pool_ties_route_to_first_element() {
    let x = Tensor::<f64>::parameter(vec![2.0; 16], &[1, 1, 4, 4]).unwrap();
    let y = max_pool2d(&x, (2, 2), (2, 2)).unwrap();
    assert_eq!(y.to_vec(), vec![2.0; 4]);
    sum(&y).backward().unwrap();
    let g = x.grad().unwrap();
    let expected: Vec<f64> = (0..16)
        .map(|i| {
            let (r, c) = (i / 4, i % 4);
            if r % 2 == 0 && c % 2 == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    assert_eq!(g, expected);
}

#[test]
fn max_pool_2x1_halves_height_only() {
    let x = Tensor::<f32>::zeros(&[2, 3, 8, 5]);
    assert_eq!(max_pool2d(&x, (2, 1), (2, 1)).unwrap().shape(), &[2, 3, 4, 5]);
}

#[test]
fn max_pool_gradients() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        // distinct values so the argmax is stable under ±eps
        let mut vals: Vec<f64> = (0..2 * 2 * 6 * 4).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::parameter(vals, &[2, 2, 6, 4]).unwrap();
        assert_gradcheck("max_pool2d", std::slice::from_ref(&x), &|t| {
            weighted_sum(&max_pool2d(&t[0], (2, 2), (2, 2))?, seed)
        });
        assert_gradcheck("max_pool2d 2x1", std::slice::from_ref(&x), &|t| {
            weighted_sum(&max_pool2d(&t[0], (2, 1), (2, 1))?, seed)
        });
    }
}

#[test]
fn batch_norm_training_standardizes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = randn(&mut rng, &[4, 3, 5, 5]);
    let g = Tensor::full(&[3], 1.0);
    let b = Tensor::zeros(&[3]);
    let rm = Tensor::zeros(&[3]);
    let rv = Tensor::full(&[3], 1.0);
    let y = batch_norm2d(&x, &g, &b, &rm, &rv, true, 0.1, 1e-12).unwrap().to_vec();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| y[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }
    // running stats moved 10% of the way toward the batch statistics
    assert!(rm.to_vec().iter().all(|v| v.abs() > 0.0));
}

#[test]
fn batch_norm_eval_is_deterministic_and_uses_running_stats() {
    let x = Tensor::<f64>::from_vec(vec![1.0, 3.0], &[1, 1, 1, 2]).unwrap();
    let g = Tensor::full(&[1], 2.0);
    let b = Tensor::full(&[1], 0.5);
    let rm = Tensor::full(&[1], 1.0);
    let rv = Tensor::full(&[1], 4.0);
    let y1 = batch_norm2d(&x, &g, &b, &rm, &rv, false, 0.1, 0.0).unwrap().to_vec();
    let y2 = batch_norm2d(&x, &g, &b, &rm, &rv, false, 0.1, 0.0).unwrap().to_vec();
    assert_eq!(y1, y2);
    assert_eq!(y1, vec![0.5, 2.5]);
    assert_eq!(rm.to_vec(), vec![1.0]);
}

#[test]
fn batch_norm_gradients() {
    for (seed, training) in [(0, true), (1, true), (2, false)] {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = randn(&mut rng, &[2, 3, 3, 4]);
        let g = randn(&mut rng, &[3]);
        let b = randn(&mut rng, &[3]);
        let rm = Tensor::zeros(&[3]);
        let rv = Tensor::full(&[3], 1.5);
        assert_gradcheck("batch_norm2d", &[x, g, b], &|t| {
            weighted_sum(&batch_norm2d(&t[0], &t[1], &t[2], &rm, &rv, training, 0.1, 1e-5)?, seed)
        });
    }
}

#[test]
fn dropout_is_identity_in_eval_and_scales_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::from_vec(vec![1.0; 1000], &[1000]).unwrap();
    assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap().to_vec(), x.to_vec());
    let y = dropout(&x, 0.5, true, &mut rng).unwrap().to_vec();
    assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    let kept = y.iter().filter(|&&v| v > 0.0).count();
    assert!((400..600).contains(&kept));
    assert!(dropout(&x, 1.0, true, &mut rng).is_err());
}

#[test]
fn bce_of_one_half_is_ln_two() {
    let p = Tensor::<f64>::full(&[3, 4], 0.5);
    let l = bce_loss(&p, &p).unwrap().item();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn bce_gradient_wrt_logit_vanishes_at_target() {
    let targets = [0.1, 0.37, 0.5, 0.93];
    let logits: Vec<f64> = targets.iter().map(|&t: &f64| (t / (1.0 - t)).ln()).collect();
    let s = Tensor::parameter(logits, &[4]).unwrap();
    let p = sigmoid(&s);
    let t = Tensor::from_vec(p.to_vec(), &[4]).unwrap();
    bce_loss(&p, &t).unwrap().backward().unwrap();
    assert!(s.grad().unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn bce_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p: Vec<f64> = (0..40).map(|_| rng.random_range(0.001..0.999)).collect();
    let t: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut naive = 0.0;
    for i in 0..40 {
        naive += -(t[i] * p[i].ln() + (1.0 - t[i]) * (1.0 - p[i]).ln());
    }
    naive /= 40.0;
    let got = bce_loss(
        &Tensor::from_vec(p, &[8, 5]).unwrap(),
        &Tensor::from_vec(t, &[8, 5]).unwrap(),
    )
    .unwrap()
    .item();
    assert!((got - naive).abs() < 1e-9);
}

#[test]
fn bce_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let p = Tensor::parameter((0..12).map(|_| rng.random_range(0.05..0.95)).collect(), &[3, 4]).unwrap();
    let t = Tensor::parameter((0..12).map(|_| rng.random_range(0.0..1.0)).collect(), &[3, 4]).unwrap();
    assert_gradcheck("bce", &[p, t], &|t| bce_loss(&t[0], &t[1]));
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    let p = Tensor::<f64>::parameter(vec![1.0, -1.0, 0.5], &[3]).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), std::slice::from_ref(&p));
    sum(&mul(&p, &Tensor::from_vec(vec![3.0, -0.2, 50.0], &[3]).unwrap()).unwrap())
        .backward()
        .unwrap();
    opt.step(std::slice::from_ref(&p)).unwrap();
    let after = p.to_vec();
    let expected = [1.0 - 1e-4, -1.0 + 1e-4, 0.5 - 1e-4];
    for (a, e) in after.iter().zip(expected) {
        assert!((a - e).abs() < 1e-9, "{a} vs {e}");
    }
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let p = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), std::slice::from_ref(&p));
    opt.step(std::slice::from_ref(&p)).unwrap();
    assert_eq!(p.to_vec(), vec![1.0, 2.0]);
}

/// Textbook scalar Adam, used as the oracle for the tensor version.
fn scalar_adam(x0: f64, target: f64, cfg: AdamConfig, steps: usize) -> f64 {
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * (x - target);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32));
        x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    x
}

#[test]
fn adam_converges_on_quadratic_bowl_like_scalar_reference() {
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let start = vec![1.0, -0.6, 0.3];
    let target = vec![0.2, 0.1, -0.4];
    let p = Tensor::<f64>::parameter(start.clone(), &[3]).unwrap();
    let c = Tensor::from_vec(target.clone(), &[3]).unwrap();
    let mut opt = Adam::new(cfg, std::slice::from_ref(&p));
    for _ in 0..200 {
        p.zero_grad();
        let d = sub(&p, &c).unwrap();
        sum(&mul(&d, &d).unwrap()).backward().unwrap();
        opt.step(std::slice::from_ref(&p)).unwrap();
    }
    for ((&got, &x0), &tgt) in p.to_vec().iter().zip(&start).zip(&target) {
        let reference = scalar_adam(x0, tgt, cfg, 200);
        assert!((got - reference).abs() < 1e-12, "{got} vs {reference}");
        assert!((got - tgt).abs() < 1e-3, "{got} vs optimum {tgt}");
    }
}
