//! Operators against independent nested-loop and index oracles.

use ddcn::numerics::{ParamSet, Tape, Tensor};
use ddcn::ops::{
    pixel_shuffle_tensor, ConvDims, DdcLayer, Involution3d, PatchEmbed, StaticKernelConv,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::oracles::*;

// ---------------------------------------------------------------------------
// loop oracles

#[test]
fn ddc_matches_loop_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(n, c, g, h, w, k) in &[(1, 1, 1, 5, 5, 3), (2, 4, 2, 6, 6, 3), (2, 3, 1, 4, 5, 1), (1, 2, 2, 6, 6, 5)] {
        let x = rand_tensor(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let off = rand_tensor(&[n, 2 * k * k, h, w], -1.5, 1.5, &mut rng);
        let ker = rand_tensor(&[n, g, k * k, h, w], -1.0, 1.0, &mut rng);
        assert_eq!(run_ddc(&x, &off, &ker, k), oracle_ddc(&x, &off, &ker, k));
    }
}

#[test]
fn involution_matches_loop_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(n, c, g, d, h, w, k) in &[(1, 2, 1, 3, 4, 4, 3), (2, 4, 2, 3, 6, 6, 3), (2, 4, 4, 2, 3, 5, 1)] {
        let x = rand_tensor(&[n, c, d, h, w], -2.0, 2.0, &mut rng);
        let ker = rand_tensor(&[n, g, k * k * k, d, h, w], -1.0, 1.0, &mut rng);
        let bias = rand_tensor(&[c], -1.0, 1.0, &mut rng);
        assert_eq!(
            run_involution(&x, &ker, &bias, k),
            oracle_involution(&x, &ker, bias.data(), k)
        );
    }
}

#[test]
fn convolutions_match_loop_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[1, 3, 4, 4], -2.0, 2.0, &mut rng);
    let w1 = rand_tensor(&[5, 3, 1, 1], -1.0, 1.0, &mut rng);
    let b = rand_tensor(&[5], -1.0, 1.0, &mut rng);
    let pw = run_conv(&x, &w1.reshape(vec![5, 3]).unwrap(), Some(&b), true);
    assert_eq!(pw, oracle_conv2d(&x, &w1, Some(&b)));

    let x = rand_tensor(&[2, 2, 5, 6], -2.0, 2.0, &mut rng);
    let w3 = rand_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
    let b = rand_tensor(&[3], -1.0, 1.0, &mut rng);
    assert_eq!(run_conv(&x, &w3, Some(&b), false), oracle_conv2d(&x, &w3, Some(&b)));
}

#[test]
fn patch_embed_matches_per_patch_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamSet::<f64>::new();
    let (c, d, p) = (2, 5, 2);
    let embed = PatchEmbed::new(&mut params, "pe", c, d, p, &mut rng).unwrap();
    randomize(&mut params, &mut rng);
    let x = rand_tensor(&[2, 3, c, 4, 6], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = embed.forward(&mut tape, &params, xv).unwrap();
    let y = tape.value(y).unwrap();
    assert_eq!(y.shape(), [2, 3, d, 2, 3]);

    let w = &params.get(embed.proj.weight).value;
    let bias = &params.get(embed.proj.bias.unwrap()).value;
    for b in 0..2 {
        for t in 0..3 {
            for py in 0..2 {
                for px in 0..3 {
                    // flatten the patch in (c, i, j) order and multiply by the (D, C·p²) matrix
                    let mut patch = Vec::new();
                    for ci in 0..c {
                        for i in 0..p {
                            for j in 0..p {
                                patch.push(x.at(&[b, t, ci, py * p + i, px * p + j]));
                            }
                        }
                    }
                    for o in 0..d {
                        let mut acc = 0.0;
                        for (m, v) in patch.iter().enumerate() {
                            acc += w.data()[o * c * p * p + m] * v;
                        }
                        acc += bias.data()[o];
                        assert_eq!(y.at(&[b, t, o, py, px]), acc);
                    }
                }
            }
        }
    }
}

#[test]
fn pixel_shuffle_matches_index_arithmetic() {
    let (b, c, p, h, w) = (2, 3, 2, 3, 4);
    let x = Tensor::<f64>::from_fn(vec![b, c * p * p, h, w], |i| i as f64).unwrap();
    let y = pixel_shuffle_tensor(&x, p).unwrap();
    assert_eq!(y.shape(), [b, c, h * p, w * p]);
    let mut seen = vec![false; x.numel()];
    for bi in 0..b {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    for i in 0..p {
                        for j in 0..p {
                            let v = x.at(&[bi, ci * p * p + i * p + j, yy, xx]);
                            assert_eq!(y.at(&[bi, ci, yy * p + i, xx * p + j]), v);
                            seen[v as usize] = true;
                        }
                    }
                }
            }
        }
    }
    assert!(seen.into_iter().all(|s| s), "not a permutation");
}

// ---------------------------------------------------------------------------
// degeneracy identities

#[test]
fn degeneracy_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, k) = (4, 3);
    let mut params = ParamSet::<f64>::new();
    let layer = DdcLayer::new(&mut params, "ddc", c, k, 2, &mut rng).unwrap();
    // constant kernels: zero kernel-branch weights, kernel values in the bias
    let taps = rand_tensor(&[2, k * k], -1.0, 1.0, &mut rng);
    params.get_mut(layer.kernel_branch.weight).value.data_mut().fill(0.0);
    params
        .get_mut(layer.kernel_branch.bias.unwrap())
        .value
        .data_mut()
        .copy_from_slice(taps.data());
    let x = rand_tensor(&[2, c, 5, 6], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &params, xv).unwrap();
    let ddc_out = tape.value(y).unwrap().clone();

    // the same kernel as a (channel-diagonal) standard convolution
    let mut w = Tensor::zeros(vec![c, c, k, k]).unwrap();
    for ch in 0..c {
        for t in 0..k * k {
            w.set(&[ch, ch, t / k, t % k], taps.at(&[ch / 2, t]));
        }
    }
    let conv_out = run_conv(&x, &w, None, false);
    assert!(ddc_out.max_abs_diff(&conv_out).unwrap() <= 1e-6);

    // K = 1 standard conv equals pointwise conv exactly
    let w1 = rand_tensor(&[3, c, 1, 1], -1.0, 1.0, &mut rng);
    let b = rand_tensor(&[3], -1.0, 1.0, &mut rng);
    assert_eq!(
        run_conv(&x, &w1, Some(&b), false),
        run_conv(&x, &w1.reshape(vec![3, c]).unwrap(), Some(&b), true)
    );
}

#[test]
fn one_hot_center_kernels_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let k = 3;
    let x = rand_tensor(&[2, 4, 5, 5], -2.0, 2.0, &mut rng);
    let off = Tensor::zeros(vec![2, 2 * k * k, 5, 5]).unwrap();
    let ker = Tensor::from_fn(vec![2, 2, k * k, 5, 5], |i| if (i / 25) % (k * k) == 4 { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(run_ddc(&x, &off, &ker, k), x);

    let x = rand_tensor(&[2, 4, 3, 4, 4], -2.0, 2.0, &mut rng);
    let np = 3 * 4 * 4;
    let ker = Tensor::from_fn(vec![2, 2, 27, 3, 4, 4], |i| if (i / np) % 27 == 13 { 1.0 } else { 0.0 }).unwrap();
    let zero_bias = Tensor::zeros(vec![4]).unwrap();
    assert_eq!(run_involution(&x, &ker, &zero_bias, k), x);
}

#[test]
fn zeroed_offset_branch_gives_pure_dynamic_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamSet::<f64>::new();
    let layer = DdcLayer::new(&mut params, "ddc", 2, 3, 1, &mut rng).unwrap();
    let x = rand_tensor(&[1, 2, 4, 4], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let off = layer.offset_branch.forward(&mut tape, &params, xv).unwrap();
    assert!(tape.value(off).unwrap().data().iter().all(|&v| v == 0.0));
    let flat = layer.kernel_branch.forward(&mut tape, &params, xv).unwrap();
    let ker = tape.reshape(flat, &[1, 1, 9, 4, 4]).unwrap();
    let ker = tape.value(ker).unwrap().clone();
    let y = layer.forward(&mut tape, &params, xv).unwrap();
    assert_eq!(tape.value(y).unwrap(), &run_ddc(&x, &Tensor::zeros(vec![1, 18, 4, 4]).unwrap(), &ker, 3));
}

#[test]
fn zero_generated_kernels_leave_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ParamSet::<f64>::new();
    let inv = Involution3d::new(&mut params, "inv", 4, 3, 1, 4, &mut rng).unwrap();
    zero_params(&mut params);
    params.get_mut(inv.bias).value.data_mut().fill(0.5);
    let x = rand_tensor(&[1, 4, 2, 3, 3], -2.0, 2.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = inv.forward(&mut tape, &params, xv).unwrap();
    assert!(tape.value(y).unwrap().data().iter().all(|&v| v == 0.5));
}

// ---------------------------------------------------------------------------
// properties

fn shape_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, u64)> {
    // (batch, groups, channels per group, h, w, seed)
    (1usize..3, 1usize..3, 1usize..3, 1usize..6, 1usize..6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ddc_layer_preserves_shape((n, g, cpg, h, w, seed) in shape_case(), k in prop::sample::select(vec![1usize, 3])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::<f64>::new();
        let layer = DdcLayer::new(&mut params, "ddc", g * cpg, k, g, &mut rng).unwrap();
        randomize(&mut params, &mut rng);
        let x = rand_tensor(&[n, g * cpg, h, w], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &params, xv).unwrap();
        prop_assert_eq!(tape.value(y).unwrap().shape(), x.shape());
    }

    #[test]
    fn involution_preserves_shape((n, g, cpg, h, w, seed) in shape_case(), d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = g * cpg;
        let mut params = ParamSet::<f64>::new();
        let inv = Involution3d::new(&mut params, "inv", c, 3, g, 1, &mut rng).unwrap();
        let x = rand_tensor(&[n, c, d, h, w], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = inv.forward(&mut tape, &params, xv).unwrap();
        prop_assert_eq!(tape.value(y).unwrap().shape(), x.shape());
    }

    #[test]
    fn same_padded_convs_preserve_spatial_shape((n, _g, cin, h, w, seed) in shape_case(), cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[n, cin, h, w], -1.0, 1.0, &mut rng);
        let wt = rand_tensor(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let y = run_conv(&x, &wt, None, false);
        prop_assert_eq!(y.shape(), &[n, cout, h, w][..]);
        let mut params = ParamSet::<f64>::new();
        let sk = StaticKernelConv::new(&mut params, "s", cin, k, 1, ConvDims::Two, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = sk.forward(&mut tape, &params, xv).unwrap();
        prop_assert_eq!(tape.value(y).unwrap().shape(), x.shape());
    }

    #[test]
    fn involution_is_batch_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::<f64>::new();
        let inv = Involution3d::new(&mut params, "inv", 4, 3, 2, 2, &mut rng).unwrap();
        randomize(&mut params, &mut rng);
        let rows: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[4, 2, 3, 3], -1.0, 1.0, &mut rng)).collect();
        let run = |order: &[usize]| {
            let x = Tensor::stack(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let y = inv.forward(&mut tape, &params, xv).unwrap();
            tape.value(y).unwrap().clone()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        for (pos, &src) in [2usize, 0, 1].iter().enumerate() {
            prop_assert_eq!(b.index_first(pos).unwrap(), a.index_first(src).unwrap());
        }
    }

    #[test]
    fn bilinear_is_linear_between_lattice_points(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[1, 1, 4, 4], -3.0, 3.0, &mut rng);
        let (r, q) = (rng.gen_range(0..3) as f64, rng.gen_range(0..3) as f64);
        let along_q = ddcn::ops::bilinear_sample(&x, 0, 0, r, q + t).unwrap();
        let lin = (1.0 - t) * x.at(&[0, 0, r as usize, q as usize]) + t * x.at(&[0, 0, r as usize, q as usize + 1]);
        prop_assert!((along_q - lin).abs() < 1e-12);
        let along_r = ddcn::ops::bilinear_sample(&x, 0, 0, r + t, q).unwrap();
        let lin = (1.0 - t) * x.at(&[0, 0, r as usize, q as usize]) + t * x.at(&[0, 0, r as usize + 1, q as usize]);
        prop_assert!((along_r - lin).abs() < 1e-12);
    }
}
