//! Independent nested-loop references for the operators.

use ddcn::numerics::{ParamSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi)).unwrap()
}

pub fn zero_params(params: &mut ParamSet<f64>) {
    for p in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn randomize(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for p in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
}

/// Bilinear read with zero padding, written out explicitly.
pub fn oracle_sample(x: &Tensor<f64>, n: usize, c: usize, r: f64, q: f64) -> f64 {
    let (h, w) = (x.dim(2) as isize, x.dim(3) as isize);
    let (r0, q0) = (r.floor(), q.floor());
    let (lr, lq) = (r - r0, q - q0);
    let (hr, hq) = (1.0 - lr, 1.0 - lq);
    let corners = [
        (0, 0, hr * hq),
        (0, 1, hr * lq),
        (1, 0, lr * hq),
        (1, 1, lr * lq),
    ];
    let mut acc = 0.0;
    for (dr, dq, wt) in corners {
        let (rr, qq) = (r0 as isize + dr, q0 as isize + dq);
        if rr >= 0 && rr < h && qq >= 0 && qq < w {
            acc += wt * x.at(&[n, c, rr as usize, qq as usize]);
        }
    }
    acc
}

pub fn oracle_ddc(x: &Tensor<f64>, off: &Tensor<f64>, ker: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let (nb, ch, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let groups = ker.dim(1);
    let half = (k / 2) as f64;
    let mut out = Tensor::zeros(vec![nb, ch, h, w]).unwrap();
    for n in 0..nb {
        for c in 0..ch {
            let g = c / (ch / groups);
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let t = i * k + j;
                            let r = (y as f64 + i as f64 - half) + off.at(&[n, 2 * t, y, xx]);
                            let q = (xx as f64 + j as f64 - half) + off.at(&[n, 2 * t + 1, y, xx]);
                            acc += ker.at(&[n, g, t, y, xx]) * oracle_sample(x, n, c, r, q);
                        }
                    }
                    out.set(&[n, c, y, xx], acc);
                }
            }
        }
    }
    out
}

pub fn oracle_involution(x: &Tensor<f64>, ker: &Tensor<f64>, bias: &[f64], k: usize) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let (nb, ch, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let groups = ker.dim(1);
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(s.clone()).unwrap();
    for n in 0..nb {
        for c in 0..ch {
            let g = c / (ch / groups);
            for t in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for a in 0..k {
                            for b in 0..k {
                                for e in 0..k {
                                    let (st, sy, sx) = (
                                        t as isize + a as isize - half,
                                        y as isize + b as isize - half,
                                        xx as isize + e as isize - half,
                                    );
                                    if st < 0 || sy < 0 || sx < 0 || st >= d as isize || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let tap = (a * k + b) * k + e;
                                    acc += ker.at(&[n, g, tap, t, y, xx])
                                        * x.at(&[n, c, st as usize, sy as usize, sx as usize]);
                                }
                            }
                        }
                        out.set(&[n, c, t, y, xx], acc + bias[c]);
                    }
                }
            }
        }
    }
    out
}

/// Zero-padded 2D cross-correlation, `pad = (K-1)/2`, stride 1.
pub fn oracle_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let (nb, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, k) = (w.dim(0), w.dim(2));
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(vec![nb, cout, h, wd]).unwrap();
    for n in 0..nb {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for i in 0..k {
                            for j in 0..k {
                                let (sy, sx) = (y as isize + i as isize - half, xx as isize + j as isize - half);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.at(&[co, ci, i, j]) * x.at(&[n, ci, sy as usize, sx as usize]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b.data()[co];
                    }
                    out.set(&[n, co, y, xx], acc);
                }
            }
        }
    }
    out
}

pub fn run_ddc(x: &Tensor<f64>, off: &Tensor<f64>, ker: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (a, b, c) = (tape.constant(x.clone()), tape.constant(off.clone()), tape.constant(ker.clone()));
    let y = tape.ddc(a, b, c, k).unwrap();
    tape.value(y).unwrap().clone()
}

pub fn run_involution(x: &Tensor<f64>, ker: &Tensor<f64>, bias: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (a, b, c) = (tape.constant(x.clone()), tape.constant(ker.clone()), tape.constant(bias.clone()));
    let y = tape.involution(a, b, Some(c), [k; 3]).unwrap();
    tape.value(y).unwrap().clone()
}

pub fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, pointwise: bool) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = b.map(|b| tape.constant(b.clone()));
    let y = if pointwise {
        tape.pointwise_conv(xv, wv, bv).unwrap()
    } else {
        let k = w.dim(2);
        tape.conv(xv, wv, bv, 1, (k - 1) / 2).unwrap()
    };
    tape.value(y).unwrap().clone()
}

/// Straightforward scalar loops in f64.
pub fn metrics_oracle(pred: &[f32], actual: &[f32], thr: f64) -> (f64, f64, Option<f64>, usize) {
    let (mut se, mut ae, mut pe, mut kept) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..pred.len() {
        let (p, y) = (pred[i] as f64, actual[i] as f64);
        se += (p - y) * (p - y);
        ae += (p - y).abs();
        if y.abs() > thr {
            pe += ((p - y) / y).abs();
            kept += 1;
        }
    }
    let n = pred.len() as f64;
    let mape = (kept > 0).then(|| 100.0 * pe / kept as f64);
    ((se / n).sqrt(), ae / n, mape, kept)
}
