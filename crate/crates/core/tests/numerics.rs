//! Operator checks against direct nested-loop references, closed forms and
//! finite differences.

use msnas_core::numerics::gradcheck;
use msnas_core::numerics::kernels::{self, ConvSpec};
use msnas_core::numerics::{
    dil_conv3x3, sep_conv3x3, Ctx, ParamGroup, ParamStore, SepConvParams, Stencil, Tape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Textbook convolution: out[b,co,y,x] = sum w[co,ci',ky,kx] * in[b,ci,y+ky*d-p,x+kx*d-p].
fn conv_direct(x: &Tensor, w: &Tensor, pad: usize, dil: usize, groups: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape();
    let [cout, cing, kh, kw] = w.shape();
    let ho = h + 2 * pad - dil * (kh - 1);
    let wo = wd + 2 * pad - dil * (kw - 1);
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            let g = co / (cout / groups);
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for cig in 0..cing {
                        let ci = g * (cin / groups) + cig;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as i64 + (ky * dil) as i64 - pad as i64;
                                let ix = xx as i64 + (kx * dil) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                acc += w.at(co, cig, ky, kx) * x.at(b, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(b, co, y, xx, acc);
                }
            }
        }
    }
    out
}

fn norm_direct(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = x.clone();
    for ch in 0..c {
        let mut vals = Vec::new();
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    vals.push(x.at(b, ch, y, xx));
                }
            }
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let v = (x.at(b, ch, y, xx) - mean) / (var + 1e-5).sqrt();
                    out.set(b, ch, y, xx, gamma[ch] * v + beta[ch]);
                }
            }
        }
    }
    out
}

fn store_with_sep(c_in: usize, c_out: usize, stencil: Stencil, seed: u64) -> (ParamStore, SepConvParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = SepConvParams::new(&mut store, &mut rng, "op", c_in, c_out, stencil);
    (store, w)
}

#[test]
fn sep_conv_zero_input_gives_zero() {
    let (store, w) = store_with_sep(1, 1, Stencil::Dense, 1);
    let mut ctx = Ctx::new(Tape::new(), &store, true);
    let x = ctx.input(Tensor::zeros([1, 1, 3, 3]));
    let y = sep_conv3x3(&mut ctx, x, &w).unwrap();
    assert!(ctx.tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn sep_conv_identity_kernels_match_direct_oracle() {
    let (mut store, w) = store_with_sep(2, 2, Stencil::Dense, 2);
    let mut dw = Tensor::zeros([2, 1, 3, 3]);
    dw.set(0, 0, 1, 1, 1.0);
    dw.set(1, 0, 1, 1, 1.0);
    let mut pw = Tensor::zeros([2, 2, 1, 1]);
    pw.set(0, 0, 0, 0, 1.0);
    pw.set(1, 1, 0, 0, 1.0);
    store.get_mut(w.depthwise).tensor = dw.clone();
    store.get_mut(w.pointwise).tensor = pw.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, [1, 2, 4, 4]);

    let relu = x.map(|v| v.max(0.0));
    let h = conv_direct(&relu, &dw, 1, 1, 2);
    let h = conv_direct(&h, &pw, 0, 1, 1);
    let mut expected = norm_direct(&h, &[1.0, 1.0], &[0.0, 0.0]);
    expected.add_assign(&x);

    let mut ctx = Ctx::new(Tape::new(), &store, true);
    let xv = ctx.input(x);
    let y = sep_conv3x3(&mut ctx, xv, &w).unwrap();
    assert!(ctx.tape.value(y).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn sep_and_dil_blocks_match_direct_oracle_on_random_weights() {
    for (stencil, pad, dil) in [(Stencil::Dense, 1, 1), (Stencil::Dilated2, 2, 2)] {
        for (c_in, c_out) in [(2, 2), (4, 8)] {
            let (store, w) = store_with_sep(c_in, c_out, stencil, 11);
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let x = random_tensor(&mut rng, [2, c_in, 8, 8]);
            let relu = x.map(|v| v.max(0.0));
            let h = conv_direct(&relu, store.tensor(w.depthwise), pad, dil, c_in);
            let h = conv_direct(&h, store.tensor(w.pointwise), 0, 1, 1);
            let mut expected = norm_direct(&h, &vec![1.0; c_out], &vec![0.0; c_out]);
            let res = match w.residual {
                Some(r) => conv_direct(&x, store.tensor(r), 0, 1, 1),
                None => x.clone(),
            };
            expected.add_assign(&res);

            let mut ctx = Ctx::new(Tape::new(), &store, true);
            let xv = ctx.input(x);
            let y = match stencil {
                Stencil::Dense => sep_conv3x3(&mut ctx, xv, &w),
                Stencil::Dilated2 => dil_conv3x3(&mut ctx, xv, &w),
            }
            .unwrap();
            assert!(ctx.tape.value(y).max_abs_diff(&expected) < 1e-12);
        }
    }
}

#[test]
fn sep_conv_rejects_channel_mismatch() {
    let (store, w) = store_with_sep(2, 2, Stencil::Dense, 1);
    let mut ctx = Ctx::new(Tape::new(), &store, true);
    let x = ctx.input(Tensor::zeros([1, 3, 4, 4]));
    let err = sep_conv3x3(&mut ctx, x, &w).unwrap_err();
    assert!(matches!(err, msnas_core::Error::Shape { .. }));
}

#[test]
fn dilated_conv_constant_input_interior() {
    let x = Tensor::full([1, 1, 9, 9], 0.7);
    let mut k = Tensor::zeros([1, 1, 3, 3]);
    let vals = [0.1, 0.05, 0.2, 0.15, 0.1, 0.1, 0.05, 0.15, 0.1];
    k.data_mut().copy_from_slice(&vals);
    let y = kernels::conv2d(&x, &k, ConvSpec::dilated3x3(1)).unwrap();
    assert_eq!(y.shape(), [1, 1, 9, 9]);
    for r in 2..7 {
        for c in 2..7 {
            assert!((y.at(0, 0, r, c) - 0.7).abs() < 1e-12);
        }
    }
    assert!(y.max_abs_diff(&conv_direct(&x, &k, 2, 2, 1)) < 1e-12);
    let zero = kernels::conv2d(&x, &Tensor::zeros([1, 1, 3, 3]), ConvSpec::dilated3x3(1)).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_direct_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(1..=2);
        let c = [1, 2, 4][rng.gen_range(0..3)];
        let h = rng.gen_range(3..=8);
        let w = rng.gen_range(3..=8);
        let x = random_tensor(&mut rng, [n, c, h, w]);
        for (spec, groups, k) in [
            (ConvSpec::same3x3(1), 1, 3),
            (ConvSpec::same3x3(c), c, 3),
            (ConvSpec::dilated3x3(c), c, 3),
            (ConvSpec::POINTWISE, 1, 1),
        ] {
            let cout = if groups == 1 { 3 } else { c };
            let kern = random_tensor(&mut rng, [cout, c / groups, k, k]);
            let got = kernels::conv2d(&x, &kern, spec).unwrap();
            let want = conv_direct(&x, &kern, spec.padding, spec.dilation, groups);
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }
}

#[test]
fn avg_pool_closed_forms() {
    let v = 1.8;
    let y = kernels::avg_pool3x3(&Tensor::full([1, 1, 5, 5], v));
    assert!((y.at(0, 0, 2, 2) - v).abs() < 1e-12);
    assert!((y.at(0, 0, 0, 0) - 4.0 * v / 9.0).abs() < 1e-12);
    assert!((y.at(0, 0, 4, 4) - 4.0 * v / 9.0).abs() < 1e-12);
    let y = kernels::avg_pool3x3(&Tensor::full([1, 1, 1, 1], v));
    assert!((y.data()[0] - v / 9.0).abs() < 1e-12);
    let y = kernels::avg_pool3x3(&Tensor::zeros([1, 2, 4, 4]));
    assert!(y.data().iter().all(|&e| e == 0.0));
}

#[test]
fn avg_pool_matches_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, [2, 4, 8, 8]);
    let mut ones = Tensor::zeros([4, 1, 3, 3]);
    for v in ones.data_mut() {
        *v = 1.0 / 9.0;
    }
    let want = conv_direct(&x, &ones, 1, 1, 4);
    assert!(kernels::avg_pool3x3(&x).max_abs_diff(&want) < 1e-12);
}

#[test]
fn max_pool_cases() {
    let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(kernels::max_pool2(&x).unwrap().0.data(), &[4.0]);
    let (y, _) = kernels::max_pool2(&Tensor::full([1, 2, 4, 6], -0.5)).unwrap();
    assert_eq!(y.shape(), [1, 2, 2, 3]);
    assert!(y.data().iter().all(|&v| v == -0.5));
    assert!(kernels::max_pool2(&Tensor::zeros([1, 1, 3, 4])).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, [1, 2, 8, 8]);
    let (y, _) = kernels::max_pool2(&x).unwrap();
    for c in 0..2 {
        for r in 0..4 {
            for q in 0..4 {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(a, b)| x.at(0, c, 2 * r + a, 2 * q + b))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.at(0, c, r, q), m);
            }
        }
    }
}

/// Half-pixel bilinear sample of a single plane at output coordinate (oy, ox).
fn bilinear_scalar(src: &[f64], h: usize, w: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) * (n as f64) / (2 * n) as f64 - 0.5).max(0.0);
        let lo = s.floor() as usize;
        let lo = lo.min(n - 1);
        let hi = if lo + 1 < n { lo + 1 } else { lo };
        (lo, hi, s - lo as f64)
    };
    let (y0, y1, fy) = coord(oy, h);
    let (x0, x1, fx) = coord(ox, w);
    let f = |y: usize, x: usize| src[y * w + x];
    f(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + f(y0, x1) * (1.0 - fy) * fx
        + f(y1, x0) * fy * (1.0 - fx)
        + f(y1, x1) * fy * fx
}

#[test]
fn bilinear_constant_and_ramp() {
    let y = kernels::bilinear_up2(&Tensor::full([1, 2, 3, 3], 0.25));
    assert_eq!(y.shape(), [1, 2, 6, 6]);
    assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let ramp = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = kernels::bilinear_up2(&ramp);
    for oy in 0..4 {
        for ox in 0..4 {
            let want = bilinear_scalar(ramp.data(), 2, 2, oy, ox);
            assert!((y.at(0, 0, oy, ox) - want).abs() < 1e-12);
        }
    }
    // first row by hand: 0, 0.25, 0.75, 1
    let row: Vec<f64> = (0..4).map(|x| y.at(0, 0, 0, x)).collect();
    for (a, b) in row.iter().zip([0.0, 0.25, 0.75, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn bilinear_matches_scalar_oracle_on_random_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_tensor(&mut rng, [1, 1, 3, 5]);
    let y = kernels::bilinear_up2(&x);
    for oy in 0..6 {
        for ox in 0..10 {
            assert!((y.at(0, 0, oy, ox) - bilinear_scalar(x.data(), 3, 5, oy, ox)).abs() < 1e-12);
        }
    }
}

/// Builds a store holding one "input" parameter so input gradients go through the checker.
fn input_store(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> (ParamStore, msnas_core::numerics::ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("x", ParamGroup::Weight, random_tensor(rng, shape));
    (store, id)
}

fn projection(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    random_tensor(rng, shape)
}

#[test]
fn gradients_of_primitive_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (store, x) = input_store(&mut rng, [2, 2, 4, 4]);
    let proj_up = projection(&mut rng, [2, 2, 8, 8]);
    let proj_same = projection(&mut rng, [2, 2, 4, 4]);
    let proj_down = projection(&mut rng, [2, 2, 2, 2]);

    let cases: Vec<(&str, Box<dyn Fn(&mut Ctx<'_>) -> msnas_core::Result<msnas_core::numerics::Var>>)> = vec![
        ("bilinear_up2", Box::new(|ctx: &mut Ctx<'_>| {
            let xv = ctx.p(x);
            let y = ctx.tape.bilinear_up2(xv);
            let w = ctx.input(proj_up.clone());
            dot(ctx, y, w)
        })),
        ("avg_pool3x3", Box::new(|ctx: &mut Ctx<'_>| {
            let xv = ctx.p(x);
            let y = ctx.tape.avg_pool3x3(xv);
            let w = ctx.input(proj_same.clone());
            dot(ctx, y, w)
        })),
        ("max_pool2", Box::new(|ctx: &mut Ctx<'_>| {
            let xv = ctx.p(x);
            let y = ctx.tape.max_pool2(xv)?;
            let w = ctx.input(proj_down.clone());
            dot(ctx, y, w)
        })),
    ];
    for (name, f) in cases {
        let report = gradcheck::check(&store, &[x], f).unwrap();
        assert!(report.passed(), "{name}: {:?}", report.mismatches);
        assert_eq!(report.checked, 64);
    }
}

/// sum(a * b) built from tape primitives.
fn dot(
    ctx: &mut Ctx<'_>,
    a: msnas_core::numerics::Var,
    b: msnas_core::numerics::Var,
) -> msnas_core::Result<msnas_core::numerics::Var> {
    let p = ctx.tape.mul(a, b)?;
    Ok(ctx.tape.total(p))
}

#[test]
fn separable_block_gradients_match_finite_differences() {
    for stencil in [Stencil::Dense, Stencil::Dilated2] {
        for (c_in, c_out) in [(2, 2), (2, 4)] {
            let mut rng = ChaCha8Rng::seed_from_u64(41);
            let mut store = ParamStore::new();
            let xid = store.add("x", ParamGroup::Weight, random_tensor(&mut rng, [2, c_in, 6, 6]));
            let w = SepConvParams::new(&mut store, &mut rng, "op", c_in, c_out, stencil);
            let proj = random_tensor(&mut rng, [2, c_out, 6, 6]);
            let ids: Vec<_> = store.iter().filter(|(_, p)| p.requires_grad).map(|(id, _)| id).collect();
            let forward = |ctx: &mut Ctx<'_>| {
                let xv = ctx.p(xid);
                let y = match stencil {
                    Stencil::Dense => sep_conv3x3(ctx, xv, &w)?,
                    Stencil::Dilated2 => dil_conv3x3(ctx, xv, &w)?,
                };
                let pv = ctx.input(proj.clone());
                dot(ctx, y, pv)
            };
            let report = gradcheck::check(&store, &ids, forward).unwrap();
            assert!(report.passed(), "{stencil:?}: {:?}", report.mismatches);

            // plain sum of the output, as stated for the kernel entries
            let forward_sum = |ctx: &mut Ctx<'_>| {
                let xv = ctx.p(xid);
                let y = sep_or_dil(ctx, xv, &w, stencil)?;
                Ok(ctx.tape.total(y))
            };
            let report = gradcheck::check(&store, &[w.depthwise, w.pointwise], forward_sum).unwrap();
            assert!(report.passed());
        }
    }
}

fn sep_or_dil(
    ctx: &mut Ctx<'_>,
    x: msnas_core::numerics::Var,
    w: &SepConvParams,
    stencil: Stencil,
) -> msnas_core::Result<msnas_core::numerics::Var> {
    match stencil {
        Stencil::Dense => sep_conv3x3(ctx, x, w),
        Stencil::Dilated2 => dil_conv3x3(ctx, x, w),
    }
}

#[test]
fn backward_of_param_sum_is_ones() {
    let mut store = ParamStore::new();
    let id = store.add("p", ParamGroup::Weight, Tensor::full([1, 2, 3, 3], 0.3));
    let mut tape = Tape::new();
    let v = tape.param(&store, id);
    let root = tape.total(v);
    let g = tape.backward(root).unwrap();
    assert!(g.get(id).unwrap().data().iter().all(|&e| e == 1.0));
}

#[test]
fn backward_requires_scalar_root() {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::zeros([1, 1, 2, 2]));
    assert!(tape.backward(v).is_err());
}

#[test]
fn untouched_params_get_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.add("a", ParamGroup::Weight, Tensor::scalar(2.0));
    let unused = store.add("b", ParamGroup::Weight, Tensor::full([1, 3, 1, 1], 1.0));
    let mut tape = Tape::new();
    let v = tape.param(&store, used);
    let root = tape.total(v);
    let g = tape.backward(root).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.get_or_zero(unused, [1, 3, 1, 1]), Tensor::zeros([1, 3, 1, 1]));
}

#[test]
fn softmax_dot_matches_analytic_jacobian() {
    let alpha = [0.3, -1.2, 0.8, 0.05];
    let consts = [1.5, -0.5, 2.0, 0.25];
    let mut store = ParamStore::new();
    let id = store.add("alpha", ParamGroup::Alpha, Tensor::vector(&alpha));
    let mut tape = Tape::new();
    let a = tape.param(&store, id);
    let s = tape.softmax(a).unwrap();
    let c = tape.constant(Tensor::vector(&consts));
    let prod = tape.mul(s, c).unwrap();
    let root = tape.total(prod);
    let g = tape.backward(root).unwrap();

    let e: Vec<f64> = alpha.iter().map(|v: &f64| v.exp()).collect();
    let z: f64 = e.iter().sum();
    let sm: Vec<f64> = e.iter().map(|v| v / z).collect();
    let mean: f64 = sm.iter().zip(&consts).map(|(a, b)| a * b).sum();
    for i in 0..4 {
        let want = sm[i] * (consts[i] - mean);
        assert!((g.get(id).unwrap().data()[i] - want).abs() < 1e-14);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let (store, w) = store_with_sep(4, 4, Stencil::Dilated2, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let x = random_tensor(&mut rng, [2, 4, 8, 8]);
        let mut ctx = Ctx::new(Tape::new(), &store, true);
        let xv = ctx.input(x);
        let y = dil_conv3x3(&mut ctx, xv, &w).unwrap();
        ctx.tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
