//! Composite operators built from tape primitives.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::kernels::ConvSpec;
use super::optim::{ParamGroup, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Running-statistics momentum for normalization layers.
pub const NORM_MOMENTUM: f64 = 0.1;

/// A forward pass in progress: the tape, the parameters it reads, and the
/// running-statistics updates collected in training mode.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    pub train: bool,
    stat_updates: Vec<StatUpdate>,
}

#[derive(Clone, Debug)]
pub struct StatUpdate {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: Tape, store: &'a ParamStore, train: bool) -> Self {
        Ctx {
            tape,
            store,
            train,
            stat_updates: Vec::new(),
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn into_parts(self) -> (Tape, Vec<StatUpdate>) {
        (self.tape, self.stat_updates)
    }

    pub fn norm(&mut self, x: Var, np: &NormParams) -> Result<Var> {
        let gamma = self.p(np.gamma);
        let beta = self.p(np.beta);
        if self.train {
            let count = {
                let [n, _, h, w] = self.tape.value(x).shape();
                n * h * w
            };
            let (out, mean, var) = self.tape.batch_norm(x, gamma, beta)?;
            self.stat_updates.push(StatUpdate {
                mean_id: np.running_mean,
                var_id: np.running_var,
                mean,
                var,
                count,
            });
            Ok(out)
        } else {
            let mean = self.store.tensor(np.running_mean).data().to_vec();
            let var = self.store.tensor(np.running_var).data().to_vec();
            self.tape.norm_eval(x, gamma, beta, &mean, &var)
        }
    }
}

/// Folds batch statistics into running statistics (unbiased variance).
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        let unbias = if u.count > 1 {
            u.count as f64 / (u.count - 1) as f64
        } else {
            1.0
        };
        let rm = store.get_mut(u.mean_id).tensor.data_mut();
        for (r, m) in rm.iter_mut().zip(&u.mean) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
        }
        let rv = store.get_mut(u.var_id).tensor.data_mut();
        for (r, v) in rv.iter_mut().zip(&u.var) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v * unbias;
        }
    }
}

pub(crate) fn normal_tensor(rng: &mut impl Rng, shape: Shape, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// Affine normalization parameters plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        NormParams {
            gamma: store.add(format!("{prefix}.gamma"), ParamGroup::Norm, Tensor::full([1, channels, 1, 1], 1.0)),
            beta: store.add(format!("{prefix}.beta"), ParamGroup::Norm, Tensor::zeros([1, channels, 1, 1])),
            running_mean: store.add(
                format!("{prefix}.running_mean"),
                ParamGroup::Buffer,
                Tensor::zeros([1, channels, 1, 1]),
            ),
            running_var: store.add(
                format!("{prefix}.running_var"),
                ParamGroup::Buffer,
                Tensor::full([1, channels, 1, 1], 1.0),
            ),
            channels,
        }
    }
}

/// Which 3x3 depthwise stencil a separable block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    Dense,
    Dilated2,
}

/// Weights of a depthwise-separable block:
/// `residual(x) + norm(pointwise(depthwise(relu(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SepConvParams {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub norm: NormParams,
    /// 1x1 projection on the residual path, present when `c_in != c_out`.
    pub residual: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub stencil: Stencil,
}

impl SepConvParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stencil: Stencil,
    ) -> Self {
        let depthwise = store.add(
            format!("{prefix}.dw"),
            ParamGroup::Weight,
            normal_tensor(rng, [c_in, 1, 3, 3], (2.0f64 / 9.0).sqrt()),
        );
        let pointwise = store.add(
            format!("{prefix}.pw"),
            ParamGroup::Weight,
            normal_tensor(rng, [c_out, c_in, 1, 1], (2.0 / c_in as f64).sqrt()),
        );
        let norm = NormParams::new(store, &format!("{prefix}.norm"), c_out);
        let residual = (c_in != c_out).then(|| {
            store.add(
                format!("{prefix}.res"),
                ParamGroup::Weight,
                normal_tensor(rng, [c_out, c_in, 1, 1], (1.0 / c_in as f64).sqrt()),
            )
        });
        SepConvParams {
            depthwise,
            pointwise,
            norm,
            residual,
            c_in,
            c_out,
            stencil,
        }
    }

    fn spec(&self) -> ConvSpec {
        match self.stencil {
            Stencil::Dense => ConvSpec::same3x3(self.c_in),
            Stencil::Dilated2 => ConvSpec::dilated3x3(self.c_in),
        }
    }
}

fn separable(ctx: &mut Ctx<'_>, x: Var, w: &SepConvParams) -> Result<Var> {
    let c = ctx.tape.value(x).channels();
    if c != w.c_in {
        return Err(Error::shape(
            "separable conv",
            format!("input has {c} channels, weights expect {}", w.c_in),
        ));
    }
    let a = ctx.tape.relu(x);
    let dw = ctx.p(w.depthwise);
    let h = ctx.tape.conv2d(a, dw, w.spec())?;
    let pw = ctx.p(w.pointwise);
    let h = ctx.tape.conv2d(h, pw, ConvSpec::POINTWISE)?;
    let h = ctx.norm(h, &w.norm)?;
    let skip = match w.residual {
        Some(r) => {
            let rv = ctx.p(r);
            ctx.tape.conv2d(x, rv, ConvSpec::POINTWISE)?
        }
        None => x,
    };
    ctx.tape.add(skip, h)
}

/// 3x3 depthwise-separable block with a residual connection.
pub fn sep_conv3x3(ctx: &mut Ctx<'_>, x: Var, w: &SepConvParams) -> Result<Var> {
    debug_assert_eq!(w.stencil, Stencil::Dense);
    separable(ctx, x, w)
}

/// As [`sep_conv3x3`] with a dilation-2 depthwise stencil.
pub fn dil_conv3x3(ctx: &mut Ctx<'_>, x: Var, w: &SepConvParams) -> Result<Var> {
    debug_assert_eq!(w.stencil, Stencil::Dilated2);
    separable(ctx, x, w)
}

/// Plain convolution followed by normalization; used for the stem.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormParams {
    pub kernel: ParamId,
    pub norm: NormParams,
    pub spec: ConvSpec,
}

impl ConvNormParams {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, c_in: usize, c_out: usize) -> Self {
        let kernel = store.add(
            format!("{prefix}.conv"),
            ParamGroup::Weight,
            normal_tensor(rng, [c_out, c_in, 3, 3], (2.0 / (9 * c_in) as f64).sqrt()),
        );
        ConvNormParams {
            kernel,
            norm: NormParams::new(store, &format!("{prefix}.norm"), c_out),
            spec: ConvSpec::same3x3(1),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let k = ctx.p(self.kernel);
        let h = ctx.tape.conv2d(x, k, self.spec)?;
        ctx.norm(h, &self.norm)
    }
}

/// Pointwise convolution with optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseParams {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
}

impl PointwiseParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
    ) -> Self {
        let kernel = store.add(
            format!("{prefix}.w"),
            ParamGroup::Weight,
            normal_tensor(rng, [c_out, c_in, 1, 1], (1.0 / c_in as f64).sqrt()),
        );
        let bias = bias.then(|| store.add(format!("{prefix}.b"), ParamGroup::Weight, Tensor::zeros([1, c_out, 1, 1])));
        PointwiseParams { kernel, bias }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let k = ctx.p(self.kernel);
        let h = ctx.tape.conv2d(x, k, ConvSpec::POINTWISE)?;
        match self.bias {
            Some(b) => {
                let bv = ctx.p(b);
                ctx.tape.bias_add(h, bv)
            }
            None => Ok(h),
        }
    }
}
