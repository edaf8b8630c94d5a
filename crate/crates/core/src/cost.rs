//! Parameter and FLOP accounting for decoded architectures.
//!
//! Everything is integer arithmetic over the same structure the retraining
//! runtime builds, so counts agree with the instantiated weights exactly.

use std::fmt::Write as _;

use crate::decode::{decode, DecodedArch};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::relaxation::{CellKind, OperatorKind, SupernetLayout};

/// Stated in every report.
pub const FLOP_CONVENTION: &str = "1 MAC = 2 FLOPs; conv = 2*k_elems*C_group*H_out*W_out*C_out; \
norm 2/elem, relu 1/elem, add 1/elem, bias 1/elem; avg_pool 9/output, max_pool 3/output, bilinear 7/output; \
normalization and activation costs included";

const NORM_PER_ELEM: u64 = 2;
const RELU_PER_ELEM: u64 = 1;
const ADD_PER_ELEM: u64 = 1;
const AVG_POOL_PER_OUT: u64 = 9;
const MAX_POOL_PER_OUT: u64 = 3;
const BILINEAR_PER_OUT: u64 = 7;

/// Convolution FLOPs: `2 * kernel_elems * (c_in / groups) * h_out * w_out * c_out`.
pub fn conv_flops(kernel_elems: u64, c_in: u64, groups: u64, c_out: u64, h_out: u64, w_out: u64) -> u64 {
    2 * kernel_elems * (c_in / groups) * h_out * w_out * c_out
}

/// Cost of one component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    /// Kernel and bias scalars.
    pub params_conv: u64,
    /// Affine normalization scalars.
    pub params_norm: u64,
    pub flops: u64,
}

impl Cost {
    pub fn params(&self) -> u64 {
        self.params_conv + self.params_norm
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            params_conv: self.params_conv + o.params_conv,
            params_norm: self.params_norm + o.params_norm,
            flops: self.flops + o.flops,
        }
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Separable block `residual + norm(pw(dw(relu x)))` on an `h x w` map.
fn separable_cost(c_in: u64, c_out: u64, h: u64, w: u64) -> Cost {
    let hw = h * w;
    let residual_params = if c_in != c_out { c_in * c_out } else { 0 };
    let residual_flops = if c_in != c_out { conv_flops(1, c_in, 1, c_out, h, w) } else { 0 };
    Cost {
        params_conv: 9 * c_in + c_in * c_out + residual_params,
        params_norm: 2 * c_out,
        flops: RELU_PER_ELEM * c_in * hw
            + conv_flops(9, c_in, c_in, c_in, h, w)
            + conv_flops(1, c_in, 1, c_out, h, w)
            + NORM_PER_ELEM * c_out * hw
            + residual_flops
            + ADD_PER_ELEM * c_out * hw,
    }
}

/// Cost of one operator mapping `c_in` to `c_out` channels at `h x w`.
/// Parameter-free operators require `c_in == c_out`.
pub fn op_cost(op: OperatorKind, c_in: usize, c_out: usize, h: usize, w: usize) -> Cost {
    let (ci, co, h, w) = (c_in as u64, c_out as u64, h as u64, w as u64);
    match op {
        OperatorKind::SepConv3x3 | OperatorKind::DilConv3x3r2 => separable_cost(ci, co, h, w),
        OperatorKind::AvgPool3x3 => Cost {
            flops: AVG_POOL_PER_OUT * co * h * w,
            ..Cost::default()
        },
        OperatorKind::SkipConnect | OperatorKind::Zero => Cost::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub component: String,
    pub cost: Cost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub input_size: usize,
    pub rows: Vec<CostRow>,
    pub total: Cost,
    pub convention: &'static str,
}

pub const COST_CSV_VERSION: u32 = 1;

impl CostReport {
    pub fn params(&self) -> u64 {
        self.total.params()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# msnas-cost v{COST_CSV_VERSION}\n# input_size={}\n# convention: {}\ncomponent,params_conv,params_norm,flops\n",
            self.input_size, self.convention
        );
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.component, r.cost.params_conv, r.cost.params_norm, r.cost.flops);
        }
        let t = &self.total;
        let _ = writeln!(s, "total,{},{},{}", t.params_conv, t.params_norm, t.flops);
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.component.len()).max().unwrap_or(0).max(9);
        let mut s = format!("input {0}x{0}; {1}\n", self.input_size, self.convention);
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>10}  {:>16}", "component", "conv params", "norm params", "FLOPs");
        for r in self.rows.iter().chain(std::iter::once(&CostRow {
            component: "total".into(),
            cost: self.total,
        })) {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12}  {:>10}  {:>16}",
                r.component, r.cost.params_conv, r.cost.params_norm, r.cost.flops
            );
        }
        let _ = writeln!(
            s,
            "params {:.4} M, FLOPs {:.4} G",
            self.params() as f64 / 1e6,
            self.total.flops as f64 / 1e9
        );
        s
    }
}

/// Full per-component cost of `arch` on square inputs of side `input_size`.
pub fn cost_report(arch: &DecodedArch, input_size: usize) -> Result<CostReport> {
    let cfg = &arch.config;
    let m = 1usize << (cfg.scales - 1);
    if input_size == 0 || input_size % m != 0 {
        return Err(Error::invalid(format!("input_size {input_size} must be a positive multiple of {m}")));
    }
    let g = &arch.graph;
    let side = |v: usize| -> u64 {
        let s = g.vertex(v).site().map_or(0, |(_, s)| s.0);
        (input_size >> s) as u64
    };
    let full = input_size as u64;
    let mut rows = Vec::new();

    let (ci, base) = (cfg.in_channels as u64, cfg.base_channels as u64);
    rows.push(CostRow {
        component: "stem".into(),
        cost: Cost {
            params_conv: 9 * ci * base,
            params_norm: 2 * base,
            flops: conv_flops(9, ci, 1, base, full, full) + NORM_PER_ELEM * base * full * full,
        },
    });

    for inst in &arch.cell_instances {
        let c_in = arch.plan.width(inst.from);
        let c_out = arch.plan.width(inst.vertex);
        let s = side(inst.vertex);
        let mut cost = match inst.kind {
            CellKind::Contracting => Cost {
                flops: MAX_POOL_PER_OUT * c_in as u64 * s * s,
                ..Cost::default()
            },
            CellKind::Expanding => Cost {
                flops: BILINEAR_PER_OUT * c_in as u64 * s * s,
                ..Cost::default()
            },
            CellKind::NonScaling => Cost::default(),
        };
        let genotype = arch.genotype(inst.kind);
        for &(_, op) in &genotype.blocks {
            cost = cost + op_cost(op, c_in, c_in, s as usize, s as usize);
        }
        let cat = (genotype.blocks.len() * c_in) as u64;
        if cat != c_out as u64 {
            cost = cost
                + Cost {
                    params_conv: cat * c_out as u64,
                    flops: conv_flops(1, cat, 1, c_out as u64, s, s),
                    ..Cost::default()
                };
        }
        rows.push(CostRow {
            component: format!("edge{} {} -> {}", inst.edge, inst.kind.name(), g.vertex(inst.vertex).label()),
            cost,
        });
    }

    for &v in &arch.merge_points {
        let n = arch.selected_incoming(v).len() as u64;
        let s = side(v);
        rows.push(CostRow {
            component: format!("merge {}", g.vertex(v).label()),
            cost: Cost {
                flops: ADD_PER_ELEM * (n - 1) * arch.plan.width(v) as u64 * s * s,
                ..Cost::default()
            },
        });
    }

    let classes = cfg.num_classes as u64;
    let heads = arch.active_heads();
    for &(site, scale) in &heads {
        let s = side(site);
        let c = arch.plan.width(site) as u64;
        let mut flops = conv_flops(1, c, 1, classes, s, s) + ADD_PER_ELEM * classes * s * s;
        for step in 1..=scale {
            let out = s << step;
            flops += BILINEAR_PER_OUT * classes * out * out;
        }
        rows.push(CostRow {
            component: format!("head s{scale}"),
            cost: Cost {
                params_conv: c * classes + classes,
                params_norm: 0,
                flops,
            },
        });
    }
    if heads.len() > 1 {
        rows.push(CostRow {
            component: "head sum".into(),
            cost: Cost {
                flops: ADD_PER_ELEM * (heads.len() as u64 - 1) * classes * full * full,
                ..Cost::default()
            },
        });
    }

    let total = rows.iter().map(|r| r.cost).sum();
    Ok(CostReport {
        input_size,
        rows,
        total,
        convention: FLOP_CONVENTION,
    })
}

/// Parameter count `(conv, norm)`; independent of input size.
pub fn count_params(arch: &DecodedArch) -> (u64, u64) {
    let size = 1usize << (arch.config.scales - 1);
    let r = cost_report(arch, size).expect("smallest valid input size");
    (r.total.params_conv, r.total.params_norm)
}

pub fn count_flops(arch: &DecodedArch, input_size: usize) -> Result<u64> {
    Ok(cost_report(arch, input_size)?.total.flops)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Variant {
    pub n_paths: usize,
    /// Paths actually found (may be fewer than requested).
    pub found: usize,
    pub cells: usize,
    pub report: CostReport,
}

/// Decodes the relaxed model once per entry of `n_list` and costs each
/// variant. Costs must not decrease as the path count grows.
pub fn compare_variants(
    layout: &SupernetLayout,
    store: &ParamStore,
    n_list: &[usize],
    input_size: usize,
) -> Result<Vec<Variant>> {
    let mut sorted = n_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out: Vec<Variant> = Vec::with_capacity(sorted.len());
    for n in sorted {
        let (arch, top) = decode(layout, store, n)?;
        let report = cost_report(&arch, input_size)?;
        if let Some(prev) = out.last() {
            let (a, b) = (&prev.report.total, &report.total);
            if b.params() < a.params() || b.flops < a.flops {
                return Err(Error::Monotonicity {
                    prev: prev.n_paths,
                    next: n,
                    detail: format!(
                        "params {} -> {}, FLOPs {} -> {}",
                        a.params(),
                        b.params(),
                        a.flops,
                        b.flops
                    ),
                });
            }
        }
        out.push(Variant {
            n_paths: n,
            found: top.paths.len(),
            cells: arch.cell_instances.len(),
            report,
        });
    }
    Ok(out)
}

pub fn variants_csv(variants: &[Variant]) -> String {
    let mut s = format!(
        "# msnas-variants v{COST_CSV_VERSION}\n# convention: {FLOP_CONVENTION}\nn_paths,found,cells,params_conv,params_norm,params,flops\n"
    );
    for v in variants {
        let t = &v.report.total;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            v.n_paths,
            v.found,
            v.cells,
            t.params_conv,
            t.params_norm,
            t.params(),
            t.flops
        );
    }
    s
}
