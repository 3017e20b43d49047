//! The network: multi-scale temporal convolutions, global and hemisphere
//! spatial kernels, a fusion convolution and a two-layer classifier head.
//!
//! ```text
//! x [n,1,c,l]
//!  ├─ conv(1,k_i) → LeakyReLU → AP(1,pool_t)   one branch per temporal ratio
//!  └─ concat along width → BN                   [n,t,c,Σf]
//!  ├─ conv(c,1)                → LeakyReLU → AP(1,pool_s)   [n,s,1,F]
//!  └─ conv(c/2,1) stride (c/2,1) → LeakyReLU → AP(1,pool_s) [n,s,2,F]
//!     concat along rows → BN                    [n,s,3,F]
//!  conv(3,1) → LeakyReLU → AP(1,pool_f) → BN → GAP → flatten   [n,s]
//!  fc1 → ReLU → dropout → fc2                   [n,classes]
//! ```
//!
//! Input rows must be ordered left hemisphere then right hemisphere, with
//! row `k` and row `k + c/2` mirror electrodes, so the hemisphere kernel
//! shares one weight set across both halves.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{kernel_sizes, AblationSpec, ModelConfig, ShapePlan};
pub use params::{
    apply_ablation, count_params, count_params_closed_form, layout, zero_kernels, Init,
    ModelParams, ParamSpec, TensorMap,
};

use crate::error::{Error, Result};
use crate::layers::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    softmax, update_running, BatchNorm, BnCache, Conv2dValid, Linear, Mode,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Intermediate activations of one forward pass, kept for backward.
#[derive(Clone, Debug)]
pub struct Trace {
    mode: Mode,
    input: Tensor,
    /// Pre-activation conv output of each temporal branch.
    branch_pre: Vec<Tensor>,
    branch_widths: Vec<usize>,
    temporal_bn: BnCache,
    /// Temporal block output after BN.
    pub temporal: Tensor,
    spatial: Option<SpatialTrace>,
    /// Input to the fusion block or, when it is dropped, to GAP.
    pub spatial_out: Tensor,
    fusion: Option<FusionTrace>,
    /// GAP output `[n, ch, rows]`.
    pub gap: Tensor,
    gap_width: usize,
    fc_in: Tensor,
    fc1_pre: Tensor,
    hidden: Tensor,
    dropout_mask: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug)]
struct SpatialTrace {
    global_pre: Tensor,
    hemi_pre: Tensor,
    bn: BnCache,
}

#[derive(Clone, Debug)]
struct FusionTrace {
    conv_pre: Tensor,
    bn: BnCache,
}

impl Trace {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn bn_layer<'a>(p: &'a ModelParams, cfg: &ModelConfig, prefix: &str) -> Result<BatchNorm<'a>> {
    Ok(BatchNorm {
        gamma: p.weights.get(&format!("{prefix}.gamma"))?,
        beta: p.weights.get(&format!("{prefix}.beta"))?,
        running_mean: p.stats.get(&format!("{prefix}.running_mean"))?,
        running_var: p.stats.get(&format!("{prefix}.running_var"))?,
        eps: cfg.bn_eps,
    })
}

fn conv_layer<'a>(p: &'a ModelParams, prefix: &str, stride: (usize, usize)) -> Result<Conv2dValid<'a>> {
    Ok(Conv2dValid::new(
        p.weights.get(&format!("{prefix}.weight"))?,
        p.weights.get(&format!("{prefix}.bias"))?,
        stride,
    ))
}

fn linear_layer<'a>(p: &'a ModelParams, prefix: &str) -> Result<Linear<'a>> {
    Ok(Linear::new(
        p.weights.get(&format!("{prefix}.weight"))?,
        p.weights.get(&format!("{prefix}.bias"))?,
    ))
}

/// Mean over the row axis: `[n, ch, h, w] -> [n, ch, 1, w]`.
fn row_mean(x: &Tensor) -> Tensor {
    let &[n, ch, h, w] = x.shape() else { unreachable!("row_mean on non-NCHW") };
    let mut out = Tensor::zeros(&[n, ch, 1, w]);
    for (dst, src) in out.data_mut().chunks_exact_mut(w).zip(x.data().chunks_exact(h * w)) {
        for row in src.chunks_exact(w) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v / h as f64;
            }
        }
    }
    out
}

fn row_mean_backward(grad: &Tensor, h: usize) -> Tensor {
    let &[n, ch, _, w] = grad.shape() else { unreachable!("row_mean_backward on non-NCHW") };
    let mut out = Tensor::zeros(&[n, ch, h, w]);
    for (dst, src) in out.data_mut().chunks_exact_mut(h * w).zip(grad.data().chunks_exact(w)) {
        for row in dst.chunks_exact_mut(w) {
            for (d, g) in row.iter_mut().zip(src) {
                *d = g / h as f64;
            }
        }
    }
    out
}

fn add_grads(into: &mut TensorMap, prefix: &str, grads: crate::layers::LayerGrads) -> Option<Tensor> {
    for (kind, g) in grads.grad_params {
        into.insert(format!("{prefix}.{kind}"), g);
    }
    grads.grad_input
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn count_params(&self) -> Result<usize> {
        count_params(&self.params, &self.config)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let cfg = &self.config;
        match x.shape() {
            &[n, 1, c, l] if c == cfg.num_channels && l == cfg.segment_len && n > 0 => Ok(n),
            other => Err(Error::shape(format!(
                "model expects [n>0, 1, {}, {}], got {other:?}",
                cfg.num_channels, cfg.segment_len
            ))),
        }
    }

    /// Full forward pass returning logits inside the trace.
    ///
    /// `dropout_rng` is required in train mode when `dropout_p > 0`. Running
    /// statistics are not touched; see [`Model::absorb_batch_stats`].
    pub fn forward(&self, x: &Tensor, mode: Mode, dropout_rng: Option<&mut Rng>) -> Result<Trace> {
        self.check_input(x)?;
        let cfg = &self.config;
        let plan = cfg.plan()?;
        let p = &self.params;
        let slope = cfg.leaky_slope;

        let mut branch_pre = Vec::with_capacity(plan.branch_kernels.len());
        let mut pooled = Vec::with_capacity(plan.branch_kernels.len());
        for i in 0..plan.branch_kernels.len() {
            let conv = conv_layer(p, &format!("temporal.{}", i + 1), (1, 1))?;
            let (out, pre) = conv.forward_act_pool(x, slope, cfg.pool_t)?;
            pooled.push(out);
            branch_pre.push(pre);
        }
        let cat = Tensor::concat(&pooled.iter().collect::<Vec<_>>(), 3)?;
        drop(pooled);
        let (temporal, temporal_bn) = bn_layer(p, cfg, "temporal.bn")?.forward(&cat, mode)?;

        let (spatial, spatial_out) = if cfg.ablation.drop_spatial {
            (None, row_mean(&temporal))
        } else {
            let c = cfg.num_channels;
            let (g, global_pre) =
                conv_layer(p, "spatial.global", (1, 1))?.forward_act_pool(&temporal, slope, cfg.pool_s)?;
            let (h, hemi_pre) =
                conv_layer(p, "spatial.hemisphere", (c / 2, 1))?.forward_act_pool(&temporal, slope, cfg.pool_s)?;
            let cat = Tensor::concat(&[&g, &h], 2)?;
            let (out, bn) = bn_layer(p, cfg, "spatial.bn")?.forward(&cat, mode)?;
            (
                Some(SpatialTrace {
                    global_pre,
                    hemi_pre,
                    bn,
                }),
                out,
            )
        };

        let (fusion, gap_in) = if cfg.ablation.drop_fusion {
            (None, spatial_out.clone())
        } else {
            let (pooled, conv_pre) =
                conv_layer(p, "fusion", (1, 1))?.forward_act_pool(&spatial_out, slope, cfg.pool_f)?;
            let (out, bn) = bn_layer(p, cfg, "fusion.bn")?.forward(&pooled, mode)?;
            (Some(FusionTrace { conv_pre, bn }), out)
        };
        let gap_width = gap_in.shape()[3];
        let gap = global_avg_pool(&gap_in)?;
        let n = gap.shape()[0];
        let fc_in = gap.clone().reshape(&[n, plan.fc_in])?;

        let fc1_pre = linear_layer(p, "fc1")?.forward(&fc_in)?;
        let hidden = relu(&fc1_pre);
        let (dropped, dropout_mask) = match (mode, dropout_rng) {
            (Mode::Train, Some(rng)) => dropout(&hidden, cfg.dropout_p, rng, mode)?,
            (Mode::Train, None) if cfg.dropout_p > 0.0 => {
                return Err(Error::invalid("train-mode forward with dropout needs an rng"))
            }
            _ => (hidden.clone(), Tensor::new(hidden.shape(), 1.0)),
        };
        let logits = linear_layer(p, "fc2")?.forward(&dropped)?;

        Ok(Trace {
            mode,
            input: x.clone(),
            branch_pre,
            branch_widths: plan.branch_widths,
            temporal_bn,
            temporal,
            spatial,
            spatial_out,
            fusion,
            gap,
            gap_width,
            fc_in,
            fc1_pre,
            hidden: dropped,
            dropout_mask,
            logits,
        })
    }

    /// Gradients of `Σ grad_logits ⊙ logits` w.r.t. every trainable tensor,
    /// and w.r.t. the input when `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_logits: &Tensor,
        want_input: bool,
    ) -> Result<(TensorMap, Option<Tensor>)> {
        if grad_logits.shape() != trace.logits.shape() {
            return Err(Error::shape("grad_logits does not match logits"));
        }
        let cfg = &self.config;
        let p = &self.params;
        let slope = cfg.leaky_slope;
        let mut grads = TensorMap::new();

        let g = add_grads(&mut grads, "fc2", linear_layer(p, "fc2")?.backward(&trace.hidden, grad_logits)?)
            .expect("linear input grad");
        let g = dropout_backward(&g, &trace.dropout_mask)?;
        let g = relu_backward(&trace.fc1_pre, &g)?;
        let g = add_grads(&mut grads, "fc1", linear_layer(p, "fc1")?.backward(&trace.fc_in, &g)?)
            .expect("linear input grad");
        let g = g.reshape(trace.gap.shape())?;
        let mut g = global_avg_pool_backward(&g, trace.gap_width)?;

        if let Some(f) = &trace.fusion {
            let bn = bn_layer(p, cfg, "fusion.bn")?;
            let gp = add_grads(&mut grads, "fusion.bn", bn.backward(&f.bn, &g)?).expect("bn input grad");
            let conv = conv_layer(p, "fusion", (1, 1))?;
            g = add_grads(
                &mut grads,
                "fusion",
                conv.backward_act_pool(&trace.spatial_out, &f.conv_pre, &gp, slope, cfg.pool_f, true)?,
            )
            .expect("conv input grad");
        }

        let g_temporal = match &trace.spatial {
            None => row_mean_backward(&g, cfg.num_channels),
            Some(s) => {
                let c = cfg.num_channels;
                let bn = bn_layer(p, cfg, "spatial.bn")?;
                let gcat = add_grads(&mut grads, "spatial.bn", bn.backward(&s.bn, &g)?).expect("bn input grad");
                let rows_hemi = s.hemi_pre.shape()[2];
                let parts = gcat.split(2, &[1, rows_hemi])?;
                let global = conv_layer(p, "spatial.global", (1, 1))?;
                let hemi = conv_layer(p, "spatial.hemisphere", (c / 2, 1))?;
                let mut total = add_grads(
                    &mut grads,
                    "spatial.global",
                    global.backward_act_pool(&trace.temporal, &s.global_pre, &parts[0], slope, cfg.pool_s, true)?,
                )
                .expect("conv input grad");
                let from_hemi = add_grads(
                    &mut grads,
                    "spatial.hemisphere",
                    hemi.backward_act_pool(&trace.temporal, &s.hemi_pre, &parts[1], slope, cfg.pool_s, true)?,
                )
                .expect("conv input grad");
                total.axpy(1.0, &from_hemi)?;
                total
            }
        };

        let bn = bn_layer(p, cfg, "temporal.bn")?;
        let gcat = add_grads(&mut grads, "temporal.bn", bn.backward(&trace.temporal_bn, &g_temporal)?)
            .expect("bn input grad");
        let parts = gcat.split(3, &trace.branch_widths)?;
        let mut grad_input = want_input.then(|| Tensor::zeros(trace.input.shape()));
        for (i, (gb, pre)) in parts.iter().zip(&trace.branch_pre).enumerate() {
            let prefix = format!("temporal.{}", i + 1);
            let conv = conv_layer(p, &prefix, (1, 1))?;
            let gi = add_grads(
                &mut grads,
                &prefix,
                conv.backward_act_pool(&trace.input, pre, gb, slope, cfg.pool_t, want_input)?,
            );
            if let (Some(acc), Some(gi)) = (grad_input.as_mut(), gi) {
                acc.axpy(1.0, &gi)?;
            }
        }
        Ok((grads, grad_input))
    }

    /// Folds the batch statistics of a train-mode trace into the running buffers.
    pub fn absorb_batch_stats(&mut self, trace: &Trace) -> Result<()> {
        if trace.mode != Mode::Train {
            return Ok(());
        }
        let m = self.config.bn_momentum;
        let mut caches = vec![("temporal.bn", &trace.temporal_bn)];
        if let Some(s) = &trace.spatial {
            caches.push(("spatial.bn", &s.bn));
        }
        if let Some(f) = &trace.fusion {
            caches.push(("fusion.bn", &f.bn));
        }
        for (prefix, cache) in caches {
            let mut mean = self.params.stats.get(&format!("{prefix}.running_mean"))?.clone();
            let var = self.params.stats.get_mut(&format!("{prefix}.running_var"))?;
            update_running(&mut mean, var, cache, m);
            *self.params.stats.get_mut(&format!("{prefix}.running_mean"))? = mean;
        }
        Ok(())
    }

    /// Eval-mode logits, computed in chunks of `chunk` samples.
    pub fn logits(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = self.check_input(x)?;
        let chunk = chunk.max(1);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let xb = if start == 0 && end == n { x.clone() } else { x.select_axis0(&rows)? };
            parts.push(self.forward(&xb, Mode::Eval, None)?.logits);
            start = end;
        }
        Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
    }

    /// Class probabilities (softmax of eval-mode logits).
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.logits(x, 64)?)
    }

    /// Arg-max class per sample; ties resolve to the lower class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x, 64)?;
        let k = self.config.classes;
        Ok(logits
            .data()
            .chunks_exact(k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}
