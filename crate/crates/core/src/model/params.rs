use std::collections::BTreeMap;

use super::config::{AblationSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{uniform_init, Tensor};

/// Tensors addressed by a stable dotted path such as `temporal.1.weight`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap(BTreeMap<String, Tensor>);

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) {
        self.0.insert(path.into(), t);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.0
            .get(path)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{path}`")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.0
            .get_mut(path)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{path}`")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.0.contains_key(path)
    }

    pub fn remove(&mut self, path: &str) -> Option<Tensor> {
        self.0.remove(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Same paths and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        )
    }
}

/// Trainable weights plus the batch-norm running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    pub weights: TensorMap,
    pub stats: TensorMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(path: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        path: path.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, shape: [usize; 4]) {
    let fan_in = shape[1] * shape[2] * shape[3];
    out.push(spec(format!("{prefix}.weight"), &shape, Init::FanIn(fan_in)));
    out.push(spec(format!("{prefix}.bias"), &[shape[0]], Init::FanIn(fan_in)));
}

fn bn(weights: &mut Vec<ParamSpec>, stats: &mut Vec<ParamSpec>, prefix: &str, ch: usize) {
    weights.push(spec(format!("{prefix}.gamma"), &[ch], Init::Ones));
    weights.push(spec(format!("{prefix}.beta"), &[ch], Init::Zeros));
    stats.push(spec(format!("{prefix}.running_mean"), &[ch], Init::Zeros));
    stats.push(spec(format!("{prefix}.running_var"), &[ch], Init::Ones));
}

/// Every trainable and statistics tensor the configured graph uses, in
/// graph order: `(weights, stats)`.
pub fn layout(config: &ModelConfig) -> Result<(Vec<ParamSpec>, Vec<ParamSpec>)> {
    let plan = config.plan()?;
    let (t, s, c) = (config.num_t_kernels, config.num_s_kernels, config.num_channels);
    let mut w = Vec::new();
    let mut st = Vec::new();
    for (i, &k) in plan.branch_kernels.iter().enumerate() {
        conv(&mut w, &format!("temporal.{}", i + 1), [t, 1, 1, k]);
    }
    bn(&mut w, &mut st, "temporal.bn", t);
    if !config.ablation.drop_spatial {
        conv(&mut w, "spatial.global", [s, t, c, 1]);
        conv(&mut w, "spatial.hemisphere", [s, t, c / 2, 1]);
        bn(&mut w, &mut st, "spatial.bn", s);
    }
    if !config.ablation.drop_fusion {
        let [ch, rows, _] = plan.spatial;
        conv(&mut w, "fusion", [s, ch, rows, 1]);
        bn(&mut w, &mut st, "fusion.bn", s);
    }
    w.push(spec("fc1.weight", &[config.hidden, plan.fc_in], Init::FanIn(plan.fc_in)));
    w.push(spec("fc1.bias", &[config.hidden], Init::FanIn(plan.fc_in)));
    w.push(spec("fc2.weight", &[config.classes, config.hidden], Init::FanIn(config.hidden)));
    w.push(spec("fc2.bias", &[config.classes], Init::FanIn(config.hidden)));
    Ok((w, st))
}

fn materialize(p: &ParamSpec, rng: &mut Rng) -> Result<Tensor> {
    match p.init {
        Init::FanIn(fan_in) => uniform_init(rng, &p.shape, 1.0 / (fan_in as f64).sqrt()),
        Init::Ones => Ok(Tensor::new(&p.shape, 1.0)),
        Init::Zeros => Ok(Tensor::zeros(&p.shape)),
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let (w, st) = layout(config)?;
        let mut out = Self::default();
        for p in &w {
            out.weights.insert(p.path.clone(), materialize(p, rng)?);
        }
        for p in &st {
            out.stats.insert(p.path.clone(), materialize(p, rng)?);
        }
        Ok(out)
    }

    /// Checks that every tensor the graph needs is present with the right shape.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let (w, st) = layout(config)?;
        for (map, specs) in [(&self.weights, &w), (&self.stats, &st)] {
            for p in specs {
                let t = map.get(&p.path)?;
                if t.shape() != p.shape.as_slice() {
                    return Err(Error::shape(format!(
                        "parameter `{}` has shape {:?}, graph needs {:?}",
                        p.path,
                        t.shape(),
                        p.shape
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number of trainable scalars; errors if a path the graph needs is missing.
pub fn count_params(params: &ModelParams, config: &ModelConfig) -> Result<usize> {
    params.check_against(config)?;
    Ok(params.weights.scalar_count())
}

/// Closed-form trainable scalar count for a configuration.
pub fn count_params_closed_form(config: &ModelConfig) -> Result<usize> {
    let plan = config.plan()?;
    let (t, s, c) = (config.num_t_kernels, config.num_s_kernels, config.num_channels);
    let mut total: usize = plan.branch_kernels.iter().map(|k| t * (k + 1)).sum();
    total += 2 * t;
    if !config.ablation.drop_spatial {
        total += s * (t * c + 1) + s * (t * (c / 2) + 1) + 2 * s;
    }
    if !config.ablation.drop_fusion {
        let [ch, rows, _] = plan.spatial;
        total += s * (ch * rows + 1) + 2 * s;
    }
    total += config.hidden * (plan.fc_in + 1) + config.classes * (config.hidden + 1);
    Ok(total)
}

/// Reconciles `params` (built for `config`) with a new ablation spec.
///
/// Tensors the new graph keeps with the same shape are carried over,
/// tensors it no longer uses are dropped, and new or resized ones are drawn
/// from `rng`. Kernel zeroing then zeroes the spatial weights and biases.
pub fn apply_ablation(
    params: &ModelParams,
    config: &ModelConfig,
    spec: AblationSpec,
    rng: &mut Rng,
) -> Result<ModelParams> {
    spec.validate()?;
    params.check_against(config)?;
    let target = ModelConfig {
        ablation: spec,
        ..config.clone()
    };
    let (w, st) = layout(&target)?;
    let mut out = ModelParams::default();
    for (src, dst, specs) in [
        (&params.weights, &mut out.weights, &w),
        (&params.stats, &mut out.stats, &st),
    ] {
        for p in specs {
            let t = match src.get(&p.path) {
                Ok(t) if t.shape() == p.shape.as_slice() => t.clone(),
                _ => materialize(p, rng)?,
            };
            dst.insert(p.path.clone(), t);
        }
    }
    zero_kernels(&mut out, spec)?;
    Ok(out)
}

/// Zeroes the spatial kernel families selected by `spec`.
pub fn zero_kernels(params: &mut ModelParams, spec: AblationSpec) -> Result<()> {
    let mut families = Vec::new();
    if spec.zero_hemisphere {
        families.push("spatial.hemisphere");
    }
    if spec.zero_global {
        families.push("spatial.global");
    }
    for family in families {
        for kind in ["weight", "bias"] {
            params.weights.get_mut(&format!("{family}.{kind}"))?.fill(0.0);
        }
    }
    Ok(())
}
