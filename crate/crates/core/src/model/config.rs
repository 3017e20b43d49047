use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::layers::{valid_extent, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};

/// Layer removal and kernel zeroing switches.
///
/// `drop_*` flags change the graph and therefore the trained parameters.
/// `zero_*` flags leave training untouched and zero the weight and bias of
/// one spatial kernel family in the fitted model before it is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AblationSpec {
    pub drop_temporal: bool,
    pub drop_spatial: bool,
    pub drop_fusion: bool,
    pub zero_hemisphere: bool,
    pub zero_global: bool,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.drop_spatial && (self.zero_hemisphere || self.zero_global) {
            return Err(Error::config(
                "ablation",
                "zero_hemisphere/zero_global require the spatial layer (drop_spatial is set)",
            ));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }

    pub fn changes_graph(&self) -> bool {
        self.drop_temporal || self.drop_spatial || self.drop_fusion
    }

    pub fn zeroes_kernels(&self) -> bool {
        self.zero_hemisphere || self.zero_global
    }

    /// Short human label, e.g. `full`, `w/o H`, `drop_fusion`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.drop_temporal {
            parts.push("drop_temporal");
        }
        if self.drop_spatial {
            parts.push("drop_spatial");
        }
        if self.drop_fusion {
            parts.push("drop_fusion");
        }
        if self.zero_hemisphere {
            parts.push("zero_hemisphere");
        }
        if self.zero_global {
            parts.push("zero_global");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    /// The same graph without kernel zeroing.
    pub fn graph_only(&self) -> Self {
        Self {
            zero_hemisphere: false,
            zero_global: false,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_channels: usize,
    pub sampling_rate: f64,
    pub segment_len: usize,
    pub temporal_ratios: Vec<f64>,
    pub num_t_kernels: usize,
    pub num_s_kernels: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout_p: f64,
    pub pool_t: usize,
    pub pool_s: usize,
    pub pool_f: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub ablation: AblationSpec,
}

impl Default for ModelConfig {
    /// 28 paired channels, 128 Hz, 4 s segments.
    fn default() -> Self {
        Self {
            num_channels: 28,
            sampling_rate: 128.0,
            segment_len: 512,
            temporal_ratios: vec![0.5, 0.25, 0.125],
            num_t_kernels: 15,
            num_s_kernels: 15,
            hidden: 32,
            classes: 2,
            dropout_p: 0.5,
            pool_t: 8,
            pool_s: 2,
            pool_f: 4,
            leaky_slope: LEAKY_SLOPE,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
            ablation: AblationSpec::default(),
        }
    }
}

/// Temporal kernel sizes `(1, floor(ratio * fs))`, one per level in order.
///
/// A `1e-9` guard absorbs binary rounding of exact products such as
/// `0.29 * 100`.
pub fn kernel_sizes(config: &ModelConfig) -> Result<Vec<(usize, usize)>> {
    config
        .temporal_ratios
        .iter()
        .map(|&ratio| {
            let width = (ratio * config.sampling_rate + 1e-9).floor();
            if !(width >= 1.0) {
                Err(Error::config(
                    "temporal_ratios",
                    format!("ratio {ratio} at {} Hz gives kernel width < 1", config.sampling_rate),
                ))
            } else {
                Ok((1, width as usize))
            }
        })
        .collect()
}

/// Where each stage of the network sits in the shape ladder, per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// Kernel widths of the temporal branches that are actually built.
    pub branch_kernels: Vec<usize>,
    /// Pooled width of each branch.
    pub branch_widths: Vec<usize>,
    /// `[t, c, Σ widths]` after temporal concat.
    pub temporal: [usize; 3],
    /// `[ch, rows, width]` entering the fusion block (or GAP when it is dropped).
    pub spatial: [usize; 3],
    /// Width after fusion pooling, when the fusion block exists.
    pub fusion_width: Option<usize>,
    pub fc_in: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Validates the configuration and derives every intermediate extent.
    pub fn plan(&self) -> Result<ShapePlan> {
        let c = self.num_channels;
        if c < 2 || c % 2 != 0 {
            return Err(Error::config("num_channels", format!("must be even and >= 2, got {c}")));
        }
        if !(self.sampling_rate > 0.0) {
            return Err(Error::config("sampling_rate", "must be positive"));
        }
        for (name, v) in [
            ("num_t_kernels", self.num_t_kernels),
            ("num_s_kernels", self.num_s_kernels),
            ("hidden", self.hidden),
            ("pool_t", self.pool_t),
            ("pool_s", self.pool_s),
            ("pool_f", self.pool_f),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", "must lie in [0, 1)"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("bn_eps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum", "must lie in [0, 1]"));
        }
        if self.temporal_ratios.is_empty() {
            return Err(Error::config("temporal_ratios", "at least one ratio required"));
        }
        self.ablation.validate()?;

        let mut kernels: Vec<usize> = kernel_sizes(self)?.into_iter().map(|(_, w)| w).collect();
        if let Some(&k) = kernels.iter().find(|&&k| k > self.segment_len) {
            return Err(Error::config(
                "temporal_ratios",
                format!("kernel width {k} exceeds segment length {}", self.segment_len),
            ));
        }
        if self.ablation.drop_temporal {
            kernels.truncate(1);
        }
        let mut widths = Vec::with_capacity(kernels.len());
        for &k in &kernels {
            let conv = self.segment_len - k + 1;
            if conv < self.pool_t {
                return Err(Error::config(
                    "pool_t",
                    format!("temporal conv width {conv} is smaller than the pooling window"),
                ));
            }
            widths.push(conv / self.pool_t);
        }
        let t = self.num_t_kernels;
        let s = self.num_s_kernels;
        let total: usize = widths.iter().sum();

        let spatial = if self.ablation.drop_spatial {
            [t, 1, total]
        } else {
            if total < self.pool_s {
                return Err(Error::config("pool_s", "temporal feature width smaller than pooling window"));
            }
            // hemisphere rows: valid sweep of height c/2 with stride c/2 over c rows
            let hemi_rows = valid_extent(c, c / 2, c / 2).unwrap_or(0);
            [s, 1 + hemi_rows, total / self.pool_s]
        };

        let (fusion_width, fc_in) = if self.ablation.drop_fusion {
            (None, spatial[0] * spatial[1])
        } else {
            if spatial[2] < self.pool_f {
                return Err(Error::config("pool_f", "spatial feature width smaller than pooling window"));
            }
            (Some(spatial[2] / self.pool_f), s)
        };

        Ok(ShapePlan {
            branch_kernels: kernels,
            branch_widths: widths,
            temporal: [t, c, total],
            spatial,
            fusion_width,
            fc_in,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("num_channels", self.num_channels);
        kv.insert("sampling_rate", self.sampling_rate);
        kv.insert("segment_len", self.segment_len);
        kv.insert("temporal_ratios", join_list(&self.temporal_ratios));
        kv.insert("num_t_kernels", self.num_t_kernels);
        kv.insert("num_s_kernels", self.num_s_kernels);
        kv.insert("hidden", self.hidden);
        kv.insert("classes", self.classes);
        kv.insert("dropout_p", self.dropout_p);
        kv.insert("pool_t", self.pool_t);
        kv.insert("pool_s", self.pool_s);
        kv.insert("pool_f", self.pool_f);
        kv.insert("leaky_slope", self.leaky_slope);
        kv.insert("bn_eps", self.bn_eps);
        kv.insert("bn_momentum", self.bn_momentum);
        kv.insert("drop_temporal", self.ablation.drop_temporal);
        kv.insert("drop_spatial", self.ablation.drop_spatial);
        kv.insert("drop_fusion", self.ablation.drop_fusion);
        kv.insert("zero_hemisphere", self.ablation.zero_hemisphere);
        kv.insert("zero_global", self.ablation.zero_global);
        kv
    }

    /// Reads every model key present in `kv` on top of `self`, leaving
    /// unrelated keys in place.
    pub fn apply_kv(mut self, kv: &mut KvMap) -> Result<Self> {
        self.num_channels = kv.take_or("num_channels", self.num_channels)?;
        self.sampling_rate = kv.take_or("sampling_rate", self.sampling_rate)?;
        self.segment_len = kv.take_or("segment_len", self.segment_len)?;
        if let Some(r) = kv.take_list("temporal_ratios")? {
            self.temporal_ratios = r;
        }
        self.num_t_kernels = kv.take_or("num_t_kernels", self.num_t_kernels)?;
        self.num_s_kernels = kv.take_or("num_s_kernels", self.num_s_kernels)?;
        self.hidden = kv.take_or("hidden", self.hidden)?;
        self.classes = kv.take_or("classes", self.classes)?;
        self.dropout_p = kv.take_or("dropout_p", self.dropout_p)?;
        self.pool_t = kv.take_or("pool_t", self.pool_t)?;
        self.pool_s = kv.take_or("pool_s", self.pool_s)?;
        self.pool_f = kv.take_or("pool_f", self.pool_f)?;
        self.leaky_slope = kv.take_or("leaky_slope", self.leaky_slope)?;
        self.bn_eps = kv.take_or("bn_eps", self.bn_eps)?;
        self.bn_momentum = kv.take_or("bn_momentum", self.bn_momentum)?;
        let a = &mut self.ablation;
        a.drop_temporal = kv.take_or("drop_temporal", a.drop_temporal)?;
        a.drop_spatial = kv.take_or("drop_spatial", a.drop_spatial)?;
        a.drop_fusion = kv.take_or("drop_fusion", a.drop_fusion)?;
        a.zero_hemisphere = kv.take_or("zero_hemisphere", a.zero_hemisphere)?;
        a.zero_global = kv.take_or("zero_global", a.zero_global)?;
        Ok(self)
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let cfg = Self::default().apply_kv(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_widths_from_ratios() {
        let deap = ModelConfig::default();
        assert_eq!(kernel_sizes(&deap).unwrap(), vec![(1, 64), (1, 32), (1, 16)]);

        let mahnob = ModelConfig {
            sampling_rate: 256.0,
            temporal_ratios: vec![0.25, 0.125, 0.0625],
            ..ModelConfig::default()
        };
        assert_eq!(kernel_sizes(&mahnob).unwrap(), vec![(1, 64), (1, 32), (1, 16)]);

        let single = ModelConfig {
            sampling_rate: 100.0,
            temporal_ratios: vec![0.5],
            ..ModelConfig::default()
        };
        assert_eq!(kernel_sizes(&single).unwrap(), vec![(1, 50)]);

        let tiny = ModelConfig {
            temporal_ratios: vec![0.001],
            ..ModelConfig::default()
        };
        assert!(kernel_sizes(&tiny).is_err());
    }

    #[test]
    fn default_plan_matches_structure_table() {
        let plan = ModelConfig::default().plan().unwrap();
        assert_eq!(plan.branch_widths, vec![56, 60, 62]);
        assert_eq!(plan.temporal, [15, 28, 178]);
        assert_eq!(plan.spatial, [15, 3, 89]);
        assert_eq!(plan.fusion_width, Some(22));
        assert_eq!(plan.fc_in, 15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let odd = ModelConfig {
            num_channels: 27,
            ..ModelConfig::default()
        };
        assert!(odd.validate().is_err());
        let long_kernel = ModelConfig {
            segment_len: 40,
            ..ModelConfig::default()
        };
        assert!(long_kernel.validate().is_err());
        let contradictory = ModelConfig {
            ablation: AblationSpec {
                drop_spatial: true,
                zero_global: true,
                ..AblationSpec::default()
            },
            ..ModelConfig::default()
        };
        assert!(contradictory.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            num_channels: 8,
            temporal_ratios: vec![0.5, 0.25],
            ablation: AblationSpec {
                zero_hemisphere: true,
                ..AblationSpec::default()
            },
            ..ModelConfig::default()
        };
        let text = cfg.to_kv().render();
        assert_eq!(ModelConfig::from_kv_text(&text).unwrap(), cfg);
        assert!(ModelConfig::from_kv_text("nonsense = 1").is_err());
    }
}
