use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use super::protocol::{FoldContext, Learner};
use crate::error::{Error, Result};
use crate::model::{write_checkpoint, zero_kernels, AblationSpec, Model, ModelConfig};
use crate::preprocess::SegmentSet;
use crate::rng::derive_seed;
use crate::train::{fit, split_train_val, TrainConfig};

/// The network learner: 80/20 split of the training side, `fit`, then one
/// prediction pass per requested evaluation variant.
#[derive(Clone, Debug)]
pub struct NetLearner {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Kernel-zeroing variants scored on the same trained network; all
    /// share the graph of `model`.
    pub evaluate_as: Vec<AblationSpec>,
    /// Where to write `subject_<id>/fold_<k>.ckpt` and its history.
    pub artifacts: Option<PathBuf>,
}

impl NetLearner {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        let spec = model.ablation;
        Self {
            model,
            train,
            evaluate_as: vec![spec],
            artifacts: None,
        }
    }

    pub fn with_variants(mut self, specs: Vec<AblationSpec>) -> Result<Self> {
        let graph = self.model.ablation.graph_only();
        if specs.is_empty() {
            return Err(Error::invalid("at least one evaluation variant is required"));
        }
        for s in &specs {
            s.validate()?;
            if s.graph_only() != graph {
                return Err(Error::config(
                    "ablation",
                    format!("variant {} does not share the trained graph {}", s.label(), graph.label()),
                ));
            }
        }
        self.evaluate_as = specs;
        Ok(self)
    }

    pub fn with_artifacts(mut self, dir: PathBuf) -> Self {
        self.artifacts = Some(dir);
        self
    }

    fn save(&self, ctx: &FoldContext, model: &Model, history: &str) -> Result<()> {
        let Some(root) = &self.artifacts else { return Ok(()) };
        let dir = root.join(format!("subject_{}", ctx.subject_id));
        fs::create_dir_all(&dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("fold_{:02}.ckpt", ctx.fold)))?);
        write_checkpoint(model, &mut out)?;
        fs::write(dir.join(format!("fold_{:02}.history.tsv", ctx.fold)), history)?;
        Ok(())
    }
}

impl Learner for NetLearner {
    fn variants(&self) -> Vec<String> {
        self.evaluate_as.iter().map(AblationSpec::label).collect()
    }

    fn fit_predict(&self, ctx: &FoldContext, train: &SegmentSet, test: &SegmentSet) -> Result<Vec<Vec<usize>>> {
        let model_cfg = ModelConfig {
            ablation: self.model.ablation.graph_only(),
            ..self.model.clone()
        };
        let train_cfg = TrainConfig {
            seed: ctx.seed,
            ..self.train.clone()
        };
        let (tr, va) = split_train_val(train, train_cfg.val_fraction, derive_seed(ctx.seed, &[3]))?;
        let fitted = fit(&tr, &va, &model_cfg, &train_cfg)?;
        self.save(ctx, &fitted.model, &fitted.history.to_tsv())?;
        self.evaluate_as
            .iter()
            .map(|spec| {
                if spec.zeroes_kernels() {
                    let mut zeroed = fitted.model.clone();
                    zero_kernels(&mut zeroed.params, *spec)?;
                    zeroed.predict(&test.x)
                } else {
                    fitted.model.predict(&test.x)
                }
            })
            .collect()
    }
}
