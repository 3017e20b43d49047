use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use super::{AblateArgs, AblationFlags, Command, PreprocessArgs, RunArgs, SaliencyArgs, SynthArgs};
use crate::data::{read_dataset, synth_generate, write_dataset, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, compare, evaluate_subjects, fold_log_tsv, predictions_tsv, render_text, render_tsv, NetLearner,
    Protocol, SubjectResult,
};
use crate::kv::{join_list, KvMap};
use crate::model::{read_checkpoint, AblationSpec, ModelConfig};
use crate::preprocess::{PreprocessConfig, SegmentSet};
use crate::saliency::{channel_map_tsv, subject_average, subject_saliency};
use crate::train::TrainConfig;

pub const DATASET_FILE: &str = "dataset.tsc";
pub const CONFIG_FILE: &str = "config.txt";

pub(super) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Cv10(a) => evaluate(&a, Protocol::Cv10, None),
        Command::Loto(a) => evaluate(&a, Protocol::Loto, None),
        Command::Ablate(a) => ablate(&a),
        Command::Saliency(a) => saliency(&a),
    }
}

fn read_kv_file(path: &Path) -> Result<KvMap> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    KvMap::parse(&text)
}

/// Attaches the path to I/O failures.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = with_path(path, read_dataset(path))?;
    ds.validate()?;
    Ok(ds)
}

fn echo_config(out: &Path, kv: &KvMap) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), kv.render())?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::from_kv_text(
        &fs::read_to_string(&args.spec)
            .map_err(|e| Error::config(args.spec.display().to_string(), format!("cannot read: {e}")))?,
    )?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    echo_config(&args.out, &spec.to_kv())?;
    let ds = synth_generate(&spec)?;
    write_dataset(&ds, &args.out.join(DATASET_FILE))
}

fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut kv = match &args.config {
        Some(p) => read_kv_file(p)?,
        None => KvMap::default(),
    };
    let mut cfg = PreprocessConfig::default().apply_kv(&mut kv)?;
    kv.finish()?;
    if let Some(m) = &args.montage {
        cfg.montage = m.clone();
        cfg.resolve_montage()?;
    }
    echo_config(&args.out, &cfg.to_kv())?;
    let ds = load_dataset(&args.data)?;
    write_dataset(&ds.preprocess(&cfg)?, &args.out.join(DATASET_FILE))
}

/// Fully resolved settings of a cross-validation run.
struct RunSettings {
    seed: u64,
    dimension: String,
    threshold: f64,
    segment_seconds: f64,
    model: ModelConfig,
    train: TrainConfig,
}

impl RunSettings {
    fn resolve(args: &RunArgs, ds: &Dataset, flags: AblationFlags) -> Result<Self> {
        let mut kv = match &args.config {
            Some(p) => read_kv_file(p)?,
            None => KvMap::default(),
        };
        let seed = args.seed.map_or_else(|| kv.take_or("seed", 0u64), Ok)?;
        kv.take::<u64>("seed")?;
        let dimension = match &args.dimension {
            Some(d) => d.clone(),
            None => kv.take_or("dimension", "arousal".to_string())?,
        };
        if dimension != "arousal" && dimension != "valence" {
            return Err(Error::config("dimension", format!("expected arousal or valence, got {dimension:?}")));
        }
        let threshold = args.threshold.map_or_else(|| kv.take_or("threshold", 5.0), Ok)?;
        kv.take::<f64>("threshold")?;
        let segment_seconds = args.segment_seconds.map_or_else(|| kv.take_or("segment_seconds", 4.0), Ok)?;
        kv.take::<f64>("segment_seconds")?;

        let fs = ds.sampling_rate()?;
        let samples = segment_seconds * fs;
        if !(segment_seconds > 0.0) || (samples - samples.round()).abs() > 1e-6 {
            return Err(Error::config(
                "segment_seconds",
                format!("{segment_seconds} s is not a whole number of samples at {fs} Hz"),
            ));
        }
        let mut model = ModelConfig {
            num_channels: ds.num_channels()?,
            sampling_rate: fs,
            segment_len: samples.round() as usize,
            ..ModelConfig::default()
        }
        .apply_kv(&mut kv)?;
        let mut train = TrainConfig::default().apply_kv(&mut kv)?;
        kv.finish()?;

        train.seed = seed;
        if let Some(e) = args.epochs {
            train.max_epochs = e;
        }
        if let Some(b) = args.batch {
            train.batch_size = b;
        }
        if let Some(lr) = args.lr {
            train.lr = lr;
        }
        train.validate()?;
        let a = &mut model.ablation;
        a.drop_temporal |= flags.drop_temporal;
        a.drop_spatial |= flags.drop_spatial;
        a.drop_fusion |= flags.drop_fusion;
        a.zero_hemisphere |= flags.zero_hemisphere;
        a.zero_global |= flags.zero_global;
        model.ablation.validate()?;
        model.validate()?;
        Ok(Self {
            seed,
            dimension,
            threshold,
            segment_seconds,
            model,
            train,
        })
    }

    fn to_kv(&self, protocol: Protocol, variants: &[AblationSpec]) -> KvMap {
        let mut kv = self.model.to_kv();
        kv.merge(&self.train.to_kv());
        kv.insert("seed", self.seed);
        kv.insert("dimension", &self.dimension);
        kv.insert("threshold", self.threshold);
        kv.insert("segment_seconds", self.segment_seconds);
        kv.insert("protocol", protocol);
        let labels: Vec<String> = variants.iter().map(AblationSpec::label).collect();
        kv.insert("variants", join_list(&labels));
        kv
    }
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let protocol: Protocol = args.protocol.parse()?;
    evaluate(&args.run, protocol, Some(args.ablation))
}

/// `ablation = None`: a plain run of whatever the config describes.
/// `Some(flags)`: the full model plus, if any flag is set, the flagged variant.
fn evaluate(args: &RunArgs, protocol: Protocol, ablation: Option<AblationFlags>) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let settings = RunSettings::resolve(args, &ds, ablation.unwrap_or_default())?;
    let requested = settings.model.ablation;
    let variants = match ablation {
        None => vec![requested],
        Some(_) if requested.is_none() => vec![AblationSpec::default()],
        Some(_) => vec![AblationSpec::default(), requested],
    };
    echo_config(&args.out, &settings.to_kv(protocol, &variants))?;

    let sets = ds
        .subjects
        .iter()
        .map(|s| s.segments(settings.segment_seconds, &settings.dimension, settings.threshold))
        .collect::<Result<Vec<SegmentSet>>>()?;

    // variants sharing a graph are scored on the same trained networks
    let mut groups: Vec<(AblationSpec, Vec<AblationSpec>)> = Vec::new();
    for v in &variants {
        match groups.iter_mut().find(|(g, _)| *g == v.graph_only()) {
            Some((_, members)) => members.push(*v),
            None => groups.push((v.graph_only(), vec![*v])),
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let mut results: Vec<Vec<SubjectResult>> = Vec::new();
    for (i, (graph, members)) in groups.iter().enumerate() {
        let model = ModelConfig {
            ablation: *graph,
            ..settings.model.clone()
        };
        let artifacts = if i == 0 { args.out.clone() } else { args.out.join(graph.label()) };
        let learner = NetLearner::new(model, settings.train.clone())
            .with_variants(members.clone())?
            .with_artifacts(artifacts);
        results.extend(pool.install(|| evaluate_subjects(&sets, protocol, &learner, settings.seed))?);
    }
    // restore the requested variant order
    let results: Vec<Vec<SubjectResult>> = variants
        .iter()
        .map(|v| {
            results
                .iter()
                .find(|r| r[0].variant == v.label())
                .cloned()
                .expect("every variant was evaluated")
        })
        .collect();

    write_run_outputs(&args.out, &results)
}

fn write_run_outputs(out: &Path, results: &[Vec<SubjectResult>]) -> Result<()> {
    let reports = results.iter().map(|r| aggregate(r)).collect::<Result<Vec<_>>>()?;
    let comparisons = results[1..]
        .iter()
        .map(|r| compare(&results[0], r))
        .collect::<Result<Vec<_>>>()?;
    for (s, subject) in results[0].iter().enumerate() {
        let dir = out.join(format!("subject_{}", subject.subject_id));
        fs::create_dir_all(&dir)?;
        let per_variant: Vec<&SubjectResult> = results.iter().map(|r| &r[s]).collect();
        fs::write(dir.join("folds.tsv"), fold_log_tsv(&per_variant))?;
        fs::write(dir.join("predictions.tsv"), predictions_tsv(&per_variant))?;
    }
    let text = render_text(&reports, &comparisons);
    fs::write(out.join("report.tsv"), render_tsv(&reports, &comparisons))?;
    fs::write(out.join("report.txt"), &text)?;
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn saliency(args: &SaliencyArgs) -> Result<()> {
    let file = with_path(&args.checkpoint, fs::File::open(&args.checkpoint).map_err(Error::from))?;
    let model = read_checkpoint(BufReader::new(file))?;
    let mut kv = model.config.to_kv();
    kv.insert("checkpoint", args.checkpoint.display());
    kv.insert("dimension", &args.dimension);
    kv.insert("threshold", args.threshold);
    kv.insert("class", args.class.map_or_else(|| "all".to_string(), |c| c.to_string()));
    echo_config(&args.out, &kv)?;

    let ds = load_dataset(&args.data)?;
    let (c, fs_data) = (ds.num_channels()?, ds.sampling_rate()?);
    if c != model.config.num_channels || fs_data != model.config.sampling_rate {
        return Err(Error::shape(format!(
            "checkpoint expects {} channels at {} Hz, dataset has {c} at {fs_data} Hz",
            model.config.num_channels, model.config.sampling_rate
        )));
    }
    let names = ds.channel_names()?;
    let seconds = model.config.segment_len as f64 / model.config.sampling_rate;
    let mut maps = Vec::new();
    for subject in &ds.subjects {
        let set = subject.segments(seconds, &args.dimension, args.threshold)?;
        let map = subject_saliency(&model, &set, &args.dimension, args.class)?;
        fs::write(args.out.join(format!("subject_{}.tsv", subject.id)), channel_map_tsv(&names, &map)?)?;
        maps.push(map);
    }
    fs::write(args.out.join("average.tsv"), channel_map_tsv(&names, &subject_average(&maps)?)?)?;
    Ok(())
}
