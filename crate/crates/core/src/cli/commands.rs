//! One function per subcommand. Each reads a merged [`RunConfig`] and writes
//! its artifacts under the output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{HeatmapSource, RunConfig, SynthTask};
use crate::cav::{
    cav_seed, tcav_experiment, token_directional_derivatives, train_cavs, ConceptSet, ConceptSource, ProbeConfig,
    SensitivityRecord, TcavConfig, TcavSummary,
};
use crate::error::{Error, Result};
use crate::io::{self, heatmap::Layout, Dataset, StoredCav};
use crate::metrics::{evaluate_suite, sample_seed, MetricReport};
use crate::model::{train, Example, ModelConfig, SequenceInput, TrainConfig, TrainReport, Transformer};
use crate::rng;
use crate::shapley::{attribute, attribute_stacks, AttributionResult, Method, StackInput};
use crate::synthetic::{PlantedConceptTask, PlantedTokenTask};

fn say(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn load_model(cfg: &RunConfig) -> Result<Transformer> {
    io::load_checkpoint(cfg.model_path()?)
}

fn warn(ds: &Dataset) {
    for w in &ds.warnings {
        say(format!("warning: {}", w));
    }
}

fn truncate<T>(mut v: Vec<T>, limit: Option<usize>) -> Vec<T> {
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

fn load_data(cfg: &RunConfig, model: &ModelConfig) -> Result<(Dataset, Vec<(String, Example)>)> {
    let (ds, ex) = io::load_examples(cfg.data_path()?, model)?;
    warn(&ds);
    Ok((ds, truncate(ex, cfg.limit)))
}

fn load_concepts(cfg: &RunConfig, model: &ModelConfig) -> Result<Vec<ConceptSet>> {
    if cfg.concepts.len() < 2 {
        return Err(Error::Config("relative CAVs need at least two concept files".into()));
    }
    cfg.concepts
        .iter()
        .map(|c| {
            let (ds, ex) = io::load_examples(&c.path, model)?;
            warn(&ds);
            Ok(ConceptSet { name: c.name.clone(), inputs: ex.into_iter().map(|(_, e)| e.input).collect() })
        })
        .collect()
}

/// Indices of the concepts that get CAVs.
fn targets(cfg: &RunConfig, concepts: &[ConceptSet]) -> Result<Vec<usize>> {
    if cfg.targets.is_empty() {
        return Ok((0..concepts.len()).collect());
    }
    cfg.targets
        .iter()
        .map(|t| {
            concepts
                .iter()
                .position(|c| &c.name == t)
                .ok_or_else(|| Error::Config(format!("unknown concept `{}`", t)))
        })
        .collect()
}

fn layers(cfg: &RunConfig, model: &Transformer) -> Result<Vec<usize>> {
    let n = model.config().n_layers;
    if cfg.layers.is_empty() {
        return Ok((1..=n).collect());
    }
    match cfg.layers.iter().find(|&&l| l == 0 || l > n) {
        Some(l) => Err(Error::Config(format!("layer {} outside 1..={}", l, n))),
        None => Ok(cfg.layers.clone()),
    }
}

fn probe_config(cfg: &RunConfig) -> ProbeConfig {
    ProbeConfig { epochs: cfg.cav.epochs, lr: cfg.cav.lr, l2: cfg.cav.l2, holdout: cfg.cav.holdout, seed: 0 }
}

fn class_for(cfg: &RunConfig, model: &Transformer, x: &SequenceInput) -> Result<usize> {
    match cfg.class {
        Some(c) if c >= model.config().n_classes => {
            Err(Error::Config(format!("class {} outside {} classes", c, model.config().n_classes)))
        }
        Some(c) => Ok(c),
        None => Ok(model.predict(x)?.label),
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: T,
}

fn write_doc<T: Serialize>(path: &Path, hash: &str, body: T) -> Result<()> {
    io::reports::write_document(path, &Document { config_hash: hash, body })
}

pub fn synth(cfg: &RunConfig, hash: &str) -> Result<()> {
    let seed = cfg.require_seed("for synth")?;
    let out = cfg.out_dir()?;
    let s = &cfg.synth;
    let split = |k: u64| rng::stream_key(seed, rng::tag::RUN, k);
    let (model_cfg, train_set, test_set) = match s.task {
        SynthTask::PlantedToken => {
            let task = PlantedTokenTask::default();
            task.validate()?;
            let test: Vec<Example> = task.dataset(s.n_test, split(1)).into_iter().map(|p| p.example).collect();
            (task.model_config(seed), task.training_set(s.n_train, split(0), s.mask_rate), test)
        }
        SynthTask::PlantedConcept => {
            let task = PlantedConceptTask::default();
            for set in task.concept_sets(s.concept_size, split(2)) {
                let path = out.join(format!("concept-{}.jsonl", set.name));
                let ex: Vec<Example> = set.inputs.into_iter().map(|input| Example { input, label: 0 }).collect();
                io::save_dataset(&path, &io::records_from_examples(&set.name, &ex))?;
            }
            let pool = task.dataset(s.pool_size, split(3));
            io::save_dataset(&out.join("random.jsonl"), &io::records_from_examples("random", &pool))?;
            (task.model_config(seed), task.dataset(s.n_train, split(0)), task.dataset(s.n_test, split(1)))
        }
    };
    io::save_dataset(&out.join("train.jsonl"), &io::records_from_examples("train", &train_set))?;
    io::save_dataset(&out.join("test.jsonl"), &io::records_from_examples("test", &test_set))?;
    write_doc(&out.join("model.json"), hash, &model_cfg)?;
    say(format!("wrote {} training and {} test records to {}", train_set.len(), test_set.len(), out.display()));
    Ok(())
}

/// Smallest architecture that fits the data.
fn inferred_config(ds: &Dataset, seed: u64) -> Result<ModelConfig> {
    let mut vocab = 2;
    let mut len = 1;
    let mut classes = 2;
    for r in &ds.records {
        let ids = r
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::Config("image datasets need an explicit architecture (train.arch)".into()))?;
        vocab = vocab.max(ids.iter().max().map_or(0, |m| m + 1));
        len = len.max(ids.len() + 1);
        classes = classes.max(r.label + 1);
    }
    Ok(ModelConfig { vocab_size: vocab, max_len: len, n_classes: classes, seed, ..ModelConfig::default() })
}

#[derive(Serialize)]
struct TrainDoc<'a> {
    n_examples: usize,
    report: &'a TrainReport,
}

pub fn train_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let seed = cfg.require_seed("for train")?;
    let out = cfg.out_dir()?;
    let ds = io::load_dataset(cfg.data_path()?)?;
    warn(&ds);
    if ds.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let model_cfg = match cfg.model_config()? {
        Some(c) => ModelConfig { seed, ..c },
        None => inferred_config(&ds, seed)?,
    };
    let examples: Vec<Example> = truncate(ds.examples(&model_cfg)?, cfg.limit).into_iter().map(|(_, e)| e).collect();
    let mut model = Transformer::new(model_cfg)?;
    let t = &cfg.train;
    let tc = TrainConfig { epochs: t.epochs, lr: t.lr, batch_size: t.batch_size, seed, optimizer: t.optimizer };
    let report = train(&mut model, &examples, &tc)?;
    io::save_checkpoint(&out.join("model.ckpt"), &model, hash)?;
    write_doc(&out.join("train_report.json"), hash, TrainDoc { n_examples: examples.len(), report: &report })?;
    say(format!("final loss {:.4}, accuracy {:.3}", report.final_loss, report.final_accuracy));
    Ok(())
}

fn dump_trace(dir: &Path, id: &str, model: &Transformer, x: &SequenceInput, class: usize, hash: &str) -> Result<()> {
    let trace = model.forward(x)?;
    let grads = model.attention_gradients(&trace, class)?;
    let stem = file_stem(id);
    io::dump_attention(&dir.join(format!("{}.attn.bin", stem)), &trace.attention, hash)?;
    io::dump_gradients(&dir.join(format!("{}.grad.bin", stem)), &grads, class, hash)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn attribute_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let methods = cfg.methods()?;
    let seed = cfg.attribution_seed(&methods)?;
    let out = cfg.out_dir()?;
    let records = if cfg.stacks.is_empty() {
        attribute_model(cfg, &methods, seed, &out, hash)?
    } else {
        attribute_from_stacks(cfg, &methods, seed)?
    };
    io::write_attributions(&out.join("attributions.json"), &records, hash)?;
    say(format!("wrote {} attributions", records.len()));
    Ok(())
}

fn attribute_model(
    cfg: &RunConfig,
    methods: &[Method],
    seed: u64,
    out: &Path,
    hash: &str,
) -> Result<Vec<(String, AttributionResult)>> {
    let model = load_model(cfg)?;
    let (_, examples) = load_data(cfg, model.config())?;
    let traces = cfg.dump_traces.then(|| out.join("traces"));
    if let Some(dir) = &traces {
        std::fs::create_dir_all(dir)?;
    }
    let per_input = examples
        .par_iter()
        .enumerate()
        .map(|(i, (id, ex))| {
            let class = class_for(cfg, &model, &ex.input)?;
            let opts = cfg.attribute_options(sample_seed(seed, i));
            if let Some(dir) = &traces {
                dump_trace(dir, id, &model, &ex.input, class, hash)?;
            }
            methods
                .iter()
                .map(|&m| Ok((id.clone(), attribute(m, &model, &ex.input, class, &opts)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_input.into_iter().flatten().collect())
}

fn attribute_from_stacks(cfg: &RunConfig, methods: &[Method], seed: u64) -> Result<Vec<(String, AttributionResult)>> {
    if let Some(m) = methods.iter().find(|m| m.needs_model()) {
        return Err(Error::Config(format!("{} needs a model and cannot run on stack dumps", m)));
    }
    let mut out = Vec::new();
    for (i, s) in cfg.stacks.iter().enumerate() {
        let attention = io::load_attention(&s.attention)?;
        let (grads, stored_class) = match &s.gradients {
            Some(p) => match io::load_stack(p)? {
                io::LoadedStack::Gradient { class, stack } => (Some(stack), class),
                io::LoadedStack::Attention(_) => {
                    return Err(Error::Data(format!("{} holds attention, not gradients", p.display())))
                }
            },
            None => (None, None),
        };
        let class = cfg
            .class
            .or(stored_class)
            .ok_or_else(|| Error::Config(format!("stack `{}` needs --class", s.id)))?;
        let players: Vec<usize> = (1..attention.seq_len()).collect();
        let input = StackInput { attention: &attention, gradients: grads.as_ref(), players: &players, cls: 0 };
        let opts = cfg.attribute_options(sample_seed(seed, i));
        for &m in methods {
            out.push((s.id.clone(), attribute_stacks(m, &input, class, &opts)?));
        }
    }
    Ok(out)
}

pub fn evaluate_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let methods = cfg.methods()?;
    let seed = cfg.attribution_seed(&methods)?;
    let out = cfg.out_dir()?;
    let model = load_model(cfg)?;
    let (_, examples) = load_data(cfg, model.config())?;
    let examples: Vec<Example> = examples.into_iter().map(|(_, e)| e).collect();
    let name = cfg.data_path()?.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let rows = evaluate_suite(&model, &examples, &name, &methods, &cfg.metrics, &cfg.attribute_options(seed))?;
    let mut reports: Vec<MetricReport> = Vec::new();
    let mut failures: Vec<(Method, Error)> = Vec::new();
    for (m, r) in rows {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => {
                say(format!("{} failed: {}", m, e));
                failures.push((m, e));
            }
        }
    }
    io::write_metrics_csv(&out.join("metrics.csv"), &reports, hash)?;
    io::write_metrics_json(&out.join("metrics.json"), &reports, &failures, hash)?;
    if reports.is_empty() {
        return Err(failures.into_iter().next().map(|(_, e)| e).unwrap_or(Error::Config("no methods selected".into())));
    }
    say(format!("evaluated {} methods on {} samples", reports.len(), examples.len()));
    Ok(())
}

#[derive(Serialize)]
struct CavRow<'a> {
    concept: &'a str,
    layer: usize,
    index: usize,
    seed: u64,
    accuracy: f64,
    config_hash: &'a str,
}

pub fn cav_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let seed = cfg.require_seed("for cav")?;
    let out = cfg.out_dir()?;
    let model = load_model(cfg)?;
    let concepts = load_concepts(cfg, model.config())?;
    let seeds: Vec<u64> = (0..cfg.cav.n_cavs).map(|i| cav_seed(seed, i)).collect();
    let probe = probe_config(cfg);
    let mut stored = Vec::new();
    let mut rows = csv::Writer::from_path(out.join("cavs.csv")).map_err(|e| Error::Data(e.to_string()))?;
    for t in targets(cfg, &concepts)? {
        for layer in layers(cfg, &model)? {
            let source = ConceptSource::Relative { concepts: &concepts, target: t };
            let cavs = train_cavs(&model, &source, layer, cfg.cav.n_pos, cfg.cav.n_neg, &seeds, &probe)?;
            for (i, (cav, &s)) in cavs.into_iter().zip(&seeds).enumerate() {
                rows.serialize(CavRow {
                    concept: &cav.concept,
                    layer,
                    index: i,
                    seed: s,
                    accuracy: cav.accuracy,
                    config_hash: hash,
                })
                .map_err(|e| Error::Data(e.to_string()))?;
                stored.push(StoredCav { cav, seed: Some(s) });
            }
        }
    }
    rows.flush()?;
    io::save_cavs(&out.join("cavs.bin"), &stored, hash)?;
    say(format!("trained {} CAVs", stored.len()));
    Ok(())
}

pub fn tcav_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let seed = cfg.require_seed("for tcav")?;
    let class = cfg.class.ok_or_else(|| Error::Config("--class is required for tcav".into()))?;
    let out = cfg.out_dir()?;
    let model = load_model(cfg)?;
    let concepts = load_concepts(cfg, model.config())?;
    let (_, examples) = load_data(cfg, model.config())?;
    let inputs: Vec<SequenceInput> = examples.into_iter().map(|(_, e)| e.input).collect();
    let pool: Vec<SequenceInput> = match &cfg.random_pool {
        Some(p) => {
            let (ds, ex) = io::load_examples(p, model.config())?;
            warn(&ds);
            ex.into_iter().map(|(_, e)| e.input).collect()
        }
        None => Vec::new(),
    };
    let mut summaries: Vec<TcavSummary> = Vec::new();
    for layer in layers(cfg, &model)? {
        let tc = TcavConfig {
            layer,
            class,
            variant: cfg.tcav.variant,
            n_cavs: cfg.cav.n_cavs,
            n_inputs: cfg.tcav.n_inputs,
            n_pos: cfg.cav.n_pos,
            n_neg: cfg.cav.n_neg,
            probe: probe_config(cfg),
            only_correct: cfg.tcav.only_correct,
            seed,
        };
        for t in targets(cfg, &concepts)? {
            summaries.push(tcav_experiment(&model, &ConceptSource::Relative { concepts: &concepts, target: t }, &inputs, &tc)?);
        }
        if !pool.is_empty() {
            for r in 0..cfg.tcav.n_random {
                let source = ConceptSource::Random { name: format!("random-{}", r), pool: &pool };
                let rc = TcavConfig { seed: rng::stream_key(seed, rng::tag::RUN, 100 + r as u64), ..tc.clone() };
                summaries.push(tcav_experiment(&model, &source, &inputs, &rc)?);
            }
        }
    }
    io::write_tcav_csv(&out.join("tcav.csv"), &summaries, hash)?;
    io::write_tcav_json(&out.join("tcav.json"), &summaries, hash)?;
    for s in &summaries {
        say(format!(
            "layer {} {:<16} mean {:.3} p {:.3e}{}",
            s.layer,
            s.concept,
            s.mean_score,
            s.significance.p_value,
            if s.significance.reject { " *" } else { "" }
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct HeatmapEntry<'a, T: Serialize> {
    file: String,
    #[serde(flatten)]
    record: &'a T,
}

pub fn heatmap_cmd(cfg: &RunConfig, hash: &str) -> Result<()> {
    let out = cfg.out_dir()?;
    let dir = out.join("heatmaps");
    std::fs::create_dir_all(&dir)?;
    let model = load_model(cfg)?;
    let (ds, examples) = load_data(cfg, model.config())?;
    let cell_px = cfg.heatmap.cell_px;
    let layouts: Vec<Layout> = ds
        .records
        .iter()
        .take(examples.len())
        .map(|r| match &r.image {
            Some(img) => Layout::Grid { rows: img.height / img.patch, cols: img.width / img.patch, cell_px },
            None => Layout::Strip { cell_px },
        })
        .collect();
    let files: Vec<PathBuf> =
        examples.iter().enumerate().map(|(i, (id, _))| dir.join(format!("{:05}-{}.ppm", i, file_stem(id)))).collect();
    let name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
    match cfg.heatmap.source {
        HeatmapSource::Attribution => {
            let methods = cfg.methods()?;
            let method = *methods.first().ok_or_else(|| Error::Config("no method selected".into()))?;
            let seed = cfg.attribution_seed(&[method])?;
            let results = examples
                .par_iter()
                .enumerate()
                .map(|(i, (_, ex))| {
                    let class = class_for(cfg, &model, &ex.input)?;
                    attribute(method, &model, &ex.input, class, &cfg.attribute_options(sample_seed(seed, i)))
                })
                .collect::<Result<Vec<_>>>()?;
            for ((r, l), f) in results.iter().zip(&layouts).zip(&files) {
                io::emit_attribution(f, r, *l, hash)?;
            }
            let entries: Vec<_> = results.iter().zip(&files).map(|(r, f)| HeatmapEntry { file: name(f), record: r }).collect();
            write_doc(&out.join("heatmaps.json"), hash, serde_json::json!({ "method": method, "images": entries }))?;
        }
        HeatmapSource::Sensitivity => {
            let seed = cfg.require_seed("for sensitivity heatmaps")?;
            let concepts = load_concepts(cfg, model.config())?;
            let target = match &cfg.heatmap.concept {
                Some(c) => concepts
                    .iter()
                    .position(|s| &s.name == c)
                    .ok_or_else(|| Error::Config(format!("unknown concept `{}`", c)))?,
                None => 0,
            };
            let layer = *layers(cfg, &model)?.last().unwrap();
            let source = ConceptSource::Relative { concepts: &concepts, target };
            let cav = train_cavs(&model, &source, layer, cfg.cav.n_pos, cfg.cav.n_neg, &[cav_seed(seed, 0)], &probe_config(cfg))?
                .remove(0);
            let records = examples
                .par_iter()
                .map(|(id, ex)| {
                    let class = class_for(cfg, &model, &ex.input)?;
                    let mut r = token_directional_derivatives(&model, &ex.input, layer, class, &cav)?;
                    r.input_id = Some(id.clone());
                    Ok(r)
                })
                .collect::<Result<Vec<SensitivityRecord>>>()?;
            for ((r, l), f) in records.iter().zip(&layouts).zip(&files) {
                io::emit_sensitivity(f, r, *l, hash)?;
            }
            let entries: Vec<_> = records.iter().zip(&files).map(|(r, f)| HeatmapEntry { file: name(f), record: r }).collect();
            write_doc(
                &out.join("heatmaps.json"),
                hash,
                serde_json::json!({ "concept": cav.concept, "layer": layer, "cav_accuracy": cav.accuracy, "images": entries }),
            )?;
        }
    }
    say(format!("wrote {} heatmaps to {}", files.len(), dir.display()));
    Ok(())
}
