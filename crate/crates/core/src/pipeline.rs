//! File-based pipeline stages behind the `kgcap` command line.
//!
//! Every stage reads its inputs from the run configuration or from the
//! output directory of earlier stages and writes its outputs atomically.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Split, Vocabulary};
use crate::decode::{beam_search, DecodeConfig};
use crate::error::{Error, Result};
use crate::expansion::{build_term_sets, ExpansionConfig, TermSets};
use crate::kg::KnowledgeGraph;
use crate::metrics::{evaluate, format_table, EvalCorpus, MetricReport, ResultLine};
use crate::nn::checkpoint;
use crate::nn::{
    pretrain_term_encoder, term_tokens, train, CaptionModel, Example, ImageInputs, Mode, ModelConfig, ModelDims,
    ModelKind, TermEncoderParams, TrainConfig, TrainLog,
};
use crate::retrofit::{retrofit, AlphaPolicy, BetaPolicy, RetrofitConfig};
use crate::vectors::VectorStore;

pub const GRAPH_FILE: &str = "graph.csv";
pub const VECTORS_FILE: &str = "vectors.retrofit.txt";
pub const TERMS_FILE: &str = "terms.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const ABLATION_PARTIAL: &str = "ablation.partial.json";

pub const ABLATION_FOOTNOTE: &str =
    "Note: the fine-tuned CNN variant is not included; image features are fixed inputs.";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSetting {
    #[default]
    InverseDegree,
    Constant,
    EdgeWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrofitSettings {
    pub alpha: f64,
    pub beta: BetaSetting,
    /// Used by the `constant` beta policy.
    pub beta_value: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for RetrofitSettings {
    fn default() -> Self {
        let d = RetrofitConfig::default();
        RetrofitSettings {
            alpha: 1.0,
            beta: BetaSetting::InverseDegree,
            beta_value: 1.0,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
        }
    }
}

impl RetrofitSettings {
    pub fn to_config(&self) -> RetrofitConfig {
        RetrofitConfig {
            alpha: AlphaPolicy::Constant(self.alpha),
            beta: match self.beta {
                BetaSetting::InverseDegree => BetaPolicy::InverseDegree,
                BetaSetting::Constant => BetaPolicy::Constant(self.beta_value),
                BetaSetting::EdgeWeight => BetaPolicy::EdgeWeight,
            },
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

/// Everything a run needs. `seed` drives every random choice; it replaces
/// the `rng_seed` of both training configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub paths: Paths,
    pub min_count: u64,
    pub use_pretrained_encoder: bool,
    pub retrofit: RetrofitSettings,
    pub expansion: ExpansionConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::Full,
            paths: Paths::default(),
            min_count: 4,
            use_pretrained_encoder: true,
            retrofit: RetrofitSettings::default(),
            expansion: ExpansionConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths in it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.expansion.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if !(self.retrofit.alpha.is_finite() && self.retrofit.alpha >= 0.0) {
            return Err(Error::Config("retrofit.alpha must be finite and non-negative".into()));
        }
        if self.model.embed == 0 || self.model.hidden == 0 || self.model.term_hidden == 0 || self.model.term_embed == 0
        {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }

    /// Applies the run seed to both training configurations.
    pub fn finalize(&mut self) {
        self.train.rng_seed = self.seed;
        self.pretrain.rng_seed = self.seed;
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex. The output
    /// directory is left out since it does not affect results.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths.out = None;
        let bytes = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn input(&self, p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let p = p
            .as_ref()
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))?;
        let p = self.resolve(p);
        if !p.exists() {
            return Err(Error::Config(format!("paths.{name}: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn graph_path(&self) -> Result<PathBuf> {
        self.input(&self.paths.graph, "graph")
    }

    pub fn vectors_path(&self) -> Result<PathBuf> {
        self.input(&self.paths.vectors, "vectors")
    }

    pub fn train_path(&self) -> Result<PathBuf> {
        self.input(&self.paths.train, "train")
    }

    pub fn test_path(&self) -> Result<PathBuf> {
        self.input(&self.paths.test, "test")
    }

    pub fn out_dir(&self) -> PathBuf {
        match &self.paths.out {
            Some(p) => self.resolve(p),
            None => PathBuf::from("out"),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?))
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::file(&tmp, e))?;
    f.sync_all().map_err(|e| Error::file(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

/// Machine-readable record of one stage.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub subcommand: String,
    pub seed: u64,
    pub config_hash: String,
    pub timings_ms: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl RunLog {
    pub fn new(subcommand: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(RunLog {
            subcommand: subcommand.into(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            ..RunLog::default()
        })
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings_ms
            .insert(label.into(), start.elapsed().as_secs_f64() * 1000.0);
        out
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        if let Ok(v) = serde_json::to_value(value) {
            self.notes.insert(key.into(), v);
        }
    }

    /// Writes the log to `<out>/logs/<subcommand>.json`.
    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("logs").join(format!("{}.json", self.subcommand));
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }
}

/// Related terms for one image, as stored in the terms file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermsLine {
    pub split: Split,
    pub image_id: String,
    #[serde(flatten)]
    pub sets: TermSets,
}

pub type TermIndex = BTreeMap<(Split, String), TermSets>;

pub fn load_terms(path: &Path) -> Result<TermIndex> {
    let mut index = TermIndex::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TermsLine = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        index.insert((t.split, t.image_id), t.sets);
    }
    Ok(index)
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::ingest(open(path)?)
}

pub fn load_vectors(path: &Path) -> Result<VectorStore> {
    VectorStore::load(open(path)?)
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    Dataset::load(open(path)?, split)
}

pub fn load_model(path: &Path) -> Result<CaptionModel> {
    checkpoint::load(open(path)?)
}

fn model_bytes(model: &CaptionModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    checkpoint::save(model, &mut buf)?;
    Ok(buf)
}

fn terms_for<'a>(terms: Option<&'a TermIndex>, split: Split, id: &str) -> Result<Option<&'a TermSets>> {
    match terms {
        None => Ok(None),
        Some(t) => t
            .get(&(split, id.to_string()))
            .map(Some)
            .ok_or_else(|| Error::Lookup(format!("terms for image {id} ({split})"))),
    }
}

/// Model inputs for one record; term lists stay empty without a term index.
pub fn image_inputs(
    record: &crate::dataset::ImageRecord,
    split: Split,
    terms: Option<&TermIndex>,
    store: Option<&VectorStore>,
) -> Result<ImageInputs> {
    let (direct, indirect) = match terms_for(terms, split, &record.image_id)? {
        Some(s) => (term_tokens(&s.direct, store), term_tokens(&s.indirect, store)),
        None => (Vec::new(), Vec::new()),
    };
    Ok(ImageInputs {
        feature: record.feature.clone(),
        direct,
        indirect,
    })
}

/// One training example per reference caption.
pub fn build_examples(
    ds: &Dataset,
    vocab: &Vocabulary,
    terms: Option<&TermIndex>,
    store: Option<&VectorStore>,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for r in &ds.records {
        let inputs = image_inputs(r, ds.split, terms, store)?;
        for reference in &r.references {
            out.push(Example {
                inputs: inputs.clone(),
                caption: vocab.encode_caption(reference),
            });
        }
    }
    Ok(out)
}

/// Related terms for every record of every dataset.
pub fn expand_all(
    g: &KnowledgeGraph,
    store: &VectorStore,
    datasets: &[&Dataset],
    cfg: &ExpansionConfig,
) -> Result<Vec<TermsLine>> {
    let mut lines = Vec::new();
    for ds in datasets {
        for r in &ds.records {
            lines.push(TermsLine {
                split: ds.split,
                image_id: r.image_id.clone(),
                sets: build_term_sets(g, store, &r.detections, cfg)?,
            });
        }
    }
    Ok(lines)
}

fn terms_jsonl(lines: &[TermsLine]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut buf, l)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn index_terms(lines: Vec<TermsLine>) -> TermIndex {
    lines.into_iter().map(|l| ((l.split, l.image_id), l.sets)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredCaption {
    pub text: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaptionLine {
    pub image_id: String,
    pub captions: Vec<ScoredCaption>,
}

/// Beam-decodes every record of `ds`.
pub fn caption_dataset(
    model: &CaptionModel,
    ds: &Dataset,
    terms: Option<&TermIndex>,
    store: Option<&VectorStore>,
    cfg: &DecodeConfig,
) -> Result<Vec<CaptionLine>> {
    let needs_terms = !model.kind.slots().is_empty();
    let mut out = Vec::with_capacity(ds.len());
    for r in &ds.records {
        let inputs = image_inputs(r, ds.split, if needs_terms { terms } else { None }, store)?;
        let emb = model.embed(&inputs)?;
        let captions = beam_search(model, &emb, cfg)?
            .into_iter()
            .map(|h| ScoredCaption {
                text: model.vocab.decode(h.surface()),
                logprob: h.logprob,
            })
            .collect();
        out.push(CaptionLine {
            image_id: r.image_id.clone(),
            captions,
        });
    }
    Ok(out)
}

/// Joins best captions with references; records without references are skipped.
pub fn results_lines(captions: &[CaptionLine], ds: &Dataset) -> Vec<ResultLine> {
    captions
        .iter()
        .zip(&ds.records)
        .filter(|(_, r)| !r.references.is_empty())
        .map(|(c, r)| ResultLine {
            image_id: c.image_id.clone(),
            candidate: c.captions.first().map(|s| s.text.clone()).unwrap_or_default(),
            references: r.references.clone(),
        })
        .collect()
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn corpus_of(lines: &[ResultLine]) -> Result<EvalCorpus> {
    let text = jsonl(lines)?;
    EvalCorpus::load_jsonl(text.as_slice())
}

/// Normalizes the graph and writes it with a summary.
pub fn ingest_kg(cfg: &RunConfig, log: &mut RunLog) -> Result<KnowledgeGraph> {
    let src = cfg.graph_path()?;
    let out = cfg.out_dir();
    let g = log.time("ingest", || load_graph(&src))?;
    let mut buf = Vec::new();
    g.export(&mut buf)?;
    log.output(&out.join(GRAPH_FILE), &buf)?;
    log.note("terms", g.term_count());
    log.note("edges", g.edge_count());
    Ok(g)
}

fn graph_input(cfg: &RunConfig) -> Result<PathBuf> {
    let staged = cfg.out_dir().join(GRAPH_FILE);
    if staged.exists() {
        Ok(staged)
    } else {
        cfg.graph_path()
    }
}

fn vectors_input(cfg: &RunConfig) -> Result<PathBuf> {
    let staged = cfg.out_dir().join(VECTORS_FILE);
    if staged.exists() {
        Ok(staged)
    } else {
        cfg.vectors_path()
    }
}

pub fn retrofit_stage(cfg: &RunConfig, log: &mut RunLog) -> Result<VectorStore> {
    let g = load_graph(&graph_input(cfg)?)?;
    let base = load_vectors(&cfg.vectors_path()?)?;
    let store = log.time("retrofit", || retrofit(&base, &g, &cfg.retrofit.to_config()))?;
    let mut buf = Vec::new();
    store.export(&mut buf)?;
    log.output(&cfg.out_dir().join(VECTORS_FILE), &buf)?;
    log.note("vectors", store.len());
    Ok(store)
}

fn datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let train = load_dataset(&cfg.train_path()?, Split::Train)?;
    let test = match &cfg.paths.test {
        Some(_) => Some(load_dataset(&cfg.test_path()?, Split::Test)?),
        None => None,
    };
    Ok((train, test))
}

pub fn expand_stage(cfg: &RunConfig, log: &mut RunLog) -> Result<Vec<TermsLine>> {
    let g = load_graph(&graph_input(cfg)?)?;
    let store = load_vectors(&vectors_input(cfg)?)?;
    let (train, test) = datasets(cfg)?;
    let mut all = vec![&train];
    all.extend(test.as_ref());
    let lines = log.time("expand", || expand_all(&g, &store, &all, &cfg.expansion))?;
    log.output(&cfg.out_dir().join(TERMS_FILE), &terms_jsonl(&lines)?)?;
    log.note("images", lines.len());
    Ok(lines)
}

struct TrainingInputs {
    train: Dataset,
    vocab: Vocabulary,
    store: VectorStore,
    terms: TermIndex,
}

fn training_inputs(cfg: &RunConfig) -> Result<TrainingInputs> {
    let train = load_dataset(&cfg.train_path()?, Split::Train)?;
    let vocab = Vocabulary::build(&train, cfg.min_count)?;
    let store = load_vectors(&vectors_input(cfg)?)?;
    let terms_path = cfg.out_dir().join(TERMS_FILE);
    if !terms_path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run expand-terms first",
            terms_path.display()
        )));
    }
    let terms = load_terms(&terms_path)?;
    Ok(TrainingInputs {
        train,
        vocab,
        store,
        terms,
    })
}

fn pretrain_with(cfg: &RunConfig, inp: &TrainingInputs) -> Result<(CaptionModel, TrainLog)> {
    let examples = build_examples(&inp.train, &inp.vocab, Some(&inp.terms), Some(&inp.store))?;
    let (enc, tlog) = pretrain_term_encoder(
        inp.vocab.clone(),
        &cfg.model,
        inp.train.feature_dim,
        inp.store.dim(),
        &examples,
        &cfg.pretrain,
    )?;
    Ok((enc.network, tlog))
}

pub fn pretrain_stage(cfg: &RunConfig, log: &mut RunLog) -> Result<CaptionModel> {
    let inp = training_inputs(cfg)?;
    let out = cfg.out_dir();
    let (network, tlog) = log.time("pretrain", || pretrain_with(cfg, &inp))?;
    log.output(&out.join(VOCAB_FILE), inp.vocab.to_json()?.as_bytes())?;
    log.output(&out.join(ENCODER_FILE), &model_bytes(&network)?)?;
    log.output(&out.join("pretrain_loss.csv"), tlog.to_csv().as_bytes())?;
    log.note("final_loss", tlog.final_loss());
    Ok(network)
}

fn train_mode(
    cfg: &RunConfig,
    mode: Mode,
    inp: &TrainingInputs,
    encoder: Option<&TermEncoderParams>,
) -> Result<(CaptionModel, TrainLog)> {
    let examples = build_examples(&inp.train, &inp.vocab, Some(&inp.terms), Some(&inp.store))?;
    let dims = ModelDims::new(&cfg.model, inp.vocab.len(), inp.train.feature_dim, inp.store.dim());
    let encoder = if mode.slots().is_empty() { None } else { encoder };
    train(
        ModelKind::Caption(mode),
        inp.vocab.clone(),
        dims,
        cfg.model.init_scale,
        &examples,
        &cfg.train,
        encoder,
    )
}

pub fn train_stage(cfg: &RunConfig, log: &mut RunLog) -> Result<CaptionModel> {
    let inp = training_inputs(cfg)?;
    let out = cfg.out_dir();
    let enc_path = out.join(ENCODER_FILE);
    let pretrained = if cfg.use_pretrained_encoder && !cfg.mode.slots().is_empty() {
        if enc_path.exists() {
            Some(load_model(&enc_path)?)
        } else {
            log::warn!(
                "{} not found; term encoders start from random weights",
                enc_path.display()
            );
            None
        }
    } else {
        None
    };
    let encoder = pretrained.as_ref().map(|m| &m.params.encoders[0]);
    let (model, tlog) = log.time("train", || train_mode(cfg, cfg.mode, &inp, encoder))?;
    log.output(&out.join(VOCAB_FILE), inp.vocab.to_json()?.as_bytes())?;
    log.output(&out.join(MODEL_FILE), &model_bytes(&model)?)?;
    log.output(&out.join("train_loss.csv"), tlog.to_csv().as_bytes())?;
    log.note("mode", cfg.mode.name());
    log.note("final_loss", tlog.final_loss());
    log.note("pretrained_encoder", encoder.is_some());
    Ok(model)
}

pub fn caption_stage(cfg: &RunConfig, log: &mut RunLog) -> Result<Vec<ResultLine>> {
    let out = cfg.out_dir();
    let model = load_model(&out.join(MODEL_FILE))?;
    let test = load_dataset(&cfg.test_path()?, Split::Test)?;
    let (terms, store) = if model.kind.slots().is_empty() {
        (None, None)
    } else {
        (
            Some(load_terms(&out.join(TERMS_FILE))?),
            Some(load_vectors(&vectors_input(cfg)?)?),
        )
    };
    let captions = log.time("decode", || {
        caption_dataset(&model, &test, terms.as_ref(), store.as_ref(), &cfg.decode)
    })?;
    let results = results_lines(&captions, &test);
    log.output(&out.join(CAPTIONS_FILE), &jsonl(&captions)?)?;
    log.output(&out.join(RESULTS_FILE), &jsonl(&results)?)?;
    log.note("images", captions.len());
    Ok(results)
}

fn report_files(report: &MetricReport, label: &str) -> Result<(String, String)> {
    let json = report.to_json()? + "\n";
    let txt = format_table(&[(label.to_string(), report.clone())]);
    Ok((json, txt))
}

pub fn evaluate_stage(cfg: &RunConfig, results: Option<&Path>, log: &mut RunLog) -> Result<MetricReport> {
    let out = cfg.out_dir();
    let path = results.map(Path::to_path_buf).unwrap_or_else(|| out.join(RESULTS_FILE));
    let corpus = EvalCorpus::load_jsonl(open(&path)?)?;
    let report = log.time("evaluate", || Ok(evaluate(&corpus)))?;
    let (json, txt) = report_files(&report, "candidate")?;
    log.output(&out.join(REPORT_JSON), json.as_bytes())?;
    log.output(&out.join(REPORT_TXT), txt.as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub label: String,
    pub final_loss: Option<f64>,
    pub report: MetricReport,
}

fn ablation_row(
    cfg: &RunConfig,
    mode: Mode,
    inp: &TrainingInputs,
    test: &Dataset,
    encoder: Option<&TermEncoderParams>,
) -> Result<AblationRow> {
    let (model, tlog) = train_mode(cfg, mode, inp, encoder)?;
    let captions = caption_dataset(&model, test, Some(&inp.terms), Some(&inp.store), &cfg.decode)?;
    let corpus = corpus_of(&results_lines(&captions, test))?;
    Ok(AblationRow {
        mode: mode.name().into(),
        label: mode.label().into(),
        final_loss: tlog.final_loss(),
        report: evaluate(&corpus),
    })
}

/// Builds every intermediate in memory from the raw inputs.
fn ablation_inputs(cfg: &RunConfig) -> Result<(TrainingInputs, Dataset)> {
    let g = load_graph(&cfg.graph_path()?)?;
    let base = load_vectors(&cfg.vectors_path()?)?;
    let store = retrofit(&base, &g, &cfg.retrofit.to_config())?;
    let train = load_dataset(&cfg.train_path()?, Split::Train)?;
    let test = load_dataset(&cfg.test_path()?, Split::Test)?;
    let terms = index_terms(expand_all(&g, &store, &[&train, &test], &cfg.expansion)?);
    let vocab = Vocabulary::build(&train, cfg.min_count)?;
    Ok((
        TrainingInputs {
            train,
            vocab,
            store,
            terms,
        },
        test,
    ))
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let table: Vec<(String, MetricReport)> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
    format!("{}{}\n", format_table(&table), ABLATION_FOOTNOTE)
}

/// Trains, decodes and scores every mode with the same seed and budget.
/// Rows come out in [`Mode::ALL`] order; with `parallel` the modes train on
/// separate threads but the output is identical.
pub fn ablate_stage(cfg: &RunConfig, parallel: bool, log: &mut RunLog) -> Result<Vec<AblationRow>> {
    let out = cfg.out_dir();
    let (inp, test) = log.time("prepare", || ablation_inputs(cfg))?;
    let pretrained = if cfg.use_pretrained_encoder {
        Some(log.time("pretrain", || pretrain_with(cfg, &inp))?.0)
    } else {
        None
    };
    let encoder = pretrained.as_ref().map(|m| &m.params.encoders[0]);

    let results: Vec<Result<AblationRow>> = log.time("modes", || {
        Ok(if parallel {
            std::thread::scope(|s| {
                let handles: Vec<_> = Mode::ALL
                    .iter()
                    .map(|&m| {
                        let (inp, test) = (&inp, &test);
                        s.spawn(move || ablation_row(cfg, m, inp, test, encoder))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or_else(|_| Err(Error::Numeric("ablation worker panicked".into())))
                    })
                    .collect()
            })
        } else {
            let mut rows = Vec::new();
            for m in Mode::ALL {
                log::info!("ablation: training {}", m.name());
                let row = ablation_row(cfg, m, &inp, &test, encoder);
                let failed = row.is_err();
                rows.push(row);
                if failed {
                    break;
                }
            }
            rows
        })
    })?;

    let mut rows = Vec::new();
    for (m, r) in Mode::ALL.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                write_atomic(
                    &out.join(ABLATION_PARTIAL),
                    serde_json::to_string_pretty(&rows)?.as_bytes(),
                )?;
                return Err(Error::Numeric(format!(
                    "ablation stopped at mode {}: {e}; partial results in {}",
                    m.name(),
                    out.join(ABLATION_PARTIAL).display()
                )));
            }
        }
    }
    log.output(
        &out.join(ABLATION_JSON),
        (serde_json::to_string_pretty(&rows)? + "\n").as_bytes(),
    )?;
    log.output(&out.join(ABLATION_TXT), ablation_table(&rows).as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>("{\"sed\": 1}").is_err());
        let c: RunConfig = serde_json::from_str("{\"seed\": 3, \"mode\": \"image\"}").unwrap();
        assert_eq!((c.seed, c.mode), (3, Mode::Image));
    }

    #[test]
    fn missing_input_is_config_error() {
        let cfg = RunConfig::default();
        assert!(matches!(cfg.graph_path(), Err(Error::Config(_))));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
