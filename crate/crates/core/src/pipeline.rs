//! End-to-end orchestration: file-backed stages, document-level parallelism
//! and the run manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{parse_line, Document, ParseError};
use crate::counterfactual::{
    counterfactual_copies, top_up_from_bank, AlienPool, AnswerBank, CounterfactualConfig, PoolStrategy,
};
use crate::dataset::{EmitConfig, EmitSummary, Emitter};
use crate::error::{Error, Result};
use crate::graph::{build_entity_graph, EntityGraph};
use crate::metapath::{extract_positive_instances, ExtractorConfig, PositiveInstance};
use crate::negatives::{DonorPool, NegativeConfig};
use crate::sample::{build_sample, Sample};
use crate::seed;
use crate::trainer::TrainConfig;

/// Resolved configuration of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub input: Vec<PathBuf>,
    #[serde(default)]
    pub output: PathBuf,
    /// Worker threads for document-level stages. Does not affect outputs.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub extract: ExtractorConfig,
    #[serde(default)]
    pub negatives: NegativeConfig,
    #[serde(default)]
    pub counterfactual: CounterfactualConfig,
    #[serde(default)]
    pub emit: EmitConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_jobs() -> usize {
    1
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            input: Vec::new(),
            output: PathBuf::new(),
            jobs: 1,
            extract: ExtractorConfig::default(),
            negatives: NegativeConfig::default(),
            counterfactual: CounterfactualConfig::default(),
            emit: EmitConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        if self.extract.max_hops < 2 {
            return Err(Error::Config("max_hops must be at least 2".into()));
        }
        if self.emit.orientations.is_empty() {
            return Err(Error::Config("no orientation to emit".into()));
        }
        self.counterfactual.validate()?;
        self.train.validate()
    }

    /// SHA-256 over the canonical JSON form of every setting that can change
    /// an output. `output` and `jobs` are excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
            m.remove("jobs");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// Pipeline stages, used to tag errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Graph,
    Extract,
    Negatives,
    Counterfactual,
    Emit,
    Train,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Extract => "extract",
            Stage::Negatives => "negatives",
            Stage::Counterfactual => "counterfactual",
            Stage::Emit => "emit",
            Stage::Train => "train",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<Error>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

/// Maps `f` over `items` on `jobs` threads. Results keep input order.
pub fn par_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Outcome of validating corpus files: well-formed documents plus one
/// error per rejected line.
#[derive(Debug, Default)]
pub struct CorpusReport {
    pub documents: Vec<Document>,
    pub errors: Vec<(PathBuf, ParseError)>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Reads every line of every file, collecting errors instead of stopping.
/// A repeated document id is an error on the later line.
pub fn check_corpus(paths: &[PathBuf]) -> Result<CorpusReport> {
    let mut report = CorpusReport::default();
    let mut ids = HashSet::new();
    for path in paths {
        for (i, line) in open(path)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_line(i + 1, &line) {
                Ok(doc) if !ids.insert(doc.id.clone()) => report.errors.push((
                    path.clone(),
                    ParseError {
                        line: i + 1,
                        path: "id".into(),
                        message: format!("duplicate document id `{}`", doc.id),
                    },
                )),
                Ok(doc) => report.documents.push(doc),
                Err(e) => report.errors.push((path.clone(), e)),
            }
        }
    }
    Ok(report)
}

/// Reads a corpus, failing on the first malformed line.
pub fn read_corpus(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let report = check_corpus(paths)?;
    match report.errors.into_iter().next() {
        Some((_, e)) => Err(Error::Parse(e)),
        None => Ok(report.documents),
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

/// A writer that hashes and counts the bytes passing through it.
pub struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub fn finish(mut self) -> Result<String> {
        self.inner.flush()?;
        Ok(hex::encode(self.hasher.finalize()))
    }
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Graph debug export of a corpus: `# <doc id>` followed by the edge list of
/// that document.
pub fn graph_listing(docs: &[Document], graphs: &[EntityGraph]) -> String {
    let mut out = String::new();
    for (d, g) in docs.iter().zip(graphs) {
        out.push_str("# ");
        out.push_str(&d.id);
        out.push('\n');
        out.push_str(&g.edge_list());
    }
    out
}

pub fn build_graphs(docs: &[Document], jobs: usize) -> Vec<EntityGraph> {
    par_map(jobs, docs, build_entity_graph)
}

/// Positive instances of every document, in document order.
pub fn extract_all(docs: &[Document], graphs: &[EntityGraph], cfg: &ExtractorConfig, jobs: usize) -> Vec<PositiveInstance> {
    let pairs: Vec<(&Document, &EntityGraph)> = docs.iter().zip(graphs).collect();
    par_map(jobs, &pairs, |(d, g)| extract_positive_instances(d, g, cfg))
        .into_iter()
        .flatten()
        .collect()
}

fn doc_index(docs: &[Document]) -> HashMap<&str, usize> {
    docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect()
}

fn host<'a>(docs: &'a [Document], index: &HashMap<&str, usize>, id: &str) -> Result<&'a Document> {
    index
        .get(id)
        .map(|&i| &docs[i])
        .ok_or_else(|| Error::Config(format!("no document `{id}` in the corpus")))
}

/// One sample per positive instance, with both negative sets drawn.
pub fn negatives_all(
    docs: &[Document],
    positives: &[PositiveInstance],
    cfg: &NegativeConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<Sample>> {
    let size = if cfg.allow_cross_document { cfg.pool_size } else { 0 };
    let pool = DonorPool::build(docs, size, seed);
    let index = doc_index(docs);
    par_map(jobs, positives, |p| build_sample(p, host(docs, &index, &p.doc)?, &pool, cfg, seed))
        .into_iter()
        .collect()
}

/// Counterfactual stage output: each original followed by its copies.
#[derive(Debug, Default)]
pub struct Augmented {
    pub samples: Vec<Sample>,
    pub counterfactual: usize,
    pub skipped: BTreeMap<String, usize>,
}

/// Appends counterfactual copies after every original. Originals whose
/// alien pool is too small keep no copies and are counted as skipped.
pub fn counterfactual_all(
    docs: &[Document],
    samples: &[Sample],
    cfg: &CounterfactualConfig,
    seed: u64,
    jobs: usize,
) -> Result<Augmented> {
    cfg.validate()?;
    let index = doc_index(docs);
    let pools: Vec<AlienPool> = match cfg.pool_strategy {
        PoolStrategy::Uniform => vec![AlienPool::from_documents(docs)],
        PoolStrategy::SameBatchDocuments => docs.chunks(cfg.batch_size).map(AlienPool::from_documents).collect(),
    };
    let pool_of = |doc: usize| match cfg.pool_strategy {
        PoolStrategy::Uniform => &pools[0],
        PoolStrategy::SameBatchDocuments => &pools[doc / cfg.batch_size],
    };
    let bank = cfg.answer_bank_negatives.then(|| AnswerBank::from_samples(samples));

    let results = par_map(jobs, samples, |s| -> Result<Option<Vec<Sample>>> {
        let di = *index
            .get(s.doc.as_str())
            .ok_or_else(|| Error::Config(format!("no document `{}` in the corpus", s.doc)))?;
        match counterfactual_copies(s, &docs[di], pool_of(di), cfg, seed) {
            Ok(mut copies) => {
                if let Some(bank) = &bank {
                    for c in &mut copies {
                        top_up_from_bank(c, bank, &mut seed::rng_for(seed, &["answer-bank", &c.key()]))?;
                    }
                }
                Ok(Some(copies))
            }
            Err(Error::PoolTooSmall { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });

    let mut out = Augmented::default();
    for (s, r) in samples.iter().zip(results) {
        let mut original = s.clone();
        original.counterfactual = false;
        original.copy = 0;
        out.samples.push(original);
        match r? {
            Some(copies) => {
                out.counterfactual += copies.len();
                out.samples.extend(copies);
            }
            None => *out.skipped.entry("alien_pool_too_small".into()).or_default() += 1,
        }
    }
    Ok(out)
}

/// Regroups an augmented sample stream into (original, copies).
pub fn groups(samples: &[Sample]) -> Result<Vec<(&Sample, &[Sample])>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if samples[i].counterfactual {
            return Err(Error::Format {
                line: i + 1,
                message: "counterfactual sample without a preceding original".into(),
            });
        }
        let mut j = i + 1;
        while j < samples.len() && samples[j].counterfactual {
            j += 1;
        }
        out.push((&samples[i], &samples[i + 1..j]));
        i = j;
    }
    Ok(out)
}

/// Writes the contrastive instances of an augmented stream.
pub fn emit_all<W: Write>(
    samples: &[Sample],
    cf: &CounterfactualConfig,
    cfg: &EmitConfig,
    seed: u64,
    sink: W,
) -> Result<EmitSummary> {
    let mut emitter = Emitter::new(sink, cf.cf_ratio, cfg.clone(), seed);
    for (original, copies) in groups(samples)? {
        emitter.push_group(original, copies)?;
    }
    emitter.finish()
}

/// File names of the artifacts inside the output directory.
pub mod artifacts {
    pub const GRAPH: &str = "graph.tsv";
    pub const POSITIVES: &str = "positives.jsonl";
    pub const NEGATIVES: &str = "negatives.jsonl";
    pub const AUGMENTED: &str = "augmented.jsonl";
    pub const INSTANCES: &str = "instances.jsonl";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub records: usize,
    pub sha256: String,
}

/// Record of a run. Contains nothing time- or machine-dependent, so two runs
/// with the same configuration and input produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub artifacts: BTreeMap<String, Artifact>,
    pub counts: BTreeMap<String, usize>,
    pub skipped: BTreeMap<String, BTreeMap<String, usize>>,
}

fn create(path: &Path) -> Result<HashingWriter<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(HashingWriter::new(BufWriter::new(f)))
}

fn write_artifact<T: Serialize>(dir: &Path, name: &str, items: &[T]) -> Result<Artifact> {
    let mut w = create(&dir.join(name))?;
    write_jsonl(&mut w, items)?;
    Ok(Artifact {
        path: name.into(),
        records: items.len(),
        sha256: w.finish()?,
    })
}

/// ingest, graph, extract, negatives, counterfactual, emit. Every stage
/// writes its artifact to `cfg.output`; the manifest goes last.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<Manifest, StageError> {
    cfg.validate().stage(Stage::Ingest)?;
    let dir = &cfg.output;
    fs::create_dir_all(dir).stage(Stage::Ingest)?;
    let mut counts = BTreeMap::new();
    let mut skipped: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut arts = BTreeMap::new();

    let docs = read_corpus(&cfg.input).stage(Stage::Ingest)?;
    counts.insert("documents".to_string(), docs.len());

    let graphs = build_graphs(&docs, cfg.jobs);
    let listing = graph_listing(&docs, &graphs);
    let mut w = create(&dir.join(artifacts::GRAPH)).stage(Stage::Graph)?;
    w.write_all(listing.as_bytes()).stage(Stage::Graph)?;
    arts.insert(
        "graph".to_string(),
        Artifact {
            path: artifacts::GRAPH.into(),
            records: graphs.len(),
            sha256: w.finish().stage(Stage::Graph)?,
        },
    );
    counts.insert("graph_nodes".into(), graphs.iter().map(|g| g.nodes().len()).sum());
    counts.insert("graph_edges".into(), graphs.iter().map(EntityGraph::edge_count).sum());

    let positives = extract_all(&docs, &graphs, &cfg.extract, cfg.jobs);
    let covered: HashSet<&str> = positives.iter().map(|p| p.doc.as_str()).collect();
    let no_path = docs.len() - covered.len();
    if no_path > 0 {
        skipped.entry("extract".into()).or_default().insert("no_instance".into(), no_path);
    }
    counts.insert("positives".into(), positives.len());
    arts.insert(
        "positives".into(),
        write_artifact(dir, artifacts::POSITIVES, &positives).stage(Stage::Extract)?,
    );

    let samples = negatives_all(&docs, &positives, &cfg.negatives, cfg.seed, cfg.jobs).stage(Stage::Negatives)?;
    let opt: usize = samples.iter().map(|s| s.options.items.len()).sum();
    let ctx: usize = samples.iter().map(|s| s.contexts.items.len()).sum();
    counts.insert("option_negatives".into(), opt);
    counts.insert("context_negatives".into(), ctx);
    let neg_skips = skipped.entry("negatives".into()).or_default();
    for s in &samples {
        if s.options.shortfall() {
            *neg_skips.entry("option_shortfall".into()).or_default() += 1;
        }
        if s.contexts.shortfall() {
            *neg_skips.entry("context_shortfall".into()).or_default() += 1;
        }
    }
    counts.insert("samples".into(), samples.len());
    arts.insert(
        "negatives".into(),
        write_artifact(dir, artifacts::NEGATIVES, &samples).stage(Stage::Negatives)?,
    );

    let aug = counterfactual_all(&docs, &samples, &cfg.counterfactual, cfg.seed, cfg.jobs).stage(Stage::Counterfactual)?;
    counts.insert("counterfactual_samples".into(), aug.counterfactual);
    if !aug.skipped.is_empty() {
        skipped.insert("counterfactual".into(), aug.skipped.clone());
    }
    arts.insert(
        "augmented".into(),
        write_artifact(dir, artifacts::AUGMENTED, &aug.samples).stage(Stage::Counterfactual)?,
    );

    let mut w = create(&dir.join(artifacts::INSTANCES)).stage(Stage::Emit)?;
    let summary = emit_all(&aug.samples, &cfg.counterfactual, &cfg.emit, cfg.seed, &mut w).stage(Stage::Emit)?;
    arts.insert(
        "instances".into(),
        Artifact {
            path: artifacts::INSTANCES.into(),
            records: summary.records,
            sha256: w.finish().stage(Stage::Emit)?,
        },
    );
    counts.insert("instances".into(), summary.records);
    counts.insert("instances_original".into(), summary.original);
    counts.insert("instances_counterfactual".into(), summary.counterfactual);
    if !summary.skipped.is_empty() {
        skipped.insert("emit".into(), summary.skipped);
    }
    skipped.retain(|_, v| !v.is_empty());

    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        inputs: cfg.input.iter().map(|p| p.display().to_string()).collect(),
        artifacts: arts,
        counts,
        skipped,
    };
    let mut w = create(&dir.join(artifacts::MANIFEST)).stage(Stage::Emit)?;
    serde_json::to_writer_pretty(&mut w, &manifest).stage(Stage::Emit)?;
    w.write_all(b"\n").stage(Stage::Emit)?;
    w.finish().stage(Stage::Emit)?;
    Ok(manifest)
}
