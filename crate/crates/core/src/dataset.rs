//! Contrastive instances: construction, mixing, JSONL I/O and statistics.
//!
//! Each line of an instance file is one JSON object:
//!
//! ```text
//! {"orientation":"option","query":"...","candidates":["...",...],"gold":2,
//!  "meta":{"doc":"d1","pair":["e1","e5"],"path":["e1","e7","e5"],
//!          "counterfactual":false,"replacements":{},"strategy":"in-document",
//!          "segments":[[39,51],[53],[60],[44],[70]]}}
//! ```
//!
//! `segments[0]` lists the character lengths of the sentences making up the
//! query and `segments[1 + c]` those of candidate `c`; sentences are joined
//! by a single space.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::counterfactual::Ratio;
use crate::error::{Error, Result};
use crate::negatives::{DonorSource, Orientation};
use crate::sample::Sample;
use crate::seed;
use crate::text::AnnotatedText;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub doc: String,
    pub pair: (String, String),
    pub path: Vec<String>,
    pub counterfactual: bool,
    pub replacements: BTreeMap<String, String>,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveInstance {
    pub orientation: Orientation,
    pub query: String,
    pub candidates: Vec<String>,
    pub gold: usize,
    pub meta: Meta,
}

impl ContrastiveInstance {
    pub fn check(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if self.gold >= self.candidates.len() {
            return Err(Error::GoldOutOfRange {
                gold: self.gold,
                len: self.candidates.len(),
            });
        }
        Ok(())
    }

    /// Number of context sentences, when segment bookkeeping is present.
    pub fn context_len(&self) -> Option<usize> {
        let seg = match self.orientation {
            Orientation::Option => self.meta.segments.first(),
            Orientation::Context => self.meta.segments.get(1 + self.gold),
        }?;
        Some(seg.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitConfig {
    pub orientations: Vec<Orientation>,
    /// Place the positive at a seeded random index (otherwise index 0).
    pub shuffle_gold: bool,
}

impl Default for EmitConfig {
    fn default() -> Self {
        Self {
            orientations: vec![Orientation::Option, Orientation::Context],
            shuffle_gold: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmitSkip {
    OptionShortfall,
    ContextShortfall,
}

impl EmitSkip {
    pub fn name(self) -> &'static str {
        match self {
            EmitSkip::OptionShortfall => "option_shortfall",
            EmitSkip::ContextShortfall => "context_shortfall",
        }
    }
}

fn join(texts: &[&AnnotatedText]) -> (String, Vec<usize>) {
    let lens = texts.iter().map(|t| t.text.chars().count()).collect();
    let joined: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
    (joined.join(" "), lens)
}

fn strategy(sources: impl Iterator<Item = DonorSource>) -> String {
    let set: BTreeSet<DonorSource> = sources.collect();
    if set.is_empty() {
        return "none".into();
    }
    let names: Vec<&str> = set.into_iter().map(DonorSource::name).collect();
    names.join("+")
}

/// Builds one contrastive instance of the given orientation. Samples whose
/// negative set for that orientation fell short of K are skipped.
pub fn to_instance(
    sample: &Sample,
    orientation: Orientation,
    cfg: &EmitConfig,
    root_seed: u64,
) -> Result<ContrastiveInstance, EmitSkip> {
    let context: Vec<&AnnotatedText> = sample.context.iter().collect();
    let (query, mut candidates, strategy) = match orientation {
        Orientation::Option => {
            if sample.options.shortfall() {
                return Err(EmitSkip::OptionShortfall);
            }
            let query = join(&context);
            let mut cands = vec![join(&[&sample.answer])];
            cands.extend(sample.options.items.iter().map(|n| join(&[&n.text])));
            (query, cands, strategy(sample.options.items.iter().map(|n| n.source)))
        }
        Orientation::Context => {
            if sample.contexts.shortfall() || context.is_empty() {
                return Err(EmitSkip::ContextShortfall);
            }
            let query = join(&[&sample.answer]);
            let mut cands = vec![join(&context)];
            for v in &sample.contexts.items {
                let mut texts = context.clone();
                texts[v.position] = &v.sentence.text;
                cands.push(join(&texts));
            }
            (query, cands, strategy(sample.contexts.items.iter().map(|v| v.sentence.source)))
        }
    };

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    if cfg.shuffle_gold {
        let mut rng = seed::rng_for(root_seed, &["gold", &sample.key(), orientation.name()]);
        order.shuffle(&mut rng);
    }
    let gold = order.iter().position(|&i| i == 0).unwrap_or(0);
    let mut slots: Vec<Option<(String, Vec<usize>)>> = candidates.drain(..).map(Some).collect();
    let (texts, segs): (Vec<String>, Vec<Vec<usize>>) = order.iter().filter_map(|&i| slots[i].take()).unzip();

    let mut segments = vec![query.1];
    segments.extend(segs);
    Ok(ContrastiveInstance {
        orientation,
        query: query.0,
        candidates: texts,
        gold,
        meta: Meta {
            doc: sample.doc.clone(),
            pair: sample.pair.clone(),
            path: sample.path.entities.clone(),
            counterfactual: sample.counterfactual,
            replacements: sample.replacements.ids(),
            strategy,
            segments,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitSummary {
    pub records: usize,
    pub original: usize,
    pub counterfactual: usize,
    pub skipped: BTreeMap<String, usize>,
}

/// Streams instances to a sink, interleaving counterfactual copies after
/// their originals so that the running counterfactual count after `t`
/// originals is `floor(t * b / a)` for ratio `a:b`.
pub struct Emitter<W: Write> {
    sink: W,
    ratio: Ratio,
    cfg: EmitConfig,
    seed: u64,
    queue: VecDeque<ContrastiveInstance>,
    summary: EmitSummary,
}

impl<W: Write> Emitter<W> {
    pub fn new(sink: W, ratio: Ratio, cfg: EmitConfig, seed: u64) -> Self {
        Self {
            sink,
            ratio,
            cfg,
            seed,
            queue: VecDeque::new(),
            summary: EmitSummary::default(),
        }
    }

    fn write(&mut self, inst: &ContrastiveInstance) -> Result<()> {
        serde_json::to_writer(&mut self.sink, inst)?;
        self.sink.write_all(b"\n")?;
        self.summary.records += 1;
        if inst.meta.counterfactual {
            self.summary.counterfactual += 1;
        } else {
            self.summary.original += 1;
        }
        Ok(())
    }

    fn build(&mut self, sample: &Sample) -> Vec<ContrastiveInstance> {
        let mut out = Vec::new();
        for &o in &self.cfg.orientations {
            match to_instance(sample, o, &self.cfg, self.seed) {
                Ok(i) => out.push(i),
                Err(skip) => *self.summary.skipped.entry(skip.name().to_string()).or_default() += 1,
            }
        }
        out
    }

    /// Emits an original sample together with its counterfactual copies.
    pub fn push_group(&mut self, original: &Sample, copies: &[Sample]) -> Result<()> {
        let originals = self.build(original);
        for c in copies {
            let built = self.build(c);
            self.queue.extend(built);
        }
        if self.ratio.original == 0 {
            while let Some(i) = self.queue.pop_front() {
                self.write(&i)?;
            }
            return Ok(());
        }
        let (a, b) = (self.ratio.original as usize, self.ratio.counterfactual as usize);
        for inst in originals {
            self.write(&inst)?;
            let due = self.summary.original * b / a;
            while self.summary.counterfactual < due {
                let Some(cf) = self.queue.pop_front() else { break };
                self.write(&cf)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<EmitSummary> {
        self.sink.flush()?;
        Ok(self.summary)
    }
}

/// Emits every group (original, copies) in order.
pub fn emit_instances<'a, W: Write>(
    groups: impl IntoIterator<Item = (&'a Sample, &'a [Sample])>,
    ratio: Ratio,
    cfg: &EmitConfig,
    seed: u64,
    sink: W,
) -> Result<EmitSummary> {
    let mut emitter = Emitter::new(sink, ratio, cfg.clone(), seed);
    for (original, copies) in groups {
        emitter.push_group(original, copies)?;
    }
    emitter.finish()
}

/// Parses one instance line.
pub fn parse_instance(line: &str, line_no: usize) -> Result<ContrastiveInstance> {
    let inst: ContrastiveInstance = serde_json::from_str(line).map_err(|e| Error::Format {
        line: line_no,
        message: e.to_string(),
    })?;
    inst.check().map_err(|e| Error::Format {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(inst)
}

/// Lazily reads an instance file; blank lines are ignored and line numbers
/// are 1-based.
pub fn read_instances<R: BufRead>(reader: R) -> impl Iterator<Item = Result<ContrastiveInstance>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(parse_instance(&l, i + 1)),
    })
}

pub fn write_instance<W: Write>(mut sink: W, inst: &ContrastiveInstance) -> Result<()> {
    serde_json::to_writer(&mut sink, inst)?;
    sink.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub instances: usize,
    pub by_orientation: BTreeMap<String, usize>,
    pub counterfactual: usize,
    pub counterfactual_share: f64,
    pub mean_path_entities: f64,
    /// Mean context size over instances carrying segment bookkeeping.
    pub mean_context_sentences: f64,
    pub mean_candidates: f64,
    pub gold_histogram: BTreeMap<usize, usize>,
}

pub fn stats<I>(instances: I) -> Result<Stats>
where
    I: IntoIterator<Item = Result<ContrastiveInstance>>,
{
    let mut s = Stats::default();
    let (mut path, mut ctx, mut ctx_n, mut cands) = (0usize, 0usize, 0usize, 0usize);
    for inst in instances {
        let inst = inst?;
        s.instances += 1;
        *s.by_orientation.entry(inst.orientation.name().to_string()).or_default() += 1;
        s.counterfactual += usize::from(inst.meta.counterfactual);
        path += inst.meta.path.len();
        cands += inst.candidates.len();
        if let Some(n) = inst.context_len() {
            ctx += n;
            ctx_n += 1;
        }
        *s.gold_histogram.entry(inst.gold).or_default() += 1;
    }
    if s.instances > 0 {
        let n = s.instances as f64;
        s.counterfactual_share = s.counterfactual as f64 / n;
        s.mean_path_entities = path as f64 / n;
        s.mean_candidates = cands as f64 / n;
    }
    if ctx_n > 0 {
        s.mean_context_sentences = ctx as f64 / ctx_n as f64;
    }
    Ok(s)
}
