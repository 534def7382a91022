//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use metapath_cl::corpus::{write_document, Document};
use metapath_cl::counterfactual::{CounterfactualConfig, Ratio};
use metapath_cl::dataset::{read_instances, ContrastiveInstance, EmitConfig};
use metapath_cl::fixtures::mirrormask;
use metapath_cl::graph::build_entity_graph;
use metapath_cl::metapath::{extract_positive_instances, validate_instance, ExtractMode, ExtractorConfig, PositiveInstance};
use metapath_cl::negatives::{NegativeConfig, Orientation};
use metapath_cl::pipeline::{self, HashingWriter, PipelineConfig};
use metapath_cl::seed;
use metapath_cl::synthetic::{bulk_corpus, micro_document, triangle_corpus, MicroBounds};
use metapath_cl::trainer::gradcheck::Problem;
use metapath_cl::trainer::params::{ScorerParams, Vocab};
use metapath_cl::trainer::{cl_loss, evaluate, mcqa_loss, mlm_loss, ocl_loss, train, ccl_loss, McqaExample, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn timed(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    ensure!(t < limit, "{detail}; took {t:.1?}, limit {limit:?}");
    Ok(format!("{detail}; {t:.1?}"))
}

// 1. Backtracking search against exhaustive enumeration.

/// Entity pairs for which some simple path of at most `max_hops` entities
/// has a hop assignment (a knowledge-graph edge, or a distinct sentence
/// mentioning both ends and not mentioning both targets) using at least one
/// sentence. Works on the raw document, not the entity graph.
fn brute_force_pairs(doc: &Document, max_hops: usize) -> BTreeSet<(String, String)> {
    let n = doc.entities.len();
    let in_sentence: Vec<BTreeSet<usize>> = doc
        .entities
        .iter()
        .map(|e| e.mentions.iter().map(|m| m.sentence).collect())
        .collect();
    let co = |u: usize, v: usize| -> BTreeSet<usize> { in_sentence[u].intersection(&in_sentence[v]).copied().collect() };
    let kg = |u: usize, v: usize| {
        let (a, b) = (&doc.entities[u].id, &doc.entities[v].id);
        doc.relations
            .iter()
            .any(|r| (&r.head == a && &r.tail == b) || (&r.head == b && &r.tail == a))
    };
    let linked = |u: usize, v: usize| kg(u, v) || !co(u, v).is_empty();

    fn paths(at: usize, goal: usize, max: usize, linked: &dyn Fn(usize, usize) -> bool, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == goal {
            out.push(cur.clone());
            return;
        }
        if cur.len() == max {
            return;
        }
        for next in 0..n {
            if !cur.contains(&next) && linked(at, next) {
                cur.push(next);
                paths(next, goal, max, linked, n, cur, out);
                cur.pop();
            }
        }
    }

    fn assign(
        path: &[usize],
        k: usize,
        used: &mut BTreeSet<usize>,
        banned: &BTreeSet<usize>,
        co: &dyn Fn(usize, usize) -> BTreeSet<usize>,
        kg: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        if k + 1 == path.len() {
            return !used.is_empty();
        }
        let (u, v) = (path[k], path[k + 1]);
        if kg(u, v) && assign(path, k + 1, used, banned, co, kg) {
            return true;
        }
        for s in co(u, v) {
            if banned.contains(&s) || used.contains(&s) {
                continue;
            }
            used.insert(s);
            let ok = assign(path, k + 1, used, banned, co, kg);
            used.remove(&s);
            if ok {
                return true;
            }
        }
        false
    }

    let mut found = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            let answers = co(a, b);
            if a == b || answers.is_empty() {
                continue;
            }
            let mut all = Vec::new();
            paths(a, b, max_hops, &linked, n, &mut vec![a], &mut all);
            if all.iter().any(|p| assign(p, 0, &mut BTreeSet::new(), &answers, &co, &kg)) {
                found.insert((doc.entities[a].id.clone(), doc.entities[b].id.clone()));
            }
        }
    }
    found
}

fn dfs_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut docs, mut with, mut pairs) = (0, 0, 0);
    for i in 0..300 {
        let id = format!("micro{i}");
        let doc = micro_document(&id, MicroBounds::default(), &mut seed::rng_for(2024, &["micro", &id]));
        let graph = build_entity_graph(&doc);
        ensure!(graph.edge_count() <= 12 && doc.entities.len() <= 8 && doc.sentences.len() <= 10, "{id} out of bounds");
        let all = ExtractorConfig {
            max_hops: 4,
            mode: ExtractMode::All,
            ..Default::default()
        };
        let found = extract_positive_instances(&doc, &graph, &all);
        for inst in &found {
            let v = validate_instance(inst, &doc, &graph);
            ensure!(v.is_empty(), "{id}: invalid instance {inst:?}: {v:?}");
        }
        let got: BTreeSet<(String, String)> = found.iter().map(|p| p.pair.clone()).collect();
        let want = brute_force_pairs(&doc, 4);
        ensure!(got == want, "{id}: search found {got:?}, enumeration found {want:?}");
        let first = extract_positive_instances(&doc, &graph, &ExtractorConfig::default());
        ensure!(first.is_empty() == want.is_empty(), "{id}: first-mode disagrees with enumeration");
        docs += 1;
        with += usize::from(!want.is_empty());
        pairs += want.len();
    }
    timed(
        Duration::from_secs(30),
        start,
        format!("{docs} micro-corpora, {with} with instances, {pairs} pairs agree"),
    )
}

// 2. Worked example.

fn worked_example() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = write_corpus(tmp.path(), &[mirrormask()]);
    let cfg = PipelineConfig {
        input: vec![input],
        output: tmp.path().join("out"),
        ..PipelineConfig::new(0)
    };
    pipeline::run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let pos: Vec<PositiveInstance> =
        pipeline::read_jsonl(&tmp.path().join("out").join("positives.jsonl")).map_err(|e| e.to_string())?;
    ensure!(pos.len() == 1, "{} positives", pos.len());
    let p = &pos[0];
    let doc = mirrormask();
    let name = |id: &str| doc.entity(id).map(|e| e.surface.clone()).unwrap_or_default();
    ensure!(
        (name(&p.pair.0).as_str(), name(&p.pair.1).as_str()) == ("Dave McKean", "Stephanie Leonidas"),
        "pair {:?}",
        p.pair
    );
    ensure!(p.context == [1, 5], "context {:?}", p.context);
    ensure!(p.answer == 3, "answer {}", p.answer);
    ensure!(p.path.entities.len() == 3, "path {:?}", p.path.entities);
    Ok(format!(
        "pair ({}, {}), context s1 s5, answer s3, path {}",
        name(&p.pair.0),
        name(&p.pair.1),
        p.path.entities.iter().map(|e| name(e)).collect::<Vec<_>>().join(" -> ")
    ))
}

// 3. Loss constants.

fn instance(orientation: &str, candidates: &[&str]) -> ContrastiveInstance {
    let json = serde_json::json!({
        "orientation": orientation,
        "query": "who met whom",
        "candidates": candidates,
        "gold": 2,
        "meta": {"doc": "d", "pair": ["a", "b"], "path": ["a", "c", "b"], "counterfactual": false, "replacements": {}, "strategy": "none"}
    });
    serde_json::from_value(json).expect("valid instance")
}

fn loss_constants() -> Outcome {
    let ln4 = 4f64.ln();
    let mut worst: f64 = 0.0;
    let mut check = |what: &str, v: f64| -> Result<(), String> {
        worst = worst.max((v - ln4).abs());
        ensure!((v - ln4).abs() < 1e-9, "{what} = {v}, expected ln 4");
        Ok(())
    };
    check("cl_loss", cl_loss(0.7, &[0.7; 3]).map_err(|e| e.to_string())?)?;

    let vocab = Vocab::from_texts(["who met whom alpha beta gamma delta passage question"]);
    let zero = ScorerParams::zeros(vocab.clone(), 8, 4);
    let random = ScorerParams::random(vocab, 8, 4, 1.0, &mut seed::rng_for(3, &["loss-constants"]));
    let distinct = ["alpha", "beta", "gamma", "delta"];
    let same = ["alpha beta"; 4];
    let opt = instance("option", &distinct);
    let ctx = instance("context", &distinct);
    check("ocl_loss (zero scorer)", ocl_loss(&zero, &opt).map_err(|e| e.to_string())?)?;
    check("ccl_loss (zero scorer)", ccl_loss(&zero, &ctx).map_err(|e| e.to_string())?)?;
    check("ocl_loss (tied candidates)", ocl_loss(&random, &instance("option", &same)).map_err(|e| e.to_string())?)?;
    check("ccl_loss (tied candidates)", ccl_loss(&random, &instance("context", &same)).map_err(|e| e.to_string())?)?;
    let ex = |options: &[&str]| McqaExample {
        passage: "passage".into(),
        question: "question".into(),
        options: options.iter().map(|s| s.to_string()).collect(),
        gold: 1,
    };
    check("mcqa_loss (zero scorer)", mcqa_loss(&zero, &ex(&distinct)).map_err(|e| e.to_string())?)?;
    check("mcqa_loss (tied options)", mcqa_loss(&random, &ex(&same)).map_err(|e| e.to_string())?)?;
    let mlm = mlm_loss(&random, "who met whom alpha beta", 0.0, &mut seed::rng_for(3, &["mlm"])).map_err(|e| e.to_string())?;
    ensure!(mlm == 0.0, "mlm_loss at mask rate 0 = {mlm}");
    Ok(format!("max |loss - ln 4| = {worst:.1e}; mlm_loss(rate 0) = 0"))
}

// 4. Gradient check.

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut min_coords = usize::MAX;
    for i in 0..20 {
        let r = Problem::random(seed::derive_seed(4, &["acceptance", &i.to_string()]))
            .check(200, 1e-5)
            .map_err(|e| e.to_string())?;
        ensure!(r.coordinates >= 200, "config {i}: {} coordinates", r.coordinates);
        ensure!(r.max_rel_error < 1e-4, "config {i}: max relative error {:.3e}", r.max_rel_error);
        worst = worst.max(r.max_rel_error);
        min_coords = min_coords.min(r.coordinates);
    }
    timed(
        Duration::from_secs(60),
        start,
        format!("20 configurations, >= {min_coords} coordinates each, max relative error {worst:.2e}"),
    )
}

// 5. Toy separation.

fn instances_of(docs: &[Document], ratio: Ratio, seed: u64) -> Result<Vec<ContrastiveInstance>, String> {
    let graphs = pipeline::build_graphs(docs, 1);
    let pos = pipeline::extract_all(docs, &graphs, &ExtractorConfig::default(), 1);
    let samples = pipeline::negatives_all(docs, &pos, &NegativeConfig::default(), seed, 1).map_err(|e| e.to_string())?;
    let cf = CounterfactualConfig {
        cf_ratio: ratio,
        ..Default::default()
    };
    let aug = pipeline::counterfactual_all(docs, &samples, &cf, seed, 1).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    pipeline::emit_all(&aug.samples, &cf, &EmitConfig::default(), seed, &mut buf).map_err(|e| e.to_string())?;
    read_instances(&buf[..]).collect::<Result<_, _>>().map_err(|e| e.to_string())
}

fn toy_separation() -> Outcome {
    let start = Instant::now();
    let train_docs = triangle_corpus("train", 500, 3, 51);
    let test_docs = triangle_corpus("heldout", 200, 3, 52);
    let train_set = instances_of(&train_docs, Ratio::new(1, 3).map_err(|e| e.to_string())?, 53)?;
    let test_set = instances_of(&test_docs, Ratio::ORIGINAL_ONLY, 54)?;
    ensure!(
        train_set.iter().chain(&test_set).all(|i| i.candidates.len() == 4),
        "expected K = 3 everywhere"
    );
    let cfg = TrainConfig::default();
    ensure!(cfg.epochs <= 200, "{} epochs", cfg.epochs);
    let (params, metrics) = train(&train_set, &cfg).map_err(|e| e.to_string())?;
    let acc = evaluate(&params, &test_set).map_err(|e| e.to_string())?;
    let last = metrics.last().map(|m| m.accuracy).unwrap_or(0.0);
    ensure!(acc >= 0.90, "held-out accuracy {acc:.4} (train {last:.4})");
    timed(
        Duration::from_secs(300),
        start,
        format!(
            "{} train / {} held-out instances, {} epochs, held-out accuracy {acc:.4} vs chance 0.25",
            train_set.len(),
            test_set.len(),
            cfg.epochs
        ),
    )
}

// 6. Shortcut elimination.

fn count(hay: &str, needle: &str) -> usize {
    hay.matches(needle).count()
}

fn shortcut_elimination() -> Outcome {
    let docs = bulk_corpus(200, 12, 8, 61);
    let surface: HashMap<&str, &str> = docs
        .iter()
        .flat_map(|d| d.entities.iter().map(|e| (e.id.as_str(), e.surface.as_str())))
        .collect();
    let all = instances_of(&docs, Ratio::new(1, 1).map_err(|e| e.to_string())?, 62)?;
    ensure!(all.len() >= 1000, "only {} instances", all.len());
    let run = &all[..1000];

    let (mut options, mut baseline_correct) = (0usize, 0usize);
    for (n, inst) in run.iter().enumerate() {
        if inst.orientation != Orientation::Option {
            continue;
        }
        options += 1;
        let target = |id: &String| -> Result<&str, String> {
            let id = inst.meta.replacements.get(id).unwrap_or(id);
            surface.get(id.as_str()).copied().ok_or_else(|| format!("unknown entity {id}"))
        };
        let (a, b) = (target(&inst.meta.pair.0)?, target(&inst.meta.pair.1)?);
        let mut bag = vec![a, b];
        bag.sort_unstable();
        // Multiset of target surfaces found in a candidate, as counts.
        let profile = |text: &str| -> Vec<usize> {
            let mut c: Vec<usize> = bag.iter().map(|s| count(text, s)).collect();
            if a == b {
                c.truncate(1);
            }
            c
        };
        let gold = profile(&inst.candidates[inst.gold]);
        ensure!(gold.iter().all(|&c| c >= 1), "line {}: positive lacks a target surface", n + 1);
        for (k, cand) in inst.candidates.iter().enumerate() {
            ensure!(
                profile(cand) == gold,
                "line {}: candidate {k} {:?} has target profile {:?}, positive {:?}",
                n + 1,
                cand,
                profile(cand),
                gold
            );
        }
        // Baseline: score = function of the target-surface multiset only;
        // ties go to the first candidate.
        let scores: Vec<u64> = inst
            .candidates
            .iter()
            .map(|c| seed::derive_seed(0, &[&format!("{:?}", profile(c))]))
            .collect();
        let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        baseline_correct += usize::from(best == inst.gold);
    }
    let acc = baseline_correct as f64 / options as f64;
    ensure!((acc - 0.25).abs() <= 0.05, "entity-multiset baseline accuracy {acc:.4}");
    Ok(format!(
        "{options} option instances in a 1000-instance run share the positive's target multiset; baseline accuracy {acc:.4}"
    ))
}

// 7. Determinism of `run`.

fn mpcl(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mpcl"))
        .args(args)
        .env_remove("MPCL_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "mpcl {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out)
}

fn sha256(path: &Path) -> Result<String, String> {
    let mut w = HashingWriter::new(io::sink());
    io::copy(&mut File::open(path).map_err(|e| e.to_string())?, &mut w).map_err(|e| e.to_string())?;
    w.finish().map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = write_corpus(tmp.path(), &bulk_corpus(300, 15, 8, 71));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        mpcl(&["--seed", "17", "run", "-i", s(&input), "-o", s(out), "--cf-ratio", "1:2"])?;
    }
    let mut hashes = Vec::new();
    for f in ["instances.jsonl", "manifest.json"] {
        let (x, y) = (sha256(&a.join(f))?, sha256(&b.join(f))?);
        ensure!(x == y, "{f} differs: {x} vs {y}");
        hashes.push(format!("{f} {}", &x[..12]));
    }
    Ok(hashes.join(", "))
}

// 8. Ratio fidelity.

fn ratio_fidelity() -> Outcome {
    let docs = bulk_corpus(300, 12, 8, 81);
    let mut report = Vec::new();
    for (a, b) in [(1u32, 2u32), (1, 3)] {
        let insts = instances_of(&docs, Ratio::new(a, b).map_err(|e| e.to_string())?, 82)?;
        let total = insts.len() as f64;
        let cf = insts.iter().filter(|i| i.meta.counterfactual).count() as f64;
        let expected = total * f64::from(b) / f64::from(a + b);
        ensure!((cf - expected).abs() <= 1.0, "{a}:{b}: {cf} counterfactual of {total}, expected {expected:.1}");
        report.push(format!("{a}:{b} share {:.4} ({cf}/{total})", cf / total));
    }
    Ok(report.join(", "))
}

// 9. Throughput.

fn throughput() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = write_corpus(tmp.path(), &bulk_corpus(10_000, 20, 10, 91));
    let out = tmp.path().join("out");
    let start = Instant::now();
    let o = mpcl(&["--seed", "9", "--jobs", "4", "run", "-i", s(&input), "-o", s(&out)])?;
    let elapsed = start.elapsed();
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let c = &manifest["counts"];
    ensure!(c["documents"] == 10_000, "documents {}", c["documents"]);
    timed(
        Duration::from_secs(120),
        start,
        format!(
            "10000 documents -> {} positives, {} instances (run took {elapsed:.1?})",
            c["positives"], c["instances"]
        ),
    )
}

fn write_corpus(dir: &Path, docs: &[Document]) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    let mut w = BufWriter::new(File::create(&path).expect("create corpus"));
    for d in docs {
        write_document(&mut w, d).expect("write corpus");
    }
    w.flush().expect("flush corpus");
    path
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("DFS-oracle equivalence", dfs_oracle_equivalence),
        ("worked-example reproduction", worked_example),
        ("loss constants", loss_constants),
        ("gradient verification", gradient_check),
        ("toy separation", toy_separation),
        ("shortcut elimination", shortcut_elimination),
        ("determinism", determinism),
        ("ratio fidelity", ratio_fidelity),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
