//! Vocabulary and scorer parameters, with a textual dump format.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

pub const UNK: u32 = 0;
pub const SEP: u32 = 1;
pub const MASK: u32 = 2;
const RESERVED: [&str; 3] = ["[UNK]", "[SEP]", "[MASK]"];

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.insert(t.to_string());
        }
        v
    }
}

impl Vocab {
    /// Reserved tokens, then every token of `texts` in first-seen order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for t in texts {
            for tok in tokenize(t) {
                v.insert(tok);
            }
        }
        v
    }

    fn insert(&mut self, tok: String) -> u32 {
        if let Some(&i) = self.index.get(&tok) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.index.insert(tok.clone(), i);
        self.tokens.push(tok);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|t| self.id(&t)).collect()
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(vocab: usize, dim: usize, hidden: usize) -> Self {
        let w1 = vocab * dim;
        let b1 = w1 + hidden * dim;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        Self {
            vocab,
            dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
            len: b2 + 1,
        }
    }

    pub fn row(&self, token: u32) -> std::ops::Range<usize> {
        let s = token as usize * self.dim;
        s..s + self.dim
    }
}

/// Token embeddings plus a two-layer head, stored as one flat vector laid
/// out as `[E (V x d) | W1 (h x d) | b1 (h) | w2 (h) | b2]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub vocab: Vocab,
    pub layout: Layout,
    pub theta: Vec<f64>,
}

const MAGIC: &str = "mpcl-params v1";

impl ScorerParams {
    pub fn zeros(vocab: Vocab, dim: usize, hidden: usize) -> Self {
        let layout = Layout::new(vocab.len(), dim, hidden);
        Self {
            vocab,
            layout,
            theta: vec![0.0; layout.len],
        }
    }

    /// Embeddings uniform in `±scale`, head weights uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn random(vocab: Vocab, dim: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(vocab, dim, hidden);
        p.reinit_embeddings(scale, rng);
        p.reinit_head(rng);
        p
    }

    pub fn reinit_embeddings(&mut self, scale: f64, rng: &mut Rng) {
        let l = self.layout;
        for x in &mut self.theta[..l.w1] {
            *x = rng.random_range(-scale..=scale);
        }
    }

    pub fn reinit_head(&mut self, rng: &mut Rng) {
        let l = self.layout;
        let a1 = 1.0 / (l.dim as f64).sqrt();
        let a2 = 1.0 / (l.hidden as f64).sqrt();
        for x in &mut self.theta[l.w1..l.b1] {
            *x = rng.random_range(-a1..=a1);
        }
        self.theta[l.b1..l.w2].fill(0.0);
        for x in &mut self.theta[l.w2..l.b2] {
            *x = rng.random_range(-a2..=a2);
        }
        self.theta[l.b2] = 0.0;
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        &self.theta[self.layout.row(token)]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    /// Writes the textual dump: a header line, `dims V d h`, the vocabulary
    /// (one token per line), then each block under its own label with one
    /// matrix row per line. Values use the shortest representation that
    /// round-trips exactly.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let l = self.layout;
        let row = |w: &mut W, xs: &[f64]| -> Result<()> {
            let s: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", s.join(" "))?;
            Ok(())
        };
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "dims {} {} {}", l.vocab, l.dim, l.hidden)?;
        writeln!(w, "vocab")?;
        for t in self.vocab.tokens() {
            writeln!(w, "{t}")?;
        }
        writeln!(w, "embedding")?;
        for r in self.theta[..l.w1].chunks(l.dim.max(1)) {
            row(&mut w, r)?;
        }
        writeln!(w, "w1")?;
        for r in self.theta[l.w1..l.b1].chunks(l.dim.max(1)) {
            row(&mut w, r)?;
        }
        writeln!(w, "b1")?;
        row(&mut w, &self.theta[l.b1..l.w2])?;
        writeln!(w, "w2")?;
        row(&mut w, &self.theta[l.w2..l.b2])?;
        writeln!(w, "b2")?;
        row(&mut w, &self.theta[l.b2..])?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |want: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::Format {
                    line: 0,
                    message: format!("unexpected end of file, expected {want}"),
                }),
            }
        };
        let bad = |line: usize, message: String| Error::Format { line, message };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(bad(n, format!("expected `{MAGIC}`")));
        }
        let (n, dims) = next("dims")?;
        let nums: Vec<usize> = dims
            .strip_prefix("dims ")
            .map(|s| s.split_whitespace().filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        let [v, d, h] = nums[..] else {
            return Err(bad(n, "expected `dims V d h`".into()));
        };
        let expect = |next: &mut dyn FnMut(&str) -> Result<(usize, String)>, label: &str| -> Result<()> {
            let (n, l) = next(label)?;
            if l == label {
                Ok(())
            } else {
                Err(bad(n, format!("expected `{label}`")))
            }
        };
        expect(&mut next, "vocab")?;
        let mut vocab = Vocab {
            tokens: Vec::with_capacity(v),
            index: HashMap::with_capacity(v),
        };
        for _ in 0..v {
            let (n, t) = next("token")?;
            if vocab.index.contains_key(&t) {
                return Err(bad(n, format!("duplicate token `{t}`")));
            }
            vocab.insert(t);
        }
        if vocab.tokens.get(..RESERVED.len()) != Some(&RESERVED.map(String::from)[..]) {
            return Err(bad(4, "vocabulary must start with the reserved tokens".into()));
        }
        let layout = Layout::new(v, d, h);
        let mut theta = Vec::with_capacity(layout.len);
        let blocks = [("embedding", v, d), ("w1", h, d), ("b1", 1, h), ("w2", 1, h), ("b2", 1, 1)];
        for (label, rows, cols) in blocks {
            expect(&mut next, label)?;
            for _ in 0..rows {
                let (n, l) = next(label)?;
                let vals = l
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(n, e.to_string()))?;
                if vals.len() != cols {
                    return Err(bad(n, format!("expected {cols} values, found {}", vals.len())));
                }
                theta.extend(vals);
            }
        }
        Ok(Self { vocab, layout, theta })
    }
}

/// Reference pre-training settings of the full-scale models the toy scorer
/// stands in for. Informational only; the desk-scale defaults differ.
pub mod full_scale {
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Pretraining {
        pub batch_size: usize,
        pub peak_learning_rate: f64,
        pub training_steps: usize,
        pub warmup_proportion: f64,
        pub weight_decay: f64,
        pub max_seq_len: usize,
        pub gradient_clipping: f64,
        pub mlp_hidden: usize,
    }

    pub const ALBERT: Pretraining = Pretraining {
        batch_size: 4096,
        peak_learning_rate: 5e-5,
        training_steps: 100,
        warmup_proportion: 0.2,
        weight_decay: 0.01,
        max_seq_len: 256,
        gradient_clipping: 5.0,
        mlp_hidden: 8192,
    };

    pub const ROBERTA: Pretraining = Pretraining {
        batch_size: 4096,
        peak_learning_rate: 1e-4,
        training_steps: 500,
        warmup_proportion: 0.1,
        weight_decay: 0.01,
        max_seq_len: 320,
        gradient_clipping: 5.0,
        mlp_hidden: 2048,
    };
}
