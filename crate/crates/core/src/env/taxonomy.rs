//! Synthetic action taxonomies: labels, ranked sub-motion definitions and the
//! base/novel split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::rng::{self, Purpose};

const BODY_PARTS: [&str; 12] = [
    "head",
    "neck",
    "torso",
    "hips",
    "left arm",
    "right arm",
    "left hand",
    "right hand",
    "left leg",
    "right leg",
    "left foot",
    "right foot",
];

const MOVEMENTS: [&str; 16] = [
    "raise",
    "lower",
    "extend",
    "flex",
    "rotate",
    "swing forward",
    "swing back",
    "twist",
    "bend",
    "straighten",
    "grip",
    "release",
    "push",
    "pull",
    "strike",
    "tap",
];

const VERBS: [&str; 24] = [
    "swing", "kick", "throw", "catch", "lift", "push", "pull", "climb", "jump", "roll", "spin",
    "shoot", "dribble", "stretch", "crawl", "wave", "punch", "dive", "carry", "drag", "toss",
    "hug", "slide", "balance",
];

const OBJECTS: [&str; 12] = [
    "ball", "bat", "rope", "box", "hoop", "ladder", "mat", "ring", "disc", "bar", "chair", "pole",
];

/// Index into [`Taxonomy::vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

/// Index into [`Taxonomy::classes`].
pub type ClassId = usize;

/// One sub-motion primitive: a body part and what it does.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubMotion {
    pub body_part: String,
    pub movement: String,
}

impl SubMotion {
    pub fn new(body_part: &str, movement: &str) -> Self {
        Self {
            body_part: body_part.to_string(),
            movement: movement.to_string(),
        }
    }

    /// Parses the `"body part: movement"` form used in files and traces.
    pub fn parse(s: &str) -> Option<Self> {
        let (b, m) = s.split_once(':')?;
        let (b, m) = (b.trim(), m.trim());
        if b.is_empty() || m.is_empty() {
            return None;
        }
        Some(Self::new(b, m))
    }
}

impl fmt::Display for SubMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.body_part, self.movement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Novel,
}

/// An action label with its sub-motions in relevance order (rank = index + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionClass {
    pub label: String,
    pub definition: String,
    pub submotions: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyParams {
    pub seed: u64,
    pub num_classes: usize,
    pub submotions_per_class: usize,
    pub overlap: f64,
    pub base_fraction: f64,
}

impl Default for TaxonomyParams {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 18,
            submotions_per_class: 4,
            overlap: 0.5,
            base_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    classes: Vec<ActionClass>,
    splits: Vec<Split>,
    vocabulary: Vec<SubMotion>,
    overlap: f64,
    token_lookup: HashMap<SubMotion, TokenId>,
    label_lookup: HashMap<String, ClassId>,
    /// `membership[token]` = classes whose definition contains the token.
    membership: Vec<Vec<ClassId>>,
}

/// The shared sub-motion vocabulary: every body part crossed with every movement.
pub fn default_vocabulary() -> Vec<SubMotion> {
    BODY_PARTS
        .iter()
        .flat_map(|b| MOVEMENTS.iter().map(move |m| SubMotion::new(b, m)))
        .collect()
}

fn shared_count(overlap: f64, n: usize) -> usize {
    let x = overlap * n as f64 - 1e-9;
    if x <= 0.0 {
        0
    } else {
        x.ceil() as usize
    }
}

fn definition_text(label: &str, tokens: &[TokenId], vocab: &[SubMotion]) -> String {
    let steps: Vec<String> = tokens
        .iter()
        .map(|t| {
            let s = &vocab[t.0 as usize];
            format!("{} {}", s.body_part, s.movement)
        })
        .collect();
    format!("{label}: {}", steps.join(", then "))
}

pub fn generate_taxonomy(p: &TaxonomyParams) -> Result<Taxonomy, EnvError> {
    let n = p.submotions_per_class;
    let c = p.num_classes;
    if c < 4 {
        return Err(EnvError::InvalidParams(format!("num_classes {c} < 4")));
    }
    if n < 2 {
        return Err(EnvError::InvalidParams(format!("submotions_per_class {n} < 2")));
    }
    if !(0.0..1.0).contains(&p.overlap) {
        return Err(EnvError::InvalidParams(format!("overlap {} not in [0, 1)", p.overlap)));
    }
    if !(p.base_fraction > 0.0 && p.base_fraction < 1.0) {
        return Err(EnvError::InvalidParams(format!(
            "base_fraction {} not in (0, 1)",
            p.base_fraction
        )));
    }
    let k = shared_count(p.overlap, n);
    if 2 * k > n {
        return Err(EnvError::InvalidParams(format!(
            "overlap {} shares {k} of {n} sub-motions with each neighbour; at most {} fit",
            p.overlap,
            n / 2
        )));
    }

    let vocabulary = default_vocabulary();
    let needed = (c - 1) * k + 2 * (n - k) + (c - 2) * (n - 2 * k);
    if needed > vocabulary.len() {
        return Err(EnvError::InvalidParams(format!(
            "taxonomy needs {needed} distinct sub-motions, vocabulary has {}",
            vocabulary.len()
        )));
    }
    let labels_available = VERBS.len() * OBJECTS.len();
    if c > labels_available {
        return Err(EnvError::InvalidParams(format!(
            "num_classes {c} exceeds {labels_available} available labels"
        )));
    }

    let mut rng = rng::stream(p.seed, Purpose::Taxonomy, &[]);
    let mut pool: Vec<TokenId> = (0..vocabulary.len() as u32).map(TokenId).collect();
    pool.shuffle(&mut rng);
    let mut pool = pool.into_iter();
    let mut take = |m: usize| -> Vec<TokenId> { pool.by_ref().take(m).collect() };

    let shared: Vec<Vec<TokenId>> = (0..c - 1).map(|_| take(k)).collect();
    let mut label_pool: Vec<String> = VERBS
        .iter()
        .flat_map(|v| OBJECTS.iter().map(move |o| format!("{v} {o}")))
        .collect();
    label_pool.shuffle(&mut rng);

    let mut classes = Vec::with_capacity(c);
    for i in 0..c {
        let neighbours = usize::from(i > 0) + usize::from(i + 1 < c);
        let mut tokens = take(n - neighbours * k);
        if i > 0 {
            tokens.extend_from_slice(&shared[i - 1]);
        }
        if i + 1 < c {
            tokens.extend_from_slice(&shared[i]);
        }
        tokens.shuffle(&mut rng);
        let label = label_pool[i].clone();
        classes.push(ActionClass {
            definition: definition_text(&label, &tokens, &vocabulary),
            label,
            submotions: tokens,
        });
    }

    let base_count = ((c as f64 * p.base_fraction).round() as usize).clamp(1, c - 1);
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Base; c];
    for &i in &order[base_count..] {
        splits[i] = Split::Novel;
    }

    Taxonomy::new(classes, splits, vocabulary, p.overlap)
}

#[derive(Serialize, Deserialize)]
struct ClassRecord {
    label: String,
    definition: String,
    submotions: Vec<String>,
    split: Split,
}

impl Taxonomy {
    pub fn new(
        classes: Vec<ActionClass>,
        splits: Vec<Split>,
        vocabulary: Vec<SubMotion>,
        overlap: f64,
    ) -> Result<Self, EnvError> {
        if classes.len() != splits.len() {
            return Err(EnvError::InvalidParams("split list length mismatch".into()));
        }
        let mut token_lookup = HashMap::with_capacity(vocabulary.len());
        for (i, s) in vocabulary.iter().enumerate() {
            if token_lookup.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(EnvError::InvalidParams(format!("duplicate vocabulary entry {s}")));
            }
        }
        let mut label_lookup = HashMap::with_capacity(classes.len());
        let mut membership = vec![Vec::new(); vocabulary.len()];
        for (ci, class) in classes.iter().enumerate() {
            if class.submotions.len() < 2 {
                return Err(EnvError::InvalidParams(format!(
                    "class {:?} has fewer than 2 sub-motions",
                    class.label
                )));
            }
            if label_lookup.insert(class.label.clone(), ci).is_some() {
                return Err(EnvError::InvalidParams(format!("duplicate label {:?}", class.label)));
            }
            let mut seen = HashSet::new();
            for t in &class.submotions {
                let slot = membership
                    .get_mut(t.0 as usize)
                    .ok_or_else(|| EnvError::InvalidParams(format!("token {} out of range", t.0)))?;
                if !seen.insert(*t) {
                    return Err(EnvError::InvalidParams(format!(
                        "class {:?} repeats a sub-motion",
                        class.label
                    )));
                }
                slot.push(ci);
            }
        }
        Ok(Self {
            classes,
            splits,
            vocabulary,
            overlap,
            token_lookup,
            label_lookup,
            membership,
        })
    }

    pub fn classes(&self) -> &[ActionClass] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> &ActionClass {
        &self.classes[id]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn split_of(&self, id: ClassId) -> Split {
        self.splits[id]
    }

    pub fn split_classes(&self, split: Split) -> Vec<ClassId> {
        (0..self.classes.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn vocabulary(&self) -> &[SubMotion] {
        &self.vocabulary
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn token(&self, id: TokenId) -> &SubMotion {
        &self.vocabulary[id.0 as usize]
    }

    pub fn lookup_token(&self, body_part: &str, movement: &str) -> Option<TokenId> {
        self.token_lookup.get(&SubMotion::new(body_part, movement)).copied()
    }

    pub fn lookup_label(&self, label: &str) -> Option<ClassId> {
        self.label_lookup.get(label).copied()
    }

    /// Classes whose definition lists `token`.
    pub fn classes_with(&self, token: TokenId) -> &[ClassId] {
        &self.membership[token.0 as usize]
    }

    pub fn class_contains(&self, class: ClassId, token: TokenId) -> bool {
        self.membership[token.0 as usize].contains(&class)
    }

    /// Tokens used by at least one class.
    pub fn used_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, _)| TokenId(i as u32))
    }

    /// Number of sub-motions two classes have in common.
    pub fn shared(&self, a: ClassId, b: ClassId) -> usize {
        self.classes[a]
            .submotions
            .iter()
            .filter(|t| self.class_contains(b, **t))
            .count()
    }

    /// Writes one JSON record per class.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, class) in self.classes.iter().enumerate() {
            let rec = ClassRecord {
                label: class.label.clone(),
                definition: class.definition.clone(),
                submotions: class.submotions.iter().map(|t| self.token(*t).to_string()).collect(),
                split: self.splits[i],
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a taxonomy file. Sub-motions outside the default vocabulary are
    /// appended to it.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, EnvError> {
        let mut vocabulary = default_vocabulary();
        let mut index: HashMap<SubMotion, TokenId> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), TokenId(i as u32)))
            .collect();
        let mut classes = Vec::new();
        let mut splits = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| EnvError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClassRecord = serde_json::from_str(&line)
                .map_err(|e| EnvError::Format(format!("line {}: {e}", lineno + 1)))?;
            let mut tokens = Vec::with_capacity(rec.submotions.len());
            for s in &rec.submotions {
                let sm = SubMotion::parse(s)
                    .ok_or_else(|| EnvError::Format(format!("line {}: bad sub-motion {s:?}", lineno + 1)))?;
                let id = *index.entry(sm.clone()).or_insert_with(|| {
                    vocabulary.push(sm);
                    TokenId(vocabulary.len() as u32 - 1)
                });
                tokens.push(id);
            }
            classes.push(ActionClass {
                label: rec.label,
                definition: rec.definition,
                submotions: tokens,
            });
            splits.push(rec.split);
        }
        let mut tax = Taxonomy::new(classes, splits, vocabulary, 0.0)?;
        tax.overlap = (1..tax.len())
            .map(|i| tax.shared(i - 1, i) as f64 / tax.classes[i].submotions.len() as f64)
            .fold(0.0, f64::max);
        Ok(tax)
    }
}
