//! Dependency-parse ingestion and gold concept relations.
//!
//! Input is CoNLL-U-style text: tab-separated rows
//! `index form lemma upos head deprel` (full 10-column CoNLL-U rows are also
//! accepted; columns 7 and 8 then carry head and deprel), one blank-line
//! separated block per reference sentence. A `# instance_id = <id>` comment
//! assigns the block to a corpus instance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ConceptSet;
use crate::textmatch::lemmatize;

/// Relations seen in fewer references than this are dropped.
pub const MIN_SUPPORT: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepToken {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// 0-based index of the head token; `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DepTree {
    pub instance_id: Option<String>,
    pub tokens: Vec<DepToken>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldRelation {
    pub head: String,
    pub dependent: String,
    /// POS/relation path in sentence order, e.g. `v-dobj-n`.
    pub label: String,
    pub support: usize,
}

fn row_error(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Row { line, msg: msg.into() }
}

/// Parses CoNLL-U-style blocks.
pub fn parse_conllu(text: &str) -> Result<Vec<DepTree>, ParseError> {
    let mut trees = Vec::new();
    let mut current = DepTree::default();
    let mut pending_id: Option<String> = None;
    let mut heads: Vec<(usize, usize)> = Vec::new();

    let finish =
        |tree: &mut DepTree, heads: &mut Vec<(usize, usize)>, trees: &mut Vec<DepTree>| -> Result<(), ParseError> {
            if tree.tokens.is_empty() {
                return Ok(());
            }
            for &(line, h) in heads.iter() {
                if h > tree.tokens.len() {
                    return Err(row_error(line, format!("head {h} outside sentence")));
                }
            }
            heads.clear();
            trees.push(std::mem::take(tree));
            Ok(())
        };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut heads, &mut trees)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "instance_id" {
                    finish(&mut current, &mut heads, &mut trees)?;
                    pending_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (idx, form, lemma, upos, head, deprel) = match cols.len() {
            6 => (cols[0], cols[1], cols[2], cols[3], cols[4], cols[5]),
            10 => (cols[0], cols[1], cols[2], cols[3], cols[6], cols[7]),
            n => return Err(row_error(line_no, format!("expected 6 or 10 columns, found {n}"))),
        };
        // multiword ranges and empty nodes carry no tree edges
        if idx.contains('-') || idx.contains('.') {
            continue;
        }
        let idx: usize = idx
            .parse()
            .map_err(|_| row_error(line_no, format!("bad index {idx:?}")))?;
        if idx != current.tokens.len() + 1 {
            return Err(row_error(line_no, format!("index {idx} out of sequence")));
        }
        let head: usize = head
            .parse()
            .map_err(|_| row_error(line_no, format!("bad head {head:?}")))?;
        if head == idx {
            return Err(row_error(line_no, "token is its own head"));
        }
        if current.tokens.is_empty() {
            current.instance_id = pending_id.clone();
        }
        heads.push((line_no, head));
        current.tokens.push(DepToken {
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos: upos.to_string(),
            head: head.checked_sub(1),
            deprel: deprel.to_string(),
        });
    }
    finish(&mut current, &mut heads, &mut trees)?;
    Ok(trees)
}

/// Coarse POS tag used in relation labels.
fn pos_tag(upos: &str) -> String {
    match upos {
        "VERB" | "AUX" => "v".into(),
        "NOUN" | "PROPN" | "PRON" => "n".into(),
        other => other.to_lowercase(),
    }
}

fn token_lemma(t: &DepToken) -> String {
    if t.lemma.is_empty() || t.lemma == "_" {
        lemmatize(&t.form)
    } else {
        lemmatize(&t.lemma)
    }
}

/// Relation between tokens `a < b` if they are one or two edges apart.
/// Returns (head index, dependent index, label).
fn relation(tree: &DepTree, a: usize, b: usize) -> Option<(usize, usize, String)> {
    let t = &tree.tokens;
    let tag = |i: usize| pos_tag(&t[i].upos);
    let rel = |i: usize| t[i].deprel.as_str();
    let parent = |i: usize| t[i].head;

    if parent(b) == Some(a) {
        return Some((a, b, format!("{}-{}-{}", tag(a), rel(b), tag(b))));
    }
    if parent(a) == Some(b) {
        return Some((b, a, format!("{}-{}-{}", tag(a), rel(a), tag(b))));
    }
    // two hops through a middle token m
    let (pa, pb) = (parent(a), parent(b));
    if let (Some(m), Some(mb)) = (pa, pb) {
        if m == mb {
            // siblings: the left concept is recorded as head
            return Some((a, b, format!("{}-{}-{}-{}-{}", tag(a), rel(a), tag(m), rel(b), tag(b))));
        }
    }
    if let Some(m) = pb {
        if parent(m) == Some(a) {
            return Some((a, b, format!("{}-{}-{}-{}-{}", tag(a), rel(m), tag(m), rel(b), tag(b))));
        }
    }
    if let Some(m) = pa {
        if parent(m) == Some(b) {
            return Some((b, a, format!("{}-{}-{}-{}-{}", tag(a), rel(a), tag(m), rel(m), tag(b))));
        }
    }
    None
}

/// One- and two-hop relations between concept pairs, kept when they occur
/// in at least [`MIN_SUPPORT`] of the given reference parses.
pub fn extract_gold_relations(parses: &[DepTree], concepts: &ConceptSet) -> Vec<GoldRelation> {
    let targets: BTreeMap<String, String> = concepts.iter().map(|c| (lemmatize(c), c.to_string())).collect();
    let mut support: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for tree in parses {
        let hits: Vec<(usize, &String)> = tree
            .tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| targets.get(&token_lemma(t)).map(|c| (i, c)))
            .collect();
        let mut seen = BTreeSet::new();
        for (x, &(a, ca)) in hits.iter().enumerate() {
            for &(b, cb) in &hits[x + 1..] {
                if ca == cb {
                    continue;
                }
                if let Some((h, _, label)) = relation(tree, a, b) {
                    let (head, dep) = if h == a { (ca, cb) } else { (cb, ca) };
                    seen.insert((head.clone(), dep.clone(), label));
                }
            }
        }
        for key in seen {
            *support.entry(key).or_default() += 1;
        }
    }
    support
        .into_iter()
        .filter(|(_, n)| *n >= MIN_SUPPORT)
        .map(|((head, dependent, label), support)| GoldRelation {
            head,
            dependent,
            label,
            support,
        })
        .collect()
}
