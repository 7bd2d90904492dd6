//! Lemma-aware matching of concepts inside sentences.
//!
//! Sentences are split on whitespace, stripped of leading/trailing ASCII
//! punctuation and lowercased. Each token is lemmatized by an irregular-form
//! table followed by ordered suffix rules; a concept matches a token when both
//! lemmatize to the same string. Only whole tokens match.

use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

const DEFAULT_IRREGULAR: &str = include_str!("../data/irregular.tsv");

/// Upper bound on rule applications; every rule shortens the token, so this
/// is never reached for real input.
const MAX_PASSES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum RulesError {
    #[error("irregular table line {line}: expected \"form<TAB>lemma\"")]
    BadLine { line: usize },
}

/// One ordered suffix rule.
///
/// A rule whose replacement equals its suffix blocks later rules for words
/// carrying that ending ("glass" must not lose its final "s").
#[derive(Debug, Clone, PartialEq)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    /// Minimum length of the result.
    pub min_len: usize,
    /// Verbal endings ("-ing", "-ed") get consonant undoubling and silent-e restoration.
    pub verbal: bool,
}

impl SuffixRule {
    fn plain(suffix: &str, replacement: &str, min_len: usize) -> Self {
        SuffixRule {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_len,
            verbal: false,
        }
    }

    fn verbal(suffix: &str) -> Self {
        SuffixRule {
            suffix: suffix.into(),
            replacement: String::new(),
            min_len: 2,
            verbal: true,
        }
    }

    fn is_block(&self) -> bool {
        self.suffix == self.replacement
    }
}

#[derive(Debug, Clone)]
pub struct LemmaRules {
    irregular: HashMap<String, String>,
    suffix_rules: Vec<SuffixRule>,
}

impl LemmaRules {
    /// Bundled English table and rules.
    pub fn english() -> Self {
        Self::from_tsv(DEFAULT_IRREGULAR).expect("bundled irregular table is well-formed")
    }

    /// Builds rules from an irregular-form TSV ("form<TAB>lemma", '#' comments)
    /// and the default suffix rules.
    pub fn from_tsv(tsv: &str) -> Result<Self, RulesError> {
        let mut irregular = HashMap::new();
        for (i, line) in tsv.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(form), Some(lemma), None) if !form.is_empty() && !lemma.is_empty() => {
                    irregular.insert(form.trim().to_lowercase(), lemma.trim().to_lowercase());
                }
                _ => return Err(RulesError::BadLine { line: i + 1 }),
            }
        }
        Ok(LemmaRules {
            irregular,
            suffix_rules: default_suffix_rules(),
        })
    }

    pub fn irregular(&self) -> &HashMap<String, String> {
        &self.irregular
    }

    pub fn suffix_rules(&self) -> &[SuffixRule] {
        &self.suffix_rules
    }

    /// Lowercase lemma of `token`. Idempotent.
    pub fn lemmatize(&self, token: &str) -> String {
        let mut word = token.to_lowercase();
        for _ in 0..MAX_PASSES {
            match self.step(&word) {
                Some(next) if next != word => word = next,
                _ => break,
            }
        }
        word
    }

    fn step(&self, word: &str) -> Option<String> {
        if let Some(lemma) = self.irregular.get(word) {
            return Some(lemma.clone());
        }
        for rule in &self.suffix_rules {
            let Some(stem) = word.strip_suffix(rule.suffix.as_str()) else {
                continue;
            };
            if rule.is_block() {
                return None;
            }
            if !has_vowel(stem) {
                continue;
            }
            let candidate = if rule.verbal {
                restore_verb_stem(stem)
            } else {
                format!("{stem}{}", rule.replacement)
            };
            if candidate.chars().count() < rule.min_len {
                continue;
            }
            return Some(candidate);
        }
        None
    }
}

impl Default for LemmaRules {
    fn default() -> Self {
        Self::english()
    }
}

fn default_suffix_rules() -> Vec<SuffixRule> {
    vec![
        SuffixRule::plain("'s", "", 1),
        SuffixRule::plain("sses", "ss", 3),
        SuffixRule::plain("zzes", "zz", 3),
        SuffixRule::plain("ches", "ch", 3),
        SuffixRule::plain("shes", "sh", 3),
        SuffixRule::plain("xes", "x", 2),
        SuffixRule::plain("ies", "y", 3),
        SuffixRule::plain("ss", "ss", 0),
        SuffixRule::plain("us", "us", 0),
        SuffixRule::plain("is", "is", 0),
        SuffixRule::plain("s", "", 3),
        SuffixRule::plain("ied", "y", 3),
        SuffixRule::plain("eed", "eed", 0),
        SuffixRule::verbal("ed"),
        SuffixRule::verbal("ing"),
    ]
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| is_vowel(c) || c == 'y')
}

fn syllables(s: &str) -> usize {
    let mut groups = 0;
    let mut prev = false;
    for c in s.chars() {
        let v = is_vowel(c) || c == 'y';
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    groups
}

/// Undo consonant doubling ("runn" -> "run") or restore a silent e ("danc" -> "dance").
fn restore_verb_stem(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 4 {
        let (a, b, c, d) = (chars[n - 4], chars[n - 3], chars[n - 2], chars[n - 1]);
        if c == d && !is_vowel(d) && !matches!(d, 'l' | 's' | 'z') && is_vowel(b) && !is_vowel(a) {
            return chars[..n - 1].iter().collect();
        }
    }
    if needs_silent_e(&chars) {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn needs_silent_e(chars: &[char]) -> bool {
    let n = chars.len();
    let last = chars[n - 1];
    let prev = if n >= 2 { Some(chars[n - 2]) } else { None };
    match last {
        'c' | 'v' | 'u' => return true,
        'z' if prev != Some('z') => return true,
        'g' if matches!(prev, Some('d') | Some('r')) => return true,
        'l' if prev.is_some_and(|p| !is_vowel(p) && !matches!(p, 'l' | 'r' | 'w' | 'y')) => return true,
        's' if matches!(prev, Some('r') | Some('n')) => return true,
        _ => {}
    }
    if n == 2 && is_vowel(chars[0]) && !is_vowel(last) {
        // "us" -> "use"
        return !matches!(last, 'w' | 'x' | 'y');
    }
    if n >= 3 && syllables(&chars.iter().collect::<String>()) == 1 {
        let (a, b, c) = (chars[n - 3], chars[n - 2], last);
        return !is_vowel(a) && is_vowel(b) && !is_vowel(c) && !matches!(c, 'w' | 'x' | 'y');
    }
    false
}

fn default_rules() -> &'static LemmaRules {
    static RULES: OnceLock<LemmaRules> = OnceLock::new();
    RULES.get_or_init(LemmaRules::english)
}

/// Lemmatizes with the bundled English rules.
pub fn lemmatize(token: &str) -> String {
    default_rules().lemmatize(token)
}

/// Whitespace tokenization with ASCII punctuation stripped from token edges.
/// Tokens that are pure punctuation are dropped.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// A tokenized sentence with per-token lemmas.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmatizedSentence {
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
}

impl LemmatizedSentence {
    pub fn new(sentence: &str) -> Self {
        Self::with_rules(sentence, default_rules())
    }

    pub fn with_rules(sentence: &str, rules: &LemmaRules) -> Self {
        let tokens = tokenize(sentence);
        let lemmas = tokens.iter().map(|t| rules.lemmatize(t)).collect();
        LemmatizedSentence { tokens, lemmas }
    }

    /// Ascending token indices whose lemma equals the concept's lemma.
    pub fn positions(&self, concept: &str) -> Vec<usize> {
        self.positions_with(concept, default_rules())
    }

    pub fn positions_with(&self, concept: &str, rules: &LemmaRules) -> Vec<usize> {
        let target = rules.lemmatize(concept);
        self.lemmas
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == target)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn first_position(&self, concept: &str) -> Option<usize> {
        let target = lemmatize(concept);
        self.lemmas.iter().position(|l| *l == target)
    }
}

/// All token indices of `sentence` where the concept occurs, ascending.
pub fn find_concept_positions(sentence: &str, concept: &str) -> Vec<usize> {
    LemmatizedSentence::new(sentence).positions(concept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemmatize_examples() {
        assert_eq!(lemmatize("dancing"), "dance");
        assert_eq!(lemmatize("dance"), "dance");
        assert_eq!(lemmatize("caught"), "catch");
    }

    #[test]
    fn caption_morphology() {
        let cases = [
            ("watches", "watch"),
            ("watched", "watch"),
            ("watching", "watch"),
            ("dances", "dance"),
            ("danced", "dance"),
            ("running", "run"),
            ("stopped", "stop"),
            ("riding", "ride"),
            ("skating", "skate"),
            ("throwing", "throw"),
            ("throws", "throw"),
            ("threw", "throw"),
            ("babies", "baby"),
            ("carried", "carry"),
            ("glasses", "glass"),
            ("glass", "glass"),
            ("boxes", "box"),
            ("horses", "horse"),
            ("juggling", "juggle"),
            ("sitting", "sit"),
            ("playing", "play"),
            ("eating", "eat"),
            ("singing", "sing"),
            ("sing", "sing"),
            ("bus", "bus"),
            ("buses", "bus"),
            ("feed", "feed"),
            ("needed", "need"),
            ("used", "use"),
            ("falling", "fall"),
            ("serving", "serve"),
            ("closing", "close"),
            ("dog's", "dog"),
            ("children", "child"),
            ("frisbees", "frisbee"),
            ("catches", "catch"),
        ];
        for (form, lemma) in cases {
            assert_eq!(lemmatize(form), lemma, "{form}");
        }
    }

    #[test]
    fn irregular_table_matches_hand_list() {
        // Independent list of English irregular verb forms.
        let hand = [
            ("caught", "catch"),
            ("threw", "throw"),
            ("thrown", "throw"),
            ("ran", "run"),
            ("ate", "eat"),
            ("eaten", "eat"),
            ("went", "go"),
            ("gone", "go"),
            ("took", "take"),
            ("taken", "take"),
            ("rode", "ride"),
            ("ridden", "ride"),
            ("sat", "sit"),
            ("stood", "stand"),
            ("swam", "swim"),
            ("wrote", "write"),
            ("drove", "drive"),
            ("flew", "fly"),
            ("brought", "bring"),
            ("bought", "buy"),
            ("taught", "teach"),
            ("held", "hold"),
            ("slept", "sleep"),
            ("built", "build"),
            ("sang", "sing"),
        ];
        let rules = LemmaRules::english();
        for (form, lemma) in hand {
            assert_eq!(rules.irregular().get(form).map(String::as_str), Some(lemma), "{form}");
        }
    }

    #[test]
    fn table_lemmas_are_fixed_points() {
        let rules = LemmaRules::english();
        for (form, lemma) in rules.irregular() {
            assert_eq!(rules.lemmatize(lemma), *lemma, "lemma of {form} is not stable");
        }
    }

    #[test]
    fn bad_tsv_line() {
        assert_eq!(
            LemmaRules::from_tsv("# ok\nran\trun\nbroken").unwrap_err(),
            RulesError::BadLine { line: 3 }
        );
    }

    #[test]
    fn positions_examples() {
        assert_eq!(
            find_concept_positions("A crowd of people watch and dance to the music.", "music"),
            vec![9]
        );
        assert!(find_concept_positions("", "music").is_empty());
        assert_eq!(find_concept_positions("glass of tea in a glass", "glass"), vec![0, 5]);
    }

    #[test]
    fn whole_token_only() {
        assert!(find_concept_positions("they start the art class", "art") == vec![3]);
        assert!(find_concept_positions("they start now", "art").is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lemmatize_is_idempotent(word in "[a-z]{1,12}(ing|ed|es|s|ies)?") {
                let once = lemmatize(&word);
                prop_assert_eq!(lemmatize(&once), once);
            }

            #[test]
            fn verbatim_concept_is_found(
                words in prop::collection::vec("[a-z]{1,8}", 0..8),
                concept in "[a-z]{1,8}",
                at in 0usize..8,
            ) {
                let mut words = words;
                let at = at.min(words.len());
                words.insert(at, concept.clone());
                let sentence = words.join(" ");
                let pos = find_concept_positions(&sentence, &concept);
                prop_assert!(pos.contains(&at));
                prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(pos.iter().all(|&i| i < words.len()));
                prop_assert_eq!(pos, find_concept_positions(&sentence, &concept));
            }
        }
    }
}
