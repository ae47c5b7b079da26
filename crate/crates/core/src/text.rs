//! Bag-of-words features for text corpora, and the reverse direction:
//! turning per-word count shifts into word removals and additions.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Feature, FeatureKind, FeatureSchema, RawColumn, RawTable, Role};
use crate::error::{Error, Result};

/// Default vocabulary size.
pub const DEFAULT_CAP: usize = 50;

/// Lowercased alphanumeric runs with their byte spans in `text`.
fn token_spans(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i, text[s..i].to_lowercase()));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len(), text[s..].to_lowercase()));
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|(_, _, t)| t).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Most frequent first; ties in lexicographic order.
    pub words: Vec<String>,
    /// Corpus occurrence count of each word.
    pub counts: Vec<usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }
}

/// The `cap` most frequent words over both corpora.
pub fn build_vocab(source: &[String], target: &[String], cap: usize) -> Result<Vocabulary> {
    if source.is_empty() && target.is_empty() {
        return Err(Error::Config("empty corpus".into()));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for doc in source.iter().chain(target) {
        for t in tokenize(doc) {
            *freq.entry(t).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Config("corpus contains no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    // stable sort keeps the lexicographic order of the map among ties
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    ranked.truncate(cap);
    let (words, counts) = ranked.into_iter().unzip();
    Ok(Vocabulary { words, counts })
}

/// Word counts per document, columns in vocabulary order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowDataset {
    pub counts: Array2<u32>,
    pub ids: Vec<usize>,
}

pub fn featurize(texts: &[String], vocab: &Vocabulary) -> BowDataset {
    let index: BTreeMap<&str, usize> = vocab.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut counts = Array2::zeros((texts.len(), vocab.len()));
    for (r, doc) in texts.iter().enumerate() {
        for t in tokenize(doc) {
            if let Some(&j) = index.get(t.as_str()) {
                counts[[r, j]] += 1;
            }
        }
    }
    BowDataset {
        counts,
        ids: (0..texts.len()).collect(),
    }
}

/// Schema with one integer feature per vocabulary word.
pub fn bow_schema(vocab: &Vocabulary) -> Result<FeatureSchema> {
    FeatureSchema::new(vocab.words.iter().map(|w| Feature::new(w.clone(), FeatureKind::Integer)).collect())
}

/// Raw table of counts, ready for preprocessing.
pub fn bow_table(bow: &BowDataset, vocab: &Vocabulary, role: Role) -> Result<RawTable> {
    Ok(RawTable {
        schema: bow_schema(vocab)?,
        role,
        columns: bow
            .counts
            .columns()
            .into_iter()
            .map(|c| RawColumn::Numeric(c.iter().map(|&v| v as f64).collect()))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEdit {
    pub word: String,
    /// Rounded shift.
    pub requested: i64,
    /// What was actually done; removals stop when the word runs out.
    pub applied: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseEdit {
    pub text: String,
    pub edits: Vec<WordEdit>,
}

impl ReverseEdit {
    /// Additions then removals, each by size: "+2 spiky, −2 horns".
    pub fn edit_list(&self) -> String {
        let mut applied: Vec<&WordEdit> = self.edits.iter().filter(|e| e.applied != 0).collect();
        applied.sort_by_key(|e| (e.applied < 0, std::cmp::Reverse(e.applied.abs())));
        applied
            .iter()
            .map(|e| {
                let sign = if e.applied > 0 { '+' } else { '\u{2212}' };
                format!("{sign}{} {}", e.applied.abs(), e.word)
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Apply rounded per-word shifts to one document: negative shifts remove
/// occurrences left to right (with one adjacent space), positive shifts
/// prepend the word.
pub fn reverse_featurize(text: &str, delta: &[f64], vocab: &Vocabulary) -> Result<ReverseEdit> {
    if delta.len() != vocab.len() {
        return Err(Error::Dimension(format!(
            "{} shifts for a vocabulary of {} words",
            delta.len(),
            vocab.len()
        )));
    }
    let rounded: Vec<i64> = delta.iter().map(|d| d.round() as i64).collect();
    let mut budget: BTreeMap<&str, i64> = vocab
        .words
        .iter()
        .zip(&rounded)
        .filter(|(_, k)| **k < 0)
        .map(|(w, k)| (w.as_str(), -k))
        .collect();
    let mut removed: BTreeMap<&str, i64> = BTreeMap::new();
    let mut cut: Vec<(usize, usize)> = Vec::new();
    for (s, e, tok) in token_spans(text) {
        if let Some((word, left)) = budget.get_key_value(tok.as_str()).map(|(w, l)| (*w, *l)) {
            if left > 0 {
                budget.insert(word, left - 1);
                *removed.entry(word).or_default() += 1;
                cut.push((s, e));
            }
        }
    }
    let mut body = String::with_capacity(text.len());
    let mut pos = 0;
    for (s, e) in cut {
        let mut s = s.max(pos);
        let mut e = e;
        let after_ws = text[e..].chars().next().filter(|c| c.is_whitespace());
        if let Some(c) = after_ws {
            e += c.len_utf8();
        } else if let Some(c) = text[pos..s].chars().next_back().filter(|c| c.is_whitespace()) {
            s -= c.len_utf8();
        } else if s == pos && body.ends_with(char::is_whitespace) {
            // the preceding space went with an earlier removal
            body.pop();
        }
        body.push_str(&text[pos..s]);
        pos = e;
    }
    body.push_str(&text[pos..]);

    let mut prefix: Vec<&str> = Vec::new();
    for (w, &k) in vocab.words.iter().zip(&rounded) {
        for _ in 0..k.max(0) {
            prefix.push(w);
        }
    }
    let text = match (prefix.is_empty(), body.is_empty()) {
        (true, _) => body,
        (false, true) => prefix.join(" "),
        (false, false) => format!("{} {}", prefix.join(" "), body),
    };
    let edits = vocab
        .words
        .iter()
        .zip(&rounded)
        .filter(|(_, k)| **k != 0)
        .map(|(w, &k)| WordEdit {
            word: w.clone(),
            requested: k,
            applied: if k > 0 { k } else { -removed.get(w.as_str()).copied().unwrap_or(0) },
        })
        .collect();
    Ok(ReverseEdit { text, edits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<String> {
        texts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vocabulary_order() {
        let v = build_vocab(&docs(&["a b b"]), &[], 2).unwrap();
        assert_eq!(v.words, vec!["b", "a"]);
        let v = build_vocab(&docs(&["z y z y x"]), &[], 10).unwrap();
        assert_eq!(v.words, vec!["y", "z", "x"]);
        assert!(build_vocab(&[], &[], 5).is_err());
    }

    #[test]
    fn counts_and_oov() {
        let v = build_vocab(&docs(&["b a b"]), &[], 2).unwrap();
        let f = featurize(&docs(&["b a b", "", "zzz qq"]), &v);
        assert_eq!(f.counts.row(0).to_vec(), vec![2, 1]);
        assert_eq!(f.counts.row(1).to_vec(), vec![0, 0]);
        assert_eq!(f.counts.row(2).to_vec(), vec![0, 0]);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("The HORNS, are-long!"), vec!["the", "horns", "are", "long"]);
    }

    #[test]
    fn removal_and_addition() {
        let v = Vocabulary {
            words: vec!["horns".into(), "spiky".into()],
            counts: vec![1, 1],
        };
        let r = reverse_featurize("the horns are long", &[-1.0, 0.0], &v).unwrap();
        assert_eq!(r.text, "the are long");
        assert_eq!(r.edit_list(), "\u{2212}1 horns");
        let r = reverse_featurize("a cat", &[0.0, 2.2], &v).unwrap();
        assert_eq!(r.text, "spiky spiky a cat");
        assert_eq!(r.edit_list(), "+2 spiky");
        let r = reverse_featurize("a cat", &[0.0, 0.0], &v).unwrap();
        assert_eq!(r.text, "a cat");
        assert!(r.edits.is_empty());
    }

    #[test]
    fn removing_absent_word_is_recorded_noop() {
        let v = Vocabulary {
            words: vec!["horns".into()],
            counts: vec![1],
        };
        let r = reverse_featurize("no such word", &[-2.0], &v).unwrap();
        assert_eq!(r.text, "no such word");
        assert_eq!(r.edits[0].requested, -2);
        assert_eq!(r.edits[0].applied, 0);
        assert_eq!(r.edit_list(), "");
    }

    #[test]
    fn trailing_token_takes_preceding_space() {
        let v = Vocabulary {
            words: vec!["long".into()],
            counts: vec![1],
        };
        assert_eq!(reverse_featurize("horns are long", &[-1.0], &v).unwrap().text, "horns are");
    }
}
