//! TF-IDF vectorization over the same surface tokens the encoder pipeline
//! uses, capped at a fixed feature budget.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineError;
use crate::tokenizer::surface_tokenize;

/// Fitted vectorizer state. Parallel arrays indexed by feature position:
/// `terms[i]` scored `idf[i]`, seen in `df[i]` of the `n_docs` documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    pub terms: Vec<String>,
    pub df: Vec<u64>,
    pub idf: Vec<f64>,
    pub n_docs: u64,
}

impl TfidfVocabulary {
    pub fn n_features(&self) -> usize {
        self.terms.len()
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.terms.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect()
    }
}

/// Selects the `max_features` terms with the highest total corpus count
/// (ties lexicographic) and computes smoothed idf weights,
/// ln((1+N)/(1+df)) + 1, which never divide by zero and keep every selected
/// term's weight positive.
pub fn fit_tfidf<S: AsRef<str>>(
    corpus: &[S],
    max_features: usize,
) -> Result<TfidfVocabulary, BaselineError> {
    if corpus.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let mut total: HashMap<String, u64> = HashMap::new();
    let mut df: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        let tokens = surface_tokenize(text.as_ref());
        for token in &tokens {
            *total.entry(token.clone()).or_insert(0) += 1;
        }
        let mut seen: Vec<&String> = tokens.iter().collect();
        seen.sort();
        seen.dedup();
        for token in seen {
            *df.entry(token.clone()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = total.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_features);

    let n_docs = corpus.len() as u64;
    let mut terms = Vec::with_capacity(ranked.len());
    let mut dfs = Vec::with_capacity(ranked.len());
    let mut idfs = Vec::with_capacity(ranked.len());
    for (term, _) in ranked {
        let term_df = df[&term];
        terms.push(term);
        dfs.push(term_df);
        idfs.push(((1 + n_docs) as f64 / (1 + term_df) as f64).ln() + 1.0);
    }
    Ok(TfidfVocabulary { terms, df: dfs, idf: idfs, n_docs })
}

fn transform_with_index(
    vocab: &TfidfVocabulary,
    index: &HashMap<&str, usize>,
    text: &str,
) -> Vec<f64> {
    let mut vector = vec![0.0; vocab.terms.len()];
    for token in surface_tokenize(text) {
        if let Some(&i) = index.get(token.as_str()) {
            vector[i] += 1.0;
        }
    }
    for (i, v) in vector.iter_mut().enumerate() {
        *v *= vocab.idf[i];
    }
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut vector {
            *v /= norm;
        }
    }
    vector
}

/// Term counts times idf, then L2-normalized; a text with no vocabulary
/// terms stays the zero vector.
pub fn tfidf_transform(vocab: &TfidfVocabulary, text: &str) -> Vec<f64> {
    transform_with_index(vocab, &vocab.index(), text)
}

/// Vectorizes a whole corpus with one index build.
pub fn tfidf_transform_all<S: AsRef<str>>(vocab: &TfidfVocabulary, texts: &[S]) -> Vec<Vec<f64>> {
    let index = vocab.index();
    texts.iter().map(|t| transform_with_index(vocab, &index, t.as_ref())).collect()
}
