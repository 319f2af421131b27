//! Forget-record retrieval: cosine top-1 over precomputed embeddings, with an
//! optional second-stage rerank of the top-k candidates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Prompt, QaPair, Split};
use crate::embedding::{cosine_or_zero, embed_text, Embedder, Embedding};
use crate::{Error, Result};

/// Which side of each record the query is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalKey {
    #[default]
    Answer,
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerIndex {
    key: RetrievalKey,
    records: Vec<QaPair>,
    embeddings: Vec<Embedding>,
}

/// Pairwise relevance scorer for the second stage.
pub trait Reranker: Send + Sync {
    fn score(&self, query: &str, candidate: &str) -> Result<f64>;
}

/// Reranker that scores by cosine similarity under an embedder.
pub struct CosineReranker<'a> {
    pub embedder: &'a dyn Embedder,
}

impl Reranker for CosineReranker<'_> {
    fn score(&self, query: &str, candidate: &str) -> Result<f64> {
        cosine_or_zero(&embed_text(self.embedder, query)?, &embed_text(self.embedder, candidate)?)
    }
}

/// A retrieved record and its position in the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub position: usize,
    pub record: &'a QaPair,
}

impl AnswerIndex {
    /// Indexes the forget-split records of `records`, embedding the keyed side.
    pub fn build(records: &[QaPair], embedder: &dyn Embedder, key: RetrievalKey) -> Result<Self> {
        let records: Vec<QaPair> = records.iter().filter(|r| r.split == Split::Forget).cloned().collect();
        if records.is_empty() {
            return Err(Error::invalid("no forget records to index"));
        }
        let embeddings = records
            .iter()
            .map(|r| embed_text(embedder, keyed_text(r, key)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AnswerIndex { key, records, embeddings })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let index: AnswerIndex = serde_json::from_str(text)?;
        index.validate()?;
        Ok(index)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::invalid("index holds no records"));
        }
        if self.records.len() != self.embeddings.len() {
            return Err(Error::invalid("index records and embeddings differ in length"));
        }
        let dim = self.embeddings[0].dim();
        if self.embeddings.iter().any(|e| e.dim() != dim || !e.is_finite()) {
            return Err(Error::invalid("index embeddings must be finite and share one dimension"));
        }
        for r in &self.records {
            r.validate()?;
            if r.split != Split::Forget {
                return Err(Error::invalid("index may only hold forget records"));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> RetrievalKey {
        self.key
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[QaPair] {
        &self.records
    }

    fn similarities(&self, query: &Prompt, embedder: &dyn Embedder) -> Result<Vec<f64>> {
        let q = embed_text(embedder, &query.text)?;
        self.embeddings.iter().map(|e| cosine_or_zero(&q, e)).collect()
    }

    fn hit(&self, position: usize) -> Hit<'_> {
        Hit {
            position,
            record: &self.records[position],
        }
    }

    /// Most similar record; ties go to the lowest position.
    pub fn retrieve_top1(&self, query: &Prompt, embedder: &dyn Embedder) -> Result<Hit<'_>> {
        let sims = self.similarities(query, embedder)?;
        let mut best = 0;
        for (i, &s) in sims.iter().enumerate().skip(1) {
            if s > sims[best] {
                best = i;
            }
        }
        Ok(self.hit(best))
    }

    /// Top-`k` by cosine, then the reranker's best among them. Ties in either
    /// stage go to the earlier candidate. `k` larger than the index is clamped.
    pub fn retrieve_rerank(
        &self,
        query: &Prompt,
        embedder: &dyn Embedder,
        reranker: &dyn Reranker,
        k: usize,
    ) -> Result<Hit<'_>> {
        if k == 0 {
            return Err(Error::invalid("rerank k must be positive"));
        }
        let k = if k > self.len() {
            log::warn!("rerank k={k} exceeds index size {}, clamping", self.len());
            self.len()
        } else {
            k
        };
        let sims = self.similarities(query, embedder)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        // Stable sort keeps lower positions first among equal similarities.
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        let mut best: Option<(usize, f64)> = None;
        for &pos in &order[..k] {
            let text = keyed_text(&self.records[pos], self.key);
            let score = reranker.score(&query.text, text)?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((pos, score));
            }
        }
        Ok(self.hit(best.expect("k >= 1").0))
    }
}

fn keyed_text(record: &QaPair, key: RetrievalKey) -> &str {
    match key {
        RetrievalKey::Answer => &record.answer,
        RetrievalKey::Question => &record.question,
    }
}
