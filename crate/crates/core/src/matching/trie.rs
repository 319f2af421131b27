//! Token-id trie over forbidden sequences with longest-suffix matching.

use std::collections::BTreeMap;

use crate::forbidden::ForbiddenSet;
use crate::model::{TokenId, TokenSequence};

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: bool,
}

#[derive(Debug, Clone)]
pub struct PhraseTrie {
    nodes: Vec<Node>,
    max_depth: usize,
}

/// Result of [`PhraseTrie::longest_matched_suffix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuffixMatch {
    /// Longest `m` such that the last `m` tokens are a prefix of a stored sequence.
    pub length: usize,
    /// Some suffix of the input equals an entire stored sequence.
    pub complete: bool,
}

impl Default for PhraseTrie {
    fn default() -> Self {
        PhraseTrie {
            nodes: vec![Node::default()],
            max_depth: 0,
        }
    }
}

impl PhraseTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(set: &ForbiddenSet) -> Self {
        Self::from_sequences(set.token_forms())
    }

    pub fn from_sequences<S: AsRef<[TokenId]>>(sequences: impl IntoIterator<Item = S>) -> Self {
        let mut trie = Self::default();
        for seq in sequences {
            trie.insert(seq.as_ref());
        }
        trie
    }

    /// Inserts `seq`. Empty sequences are ignored.
    pub fn insert(&mut self, seq: &[TokenId]) {
        if seq.is_empty() {
            return;
        }
        let mut node = 0;
        for &t in seq {
            node = match self.nodes[node].children.get(&t) {
                Some(&next) => next,
                None => {
                    let next = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].children.insert(t, next);
                    next
                }
            };
        }
        self.nodes[node].terminal = true;
        self.max_depth = self.max_depth.max(seq.len());
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn is_empty(&self) -> bool {
        self.max_depth == 0
    }

    fn walk(&self, seq: &[TokenId]) -> Option<usize> {
        seq.iter()
            .try_fold(0, |node, t| self.nodes[node].children.get(t).copied())
    }

    pub fn contains(&self, seq: &[TokenId]) -> bool {
        !seq.is_empty() && self.walk(seq).is_some_and(|n| self.nodes[n].terminal)
    }

    pub fn is_prefix(&self, seq: &[TokenId]) -> bool {
        self.walk(seq).is_some()
    }

    /// Every stored sequence in lexicographic order.
    pub fn sequences(&self) -> Vec<TokenSequence> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if self.nodes[node].terminal {
                out.push(path.clone());
            }
            for (&t, &child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(t);
                stack.push((child, p));
            }
        }
        out
    }

    /// Longest suffix of `seq` that is a prefix of a stored sequence, and
    /// whether any suffix of `seq` is a complete stored sequence.
    pub fn longest_matched_suffix(&self, seq: &[TokenId]) -> SuffixMatch {
        let limit = seq.len().min(self.max_depth);
        let mut length = 0;
        let mut complete = false;
        for m in 1..=limit {
            if let Some(node) = self.walk(&seq[seq.len() - m..]) {
                length = m;
                complete |= self.nodes[node].terminal;
            }
        }
        SuffixMatch { length, complete }
    }
}
