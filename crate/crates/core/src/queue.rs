//! Pending requests ranked by classifier uncertainty.
//!
//! Each entry caches the normalized entropy of the learner's prediction
//! together with the learner version it was computed at. New entries start
//! at entropy 1 (the upper bound) with no version, so before any learning
//! has happened every entry ties and pops come out in arrival order.

use std::collections::HashSet;

use crate::classifier::{normalized_entropy, Learner};
use crate::domain::{RerankPolicy, TranslationRequest};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const AUTO_FULL_LIMIT: usize = 1024;
const AUTO_SUBSET: usize = 64;

#[derive(Debug, Clone)]
pub struct QueueEntry<T> {
    pub request: TranslationRequest<T>,
    pub cached_entropy: f64,
    pub model_version: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RankedQueue<T> {
    entries: Vec<QueueEntry<T>>,
    ids: HashSet<String>,
    policy: RerankPolicy,
    recomputations: u64,
}

impl<T: Scalar> RankedQueue<T> {
    pub fn new(policy: RerankPolicy) -> Self {
        Self {
            entries: Vec::new(),
            ids: HashSet::new(),
            policy,
            recomputations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn policy(&self) -> RerankPolicy {
        self.policy
    }

    pub fn entries(&self) -> &[QueueEntry<T>] {
        &self.entries
    }

    /// Total entropy evaluations performed so far.
    pub fn recomputations(&self) -> u64 {
        self.recomputations
    }

    /// Policy in force for the current queue length (`Auto` resolved).
    pub fn effective_policy(&self) -> RerankPolicy {
        match self.policy {
            RerankPolicy::Auto if self.entries.len() <= AUTO_FULL_LIMIT => RerankPolicy::Full,
            RerankPolicy::Auto => RerankPolicy::Subset(AUTO_SUBSET),
            p => p,
        }
    }

    pub fn push(&mut self, request: TranslationRequest<T>) -> Result<()> {
        if !self.ids.insert(request.id.clone()) {
            return Err(Error::DuplicateId(request.id));
        }
        self.entries.push(QueueEntry {
            request,
            cached_entropy: 1.0,
            model_version: None,
        });
        Ok(())
    }

    fn refresh<L: Learner<T>>(&mut self, idx: usize, model: &L) -> Result<()> {
        let e = &mut self.entries[idx];
        let p = model.predict_proba(&e.request.features)?;
        e.cached_entropy = normalized_entropy(&p).as_f64();
        e.model_version = Some(model.version());
        self.recomputations += 1;
        Ok(())
    }

    /// Refreshes cached entropies according to the policy.
    pub fn rerank<L: Learner<T>>(&mut self, model: &L) -> Result<()> {
        let version = Some(model.version());
        match self.effective_policy() {
            RerankPolicy::Full => {
                for i in 0..self.entries.len() {
                    if self.entries[i].model_version != version {
                        self.refresh(i, model)?;
                    }
                }
            }
            RerankPolicy::Subset(n) => {
                let mut order: Vec<usize> = (0..self.entries.len()).collect();
                // None sorts before Some, so never-scored entries are stalest.
                order.sort_by_key(|&i| {
                    let e = &self.entries[i];
                    (e.model_version, e.request.arrival_index)
                });
                for &i in order.iter().take(n) {
                    self.refresh(i, model)?;
                }
            }
            RerankPolicy::Lazy | RerankPolicy::Auto => {}
        }
        Ok(())
    }

    fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.entries.iter().enumerate() {
            best = match best {
                None => Some(i),
                Some(b) => {
                    let cur = &self.entries[b];
                    let better = e.cached_entropy > cur.cached_entropy
                        || (e.cached_entropy == cur.cached_entropy
                            && e.request.arrival_index < cur.request.arrival_index);
                    Some(if better { i } else { b })
                }
            };
        }
        best
    }

    fn take(&mut self, idx: usize) -> QueueEntry<T> {
        let e = self.entries.swap_remove(idx);
        self.ids.remove(&e.request.id);
        e
    }

    /// Removes the entry with the highest cached entropy; ties go to the
    /// earliest arrival.
    pub fn pop_max_entropy(&mut self) -> Result<QueueEntry<T>> {
        let idx = self.best_index().ok_or(Error::EmptyQueue)?;
        Ok(self.take(idx))
    }

    /// Like [`pop_max_entropy`](Self::pop_max_entropy), but under the lazy
    /// policy keeps refreshing the leading candidate until its cached
    /// entropy is current for `model`.
    pub fn pop_with<L: Learner<T>>(&mut self, model: &L) -> Result<QueueEntry<T>> {
        if self.effective_policy() != RerankPolicy::Lazy {
            return self.pop_max_entropy();
        }
        let version = Some(model.version());
        loop {
            let idx = self.best_index().ok_or(Error::EmptyQueue)?;
            if self.entries[idx].model_version == version {
                return Ok(self.take(idx));
            }
            self.refresh(idx, model)?;
        }
    }
}
