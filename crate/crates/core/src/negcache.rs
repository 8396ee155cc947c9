//! Negative key-value cache.
//!
//! Moderately uncertain test features are stored per pseudo-class together
//! with a mask of the classes their prediction rules out. At query time each
//! entry votes against its masked classes with weight
//! `A(z) = α · exp(-β · (1 - z))`, `z` the cosine between query and key:
//!
//! ```text
//! P_neg[c] = - Σ_j A(⟨f, q_j⟩) · mask_j[c]
//! ```

use serde::{Deserialize, Serialize};

use crate::numerics::dot;
use crate::zeroshot::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegCacheConfig {
    /// Entries kept per pseudo-class.
    pub capacity: usize,
    /// Entropy window as fractions of `ln N`.
    pub entropy_lo: f32,
    pub entropy_hi: f32,
    /// A class is marked absent when its probability is below this.
    pub mask_threshold: f32,
    pub alpha: f32,
    pub beta: f32,
}

impl Default for NegCacheConfig {
    fn default() -> Self {
        Self {
            capacity: 3,
            entropy_lo: 0.2,
            entropy_hi: 0.5,
            mask_threshold: 0.03,
            alpha: 0.35,
            beta: 5.5,
        }
    }
}

/// Class-absence mask, `true` where the class is judged absent.
/// Returns `None` when the mask is all-zero or all-one (no information).
pub fn build_neg_mask(probs: &[f32], threshold: f32) -> Option<Vec<bool>> {
    let mask: Vec<bool> = probs.iter().map(|&p| p < threshold).collect();
    let ones = mask.iter().filter(|&&m| m).count();
    (ones > 0 && ones < mask.len()).then_some(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegEntry {
    pub feature: Vec<f32>,
    pub neg_mask: Vec<bool>,
    pub entropy_nats: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub total: usize,
    pub per_bucket: Vec<usize>,
    /// `None` while the cache is empty.
    pub entropy_min: Option<f32>,
    pub entropy_max: Option<f32>,
    pub inserted: u64,
    pub offered: u64,
}

#[derive(Debug, Clone)]
pub struct NegativeCache {
    config: NegCacheConfig,
    n_classes: usize,
    buckets: Vec<Vec<NegEntry>>,
    offered: u64,
    inserted: u64,
}

impl NegativeCache {
    pub fn new(n_classes: usize, config: NegCacheConfig) -> Self {
        Self {
            config,
            n_classes,
            buckets: vec![Vec::new(); n_classes],
            offered: 0,
            inserted: 0,
        }
    }

    pub fn config(&self) -> &NegCacheConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn buckets(&self) -> &[Vec<NegEntry>] {
        &self.buckets
    }

    pub fn entries(&self) -> impl Iterator<Item = &NegEntry> {
        self.buckets.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entropy window `[lo · ln N, hi · ln N]` in nats.
    pub fn entropy_window(&self) -> (f32, f32) {
        let ln_n = (self.n_classes as f32).ln();
        (self.config.entropy_lo * ln_n, self.config.entropy_hi * ln_n)
    }

    /// Offers a test feature with its zero-shot prediction. The entry lands in
    /// the bucket of its pseudo-class if its entropy lies in the window and its
    /// mask is informative; a full bucket only accepts entries with lower
    /// entropy than its current maximum, which is evicted.
    pub fn consider_insert(&mut self, f_test: &[f32], pred: &Prediction) -> bool {
        self.offered += 1;
        let (lo, hi) = self.entropy_window();
        let h = pred.entropy_nats;
        if !(lo..=hi).contains(&h) || pred.pseudo_class >= self.n_classes {
            return false;
        }
        let Some(neg_mask) = build_neg_mask(&pred.probs, self.config.mask_threshold) else {
            return false;
        };
        if self.config.capacity == 0 {
            return false;
        }
        let bucket = &mut self.buckets[pred.pseudo_class];
        if bucket.len() >= self.config.capacity {
            // sorted ascending, so the last entry holds the maximum entropy
            match bucket.last() {
                Some(worst) if h < worst.entropy_nats => {
                    bucket.pop();
                }
                _ => return false,
            }
        }
        let at = bucket.partition_point(|e| e.entropy_nats <= h);
        bucket.insert(
            at,
            NegEntry {
                feature: f_test.to_vec(),
                neg_mask,
                entropy_nats: h,
            },
        );
        self.inserted += 1;
        true
    }

    /// Affinity weight of a key at cosine `z`.
    pub fn affinity(&self, z: f32) -> f32 {
        self.config.alpha * (-self.config.beta * (1.0 - z)).exp()
    }

    /// Subtractive logits; all zeros when the cache is empty.
    pub fn negative_logits(&self, f_test: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; self.n_classes];
        for entry in self.entries() {
            let a = self.affinity(dot(f_test, &entry.feature));
            for (o, &absent) in out.iter_mut().zip(&entry.neg_mask) {
                if absent {
                    *o -= a;
                }
            }
        }
        out
    }

    pub fn stats(&self) -> CacheStats {
        let per_bucket: Vec<usize> = self.buckets.iter().map(Vec::len).collect();
        let entropies = self.entries().map(|e| e.entropy_nats);
        let (min, max) = entropies.fold((None, None), |(lo, hi): (Option<f32>, Option<f32>), h| {
            (
                Some(lo.map_or(h, |v| v.min(h))),
                Some(hi.map_or(h, |v| v.max(h))),
            )
        });
        CacheStats {
            total: per_bucket.iter().sum(),
            per_bucket,
            entropy_min: min,
            entropy_max: max,
            inserted: self.inserted,
            offered: self.offered,
        }
    }
}
