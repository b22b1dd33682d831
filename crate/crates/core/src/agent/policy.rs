//! Differentiable four-way softmax policy over observation features.

use crate::error::RlError;
use crate::net::{Phase, PHASES};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Linear softmax policy: logits are `weights * features`, one weight row
/// per phase. The action distribution is strictly positive for any finite
/// weights and features.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricPolicy {
    feature_dim: usize,
    segment_count: usize,
    /// Row-major, 4 rows of `feature_dim` entries.
    weights: Vec<f64>,
}

/// Serialized policy weights with layout metadata for exact reload.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    feature_dim: usize,
    segment_count: usize,
    inbox_slots: usize,
    phase_order: Vec<String>,
    weights: Vec<Vec<f64>>,
}

impl ParametricPolicy {
    /// Zero-initialized (uniform) policy for the given segment count.
    pub fn new(segment_count: usize) -> Self {
        let feature_dim = super::features::feature_dim(segment_count);
        ParametricPolicy {
            feature_dim,
            segment_count,
            weights: vec![0.0; 4 * feature_dim],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn logits(&self, features: &[f64]) -> [f64; 4] {
        debug_assert_eq!(features.len(), self.feature_dim);
        let mut out = [0.0; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.feature_dim..(k + 1) * self.feature_dim];
            *slot = row.iter().zip(features).map(|(w, x)| w * x).sum();
        }
        out
    }

    /// Log-softmax over the four phases.
    pub fn log_probs(&self, features: &[f64]) -> [f64; 4] {
        let logits = self.logits(features);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.map(|l| l - log_z)
    }

    pub fn probs(&self, features: &[f64]) -> [f64; 4] {
        self.log_probs(features).map(f64::exp)
    }

    pub fn log_prob(&self, features: &[f64], action: Phase) -> f64 {
        self.log_probs(features)[action.index()]
    }

    /// Greedy action (ties break by phase order).
    pub fn argmax(&self, features: &[f64]) -> Phase {
        let logits = self.logits(features);
        let mut best = 0;
        for k in 1..4 {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        PHASES[best]
    }

    /// Sample an action and return its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> (Phase, f64) {
        let log_probs = self.log_probs(features);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return (PHASES[k], *lp);
            }
        }
        (PHASES[3], log_probs[3])
    }

    /// Exact log-likelihood of `action` and its analytic gradient with
    /// respect to the weight matrix (flattened 4 x feature_dim, row-major):
    /// d log pi(a|x) / d w[k] = (1[k == a] - p_k) * x.
    pub fn log_prob_and_grad(&self, features: &[f64], action: Phase) -> (f64, Vec<f64>) {
        let log_probs = self.log_probs(features);
        let probs = log_probs.map(f64::exp);
        let mut grad = vec![0.0; 4 * self.feature_dim];
        for k in 0..4 {
            let coeff = (k == action.index()) as u8 as f64 - probs[k];
            let row = &mut grad[k * self.feature_dim..(k + 1) * self.feature_dim];
            for (g, &x) in row.iter_mut().zip(features) {
                *g = coeff * x;
            }
        }
        (log_probs[action.index()], grad)
    }

    /// KL(self || other) for the action distribution at `features`.
    pub fn kl_divergence(&self, other: &ParametricPolicy, features: &[f64]) -> f64 {
        let p = self.log_probs(features);
        let q = other.log_probs(features);
        let kl: f64 = (0..4).map(|k| p[k].exp() * (p[k] - q[k])).sum();
        // Exact KL is nonnegative; clamp float dust.
        kl.max(0.0)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let doc = PolicyDoc {
            feature_dim: self.feature_dim,
            segment_count: self.segment_count,
            inbox_slots: super::features::INBOX_SLOTS,
            phase_order: PHASES.iter().map(|p| p.to_string()).collect(),
            weights: self
                .weights
                .chunks(self.feature_dim)
                .map(|row| row.to_vec())
                .collect(),
        };
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        f.write_all(b"\n")
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let mut text = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| RlError::InvalidArgument(format!("read {}: {e}", path.display())))?;
        let doc: PolicyDoc = serde_json::from_str(&text)
            .map_err(|e| RlError::InvalidArgument(format!("parse {}: {e}", path.display())))?;
        let expected: Vec<String> = PHASES.iter().map(|p| p.to_string()).collect();
        if doc.phase_order != expected {
            return Err(RlError::InvalidArgument(format!(
                "unsupported phase order {:?}",
                doc.phase_order
            )));
        }
        if doc.inbox_slots != super::features::INBOX_SLOTS {
            return Err(RlError::InvalidArgument(format!(
                "policy built for {} inbox slots, this build uses {}",
                doc.inbox_slots,
                super::features::INBOX_SLOTS
            )));
        }
        if doc.weights.len() != 4 || doc.weights.iter().any(|r| r.len() != doc.feature_dim) {
            return Err(RlError::InvalidArgument(
                "weight matrix must be 4 x feature_dim".to_string(),
            ));
        }
        if doc.feature_dim != super::features::feature_dim(doc.segment_count) {
            return Err(RlError::InvalidArgument(format!(
                "feature_dim {} does not match segment_count {}",
                doc.feature_dim, doc.segment_count
            )));
        }
        Ok(ParametricPolicy {
            feature_dim: doc.feature_dim,
            segment_count: doc.segment_count,
            weights: doc.weights.into_iter().flatten().collect(),
        })
    }
}
